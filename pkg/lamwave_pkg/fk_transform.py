"""Frequency-wavenumber transform of line-scan wavefields and peak extraction.

    F(f, nu) = sum_x sum_t v(t, x) exp(+i 2 pi f t) exp(-i 2 pi nu x)

The double sum is evaluated exactly, time first (one transform per position) and
space second, so positions may be non-uniform.  With these signs a wave
cos(2 pi (f t - nu x)) peaks at positive (f, nu).
"""
import csv
import json
import struct
import logging
from dataclasses import dataclass, replace
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.signal import find_peaks

from .metrics import PEAKS_EXTRACTED_TOTAL, TRANSFORM_DURATION_SECONDS

logger = logging.getLogger(__name__)

LFK_MAGIC = b'LFK1'
NORM_TAG = 'none'
_CHUNK_ENTRIES = 4_000_000
# a secondary peak must beat the scan-aperture sidelobe of a stronger peak by this factor
LEAKAGE_MARGIN = 1.5
_ENVELOPE_SAMPLES = 9


class NyquistError(ValueError):
    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


@dataclass(frozen=True, eq=False)
class FKMap:
    f_grid: np.ndarray
    nu_grid: np.ndarray
    F: np.ndarray
    norm: str = NORM_TAG
    positions: np.ndarray = None  # scan positions (m) the map was computed from

    def __post_init__(self):
        f_grid = np.atleast_1d(np.asarray(self.f_grid, dtype=float))
        nu_grid = np.atleast_1d(np.asarray(self.nu_grid, dtype=float))
        F = np.asarray(self.F, dtype=complex)
        if F.shape != (f_grid.size, nu_grid.size):
            raise ValueError(f"FK map shape {F.shape} does not match grids ({f_grid.size}, {nu_grid.size})")
        object.__setattr__(self, 'f_grid', f_grid)
        object.__setattr__(self, 'nu_grid', nu_grid)
        object.__setattr__(self, 'F', F)
        if self.positions is not None:
            object.__setattr__(self, 'positions', np.atleast_1d(np.asarray(self.positions, dtype=float)))

    @property
    def magnitude(self):
        return np.abs(self.F)


@dataclass(frozen=True)
class Peak:
    f: float
    nu: float
    magnitude: float
    prominence: float  # relative to the row maximum
    refined: bool = False
    mode: str = ''

    @property
    def c_p(self):
        return self.f / self.nu


def default_nu_grid(w, oversample=4, include_negative=False, nu_max=None):
    """Wavenumbers with spacing 1/(oversample * L) up to the spatial Nyquist limit."""
    span = w.positions[-1] - w.positions[0]
    if not span > 0:
        raise ValueError("A wavenumber grid needs at least two scan positions")
    step = 1.0 / (oversample * span)
    nu_max = 1.0 / (2 * w.min_spacing) if nu_max is None else nu_max
    grid = step * np.arange(int(np.floor(nu_max / step + 1e-9)) + 1)
    if include_negative:
        grid = np.concatenate([-grid[:0:-1], grid])
    return grid


def _check_nyquist(w, f_grid, nu_grid):
    if not (f_grid.size and nu_grid.size):
        raise ValueError("nudft2 needs non-empty frequency and wavenumber grids")
    f_limit = w.sample_rate / 2
    bad = np.abs(f_grid) > f_limit * (1 + 1e-12)
    if bad.any():
        value = float(f_grid[bad][0])
        raise NyquistError(f"Frequency {value:.6g} Hz exceeds the temporal Nyquist limit {f_limit:.6g} Hz", value)
    nu_limit = 1.0 / (2 * w.min_spacing)
    bad = np.abs(nu_grid) > nu_limit * (1 + 1e-12)
    if bad.any():
        value = float(nu_grid[bad][0])
        raise NyquistError(f"Wavenumber {value:.6g} 1/m exceeds the spatial Nyquist limit {nu_limit:.6g} 1/m", value)


def time_transform(w, f_grid):
    """X[f, x] = sum_t v(t, x) exp(+i 2 pi f t)."""
    N = w.times.size
    cycles = f_grid * N / w.sample_rate
    bins = np.rint(cycles).astype(int)
    on_bins = np.all(np.abs(cycles - bins) <= 1e-9 * np.maximum(1.0, np.abs(cycles)))
    X = np.empty((f_grid.size, w.positions.size), dtype=complex)
    if on_bins:
        step = max(1, _CHUNK_ENTRIES // N)
        for start in range(0, w.positions.size, step):
            R = np.fft.rfft(w.v[:, start:start + step], axis=0)
            X[:, start:start + step] = np.where(bins[:, None] >= 0, R[np.abs(bins)].conj(), R[np.abs(bins)])
    else:
        step = max(1, _CHUNK_ENTRIES // N)
        local = w.times - w.times[0]
        for start in range(0, f_grid.size, step):
            E = np.exp(2j * np.pi * np.multiply.outer(f_grid[start:start + step], local))
            X[start:start + step] = E @ w.v
    return X * np.exp(2j * np.pi * f_grid * w.times[0])[:, None]


def nudft2(w, f_grid, nu_grid, workers=1):
    """Exact 2D non-uniform DFT of a wavefield on the given (f, nu) grids."""
    f_grid = np.atleast_1d(np.asarray(f_grid, dtype=float))
    nu_grid = np.atleast_1d(np.asarray(nu_grid, dtype=float))
    _check_nyquist(w, f_grid, nu_grid)
    with TRANSFORM_DURATION_SECONDS.time():
        X = time_transform(w, f_grid)
        S = np.exp(-2j * np.pi * np.multiply.outer(w.positions, nu_grid))
        step = max(1, _CHUNK_ENTRIES // max(1, nu_grid.size))
        chunks = [slice(start, start + step) for start in range(0, f_grid.size, step)]
        with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
            rows = list(executor.map(lambda sl: X[sl] @ S, chunks))
        F = np.concatenate(rows, axis=0)
    logger.debug(f"FK map {f_grid.size} x {nu_grid.size} from {w.times.size} x {w.positions.size} samples")
    return FKMap(f_grid, nu_grid, F, NORM_TAG, w.positions)


def _refine(nu_grid, mag, i):
    if i == 0 or i == mag.size - 1:
        return nu_grid[i], mag[i], False
    y0, y1, y2 = np.log(np.maximum(mag[i - 1:i + 2], 1e-300))
    denom = y0 - 2 * y1 + y2
    if not denom < 0:
        return nu_grid[i], mag[i], False
    delta = float(np.clip(0.5 * (y0 - y2) / denom, -0.5, 0.5))
    step = nu_grid[i + 1] - nu_grid[i] if delta > 0 else nu_grid[i] - nu_grid[i - 1]
    return nu_grid[i] + delta * step, float(np.exp(y1 - 0.25 * (y0 - y2) * delta)), True


def aperture_envelope(positions, delta_nu, width=0.0):
    """Upper bound of |mean_x exp(-i 2 pi d x)| for d within width of each delta_nu.

    A single wave of wavenumber nu0 puts |F(nu)| = |F(nu0)| * response(nu - nu0) on a row,
    so this bounds the sidelobe a peak leaks into any other wavenumber.
    """
    x = np.asarray(positions, dtype=float)
    x = x - x.mean()
    offsets = np.linspace(-width, width, _ENVELOPE_SAMPLES) if width > 0 else np.zeros(1)
    d = np.add.outer(np.atleast_1d(np.asarray(delta_nu, dtype=float)), offsets)
    response = np.abs(np.exp(-2j * np.pi * np.multiply.outer(d, x)).mean(axis=-1))
    return response.max(axis=-1)


def peak_search(fk, per_frequency_max_peaks=4, prominence_floor_rel=0.05, refine=True):
    """Strongest local maxima of |F| along nu for every frequency row, parabolically refined.

    Candidates are taken by decreasing magnitude.  When the map knows its scan positions a
    candidate no stronger than LEAKAGE_MARGIN times the aperture sidelobe of an accepted
    peak is dropped, so sidelobes of a strong mode do not take the slots of a weak one.
    """
    peaks = []
    leaked = 0
    mag = fk.magnitude
    width = float(np.abs(np.diff(fk.nu_grid)).max()) if fk.nu_grid.size > 1 else 0.0
    for f, row in zip(fk.f_grid, mag):
        top = row.max()
        if not top > 0:
            continue
        idx, props = find_peaks(row, prominence=prominence_floor_rel * top, distance=2)
        accepted = []
        for j in np.argsort(-row[idx], kind='stable'):
            if len(accepted) >= per_frequency_max_peaks:
                break
            i = idx[j]
            nu, magnitude, refined = _refine(fk.nu_grid, row, i) if refine else (fk.nu_grid[i], row[i], False)
            if accepted and fk.positions is not None:
                strong = np.array([(p.nu, p.magnitude) for p in accepted])
                sidelobe = strong[:, 1] * aperture_envelope(fk.positions, nu - strong[:, 0], width)
                if np.any(magnitude <= LEAKAGE_MARGIN * sidelobe):
                    leaked += 1
                    continue
            accepted.append(Peak(float(f), float(nu), float(magnitude), float(props['prominences'][j] / top),
                                 refined))
        peaks.extend(accepted)
    PEAKS_EXTRACTED_TOTAL.inc(len(peaks))
    if leaked:
        logger.debug(f"Dropped {leaked} aperture sidelobe maxima")
    logger.info(f"Peak search found {len(peaks)} peaks on {fk.f_grid.size} frequencies")
    return peaks


def assign_modes(peaks, branches=None, labels=('A0', 'S0'), tolerance_rel=0.25):
    """Label peaks with a mode name, keeping the strongest peak per (f, mode).

    With reference branches a peak takes the label of the nearest branch in nu (within
    tolerance_rel); without them the peaks of each frequency are labelled by magnitude
    rank in the order of `labels`.
    """
    chosen = {}
    if branches:
        refs = [b for b in branches if b.label in labels]
        for peak in peaks:
            best, best_err = None, tolerance_rel
            for branch in refs:
                nu_ref = float(branch.nu_at(peak.f))
                if not np.isfinite(nu_ref):
                    continue
                err = abs(peak.nu - nu_ref) / nu_ref
                if err <= best_err:
                    best, best_err = branch.label, err
            if best is None:
                continue
            key = (peak.f, best)
            if key not in chosen or peak.magnitude > chosen[key].magnitude:
                chosen[key] = replace(peak, mode=best)
    else:
        by_f = {}
        for peak in peaks:
            by_f.setdefault(peak.f, []).append(peak)
        for f, row in by_f.items():
            row.sort(key=lambda p: -p.magnitude)
            for label, peak in zip(labels, row):
                chosen[(f, label)] = replace(peak, mode=label)
    out = sorted(chosen.values(), key=lambda p: (p.f, -p.magnitude))
    logger.info(f"Assigned {len(out)} of {len(peaks)} peaks to modes {', '.join(labels)}")
    return out


def save_fkmap(fk, path, fmt='csv'):
    """Write fk as CSV ('f_hz,nu_1pm,abs,phase' rows) or as LFK1 binary; scan positions ride along."""
    positions = np.empty(0) if fk.positions is None else fk.positions
    if fmt == 'bin':
        header = json.dumps({'n_f': fk.f_grid.size, 'n_nu': fk.nu_grid.size, 'n_x': positions.size,
                             'norm': fk.norm}).encode()
        with open(path, 'wb') as fh:
            fh.write(LFK_MAGIC)
            fh.write(struct.pack('<I', len(header)))
            fh.write(header)
            fh.write(fk.f_grid.astype('<f8').tobytes())
            fh.write(fk.nu_grid.astype('<f8').tobytes())
            fh.write(np.ascontiguousarray(fk.F, dtype='<c16').tobytes())
            fh.write(positions.astype('<f8').tobytes())
    else:
        with open(path, 'w', newline='', encoding='utf-8') as fh:
            writer = csv.writer(fh)
            writer.writerow(['f_hz', 'nu_1pm', 'abs', 'phase'])
            if positions.size:
                fh.write(f"# positions={json.dumps(positions.tolist())}\n")
            for f, row in zip(fk.f_grid, fk.F):
                for nu, value in zip(fk.nu_grid, row):
                    writer.writerow([f, nu, abs(value), np.angle(value)])
    logger.info(f"Wrote FK map ({fk.f_grid.size} x {fk.nu_grid.size}) to {path}")
    return path


def load_fkmap(path):
    with open(path, 'rb') as fh:
        blob = fh.read()
    if blob[:4] == LFK_MAGIC:
        (length,) = struct.unpack('<I', blob[4:8])
        header = json.loads(blob[8:8 + length].decode('utf-8'))
        n_f, n_nu, n_x = header['n_f'], header['n_nu'], header.get('n_x', 0)
        offset = 8 + length
        f_grid = np.frombuffer(blob, '<f8', n_f, offset)
        nu_grid = np.frombuffer(blob, '<f8', n_nu, offset + 8 * n_f)
        offset += 8 * (n_f + n_nu)
        F = np.frombuffer(blob, '<c16', n_f * n_nu, offset).reshape(n_f, n_nu)
        positions = np.frombuffer(blob, '<f8', n_x, offset + 16 * n_f * n_nu).copy() if n_x else None
        return FKMap(f_grid.copy(), nu_grid.copy(), F.copy(), header.get('norm', NORM_TAG), positions)
    positions = None
    with open(path, encoding='utf-8') as fh:
        fh.readline()
        line = fh.readline()
    if line.startswith('# positions='):
        positions = np.asarray(json.loads(line[len('# positions='):]), dtype=float)
    data = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    f_grid = np.unique(data[:, 0])
    nu_grid = np.unique(data[:, 1])
    F = (data[:, 2] * np.exp(1j * data[:, 3])).reshape(f_grid.size, nu_grid.size)
    return FKMap(f_grid, nu_grid, F, NORM_TAG, positions)


PEAK_CSV_COLUMNS = ('f_hz', 'nu_1pm', 'mag', 'prom', 'refined', 'mode')


def write_peaks_csv(peaks, path):
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(PEAK_CSV_COLUMNS)
        for p in peaks:
            writer.writerow([p.f, p.nu, p.magnitude, p.prominence, int(p.refined), p.mode])
    logger.info(f"Wrote {len(peaks)} peaks to {path}")
    return path


def read_peaks_csv(path):
    peaks = []
    with open(path, newline='', encoding='utf-8') as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ('f_hz', 'nu_1pm') if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        for row in reader:
            peaks.append(Peak(float(row['f_hz']), float(row['nu_1pm']), float(row.get('mag') or 0.0),
                              float(row.get('prom') or 0.0), row.get('refined') == '1', row.get('mode') or ''))
    return peaks
