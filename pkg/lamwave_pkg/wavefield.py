"""Multi-frequency excitation signals and synthetic line-scan wavefields.

A synthetic wavefield stands in for a laser-vibrometer line scan: every comb tone
launches each excited mode as a plane wave cos(2*pi*(f t - nu x) + phi), with nu taken
from the dispersion branches, and the whole record is multiplied by the excitation
window.  Files are read and written as a commented CSV or as the LWF1 binary container.
"""
import os
import json
import struct
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal.windows import hann

logger = logging.getLogger(__name__)

WINDOWS = ('hanning', 'none')
LWF_MAGIC = b'LWF1'
DEFAULT_AMPLITUDES = {'A0': 1.0, 'S0': 0.1}
_CHUNK_ENTRIES = 2_000_000


class EmptyCombError(ValueError):
    pass


class BandCoverageError(ValueError):
    def __init__(self, message, frequency=None):
        super().__init__(message)
        self.frequency = frequency


class WavefieldFormatError(ValueError):
    def __init__(self, message, line=None, offset=None, column=None):
        super().__init__(message)
        self.line = line
        self.offset = offset
        self.column = column


@dataclass(frozen=True)
class ExcitationSpec:
    """Comb of equal-amplitude tones, repeated over n_runs runs shifted by run_shift (Hz)."""
    f_min: float
    f_max: float
    df: float
    run_shift: float
    n_runs: int
    duration: float  # s
    window: str = 'hanning'
    sample_rate: float = 3.125e6

    def __post_init__(self):
        if not (self.f_min > 0 and self.f_max >= self.f_min and self.df > 0 and self.duration > 0):
            raise ValueError(f"Invalid excitation band {self.f_min}..{self.f_max} Hz step {self.df} Hz, T={self.duration}")
        if self.n_runs < 1 or (self.n_runs > 1 and not self.run_shift > 0):
            raise ValueError(f"Invalid run layout: {self.n_runs} runs shifted by {self.run_shift} Hz")
        if self.window not in WINDOWS:
            raise ValueError(f"Unknown window '{self.window}', expected one of {WINDOWS}")
        if not self.sample_rate > 2 * self.f_max:
            raise ValueError(f"Sample rate {self.sample_rate} Hz does not resolve f_max={self.f_max} Hz")

    @property
    def n_samples(self):
        return int(round(self.duration * self.sample_rate))

    @property
    def times(self):
        return np.arange(self.n_samples) / self.sample_rate

    def comb(self, run_index=0):
        if not 0 <= run_index < self.n_runs:
            raise ValueError(f"run_index {run_index} outside 0..{self.n_runs - 1}")
        start = self.f_min + run_index * self.run_shift
        if start > self.f_max:
            return np.empty(0)
        count = int(np.floor((self.f_max - start) / self.df * (1 + 1e-12))) + 1
        return start + self.df * np.arange(count)

    def combined_comb(self):
        return np.unique(np.round(np.concatenate([self.comb(r) for r in range(self.n_runs)]), 6))

    def is_bin_centered(self, freqs=None):
        freqs = self.combined_comb() if freqs is None else np.asarray(freqs)
        cycles = freqs * self.n_samples / self.sample_rate
        return bool(np.all(np.abs(cycles - np.rint(cycles)) <= 1e-9 * np.maximum(1.0, cycles)))


EXCITATION_PRESETS = {
    'ES1': ExcitationSpec(250.0, 1.0e6, 5e3, 250.0, 20, 0.080, 'hanning', 3.125e6),
    'ES2': ExcitationSpec(1e3, 0.5e6, 1e3, 1e3, 1, 0.125, 'hanning', 2.56e6),
}

# (width, height, path length) in mm per excitation setup
SPECIMEN_PRESETS = {
    'strip': {'width_mm': 490.0, 'height_mm': 110.0, 'path_mm': {'ES1': 320.0, 'ES2': 320.0}},
    'plate': {'width_mm': 500.0, 'height_mm': 500.0, 'path_mm': {'ES1': 320.0, 'ES2': 450.0}},
}


def excitation_from_config(data):
    """ExcitationSpec from a preset name or a dict of fields (optionally with 'preset' as base)."""
    if data is None:
        return EXCITATION_PRESETS['ES1']
    if isinstance(data, str):
        try:
            return EXCITATION_PRESETS[data.upper()]
        except KeyError:
            raise ValueError(f"Unknown excitation preset '{data}'. Known: {', '.join(EXCITATION_PRESETS)}")
    data = dict(data)
    base = excitation_from_config(data.pop('preset', 'ES1'))
    return replace(base, **data)


def tone_phases(freqs, seed=0):
    """Start phase of every tone; a tone's phase depends only on (seed, f)."""
    return np.array([
        2 * np.pi * np.random.default_rng([int(seed), int(round(f * 1e3))]).random()
        for f in np.asarray(freqs, dtype=float)])


def _tone_sum(spec, coeffs, freqs):
    """Real time signals sum_f Re(coeffs[f, :] exp(i 2 pi f t)), one column per coefficient column."""
    N = spec.n_samples
    out = np.empty((N, coeffs.shape[1]))
    if spec.is_bin_centered(freqs) and np.all(freqs < spec.sample_rate / 2):
        bins = np.rint(freqs * N / spec.sample_rate).astype(int)
        step = max(1, _CHUNK_ENTRIES // N)
        for start in range(0, coeffs.shape[1], step):
            X = np.zeros((N // 2 + 1, min(step, coeffs.shape[1] - start)), dtype=complex)
            np.add.at(X, bins, (N / 2) * coeffs[:, start:start + step])
            out[:, start:start + step] = np.fft.irfft(X, n=N, axis=0)
        return out
    times = spec.times
    step = max(1, _CHUNK_ENTRIES // max(1, freqs.size))
    for start in range(0, N, step):
        phase = np.exp(2j * np.pi * np.multiply.outer(times[start:start + step], freqs))
        out[start:start + step] = (phase @ coeffs).real
    return out


def _window(spec):
    if spec.window == 'hanning':
        return hann(spec.n_samples, sym=False)
    return np.ones(spec.n_samples)


def make_excitation(spec, run_index=0, seed=0):
    """Normalised, windowed sum of the run's comb tones sampled on spec.times."""
    freqs = spec.comb(run_index)
    if not freqs.size:
        raise EmptyCombError(f"Run {run_index} has no tone inside [{spec.f_min}, {spec.f_max}] Hz")
    coeffs = np.exp(1j * tone_phases(freqs, seed))[:, None]
    signal = _tone_sum(spec, coeffs, freqs)[:, 0] * _window(spec)
    peak = np.abs(signal).max()
    return signal / peak if peak > 0 else signal


def measurement_path(length, spacing, jitter=0.0, seed=0):
    """Scan positions (m) from 0 to length; interior points moved by up to jitter*spacing."""
    if not (length > 0 and spacing > 0):
        raise ValueError(f"Path length and spacing must be > 0 (got {length}, {spacing})")
    if not 0 <= jitter < 0.5:
        raise ValueError(f"jitter must be in [0, 0.5), got {jitter}")
    n = int(round(length / spacing)) + 1
    x = np.linspace(0.0, length, n)
    if jitter:
        rng = np.random.default_rng(seed)
        x[1:-1] += rng.uniform(-jitter, jitter, n - 2) * spacing
    return x


@dataclass(frozen=True, eq=False)
class Wavefield:
    """Out-of-plane surface velocity v[t, x] (m/s) on a uniform time grid and a scan path."""
    times: np.ndarray
    positions: np.ndarray
    v: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        positions = np.asarray(self.positions, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("Wavefield needs at least two time samples")
        dt = (times[-1] - times[0]) / (times.size - 1)
        drift = np.abs(times - (times[0] + dt * np.arange(times.size))).max()
        if not dt > 0 or drift > 1e-12 * max(abs(times[0]), abs(times[-1])):
            raise ValueError("Wavefield times must be uniform and increasing")
        if positions.ndim != 1 or positions.size < 1 or np.any(np.diff(positions) <= 0):
            raise ValueError("Wavefield positions must be strictly increasing")
        if v.shape != (times.size, positions.size):
            raise ValueError(f"Wavefield matrix shape {v.shape} does not match grids ({times.size}, {positions.size})")
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'positions', positions)
        object.__setattr__(self, 'v', v)
        object.__setattr__(self, 'meta', dict(self.meta))

    @property
    def sample_rate(self):
        return (self.times.size - 1) / (self.times[-1] - self.times[0])

    @property
    def path_length(self):
        return float(self.meta.get('path_length', self.positions[-1] - self.positions[0]))

    @property
    def min_spacing(self):
        return float(np.diff(self.positions).min()) if self.positions.size > 1 else np.inf

    def __add__(self, other):
        return Wavefield(self.times, self.positions, self.v + other.v, self.meta)

    def scaled(self, factor):
        return Wavefield(self.times, self.positions, factor * self.v, self.meta)


def _is_shear_label(label):
    return label.startswith(('SSH', 'ASH', 'SH'))


def synthesize(branches, spec, positions, amp_model=None, noise_rms=0.0, reflection_coeff=0.0, seed=0,
               run_index=None, snr_db=None, attenuation=0.0, path_length=None):
    """Synthetic out-of-plane wavefield for the given branches and excitation.

    Every branch whose label appears in amp_model (default A0:S0 = 1:0.1) contributes a
    plane wave per comb tone, plus a mirror wave from the far path end scaled by
    reflection_coeff.  Branches not listed are not excited.  run_index=None uses the
    union of all runs in one record.
    """
    amp_model = DEFAULT_AMPLITUDES if amp_model is None else amp_model
    positions = np.asarray(positions, dtype=float)
    path_length = float(positions[-1] if path_length is None else path_length)
    if positions[0] < 0 or positions[-1] > path_length * (1 + 1e-12):
        raise ValueError(f"Positions must lie within the path [0, {path_length}] m")
    freqs = spec.combined_comb() if run_index is None else spec.comb(run_index)
    if not freqs.size:
        raise EmptyCombError(f"No tone inside [{spec.f_min}, {spec.f_max}] Hz")

    excited = []
    for branch in branches:
        amplitude = float(amp_model.get(branch.label, 0.0))
        if amplitude == 0.0:
            if not _is_shear_label(branch.label):
                logger.debug(f"Branch {branch.label} not in the amplitude model; not excited")
            continue
        excited.append((branch, amplitude, branch.nu_at(freqs)))
    if not excited:
        raise ValueError(f"No branch matches the amplitude model {sorted(amp_model)}")
    covered = np.zeros(freqs.size, dtype=bool)
    for _, _, nu in excited:
        covered |= np.isfinite(nu)
    if not covered.all():
        f_bad = float(freqs[~covered][0])
        raise BandCoverageError(f"Tone {f_bad:.6g} Hz lies outside every excited branch "
                                f"({', '.join(b.label for b, _, _ in excited)})", f_bad)

    phase0 = np.exp(1j * tone_phases(freqs, seed))
    coeffs = np.zeros((freqs.size, positions.size), dtype=complex)
    for branch, amplitude, nu in excited:
        inside = np.isfinite(nu)
        nu_in = nu[inside][:, None]
        direct = np.exp(-2j * np.pi * nu_in * positions) * np.exp(-attenuation * positions)
        coeffs[inside] += amplitude * phase0[inside, None] * direct
        if reflection_coeff:
            mirror = 2 * path_length - positions
            coeffs[inside] += (reflection_coeff * amplitude * phase0[inside, None]
                               * np.exp(-2j * np.pi * nu_in * mirror) * np.exp(-attenuation * mirror))

    v = _tone_sum(spec, coeffs, freqs) * _window(spec)[:, None]
    if snr_db is not None:
        noise_rms = float(np.sqrt(np.mean(v ** 2))) / 10 ** (snr_db / 20)
    if noise_rms:
        v += np.random.default_rng([int(seed), 1]).normal(0.0, noise_rms, v.shape)

    meta = {
        'sample_rate': spec.sample_rate, 'duration': spec.duration, 'path_length': path_length,
        'f_min': spec.f_min, 'f_max': spec.f_max, 'df': spec.df, 'run_shift': spec.run_shift,
        'n_runs': spec.n_runs, 'run_index': 'all' if run_index is None else int(run_index),
        'n_tones': int(freqs.size), 'window': spec.window, 'seed': int(seed),
        'noise_rms': float(noise_rms), 'reflection_coeff': float(reflection_coeff),
    }
    logger.info(f"Synthesised {freqs.size} tones x {positions.size} positions "
                f"({', '.join(f'{b.label}:{a:g}' for b, a, _ in excited)})")
    return Wavefield(spec.times, positions, v, meta)


def _format_for(path, fmt):
    if fmt:
        return fmt
    return 'bin' if os.path.splitext(path)[1].lower() in ('.lwf', '.bin') else 'csv'


def save_wavefield(w, path, fmt=None):
    """Write w as CSV ('# key=json' header, 't,x...' row, data rows) or as LWF1 binary."""
    fmt = _format_for(path, fmt)
    if fmt == 'bin':
        header = json.dumps({'meta': w.meta, 'n_times': w.times.size, 'n_positions': w.positions.size}).encode()
        with open(path, 'wb') as fh:
            fh.write(LWF_MAGIC)
            fh.write(struct.pack('<I', len(header)))
            fh.write(header)
            fh.write(w.positions.astype('<f8').tobytes())
            fh.write(w.times.astype('<f8').tobytes())
            fh.write(np.ascontiguousarray(w.v, dtype='<f8').tobytes())
    elif fmt == 'csv':
        with open(path, 'w', encoding='utf-8', newline='') as fh:
            fh.write('# lamwave wavefield\n')
            for key, value in w.meta.items():
                fh.write(f'# {key}={json.dumps(value)}\n')
            fh.write(','.join(['t'] + [repr(float(x)) for x in w.positions]) + '\n')
            np.savetxt(fh, np.column_stack([w.times, w.v]), fmt='%.17g', delimiter=',')
    else:
        raise ValueError(f"Unknown wavefield format '{fmt}'")
    logger.info(f"Wrote wavefield ({w.times.size} x {w.positions.size}) to {path}")
    return path


def _load_binary(path):
    with open(path, 'rb') as fh:
        blob = fh.read()
    if blob[:4] != LWF_MAGIC:
        raise WavefieldFormatError(f"{path}: bad magic {blob[:4]!r}", offset=0)
    if len(blob) < 8:
        raise WavefieldFormatError(f"{path}: truncated header", offset=len(blob))
    (length,) = struct.unpack('<I', blob[4:8])
    try:
        header = json.loads(blob[8:8 + length].decode('utf-8'))
        nt, nx = int(header['n_times']), int(header['n_positions'])
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise WavefieldFormatError(f"{path}: unreadable header ({e})", offset=8)
    offset = 8 + length
    expected = offset + 8 * (nx + nt + nt * nx)
    if len(blob) != expected:
        raise WavefieldFormatError(f"{path}: expected {expected} bytes, found {len(blob)}", offset=min(len(blob), expected))
    positions = np.frombuffer(blob, '<f8', nx, offset)
    times = np.frombuffer(blob, '<f8', nt, offset + 8 * nx)
    v = np.frombuffer(blob, '<f8', nt * nx, offset + 8 * (nx + nt)).reshape(nt, nx)
    return Wavefield(times.astype(float), positions.astype(float), v.astype(float), header.get('meta', {}))


def _load_csv(path):
    meta = {}
    columns = None
    rows = []
    with open(path, encoding='utf-8') as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith('#'):
                body = line[1:].strip()
                if '=' in body:
                    key, value = body.split('=', 1)
                    try:
                        meta[key.strip()] = json.loads(value)
                    except ValueError:
                        meta[key.strip()] = value.strip()
                continue
            fields = line.split(',')
            if columns is None:
                if fields[0].strip() != 't':
                    raise WavefieldFormatError(f"{path}:{line_no}: header row must start with column 't'",
                                               line=line_no, column='t')
                try:
                    columns = [float(x) for x in fields[1:]]
                except ValueError as e:
                    raise WavefieldFormatError(f"{path}:{line_no}: bad position in header ({e})", line=line_no)
                continue
            if len(fields) < len(columns) + 1:
                missing = f"x={columns[len(fields) - 1]!r}"
                raise WavefieldFormatError(
                    f"{path}:{line_no}: {len(fields)} fields, expected {len(columns) + 1}; missing column {missing}",
                    line=line_no, column=missing)
            if len(fields) > len(columns) + 1:
                raise WavefieldFormatError(
                    f"{path}:{line_no}: {len(fields)} fields, expected {len(columns) + 1}", line=line_no)
            try:
                rows.append([float(x) for x in fields])
            except ValueError:
                bad = next(i for i, x in enumerate(fields) if not _is_float(x))
                column = 't' if bad == 0 else f"x={columns[bad - 1]!r}"
                raise WavefieldFormatError(f"{path}:{line_no}: non-numeric value in column {column}",
                                           line=line_no, column=column)
    if columns is None:
        raise WavefieldFormatError(f"{path}: no header row", line=1, column='t')
    data = np.array(rows)
    if data.shape[0] < 2:
        raise WavefieldFormatError(f"{path}: needs at least two data rows", line=line_no)
    return Wavefield(data[:, 0], np.array(columns), data[:, 1:], meta)


def _is_float(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


def load_wavefield(path):
    """Read a wavefield written by save_wavefield; the container is sniffed from the magic bytes."""
    with open(path, 'rb') as fh:
        magic = fh.read(4)
    w = _load_binary(path) if magic == LWF_MAGIC else _load_csv(path)
    logger.info(f"Loaded wavefield ({w.times.size} x {w.positions.size}) from {path}")
    return w
