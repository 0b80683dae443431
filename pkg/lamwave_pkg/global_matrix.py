"""Global-matrix dispersion solver for layered plates.

Every layer contributes six partial-wave amplitudes.  Waves travelling or decaying
towards +x3 are referenced to the lower face of their layer and the others to the
upper face, so the phase factors entering the matrix never exceed one in magnitude
and the determinant stays finite at large frequency-thickness products.

Rows of the 6N x 6N matrix, top to bottom:
  * traction-free upper face of layer N (3 rows),
  * displacement and starred-traction continuity at each interior interface (6 rows each),
  * traction-free lower face of layer 1 (3 rows).
"""
import os
import csv
import math
import time
import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import linalg
from scipy.interpolate import PchipInterpolator
from scipy.optimize import linear_sum_assignment

from .christoffel import EigenSolveError, layer_phase_terms, partial_waves
from .metrics import (ACTIVE_BRANCHES, CHARACTERISTIC_EVALUATIONS_TOTAL, MISSED_ROOTS_TOTAL,
                      ROOTS_FOUND_TOTAL, SPURIOUS_ROOTS_TOTAL, SWEEP_DURATION_SECONDS)

logger = logging.getLogger(__name__)

ROOT_DROP = 6.0
BACKGROUND_OFFSET = 0.01
SPURIOUS_ALPHA = 3e-3
AMBIGUITY_RATIO = 1e-4
INITIAL_WINDOW = 0.5
MAX_GAP = 2
STITCH_STEPS = 8
MIN_BRANCH_POINTS = 3
MAX_REFINE_DEPTH = 2
CHUNK_ENTRIES = 4_000_000

FAMILY_ORDER = ('A', 'S', 'SSH', 'ASH', 'L', 'SH')
BRANCH_CSV_COLUMNS = ('mode', 'f_hz', 'fd_mhzmm', 'k_radpm', 'nu_1pm', 'cp_mps')


class StackModel:
    """Layer data of a laminate, prepared for repeated determinant evaluation."""

    def __init__(self, laminate):
        self.laminate = laminate
        self.thicknesses = np.array([layer.thickness for layer in laminate.layers]) * 1e-3
        self.materials = []
        self.layer_material = []
        seen = {}
        for layer in laminate.layers:
            key = (layer.material, layer.theta % 360.0)
            if key not in seen:
                seen[key] = len(self.materials)
                self.materials.append((layer.stiffness().pascal, layer.material.density))
            self.layer_material.append(seen[key])
        self.n_layers = len(laminate.layers)
        self.size = 6 * self.n_layers

    def waves(self, f, k):
        c_p = 2 * np.pi * f / np.asarray(k, dtype=float)
        out = []
        for stiffness, density in self.materials:
            try:
                out.append(partial_waves(stiffness, density, c_p))
            except np.linalg.LinAlgError as e:
                k_arr = np.atleast_1d(k)
                raise EigenSolveError(
                    f"Layer eigen-solve failed at f={f:.6g} Hz, k in [{k_arr.min():.6g}, {k_arr.max():.6g}] rad/m: {e}",
                    f, k_arr)
        return out

    @staticmethod
    def min_alpha(waves):
        return np.min([np.abs(alphas).min(axis=1) for alphas, _, _ in waves], axis=0)

    def blocks(self, k, waves):
        """Lower-face and upper-face 6x6 blocks of every layer, each (K, 6, 6)."""
        bottoms, tops = [], []
        for n in range(self.n_layers):
            alphas, p, d = waves[self.layer_material[n]]
            G = np.concatenate([p, d], axis=1)
            E = layer_phase_terms(alphas, k, self.thicknesses[n])
            bottom = G.copy()
            bottom[:, :, 3:] *= E[:, None, 3:]
            top = G.copy()
            top[:, :, :3] *= E[:, None, :3]
            bottoms.append(bottom)
            tops.append(top)
        return bottoms, tops

    def assemble(self, bottoms, tops):
        N = self.n_layers
        M = np.zeros((bottoms[0].shape[0], self.size, self.size), dtype=complex)
        M[:, 0:3, 6 * (N - 1):] = tops[N - 1][:, 3:, :]
        for i in range(N - 1):
            r = 3 + 6 * i
            M[:, r:r + 6, 6 * i:6 * i + 6] = tops[i]
            M[:, r:r + 6, 6 * (i + 1):6 * (i + 2)] = -bottoms[i + 1]
        M[:, -3:, 0:6] = bottoms[0][:, 3:, :]
        return M


@lru_cache(maxsize=32)
def stack_model(laminate):
    return StackModel(laminate)


def _equilibrate(M):
    scale = np.abs(M).max(axis=-1)
    scale[scale == 0] = 1.0
    return M / scale[..., None], np.log(scale).sum(axis=-1)


def assemble_global(laminate, f, k):
    """Raw 6N x 6N global matrix at (f [Hz], k [rad/m])."""
    if not (f > 0 and k > 0):
        raise ValueError(f"assemble_global needs f, k > 0 (got f={f}, k={k})")
    model = stack_model(laminate)
    kk = np.array([float(k)])
    return model.assemble(*model.blocks(kk, model.waves(f, kk)))[0]


@dataclass(frozen=True)
class CharacteristicEvaluation:
    f: float
    k: float
    log_abs_det: float
    phase: float
    condition_hint: float


def characteristic(laminate, f, k):
    """LU of the row-equilibrated global matrix; log|det| restores the row scales."""
    M = assemble_global(laminate, f, k)
    M, log_scale = _equilibrate(M)
    CHARACTERISTIC_EVALUATIONS_TOTAL.inc()
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', linalg.LinAlgWarning)
        lu, piv = linalg.lu_factor(M, check_finite=False)
    diag = np.diag(lu)
    mag = np.abs(diag)
    if not mag.all():
        return CharacteristicEvaluation(f, k, -math.inf, 0.0, math.inf)
    swaps = np.count_nonzero(piv != np.arange(piv.size))
    phase = float(np.angle(np.exp(1j * (np.angle(diag).sum() + math.pi * swaps))))
    return CharacteristicEvaluation(f, k, float(np.log(mag).sum() + log_scale), phase,
                                    float(mag.max() / mag.min()))


def characteristic_batch(laminate, f, k):
    """log|det| and phase for many wavenumbers at one frequency."""
    model = stack_model(laminate)
    k = np.atleast_1d(np.asarray(k, dtype=float))
    log_abs = np.empty(k.size)
    phase = np.empty(k.size)
    chunk = max(1, CHUNK_ENTRIES // model.size ** 2)
    for start in range(0, k.size, chunk):
        kk = k[start:start + chunk]
        M = model.assemble(*model.blocks(kk, model.waves(f, kk)))
        M, log_scale = _equilibrate(M)
        sign, logdet = np.linalg.slogdet(M)
        log_abs[start:start + chunk] = logdet + log_scale
        phase[start:start + chunk] = np.angle(sign)
    CHARACTERISTIC_EVALUATIONS_TOTAL.inc(k.size)
    return log_abs, phase


@dataclass(frozen=True)
class ModeShape:
    top: np.ndarray
    bottom: np.ndarray
    second_ratio: float

    @property
    def signature(self):
        top = np.abs(self.top) / max(np.linalg.norm(self.top), 1e-300)
        bottom = np.abs(self.bottom) / max(np.linalg.norm(self.bottom), 1e-300)
        return tuple(float(v) for v in 0.5 * (top + bottom))


def mode_shape(laminate, f, k):
    """Surface displacements of the null vector of the global matrix at a root."""
    model = stack_model(laminate)
    kk = np.array([float(k)])
    bottoms, tops = model.blocks(kk, model.waves(f, kk))
    M, _ = _equilibrate(model.assemble(bottoms, tops)[0])
    _, s, vh = np.linalg.svd(M)
    amps = vh[-1].conj()
    top = tops[-1][0, :3, :] @ amps[-6:]
    bottom = bottoms[0][0, :3, :] @ amps[:6]
    return ModeShape(top, bottom, float(s[-2] / s[0]))


def classify_family(shape, symmetric):
    """A/S for Lamb-type, SSH/ASH for shear-horizontal motion; L/SH when the stack is not symmetric."""
    norm = max(np.linalg.norm(shape.top), np.linalg.norm(shape.bottom), 1e-300)
    top = shape.top / norm
    bottom = shape.bottom / norm
    sh = abs(top[1]) ** 2 + abs(bottom[1]) ** 2
    lamb = abs(top[0]) ** 2 + abs(top[2]) ** 2 + abs(bottom[0]) ** 2 + abs(bottom[2]) ** 2
    if sh > lamb:
        if not symmetric:
            return 'SH'
        return 'SSH' if (top[1] * np.conj(bottom[1])).real >= 0 else 'ASH'
    if not symmetric:
        return 'L'
    score = (top[0] * np.conj(bottom[0])).real - (top[2] * np.conj(bottom[2])).real
    return 'S' if score > 0 else 'A'


@dataclass(frozen=True)
class ModeRoot:
    f: float
    k: float
    family: str
    signature: tuple
    ambiguous: bool
    drop: float

    @property
    def c_p(self):
        return 2 * math.pi * self.f / self.k


def _local_minima(values):
    inner = (values[1:-1] < values[:-2]) & (values[1:-1] <= values[2:])
    return np.flatnonzero(inner) + 1


def _brackets(laminate, f, k_grid, log_abs, depth=0):
    idx = _local_minima(log_abs)
    brackets = []
    i = 0
    while i < idx.size:
        j = i
        while j + 1 < idx.size and idx[j + 1] - idx[j] <= 3:
            j += 1
        if j > i and depth < MAX_REFINE_DEPTH:
            lo = max(idx[i] - 3, 0)
            hi = min(idx[j] + 3, k_grid.size - 1)
            sub = np.geomspace(k_grid[lo], k_grid[hi], 2 * (hi - lo) + 1)
            sub_log, _ = characteristic_batch(laminate, f, sub)
            brackets.extend(_brackets(laminate, f, sub, sub_log, depth + 1))
        else:
            brackets.extend((k_grid[m - 1], k_grid[m + 1]) for m in idx[i:j + 1])
        i = j + 1
    return brackets


def _bisect(laminate, f, brackets, tol):
    """Bisection on the sign of d log|det| / dk, all brackets at once."""
    lo = np.array([b[0] for b in brackets], dtype=float)
    hi = np.array([b[1] for b in brackets], dtype=float)
    eps = tol / 20.0
    for _ in range(64):
        active = (hi - lo) > tol * 0.5 * (hi + lo)
        if not active.any():
            break
        sel = np.flatnonzero(active)
        mid = 0.5 * (lo[sel] + hi[sel])
        sampled, _ = characteristic_batch(laminate, f, np.concatenate([mid * (1 - eps), mid * (1 + eps)]))
        rising = sampled[sel.size:] > sampled[:sel.size]
        hi[sel[rising]] = mid[rising]
        lo[sel[~rising]] = mid[~rising]
    return 0.5 * (lo + hi)


def find_roots(laminate, f, k_lo, k_hi, scan_points=2000, tol=1e-7):
    """Roots of the characteristic in [k_lo, k_hi] at one frequency, labelled by family."""
    model = stack_model(laminate)
    k_grid = np.geomspace(k_lo, k_hi, int(scan_points))
    log_abs, _ = characteristic_batch(laminate, f, k_grid)
    brackets = _brackets(laminate, f, k_grid, log_abs)
    if not brackets:
        return []
    k_roots = np.unique(_bisect(laminate, f, brackets, tol))
    keep = np.concatenate([[True], np.diff(k_roots) > 10 * tol * k_roots[1:]])
    k_roots = k_roots[keep]

    at_root, _ = characteristic_batch(laminate, f, k_roots)
    below, _ = characteristic_batch(laminate, f, k_roots * (1 - BACKGROUND_OFFSET))
    above, _ = characteristic_batch(laminate, f, k_roots * (1 + BACKGROUND_OFFSET))
    drops = np.maximum(below, above) - at_root
    near_bulk = model.min_alpha(model.waves(f, k_roots)) < SPURIOUS_ALPHA

    roots = []
    for k, drop, bulk in zip(k_roots, drops, near_bulk):
        if bulk or not drop >= ROOT_DROP:
            SPURIOUS_ROOTS_TOTAL.inc()
            logger.debug(f"Discarded minimum at f={f:.6g} Hz, c_p={2 * math.pi * f / k:.2f} m/s "
                         f"(drop {drop:.2f}, bulk-wave {bool(bulk)})")
            continue
        shape = mode_shape(laminate, f, k)
        family = classify_family(shape, laminate.is_symmetric)
        roots.append(ModeRoot(float(f), float(k), family, shape.signature,
                              shape.second_ratio < AMBIGUITY_RATIO, float(drop)))
    ROOTS_FOUND_TOTAL.inc(len(roots))
    return roots


@dataclass(frozen=True)
class DispersionBranch:
    """Labelled sequence of (f [Hz], k [rad/m], c_p [m/s]) with f strictly increasing."""
    label: str
    points: tuple
    polarization_signature: tuple = (math.nan, math.nan, math.nan)
    thickness: float = math.nan  # m

    def __post_init__(self):
        points = tuple((float(f), float(k), float(c)) for f, k, c in self.points)
        for (f0, _, _), (f1, _, _) in zip(points, points[1:]):
            if not f1 > f0:
                raise ValueError(f"Branch {self.label}: frequencies must be strictly increasing ({f0} -> {f1})")
        for f, k, c in points:
            if abs(c - 2 * math.pi * f / k) > 1e-12 * abs(c):
                raise ValueError(f"Branch {self.label}: c_p inconsistent with 2*pi*f/k at f={f}")
        object.__setattr__(self, 'points', points)

    @classmethod
    def from_fk(cls, label, f, k, polarization_signature=(math.nan,) * 3, thickness=math.nan):
        return cls(label, tuple((fi, ki, 2 * math.pi * fi / ki) for fi, ki in zip(f, k)),
                   tuple(polarization_signature), thickness)

    def __len__(self):
        return len(self.points)

    @property
    def frequencies(self):
        return np.array([p[0] for p in self.points])

    @property
    def wavenumbers(self):
        return np.array([p[1] for p in self.points])

    @property
    def phase_velocities(self):
        return np.array([p[2] for p in self.points])

    @property
    def nu(self):
        return self.wavenumbers / (2 * math.pi)

    @property
    def fd(self):
        """Frequency-thickness in MHz*mm."""
        return self.frequencies * self.thickness * 1e-3

    def covers(self, f):
        freqs = self.frequencies
        return freqs[0] <= f <= freqs[-1]

    def nu_at(self, f):
        """Wavenumber (1/m) at frequencies f; NaN outside the branch support."""
        f = np.asarray(f, dtype=float)
        freqs, nu = self.frequencies, self.nu
        if freqs.size == 1:
            return np.where(f == freqs[0], nu[0], np.nan)
        return PchipInterpolator(freqs, nu, extrapolate=False)(f)


def phase_velocity(branch):
    """(f*d [MHz*mm], c_p [m/s]) pairs; c_p = 2*pi*f/k = f/nu."""
    if not len(branch):
        raise ValueError(f"Branch {branch.label} is empty")
    return [(fd, f / nu) for fd, f, nu in zip(branch.fd, branch.frequencies, branch.nu)]


@dataclass
class _Track:
    family: str
    roots: list = field(default_factory=list)
    misses: int = 0
    closed: bool = False

    def predict(self, f):
        last = self.roots[-1]
        if len(self.roots) < 2:
            return last.c_p, None
        prev = self.roots[-2]
        slope = (last.c_p - prev.c_p) / (last.f - prev.f)
        return last.c_p + slope * (f - last.f), slope

    def limit(self, f, window):
        """Largest accepted |c_p - prediction| at f."""
        pred, slope = self.predict(f)
        if slope is None:
            return INITIAL_WINDOW * pred
        return max(window * abs(pred), 3 * abs(slope) * (f - self.roots[-1].f))

    def miss(self, f):
        self.misses += 1
        MISSED_ROOTS_TOTAL.inc()
        last = self.roots[-1]
        logger.warning(f"⚠️ Missed root: {self.family} branch from {self.roots[0].f:.6g} Hz "
                       f"(last c_p {last.c_p:.1f} m/s) has no candidate at f={f:.6g} Hz")


def _fundamental_track(family, root_sets, f_grid, window):
    """Slowest root of the family at every frequency.

    Modes of one family do not cross, so the slowest root always belongs to the
    lowest mode.  A candidate faster than the prediction window is the next mode
    standing in for a missed root and counts as a miss; the track never closes.
    """
    track = None
    for f, roots in zip(f_grid, root_sets):
        own = [r for r in roots if r.family == family]
        if track is None:
            if own:
                track = _Track(family, [max(own, key=lambda r: r.k)])
            continue
        pred, _ = track.predict(f)
        limit = track.limit(f, window)
        shared = [r for r in roots if r.ambiguous and r.family != family and abs(r.c_p - pred) <= limit]
        candidates = [r for r in own + shared if r.c_p <= pred + limit]
        if not candidates:
            track.miss(f)
            continue
        track.roots.append(max(candidates, key=lambda r: r.k))
        track.misses = 0
    return track


def _continue_family(family, root_sets, f_grid, window, max_gap):
    tracks = []
    for f, roots in zip(f_grid, root_sets):
        candidates = [r for r in roots if r.family == family or r.ambiguous]
        open_tracks = [t for t in tracks if not t.closed]
        matched_tracks, matched_roots = set(), set()
        if open_tracks and candidates:
            cost = np.full((len(open_tracks), len(candidates)), 1e18)
            for i, track in enumerate(open_tracks):
                pred, _ = track.predict(f)
                limit = track.limit(f, window)
                for j, root in enumerate(candidates):
                    err = abs(root.c_p - pred)
                    if err <= limit:
                        cost[i, j] = err
            rows, cols = linear_sum_assignment(cost)
            for i, j in zip(rows, cols):
                if cost[i, j] < 1e18:
                    open_tracks[i].roots.append(candidates[j])
                    open_tracks[i].misses = 0
                    matched_tracks.add(i)
                    matched_roots.add(j)
        for i, track in enumerate(open_tracks):
            if i in matched_tracks:
                continue
            track.miss(f)
            if track.misses > max_gap:
                track.closed = True
                logger.warning(f"⚠️ Closing {family} branch at {track.roots[-1].f:.6g} Hz "
                               f"after {track.misses} missed steps")
        for j, root in enumerate(candidates):
            if j not in matched_roots and root.family == family:
                tracks.append(_Track(family, [root]))
        ACTIVE_BRANCHES.set(sum(not t.closed for t in tracks))
    return tracks


def _stitch(tracks, f_grid, window):
    """Join closed tracks to tracks starting within STITCH_STEPS grid steps on their extrapolation."""
    f_grid = np.asarray(f_grid, dtype=float)
    while True:
        ends = [t for t in tracks if t.closed and len(t.roots) >= 2]
        if not ends:
            return tracks
        cost = np.full((len(ends), len(tracks)), 1e18)
        for i, track in enumerate(ends):
            i_end = np.searchsorted(f_grid, track.roots[-1].f)
            for j, other in enumerate(tracks):
                first = other.roots[0]
                if other is track or not 0 < np.searchsorted(f_grid, first.f) - i_end <= STITCH_STEPS:
                    continue
                pred, _ = track.predict(first.f)
                err = abs(first.c_p - pred)
                if err <= track.limit(first.f, window):
                    cost[i, j] = err
        rows, cols = linear_sum_assignment(cost)
        pairs = [(cost[i, j], i, j) for i, j in zip(rows, cols) if cost[i, j] < 1e18]
        if not pairs:
            return tracks
        _, i, j = min(pairs)
        track, other = ends[i], tracks[j]
        logger.info(f"🔗 Joined {track.family} branch ending at {track.roots[-1].f:.6g} Hz "
                    f"to the one starting at {other.roots[0].f:.6g} Hz")
        track.roots.extend(other.roots)
        track.misses, track.closed = other.misses, other.closed
        tracks.remove(other)


def _family_tracks(family, root_sets, f_grid, window, max_gap):
    """Fundamental first, then the other branches of the family by start frequency."""
    fundamental = _fundamental_track(family, root_sets, f_grid, window)
    taken = {id(r) for r in fundamental.roots} if fundamental else set()
    rest = [[r for r in roots if id(r) not in taken] for roots in root_sets]
    others = _stitch(_continue_family(family, rest, f_grid, window, max_gap), f_grid, window)
    others.sort(key=lambda t: (t.roots[0].f, -t.roots[0].k))
    tracks = ([fundamental] if fundamental else []) + others
    shortest = min(MIN_BRANCH_POINTS, len(f_grid))
    kept = []
    for track in tracks:
        if len(track.roots) < shortest:
            logger.warning(f"⚠️ Dropping {family} fragment of {len(track.roots)} point(s) "
                           f"at {track.roots[0].f:.6g} Hz")
            continue
        kept.append(track)
    return kept


def trace_branches(root_sets, f_grid, thickness, symmetric=True, window=0.02, max_gap=MAX_GAP):
    """Join per-frequency roots into labelled branches.

    The slowest root of each family forms branch 0; the remaining roots are joined by
    nearest-c_p continuation, gaps of a few steps are bridged and fragments shorter than
    MIN_BRANCH_POINTS are dropped.
    """
    families = sorted({r.family for roots in root_sets for r in roots}, key=FAMILY_ORDER.index)
    branches = []
    unlabeled = []
    for family in families:
        for n, track in enumerate(_family_tracks(family, root_sets, f_grid, window, max_gap)):
            signature = tuple(float(v) for v in np.mean([r.signature for r in track.roots], axis=0))
            f = [r.f for r in track.roots]
            k = [r.k for r in track.roots]
            if symmetric:
                branches.append(DispersionBranch.from_fk(f'{family}{n}', f, k, signature, thickness))
            else:
                unlabeled.append((f, k, signature))
    unlabeled.sort(key=lambda item: (item[0][0], -item[1][0]))
    for n, (f, k, signature) in enumerate(unlabeled):
        branches.append(DispersionBranch.from_fk(f'unlabeled_{n}', f, k, signature, thickness))
    return branches


def dispersion_sweep(laminate, f_grid, k_range=None, scan_points=2000, cp_range=(300.0, 15000.0),
                     root_tolerance=1e-7, continuation_window=0.02, workers=None):
    """Dispersion branches of a laminate over an ascending frequency grid (Hz).

    k_range fixes the scanned wavenumber interval (rad/m) for every frequency; without
    it each frequency scans k = 2*pi*f / c_p over cp_range (m/s).
    """
    f_grid = np.asarray(f_grid, dtype=float)
    if f_grid.size == 0 or np.any(f_grid <= 0) or np.any(np.diff(f_grid) <= 0):
        raise ValueError("f_grid must be non-empty, positive and strictly ascending")
    if k_range is not None and not 0 < k_range[0] < k_range[1]:
        raise ValueError(f"k_range must be a positive interval, got {k_range}")
    workers = workers or os.cpu_count() or 1

    def job(f):
        if k_range is not None:
            k_lo, k_hi = k_range
        else:
            k_lo, k_hi = 2 * math.pi * f / cp_range[1], 2 * math.pi * f / cp_range[0]
        return find_roots(laminate, f, k_lo, k_hi, scan_points, root_tolerance)

    start = time.monotonic()
    with SWEEP_DURATION_SECONDS.time():
        with ThreadPoolExecutor(max_workers=workers) as executor:
            root_sets = list(executor.map(job, f_grid))
        branches = trace_branches(root_sets, f_grid, laminate.total_thickness * 1e-3,
                                  laminate.is_symmetric, continuation_window)
    logger.info(f"✅ Sweep of {f_grid.size} frequencies on {laminate.describe()} gave "
                f"{len(branches)} branches in {time.monotonic() - start:.1f}s")
    return branches


def bound_limits(branch, nu_min, nu_max):
    """f*d interval (MHz*mm) over which the branch wavenumber stays within [nu_min, nu_max]."""
    nu, fd = branch.nu, branch.fd
    inside = (nu >= nu_min) & (nu <= nu_max)
    if not inside.any():
        return None
    idx = np.flatnonzero(inside)

    def edge(i_out, i_in):
        bound = nu_min if nu[i_out] < nu_min else nu_max
        t = (bound - nu[i_out]) / (nu[i_in] - nu[i_out])
        return float(fd[i_out] + t * (fd[i_in] - fd[i_out]))

    lo = float(fd[idx[0]]) if idx[0] == 0 else edge(idx[0] - 1, idx[0])
    hi = float(fd[idx[-1]]) if idx[-1] == nu.size - 1 else edge(idx[-1] + 1, idx[-1])
    return lo, hi


def write_branches_csv(branches, path):
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(BRANCH_CSV_COLUMNS)
        for branch in branches:
            for (f, k, c), fd, nu in zip(branch.points, branch.fd, branch.nu):
                writer.writerow([branch.label, f, float(fd), k, float(nu), c])
    logger.info(f"Wrote {sum(len(b) for b in branches)} branch points to {path}")
    return path


def read_branches_csv(path):
    """Branches from a CSV with the columns written by write_branches_csv."""
    rows = {}
    thickness = {}
    with open(path, newline='', encoding='utf-8') as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ('mode', 'f_hz', 'k_radpm') if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                f, k = float(row['f_hz']), float(row['k_radpm'])
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{line}: malformed f_hz/k_radpm")
            rows.setdefault(row['mode'], []).append((f, k))
            if row.get('fd_mhzmm') not in (None, ''):
                thickness.setdefault(row['mode'], float(row['fd_mhzmm']) * 1e3 / f)
    branches = []
    for label, pts in rows.items():
        pts.sort()
        branches.append(DispersionBranch.from_fk(label, [p[0] for p in pts], [p[1] for p in pts],
                                                 thickness=thickness.get(label, math.nan)))
    return branches
