"""Outlier identification for extracted dispersion points.

Three stages, always in this order inside `run_filter`:
  1. wavenumber bounds from the scan geometry (path length and point spacing),
  2. f*d exclusion zones for known interference regions,
  3. residual rejection against a robust linear fit and a weighted smoothing spline.
"""
import csv
import math
import logging
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.interpolate import make_smoothing_spline

from .metrics import PEAKS_REJECTED_TOTAL

logger = logging.getLogger(__name__)

REASONS = ('below_nu_min', 'above_nu_max', 'linear_residual', 'spline_residual', 'exclusion_zone')
MIN_FIT_POINTS = 10
BISQUARE_LIMIT = 6.0
CURVATURE_GAIN = 0.10


class InsufficientPointsError(ValueError):
    pass


@dataclass(frozen=True)
class ExclusionZone:
    """Closed f*d interval in MHz*mm; an empty `modes` applies to every mode."""
    fd_lo: float
    fd_hi: float
    tag: str
    modes: tuple = ()

    def __post_init__(self):
        if not self.fd_lo <= self.fd_hi:
            raise ValueError(f"Exclusion zone '{self.tag}': fd_lo {self.fd_lo} > fd_hi {self.fd_hi}")
        object.__setattr__(self, 'modes', tuple(self.modes))

    def contains(self, mode, fd):
        return (not self.modes or mode in self.modes) and self.fd_lo <= fd <= self.fd_hi


DEFAULT_EXCLUSION_ZONES = (
    ExclusionZone(1.1, 1.2, 'SH', ('S0',)),
    ExclusionZone(1.8, math.inf, 'convergence'),
)


@dataclass(frozen=True)
class FilterConfig:
    path_length: float  # m
    min_point_spacing: float  # m
    thickness: float  # m, for f*d
    lambda_factor: float = 10.0
    nyquist_factor: float = 2.0
    residual_threshold_rel: float = 0.03
    exclusion_zones: tuple = DEFAULT_EXCLUSION_ZONES
    spline_segment_min_points: int = 30
    max_iterations: int = 10
    nu_cap: float = None  # 1/m, optional manual high-wavenumber cut

    def __post_init__(self):
        if not (self.path_length > 0 and self.min_point_spacing > 0 and self.thickness > 0):
            raise ValueError("FilterConfig needs positive path_length, min_point_spacing and thickness")
        if not self.residual_threshold_rel > 0:
            raise ValueError(f"residual_threshold_rel must be > 0, got {self.residual_threshold_rel}")
        object.__setattr__(self, 'exclusion_zones', tuple(self.exclusion_zones))
        if not self.nu_min < self.nu_max:
            raise ValueError(f"Wavenumber bounds are empty: nu_min={self.nu_min:.4g} >= nu_max={self.nu_max:.4g} 1/m")

    @property
    def nu_min(self):
        return self.lambda_factor / self.path_length

    @property
    def nu_max(self):
        limit = 1.0 / (self.min_point_spacing * self.nyquist_factor)
        return limit if self.nu_cap is None else min(limit, self.nu_cap)

    def fd(self, f):
        """f*d in MHz*mm for a frequency in Hz."""
        return f * self.thickness * 1e-3

    def settings(self):
        return {
            'nu_min': self.nu_min, 'nu_max': self.nu_max,
            'residual_threshold_rel': self.residual_threshold_rel,
            'spline_segment_min_points': self.spline_segment_min_points,
            'max_iterations': self.max_iterations,
            'exclusion_zones': ';'.join(f"{z.tag}[{z.fd_lo},{z.fd_hi}]{'/'.join(z.modes) or '*'}"
                                        for z in self.exclusion_zones),
        }


@dataclass(frozen=True)
class Rejection:
    peak: object
    reason: str
    tag: str = ''


@dataclass
class FilterReport:
    kept: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def summary(self):
        """Per mode: kept count and rejected count by reason."""
        out = {}
        for peak in self.kept:
            out.setdefault(peak.mode, {'kept': 0} | {r: 0 for r in REASONS})['kept'] += 1
        for rej in self.rejected:
            out.setdefault(rej.peak.mode, {'kept': 0} | {r: 0 for r in REASONS})[rej.reason] += 1
        return out

    def extend(self, other):
        self.rejected.extend(other.rejected)
        self.kept = list(other.kept)
        return self


def _reject(report, peak, reason, tag=''):
    report.rejected.append(Rejection(peak, reason, tag))
    PEAKS_REJECTED_TOTAL.labels(reason=reason).inc()


def apply_bounds(peaks, cfg):
    """Reject peaks whose wavenumber lies outside [nu_min, nu_max]."""
    report = FilterReport(settings=cfg.settings())
    for peak in peaks:
        if peak.nu < cfg.nu_min:
            _reject(report, peak, 'below_nu_min')
        elif peak.nu > cfg.nu_max:
            _reject(report, peak, 'above_nu_max')
        else:
            report.kept.append(peak)
    return report


def apply_exclusions(peaks, cfg):
    report = FilterReport(settings=cfg.settings())
    for peak in peaks:
        fd = cfg.fd(peak.f)
        zone = next((z for z in cfg.exclusion_zones if z.contains(peak.mode, fd)), None)
        if zone is None:
            report.kept.append(peak)
        else:
            _reject(report, peak, 'exclusion_zone', zone.tag)
    return report


def robust_polyfit(x, y, order=1, max_iter=25):
    """Polynomial fit with Tukey bisquare reweighting; sigma from the median absolute residual."""
    weights = np.ones_like(y)
    floor = 1e-9 * max(np.median(np.abs(y)), 1e-300)
    coeffs = np.polyfit(x, y, order)
    for _ in range(max_iter):
        resid = y - np.polyval(coeffs, x)
        # about zero, not the median: a biased first fit shifts every clean residual alike
        sigma = max(1.4826 * np.median(np.abs(resid)), floor)
        u = resid / (BISQUARE_LIMIT * sigma)
        new_weights = np.where(np.abs(u) < 1, (1 - u ** 2) ** 2, 0.0)
        if np.count_nonzero(new_weights) <= order + 1:
            break
        new_coeffs = np.polyfit(x, y, order, w=np.sqrt(new_weights))
        converged = np.allclose(new_weights, weights, atol=1e-6)
        coeffs, weights = new_coeffs, new_weights
        if converged:
            break
    return coeffs


def _segments(n, size):
    """Index ranges of consecutive segments with at least `size` points each (one segment if n < 2*size)."""
    count = max(1, n // size)
    edges = np.linspace(0, n, count + 1).round().astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def _relative(y, fit):
    return np.abs(y - fit) / np.maximum(np.abs(fit), 1e-300)


def _linear_pass(x, y, cfg):
    """Boolean mask of points rejected by segment-wise robust linear fits."""
    bad = np.zeros(x.size, dtype=bool)
    for seg in _segments(x.size, cfg.spline_segment_min_points):
        xs, ys = x[seg], y[seg]
        if xs.size < MIN_FIT_POINTS or np.ptp(xs) == 0:
            continue
        line = np.polyval(robust_polyfit(xs, ys, 1), xs)
        quad = np.polyval(robust_polyfit(xs, ys, 2), xs)
        r_line = np.median(np.abs(ys - line))
        r_quad = np.median(np.abs(ys - quad))
        if r_quad < (1 - CURVATURE_GAIN) * r_line and r_line > 1e-9 * np.median(np.abs(ys)):
            continue
        bad[seg] = _relative(ys, line) > cfg.residual_threshold_rel
    return bad


def _density_weights(x, cfg):
    """Point weights proportional to the number of points in the surrounding equal-width f segment."""
    count = max(1, x.size // cfg.spline_segment_min_points)
    if count == 1 or np.ptp(x) == 0:
        return np.ones_like(x)
    edges = np.linspace(x.min(), x.max(), count + 1)
    which = np.clip(np.searchsorted(edges, x, side='right') - 1, 0, count - 1)
    counts = np.bincount(which, minlength=count).astype(float)
    weights = counts[which]
    return weights / weights.mean()


def _spline_pass(x, y, cfg):
    xu, inverse = np.unique(x, return_inverse=True)
    if xu.size < 5:
        return np.zeros(x.size, dtype=bool)
    w = _density_weights(x, cfg)
    wsum = np.bincount(inverse, weights=w)
    yu = np.bincount(inverse, weights=w * y) / wsum
    spline = make_smoothing_spline(xu, yu, w=wsum / wsum.mean())
    return _relative(y, spline(x)) > cfg.residual_threshold_rel


def fit_reject(peaks, cfg):
    """Residual rejection for one mode: linear then spline pass, repeated until a round rejects nothing."""
    if len(peaks) < MIN_FIT_POINTS:
        raise InsufficientPointsError(f"Mode {peaks[0].mode if peaks else '?'}: {len(peaks)} points, "
                                      f"need at least {MIN_FIT_POINTS} for the residual fit")
    report = FilterReport(settings=cfg.settings())
    current = sorted(peaks, key=lambda p: (p.f, p.nu))
    for iteration in range(cfg.max_iterations):
        rejected_this_round = 0
        for stage, reason in ((_linear_pass, 'linear_residual'), (_spline_pass, 'spline_residual')):
            if len(current) < MIN_FIT_POINTS:
                break
            x = np.array([p.f for p in current]) * 1e-6
            y = np.array([p.nu for p in current])
            bad = stage(x, y, cfg)
            for peak in [p for p, b in zip(current, bad) if b]:
                _reject(report, peak, reason)
            current = [p for p, b in zip(current, bad) if not b]
            rejected_this_round += int(bad.sum())
        if not rejected_this_round:
            break
    else:
        logger.warning(f"⚠️ Residual fit for mode {current[0].mode if current else '?'} still rejecting "
                       f"after {cfg.max_iterations} rounds")
    report.kept = current
    return report


def _group_by_mode(peaks):
    groups = {}
    for peak in peaks:
        groups.setdefault(peak.mode, []).append(peak)
    return groups


def run_filter(peaks, cfg, workers=1):
    """Bounds, then exclusion zones, then per-mode residual fits; modes are fitted in parallel."""
    report = apply_bounds(peaks, cfg)
    report.extend(apply_exclusions(report.kept, cfg))
    groups = _group_by_mode(report.kept)

    def fit(mode):
        try:
            return fit_reject(groups[mode], cfg)
        except InsufficientPointsError as e:
            logger.warning(f"⚠️ {e}; keeping the group unfitted")
            return FilterReport(kept=list(groups[mode]), settings=cfg.settings())

    modes = sorted(groups)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        results = list(executor.map(fit, modes))
    kept = []
    for result in results:
        report.rejected.extend(result.rejected)
        kept.extend(result.kept)
    report.kept = sorted(kept, key=lambda p: (p.mode, p.f, p.nu))
    for mode, counts in report.summary().items():
        logger.info(f"Filter {mode or '-'}: kept {counts['kept']}, rejected "
                    + ', '.join(f"{r}={counts[r]}" for r in REASONS if counts[r]))
    return report


REPORT_CSV_COLUMNS = ('mode', 'f_hz', 'fd_mhzmm', 'nu_1pm', 'mag', 'status', 'reason', 'tag')


def write_report_csv(report, cfg, path):
    """All points with their status; the filter settings go into '#' comment lines on top."""
    rows = [(p, 'kept', '', '') for p in report.kept]
    rows += [(r.peak, 'rejected', r.reason, r.tag) for r in report.rejected]
    rows.sort(key=lambda row: (row[0].mode, row[0].f, row[0].nu))
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        for key, value in report.settings.items():
            fh.write(f'# {key}={value}\n')
        writer = csv.writer(fh)
        writer.writerow(REPORT_CSV_COLUMNS)
        for peak, status, reason, tag in rows:
            writer.writerow([peak.mode, peak.f, cfg.fd(peak.f), peak.nu, peak.magnitude, status, reason, tag])
    logger.info(f"Wrote filter report ({len(report.kept)} kept, {len(report.rejected)} rejected) to {path}")
    return path


def filter_config_from_dict(data, path_length, min_point_spacing, thickness, residual_threshold=0.03):
    """FilterConfig from the JSON 'filter' block; zones given as [fd_lo, fd_hi, tag, [modes]]."""
    data = dict(data or {})
    zones = data.pop('exclusion_zones', None)
    if zones is not None:
        zones = tuple(ExclusionZone(float(z[0]), math.inf if z[1] is None else float(z[1]), str(z[2]),
                                    tuple(z[3]) if len(z) > 3 else ()) for z in zones)
        data['exclusion_zones'] = zones
    data.setdefault('residual_threshold_rel', residual_threshold)
    return FilterConfig(path_length=path_length, min_point_spacing=min_point_spacing, thickness=thickness, **data)
