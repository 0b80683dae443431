"""Relative phase-velocity comparison of two dispersion point sets.

rel_diff = (c_p_test - c_p_ref) / c_p_ref, with the reference interpolated
(monotone piecewise cubic, no extrapolation) at the test frequencies.
"""
import csv
import math
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .global_matrix import DispersionBranch

logger = logging.getLogger(__name__)


class EmptyOverlapError(ValueError):
    pass


@dataclass(frozen=True)
class ComparisonRow:
    mode: str
    f: float
    fd: float
    c_ref: float
    c_test: float

    @property
    def rel_diff(self):
        return (self.c_test - self.c_ref) / self.c_ref


@dataclass(frozen=True)
class ModeSummary:
    mode: str
    count: int
    mean_abs: float
    max_abs: float
    fd_lo: float
    fd_hi: float

    @classmethod
    def from_rows(cls, mode, rows):
        diffs = np.abs([r.rel_diff for r in rows])
        fds = [r.fd for r in rows]
        return cls(mode, len(rows), float(diffs.mean()), float(diffs.max()), min(fds), max(fds))


@dataclass
class ComparisonReport:
    rows: list = field(default_factory=list)

    @property
    def modes(self):
        return list(dict.fromkeys(r.mode for r in self.rows))

    def summaries(self):
        return {mode: ModeSummary.from_rows(mode, [r for r in self.rows if r.mode == mode]) for mode in self.modes}

    def summary(self, mode):
        rows = [r for r in self.rows if r.mode == mode]
        if not rows:
            raise KeyError(mode)
        return ModeSummary.from_rows(mode, rows)

    @property
    def overlap(self):
        fds = [r.fd for r in self.rows]
        return (min(fds), max(fds)) if fds else None


def _points(data, mode=None):
    """(f, c_p) arrays sorted by f from a branch, a peak list or an (n, 2) array of (f, c_p)."""
    if isinstance(data, DispersionBranch):
        return data.frequencies, data.phase_velocities
    data = list(data)
    if data and hasattr(data[0], 'nu'):
        if mode is not None:
            data = [p for p in data if not p.mode or p.mode == mode]
        pts = np.array([(p.f, p.f / p.nu) for p in data], dtype=float).reshape(-1, 2)
    else:
        pts = np.asarray(data, dtype=float).reshape(-1, 2)
    pts = pts[np.argsort(pts[:, 0], kind='stable')]
    return pts[:, 0], pts[:, 1]


def _interpolator(f, c):
    """Monotone cubic through the reference; repeated frequencies are averaged."""
    fu, inverse = np.unique(f, return_inverse=True)
    cu = np.bincount(inverse, weights=c) / np.bincount(inverse)
    if fu.size == 1:
        return lambda x: np.where(np.asarray(x) == fu[0], cu[0], np.nan)
    return PchipInterpolator(fu, cu, extrapolate=False)


def compare(ref, test, mode='', thickness=None):
    """Compare test against ref for one mode; thickness (m) defaults to the reference branch's."""
    f_ref, c_ref = _points(ref, mode)
    f_test, c_test = _points(test, mode)
    if not (f_ref.size and f_test.size):
        raise EmptyOverlapError(f"Mode {mode}: empty {'reference' if not f_ref.size else 'test'} set")
    if thickness is None:
        thickness = getattr(ref, 'thickness', None) or getattr(test, 'thickness', math.nan)
    c_interp = _interpolator(f_ref, c_ref)(f_test)
    inside = np.isfinite(c_interp)
    if not inside.any():
        raise EmptyOverlapError(f"Mode {mode}: test band {f_test[0]:.6g}-{f_test[-1]:.6g} Hz does not overlap "
                                f"the reference band {f_ref[0]:.6g}-{f_ref[-1]:.6g} Hz")
    rows = [ComparisonRow(mode, float(f), float(f * thickness * 1e-3), float(cr), float(ct))
            for f, cr, ct in zip(f_test[inside], c_interp[inside], c_test[inside])]
    report = ComparisonReport(rows)
    s = report.summary(mode)
    logger.info(f"Compare {mode or '-'}: {s.count} points over {s.fd_lo:.3f}-{s.fd_hi:.3f} MHz*mm, "
                f"mean |rel diff| {100 * s.mean_abs:.3f}%, max {100 * s.max_abs:.3f}%")
    return report


def compare_all(ref_branches, test, modes=('A0', 'S0'), thickness=None):
    """Per-mode comparison; test is a labelled peak list or a list of branches."""
    refs = {b.label: b for b in ref_branches}
    tests = {b.label: b for b in test} if test and isinstance(test[0], DispersionBranch) else None
    rows = []
    for mode in modes:
        if mode not in refs:
            logger.warning(f"⚠️ No reference branch for mode {mode}")
            continue
        if tests is not None:
            if mode not in tests:
                logger.warning(f"⚠️ No test branch for mode {mode}")
                continue
            mode_test = tests[mode]
        else:
            mode_test = [p for p in test if p.mode == mode]
        try:
            rows.extend(compare(refs[mode], mode_test, mode, thickness).rows)
        except EmptyOverlapError as e:
            logger.warning(f"⚠️ {e}")
    if not rows:
        raise EmptyOverlapError(f"No overlap between reference and test for any of {', '.join(modes)}")
    return ComparisonReport(rows)


REPORT_CSV_COLUMNS = ('mode', 'f_hz', 'fd_mhzmm', 'cp_ref_mps', 'cp_test_mps', 'rel_diff')
SUMMARY_CSV_COLUMNS = ('mode', 'count', 'mean_abs_rel_diff', 'max_abs_rel_diff', 'fd_lo_mhzmm', 'fd_hi_mhzmm')


def write_report_csv(report, path):
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_CSV_COLUMNS)
        for r in report.rows:
            writer.writerow([r.mode, r.f, r.fd, r.c_ref, r.c_test, r.rel_diff])
    return path


def write_summary_csv(report, path):
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_CSV_COLUMNS)
        for s in report.summaries().values():
            writer.writerow([s.mode, s.count, s.mean_abs, s.max_abs, s.fd_lo, s.fd_hi])
    return path
