import os
import math
import shutil
import logging
import tempfile
import unittest

import numpy as np

from lamwave_pkg.fk_transform import Peak
from lamwave_pkg.outlier_filter import (
    ExclusionZone, FilterConfig, InsufficientPointsError, apply_bounds, apply_exclusions, filter_config_from_dict,
    fit_reject, robust_polyfit, run_filter, write_report_csv)

logging.disable(logging.CRITICAL)


def linear_peaks(n=100, mode='A0', f_lo=50e3, f_hi=500e3):
    f = np.linspace(f_lo, f_hi, n)
    nu = 50.0 + 200.0 * f * 1e-6
    return [Peak(float(fi), float(ni), 1.0, 1.0, True, mode) for fi, ni in zip(f, nu)]


def key(peak):
    return (peak.mode, peak.f, peak.nu)


class TestFilterConfig(unittest.TestCase):

    def test_bounds_from_geometry(self):
        cfg = FilterConfig(0.32, 0.5e-3, 2.04e-3)
        self.assertAlmostEqual(cfg.nu_min, 31.25)
        self.assertAlmostEqual(cfg.nu_max, 1000.0)
        self.assertAlmostEqual(FilterConfig(0.32, 0.5e-3, 2.04e-3, nu_cap=400.0).nu_max, 400.0)
        self.assertAlmostEqual(cfg.fd(1e6), 2.04)

    def test_empty_bounds_rejected(self):
        with self.assertRaises(ValueError):
            FilterConfig(0.001, 0.5e-3, 2.04e-3)
        with self.assertRaises(ValueError):
            FilterConfig(0.32, 0.5e-3, 2.04e-3, residual_threshold_rel=0.0)

    def test_from_dict(self):
        cfg = filter_config_from_dict(
            {'lambda_factor': 5, 'exclusion_zones': [[1.0, None, 'late'], [0.2, 0.3, 'sh', ['S0']]]},
            0.32, 0.5e-3, 2.04e-3, residual_threshold=0.05)
        self.assertAlmostEqual(cfg.nu_min, 15.625)
        self.assertEqual(cfg.residual_threshold_rel, 0.05)
        self.assertEqual(cfg.exclusion_zones[0].fd_hi, math.inf)
        self.assertEqual(cfg.exclusion_zones[1].modes, ('S0',))
        with self.assertRaises(TypeError):
            filter_config_from_dict({'unknown_option': 1}, 0.32, 0.5e-3, 2.04e-3)


class TestBoundsAndZones(unittest.TestCase):

    def setUp(self):
        self.cfg = FilterConfig(0.32, 0.5e-3, 1e-3)

    def test_bounds(self):
        peaks = [Peak(1e5, 20.0, 1.0, 1.0, mode='A0'), Peak(1e5, 31.25, 1.0, 1.0, mode='A0'),
                 Peak(1e5, 1000.0, 1.0, 1.0, mode='A0'), Peak(1e5, 2000.0, 1.0, 1.0, mode='A0')]
        report = apply_bounds(peaks, self.cfg)
        self.assertEqual([p.nu for p in report.kept], [31.25, 1000.0])
        self.assertEqual([r.reason for r in report.rejected], ['below_nu_min', 'above_nu_max'])

    def test_zone_is_closed_and_mode_specific(self):
        zone = ExclusionZone(1.1, 1.2, 'SH', ('S0',))
        self.assertTrue(zone.contains('S0', 1.1))
        self.assertTrue(zone.contains('S0', 1.2))
        self.assertFalse(zone.contains('A0', 1.15))
        self.assertTrue(ExclusionZone(1.8, math.inf, 'convergence').contains('A0', 5.0))
        with self.assertRaises(ValueError):
            ExclusionZone(1.2, 1.1, 'bad')

    def test_default_zones(self):
        peaks = [Peak(1.15e6, 300.0, 1.0, 1.0, mode='S0'), Peak(1.15e6, 600.0, 1.0, 1.0, mode='A0'),
                 Peak(1.9e6, 700.0, 1.0, 1.0, mode='A0')]
        report = apply_exclusions(peaks, self.cfg)
        self.assertEqual([p.mode for p in report.kept], ['A0'])
        self.assertEqual(sorted(r.tag for r in report.rejected), ['SH', 'convergence'])


class TestResidualRejection(unittest.TestCase):

    def setUp(self):
        self.cfg = FilterConfig(0.32, 0.5e-3, 2.04e-3, exclusion_zones=())

    def test_robust_fit_ignores_outliers(self):
        x = np.linspace(0.0, 1.0, 40)
        y = 3.0 + 2.0 * x
        y[[5, 17, 30]] += 5.0
        coeffs = robust_polyfit(x, y, 1)
        self.assertAlmostEqual(coeffs[0], 2.0, places=6)
        self.assertAlmostEqual(coeffs[1], 3.0, places=6)

    def test_injected_outliers_fully_recalled(self):
        peaks = linear_peaks()
        injected = set()
        for n, i in enumerate(range(5, 100, 10)):
            factor = 1.09 if n % 2 == 0 else 0.91
            peaks[i] = Peak(peaks[i].f, peaks[i].nu * factor, 1.0, 1.0, True, 'A0')
            injected.add(key(peaks[i]))
        report = run_filter(peaks, self.cfg)
        rejected = {key(r.peak) for r in report.rejected}
        self.assertEqual(rejected, injected)
        self.assertEqual(len(report.kept), 90)

    def test_idempotent(self):
        rng = np.random.default_rng(11)
        peaks = [Peak(p.f, p.nu * (1 + rng.normal(0, 0.005)), 1.0, 1.0, True, 'A0') for p in linear_peaks()]
        for i in (12, 47, 81):
            peaks[i] = Peak(peaks[i].f, peaks[i].nu * 1.2, 1.0, 1.0, True, 'A0')
        first = run_filter(peaks, self.cfg)
        second = run_filter(first.kept, self.cfg)
        self.assertEqual([key(p) for p in second.kept], [key(p) for p in first.kept])
        self.assertEqual(second.rejected, [])

    def test_input_order_does_not_matter(self):
        rng = np.random.default_rng(13)
        peaks = [Peak(p.f, p.nu * (1 + rng.normal(0, 0.005)), 1.0, 1.0, True, p.mode)
                 for p in linear_peaks() + linear_peaks(60, mode='S0', f_lo=200e3)]
        for i, factor in ((7, 1.1), (41, 0.9), (120, 1.12)):
            peaks[i] = Peak(peaks[i].f, peaks[i].nu * factor, 1.0, 1.0, True, peaks[i].mode)
        peaks.append(Peak(2e5, 5.0, 1.0, 1.0, True, 'A0'))
        first = run_filter(peaks, self.cfg)
        shuffled = [peaks[i] for i in rng.permutation(len(peaks))]
        second = run_filter(shuffled, self.cfg, workers=2)
        self.assertEqual([key(p) for p in second.kept], [key(p) for p in first.kept])
        self.assertEqual({(key(r.peak), r.reason) for r in second.rejected},
                         {(key(r.peak), r.reason) for r in first.rejected})
        self.assertGreaterEqual(len(first.rejected), 4)

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(12)
        peaks = [Peak(p.f, p.nu * (1 + rng.normal(0, 0.005)), 1.0, 1.0, True, 'A0') for p in linear_peaks()]
        for i, factor in ((8, 1.04), (33, 0.94), (58, 1.08), (90, 0.97)):
            peaks[i] = Peak(peaks[i].f, peaks[i].nu * factor, 1.0, 1.0, True, 'A0')
        rejected = []
        for threshold in (0.05, 0.03, 0.02):
            cfg = FilterConfig(0.32, 0.5e-3, 2.04e-3, residual_threshold_rel=threshold, exclusion_zones=())
            rejected.append({key(r.peak) for r in run_filter(peaks, cfg).rejected})
        self.assertTrue(rejected[0] <= rejected[1] <= rejected[2])

    def test_curved_branch_survives(self):
        f = np.linspace(30e3, 600e3, 90)
        nu = 9.0 * np.sqrt(f * 1e-3)
        peaks = [Peak(float(fi), float(ni), 1.0, 1.0, True, 'A0') for fi, ni in zip(f, nu)]
        report = run_filter(peaks, self.cfg)
        self.assertEqual(report.rejected, [])

    def test_too_few_points(self):
        with self.assertRaises(InsufficientPointsError):
            fit_reject(linear_peaks(5), self.cfg)
        report = run_filter(linear_peaks(5, mode='S0') + linear_peaks(40), self.cfg)
        self.assertEqual(report.summary()['S0']['kept'], 5)
        self.assertEqual(report.summary()['A0']['kept'], 40)

    def test_report_csv_carries_settings(self):
        out_dir = tempfile.mkdtemp()
        try:
            peaks = linear_peaks(20) + [Peak(1e5, 10.0, 1.0, 1.0, True, 'A0')]
            report = run_filter(peaks, self.cfg)
            path = write_report_csv(report, self.cfg, os.path.join(out_dir, 'filter_report.csv'))
            with open(path, encoding='utf-8') as fh:
                lines = fh.read().splitlines()
            self.assertIn('# nu_min=31.25', lines)
            header = next(line for line in lines if not line.startswith('#'))
            self.assertEqual(header, 'mode,f_hz,fd_mhzmm,nu_1pm,mag,status,reason,tag')
            self.assertEqual(sum('below_nu_min' in line for line in lines), 1)
        finally:
            shutil.rmtree(out_dir)


if __name__ == '__main__':
    unittest.main()
