import os
import csv
import math
import shutil
import logging
import tempfile
import unittest

import numpy as np

from lamwave_pkg.compare import (
    ComparisonRow, EmptyOverlapError, compare, compare_all, write_report_csv, write_summary_csv)
from lamwave_pkg.fk_transform import Peak
from lamwave_pkg.global_matrix import DispersionBranch

logging.disable(logging.CRITICAL)


def speed(f):
    return 1000.0 + 0.01 * f


def reference_branch(label='A0', f_lo=1e4, f_hi=1e5, n=10):
    f = np.linspace(f_lo, f_hi, n)
    return DispersionBranch.from_fk(label, f, 2 * math.pi * f / speed(f), thickness=2e-3)


def scaled_peaks(freqs, factor, mode='A0'):
    return [Peak(float(f), float(f / (factor * speed(f))), 1.0, 1.0, True, mode) for f in freqs]


class TestCompare(unittest.TestCase):

    def setUp(self):
        self.ref = reference_branch()

    def test_relative_difference_against_branch(self):
        report = compare(self.ref, scaled_peaks(np.linspace(2e4, 8e4, 7), 1.02), 'A0')
        self.assertEqual(len(report.rows), 7)
        for row in report.rows:
            self.assertAlmostEqual(row.rel_diff, 0.02, places=9)
        s = report.summary('A0')
        self.assertAlmostEqual(s.mean_abs, 0.02, places=9)
        self.assertAlmostEqual(s.fd_lo, 0.04)
        self.assertAlmostEqual(s.fd_hi, 0.16)

    def test_sign_follows_test_minus_reference(self):
        report = compare(self.ref, scaled_peaks([5e4], 0.95), 'A0')
        self.assertAlmostEqual(report.rows[0].rel_diff, -0.05, places=9)
        self.assertAlmostEqual(ComparisonRow('A0', 1.0, 0.0, 200.0, 250.0).rel_diff, 0.25)

    def test_no_extrapolation(self):
        report = compare(self.ref, scaled_peaks([5e3, 5e4, 2e5], 1.0), 'A0')
        self.assertEqual([r.f for r in report.rows], [5e4])
        lo, hi = report.overlap
        self.assertAlmostEqual(lo, 0.1)
        self.assertAlmostEqual(hi, 0.1)

    def test_disjoint_bands(self):
        with self.assertRaises(EmptyOverlapError):
            compare(self.ref, scaled_peaks([2e5, 3e5], 1.0), 'A0')
        with self.assertRaises(EmptyOverlapError):
            compare(self.ref, [], 'A0')

    def test_peaks_of_other_modes_ignored(self):
        peaks = scaled_peaks([3e4, 6e4], 1.01) + scaled_peaks([4e4], 1.5, mode='S0')
        report = compare(self.ref, peaks, 'A0')
        self.assertEqual(len(report.rows), 2)

    def test_summary_of_unknown_mode(self):
        report = compare(self.ref, scaled_peaks([5e4], 1.0), 'A0')
        with self.assertRaises(KeyError):
            report.summary('S0')


class TestCompareAll(unittest.TestCase):

    def setUp(self):
        self.refs = [reference_branch('A0'), reference_branch('S0')]

    def test_labelled_peaks(self):
        peaks = scaled_peaks([2e4, 4e4], 1.01) + scaled_peaks([3e4, 5e4, 7e4], 0.98, mode='S0')
        report = compare_all(self.refs, peaks)
        self.assertEqual(report.modes, ['A0', 'S0'])
        self.assertEqual(report.summary('S0').count, 3)
        self.assertAlmostEqual(report.summary('S0').max_abs, 0.02, places=9)

    def test_branches_as_test_set(self):
        test = [reference_branch('A0', 2e4, 2e5, 19)]
        report = compare_all(self.refs, test)
        self.assertEqual(report.modes, ['A0'])
        self.assertAlmostEqual(report.summary('A0').max_abs, 0.0, places=9)
        self.assertEqual(report.summary('A0').count, 9)

    def test_missing_mode_is_skipped(self):
        report = compare_all(self.refs[:1], scaled_peaks([5e4], 1.0) + scaled_peaks([5e4], 1.0, mode='S0'))
        self.assertEqual(report.modes, ['A0'])

    def test_nothing_overlaps(self):
        with self.assertRaises(EmptyOverlapError):
            compare_all(self.refs, scaled_peaks([5e5], 1.0))


class TestReportFiles(unittest.TestCase):

    def setUp(self):
        self.out_dir = tempfile.mkdtemp()
        peaks = scaled_peaks([2e4, 4e4], 1.01) + scaled_peaks([3e4], 0.98, mode='S0')
        self.report = compare_all([reference_branch('A0'), reference_branch('S0')], peaks)

    def tearDown(self):
        shutil.rmtree(self.out_dir)

    def test_report_csv(self):
        path = write_report_csv(self.report, os.path.join(self.out_dir, 'compare.csv'))
        with open(path, newline='', encoding='utf-8') as fh:
            rows = list(csv.DictReader(fh))
        self.assertEqual(len(rows), 3)
        self.assertEqual(rows[0]['mode'], 'A0')
        self.assertAlmostEqual(float(rows[2]['rel_diff']), -0.02, places=9)

    def test_summary_csv(self):
        path = write_summary_csv(self.report, os.path.join(self.out_dir, 'summary.csv'))
        with open(path, newline='', encoding='utf-8') as fh:
            rows = {r['mode']: r for r in csv.DictReader(fh)}
        self.assertEqual(set(rows), {'A0', 'S0'})
        self.assertEqual(int(rows['A0']['count']), 2)
        self.assertAlmostEqual(float(rows['A0']['mean_abs_rel_diff']), 0.01, places=9)


if __name__ == '__main__':
    unittest.main()
