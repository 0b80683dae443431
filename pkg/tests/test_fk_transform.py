import os
import math
import shutil
import logging
import tempfile
import unittest

import numpy as np

from lamwave_pkg.fk_transform import (
    FKMap, NyquistError, Peak, aperture_envelope, assign_modes, default_nu_grid, load_fkmap, nudft2, peak_search,
    read_peaks_csv, save_fkmap, write_peaks_csv)
from lamwave_pkg.global_matrix import DispersionBranch
from lamwave_pkg.wavefield import ExcitationSpec, Wavefield, measurement_path, synthesize

logging.disable(logging.CRITICAL)


def plane_wave(f0, nu0, times, positions, amplitude=1.0):
    return Wavefield(times, positions, amplitude * np.cos(2 * np.pi * (f0 * times[:, None] - nu0 * positions[None, :])))


class TestTransformProperties(unittest.TestCase):

    def setUp(self):
        self.fs = 1e6
        self.times = np.arange(200) / self.fs
        self.dx = 1e-3
        self.positions = self.dx * np.arange(100)

    def test_plane_wave_on_exact_bins(self):
        f0, nu0 = 50e3, 100.0
        w = plane_wave(f0, nu0, self.times, self.positions)
        nu_grid = np.fft.fftfreq(100, self.dx)
        fk = nudft2(w, [f0], nu_grid)
        mag = fk.magnitude[0]
        i = int(np.argmax(mag))
        self.assertAlmostEqual(nu_grid[i], nu0)
        self.assertAlmostEqual(mag[i], 200 * 100 / 2, delta=1e-6)
        others = np.delete(mag, i)
        self.assertLess(others.max(), 1e-9 * mag[i])
        peaks = peak_search(fk, refine=False)
        self.assertEqual(len(peaks), 1)
        self.assertAlmostEqual(peaks[0].nu, nu0, delta=1e-9)
        self.assertAlmostEqual(peaks[0].c_p, f0 / nu0, delta=1e-3)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        a = Wavefield(self.times, self.positions, rng.normal(size=(200, 100)))
        b = Wavefield(self.times, self.positions, rng.normal(size=(200, 100)))
        f_grid = np.array([10e3, 37.5e3, 120e3])
        nu_grid = np.linspace(-400.0, 400.0, 33)
        combined = nudft2(a.scaled(2.0) + b, f_grid, nu_grid).F
        separate = 2.0 * nudft2(a, f_grid, nu_grid).F + nudft2(b, f_grid, nu_grid).F
        self.assertLess(np.abs(combined - separate).max(), 1e-9 * np.abs(combined).max())

    def test_spatial_shift_theorem(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=(200, 100))
        shift = 0.0173
        f_grid = np.array([25e3, 40e3])
        nu_grid = np.linspace(0.0, 450.0, 46)
        base = nudft2(Wavefield(self.times, self.positions, v), f_grid, nu_grid).F
        moved = nudft2(Wavefield(self.times, self.positions + shift, v), f_grid, nu_grid).F
        expected = base * np.exp(-2j * np.pi * nu_grid * shift)[None, :]
        self.assertLess(np.abs(moved - expected).max(), 1e-9 * np.abs(base).max())

    def test_time_shift_keeps_magnitude(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=(200, 100))
        f_grid = np.array([15e3, 15.3e3, 80e3])
        nu_grid = np.linspace(-300.0, 300.0, 25)
        base = nudft2(Wavefield(self.times, self.positions, v), f_grid, nu_grid)
        delayed = nudft2(Wavefield(self.times + 3.7e-5, self.positions, v), f_grid, nu_grid)
        self.assertTrue(np.allclose(delayed.magnitude, base.magnitude, rtol=1e-9, atol=1e-9))
        factor = delayed.F / base.F
        self.assertTrue(np.allclose(np.abs(factor), 1.0, atol=1e-9))

    def test_parseval_on_uniform_grids(self):
        rng = np.random.default_rng(4)
        times = np.arange(64) / self.fs
        positions = self.dx * np.arange(32)
        w = Wavefield(times, positions, rng.normal(size=(64, 32)))
        fk = nudft2(w, np.fft.fftfreq(64, 1 / self.fs), np.fft.fftfreq(32, self.dx))
        energy = np.sum(fk.magnitude ** 2)
        self.assertAlmostEqual(energy / (64 * 32 * np.sum(w.v ** 2)), 1.0, delta=1e-6)

    def test_conjugate_symmetry(self):
        rng = np.random.default_rng(5)
        w = Wavefield(self.times, self.positions, rng.normal(size=(200, 100)))
        pos = nudft2(w, [20e3], [130.0]).F[0, 0]
        neg = nudft2(w, [-20e3], [-130.0]).F[0, 0]
        self.assertAlmostEqual(abs(pos - np.conj(neg)), 0.0, delta=1e-9 * abs(pos))

    def test_jittered_path_recovers_peak(self):
        f0, nu0 = 50e3, 173.3
        positions = measurement_path(0.1, 1e-3, jitter=0.3, seed=9)
        w = plane_wave(f0, nu0, self.times, positions)
        nu_grid = default_nu_grid(w, oversample=4, nu_max=400.0)
        peaks = peak_search(nudft2(w, [f0], nu_grid))
        best = max(peaks, key=lambda p: p.magnitude)
        self.assertTrue(best.refined)
        self.assertLess(abs(best.nu - nu0), nu_grid[1] - nu_grid[0])

    def test_nyquist_limits(self):
        w = plane_wave(50e3, 100.0, self.times, self.positions)
        with self.assertRaises(NyquistError) as ctx:
            nudft2(w, [600e3], [0.0])
        self.assertEqual(ctx.exception.value, 600e3)
        with self.assertRaises(NyquistError):
            nudft2(w, [50e3], [600.0])
        fk = nudft2(w, [self.fs / 2], [1 / (2 * self.dx)])
        self.assertTrue(np.all(np.isfinite(fk.F)))

    def test_default_nu_grid(self):
        w = plane_wave(50e3, 100.0, self.times, self.positions)
        grid = default_nu_grid(w, oversample=4)
        span = self.positions[-1]
        self.assertAlmostEqual(grid[1] - grid[0], 1 / (4 * span))
        self.assertLessEqual(grid[-1], 1 / (2 * w.min_spacing) * (1 + 1e-12))
        both = default_nu_grid(w, include_negative=True)
        self.assertTrue(np.allclose(both, -both[::-1]))

    def test_map_shape_checked(self):
        with self.assertRaises(ValueError):
            FKMap([1.0, 2.0], [1.0], np.zeros((1, 1)))


class TestPeakSearch(unittest.TestCase):

    def setUp(self):
        self.f0 = 50e3
        self.times = np.arange(200) / 1e6
        self.positions = measurement_path(0.32, 0.5e-3)

    def two_waves(self, nu_a, nu_b, amp_b):
        a = plane_wave(self.f0, nu_a, self.times, self.positions)
        return a + plane_wave(self.f0, nu_b, self.times, self.positions, amplitude=amp_b)

    def test_weak_mode_survives_strong_sidelobes(self):
        w = self.two_waves(100.0, 300.0, 0.1)
        fk = nudft2(w, [self.f0], default_nu_grid(w))
        peaks = peak_search(fk, 4, 0.05)
        self.assertEqual(len(peaks), 2)
        strong, weak = peaks
        self.assertAlmostEqual(strong.nu, 100.0, delta=0.1)
        self.assertAlmostEqual(weak.nu, 300.0, delta=0.1)
        self.assertTrue(8.0 <= strong.magnitude / weak.magnitude <= 12.0)

    def test_aperture_envelope_of_uniform_scan(self):
        self.assertAlmostEqual(float(aperture_envelope(self.positions, 0.0)[0]), 1.0, places=12)
        span = self.positions[-1]
        nulls = aperture_envelope(self.positions, np.arange(1, 5) / span)
        self.assertLess(nulls.max(), 0.01)
        widened = aperture_envelope(self.positions, [50.0], 1.0)
        self.assertGreaterEqual(widened[0], aperture_envelope(self.positions, [50.0])[0])

    def test_close_pair_merges_into_one_peak(self):
        step = 1.0 / (4 * self.positions[-1])
        w = self.two_waves(100.0, 100.0 + step, 1.0)
        fk = nudft2(w, [self.f0], default_nu_grid(w))
        peaks = peak_search(fk, 4, 0.05)
        self.assertEqual(len(peaks), 1)
        middle = 100.0 + step / 2
        self.assertAlmostEqual(peaks[0].nu, middle, delta=0.1 * step)
        self.assertGreater(abs(peaks[0].nu - 100.0), 0.3 * step)
        self.assertGreater(abs(peaks[0].nu - 100.0 - step), 0.3 * step)

    def test_parabolic_refinement_beats_grid_maximum(self):
        rng = np.random.default_rng(11)
        positions = measurement_path(0.1, 1e-3)
        step = 1.0 / (4 * positions[-1])
        nu_grid = step * np.arange(161)
        better = 0
        trials = 100
        for _ in range(trials):
            nu_true = step * (rng.integers(20, 140) + rng.uniform(0.05, 0.95))
            w = plane_wave(self.f0, nu_true, self.times, positions)
            fk = nudft2(w, [self.f0], nu_grid)
            grid_best = nu_grid[int(np.argmax(fk.magnitude[0]))]
            refined = max(peak_search(fk, 1), key=lambda p: p.magnitude)
            self.assertTrue(refined.refined)
            better += abs(refined.nu - nu_true) < abs(grid_best - nu_true)
        self.assertGreaterEqual(better, 0.95 * trials)


class TestReflection(unittest.TestCase):

    def test_mirror_wave_appears_at_negative_wavenumber(self):
        branch = DispersionBranch.from_fk('A0', [1e4, 1e5], [2 * math.pi * 20.0, 2 * math.pi * 200.0])
        spec = ExcitationSpec(5e4, 5e4, 1e3, 0.0, 1, 0.002, 'none', 1e6)
        positions = measurement_path(0.2, 1e-3)
        w = synthesize([branch], spec, positions, amp_model={'A0': 1.0}, reflection_coeff=0.3)
        grid = default_nu_grid(w, include_negative=True)
        peaks = peak_search(nudft2(w, [5e4], grid))
        forward = max((p for p in peaks if p.nu > 0), key=lambda p: p.magnitude)
        backward = max((p for p in peaks if p.nu < 0), key=lambda p: p.magnitude)
        self.assertAlmostEqual(forward.nu, 100.0, delta=0.5)
        self.assertAlmostEqual(backward.nu, -100.0, delta=0.5)
        self.assertAlmostEqual(backward.magnitude / forward.magnitude, 0.3, delta=0.03)


class TestModeAssignment(unittest.TestCase):

    def setUp(self):
        self.a0 = DispersionBranch.from_fk('A0', [1e4, 1e5], [2 * math.pi * 20.0, 2 * math.pi * 200.0])
        self.s0 = DispersionBranch.from_fk('S0', [1e4, 1e5], [2 * math.pi * 2.0, 2 * math.pi * 20.0])
        self.peaks = [
            Peak(5e4, 101.0, 10.0, 0.9),
            Peak(5e4, 98.0, 4.0, 0.3),
            Peak(5e4, 10.5, 1.0, 0.1),
            Peak(5e4, 60.0, 2.0, 0.2),
        ]

    def test_nearest_branch_within_tolerance(self):
        out = assign_modes(self.peaks, [self.a0, self.s0])
        modes = {p.mode: p for p in out}
        self.assertEqual(set(modes), {'A0', 'S0'})
        self.assertEqual(modes['A0'].nu, 101.0)
        self.assertEqual(modes['S0'].nu, 10.5)

    def test_rank_labels_without_branches(self):
        out = assign_modes(self.peaks)
        modes = {p.mode: p for p in out}
        self.assertEqual(modes['A0'].magnitude, 10.0)
        self.assertEqual(modes['S0'].magnitude, 4.0)


class TestFiles(unittest.TestCase):

    def setUp(self):
        self.out_dir = tempfile.mkdtemp()
        rng = np.random.default_rng(6)
        self.fk = FKMap([1e4, 2e4], [0.0, 5.0, 10.0], rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3)))

    def tearDown(self):
        shutil.rmtree(self.out_dir)

    def test_binary_map_round_trip(self):
        path = save_fkmap(self.fk, os.path.join(self.out_dir, 'fk.lfk'), fmt='bin')
        loaded = load_fkmap(path)
        self.assertTrue(np.array_equal(loaded.F, self.fk.F))
        self.assertTrue(np.array_equal(loaded.nu_grid, self.fk.nu_grid))
        self.assertIsNone(loaded.positions)

    def test_csv_map_round_trip(self):
        path = save_fkmap(self.fk, os.path.join(self.out_dir, 'fk.csv'))
        loaded = load_fkmap(path)
        self.assertTrue(np.allclose(loaded.F, self.fk.F, rtol=1e-12, atol=1e-12))

    def test_scan_positions_saved_with_map(self):
        fk = FKMap(self.fk.f_grid, self.fk.nu_grid, self.fk.F, positions=[0.0, 0.0015, 0.0031])
        for name, fmt in (('fk.lfk', 'bin'), ('fk.csv', 'csv')):
            loaded = load_fkmap(save_fkmap(fk, os.path.join(self.out_dir, name), fmt=fmt))
            self.assertTrue(np.array_equal(loaded.positions, fk.positions), fmt)
            self.assertTrue(np.allclose(loaded.F, fk.F, rtol=1e-12, atol=1e-12), fmt)

    def test_peaks_csv_round_trip(self):
        peaks = [Peak(1e4, 12.5, 3.0, 0.5, True, 'A0'), Peak(2e4, 7.25, 1.0, 0.2, False, '')]
        path = write_peaks_csv(peaks, os.path.join(self.out_dir, 'peaks.csv'))
        self.assertEqual(read_peaks_csv(path), peaks)


if __name__ == '__main__':
    unittest.main()
