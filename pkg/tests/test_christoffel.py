import unittest
import logging
from unittest import mock

import numpy as np

from lamwave_pkg.christoffel import (EigenSolveError, acoustic_tensor, partial_waves, solve_layer,
                                     stress_factor)
from lamwave_pkg.materials import MATERIAL_CATALOG, rotate_in_plane, stiffness_from_engineering, stiffness_from_isotropic
from tests.oracles import bulk_speeds

logging.disable(logging.CRITICAL)

STEEL_DENSITY = 7900.0


class TestPartialWaves(unittest.TestCase):

    def setUp(self):
        self.steel = stiffness_from_isotropic(191.0, 0.3)
        self.c_l, self.c_t = bulk_speeds(191.0, 0.3, STEEL_DENSITY)
        self.cfrp = stiffness_from_engineering(MATERIAL_CATALOG['johnston'])

    def test_acoustic_tensor_along_x1(self):
        gamma = acoustic_tensor(self.steel, [1.0, 0.0, 0.0])
        eig = np.sort(np.linalg.eigvalsh(gamma))
        self.assertAlmostEqual(eig[0] / (STEEL_DENSITY * self.c_t ** 2), 1.0, places=10)
        self.assertAlmostEqual(eig[2] / (STEEL_DENSITY * self.c_l ** 2), 1.0, places=10)

    def test_supersonic_isotropic_alphas_are_bulk_slownesses(self):
        c = 1.5 * self.c_l
        alphas, _, _ = partial_waves(self.steel.pascal, STEEL_DENSITY, [c])
        alphas = alphas[0]
        self.assertTrue(np.all(np.abs(alphas.imag) < 1e-9))
        a_l = np.sqrt((c / self.c_l) ** 2 - 1)
        a_t = np.sqrt((c / self.c_t) ** 2 - 1)
        self.assertTrue(np.allclose(np.sort(alphas[:3].real), [a_l, a_t, a_t], rtol=1e-9))
        self.assertTrue(np.allclose(np.sort(alphas[3:].real), [-a_t, -a_t, -a_l], rtol=1e-9))

    def test_subsonic_waves_split_by_decay_direction(self):
        alphas, _, _ = partial_waves(self.steel.pascal, STEEL_DENSITY, [0.5 * self.c_t])
        self.assertTrue(np.all(alphas[0, :3].imag > 0))
        self.assertTrue(np.all(alphas[0, 3:].imag < 0))

    def test_longitudinal_speed_gives_zero_alpha(self):
        alphas, _, _ = partial_waves(self.steel.pascal, STEEL_DENSITY, [self.c_l])
        size = np.sort(np.abs(alphas[0]))
        self.assertLess(size[0], 1e-6)
        self.assertLess(size[1], 1e-6)
        a_t = np.sqrt((self.c_l / self.c_t) ** 2 - 1)
        self.assertTrue(np.allclose(size[2:], a_t, rtol=1e-9))

    def test_twice_shear_speed_gives_root_three(self):
        alphas, _, _ = partial_waves(self.steel.pascal, STEEL_DENSITY, [2 * self.c_t])
        alphas = alphas[0]
        self.assertTrue(np.all(np.abs(alphas.imag) < 1e-9))
        self.assertEqual(int(np.sum(np.abs(alphas.real - np.sqrt(3)) < 1e-9)), 2)
        self.assertEqual(int(np.sum(np.abs(alphas.real + np.sqrt(3)) < 1e-9)), 2)

    def test_shear_horizontal_decouples_along_fibre(self):
        _, p, _ = partial_waves(self.cfrp.pascal, MATERIAL_CATALOG['johnston'].density, [2500.0, 9000.0])
        for m in range(2):
            sh = np.abs(p[m, 1, :]) > 0.5
            self.assertEqual(int(sh.sum()), 2)
            self.assertTrue(np.allclose(p[m][:, sh], [[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]], atol=1e-9))
            self.assertTrue(np.all(np.abs(p[m, 1, ~sh]) < 1e-9))

    def test_degenerate_shear_pair_separates_sh_polarization(self):
        _, p, _ = partial_waves(self.steel.pascal, STEEL_DENSITY, [0.7 * self.c_t])
        p = p[0]
        sh = [j for j in (0, 1) if abs(abs(p[1, j]) - 1.0) < 1e-8]
        self.assertEqual(len(sh), 1)
        other = 1 - sh[0]
        self.assertLess(abs(p[1, other]), 1e-8)

    def test_polarizations_are_unit_vectors(self):
        _, p, _ = partial_waves(self.cfrp.pascal, MATERIAL_CATALOG['johnston'].density,
                                np.linspace(500.0, 12000.0, 7))
        self.assertTrue(np.allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-12))

    def test_stress_factors_match_direct_contraction(self):
        t = rotate_in_plane(self.cfrp, 30.0)
        alphas, p, d = partial_waves(t.pascal, 1580.0, [2500.0])
        for j in range(6):
            expected = stress_factor(t, [1.0, 0.0, alphas[0, j]], p[0, :, j])
            self.assertTrue(np.allclose(d[0, :, j], expected, rtol=1e-9, atol=1e-6))


class TestSolveLayer(unittest.TestCase):

    def test_christoffel_residuals_small(self):
        cases = [
            (stiffness_from_isotropic(191.0, 0.3), STEEL_DENSITY),
            (stiffness_from_engineering(MATERIAL_CATALOG['johnston']), 1580.0),
            (rotate_in_plane(stiffness_from_engineering(MATERIAL_CATALOG['johnston']), 45.0), 1580.0),
        ]
        for t, rho in cases:
            for c in (800.0, 2500.0, 9000.0):
                f = 200e3
                sol = solve_layer(t, rho, f, 2 * np.pi * f / c, 0.13e-3)
                self.assertLess(sol.residuals().max(), 1e-8, f"c_p={c}")
                self.assertAlmostEqual(sol.phase_velocity, c, places=6)

    def test_phase_terms_bounded(self):
        sol = solve_layer(stiffness_from_isotropic(191.0, 0.3), STEEL_DENSITY, 1e6, 2 * np.pi * 1e6 / 600.0, 2e-3)
        self.assertTrue(np.all(np.abs(sol.H) <= 1.0 + 1e-12))
        self.assertEqual(sol.G.shape, (6, 6))

    def test_invalid_inputs(self):
        t = stiffness_from_isotropic(191.0, 0.3)
        with self.assertRaises(ValueError):
            solve_layer(t, STEEL_DENSITY, 1e5, 0.0, 1e-3)
        with self.assertRaises(ValueError):
            solve_layer(t, STEEL_DENSITY, -1.0, 100.0, 1e-3)

    def test_eigen_failure_carries_location(self):
        t = stiffness_from_isotropic(191.0, 0.3)
        with mock.patch('numpy.linalg.eig', side_effect=np.linalg.LinAlgError('no convergence')):
            with self.assertRaises(EigenSolveError) as ctx:
                solve_layer(t, STEEL_DENSITY, 1e5, 300.0, 1e-3)
        self.assertEqual(ctx.exception.f, 1e5)
        self.assertEqual(ctx.exception.k, 300.0)


if __name__ == '__main__':
    unittest.main()
