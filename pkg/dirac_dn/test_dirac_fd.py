"""
Tests for slab grids and the assembled Dirac operator
"""
import numpy as np
from django.test import TestCase

from dirac_dn.errors import DimensionError
from dirac_dn.services.clifford import clifford_service
from dirac_dn.services.dirac_fd import SlabGrid, dirac_fd_service, smooth_spinor
from dirac_dn.services.families import (
    ConformalMetric, FlatMetric, TrigConnection, TrigPolynomial, ZeroConnection,
)


class SlabGridTest(TestCase):
    def setUp(self):
        self.grid = SlabGrid(n=3, tangential=(8, 10), normal=9, T=2.0)

    def test_layout(self):
        grid = self.grid
        self.assertEqual(grid.boundary_size, 80)
        self.assertEqual(grid.size, 720)
        self.assertEqual(grid.label(), '8x10x9')
        np.testing.assert_array_equal(grid.points[grid.boundary_index, -1], 0.0)
        np.testing.assert_allclose(grid.points[grid.far_index, -1], 2.0)
        # normal-major: the second layer starts after one full tangential lattice
        self.assertAlmostEqual(grid.points[80, -1], 0.25)
        np.testing.assert_array_equal(grid.points[81, :2], grid.points[1, :2])
        self.assertEqual(len(grid.interior_points), 80 * 7)

    def test_invalid_grids(self):
        with self.assertRaises(DimensionError):
            SlabGrid(n=2, tangential=9, normal=9)
        with self.assertRaises(DimensionError):
            SlabGrid(n=2, tangential=6, normal=9)
        with self.assertRaises(DimensionError):
            SlabGrid(n=2, tangential=8, normal=8)
        with self.assertRaises(DimensionError):
            SlabGrid(n=3, tangential=(8,), normal=9)

    def test_normal_differences_exact_on_quadratics(self):
        z = self.grid.points[:, -1]
        values = z ** 2 - 3.0 * z
        np.testing.assert_allclose(self.grid.derivative(2) @ values, 2.0 * z - 3.0, atol=1e-12)
        np.testing.assert_allclose(self.grid.second_derivative(2, 2) @ values, 2.0, atol=1e-11)

    def test_periodic_differences(self):
        grid = SlabGrid(n=2, tangential=64, normal=9)
        x = grid.points[:, 0]
        first = grid.derivative(0) @ np.sin(x)
        second = grid.second_derivative(0, 0) @ np.sin(x)
        np.testing.assert_allclose(first, np.cos(x) * np.sin(grid.h_tangential[0]) / grid.h_tangential[0],
                                   atol=1e-12)
        self.assertLess(np.max(np.abs(second + np.sin(x))), 2e-3)

    def test_mixed_second_derivative(self):
        x, z = self.grid.points[:, 0], self.grid.points[:, -1]
        values = np.sin(x) * z
        mixed = self.grid.second_derivative(0, 2) @ values
        expected = np.cos(x) * np.sin(self.grid.h_tangential[0]) / self.grid.h_tangential[0]
        np.testing.assert_allclose(mixed, expected, atol=1e-12)

    def test_expand(self):
        np.testing.assert_array_equal(self.grid.expand([0, 2], 3), [0, 1, 2, 6, 7, 8])

    def test_tangential_symbol(self):
        grid = SlabGrid(n=2, tangential=16, normal=9)
        h = grid.h_tangential[0]
        np.testing.assert_allclose(grid.tangential_symbol([3.0]), [np.sin(3.0 * h) / h])


class DiracOperatorTest(TestCase):
    def setUp(self):
        self.rep = clifford_service.build_gamma(2)
        self.grid = SlabGrid(n=2, tangential=16, normal=17)

    def test_flat_lichnerowicz_exact(self):
        """D^2 = -sum d_a^2 on the discrete level for the flat slab"""
        op = dirac_fd_service.build(FlatMetric(2), ZeroConnection(2, 1), self.rep, self.grid)
        psi = smooth_spinor(self.grid, op.dof, seed=1)
        self.assertLess(dirac_fd_service.lichnerowicz_residual(op, psi), 1e-11)

    def test_lichnerowicz_converges(self):
        rng = np.random.default_rng(9)
        metric = ConformalMetric(2, TrigPolynomial.random(2, rng, amplitude=0.15))
        connection = TrigConnection.random(2, 2, rng, amplitude=0.2, normal_gauge=False)
        rep = self.rep
        residuals = []
        for grid in (SlabGrid(n=2, tangential=16, normal=17), SlabGrid(n=2, tangential=32, normal=33)):
            op = dirac_fd_service.build(metric, connection, rep, grid)
            psi = smooth_spinor(grid, op.dof, seed=2)
            residuals.append(dirac_fd_service.lichnerowicz_residual(op, psi))
        self.assertLess(residuals[1], residuals[0] / 3.0)

    def test_symmetric_away_from_faces(self):
        """<D u, v> = <u, D v> for flat fields supported away from both faces"""
        connection = TrigConnection.random(2, 1, np.random.default_rng(3), normal_gauge=False)
        op = dirac_fd_service.build(FlatMetric(2), connection, self.rep, self.grid)
        mask = np.repeat(self.grid.face_mask(2), op.dof)
        u = smooth_spinor(self.grid, op.dof, seed=4) * mask
        v = smooth_spinor(self.grid, op.dof, seed=5) * mask
        self.assertLess(dirac_fd_service.green_defect(op, u, v), 1e-10)

    def test_twisted_connection_skew(self):
        connection = TrigConnection.random(2, 2, np.random.default_rng(6))
        op = dirac_fd_service.build(FlatMetric(2), connection, self.rep, self.grid)
        self.assertEqual(op.dof, 4)
        self.assertLess(op.theta.skew_residual(), 1e-13)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            dirac_fd_service.build(FlatMetric(3), ZeroConnection(2, 1), self.rep, self.grid)

    def test_lowest_dirichlet_modes(self):
        op = dirac_fd_service.build(FlatMetric(2), ZeroConnection(2, 1), self.rep, self.grid)
        values, vectors = dirac_fd_service.lowest_dirichlet_modes(op, count=2)
        self.assertEqual(vectors.shape, (len(self.grid.interior_points) * op.dof, 2))
        interior = self.grid.expand(self.grid.interior_points, op.dof)
        block = op.laplacian()[interior][:, interior]
        for index in range(2):
            residual = block @ vectors[:, index] - values[index] * vectors[:, index]
            self.assertLess(np.linalg.norm(residual), 1e-8 * abs(values[index]))
        self.assertGreater(values[0].real, 0.0)
        self.assertLessEqual(values[0].real, values[1].real)
