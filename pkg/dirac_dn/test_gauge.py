"""
Tests for gauge actions, normal gauge fixing and the Yang-Mills-Dirac diagnostics
"""
import numpy as np
from django.test import TestCase
from scipy.linalg import expm

from dirac_dn.errors import DimensionError, GaugeError
from dirac_dn.services.clifford import clifford_service
from dirac_dn.services.dirac_fd import SlabGrid, dirac_fd_service
from dirac_dn.services.families import (
    ConformalMetric, ExponentialGauge, FlatMetric, TrigConnection, TrigPolynomial, ZeroConnection,
    random_skew_hermitian,
)
from dirac_dn.services.gauge import GaugedConnection, ad_matrix, gauge_service


def _skew(N, rng, norm):
    S = random_skew_hermitian(N, rng)
    return S * (norm / np.linalg.norm(S, 2))


class ThetaSeriesTest(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(41)

    def test_ad_matrix(self):
        S = random_skew_hermitian(3, self.rng)
        X = self.rng.standard_normal((3, 3))
        image = (ad_matrix(S) @ X.reshape(-1)).reshape(3, 3)
        np.testing.assert_allclose(image, S @ X - X @ S, atol=1e-14)

    def test_dexp_matches_differences(self):
        for norm in (0.1, 0.5, 0.9):
            S = _skew(3, self.rng, norm)
            self.assertLess(gauge_service.dexp_check(S, rng=self.rng), 1e-8)

    def test_theta_solve_inverts_apply(self):
        S = _skew(2, self.rng, 0.7)
        theta = gauge_service.theta_op(S)
        X = random_skew_hermitian(2, self.rng)
        np.testing.assert_allclose(theta.solve(theta.apply(X)), X, atol=1e-12)
        self.assertLess(theta.remainder_bound, 1e-10)

    def test_theta_at_zero_is_identity(self):
        theta = gauge_service.theta_op(np.zeros((2, 2)))
        np.testing.assert_allclose(theta.matrix, np.eye(4))
        self.assertEqual(theta.remainder_bound, 0.0)

    def test_norm_bound(self):
        with self.assertRaises(GaugeError):
            gauge_service.theta_op(_skew(2, self.rng, 1.5))
        # ad S vanishes for N = 1, so the series is exact at any size
        theta = gauge_service.theta_op(np.array([[3.0j]]))
        np.testing.assert_allclose(theta.matrix, [[1.0]])

    def test_theta_derivative_matches_differences(self):
        S = _skew(2, self.rng, 0.4)
        direction = random_skew_hermitian(2, self.rng)
        step = 1e-6
        difference = (gauge_service.theta_op(S + step * direction).matrix
                      - gauge_service.theta_op(S - step * direction).matrix) / (2 * step)
        np.testing.assert_allclose(gauge_service.theta_derivative(S, direction), difference, atol=1e-7)


class GaugeActionTest(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(43)
        self.connection = TrigConnection.random(2, 2, self.rng, normal_gauge=False)
        self.gauge = ExponentialGauge.random(2, 2, self.rng)
        self.grid = SlabGrid(n=2, tangential=8, normal=9)

    def test_curvature_conjugates(self):
        gauged = gauge_service.apply_gauge(self.connection, self.gauge, check_points=self.grid.points)
        G = self.gauge.values(self.grid.points)
        residual = gauge_service.conjugation_residual(self.connection, gauged, G, self.grid.points)
        self.assertLess(residual, 1e-10)
        curvature = gauge_service.curvature_field(gauged, self.grid.points)
        self.assertLess(curvature.antisymmetry_residual(), 1e-15)
        self.assertLess(curvature.skew_residual(), 1e-10)
        self.assertEqual(set(curvature.components()), {(0, 1)})

    def test_gauged_values_are_skew(self):
        gauged = GaugedConnection(self.connection, self.gauge)
        values = gauged.values(self.grid.points)
        np.testing.assert_allclose(values, -np.conj(np.swapaxes(values, -1, -2)), atol=1e-12)
        # G = I on the boundary leaves tangential components there unchanged
        boundary = self.grid.boundary_points
        np.testing.assert_allclose(gauged.values(boundary)[0], self.connection.values(boundary)[0], atol=1e-12)

    def test_rank_mismatch(self):
        with self.assertRaises(DimensionError):
            GaugedConnection(ZeroConnection(2, 1), self.gauge)

    def test_boundary_identity_required(self):
        gauge = ExponentialGauge.random(2, 2, self.rng, boundary_identity=False)
        rep = clifford_service.build_gamma(2)
        with self.assertRaises(GaugeError):
            gauge_service.dn_gauge_defect(FlatMetric(2), self.connection, gauge, rep, self.grid)

    def test_transport_recovers_gauge(self):
        gauged = gauge_service.apply_gauge(self.connection, self.gauge)
        result = gauge_service.transport_equivalence(self.connection, gauged, self.grid, substeps=64)
        self.assertLess(result.path_residual, 1e-5)
        self.assertLess(result.conjugation_residual, 1e-5)
        np.testing.assert_allclose(result.gauge, self.gauge.values(self.grid.points), atol=1e-5)

    def test_transport_detects_curvature(self):
        result = gauge_service.transport_equivalence(ZeroConnection(2, 2), self.connection, self.grid)
        curvature = gauge_service.curvature_field(self.connection, self.grid.points).norm()
        self.assertGreater(result.conjugation_residual, 0.5 * curvature)


class NormalGaugeTest(TestCase):
    def test_normal_component_removed(self):
        rng = np.random.default_rng(47)
        connection = TrigConnection.random(2, 2, rng, normal_gauge=False)
        grid = SlabGrid(n=2, tangential=8, normal=9)
        fixed = gauge_service.normal_gauge_fix(connection, grid)
        self.assertLess(fixed.normal_residual, 1e-12)
        self.assertLess(fixed.unitarity_residual, 1e-6)
        self.assertTrue(fixed.connection.normal_gauge)
        np.testing.assert_allclose(fixed.gauge.values(grid.points)[grid.boundary_index],
                                   np.broadcast_to(np.eye(2), (grid.boundary_size, 2, 2)))

    def test_dn_map_unchanged(self):
        """The DN map of an abelian connection survives a boundary-identity gauge, up to discretisation"""
        rng = np.random.default_rng(53)
        rep = clifford_service.build_gamma(2)
        connection = TrigConnection.random(2, 1, rng, normal_gauge=False, abelian=True)
        gauge = ExponentialGauge.random(2, 1, rng, abelian=True)
        defects = [
            gauge_service.dn_gauge_defect(FlatMetric(2), connection, gauge, rep, SlabGrid(n=2, tangential=t, normal=t + 1))
            for t in (16, 32)
        ]
        self.assertLess(defects[1], defects[0] / 1.5)


class YangMillsDiracTest(TestCase):
    def setUp(self):
        self.rep = clifford_service.build_gamma(2)
        self.grid = SlabGrid(n=2, tangential=16, normal=17)

    def test_current_is_skew(self):
        phi = np.random.default_rng(59).standard_normal((self.grid.size, 4)) + 0j
        J = gauge_service.current(phi, self.rep, 2)
        self.assertEqual(J.shape, (2, self.grid.size, 2, 2))
        np.testing.assert_allclose(J, -np.conj(np.swapaxes(J, -1, -2)), atol=1e-12)
        with self.assertRaises(DimensionError):
            gauge_service.current(phi[:, :3], self.rep, 2)

    def test_current_is_equivariant(self):
        """J(G phi) = G J(phi) G^{-1}"""
        rng = np.random.default_rng(60)
        phi = rng.standard_normal((10, 4)) + 1j * rng.standard_normal((10, 4))
        G = expm(random_skew_hermitian(2, rng))
        rotated = (phi.reshape(10, 2, 2) @ G.T).reshape(10, 4)
        expected = G @ gauge_service.current(phi, self.rep, 2) @ np.conj(G.T)
        np.testing.assert_allclose(gauge_service.current(rotated, self.rep, 2), expected, atol=1e-10)

    def test_dirichlet_mode_spinor_residual(self):
        op = dirac_fd_service.build(FlatMetric(2), ZeroConnection(2, 1), self.rep, self.grid)
        values, vectors = dirac_fd_service.lowest_dirichlet_modes(op, count=1)
        phi = np.zeros(op.size, dtype=complex)
        phi[self.grid.expand(self.grid.interior_points, op.dof)] = vectors[:, 0]
        r1, r2 = gauge_service.ymd_residuals(op, phi, m=np.sqrt(values[0]))
        self.assertLess(r1, 1e-6)
        self.assertGreaterEqual(r2, 0.0)


class GaugeFixingTest(TestCase):
    def setUp(self):
        rng = np.random.default_rng(61)
        self.metric = ConformalMetric(2, TrigPolynomial.random(2, rng, amplitude=0.2))
        self.grid = SlabGrid(n=2, tangential=16, normal=17)
        self.rng = rng

    def test_zero_generator_on_zero_connection(self):
        zero = np.zeros((self.grid.size, 2, 2), dtype=complex)
        self.assertLess(gauge_service.ck_residual(zero, ZeroConnection(2, 2), self.metric, self.grid), 1e-14)

    def test_abelian_solve(self):
        connection = TrigConnection.random(2, 1, self.rng, normal_gauge=False, abelian=True)
        S = gauge_service.abelian_gauge_fix(connection, self.metric, self.grid)
        self.assertEqual(S.shape, (self.grid.size, 1, 1))
        np.testing.assert_array_equal(S[self.grid.boundary_index], 0.0)
        self.assertLess(np.max(np.abs(S.real)), 1e-15)
        self.assertLess(gauge_service.ck_residual(S, connection, self.metric, self.grid), 1e-8)

    def test_abelian_only(self):
        connection = TrigConnection.random(2, 2, self.rng)
        with self.assertRaises(GaugeError):
            gauge_service.abelian_gauge_fix(connection, self.metric, self.grid)

    def test_exponential_generator_residual_is_finite(self):
        gauge = ExponentialGauge.random(2, 2, self.rng, amplitude=0.02)
        connection = TrigConnection.random(2, 2, self.rng, amplitude=0.1)
        residual = gauge_service.ck_residual(gauge, connection, self.metric, self.grid)
        self.assertTrue(np.isfinite(residual))

    def test_pure_gauge_expm(self):
        """e^{-S} d e^{S} from the Theta series agrees with a direct derivative of expm"""
        S = _skew(2, self.rng, 0.3)
        direction = random_skew_hermitian(2, self.rng)
        expected = expm(-S) @ gauge_service.dexp_derivative(S, direction)
        np.testing.assert_allclose(expected, gauge_service.theta_op(S).apply(direction), atol=1e-12)
