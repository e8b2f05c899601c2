"""
Tests for Christoffel symbols, curvature and the parallel frame.

Symbolic values come from sympy on the same closed-form metrics.
"""
import numpy as np
import sympy
from django.test import TestCase

from dirac_dn.errors import JetOrderError
from dirac_dn.services.dirac_fd import SlabGrid
from dirac_dn.services.families import (
    ConformalMetric, DiagonalMetric, FlatMetric, SphereMetric, TrigPolynomial, TrigTerm,
)
from dirac_dn.services.geometry import christoffel_jet, geometry_service
from dirac_dn.services.jets import Jet


def _symbolic_geometry(g, coords):
    """(Gamma^i_jk, scalar curvature) of a sympy metric matrix."""
    n = len(coords)
    ginv = g.inv()
    gamma = [[[sum(
        ginv[i, l] * (sympy.diff(g[l, j], coords[k]) + sympy.diff(g[l, k], coords[j])
                      - sympy.diff(g[j, k], coords[l])) for l in range(n)) / 2
        for k in range(n)] for j in range(n)] for i in range(n)]
    scalar = 0
    for j in range(n):
        for l in range(n):
            ricci = sum(sympy.diff(gamma[i][l][j], coords[i]) - sympy.diff(gamma[i][i][j], coords[l])
                        for i in range(n))
            ricci += sum(gamma[i][i][m] * gamma[m][l][j] - gamma[i][l][m] * gamma[m][i][j]
                         for i in range(n) for m in range(n))
            scalar += ginv[j, l] * ricci
    return gamma, scalar


def _evaluate(expression, coords, point):
    return float(expression.subs(dict(zip(coords, point))).evalf())


class ChristoffelTest(TestCase):
    def setUp(self):
        self.x, self.y = sympy.symbols('x y', real=True)
        self.coords = (self.x, self.y)
        self.point = np.array([0.4, 0.3])

    def test_flat_vanishes(self):
        gamma = geometry_service.christoffel(FlatMetric(3), np.zeros((2, 3)))
        self.assertFalse(np.any(gamma))
        self.assertFalse(np.any(geometry_service.scalar_curvature(FlatMetric(3), np.zeros((2, 3)))))

    def test_conformal_against_sympy(self):
        f = TrigPolynomial(nvars=2, terms=(TrigTerm(amplitude=0.3, wavevector=(1.0, 0.5), phase=0.2),))
        metric = ConformalMetric(2, f)
        symbolic_f = 0.3 * sympy.cos(self.x + 0.5 * self.y + 0.2)
        g = sympy.Matrix([[sympy.exp(2 * symbolic_f), 0], [0, 1]])
        gamma, scalar = _symbolic_geometry(g, self.coords)

        numeric = geometry_service.christoffel(metric, self.point[None])[0]
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    expected = _evaluate(gamma[i][j][k], self.coords, self.point)
                    self.assertAlmostEqual(numeric[i, j, k], expected, places=12)
        curvature = geometry_service.scalar_curvature(metric, self.point[None])[0]
        self.assertAlmostEqual(curvature, _evaluate(scalar, self.coords, self.point), places=10)

    def test_sphere_curvature(self):
        """The round sphere of radius r has scalar curvature 2 / r^2"""
        metric = SphereMetric(radius=2.0, rho0=1.5)
        points = np.array([[0.0, 0.0], [1.0, 0.4]])
        np.testing.assert_allclose(geometry_service.scalar_curvature(metric, points), 0.5, rtol=1e-12)

    def test_diagonal_three_dimensional(self):
        x, y, z = sympy.symbols('x y z', real=True)
        p1 = TrigPolynomial(nvars=3, terms=(TrigTerm(0.5, (1.0, 0.0, 0.7), 0.1),))
        p2 = TrigPolynomial(nvars=3, terms=(TrigTerm(-0.4, (0.0, 2.0, 0.3), 0.0),))
        metric = DiagonalMetric(3, 0.3, [p1, p2])
        g = sympy.diag(1 + 0.3 * 0.5 * sympy.cos(x + 0.7 * z + 0.1),
                       1 - 0.3 * 0.4 * sympy.cos(2 * y + 0.3 * z), 1)
        gamma, scalar = _symbolic_geometry(g, (x, y, z))
        point = np.array([0.2, -0.5, 0.6])
        numeric = geometry_service.christoffel(metric, point[None])[0]
        for i, j, k in [(0, 0, 2), (2, 1, 1), (1, 1, 1), (0, 0, 0)]:
            self.assertAlmostEqual(numeric[i, j, k], _evaluate(gamma[i][j][k], (x, y, z), point), places=12)
        curvature = geometry_service.scalar_curvature(metric, point[None])[0]
        self.assertAlmostEqual(curvature, _evaluate(scalar, (x, y, z), point), places=10)

    def test_order_too_low(self):
        with self.assertRaises(JetOrderError):
            christoffel_jet(Jet.constant(np.eye(2), 2, 0))

    def test_volume_element(self):
        """sqrt(det g) = e^{2f} for a conformal tangential block in three dimensions"""
        f = TrigPolynomial(nvars=3, terms=(TrigTerm(0.3, (1.0, 0.0, 0.5), 0.2),))
        points = np.array([[0.0, 0.0, 0.0], [0.4, -1.0, 0.3]])
        expected = np.exp(2.0 * 0.3 * np.cos(points[:, 0] + 0.5 * points[:, 2] + 0.2))
        np.testing.assert_allclose(geometry_service.volume_element(ConformalMetric(3, f), points), expected)
        np.testing.assert_allclose(geometry_service.volume_element(FlatMetric(3), points), 1.0)

    def test_e_term(self):
        """E = -1/2 g^{ab} d_n g_ab; for the sphere this is -cot(rho0 / r) / r"""
        metric = SphereMetric(radius=1.0, rho0=0.8)
        value = geometry_service.e_term(metric, np.array([[0.3, 0.0]]))[0]
        self.assertAlmostEqual(value, -1.0 / np.tan(0.8))


class ParallelFrameTest(TestCase):
    def setUp(self):
        rng = np.random.default_rng(4)
        self.metric = ConformalMetric(2, TrigPolynomial.random(2, rng, amplitude=0.2))
        self.grid = SlabGrid(n=2, tangential=16, normal=17)

    def test_frame_orthonormal(self):
        frame = geometry_service.parallel_frame(self.metric, self.grid)
        g = self.metric.values(self.grid.points)
        self.assertLess(frame.orthonormality_residual(g), 1e-6)
        self.assertLess(frame.antisymmetry_residual(), 1e-5)

    def test_normal_vector_is_parallel(self):
        """In boundary-normal charts e_n = d_n everywhere"""
        frame = geometry_service.parallel_frame(self.metric, self.grid)
        np.testing.assert_allclose(frame.E[:, :, -1], np.broadcast_to([0.0, 1.0], (self.grid.size, 2)), atol=1e-10)

    def test_frame_jets_match_grid(self):
        """Frame jets at a boundary point reproduce the transported frame a little way in"""
        point = self.grid.boundary_points[3]
        jets = geometry_service.frame_jets(self.metric, point, 4)
        frame = geometry_service.parallel_frame(self.metric, self.grid)
        index = 1 * self.grid.boundary_size + 3
        displacement = np.zeros(2)
        displacement[-1] = self.grid.z[1]
        np.testing.assert_allclose(jets.E.evaluate(displacement), frame.E[index], atol=1e-5)
        self.assertLess(max(float(np.max(np.abs(w.value() + w.value().T))) for w in jets.omega), 1e-10)
