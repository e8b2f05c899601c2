"""
Tests for truncated Taylor jets
"""
import numpy as np
from django.test import TestCase

from dirac_dn.errors import DimensionError, JetOrderError
from dirac_dn.services import jets as jetlib
from dirac_dn.services.jets import Jet, monomial_table


class MonomialTableTest(TestCase):
    def test_graded_ordering(self):
        """Monomials are sorted by total degree"""
        table = monomial_table(2, 3)
        self.assertEqual(table.size, 10)
        self.assertEqual(list(table.degrees), [0, 1, 1, 2, 2, 2, 3, 3, 3, 3])
        self.assertEqual(tuple(table.exponents[1]), (1, 0))
        self.assertEqual(tuple(table.exponents[2]), (0, 1))

    def test_invalid_tables(self):
        with self.assertRaises(DimensionError):
            monomial_table(0, 2)
        with self.assertRaises(JetOrderError):
            monomial_table(2, -1)


class JetArithmeticTest(TestCase):
    def setUp(self):
        self.x = Jet.variable(0, 2, 4)
        self.y = Jet.variable(1, 2, 4)

    def test_product_partials(self):
        """d_x d_y (x y) = 1 and d_x^2 (x^2) = 2"""
        self.assertAlmostEqual(float((self.x * self.y).partial((1, 1))), 1.0)
        self.assertAlmostEqual(float((self.x * self.x).partial((2, 0))), 2.0)
        self.assertAlmostEqual(float((self.x * self.y).partial((2, 0))), 0.0)

    def test_evaluate_polynomial(self):
        p = self.x * self.x + self.y * 3.0 - 1.0
        self.assertAlmostEqual(float(p.evaluate([0.5, 0.2])), 0.25 + 0.6 - 1.0)

    def test_exp_derivatives(self):
        """Every x-derivative of exp(x) at 0 is 1"""
        e = jetlib.exp(self.x)
        for k in range(5):
            self.assertAlmostEqual(float(e.partial((k, 0))), 1.0)
        self.assertAlmostEqual(float(e.partial((0, 1))), 0.0)

    def test_trigonometric_identity(self):
        u = self.x * 0.7 + self.y * self.y + 0.3
        one = jetlib.sin(u) * jetlib.sin(u) + jetlib.cos(u) * jetlib.cos(u)
        expected = np.zeros(one.table.size)
        expected[0] = 1.0
        np.testing.assert_allclose(one.coeffs, expected, atol=1e-13)

    def test_reciprocal(self):
        u = self.x + 2.0
        product = u * jetlib.reciprocal(u)
        self.assertAlmostEqual(float(product.value()), 1.0)
        np.testing.assert_allclose(product.coeffs[1:], 0.0, atol=1e-14)

    def test_diff_integrate_inverse(self):
        p = self.x * self.y + self.y * self.y * 2.0
        back = p.integrate(1).diff(1)
        np.testing.assert_allclose(back.coeffs, p.coeffs, atol=1e-15)

    def test_boundary_trace(self):
        """Restriction to y = 0 drops every monomial containing y"""
        p = self.x * self.x + self.y + self.x * self.y
        trace = p.boundary_trace()
        self.assertAlmostEqual(float(trace.evaluate([0.3, 0.9])), 0.09)

    def test_truncate_errors(self):
        with self.assertRaises(JetOrderError):
            self.x.truncate(5)
        with self.assertRaises(JetOrderError):
            self.x.partial((3, 2))
        with self.assertRaises(JetOrderError):
            Jet.constant(1.0, 2, 0).diff(0)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            Jet(np.zeros(4), 2, 2)
        with self.assertRaises(DimensionError):
            self.x + Jet.variable(0, 3, 2)


class MatrixJetTest(TestCase):
    def setUp(self):
        x = Jet.variable(0, 2, 3)
        y = Jet.variable(1, 2, 3)
        self.matrix = Jet.stack([[x + 2.0, y * 0.5], [y * 0.5, x * y + 3.0]])

    def test_stack_shape(self):
        self.assertEqual(self.matrix.shape, (2, 2))
        np.testing.assert_allclose(self.matrix.value(), [[2.0, 0.0], [0.0, 3.0]])

    def test_matrix_inverse(self):
        product = self.matrix @ jetlib.matrix_inverse(self.matrix)
        np.testing.assert_allclose(product.value(), np.eye(2), atol=1e-14)
        np.testing.assert_allclose(product.coeffs[1:], 0.0, atol=1e-13)

    def test_cholesky(self):
        lower = jetlib.cholesky(self.matrix)
        np.testing.assert_allclose((lower @ lower.T).coeffs, self.matrix.coeffs, atol=1e-13)
        self.assertAlmostEqual(float(lower.value()[0, 1]), 0.0)

    def test_nilpotent_expm(self):
        """exp of a jet without constant term matches the series of e^(xK)"""
        generator = np.array([[0.0, 1.0], [-1.0, 0.0]])
        x = Jet.variable(0, 2, 3)
        rotation = jetlib.nilpotent_expm(x[..., None, None] * generator)
        np.testing.assert_allclose(rotation.partial((1, 0)), generator, atol=1e-15)
        np.testing.assert_allclose(rotation.partial((2, 0)), -np.eye(2), atol=1e-15)
        with self.assertRaises(JetOrderError):
            jetlib.nilpotent_expm(self.matrix)
