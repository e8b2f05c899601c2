"""
Tests for the forward symbol recursion
"""
import numpy as np
from django.test import TestCase

from dirac_dn.errors import DimensionError, JetOrderError
from dirac_dn.services.clifford import clifford_service
from dirac_dn.services.families import (
    ConformalMetric, ExponentialGauge, FlatMetric, PolynomialConnection, PolynomialMetric,
    PolynomialPotential, TrigPolynomial, ZeroConnection,
)
from dirac_dn.services.gauge import GaugedConnection
from dirac_dn.services.jets import Jet
from dirac_dn.services.symbol_engine import symbol_service


class FlatSymbolTest(TestCase):
    def setUp(self):
        self.rep = clifford_service.build_gamma(2)
        self.origin = np.zeros(2)

    def test_flat_lower_order_terms_vanish(self):
        inputs = symbol_service.inputs_from_fields(FlatMetric(2), ZeroConnection(2, 1), self.rep, self.origin, 4)
        b = symbol_service.solve_recursion(inputs, 3)
        self.assertEqual(b.degrees, [1, 0, -1, -2])
        for degree in (0, -1, -2):
            self.assertLess(b[degree].max_coefficient(), 1e-14)
        np.testing.assert_allclose(b[1].evaluate([2.5]), -2.5 * np.eye(2))

    def test_mass_enters_at_degree_minus_one(self):
        """-sqrt(|xi|^2 - m^2) = -|xi| + m^2 / (2|xi|) + O(|xi|^-3)"""
        inputs = symbol_service.inputs_from_fields(FlatMetric(2), ZeroConnection(2, 1), self.rep, self.origin, 4,
                                                   m=0.5)
        b = symbol_service.solve_recursion(inputs, 3)
        np.testing.assert_allclose(b[-1].evaluate([2.0]), 0.0625 * np.eye(2), atol=1e-14)
        self.assertLess(b[0].max_coefficient(), 1e-14)
        self.assertLess(b[-2].max_coefficient(), 1e-14)

    def test_recursion_depth_limits(self):
        inputs = symbol_service.inputs_from_fields(FlatMetric(2), ZeroConnection(2, 1), self.rep, self.origin, 2)
        with self.assertRaises(JetOrderError):
            symbol_service.solve_recursion(inputs, 0)
        with self.assertRaises(JetOrderError):
            symbol_service.solve_recursion(inputs, 3)
        self.assertEqual(symbol_service.solve_recursion(inputs, 1).degrees, [1, 0])

    def test_dump_columns(self):
        inputs = symbol_service.inputs_from_fields(FlatMetric(2), ZeroConnection(2, 1), self.rep, self.origin, 3)
        frame = symbol_service.dump(symbol_service.solve_recursion(inputs, 2))
        self.assertEqual(list(frame.columns),
                         ['degree', 'xi_power', 'norm_power', 'x_monomial', 'row', 'col', 're', 'im'])
        self.assertEqual(len(frame), 2)
        self.assertTrue((frame['degree'] == 1).all())
        self.assertTrue((frame['re'] == -1.0).all())

    def test_non_normal_metric_rejected(self):
        g = Jet.constant(np.array([[1.0, 0.2], [0.2, 1.0]]), 2, 2)
        A = [Jet.constant(np.zeros((1, 1), dtype=complex), 2, 2) for _ in range(2)]
        with self.assertRaises(DimensionError):
            symbol_service.inputs_from_jets(g, A, self.rep)
        with self.assertRaises(DimensionError):
            symbol_service.inputs_from_jets(Jet.constant(np.eye(2), 2, 2), A[:1], self.rep)


class CurvedSymbolTest(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(17)

    def test_principal_symbol_uses_boundary_metric(self):
        rep = clifford_service.build_gamma(2)
        metric = ConformalMetric(2, TrigPolynomial.random(2, self.rng, amplitude=0.3))
        point = np.array([0.7, 0.0])
        inputs = symbol_service.inputs_from_fields(metric, ZeroConnection(2, 1), rep, point, 3)
        b = symbol_service.solve_recursion(inputs, 2)
        xi = np.array([1.3])
        ginv = inputs.ginv.value()
        expected = -np.sqrt(xi @ ginv @ xi) * np.eye(2)
        np.testing.assert_allclose(b[1].evaluate(xi), expected, atol=1e-13)
        np.testing.assert_allclose(b.evaluate(xi, degrees=[1]), expected, atol=1e-13)

    def test_residual_vanishes(self):
        """Every degree fixed by the recursion satisfies the symbol equation"""
        for n, N in [(2, 2), (3, 1)]:
            rep = clifford_service.build_gamma(n)
            metric = PolynomialMetric.random(n, 4, self.rng)
            connection = PolynomialConnection.random(n, N, 4, self.rng)
            potential = PolynomialPotential.random(n, rep.k * N, 4, self.rng)
            inputs = symbol_service.inputs_from_fields(metric, connection, rep, np.zeros(n), 4,
                                                       potential=potential, m=0.3)
            b = symbol_service.solve_recursion(inputs, 3)
            residual = symbol_service.symbol_residual(inputs, b)
            self.assertEqual(sorted(residual), [-1, 0, 1, 2])
            worst = symbol_service.residual_at(residual, self.rng, count=10)
            for degree, value in worst.items():
                self.assertLess(value, 1e-10, msg=f'n={n} degree={degree}')

    def test_boundary_identity_gauge_leaves_symbol_unchanged(self):
        """A gauge equal to the identity on the boundary does not move the DN map"""
        rep = clifford_service.build_gamma(2)
        metric = PolynomialMetric.random(2, 4, self.rng)
        connection = PolynomialConnection.random(2, 2, 4, self.rng)
        gauged = GaugedConnection(connection, ExponentialGauge.random(2, 2, self.rng))
        point = np.zeros(2)
        original = symbol_service.solve_recursion(
            symbol_service.inputs_from_fields(metric, connection, rep, point, 3), 2)
        transformed = symbol_service.solve_recursion(
            symbol_service.inputs_from_fields(metric, gauged, rep, point, 3), 2)
        for xi in ([1.0], [-2.0]):
            for degree in (1, 0, -1):
                np.testing.assert_allclose(transformed[degree].evaluate(xi), original[degree].evaluate(xi),
                                           atol=1e-10)

    def test_compose_with_identity(self):
        rep = clifford_service.build_gamma(2)
        metric = PolynomialMetric.random(2, 3, self.rng)
        inputs = symbol_service.inputs_from_fields(metric, ZeroConnection(2, 1), rep, np.zeros(2), 3)
        b = symbol_service.solve_recursion(inputs, 2)
        composed = symbol_service.symbol_compose(b, symbol_service.identity_symbol(inputs), 1)
        self.assertEqual(composed.degrees, [1, 0])
        np.testing.assert_allclose(composed.evaluate([1.5]), b.evaluate([1.5], degrees=[1, 0]), atol=1e-13)
