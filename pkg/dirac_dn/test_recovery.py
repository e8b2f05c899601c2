"""
Tests for boundary determination from symbols
"""
import numpy as np
from django.test import TestCase, override_settings

from dirac_dn.errors import RecoveryError
from dirac_dn.services.clifford import clifford_service
from dirac_dn.services.dirac_fd import SlabGrid, dirac_fd_service
from dirac_dn.services.dn_numeric import dn_service
from dirac_dn.services.families import (
    FlatMetric, PolynomialConnection, PolynomialMetric, PolynomialPotential, ZeroConnection,
)
from dirac_dn.services.recovery import recovery_service
from dirac_dn.services.symbol_engine import symbol_service


def _forward(n, N, rng, order=4, depth=3, mass=0.0):
    rep = clifford_service.build_gamma(n)
    metric = PolynomialMetric.random(n, order, rng)
    connection = PolynomialConnection.random(n, N, order, rng)
    potential = PolynomialPotential.random(n, rep.k * N, order, rng)
    inputs = symbol_service.inputs_from_fields(metric, connection, rep, np.zeros(n), order,
                                               potential=potential, m=mass)
    return rep, inputs, symbol_service.solve_recursion(inputs, depth)


class ExactRecoveryTest(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(31)

    def test_roundtrip(self):
        """Recovered boundary jets match the ones the forward run started from"""
        for n, N, mass in [(2, 1, 0.0), (2, 2, 0.4), (3, 1, 0.2), (3, 2, 0.1)]:
            rep, inputs, b = _forward(n, N, self.rng, mass=mass)
            recovered = recovery_service.recover_all(b, 3, rep, N, m_mass=mass)
            errors = recovery_service.relative_errors(recovered, recovery_service.truth(inputs))
            self.assertEqual(set(errors), {'g', 'dn_g', 'dn2_g', 'A', 'dn_A', 'Z'})
            for name, error in errors.items():
                self.assertLess(error, 1e-9, msg=f'n={n} N={N} {name}')
            self.assertLess(recovered.residuals['z_spread'], 1e-9)

    def test_potential_under_curved_normal_metric(self):
        """Z comes back exactly when d_n^2 g does not vanish"""
        for n, N in [(2, 1), (2, 2), (3, 1), (3, 2)]:
            rep, inputs, b = _forward(n, N, self.rng)
            truth = recovery_service.truth(inputs)
            self.assertGreater(np.max(np.abs(truth.values()['dn2_g'])), 1e-3)
            recovered = recovery_service.recover_all(b, 3, rep, N)
            errors = recovery_service.relative_errors(recovered, truth)
            self.assertLess(errors['Z'], 1e-9, msg=f'n={n} N={N}')
            self.assertLess(errors['dn2_g'], 1e-9, msg=f'n={n} N={N}')

    def test_inconsistent_lower_data(self):
        """A wrong d_n g leaves a remainder that no potential explains"""
        rep, inputs, b = _forward(3, 1, self.rng)
        lower = recovery_service.recover_all(b, 2, rep, 1)
        lower.dn_g = lower.dn_g + np.diag([0.3, -0.2])
        sample = recovery_service.exact_sampler(b)
        with self.assertRaises(RecoveryError):
            recovery_service.recover_order2(sample, rep, 1, lower, b[1].order)

    @override_settings(DN_RECOVERY_TOL=-1.0)
    def test_potential_consistency_tolerance(self):
        rep, inputs, b = _forward(2, 1, self.rng)
        with self.assertRaises(RecoveryError):
            recovery_service.recover_all(b, 3, rep, 1)

    def test_depth_two_stops_before_potential(self):
        rep, inputs, b = _forward(2, 2, self.rng, order=3, depth=2)
        recovered = recovery_service.recover_all(b, 2, rep, 2)
        self.assertIsNone(recovered.Z)
        self.assertIsNone(recovered.dn2_g)
        self.assertEqual(len(recovered.A), 1)
        self.assertLess(recovered.residuals['antihermitian_A'], 1e-10)
        errors = recovery_service.relative_errors(recovered, recovery_service.truth(inputs))
        self.assertLess(errors['dn_g'], 1e-9)

    def test_depth_limits(self):
        rep, inputs, b = _forward(2, 1, self.rng, order=2, depth=1)
        for depth in (0, 4):
            with self.assertRaises(RecoveryError):
                recovery_service.recover_all(b, depth, rep, 1)
        with self.assertRaises(RecoveryError):
            recovery_service.recover_all(b, 3, rep, 1)

    def test_to_frame(self):
        rep, inputs, b = _forward(2, 1, self.rng)
        frame = recovery_service.recover_all(b, 3, rep, 1).to_frame()
        self.assertEqual(list(frame.columns), ['object', 'component', 'row', 'col', 're', 'im', 'provenance'])
        # g, d_n g, d_n^2 g, A, d_n A are 1x1 and Z is 2x2
        self.assertEqual(len(frame), 9)
        self.assertTrue((frame['provenance'] == 'exact-forward').all())
        self.assertEqual(set(frame.loc[frame['object'] == 'A', 'component']), {0})

    def test_sampling_covectors(self):
        covectors = recovery_service.sampling_covectors(2)
        self.assertEqual(len(covectors), 5)
        np.testing.assert_array_equal(covectors[-1], [1.0, 1.0])


class NumericRecoveryTest(TestCase):
    def test_numeric_depth_limit(self):
        rep = clifford_service.build_gamma(2)
        with self.assertRaises(RecoveryError):
            recovery_service.recover_all({}, 3, rep, 1)

    def test_missing_covector(self):
        sample = recovery_service.numeric_sampler({})
        with self.assertRaises(RecoveryError):
            sample(1, (1.0,))

    def test_flat_metric_from_dn_matrix(self):
        rep = clifford_service.build_gamma(2)
        grid = SlabGrid(n=2, tangential=32, normal=65)
        op = dirac_fd_service.build(FlatMetric(2), ZeroConnection(2, 1), rep, grid)
        solver = dn_service.factorize(op)
        estimates = recovery_service.estimate_samples(solver, grid, [4.0, 6.0, 8.0])
        self.assertEqual(set(estimates), {(1.0,), (-1.0,)})
        recovered = recovery_service.recover_all(estimates, 1, rep, 1)
        self.assertEqual(recovered.provenance, 'numeric-estimate')
        np.testing.assert_allclose(np.real(recovered.g), [[1.0]], atol=0.15)
