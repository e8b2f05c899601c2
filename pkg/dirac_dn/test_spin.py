import numpy as np
from django.test import TestCase

from dirac_dn.errors import DimensionError
from dirac_dn.services.clifford import clifford_service
from dirac_dn.services.families import random_skew_hermitian
from dirac_dn.services.jets import Jet
from dirac_dn.services.spin import spin_service


def _random_so(n, rng, batch=()):
    M = rng.standard_normal(batch + (n, n))
    return (M - np.swapaxes(M, -1, -2)) / 2.0


class SpinServiceTest(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(21)

    def test_spin_connection_is_skew(self):
        rep = clifford_service.build_gamma(3)
        omega = [_random_so(3, self.rng, (4,)) for _ in range(3)]
        for component in spin_service.spin_connection_coeffs(omega, rep):
            self.assertEqual(component.shape, (4, 2, 2))
            np.testing.assert_allclose(component, -np.conj(np.swapaxes(component, -1, -2)), atol=1e-15)

    def test_spin_connection_commutator(self):
        """[omega^s, gamma_k] = gamma(omega e_k): the spin lift intertwines so(n) with Clifford multiplication"""
        rep = clifford_service.build_gamma(4)
        omega = _random_so(4, self.rng)
        spin = spin_service.spin_connection_coeffs([omega], rep)[0]
        for k in range(4):
            commutator = spin @ rep.gammas[k] - rep.gammas[k] @ spin
            rotated = np.einsum('i,iab->ab', omega[:, k], rep.gammas)
            np.testing.assert_allclose(commutator, rotated, atol=1e-13)

    def test_twisted_split_roundtrip(self):
        for n, N in [(2, 1), (3, 2), (4, 2)]:
            rep = clifford_service.build_gamma(n)
            omega = _random_so(n, self.rng, (3,))
            A = np.stack([random_skew_hermitian(N, self.rng) for _ in range(3)])
            spin = spin_service.spin_connection_coeffs([omega], rep)
            theta = spin_service.build_twisted_connection(spin, [A], rep, N)
            self.assertLess(theta.skew_residual(), 1e-14)
            gauge, recovered = spin_service.split_theta(theta.theta[0], rep, N)
            np.testing.assert_allclose(gauge, A, atol=1e-13)
            np.testing.assert_allclose(recovered, omega, atol=1e-13)

    def test_jet_inputs(self):
        """Jets pass through the same linear maps coefficient by coefficient"""
        rep = clifford_service.build_gamma(2)
        x = Jet.variable(0, 2, 2)
        generator = np.array([[0.0, 1.0], [-1.0, 0.0]])
        omega = x[..., None, None] * generator
        spin = spin_service.spin_connection_coeffs([omega], rep)[0]
        self.assertIsInstance(spin, Jet)
        direct = spin_service.spin_connection_coeffs([generator], rep)[0]
        np.testing.assert_allclose(spin.partial((1, 0)), direct, atol=1e-15)

    def test_rank_mismatch(self):
        rep = clifford_service.build_gamma(2)
        spin = [np.zeros((2, 2), dtype=complex)]
        with self.assertRaises(DimensionError):
            spin_service.build_twisted_connection(spin, [np.zeros((3, 3))], rep, 2)
        with self.assertRaises(DimensionError):
            spin_service.build_twisted_connection(spin, [], rep, 2)
