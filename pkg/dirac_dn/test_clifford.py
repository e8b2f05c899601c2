import numpy as np
from django.test import TestCase

from dirac_dn.errors import DimensionError
from dirac_dn.services.clifford import GammaRep, clifford_service


class CliffordServiceTest(TestCase):
    def test_spinor_rank(self):
        """k = 2^floor(n/2)"""
        for n, k in [(1, 1), (2, 2), (3, 2), (4, 4), (5, 4), (6, 8), (8, 16)]:
            self.assertEqual(clifford_service.build_gamma(n).k, k)

    def test_relations_hold(self):
        for n in range(1, 9):
            rep = clifford_service.build_gamma(n)
            self.assertLessEqual(clifford_service.check_relations(rep), 1e-12, msg=f'n={n}')

    def test_n2_pauli(self):
        rep = clifford_service.build_gamma(2)
        np.testing.assert_array_equal(rep.gammas[0], 1j * np.array([[0, 1], [1, 0]]))
        np.testing.assert_array_equal(rep.gammas[0] @ rep.gammas[0], -np.eye(2))

    def test_deterministic(self):
        first = clifford_service.build_gamma(5).gammas
        second = clifford_service.build_gamma(5).gammas
        self.assertTrue(np.array_equal(first, second))

    def test_out_of_range(self):
        with self.assertRaises(DimensionError):
            clifford_service.build_gamma(0)
        with self.assertRaises(DimensionError):
            clifford_service.build_gamma(9)

    def test_clifford_mul(self):
        rep = clifford_service.build_gamma(2)
        np.testing.assert_array_equal(clifford_service.clifford_mul(rep, [1.0, 0.0]), rep.gammas[0])
        self.assertFalse(np.any(clifford_service.clifford_mul(rep, [0.0, 0.0])))
        unit = clifford_service.clifford_mul(rep, np.array([1.0, 1.0]) / np.sqrt(2.0))
        np.testing.assert_allclose(unit @ unit, -np.eye(2), atol=1e-15)
        with self.assertRaises(DimensionError):
            clifford_service.clifford_mul(rep, [1.0, 0.0, 0.0])

    def test_scaled_gamma_detected(self):
        rep = clifford_service.build_gamma(3)
        gammas = rep.gammas.copy()
        gammas[0] = 2.0 * gammas[0]
        broken = GammaRep(n=3, k=rep.k, gammas=gammas)
        self.assertGreaterEqual(clifford_service.check_relations(broken), 3.0)

    def test_gamma_frame(self):
        frame = clifford_service.gamma_frame(clifford_service.build_gamma(3))
        self.assertEqual(len(frame), 3 * 2 * 2)
        self.assertEqual(list(frame.columns), ['gamma', 'row', 'col', 're', 'im'])
