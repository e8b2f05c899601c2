"""
Tests for Dirichlet solves and discrete DN maps
"""
import json
import os
import shutil
import tempfile

import numpy as np
import pandas as pd
from django.test import TestCase, override_settings

from dirac_dn.errors import RecoveryError, SolverError
from dirac_dn.services.clifford import clifford_service
from dirac_dn.services.dirac_fd import SlabGrid, dirac_fd_service
from dirac_dn.services.dn_numeric import dn_service
from dirac_dn.services.families import FlatMetric, TrigConnection, ZeroConnection


class FlatSlabDNTest(TestCase):
    def setUp(self):
        self.rep = clifford_service.build_gamma(2)
        self.grid = SlabGrid(n=2, tangential=16, normal=17)
        self.op = dirac_fd_service.build(FlatMetric(2), ZeroConnection(2, 1), self.rep, self.grid)
        self.solver = dn_service.factorize(self.op)

    def test_solution_matches_boundary_data(self):
        chi = dn_service.plane_wave(self.grid, [2.0], self.op.dof)
        field = dn_service.solve_dirichlet(self.solver, chi)
        np.testing.assert_allclose(field.boundary.reshape(-1), chi)
        np.testing.assert_allclose(field.values[self.grid.far_index], 0.0)
        self.assertGreater(self.solver.condition, 1.0)

    def test_plane_wave_is_eigenvector(self):
        """Tangential translation invariance makes plane waves DN eigenvectors"""
        chi = dn_service.plane_wave(self.grid, [3.0], self.op.dof, component=1)
        image = dn_service.dn_apply(self.solver, chi)
        eigenvalue = dn_service.mode_eigenvalue(self.solver, [3.0], component=1)
        np.testing.assert_allclose(image, eigenvalue * chi, atol=1e-10)
        self.assertLess(abs(eigenvalue.imag), 1e-10)
        self.assertLess(eigenvalue.real, 0.0)

    def test_oracle_converges(self):
        """The error against -k coth(kT) falls by about four when the normal spacing halves"""
        errors = []
        for normal in (17, 33):
            grid = SlabGrid(n=2, tangential=16, normal=normal)
            op = dirac_fd_service.build(FlatMetric(2), ZeroConnection(2, 1), self.rep, grid)
            solver = dn_service.factorize(op)
            computed = dn_service.mode_eigenvalue(solver, [2.0])
            discrete, half_space = dn_service.flat_mode_oracle(grid, [2.0])
            errors.append(abs(computed - discrete))
        self.assertLess(errors[0], 5e-2)
        self.assertGreater(errors[0] / errors[1], 3.0)

    def test_flat_mode_oracle(self):
        discrete, half_space = dn_service.flat_mode_oracle(self.grid, [1.0])
        effective = np.sin(self.grid.h_tangential[0]) / self.grid.h_tangential[0]
        self.assertAlmostEqual(discrete, -effective / np.tanh(effective))
        self.assertEqual(half_space, -1.0)
        self.assertAlmostEqual(dn_service.flat_mode_oracle(self.grid, [0.0])[0], -1.0)

    def test_dn_hat_consistency(self):
        chi = dn_service.plane_wave(self.grid, [1.0], self.op.dof)
        self.assertLess(dn_service.dn_hat_consistency(self.solver, chi), 1e-9)

    def test_dn_hat_consistency_with_connection(self):
        connection = TrigConnection.random(2, 2, np.random.default_rng(5), amplitude=0.2)
        op = dirac_fd_service.build(FlatMetric(2), connection, self.rep, self.grid)
        solver = dn_service.factorize(op)
        chi = np.random.default_rng(6).standard_normal(self.grid.boundary_size * op.dof) + 0j
        self.assertLess(dn_service.dn_hat_consistency(solver, chi), 1e-9)

    def test_dn_hat_of_zero(self):
        chi = np.zeros(self.grid.boundary_size * self.op.dof, dtype=complex)
        np.testing.assert_array_equal(dn_service.dn_hat_apply(self.solver, chi), 0.0)

    def test_dn_hat_flat_mode(self):
        """Lambda_hat (v e^{i kappa x}) = (lambda - i k gamma_n gamma_1) v e^{i kappa x} with the discrete k"""
        grid = SlabGrid(n=2, tangential=16, normal=33)
        op = dirac_fd_service.build(FlatMetric(2), ZeroConnection(2, 1), self.rep, grid)
        solver = dn_service.factorize(op)
        v = np.array([1.0, 1.0j]) / np.sqrt(2.0)
        phase = np.exp(2.0j * grid.boundary_points[:, 0])
        chi = (phase[:, None] * v[None, :]).reshape(-1)

        image = dn_service.dn_hat_apply(solver, chi).reshape(grid.boundary_size, 2)
        discrete, _ = dn_service.flat_mode_oracle(grid, [2.0])
        effective = grid.tangential_symbol([2.0])[0]
        block = discrete * np.eye(2) - 1j * effective * self.rep.normal @ self.rep.gammas[0]
        expected = phase[:, None] * (block @ v)[None, :]
        np.testing.assert_allclose(image, expected, atol=2e-2)

    def test_dn_matrix_threads_agree(self):
        single = dn_service.dn_matrix(self.solver, threads=1, batch=5)
        pooled = dn_service.dn_matrix(self.solver, threads=3, batch=7)
        size = self.grid.boundary_size * self.op.dof
        self.assertEqual(single.matrix.shape, (size, size))
        np.testing.assert_allclose(single.matrix, pooled.matrix, atol=1e-12)
        chi = np.random.default_rng(0).standard_normal(size)
        np.testing.assert_allclose(single.apply(chi), self.solver.apply(chi), atol=1e-10)
        self.assertTrue(single.normal_gauge)

    @override_settings(DN_EIGEN_GAP=1e6)
    def test_spectral_gap_guard(self):
        with self.assertRaises(SolverError) as raised:
            dn_service.factorize(self.op)
        self.assertIn('grid', raised.exception.context)


class DNExportTest(TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        rep = clifford_service.build_gamma(2)
        self.grid = SlabGrid(n=2, tangential=8, normal=9)
        connection = TrigConnection.random(2, 1, np.random.default_rng(1))
        op = dirac_fd_service.build(FlatMetric(2), connection, rep, self.grid)
        self.dnm = dn_service.dn_matrix(dn_service.factorize(op, m=0.5))

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_export_csv_and_sidecar(self):
        path = os.path.join(self.temp_dir, 'dn.csv')
        dn_service.export_dn_matrix(self.dnm, path)
        frame = pd.read_csv(path, float_precision='round_trip')
        self.assertEqual(list(frame.columns), ['row', 'col', 're', 'im'])
        self.assertEqual(len(frame), self.dnm.matrix.size)
        restored = np.zeros(self.dnm.matrix.shape, dtype=complex)
        restored[frame['row'], frame['col']] = frame['re'] + 1j * frame['im']
        np.testing.assert_array_equal(restored, self.dnm.matrix)
        with open(path + '.json') as handle:
            sidecar = json.load(handle)
        self.assertEqual(sidecar['grid'], '8x9')
        self.assertEqual(sidecar['m'], 0.5)


class SymbolEstimateTest(TestCase):
    def setUp(self):
        rep = clifford_service.build_gamma(2)
        self.grid = SlabGrid(n=2, tangential=32, normal=65)
        op = dirac_fd_service.build(FlatMetric(2), ZeroConnection(2, 1), rep, self.grid)
        self.solver = dn_service.factorize(op)

    def test_flat_principal_symbol(self):
        """b_1(e_1) = -Id and b_0 = 0 on the flat slab"""
        estimate = dn_service.estimate_symbol(self.solver, self.grid, [1.0], [4.0, 6.0, 8.0])
        np.testing.assert_allclose(estimate.b1, -np.eye(2), atol=5e-2)
        self.assertLess(np.max(np.abs(estimate.b0)), 0.1)
        self.assertEqual(len(estimate.effective), 3)

    def test_fit_needs_three_frequencies(self):
        with self.assertRaises(RecoveryError):
            dn_service.estimate_symbol(self.solver, self.grid, [1.0], [4.0, 8.0])
