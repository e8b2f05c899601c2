"""
Dirichlet problem for D_A^2 + Z - m^2 on the slab and the resulting
Dirichlet-to-Neumann maps.

Dirichlet data sits on the x^n = 0 face, the far face x^n = T is clamped to
zero.  The DN map uses the inward normal d_n with the one-sided second-order
stencil plus theta_n.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp
from django.conf import settings
from scipy.sparse import linalg as spla

from ..errors import RecoveryError, SolverError
from .dirac_fd import DiracOperator, SpinorField, block_diagonal, lift

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class DirichletSolver:
    """Factorised interior block of D_A^2 + Z - m^2 with boundary coupling."""

    op: DiracOperator
    m: float
    interior: np.ndarray
    boundary: np.ndarray
    coupling: sp.csr_matrix
    block: sp.csc_matrix
    factor: Optional[object] = None
    preconditioner: Optional[object] = None
    rtol: float = 1e-10
    maxiter: int = 10000
    condition: float = float('nan')

    @property
    def dof(self):
        return self.op.dof

    def _solve_block(self, rhs):
        if self.factor is not None:
            return self.factor.solve(rhs)
        rhs = np.asarray(rhs)
        if rhs.ndim == 2:
            return np.stack([self._solve_block(column) for column in rhs.T], axis=1)
        solution, info = spla.gmres(self.block, rhs, rtol=self.rtol, atol=0.0, restart=200,
                                    maxiter=self.maxiter, M=self.preconditioner)
        if info != 0:
            raise SolverError("GMRES did not converge", info=info, maxiter=self.maxiter,
                              grid=self.op.grid.label())
        residual = np.linalg.norm(self.block @ solution - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if residual > 10 * self.rtol:
            raise SolverError("Dirichlet solve missed its residual target", residual=residual,
                              rtol=self.rtol)
        return solution

    def solve(self, chi):
        """Full solution vector(s) for boundary data chi, shape (P' * dof,) or (P' * dof, r)."""
        chi = np.asarray(chi, dtype=complex)
        interior = self._solve_block(-(self.coupling @ chi))
        shape = (self.op.size,) + chi.shape[1:]
        phi = np.zeros(shape, dtype=complex)
        phi[self.boundary] = chi
        phi[self.interior] = interior
        return phi

    def normal_derivative(self, phi, chi):
        """nabla_n phi on the boundary face."""
        grid = self.op.grid
        normal = lift(grid.derivative(grid.n - 1), self.dof)[self.boundary]
        theta_n = block_diagonal(self.op.theta.normal[:grid.boundary_size])
        return normal @ phi + theta_n @ chi

    def apply(self, chi):
        return self.normal_derivative(self.solve(chi), chi)

    def apply_hat(self, chi):
        """-gamma(nu) (D_A phi) on the boundary face."""
        phi = self.solve(chi)
        gamma_n = np.kron(self.op.rep.normal, np.eye(self.op.N))
        Dphi = (self.op.D @ phi)[self.boundary]
        blocks = Dphi.reshape((self.op.grid.boundary_size, self.dof) + Dphi.shape[1:])
        return -np.einsum('st,pt...->ps...', gamma_n, blocks).reshape(Dphi.shape)


@dataclass(eq=False)
class DNMatrix:
    matrix: np.ndarray
    dof: int
    grid_label: str
    m: float
    normal_gauge: bool
    rtol: float
    metadata: dict = field(default_factory=dict)

    def apply(self, chi):
        return self.matrix @ chi

    def to_frame(self):
        rows, cols = np.indices(self.matrix.shape)
        return pd.DataFrame({
            'row': rows.reshape(-1),
            'col': cols.reshape(-1),
            're': self.matrix.real.reshape(-1),
            'im': self.matrix.imag.reshape(-1),
        })


@dataclass(frozen=True)
class SymbolEstimate:
    b1: np.ndarray
    b0: np.ndarray
    remainder: np.ndarray
    effective: tuple
    residual: float


class DNService:
    """Dirichlet solves and DN maps"""

    def factorize(self, op: DiracOperator, m=0.0, potential=None) -> DirichletSolver:
        grid = op.grid
        dof = op.dof
        L = op.laplacian(potential, m)
        interior = grid.expand(grid.interior_points, dof)
        boundary = grid.expand(grid.boundary_index, dof)
        block = L[interior][:, interior].tocsc()
        coupling = L[interior][:, boundary].tocsr()
        rtol = getattr(settings, 'DN_SOLVER_RTOL', 1e-10)
        maxiter = getattr(settings, 'DN_SOLVER_MAXITER', 10000)
        solver = DirichletSolver(op=op, m=m, interior=interior, boundary=boundary, coupling=coupling,
                                 block=block, rtol=rtol, maxiter=maxiter)
        if grid.n == 2:
            try:
                solver.factor = spla.splu(block)
            except RuntimeError as error:
                raise SolverError("interior block is singular", grid=grid.label(), m=m) from error
            inverse = spla.LinearOperator(
                block.shape, dtype=complex,
                matvec=solver.factor.solve,
                rmatvec=lambda x: solver.factor.solve(x, trans='H'),
            )
            inverse_norm = spla.onenormest(inverse)
            solver.condition = float(spla.norm(block, 1) * inverse_norm)
            gap = 1.0 / inverse_norm
            if gap < getattr(settings, 'DN_EIGEN_GAP', 1e-6):
                raise SolverError("m^2 sits on a Dirichlet eigenvalue", gap=gap, m=m, grid=grid.label())
            if solver.condition > getattr(settings, 'DN_CONDITION_LIMIT', 1e12):
                raise SolverError("interior block is ill-conditioned", condition=solver.condition,
                                  grid=grid.label())
        else:
            ilu = spla.spilu(block, drop_tol=1e-5, fill_factor=20)
            solver.preconditioner = spla.LinearOperator(block.shape, matvec=ilu.solve, dtype=complex)
        logger.info("Prepared Dirichlet solver on %s grid (%d interior unknowns, condition %.3e)",
                    grid.label(), len(interior), solver.condition)
        return solver

    def solve_dirichlet(self, solver: DirichletSolver, chi) -> SpinorField:
        chi = np.asarray(chi).reshape(-1)
        return SpinorField.from_vector(solver.op.grid, solver.solve(chi), solver.dof)

    def dn_apply(self, solver: DirichletSolver, chi):
        return solver.apply(np.asarray(chi).reshape(-1))

    def dn_hat_apply(self, solver: DirichletSolver, chi):
        return solver.apply_hat(np.asarray(chi).reshape(-1))

    def tangential_dirac(self, op: DiracOperator, chi):
        """sum_beta C_beta (Delta_beta + theta_beta) chi on the boundary lattice."""
        grid = op.grid
        dof = op.dof
        chi = np.asarray(chi).reshape(grid.boundary_size, dof)
        points = slice(0, grid.boundary_size)
        result = np.zeros_like(chi, dtype=complex)
        gammas = np.kron(op.rep.gammas, np.eye(op.N)[None])
        for beta in range(grid.m):
            delta = grid.derivative(beta)[:grid.boundary_size, :grid.boundary_size]
            covariant = delta @ chi + np.einsum('pst,pt->ps', op.theta.theta[beta][points], chi)
            C = np.einsum('pi,ist->pst', op.frame.E[points, beta, :], gammas)
            result += np.einsum('pst,pt->ps', C, covariant)
        return result.reshape(-1)

    def dn_hat_consistency(self, solver: DirichletSolver, chi):
        """Max of |Lambda_hat chi + gamma(nu) D_tan chi - Lambda chi|."""
        op = solver.op
        chi = np.asarray(chi).reshape(-1)
        gamma_n = np.kron(op.rep.normal, np.eye(op.N))
        tangential = self.tangential_dirac(op, chi).reshape(op.grid.boundary_size, op.dof)
        shifted = np.einsum('st,pt->ps', gamma_n, tangential).reshape(-1)
        defect = solver.apply_hat(chi) + shifted - solver.apply(chi)
        return float(np.max(np.abs(defect)))

    def dn_matrix(self, solver: DirichletSolver, threads=None, batch=None) -> DNMatrix:
        threads = threads or getattr(settings, 'DN_THREADS', 1)
        batch = batch or getattr(settings, 'DN_COLUMN_BATCH', 64)
        size = len(solver.boundary)
        starts = list(range(0, size, batch))

        def columns(start):
            stop = min(start + batch, size)
            basis = np.zeros((size, stop - start), dtype=complex)
            basis[np.arange(start, stop), np.arange(stop - start)] = 1.0
            logger.debug("DN columns %d..%d", start, stop)
            return solver.apply(basis)

        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(columns, starts))
        matrix = np.concatenate(blocks, axis=1)
        if not np.all(np.isfinite(matrix)):
            raise SolverError("DN matrix has non-finite entries", grid=solver.op.grid.label())
        op = solver.op
        return DNMatrix(
            matrix=matrix,
            dof=op.dof,
            grid_label=op.grid.label(),
            m=solver.m,
            normal_gauge=bool(op.connection.normal_gauge) if op.connection is not None else True,
            rtol=solver.rtol,
            metadata={'n': op.grid.n, 'N': op.N, 'T': op.grid.T, 'condition': solver.condition},
        )

    def export_dn_matrix(self, dnm: DNMatrix, path):
        """CSV of (row, col, re, im) plus a JSON sidecar with the run metadata."""
        dnm.to_frame().to_csv(path, index=False, float_format='%.17g')
        sidecar = {
            'grid': dnm.grid_label,
            'm': dnm.m,
            'normal_gauge': dnm.normal_gauge,
            'rtol': dnm.rtol,
            **dnm.metadata,
        }
        with open(f"{path}.json", 'w') as handle:
            json.dump(sidecar, handle, indent=2, sort_keys=True, default=str)
        return path

    def plane_wave(self, grid, wavevector, dof, component=0, bump=None):
        wavevector = np.asarray(wavevector, dtype=float)
        phase = np.exp(1j * grid.boundary_points[:, :grid.m] @ wavevector)
        if bump is not None:
            phase = phase * bump
        chi = np.zeros((grid.boundary_size, dof), dtype=complex)
        chi[:, component] = phase
        return chi.reshape(-1)

    def flat_mode_oracle(self, grid, wavevector, T=None):
        """(-k coth(k T) with k the discrete tangential frequency, -|kappa|)."""
        T = grid.T if T is None else T
        effective = float(np.linalg.norm(grid.tangential_symbol(wavevector)))
        exact = float(np.linalg.norm(wavevector))
        if effective < 1e-14:
            return -1.0 / T, -exact
        return -effective / np.tanh(effective * T), -exact

    def mode_eigenvalue(self, solver: DirichletSolver, wavevector, component=0):
        grid = solver.op.grid
        chi = self.plane_wave(grid, wavevector, solver.dof, component)
        image = solver.apply(chi)
        return complex(np.vdot(chi, image) / np.vdot(chi, chi))

    def estimate_symbol(self, dn, grid, covector, scales: Sequence[float], point=0,
                        metric_inverse=None, bump=None) -> SymbolEstimate:
        """Fit Lambda(e^{i s xi.x} v) e^{-i s xi.x} at one boundary point against [s~, 1, 1/s~].

        s~ is the effective frequency |sigma_h(s xi)|_g / |xi|_g, so the leading
        coefficient estimates b_1(x, xi) and the constant one b_0(x, xi).
        """
        if len(scales) < 3:
            raise RecoveryError(f"symbol fit needs at least three frequencies, got {len(scales)}")
        covector = np.asarray(covector, dtype=float)
        m = grid.m
        ginv = np.eye(m) if metric_inverse is None else np.asarray(metric_inverse)
        dof = dn.dof
        base = np.sqrt(covector @ ginv @ covector)
        samples, effective = [], []
        x = grid.boundary_points[point, :m]
        weight = 1.0 if bump is None else bump[point]
        for scale in scales:
            symbol = grid.tangential_symbol(scale * covector)
            effective.append(float(np.sqrt(symbol @ ginv @ symbol) / base))
            block = np.zeros((dof, dof), dtype=complex)
            for s in range(dof):
                chi = self.plane_wave(grid, scale * covector, dof, s, bump)
                image = np.asarray(dn.apply(chi)).reshape(grid.boundary_size, dof)
                block[:, s] = image[point] * np.exp(-1j * scale * covector @ x) / weight
            samples.append(block)
        effective = np.array(effective)
        design = np.stack([effective, np.ones_like(effective), 1.0 / effective], axis=1)
        rhs = np.stack([b.reshape(-1) for b in samples])
        coefficients, residual, rank, _ = np.linalg.lstsq(design.astype(complex), rhs, rcond=None)
        if rank < 3:
            raise RecoveryError("symbol fit is rank deficient; use distinct frequencies")
        fitted = design @ coefficients
        misfit = float(np.max(np.abs(fitted - rhs))) if len(scales) > 3 else 0.0
        return SymbolEstimate(
            b1=coefficients[0].reshape(dof, dof),
            b0=coefficients[1].reshape(dof, dof),
            remainder=coefficients[2].reshape(dof, dof),
            effective=tuple(effective),
            residual=misfit,
        )


# Global instance
dn_service = DNService()
