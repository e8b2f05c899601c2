"""
Gauge actions, normal gauge fixing, the Theta(S) series behind d(e^S),
Yang-Mills-Dirac residuals and a path-transport gauge-equivalence test.

u(N) carries the pairing <X, Y> = -trace(XY); matrices are vectorised row-major,
so ad S acts on vec(X) as kron(S, I) - kron(I, S^T).
"""
import logging
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from django.conf import settings
from scipy.linalg import expm
from scipy.sparse import linalg as spla

from ..errors import DimensionError, GaugeError, JetOrderError, SolverError
from .clifford import GammaRep
from .dirac_fd import DiracOperator, SlabGrid, block_diagonal, dirac_fd_service, lift, pointwise
from .dn_numeric import dn_service
from .families import ConnectionField, GaugeField, SampledConnection, SampledGauge, unitary_basis
from .geometry import geometry_service

logger = logging.getLogger(__name__)

UNITARY_TOLERANCE = 1e-10


def _dagger(values):
    return np.conj(np.swapaxes(values, -1, -2))


def _unit(n, k):
    e = np.zeros(n, dtype=int)
    e[k] = 1
    return e


def ad_matrix(S):
    """Matrix of X -> [S, X] on row-major vec(X), batched over leading axes."""
    S = np.asarray(S, dtype=complex)
    N = S.shape[-1]
    identity = np.eye(N)
    left = np.einsum('...ij,kl->...ikjl', S, identity)
    right = np.einsum('ij,...lk->...ikjl', identity, S)
    return (left - right).reshape(S.shape[:-2] + (N * N, N * N))


def _vec(X):
    X = np.asarray(X)
    return X.reshape(X.shape[:-2] + (-1,))


def _unvec(v, N):
    return v.reshape(v.shape[:-1] + (N, N))


def _apply(operator, X):
    N = X.shape[-1]
    return _unvec(np.einsum('...ij,...j->...i', operator, _vec(X)), N)


@dataclass(eq=False)
class ThetaOperator:
    """Theta(S) = sum_{j < terms} (-ad S)^j / (j+1)! as an N^2 x N^2 matrix (batched)."""

    S: np.ndarray
    matrix: np.ndarray
    terms: int
    remainder_bound: float

    @property
    def N(self):
        return self.S.shape[-1]

    def apply(self, X):
        return _apply(self.matrix, np.asarray(X, dtype=complex))

    def solve(self, X):
        """Theta(S)^{-1} X."""
        X = np.asarray(X, dtype=complex)
        try:
            solution = np.linalg.solve(self.matrix, _vec(X)[..., None])[..., 0]
        except np.linalg.LinAlgError as error:
            raise GaugeError("Theta(S) is singular") from error
        return _unvec(solution, self.N)

    def inverse(self):
        try:
            return np.linalg.inv(self.matrix)
        except np.linalg.LinAlgError as error:
            raise GaugeError("Theta(S) is singular") from error


@dataclass(eq=False)
class CurvatureField:
    """F[a, b, p] = F_ab at every point, a, b chart indices."""

    F: np.ndarray

    @property
    def n(self):
        return self.F.shape[0]

    def components(self):
        """Independent components F_ab, a < b."""
        return {(a, b): self.F[a, b] for a, b in combinations(range(self.n), 2)}

    def antisymmetry_residual(self):
        return float(np.max(np.abs(self.F + np.swapaxes(self.F, 0, 1))))

    def skew_residual(self):
        return float(np.max(np.abs(self.F + _dagger(self.F))))

    def norm(self):
        return float(np.max(np.linalg.norm(self.F, axis=(-2, -1))))


class GaugedConnection(ConnectionField):
    """A' = G^{-1} A G + G^{-1} dG for a unitary gauge field G."""

    name = 'gauged'

    def __init__(self, base: ConnectionField, gauge: GaugeField):
        if base.n != gauge.n or base.N != gauge.N:
            raise DimensionError(f"connection (n={base.n}, N={base.N}) and gauge "
                                 f"(n={gauge.n}, N={gauge.N}) disagree")
        super().__init__(base.n, base.N, normal_gauge=False)
        self.base = base
        self.gauge = gauge

    def values(self, points):
        G = self.gauge.values(points)
        dG = self.gauge.derivatives(points)
        A = self.base.values(points)
        G_inv = _dagger(G)
        return np.stack([G_inv @ A[a] @ G + G_inv @ dG[a] for a in range(self.n)])

    def derivatives(self, points):
        G = self.gauge.values(points)
        dG = self.gauge.derivatives(points)
        d2G = self.gauge.second_derivatives(points)
        A = self.base.values(points)
        dA = self.base.derivatives(points)
        G_inv = _dagger(G)
        result = np.zeros((self.n, self.n) + G.shape, dtype=complex)
        for b in range(self.n):
            dG_inv = -G_inv @ dG[b] @ G_inv
            for a in range(self.n):
                result[b, a] = (dG_inv @ A[a] @ G + G_inv @ dA[b, a] @ G + G_inv @ A[a] @ dG[b]
                                + dG_inv @ dG[a] + G_inv @ d2G[b, a])
        return result

    def jets(self, points, order):
        G = self.gauge.jet(points, order + 1)
        G_inv = G.dagger()
        A = self.base.jets(points, order)
        return [G_inv @ A[a] @ G + G_inv @ G.diff(a) for a in range(self.n)]

    def describe(self):
        return {**super().describe(), 'base': self.base.describe(), 'gauge': self.gauge.name}


@dataclass(eq=False)
class NormalGaugeFix:
    gauge: SampledGauge
    connection: SampledConnection
    normal_residual: float
    unitarity_residual: float


@dataclass(eq=False)
class EquivalenceResult:
    gauge: np.ndarray
    path_residual: float
    conjugation_residual: float


class GaugeService:
    """Gauge group actions and Yang-Mills-Dirac diagnostics"""

    # Group action

    def unitarity_residual(self, G):
        G = np.asarray(G)
        return float(np.max(np.abs(_dagger(G) @ G - np.eye(G.shape[-1]))))

    def apply_gauge(self, connection: ConnectionField, gauge: GaugeField, check_points=None) -> GaugedConnection:
        """A' = G^{-1} A G + G^{-1} dG; unitarity is verified on `check_points` when given."""
        if check_points is not None:
            residual = self.unitarity_residual(gauge.values(check_points))
            if residual > UNITARY_TOLERANCE:
                raise GaugeError(f"gauge field is not unitary (max |G^*G - I| = {residual:.3e})")
        return GaugedConnection(connection, gauge)

    def curvature_field(self, connection: ConnectionField, points) -> CurvatureField:
        return CurvatureField(F=connection.curvature(points))

    def conjugation_residual(self, original: ConnectionField, gauged: ConnectionField, G, points):
        """max |F_{A'} - G^{-1} F_A G| over points and components."""
        F_A = original.curvature(points)
        F_B = gauged.curvature(points)
        G_inv = np.linalg.inv(G)
        return float(np.max(np.abs(F_B - G_inv @ F_A @ G)))

    # Normal gauge

    def normal_gauge_fix(self, connection: ConnectionField, grid: SlabGrid, substeps=None) -> NormalGaugeFix:
        """Solve d_n F = -A_n F, F = I on x^n = 0, by RK4 with the tangential variation alongside."""
        substeps = substeps or getattr(settings, 'DN_RK4_SUBSTEPS', 4)
        n, m, N = grid.n, grid.m, connection.N
        if connection.n != n:
            raise DimensionError(f"connection of dimension {connection.n} on an n={n} grid")
        boundary = grid.boundary_points
        F = np.broadcast_to(np.eye(N, dtype=complex), (grid.boundary_size, N, N)).copy()
        V = np.zeros((m,) + F.shape, dtype=complex)

        def rhs(z, F, V):
            points = boundary.copy()
            points[..., -1] = z
            A_n = connection.values(points)[n - 1]
            dA = connection.derivatives(points)
            dF = -A_n @ F
            dV = np.stack([-dA[a, n - 1] @ F - A_n @ V[a] for a in range(m)])
            return dF, dV

        gauges, variations = [F], [V]
        z_nodes = grid.z
        for cell in range(len(z_nodes) - 1):
            z = z_nodes[cell]
            step = (z_nodes[cell + 1] - z) / substeps
            for _ in range(substeps):
                k1 = rhs(z, F, V)
                k2 = rhs(z + step / 2, F + step / 2 * k1[0], V + step / 2 * k1[1])
                k3 = rhs(z + step / 2, F + step / 2 * k2[0], V + step / 2 * k2[1])
                k4 = rhs(z + step, F + step * k3[0], V + step * k3[1])
                F = F + step / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
                V = V + step / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
                z += step
            if not (np.all(np.isfinite(F)) and np.all(np.isfinite(V))):
                raise SolverError("normal gauge transport produced non-finite values", x_n=z_nodes[cell + 1])
            gauges.append(F)
            variations.append(V)

        points = grid.points
        F = np.stack(gauges).reshape(-1, N, N)
        A = connection.values(points)
        dF = np.zeros((n,) + F.shape, dtype=complex)
        dF[:m] = np.stack(variations, axis=1).reshape(m, -1, N, N)
        dF[n - 1] = -A[n - 1] @ F
        F_inv = np.linalg.inv(F)
        values = np.stack([F_inv @ A[a] @ F + F_inv @ dF[a] for a in range(n)])
        flat = values.reshape(n, grid.size, N * N)
        derivatives = np.stack([
            np.stack([(grid.derivative(b) @ flat[a]).reshape(grid.size, N, N) for a in range(n)])
            for b in range(n)
        ])
        gauge = SampledGauge(points, F, dF)
        fixed = SampledConnection(points, values, derivatives, normal_gauge=True)
        result = NormalGaugeFix(
            gauge=gauge,
            connection=fixed,
            normal_residual=float(np.max(np.abs(values[n - 1]))),
            unitarity_residual=self.unitarity_residual(F),
        )
        logger.info("Normal gauge on %s grid: max|A'_n| = %.3e, unitarity %.3e",
                    grid.label(), result.normal_residual, result.unitarity_residual)
        return result

    def dn_gauge_defect(self, metric, connection, gauge: GaugeField, rep: GammaRep, grid: SlabGrid,
                        m=0.0, potential=None, wavevectors: Optional[Sequence] = None):
        """max over smooth boundary fields of |Lambda_{A'} chi - Lambda_A chi| (boundary L^2)."""
        if not gauge.boundary_identity:
            raise GaugeError("DN invariance needs a gauge equal to the identity on x^n = 0")
        gauged = self.apply_gauge(connection, gauge, check_points=grid.points)
        return self.dn_defect(metric, connection, gauged, rep, grid, m=m, potential=potential,
                              wavevectors=wavevectors)

    def dn_defect(self, metric, first: ConnectionField, second: ConnectionField, rep: GammaRep,
                  grid: SlabGrid, m=0.0, potential=None, wavevectors: Optional[Sequence] = None):
        """Boundary L^2 distance between two DN maps on a few smooth boundary fields."""
        frame = geometry_service.parallel_frame(metric, grid)
        ops = [dirac_fd_service.build(metric, field, rep, grid, frame=frame) for field in (first, second)]
        solvers = [dn_service.factorize(op, m=m, potential=potential) for op in ops]
        dof = ops[0].dof
        if wavevectors is None:
            wavevectors = [_unit(grid.m, 0), 2 * _unit(grid.m, grid.m - 1)]
        cell = float(np.prod(grid.h_tangential))
        defect = 0.0
        for wavevector in wavevectors:
            for component in range(dof):
                chi = dn_service.plane_wave(grid, wavevector, dof, component)
                difference = solvers[1].apply(chi) - solvers[0].apply(chi)
                defect = max(defect, float(np.sqrt(cell * np.sum(np.abs(difference) ** 2))))
        logger.info("DN gauge defect on %s grid: %.3e", grid.label(), defect)
        return defect

    # Theta(S) and d(e^S)

    def theta_op(self, S, terms=None) -> ThetaOperator:
        terms = terms or getattr(settings, 'DN_THETA_TERMS', 20)
        S = np.asarray(S, dtype=complex)
        norm = float(np.max(np.linalg.norm(S, 2, axis=(-2, -1)))) if S.size else 0.0
        if S.shape[-1] == 1:  # ad S = 0
            norm = 0.0
        if norm > 1.0:
            raise GaugeError(f"|S| = {norm:.3f} exceeds 1, outside the Theta series bound")
        X = -ad_matrix(S)
        identity = np.broadcast_to(np.eye(X.shape[-1], dtype=complex), X.shape)
        term = identity.copy()
        total = identity.copy()
        for j in range(1, terms):
            term = term @ X / (j + 1)
            total = total + term
        bound = (2.0 * norm) ** terms * math.exp(2.0 * norm) / math.factorial(terms + 1)
        return ThetaOperator(S=S, matrix=total, terms=terms, remainder_bound=bound)

    def theta_derivative(self, S, direction, terms=None):
        """(D Theta)(S)[direction] as an N^2 x N^2 matrix (batched)."""
        terms = terms or getattr(settings, 'DN_THETA_TERMS', 20)
        X = -ad_matrix(S)
        dX = -ad_matrix(direction)
        powers = [np.broadcast_to(np.eye(X.shape[-1], dtype=complex), X.shape)]
        for _ in range(1, terms):
            powers.append(powers[-1] @ X)
        total = np.zeros(np.broadcast_shapes(X.shape, dX.shape), dtype=complex)
        for j in range(1, terms):
            inner = sum(powers[l] @ dX @ powers[j - 1 - l] for l in range(j))
            total = total + inner / math.factorial(j + 1)
        return total

    def dexp_derivative(self, S, direction):
        """d/dt e^{S + t direction} at t = 0, as e^S Theta(S)(direction)."""
        S = np.asarray(S, dtype=complex)
        return expm(S) @ self.theta_op(S).apply(direction)

    def dexp_check(self, S, direction=None, step=1e-5, rng=None):
        """Max deviation of a central difference of e^{S + t dS} from e^S Theta(S) dS."""
        S = np.asarray(S, dtype=complex)
        if direction is None:
            rng = rng or np.random.default_rng(0)
            R = rng.standard_normal(S.shape) + 1j * rng.standard_normal(S.shape)
            direction = (R - _dagger(R)) / 2.0
        difference = (expm(S + step * direction) - expm(S - step * direction)) / (2.0 * step)
        return float(np.max(np.abs(difference - self.dexp_derivative(S, direction))))

    # Yang-Mills-Dirac

    def current(self, spinor_values, rep: GammaRep, N, h=None):
        """J with Re<phi, (gamma_i (x) X) phi> = <J(e_i), X>; chart components when the coframe h is given.

        spinor_values has shape (P, k * N); the result has shape (n, P, N, N).
        """
        values = np.asarray(spinor_values, dtype=complex)
        k = rep.k
        if values.shape[-1] != k * N:
            raise DimensionError(f"spinors with {values.shape[-1]} components, expected {k * N}")
        phi = values.reshape(values.shape[0], k, N)
        basis = unitary_basis(N)
        pairing = np.einsum('pxa,ixy,sab,pyb->ips', np.conj(phi), rep.gammas, basis, phi).real
        J_frame = np.einsum('ips,sab->ipab', pairing, basis)
        if h is None:
            return J_frame
        return np.einsum('pia,ipxy->apxy', h, J_frame)

    def covariant_exterior(self, connection, grid: SlabGrid):
        """Sparse d_A from u(N)-valued 1-forms to 2-forms on all grid points.

        1-forms are stacked by chart index, 2-forms by pairs a < b, each block
        holding row-major vec(X) per point.
        """
        n, N = grid.n, connection.N
        A = connection.values(grid.points)
        covariant = [lift(grid.derivative(a), N * N) + block_diagonal(ad_matrix(A[a])) for a in range(n)]
        rows = []
        for a, b in combinations(range(n), 2):
            row = [None] * n
            row[b] = covariant[a]
            row[a] = -covariant[b]
            rows.append(row)
        return sp.bmat(rows, format='csr')

    def covariant_codifferential(self, connection, metric, grid: SlabGrid):
        """d_A^* as the adjoint of d_A in the sqrt(det g) weighted inner products."""
        n, N = grid.n, connection.N
        dof = N * N
        g = metric.values(grid.points)
        ginv = np.linalg.inv(g)
        weights = geometry_service.volume_element(metric, grid.points)
        pairs = list(combinations(range(n), 2))
        M1_inv = sp.bmat([[pointwise(g[:, a, c] / weights, dof) for c in range(n)] for a in range(n)],
                         format='csr')
        M2 = sp.bmat([
            [pointwise(weights * (ginv[:, a, c] * ginv[:, b, d] - ginv[:, a, d] * ginv[:, b, c]), dof)
             for c, d in pairs]
            for a, b in pairs
        ], format='csr')
        d_A = self.covariant_exterior(connection, grid)
        return (M1_inv @ d_A.conj().T @ M2).tocsr()

    def ymd_residuals(self, op: DiracOperator, phi, m=0.0, connection=None, cells=2):
        """(|D_A^2 phi - m^2 phi|, |d_A^* F_A - J(phi)|) in the discrete weighted L^2 norm.

        The spinor residual is taken on interior points, the connection residual
        `cells` normal cells away from both faces.
        """
        grid = op.grid
        connection = connection or op.connection
        n, N, dof = grid.n, op.N, op.dof
        cell = float(np.prod(grid.h_tangential)) * grid.h_normal
        phi = np.asarray(phi, dtype=complex).reshape(-1)

        spinor = ((op.squared() @ phi) - m ** 2 * phi).reshape(grid.size, dof)
        interior = grid.interior_points
        r1 = float(np.sqrt(cell * np.sum(op.weights[interior, None] * np.abs(spinor[interior]) ** 2)))

        F = connection.curvature(grid.points)
        F_vec = np.concatenate([F[a, b].reshape(-1) for a, b in combinations(range(n), 2)])
        codifferential = self.covariant_codifferential(connection, op.metric, grid)
        divergence = (codifferential @ F_vec).reshape(n, grid.size, N, N)
        J = self.current(phi.reshape(grid.size, dof), op.rep, N, h=op.frame.h)
        R = divergence - J
        ginv = np.linalg.inv(op.metric.values(grid.points))
        density = np.einsum('pab,apxy,bpxy->p', ginv, np.conj(R), R).real
        mask = grid.face_mask(cells)
        r2 = float(np.sqrt(cell * np.sum(op.weights[mask] * density[mask])))
        logger.info("YMD residuals on %s grid: spinor %.3e, connection %.3e", grid.label(), r1, r2)
        return r1, r2

    # Gauge equivalence by transport

    def _transport(self, A: ConnectionField, B: ConnectionField, grid: SlabGrid, order, substeps):
        n, N = grid.n, A.N
        nodes = {a: 2.0 * np.pi * np.arange(size) / size for a, size in enumerate(grid.tangential)}
        nodes[n - 1] = grid.z
        coords = np.zeros((1, n))
        G = np.eye(N, dtype=complex)[None]
        shape = ()
        for c in order:

            def rhs(t, G):
                x = coords.copy()
                x[:, c] = t
                return G @ B.values(x)[c] - A.values(x)[c] @ G

            states = [G]
            axis = nodes[c]
            for j in range(len(axis) - 1):
                t = axis[j]
                step = (axis[j + 1] - t) / substeps
                for _ in range(substeps):
                    k1 = rhs(t, G)
                    k2 = rhs(t + step / 2, G + step / 2 * k1)
                    k3 = rhs(t + step / 2, G + step / 2 * k2)
                    k4 = rhs(t + step, G + step * k3)
                    G = G + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                    t += step
                if not np.all(np.isfinite(G)):
                    raise SolverError("gauge transport produced non-finite values", axis=c, node=j + 1)
                states.append(G)
            G = np.stack(states, axis=1).reshape(-1, N, N)
            coords = np.repeat(coords, len(axis), axis=0)
            coords[:, c] = np.tile(axis, len(coords) // len(axis))
            shape += (len(axis),)
        canonical = [n - 1] + list(range(n - 1))
        permutation = [list(order).index(a) for a in canonical]
        G = G.reshape(shape + (N, N)).transpose(permutation + [n, n + 1])
        return G.reshape(grid.size, N, N)

    def transport_equivalence(self, A: ConnectionField, B: ConnectionField, grid: SlabGrid,
                              substeps=16) -> EquivalenceResult:
        """Integrate d_c G = G B_c - A_c G from the origin along axis-ordered paths.

        The path residual compares tangential-first against normal-first paths;
        the conjugation residual is max |F_B - G^{-1} F_A G| on the grid.
        """
        if A.n != grid.n or B.n != grid.n or A.N != B.N:
            raise DimensionError("connections and grid disagree on n or N")
        n = grid.n
        try:
            forward = self._transport(A, B, grid, list(range(n)), substeps)
            backward = self._transport(A, B, grid, list(range(n))[::-1], substeps)
        except JetOrderError as error:
            raise GaugeError("transport needs connections defined off the grid") from error
        path_residual = float(np.max(np.abs(forward - backward)))
        conjugation = self.conjugation_residual(A, B, forward, grid.points)
        logger.info("Transport equivalence on %s grid: path %.3e, conjugation %.3e",
                    grid.label(), path_residual, conjugation)
        return EquivalenceResult(gauge=forward, path_residual=path_residual, conjugation_residual=conjugation)

    # Gauge-fixing elliptic system

    def _generator_samples(self, S, grid: SlabGrid):
        """S, d_i S and d_i d_j S on grid points, exactly from a family or by differences."""
        n = grid.n
        if hasattr(S, 'generator_jet'):
            X = S.generator_jet(grid.points, 2)
            first = np.stack([X.partial(_unit(n, i)) for i in range(n)])
            second = np.stack([
                np.stack([X.partial(_unit(n, i) + _unit(n, j)) for j in range(n)]) for i in range(n)
            ])
            return X.value(), first, second
        S = np.asarray(S, dtype=complex)
        N = S.shape[-1]
        flat = S.reshape(grid.size, N * N)
        first = np.stack([(grid.derivative(i) @ flat).reshape(S.shape) for i in range(n)])
        second = np.stack([
            np.stack([(grid.second_derivative(i, j) @ flat).reshape(S.shape) for j in range(n)])
            for i in range(n)
        ])
        return S, first, second

    def gauge_fixing_source(self, S, dS, connection, metric, points):
        """F(x, S, dS; A) = g^{ij} nabla_i (e^{-S} A_j e^S) + g^{ij} (D Theta)(S)(d_i S, d_j S)."""
        n = connection.n
        g = metric.values(points)
        ginv = np.linalg.inv(g)
        christoffel = geometry_service.christoffel(metric, points)
        A = connection.values(points)
        dA = connection.derivatives(points)
        exp_plus, exp_minus = expm(S), expm(-S)
        theta_plus, theta_minus = self.theta_op(S), self.theta_op(-S)
        d_plus = [exp_plus @ theta_plus.apply(dS[i]) for i in range(n)]
        d_minus = [-exp_minus @ theta_minus.apply(dS[i]) for i in range(n)]
        conjugated = [exp_minus @ A[j] @ exp_plus for j in range(n)]
        source = np.zeros_like(S)
        for i in range(n):
            theta_derivative = self.theta_derivative(S, dS[i])
            for j in range(n):
                weight = ginv[:, i, j][:, None, None]
                derivative = (d_minus[i] @ A[j] @ exp_plus + exp_minus @ dA[i, j] @ exp_plus
                              + exp_minus @ A[j] @ d_plus[i])
                connection_term = sum(christoffel[:, k, i, j][:, None, None] * conjugated[k] for k in range(n))
                source = source + weight * (derivative - connection_term)
                source = source + weight * _apply(theta_derivative, dS[j])
        return source

    def codifferential(self, connection, metric, points):
        """d^*A = -g^{ij} (d_i A_j - Gamma^k_ij A_k) from exact derivatives."""
        n = connection.n
        ginv = np.linalg.inv(metric.values(points))
        christoffel = geometry_service.christoffel(metric, points)
        A = connection.values(points)
        dA = connection.derivatives(points)
        result = np.zeros(A.shape[1:], dtype=complex)
        for i in range(n):
            for j in range(n):
                covariant = dA[i, j] - sum(christoffel[:, k, i, j][:, None, None] * A[k] for k in range(n))
                result = result - ginv[:, i, j][:, None, None] * covariant
        return result

    def interior_norm(self, values, metric, grid: SlabGrid):
        """sqrt(det g)-weighted discrete L^2 norm of a matrix field over interior points."""
        weights = geometry_service.volume_element(metric, grid.points)
        interior = grid.interior_points
        cell = float(np.prod(grid.h_tangential)) * grid.h_normal
        density = np.sum(np.abs(values[interior]) ** 2, axis=(-2, -1))
        return float(np.sqrt(cell * np.sum(weights[interior] * density)))

    def ck_residual_field(self, S, connection, metric, grid: SlabGrid):
        """-g^{ij} nabla_i nabla_j S - Theta(S)^{-1} F(x, S, dS; A) at every grid point.

        S is a gauge family (exact derivatives of its generator) or an array of
        generator values on the grid (finite differences).
        """
        points = grid.points
        S, dS, d2S = self._generator_samples(S, grid)
        n = grid.n
        ginv = np.linalg.inv(metric.values(points))
        christoffel = geometry_service.christoffel(metric, points)
        hessian = np.zeros_like(S)
        for i in range(n):
            for j in range(n):
                covariant = d2S[i, j] - sum(christoffel[:, k, i, j][:, None, None] * dS[k] for k in range(n))
                hessian = hessian - ginv[:, i, j][:, None, None] * covariant
        source = self.gauge_fixing_source(S, dS, connection, metric, points)
        return hessian - self.theta_op(S).solve(source)

    def ck_residual(self, S, connection, metric, grid: SlabGrid) -> float:
        """Discrete L^2 norm of the gauge-fixing residual on interior points."""
        return self.interior_norm(self.ck_residual_field(S, connection, metric, grid), metric, grid)

    def abelian_gauge_fix(self, connection, metric, grid: SlabGrid):
        """Solve d^*(A + dS) = 0 for S = i s with s = 0 on both faces (N = 1).

        Returns S sampled on the grid as a (P, 1, 1) array.
        """
        if connection.N != 1:
            raise GaugeError(f"the linear gauge-fixing solve is abelian only, got N={connection.N}")
        n = grid.n
        points = grid.points
        ginv = np.linalg.inv(metric.values(points))
        christoffel = geometry_service.christoffel(metric, points)
        operator = sp.csr_matrix((grid.size, grid.size), dtype=float)
        for i in range(n):
            for j in range(n):
                term = grid.second_derivative(i, j)
                for k in range(n):
                    term = term - sp.diags(christoffel[:, k, i, j]) @ grid.derivative(k)
                operator = operator - sp.diags(ginv[:, i, j]) @ term
        zero = np.zeros((grid.size, 1, 1), dtype=complex)
        source = self.gauge_fixing_source(zero, np.stack([zero] * n), connection, metric, points)
        rhs = source[:, 0, 0].imag
        interior = grid.interior_points
        block = operator.tocsr()[interior][:, interior].tocsc()
        try:
            solution = spla.spsolve(block, rhs[interior])
        except RuntimeError as error:
            raise SolverError("abelian gauge-fixing solve failed", grid=grid.label()) from error
        if not np.all(np.isfinite(solution)):
            raise SolverError("abelian gauge-fixing solve is singular", grid=grid.label())
        s = np.zeros(grid.size)
        s[interior] = solution
        return (1j * s).reshape(grid.size, 1, 1)


# Global instance
gauge_service = GaugeService()
