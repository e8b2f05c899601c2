"""
Finite-difference twisted Dirac operators on slab grids.

Grid points are ordered normal-major: index p = iz * P' + it, where it runs
over the periodic tangential lattice in C order.  The z = 0 face is therefore
the first P' points.  Each point carries dof = k * N spinor components,
ordered (spinor index, bundle index).
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg as spla

from ..errors import DimensionError, SolverError
from .clifford import GammaRep, clifford_service
from .families import TrigPolynomial
from .geometry import FrameData, geometry_service
from .spin import TwistedConnection, spin_service

logger = logging.getLogger(__name__)


def _periodic_difference(size, spacing):
    offsets = np.ones(size) / (2.0 * spacing)
    D = sp.diags([offsets[:-1], -offsets[:-1]], [1, -1], shape=(size, size), format='lil')
    D[0, size - 1] = -1.0 / (2.0 * spacing)
    D[size - 1, 0] = 1.0 / (2.0 * spacing)
    return D.tocsr()


def _normal_difference(size, spacing):
    D = sp.lil_matrix((size, size))
    for row in range(1, size - 1):
        D[row, row - 1] = -0.5
        D[row, row + 1] = 0.5
    D[0, 0:3] = [-1.5, 2.0, -0.5]
    D[size - 1, size - 3:size] = [0.5, -2.0, 1.5]
    return D.tocsr() * (1.0 / spacing)


def _periodic_second_difference(size, spacing):
    D = sp.diags([np.ones(size - 1), -2.0 * np.ones(size), np.ones(size - 1)], [-1, 0, 1],
                 shape=(size, size), format='lil')
    D[0, size - 1] = 1.0
    D[size - 1, 0] = 1.0
    return D.tocsr() * (1.0 / spacing ** 2)


def _normal_second_difference(size, spacing):
    D = sp.lil_matrix((size, size))
    for row in range(1, size - 1):
        D[row, row - 1:row + 2] = [1.0, -2.0, 1.0]
    D[0, 0:4] = [2.0, -5.0, 4.0, -1.0]
    D[size - 1, size - 4:size] = [-1.0, 4.0, -5.0, 2.0]
    return D.tocsr() * (1.0 / spacing ** 2)


@dataclass(frozen=True, eq=False)
class SlabGrid:
    """Periodic tangential lattice times [0, T] in the normal direction."""

    n: int
    tangential: Tuple[int, ...]
    normal: int
    T: float = 1.0

    def __post_init__(self):
        if isinstance(self.tangential, int):
            object.__setattr__(self, 'tangential', (self.tangential,) * (self.n - 1))
        else:
            object.__setattr__(self, 'tangential', tuple(int(s) for s in self.tangential))
        if len(self.tangential) != self.n - 1:
            raise DimensionError(f"need {self.n - 1} tangential sizes, got {len(self.tangential)}")
        for size in self.tangential:
            if size < 8 or size % 2:
                raise DimensionError(f"tangential size must be even and >= 8, got {size}")
        if self.normal < 9:
            raise DimensionError(f"normal size must be >= 9, got {self.normal}")
        if not self.T > 0:
            raise DimensionError(f"slab thickness must be positive, got {self.T}")

    @property
    def m(self):
        return self.n - 1

    @property
    def h_tangential(self):
        return tuple(2.0 * np.pi / size for size in self.tangential)

    @property
    def h_normal(self):
        return self.T / (self.normal - 1)

    @cached_property
    def z(self):
        return np.linspace(0.0, self.T, self.normal)

    @property
    def boundary_size(self):
        return int(np.prod(self.tangential))

    @property
    def size(self):
        return self.boundary_size * self.normal

    def label(self):
        return 'x'.join(str(s) for s in self.tangential + (self.normal,))

    @cached_property
    def boundary_points(self):
        axes = [2.0 * np.pi * np.arange(size) / size for size in self.tangential]
        mesh = np.meshgrid(*axes, indexing='ij')
        points = np.stack([axis.reshape(-1) for axis in mesh] + [np.zeros(self.boundary_size)], axis=-1)
        return points

    @cached_property
    def points(self):
        points = np.repeat(self.boundary_points[None], self.normal, axis=0)
        points[..., -1] = self.z[:, None]
        return points.reshape(-1, self.n)

    @cached_property
    def normal_index(self):
        return np.repeat(np.arange(self.normal), self.boundary_size)

    def face_mask(self, cells=0):
        """Points at least `cells` normal cells away from both faces."""
        return (self.normal_index >= cells) & (self.normal_index <= self.normal - 1 - cells)

    @cached_property
    def interior_points(self):
        return np.flatnonzero(self.face_mask(1))

    @cached_property
    def boundary_index(self):
        return np.arange(self.boundary_size)

    @cached_property
    def far_index(self):
        return np.arange(self.size - self.boundary_size, self.size)

    def derivative(self, a):
        """Scalar difference matrix for d_a on all grid points."""
        return _derivative_matrix(self.tangential, self.normal, self.T, a)

    def second_derivative(self, a, b):
        """d_a d_b; compact three-point stencil on the diagonal."""
        if a != b:
            return (self.derivative(a) @ self.derivative(b)).tocsr()
        return _derivative_matrix(self.tangential, self.normal, self.T, a, second=True)

    def expand(self, indices, dof):
        """Point indices to spinor-vector indices."""
        indices = np.asarray(indices)
        return (indices[:, None] * dof + np.arange(dof)).reshape(-1)

    def tangential_symbol(self, wavevector):
        """sin(kappa h) / h per tangential direction: the discrete symbol of the centered difference."""
        wavevector = np.asarray(wavevector, dtype=float)
        h = np.asarray(self.h_tangential)
        return np.sin(wavevector * h) / h


@lru_cache(maxsize=32)
def _derivative_matrix(tangential, normal, T, a, second=False):
    m = len(tangential)
    normal_stencil = _normal_second_difference if second else _normal_difference
    periodic_stencil = _periodic_second_difference if second else _periodic_difference
    factors = []
    if a == m:
        factors.append(normal_stencil(normal, T / (normal - 1)))
    else:
        factors.append(sp.identity(normal, format='csr'))
    for axis, size in enumerate(tangential):
        if axis == a:
            factors.append(periodic_stencil(size, 2.0 * np.pi / size))
        else:
            factors.append(sp.identity(size, format='csr'))
    matrix = factors[0]
    for factor in factors[1:]:
        matrix = sp.kron(matrix, factor, format='csr')
    return matrix


def lift(matrix, dof):
    """Scalar point operator acting on every spinor component."""
    return sp.kron(matrix, sp.identity(dof, format='csr'), format='csr')


def block_diagonal(blocks):
    """Sparse block-diagonal matrix from per-point (P, d, d) blocks."""
    blocks = np.asarray(blocks)
    count = blocks.shape[0]
    return sp.bsr_matrix(
        (blocks, np.arange(count), np.arange(count + 1)),
        shape=(count * blocks.shape[1], count * blocks.shape[2]),
    ).tocsr()


def pointwise(values, dof):
    return sp.diags(np.repeat(values, dof))


@dataclass(eq=False)
class SpinorField:
    grid: SlabGrid
    values: np.ndarray

    @property
    def dof(self):
        return self.values.shape[-1]

    @property
    def vector(self):
        return self.values.reshape(-1)

    @classmethod
    def from_vector(cls, grid, vector, dof):
        return cls(grid=grid, values=np.asarray(vector).reshape(grid.size, dof))

    @property
    def boundary(self):
        return self.values[:self.grid.boundary_size]

    @property
    def interior(self):
        return self.values[self.grid.interior_points]

    def norm(self, weights):
        return float(np.sqrt(np.sum(weights[:, None] * np.abs(self.values) ** 2)))


@dataclass(eq=False)
class DiracOperator:
    """Assembled D_A with everything needed to square it and take boundary data."""

    grid: SlabGrid
    rep: GammaRep
    N: int
    D: sp.csr_matrix
    weights: np.ndarray
    frame: FrameData
    theta: TwistedConnection
    metric: object = None
    connection: object = None
    _squares: dict = field(default_factory=dict, repr=False)

    @property
    def dof(self):
        return self.rep.k * self.N

    @property
    def size(self):
        return self.D.shape[0]

    def squared(self):
        if 'D2' not in self._squares:
            self._squares['D2'] = (self.D @ self.D).tocsr()
        return self._squares['D2']

    def laplacian(self, potential=None, m=0.0):
        """D_A^2 + Z - m^2 on all grid points."""
        L = self.squared()
        if potential is not None:
            L = L + block_diagonal(potential.values(self.grid.points))
        if m:
            L = L - (m ** 2) * sp.identity(self.size, format='csr')
        return L.tocsr()

    def inner(self, u, v):
        u = np.asarray(u).reshape(self.grid.size, self.dof)
        v = np.asarray(v).reshape(self.grid.size, self.dof)
        return complex(np.sum(self.weights[:, None] * np.conj(u) * v))


class DiracFDService:
    """Assembly of discrete Dirac operators and Lichnerowicz checks"""

    def twisted_connection(self, frame: FrameData, connection, rep: GammaRep):
        omega_s = spin_service.spin_connection_coeffs(list(frame.omega), rep)
        A = list(connection.values(frame.points))
        return spin_service.build_twisted_connection(omega_s, A, rep, connection.N)

    def build(self, metric, connection, rep: GammaRep, grid: SlabGrid, frame: Optional[FrameData] = None):
        """Frame transport, twisted connection and D_A in one call."""
        if connection.n != grid.n or metric.n != grid.n or rep.n != grid.n:
            raise DimensionError("metric, connection, representation and grid disagree on n")
        frame = frame or geometry_service.parallel_frame(metric, grid)
        theta = self.twisted_connection(frame, connection, rep)
        op = self.assemble_dirac(metric, frame, theta, rep, grid)
        op.connection = connection
        return op

    def assemble_dirac(self, metric, frame: FrameData, theta: TwistedConnection, rep: GammaRep, grid: SlabGrid):
        n = grid.n
        dof = theta.k * theta.N
        identity_n = np.eye(theta.N)
        points = grid.points
        g = metric.values(points)
        dg = metric.first_derivatives(points)
        ginv = np.linalg.inv(g)
        weights = geometry_service.volume_element(metric, points)

        # C_a = sum_i E[a, i] gamma_i, lifted to S (x) E
        C = [_lift_spin(clifford_service.clifford_mul(rep, frame.E[:, a, :]), identity_n) for a in range(n)]
        potential = np.zeros((grid.size, dof, dof), dtype=complex)
        W = pointwise(weights, dof)
        W_inv = pointwise(1.0 / weights, dof)
        D = sp.csr_matrix((grid.size * dof, grid.size * dof), dtype=complex)
        for a in range(n):
            log_weight = 0.5 * np.einsum('pij,pji->p', ginv, dg[:, a])
            dC = _lift_spin(clifford_service.clifford_mul(rep, frame.dE[a][:, a, :]), identity_n)
            potential += C[a] @ theta.theta[a] - 0.5 * (log_weight[:, None, None] * C[a] + dC)
            Ca = block_diagonal(C[a])
            delta = lift(grid.derivative(a), dof)
            D = D + 0.5 * (Ca @ delta + W_inv @ delta @ W @ Ca)
        potential = 0.5 * (potential + np.conj(np.swapaxes(potential, -1, -2)))
        D = (D + block_diagonal(potential)).tocsr()
        logger.debug("Assembled D_A on %s grid: %d unknowns, %d nonzeros", grid.label(), D.shape[0], D.nnz)
        return DiracOperator(grid=grid, rep=rep, N=theta.N, D=D, weights=weights, frame=frame,
                             theta=theta, metric=metric)

    def curvature_operator(self, connection, rep: GammaRep, frame: FrameData):
        """1/2 sum_jk gamma_j gamma_k (x) F(e_j, e_k) at every frame point."""
        F = connection.curvature(frame.points)
        F_frame = np.einsum('paj,pbk,abpxy->jkpxy', frame.E, frame.E, F)
        products = np.einsum('jab,kbc->jkac', rep.gammas, rep.gammas)
        operator = 0.5 * np.einsum('jkst,jkpxy->psxty', products, F_frame)
        P = operator.shape[0]
        dof = rep.k * connection.N
        return operator.reshape(P, dof, dof)

    def connection_laplacian(self, op: DiracOperator, connection=None):
        """(nabla^A)* nabla^A + R/4 + curvature operator, assembled from first differences."""
        grid, metric, frame = op.grid, op.metric, op.frame
        connection = connection or op.connection
        n, dof = grid.n, op.dof
        points = grid.points
        ginv = np.linalg.inv(metric.values(points))
        gamma = frame.christoffel
        nabla = [lift(grid.derivative(a), dof) + block_diagonal(op.theta.theta[a]) for a in range(n)]
        L = sp.csr_matrix((grid.size * dof, grid.size * dof), dtype=complex)
        for i in range(n):
            for j in range(n):
                L = L - pointwise(ginv[:, i, j], dof) @ nabla[i] @ nabla[j]
        trace_gamma = np.einsum('pij,pkij->pk', ginv, gamma)
        for k in range(n):
            L = L + pointwise(trace_gamma[:, k], dof) @ nabla[k]
        curvature = geometry_service.scalar_curvature(metric, points)
        L = L + pointwise(curvature / 4.0, dof)
        L = L + block_diagonal(self.curvature_operator(connection, op.rep, frame))
        return L.tocsr()

    def lichnerowicz_residual(self, op: DiracOperator, psi, cells=2):
        """Max-norm of D^2 psi minus the Lichnerowicz side, away from the faces."""
        psi = np.asarray(psi).reshape(-1)
        difference = op.squared() @ psi - self.connection_laplacian(op) @ psi
        mask = op.grid.face_mask(cells)
        return float(np.max(np.abs(difference.reshape(op.grid.size, op.dof)[mask])))

    def green_defect(self, op: DiracOperator, first, second):
        """|<D s1, s2> - <s1, D s2>| in the sqrt(det g) inner product."""
        return abs(op.inner(op.D @ first, second) - op.inner(first, op.D @ second))

    def lowest_dirichlet_modes(self, op: DiracOperator, count=10, potential=None, m=0.0):
        L = op.laplacian(potential, m)
        interior = op.grid.expand(op.grid.interior_points, op.dof)
        block = L[interior][:, interior].tocsc()
        try:
            values, vectors = spla.eigs(block, k=count, sigma=0.0, which='LM')
        except (RuntimeError, spla.ArpackNoConvergence) as error:
            raise SolverError("eigenvalue iteration did not converge", count=count, grid=op.grid.label()) from error
        ordering = np.argsort(values.real)
        return values[ordering], vectors[:, ordering]


def _lift_spin(values, identity_n):
    """Batched spin matrix (x) Id_N."""
    r = identity_n.shape[0]
    out = np.einsum('pij,ab->piajb', values, identity_n)
    return out.reshape(values.shape[0], values.shape[1] * r, values.shape[2] * r)


def smooth_spinor(grid: SlabGrid, dof, seed=0, count=2, amplitude=1.0):
    """Trigonometric test field with one random profile per component (real and imaginary parts)."""
    rng = np.random.default_rng(seed)
    values = np.zeros((grid.size, dof), dtype=complex)
    for s in range(dof):
        real = TrigPolynomial.random(grid.n, rng, count=count, amplitude=amplitude)
        imag = TrigPolynomial.random(grid.n, rng, count=count, amplitude=amplitude)
        values[:, s] = real.values(grid.points) + 1j * imag.values(grid.points)
    return values.reshape(-1)


# Global instance
dirac_fd_service = DiracFDService()
