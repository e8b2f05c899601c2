"""
Metric geometry in boundary-normal charts.

Christoffel symbols, curvature and the boundary Gram-Schmidt frame are
computed on jets, so the same formulas give grid samples (order-2 jets at a
batch of points) and exact Taylor data at a boundary point for the symbol
engine.  The parallel frame on a grid is transported along normal lines with
classical RK4 together with its tangential variation.
"""
import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from ..errors import DimensionError, JetOrderError, SolverError
from . import jets as jetlib
from .jets import Jet

logger = logging.getLogger(__name__)


def _reshape_last(jet, shape, count):
    """Reshape the trailing `count` value axes of a jet."""
    return jet.apply(lambda c: c.reshape(c.shape[:c.ndim - count] + shape))


def _move(jet, source, destination):
    return jet.apply(lambda c: np.moveaxis(c, source, destination))


def christoffel_jet(g: Jet) -> Jet:
    """Gamma^i_jk as a jet of shape (..., i, j, k); order drops by one."""
    n = g.shape[-1]
    if g.order < 1:
        raise JetOrderError("Christoffel symbols need a metric jet of order >= 1")
    ginv = jetlib.matrix_inverse(g).truncate(g.order - 1)
    # D[..., k, l, m] = d_k g_lm
    D = Jet.stack([g.diff(k) for k in range(n)])
    D = _move(D, -1, -3)
    # lowered[l, j, k] = 1/2 (d_j g_lk + d_k g_lj - d_l g_jk)
    lowered = (_move(D, -3, -2) + _move(D, -3, -1) - D) * 0.5
    raised = ginv @ _reshape_last(lowered, (n, n * n), 3)
    return _reshape_last(raised, (n, n, n), 2)


def christoffel_derivatives(gamma: Jet):
    """List over l of d_l Gamma^i_jk."""
    n = gamma.shape[-1]
    return [gamma.diff(l) for l in range(n)]


def ricci_jet(gamma: Jet) -> Jet:
    """Ric_jl = d_i G^i_lj - d_l G^i_ij + G^i_im G^m_lj - G^i_lm G^m_ij."""
    n = gamma.shape[-1]
    order = gamma.order - 1
    dgamma = christoffel_derivatives(gamma)
    divergence = dgamma[0][..., 0, :, :]
    for i in range(1, n):
        divergence = divergence + dgamma[i][..., i, :, :]
    contracted = gamma[..., 0, 0, :]
    for i in range(1, n):
        contracted = contracted + gamma[..., i, i, :]
    gradient = Jet.stack([contracted.diff(l) for l in range(n)]).T
    gamma = gamma.truncate(order)
    contracted = contracted.truncate(order)
    flat = _reshape_last(gamma, (n, n * n), 3)
    third = _reshape_last(contracted[..., None, :] @ flat, (n, n), 2)
    left = _reshape_last(_move(gamma, -3, -2), (n, n * n), 3)
    right = _reshape_last(_move(gamma, -3, -2), (n * n, n), 3)
    fourth = left @ right
    return divergence - gradient + third - fourth


def ricci_scalar_jet(g: Jet) -> Jet:
    gamma = christoffel_jet(g)
    ricci = ricci_jet(gamma)
    ginv = jetlib.matrix_inverse(g.truncate(ricci.order))
    return (ginv @ ricci).trace()


def boundary_frame_jet(g: Jet) -> Jet:
    """Gram-Schmidt frame of d_1..d_{n-1} on x^n = 0 plus e_n = d_n, as E[..., a, i]."""
    n = g.shape[-1]
    m = n - 1
    block = g.boundary_trace()[..., :m, :m]
    lower = jetlib.cholesky(block)
    upper = jetlib.matrix_inverse(lower).T
    coeffs = np.zeros(upper.coeffs.shape[:-2] + (n, n), dtype=upper.dtype)
    coeffs[..., :m, :m] = upper.coeffs
    coeffs[0, ..., m, m] = 1.0
    return Jet(coeffs, g.nvars, upper.order)


@dataclass(eq=False)
class FrameData:
    """Parallel orthonormal frame on grid points.

    E[p, a, i] are the chart components of e_i, h = E^{-1} so that
    d_a = sum_i h[i, a] e_i, dE[b] = d_b E, omega[a][i, j] = omega^i_j(d_a)
    and christoffel[p, i, j, k] = Gamma^i_jk.
    """

    points: np.ndarray
    E: np.ndarray
    h: np.ndarray
    dE: np.ndarray
    omega: np.ndarray
    christoffel: np.ndarray

    @property
    def n(self):
        return self.E.shape[-1]

    def orthonormality_residual(self, g):
        gram = np.swapaxes(self.E, -1, -2) @ g @ self.E
        return float(np.max(np.abs(gram - np.eye(self.n))))

    def antisymmetry_residual(self):
        return float(np.max(np.abs(self.omega + np.swapaxes(self.omega, -1, -2))))


@dataclass(eq=False)
class FrameJets:
    """Frame, connection one-forms and Christoffels as jets at one boundary point."""

    E: Jet
    omega: list
    christoffel: Jet


class GeometryService:
    """Metric-derived quantities for the slab chart"""

    def metric_jet(self, metric, points, order):
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != metric.n:
            raise DimensionError(f"points of dimension {points.shape[-1]} for an n={metric.n} metric")
        return metric.jet(points, order)

    def christoffel(self, metric, x):
        return christoffel_jet(self.metric_jet(metric, x, 1)).value()

    def christoffel_with_derivatives(self, metric, x):
        """Gamma and its first derivatives (derivative index first)."""
        gamma = christoffel_jet(self.metric_jet(metric, x, 2))
        return gamma.value(), np.stack([d.value() for d in christoffel_derivatives(gamma)])

    def scalar_curvature(self, metric, x):
        return ricci_scalar_jet(self.metric_jet(metric, x, 2)).value()

    def e_term(self, metric, x_boundary):
        """E = -1/2 g^{ab} d_n g_ab on x^n = 0."""
        x_boundary = np.asarray(x_boundary, dtype=float)
        x = np.concatenate([x_boundary[..., :metric.m], np.zeros(x_boundary.shape[:-1] + (1,))], axis=-1)
        g = self.metric_jet(metric, x, 1)
        m = metric.m
        block = g.value()[..., :m, :m]
        normal = g.diff(metric.n - 1).value()[..., :m, :m]
        return -0.5 * np.trace(np.linalg.solve(block, normal), axis1=-2, axis2=-1)

    def volume_element(self, metric, points):
        """sqrt(det g) at every point."""
        return np.sqrt(np.linalg.det(metric.values(points)))

    def levi_civita_one_form(self, E, dE, christoffel):
        """omega_a = E^{-1} (d_a E + Gamma_a E) with (Gamma_a)^i_j = Gamma^i_aj."""
        n = E.shape[-1]
        h = np.linalg.inv(E)
        return np.stack([h @ (dE[a] + christoffel[..., :, a, :] @ E) for a in range(n)])

    def parallel_frame(self, metric, grid, substeps=None) -> FrameData:
        """Transport the boundary Gram-Schmidt frame along x^n with RK4."""
        substeps = substeps or getattr(settings, 'DN_RK4_SUBSTEPS', 4)
        n, m = metric.n, metric.m
        boundary = grid.boundary_points
        start = boundary_frame_jet(metric.jet(boundary, 1))
        E = start.value()
        V = np.stack([start.partial(_unit(n, a)) for a in range(m)])

        def rhs(z, E, V):
            points = boundary.copy()
            points[..., -1] = z
            gamma, dgamma = self.christoffel_with_derivatives(metric, points)
            normal = gamma[..., :, n - 1, :]
            dE = -normal @ E
            dV = np.stack([-dgamma[a][..., :, n - 1, :] @ E - normal @ V[a] for a in range(m)])
            return dE, dV

        frames, variations = [E], [V]
        z_nodes = grid.z
        for cell in range(len(z_nodes) - 1):
            z = z_nodes[cell]
            step = (z_nodes[cell + 1] - z) / substeps
            for _ in range(substeps):
                k1 = rhs(z, E, V)
                k2 = rhs(z + step / 2, E + step / 2 * k1[0], V + step / 2 * k1[1])
                k3 = rhs(z + step / 2, E + step / 2 * k2[0], V + step / 2 * k2[1])
                k4 = rhs(z + step, E + step * k3[0], V + step * k3[1])
                E = E + step / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
                V = V + step / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
                z += step
            if not (np.all(np.isfinite(E)) and np.all(np.isfinite(V))):
                raise SolverError("frame transport produced non-finite values", x_n=z_nodes[cell + 1])
            frames.append(E)
            variations.append(V)
        logger.debug("Transported frame over %d normal cells (%d substeps each)", len(z_nodes) - 1, substeps)

        points = grid.points
        E = np.stack(frames).reshape(-1, n, n)
        gamma = self.christoffel(metric, points)
        dE = np.zeros((n,) + E.shape)
        dE[:m] = np.stack(variations, axis=1).reshape(m, -1, n, n)
        dE[n - 1] = -gamma[..., :, n - 1, :] @ E
        omega = self.levi_civita_one_form(E, dE, gamma)
        return FrameData(points=points, E=E, h=np.linalg.inv(E), dE=dE, omega=omega, christoffel=gamma)

    def frame_jets(self, metric, x_boundary, order) -> FrameJets:
        """Parallel frame and omega as jets at a boundary point by Picard iteration in x^n.

        E has the full input order; omega and Christoffels lose one.
        """
        point = np.asarray(x_boundary, dtype=float).copy()
        point[-1] = 0.0
        return self.frame_jets_from_metric(metric.jet(point, order))

    def frame_jets_from_metric(self, g: Jet) -> FrameJets:
        """Same construction starting from a metric jet taken on x^n = 0."""
        n = g.shape[-1]
        order = g.order
        gamma = christoffel_jet(g)
        normal = gamma[..., :, n - 1, :]
        start = boundary_frame_jet(g)
        E = start
        for _ in range(order + 1):
            E = start - (normal @ E).integrate(n - 1)
        h = jetlib.matrix_inverse(E.truncate(order - 1))
        omega = [h @ (E.diff(a) + gamma[..., :, a, :] @ E) for a in range(n)]
        return FrameJets(E=E, omega=omega, christoffel=gamma)


def _unit(n, k):
    e = np.zeros(n, dtype=int)
    e[k] = 1
    return e


# Global instance
geometry_service = GeometryService()
