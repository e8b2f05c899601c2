"""
Spin connection and the twisted connection theta = omega^s (x) Id_N + Id_k (x) A.

Every map here is linear on the value axes, so it accepts grid arrays
(leading batch axes) as well as jets.
"""
import logging
from dataclasses import dataclass
from typing import List, Union

import numpy as np

from ..errors import DimensionError
from .clifford import GammaRep
from .jets import Jet

logger = logging.getLogger(__name__)

Field = Union[np.ndarray, Jet]


def _linear(value: Field, fn):
    if isinstance(value, Jet):
        return value.apply(fn)
    return fn(np.asarray(value))


def _gamma_products(rep: GammaRep):
    return np.einsum('iab,jbc->ijac', rep.gammas, rep.gammas)


@dataclass(eq=False)
class TwistedConnection:
    """theta_a for a = 1..n; entries are (kN)x(kN) arrays or jets."""

    theta: List[Field]
    k: int
    N: int

    @property
    def n(self):
        return len(self.theta)

    @property
    def normal(self):
        return self.theta[-1]

    def skew_residual(self):
        worst = 0.0
        for component in self.theta:
            value = component.value() if isinstance(component, Jet) else component
            worst = max(worst, float(np.max(np.abs(value + np.conj(np.swapaxes(value, -1, -2))))))
        return worst


class SpinService:
    """Spin and twisted connection coefficients"""

    def spin_connection_coeffs(self, omega: List[Field], rep: GammaRep) -> List[Field]:
        """omega^s_a = -1/4 sum_ij omega_a[i, j] gamma_i gamma_j."""
        products = _gamma_products(rep)
        return [
            _linear(component, lambda c: -0.25 * np.einsum('...ij,ijab->...ab', c, products))
            for component in omega
        ]

    def build_twisted_connection(self, omega_s: List[Field], A: List[Field], rep: GammaRep, N: int) -> TwistedConnection:
        if len(omega_s) != len(A):
            raise DimensionError(f"{len(omega_s)} spin components against {len(A)} gauge components")
        k = rep.k
        identity_k = np.eye(k)
        identity_n = np.eye(N)
        theta = []
        for spin_part, gauge_part in zip(omega_s, A):
            if gauge_part.shape[-1] != N:
                raise DimensionError(f"connection of rank {gauge_part.shape[-1]}, expected {N}")
            if spin_part.shape[-1] != k:
                raise DimensionError(f"spin coefficients of rank {spin_part.shape[-1]}, expected {k}")
            lifted_spin = _linear(spin_part, lambda c: _kron(c, identity_n))
            lifted_gauge = _linear(gauge_part, lambda c: _kron_left(identity_k, c))
            theta.append(lifted_spin + lifted_gauge)
        return TwistedConnection(theta=theta, k=k, N=N)

    def split_theta(self, theta_a: Field, rep: GammaRep, N: int):
        """Inverse of the twisted lift: (A_a, omega_a[i, j]).

        A_a is the normalised partial trace over S; omega_a comes from projecting
        onto the orthonormal family gamma_i gamma_j (x) Id_N.
        """
        k = rep.k
        products = _gamma_products(rep)

        def partial_trace(c):
            blocks = c.reshape(c.shape[:-2] + (k, N, k, N))
            return np.einsum('...iaib->...ab', blocks) / k

        def projection(c):
            blocks = c.reshape(c.shape[:-2] + (k, N, k, N))
            spin_block = np.einsum('...iaja->...ij', blocks)
            # (1/(kN)) trace((gamma_p gamma_q)^dagger theta) for every (p, q)
            coeff = np.einsum('pqji,...ji->...pq', products.conj(), spin_block) / (k * N)
            omega = -2.0 * coeff.real
            return (omega - np.swapaxes(omega, -1, -2)) / 2.0

        return _linear(theta_a, partial_trace), _linear(theta_a, projection)


def _kron(a, identity):
    """Batched a (x) identity on the trailing two axes."""
    r = identity.shape[0]
    out = np.einsum('...ij,ab->...iajb', a, identity)
    return out.reshape(a.shape[:-2] + (a.shape[-2] * r, a.shape[-1] * r))


def _kron_left(identity, a):
    r = identity.shape[0]
    out = np.einsum('ij,...ab->...iajb', identity, a)
    return out.reshape(a.shape[:-2] + (r * a.shape[-2], r * a.shape[-1]))


# Global instance
spin_service = SpinService()
