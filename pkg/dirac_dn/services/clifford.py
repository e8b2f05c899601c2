"""
Irreducible complex Clifford representations: gamma matrices with
gamma_i gamma_j + gamma_j gamma_i = -2 delta_ij.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Tuple

import numpy as np
import pandas as pd

from ..errors import DimensionError

logger = logging.getLogger(__name__)

MAX_DIMENSION = 8

_SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
_SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True, eq=False)
class GammaRep:
    n: int
    k: int
    gammas: np.ndarray = field(repr=False)

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        return [(i, j) for i in range(self.n) for j in range(i + 1, self.n)]

    @property
    def pair_products(self):
        """gamma_i gamma_j for i < j, stacked in the order of `pairs`."""
        if not self.pairs:
            return np.zeros((0, self.k, self.k), dtype=complex)
        return np.array([self.gammas[i] @ self.gammas[j] for i, j in self.pairs])

    @property
    def normal(self):
        """gamma(nu) for the inward normal e_n."""
        return self.gammas[-1]


class CliffordService:
    """Builds and validates gamma matrices"""

    def build_gamma(self, n: int) -> GammaRep:
        if not 1 <= n <= MAX_DIMENSION:
            raise DimensionError(f"Clifford representations are built for 1 <= n <= {MAX_DIMENSION}, got {n}")
        return _build(n)

    def clifford_mul(self, rep: GammaRep, v):
        """sum_i v_i gamma_i; v may carry leading batch axes."""
        v = np.asarray(v)
        if v.shape[-1] != rep.n:
            raise DimensionError(f"vector of length {v.shape[-1]} for a rank-{rep.n} representation")
        return np.einsum('...i,ijk->...jk', v, rep.gammas)

    def relation_residuals(self, rep: GammaRep) -> dict:
        gammas = rep.gammas
        identity = np.eye(rep.k)
        anticommutation = 0.0
        for i in range(rep.n):
            for j in range(rep.n):
                defect = gammas[i] @ gammas[j] + gammas[j] @ gammas[i] + 2.0 * (i == j) * identity
                anticommutation = max(anticommutation, np.max(np.abs(defect)))
        adjoints = np.conj(np.swapaxes(gammas, -1, -2))
        skew = np.max(np.abs(adjoints + gammas))
        unitary = np.max(np.abs(adjoints @ gammas - identity))

        products = rep.pair_products
        if len(products):
            gram = np.einsum('pab,qab->pq', products.conj(), products) / rep.k
            orthonormal = np.max(np.abs(gram - np.eye(len(products))))
            traceless = np.max(np.abs(np.trace(products, axis1=1, axis2=2))) / rep.k
        else:
            orthonormal = traceless = 0.0
        return {
            'anticommutation': float(anticommutation),
            'skew_hermitian': float(skew),
            'unitary': float(unitary),
            'pair_orthonormality': float(orthonormal),
            'pair_traceless': float(traceless),
        }

    def check_relations(self, rep: GammaRep) -> float:
        return max(self.relation_residuals(rep).values())

    def gamma_frame(self, rep: GammaRep) -> pd.DataFrame:
        """Row-major dump of every gamma entry with re/im columns."""
        index = np.indices(rep.gammas.shape).reshape(3, -1)
        values = rep.gammas.reshape(-1)
        return pd.DataFrame({
            'gamma': index[0] + 1,
            'row': index[1],
            'col': index[2],
            're': values.real,
            'im': values.imag,
        })


@lru_cache(maxsize=None)
def _build(n):
    if n == 1:
        gammas = np.array([[[1j]]])
    elif n == 2:
        gammas = np.array([1j * _SIGMA1, 1j * _SIGMA2])
    else:
        lower = _build(n - 2).gammas
        k = lower.shape[-1]
        gammas = np.array(
            [np.kron(g, _SIGMA3) for g in lower]
            + [np.kron(np.eye(k), 1j * _SIGMA1), np.kron(np.eye(k), 1j * _SIGMA2)]
        )
    gammas.setflags(write=False)
    logger.debug("Built gamma matrices for n=%d (k=%d)", n, gammas.shape[-1])
    return GammaRep(n=n, k=gammas.shape[-1], gammas=gammas)


# Global instance
clifford_service = CliffordService()
