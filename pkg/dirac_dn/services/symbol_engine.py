"""
Forward symbol calculus for the factorization of D_A^2 + Z - m^2.

In the boundary-normal chart the operator reads -nabla_n^2 + E nabla_n + Q
with Q tangential, and it factors modulo smoothing operators as
-(nabla_n - E + B)(nabla_n - B), B = Op(b) tangential of order one.  The
full symbol b = b_1 + b_0 + b_-1 + ... solves

    b o b + d_n b + theta_n b - b o theta_n - E b = q_2 + q_1 + q_0

degree by degree, with b_1 = -|xi|_g.  Coefficients are jets at one
boundary point, so the recursion is exact up to the jet order.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from ..errors import DimensionError, JetOrderError
from . import jets as jetlib
from .clifford import GammaRep
from .geometry import FrameJets, geometry_service, ricci_scalar_jet
from .jets import Jet
from .spin import TwistedConnection, spin_service
from .symbols import HomogeneousSymbol, SymbolCalculus

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class SymbolInputs:
    """Boundary jets of (g, A, Z, m) and everything the recursion derives from them."""

    rep: GammaRep
    N: int
    g: Jet
    A: List[Jet]
    Z: Jet
    m: float
    frame: FrameJets
    theta: TwistedConnection
    provenance: str = 'exact-forward'

    @property
    def n(self):
        return self.g.shape[-1]

    @property
    def order(self):
        return self.g.order

    @property
    def size(self):
        return self.rep.k * self.N

    @cached_property
    def ginv_full(self):
        return jetlib.matrix_inverse(self.g)

    @cached_property
    def ginv(self):
        """Inverse of the tangential block (boundary-normal form makes it a sub-block)."""
        m = self.n - 1
        return self.ginv_full[..., :m, :m]

    @cached_property
    def identity(self):
        return Jet.constant(np.eye(self.size, dtype=complex), self.n, self.order)

    @cached_property
    def e_term(self):
        """E = -1/2 g^{ab} d_n g_ab as a scalar jet."""
        m = self.n - 1
        normal = self.g.diff(self.n - 1)[..., :m, :m]
        return (self.ginv.truncate(normal.order) @ normal).trace() * -0.5

    @cached_property
    def scalar_curvature(self):
        return ricci_scalar_jet(self.g)

    @cached_property
    def contracted_christoffel(self):
        """g^{ab} Gamma^c_ab for tangential c, as a list of scalar jets."""
        m = self.n - 1
        gamma = self.frame.christoffel
        ginv = self.ginv.truncate(gamma.order)
        return [(ginv @ gamma[..., c, :m, :m]).trace() for c in range(m)]

    @cached_property
    def curvature_term(self):
        """1/2 sum_ab c(dx^a) c(dx^b) (x) F_ab, the twisting curvature endomorphism."""
        n, k, N = self.n, self.rep.k, self.N
        gammas = self.rep.gammas
        clifford = [
            self.frame.E[..., a, :].apply(lambda c: np.einsum('...j,jst->...st', c, gammas))
            for a in range(n)
        ]
        identity_n = np.eye(N)
        identity_k = np.eye(k)
        total = None
        for a in range(n):
            for b in range(n):
                if a == b:
                    continue
                F = self.A[b].diff(a) - self.A[a].diff(b) + self.A[a] @ self.A[b] - self.A[b] @ self.A[a]
                spin = (clifford[a] @ clifford[b]).apply(
                    lambda c: np.einsum('...ij,ab->...iajb', c, identity_n).reshape(c.shape[:-2] + (k * N, k * N))
                )
                bundle = F.apply(
                    lambda c: np.einsum('ij,...ab->...iajb', identity_k, c).reshape(c.shape[:-2] + (k * N, k * N))
                )
                term = (spin @ bundle) * 0.5
                total = term if total is None else total + term
        return total


@dataclass(eq=False)
class SymbolSum:
    """Homogeneous terms b_d keyed by degree."""

    symbols: Dict[int, HomogeneousSymbol]
    inputs: Optional[SymbolInputs] = field(default=None, repr=False)

    @property
    def degrees(self):
        return sorted(self.symbols, reverse=True)

    @property
    def lowest(self):
        return min(self.symbols)

    def __getitem__(self, degree):
        return self.symbols[degree]

    def evaluate(self, xi, degrees=None):
        degrees = self.degrees if degrees is None else degrees
        return sum(self.symbols[d].evaluate(xi) for d in degrees)


class SymbolEngineService:
    """Symbols of the factorization operator from boundary jets"""

    def inputs_from_jets(self, g: Jet, A: List[Jet], rep: GammaRep, Z: Optional[Jet] = None,
                         m=0.0, provenance='exact-forward') -> SymbolInputs:
        n = g.shape[-1]
        if n != rep.n:
            raise DimensionError(f"metric of dimension {n} for an n={rep.n} representation")
        if len(A) != n:
            raise DimensionError(f"{len(A)} connection components for n={n}")
        value = g.value()
        if abs(value[n - 1, n - 1] - 1.0) > 1e-12 or np.max(np.abs(value[n - 1, :n - 1]), initial=0.0) > 1e-12:
            raise DimensionError("metric jet is not in boundary-normal form")
        if np.min(np.linalg.eigvalsh(value)) <= 0.0:
            raise DimensionError("metric jet is not positive definite")
        N = A[0].shape[-1]
        size = rep.k * N
        if Z is None:
            Z = Jet.constant(np.zeros((size, size), dtype=complex), n, g.order)
        elif Z.shape[-2:] != (size, size):
            raise DimensionError(f"potential of shape {Z.shape}, expected ({size}, {size})")
        frame = geometry_service.frame_jets_from_metric(g)
        omega_s = spin_service.spin_connection_coeffs(frame.omega, rep)
        theta = spin_service.build_twisted_connection(omega_s, A, rep, N)
        return SymbolInputs(rep=rep, N=N, g=g, A=A, Z=Z, m=float(m), frame=frame, theta=theta,
                            provenance=provenance)

    def inputs_from_fields(self, metric, connection, rep: GammaRep, point, order,
                           potential=None, m=0.0) -> SymbolInputs:
        """Jets of the family fields at the boundary point (x', 0)."""
        point = np.asarray(point, dtype=float)
        if point.shape[-1] == metric.m:
            point = np.concatenate([point, [0.0]])
        point = point.copy()
        point[-1] = 0.0
        g = metric.jet(point, order)
        A = connection.jets(point, order)
        Z = potential.jet(point, order) if potential is not None else None
        return self.inputs_from_jets(g, A, rep, Z=Z, m=m)

    def _symbol(self, inputs, degree, terms):
        return HomogeneousSymbol(degree, inputs.ginv, inputs.size, terms)

    def q_symbols(self, inputs: SymbolInputs) -> Dict[int, HomogeneousSymbol]:
        """Tangential symbols q_2, q_1, q_0 of Q (theta_n enters through the factorization)."""
        m = inputs.n - 1
        zero = (0,) * m
        ginv = inputs.ginv
        identity = inputs.identity
        theta = inputs.theta.theta
        gamma = inputs.contracted_christoffel

        def unit(*indices):
            mu = [0] * m
            for index in indices:
                mu[index] += 1
            return tuple(mu)

        q2 = self._symbol(inputs, 2, {})
        for a in range(m):
            for b in range(m):
                q2._accumulate((unit(a, b), 0), identity * ginv[..., a, b])
        q2._canonicalize()

        q1 = self._symbol(inputs, 1, {})
        for a in range(m):
            for b in range(m):
                q1._accumulate((unit(b), 0), (theta[a] * ginv[..., a, b]) * -2j)
        for c in range(m):
            q1._accumulate((unit(c), 0), identity * (gamma[c] * 1j))
        q1._canonicalize()

        constant = identity * (-inputs.m ** 2) + inputs.Z
        constant = constant + identity * (inputs.scalar_curvature * 0.25) + inputs.curvature_term
        for a in range(m):
            for b in range(m):
                coefficient = ginv[..., a, b]
                constant = constant - theta[b].diff(a) * coefficient - (theta[a] @ theta[b]) * coefficient
        for c in range(m):
            constant = constant + theta[c] * gamma[c]
        q0 = self._symbol(inputs, 0, {(zero, 0): constant})
        return {2: q2, 1: q1, 0: q0}

    def b1(self, inputs: SymbolInputs) -> HomogeneousSymbol:
        """Principal symbol -|xi|_g Id."""
        zero = (0,) * (inputs.n - 1)
        return self._symbol(inputs, 1, {(zero, -1): -inputs.identity})

    def _normal_symbol(self, inputs):
        zero = (0,) * (inputs.n - 1)
        return {0: self._symbol(inputs, 0, {(zero, 0): inputs.theta.normal})}

    def _degree_part(self, inputs, calculus, symbols, degree, theta_n):
        """Degree-`degree` part of b o b + d_n b + theta_n b - b o theta_n - E b over the given b's."""
        total = self._symbol(inputs, degree, {})
        product = calculus.compose(symbols, symbols, degree, degrees={degree})
        if degree in product:
            total = total + product[degree]
        if degree in symbols:
            own = symbols[degree]
            total = total + own.diff_x(inputs.n - 1)
            total = total + own.left(inputs.theta.normal) - own.scale(inputs.e_term)
        commutator = calculus.compose(symbols, theta_n, degree, degrees={degree})
        if degree in commutator:
            total = total - commutator[degree]
        return total

    def solve_recursion(self, inputs: SymbolInputs, K) -> SymbolSum:
        """b_1, b_0, ..., b_{1-K}; each step divides the known part by 2|xi|_g."""
        if K < 1:
            raise JetOrderError(f"recursion depth must be >= 1, got {K}")
        if inputs.order < max(K + 1, 2):
            raise JetOrderError(f"depth {K} needs boundary jets of order >= {max(K + 1, 2)}, got {inputs.order}")
        q = self.q_symbols(inputs)
        calculus = SymbolCalculus()
        theta_n = self._normal_symbol(inputs)
        symbols = {1: self.b1(inputs)}
        for degree in range(1, 2 - K - 1, -1):
            remainder = self._degree_part(inputs, calculus, symbols, degree, theta_n)
            if degree in q:
                remainder = remainder - q[degree]
            symbols[degree - 1] = remainder.times_inverse_norm(0.5)
            logger.debug("b_%d: %d terms", degree - 1, len(symbols[degree - 1].terms))
        return SymbolSum(symbols=symbols, inputs=inputs)

    def symbol_residual(self, inputs: SymbolInputs, b: SymbolSum) -> Dict[int, HomogeneousSymbol]:
        """LHS - RHS of the symbol equation in every degree the recursion fixes."""
        q = self.q_symbols(inputs)
        calculus = SymbolCalculus()
        theta_n = self._normal_symbol(inputs)
        residual = {}
        for degree in range(2, b.lowest, -1):
            part = self._degree_part(inputs, calculus, b.symbols, degree, theta_n)
            if degree in q:
                part = part - q[degree]
            residual[degree] = part
        return residual

    def residual_at(self, residual: Dict[int, HomogeneousSymbol], rng, count=20):
        """Largest entry of every residual degree over `count` random covectors."""
        worst = {}
        for degree, symbol in residual.items():
            values = [0.0]
            for _ in range(count):
                xi = rng.standard_normal(symbol.m)
                values.append(float(np.max(np.abs(symbol.evaluate(xi)))) if symbol.terms else 0.0)
            worst[degree] = max(values)
        return worst

    def symbol_compose(self, p: SymbolSum, q: SymbolSum, depth) -> SymbolSum:
        """Composition keeping degrees down to top(p) + top(q) - depth."""
        top = max(p.symbols) + max(q.symbols)
        available = min(min(s.order for s in q.symbols.values()), min(s.order for s in p.symbols.values()))
        if depth > available:
            raise JetOrderError(f"composition depth {depth} exceeds the jet order {available}")
        calculus = SymbolCalculus()
        product = calculus.compose(p.symbols, q.symbols, top - depth)
        return SymbolSum(symbols={d: s for d, s in product.items() if d >= top - depth}, inputs=p.inputs)

    def identity_symbol(self, inputs: SymbolInputs) -> SymbolSum:
        zero = (0,) * (inputs.n - 1)
        return SymbolSum(symbols={0: self._symbol(inputs, 0, {(zero, 0): inputs.identity})}, inputs=inputs)

    def dump(self, b: SymbolSum) -> pd.DataFrame:
        rows = [row for degree in b.degrees for row in b[degree].dump_rows()]
        columns = ['degree', 'xi_power', 'norm_power', 'x_monomial', 'row', 'col', 're', 'im']
        return pd.DataFrame(rows, columns=columns)


# Global instance
symbol_service = SymbolEngineService()
