"""
Homogeneous matrix-valued symbols in the tangential covector xi.

A term is M(x) xi^mu |xi|_g^{-p} with M a matrix jet and
|xi|_g^2 = g^{ab}(x) xi_a xi_b; its degree is |mu| - p.  Powers p <= -2 are
expanded through |xi|^2 = g^{ab} xi_a xi_b, so stored terms have p >= -1.
"""
import itertools
import math
from collections import defaultdict
from typing import Dict, Iterable, Tuple

import numpy as np

from ..errors import DimensionError, JetOrderError
from . import jets as jetlib
from .jets import Jet

Key = Tuple[Tuple[int, ...], int]


def _shift(mu, *indices):
    mu = list(mu)
    for index in indices:
        mu[index] += 1
    return tuple(mu)


class HomogeneousSymbol:
    """Sum of terms of one fixed degree sharing the tangential inverse metric `ginv`."""

    def __init__(self, degree, ginv: Jet, size, terms: Dict[Key, Jet] = None):
        self.degree = degree
        self.ginv = ginv
        self.size = size
        self.terms = {}
        for key, coeff in (terms or {}).items():
            self._accumulate(key, coeff)
        self._canonicalize()

    @property
    def m(self):
        return self.ginv.shape[-1]

    @property
    def nvars(self):
        return self.ginv.nvars

    @property
    def order(self):
        """Lowest jet order over the terms."""
        if not self.terms:
            return self.ginv.order
        return min(coeff.order for coeff in self.terms.values())

    def _accumulate(self, key, coeff):
        mu, p = key
        if sum(mu) - p != self.degree:
            raise DimensionError(f"term xi^{mu} |xi|^-{p} does not have degree {self.degree}")
        if key in self.terms:
            self.terms[key] = self.terms[key] + coeff
        else:
            self.terms[key] = coeff

    def _canonicalize(self):
        while any(p <= -2 for _, p in self.terms):
            pending = [(key, coeff) for key, coeff in self.terms.items() if key[1] <= -2]
            for key, coeff in pending:
                del self.terms[key]
                mu, p = key
                for a in range(self.m):
                    for b in range(self.m):
                        self._accumulate((_shift(mu, a, b), p + 2), coeff * self.ginv[..., a, b])
        self.terms = {key: coeff for key, coeff in self.terms.items() if not coeff.is_zero()}

    def copy_with(self, terms, degree=None):
        return HomogeneousSymbol(self.degree if degree is None else degree, self.ginv, self.size, terms)

    @classmethod
    def zero(cls, degree, ginv, size):
        return cls(degree, ginv, size)

    def is_zero(self):
        return not self.terms

    # Algebra

    def __add__(self, other):
        if other.degree != self.degree:
            raise DimensionError(f"adding symbols of degrees {self.degree} and {other.degree}")
        result = self.copy_with(dict(self.terms))
        for key, coeff in other.terms.items():
            result._accumulate(key, coeff)
        result._canonicalize()
        return result

    def __neg__(self):
        return self.copy_with({key: -coeff for key, coeff in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def scale(self, factor):
        """Multiply by a constant or by a scalar jet."""
        return self.copy_with({key: coeff * factor for key, coeff in self.terms.items()})

    def left(self, matrix: Jet):
        """matrix(x) @ symbol."""
        return self.copy_with({key: matrix @ coeff for key, coeff in self.terms.items()})

    def right(self, matrix: Jet):
        return self.copy_with({key: coeff @ matrix for key, coeff in self.terms.items()})

    def __matmul__(self, other):
        """Pointwise product in (x, xi) (no derivative terms)."""
        terms = defaultdict(list)
        for (mu1, p1), c1 in self.terms.items():
            for (mu2, p2), c2 in other.terms.items():
                mu = tuple(a + b for a, b in zip(mu1, mu2))
                terms[(mu, p1 + p2)].append(c1 @ c2)
        merged = {key: _sum(values) for key, values in terms.items()}
        return HomogeneousSymbol(self.degree + other.degree, self.ginv, self.size, merged)

    def times_inverse_norm(self, factor=1.0):
        """symbol * factor / |xi|_g (degree drops by one)."""
        terms = {(mu, p + 1): coeff * factor for (mu, p), coeff in self.terms.items()}
        return HomogeneousSymbol(self.degree - 1, self.ginv, self.size, terms)

    # Calculus

    def diff_xi(self, alpha):
        result = HomogeneousSymbol(self.degree - 1, self.ginv, self.size)
        for (mu, p), coeff in self.terms.items():
            if mu[alpha]:
                lowered = list(mu)
                lowered[alpha] -= 1
                result._accumulate((tuple(lowered), p), coeff * float(mu[alpha]))
            if p:
                for beta in range(self.m):
                    result._accumulate((_shift(mu, beta), p + 2), coeff * (self.ginv[..., alpha, beta] * float(-p)))
        result._canonicalize()
        return result

    def diff_x(self, var):
        """d/dx^var; jet orders drop by one."""
        if self.order < 1:
            raise JetOrderError(f"symbol of degree {self.degree} has no x-derivatives left")
        dginv = self.ginv.diff(var)
        result = HomogeneousSymbol(self.degree, self.ginv, self.size)
        for (mu, p), coeff in self.terms.items():
            result._accumulate((mu, p), coeff.diff(var))
            if p:
                for beta in range(self.m):
                    for gamma in range(self.m):
                        result._accumulate(
                            (_shift(mu, beta, gamma), p + 2),
                            coeff.truncate(coeff.order - 1) * (dginv[..., beta, gamma] * (-p / 2.0)),
                        )
        result._canonicalize()
        return result

    # Evaluation

    def evaluate(self, xi, displacement=None):
        """Matrix value at covector xi (length m) and x = x0 + displacement."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.m:
            raise DimensionError(f"covector of length {xi.shape[-1]}, expected {self.m}")
        if displacement is None:
            ginv = self.ginv.value()
        else:
            ginv = self.ginv.evaluate(displacement)
        norm = np.sqrt(xi @ ginv @ xi)
        if norm == 0.0:
            raise DimensionError("symbols are not evaluated at xi = 0")
        value = np.zeros((self.size, self.size), dtype=complex)
        for (mu, p), coeff in self.terms.items():
            monomial = np.prod(xi ** np.array(mu)) * norm ** (-p)
            coefficient = coeff.value() if displacement is None else coeff.evaluate(displacement)
            value = value + monomial * coefficient
        return value

    def evaluate_jet(self, xi):
        """Matrix jet in x at a fixed covector."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.m:
            raise DimensionError(f"covector of length {xi.shape[-1]}, expected {self.m}")
        norm_sq = None
        for a in range(self.m):
            for b in range(self.m):
                term = self.ginv[..., a, b] * (xi[a] * xi[b])
                norm_sq = term if norm_sq is None else norm_sq + term
        if norm_sq.value() <= 0.0:
            raise DimensionError("symbols are not evaluated at xi = 0")
        norm = jetlib.sqrt(norm_sq)
        total = Jet.constant(np.zeros((self.size, self.size), dtype=complex), self.nvars, self.order)
        for (mu, p), coeff in self.terms.items():
            monomial = float(np.prod(xi ** np.array(mu)))
            total = total + coeff * (norm ** (-p)) * monomial
        return total

    def max_coefficient(self):
        if not self.terms:
            return 0.0
        return max(float(np.max(np.abs(coeff.coeffs))) for coeff in self.terms.values())

    def dump_rows(self) -> Iterable[dict]:
        """One row per (term, monomial, matrix entry) with re/im parts."""
        for (mu, p), coeff in sorted(self.terms.items()):
            exponents = coeff.table.exponents
            for index, exponent in enumerate(exponents):
                block = coeff.coeffs[index]
                for (row, col), value in np.ndenumerate(block):
                    if value == 0:
                        continue
                    yield {
                        'degree': self.degree,
                        'xi_power': ' '.join(str(a) for a in mu),
                        'norm_power': -p,
                        'x_monomial': ' '.join(str(a) for a in exponent),
                        'row': row,
                        'col': col,
                        're': float(np.real(value)),
                        'im': float(np.imag(value)),
                    }

    def __repr__(self):
        return f"HomogeneousSymbol(degree={self.degree}, terms={len(self.terms)})"


def _sum(values):
    total = values[0]
    for value in values[1:]:
        total = total + value
    return total


def multi_indices(m, total):
    for combo in itertools.product(range(total + 1), repeat=m):
        if sum(combo) == total:
            yield combo


class SymbolCalculus:
    """Derivative caches shared by the composition series."""

    def __init__(self):
        self._xi = {}
        self._x = {}

    def xi_derivative(self, symbol, nu):
        key = (id(symbol), nu)
        if key not in self._xi:
            result = symbol
            for alpha, count in enumerate(nu):
                for _ in range(count):
                    result = result.diff_xi(alpha)
            self._xi[key] = (symbol, result)
        return self._xi[key][1]

    def x_derivative(self, symbol, nu):
        """D_x^nu = (-i d_x)^nu over the tangential variables."""
        key = (id(symbol), nu)
        if key not in self._x:
            result = symbol
            for alpha, count in enumerate(nu):
                for _ in range(count):
                    result = result.diff_x(alpha)
            result = result.scale((-1j) ** sum(nu))
            self._x[key] = (symbol, result)
        return self._x[key][1]

    def compose(self, p: Dict[int, HomogeneousSymbol], q: Dict[int, HomogeneousSymbol], min_degree, degrees=None):
        """Graded product sum_nu (1/nu!) d_xi^nu p D_x^nu q, kept down to `min_degree`.

        `degrees` restricts the output to the listed degrees.
        """
        result = {}
        for dp, left in p.items():
            for dq, right in q.items():
                if left.is_zero() or right.is_zero():
                    continue
                depth = min(dp + dq - min_degree, right.order)
                for total in range(depth + 1):
                    if degrees is not None and dp + dq - total not in degrees:
                        continue
                    for nu in multi_indices(left.m, total):
                        term = self.xi_derivative(left, nu) @ self.x_derivative(right, nu)
                        weight = 1.0 / math.prod(math.factorial(a) for a in nu)
                        term = term.scale(weight)
                        degree = term.degree
                        result[degree] = result[degree] + term if degree in result else term
        return result
