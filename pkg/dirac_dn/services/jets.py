"""
Truncated multivariate Taylor polynomials ("jets") with array-valued coefficients.

A jet of order J in n variables stores the coefficients c_alpha of
sum_alpha c_alpha (x - x0)^alpha for all multi-indices |alpha| <= J.
Monomials are graded by total degree, so truncating to a lower order is a
prefix slice of the coefficient array.

The coefficient array has shape (#monomials, *value_shape).  Value shapes
broadcast like numpy arrays (right-aligned), so a scalar jet multiplies a
matrix jet directly, while a batched scalar jet of shape (P,) has to be
expanded (`s[..., None, None]`) before meeting a (P, r, c) matrix jet.
"""
import math
import numbers
from functools import cached_property, lru_cache

import numpy as np

from ..errors import DimensionError, JetOrderError


def _exponents_of_degree(nvars, degree):
    if nvars == 1:
        yield (degree,)
        return
    for first in range(degree, -1, -1):
        for rest in _exponents_of_degree(nvars - 1, degree - first):
            yield (first,) + rest


class MonomialTable:
    """Graded monomial basis plus the index plans used by jet arithmetic."""

    def __init__(self, nvars, order):
        if nvars < 1:
            raise DimensionError(f"jets need at least one variable, got {nvars}")
        if order < 0:
            raise JetOrderError(f"negative jet order {order}")
        self.nvars = nvars
        self.order = order
        exponents = []
        for degree in range(order + 1):
            exponents.extend(_exponents_of_degree(nvars, degree))
        self.exponents = np.array(exponents, dtype=int).reshape(-1, nvars)
        self.index = {e: i for i, e in enumerate(exponents)}
        self.degrees = self.exponents.sum(axis=1)
        self.size = len(exponents)
        self.factorials = np.array(
            [math.prod(math.factorial(a) for a in e) for e in exponents], dtype=float
        )

    @cached_property
    def product_plan(self):
        """Pairs (a, b) with deg a + deg b <= order, grouped by their product monomial."""
        left, right, target = [], [], []
        for a, ea in enumerate(self.exponents):
            remaining = self.order - self.degrees[a]
            for b in range(self.size):
                if self.degrees[b] > remaining:
                    break
                left.append(a)
                right.append(b)
                target.append(self.index[tuple(ea + self.exponents[b])])
        target = np.array(target)
        ordering = np.argsort(target, kind='stable')
        target = target[ordering]
        starts = np.searchsorted(target, np.arange(self.size))
        return np.array(left)[ordering], np.array(right)[ordering], starts

    @lru_cache(maxsize=None)
    def diff_plan(self, var):
        """Source indices and factors mapping this table onto the order-1 table."""
        lower = monomial_table(self.nvars, self.order - 1)
        shift = np.zeros(self.nvars, dtype=int)
        shift[var] = 1
        sources = [self.index[tuple(e + shift)] for e in lower.exponents]
        factors = lower.exponents[:, var] + 1.0
        return np.array(sources, dtype=int), factors

    @lru_cache(maxsize=None)
    def integrate_plan(self, var):
        """Target indices (in the order+1 table) and factors of the antiderivative."""
        upper = monomial_table(self.nvars, self.order + 1)
        shift = np.zeros(self.nvars, dtype=int)
        shift[var] = 1
        targets = [upper.index[tuple(e + shift)] for e in self.exponents]
        factors = 1.0 / (self.exponents[:, var] + 1.0)
        return np.array(targets, dtype=int), factors

    def monomial_values(self, points):
        """Values of every monomial at displacements `points` of shape (..., nvars)."""
        points = np.asarray(points)
        values = np.ones(points.shape[:-1] + (self.size,), dtype=np.result_type(points, float))
        for var in range(self.nvars):
            values = values * points[..., var, None] ** self.exponents[:, var]
        return values


@lru_cache(maxsize=None)
def monomial_table(nvars, order):
    return MonomialTable(nvars, order)


def _pad_value_dims(coeffs, ndim):
    missing = ndim - (coeffs.ndim - 1)
    if missing <= 0:
        return coeffs
    return coeffs.reshape(coeffs.shape[:1] + (1,) * missing + coeffs.shape[1:])


class Jet:
    """Truncated Taylor polynomial at a fixed base point."""

    __array_ufunc__ = None

    def __init__(self, coeffs, nvars, order):
        coeffs = np.asarray(coeffs)
        table = monomial_table(nvars, order)
        if coeffs.ndim == 0 or coeffs.shape[0] != table.size:
            raise DimensionError(
                f"expected {table.size} coefficients for nvars={nvars}, order={order}, "
                f"got array of shape {coeffs.shape}"
            )
        self.coeffs = coeffs
        self.nvars = nvars
        self.order = order

    # Construction

    @classmethod
    def constant(cls, value, nvars, order):
        value = np.asarray(value)
        table = monomial_table(nvars, order)
        coeffs = np.zeros((table.size,) + value.shape, dtype=np.result_type(value, float))
        coeffs[0] = value
        return cls(coeffs, nvars, order)

    @classmethod
    def variable(cls, var, nvars, order, base=0.0):
        """The coordinate x_var expanded about `base` (scalar or batch of base values)."""
        if not 0 <= var < nvars:
            raise DimensionError(f"variable {var} outside 0..{nvars - 1}")
        base = np.asarray(base, dtype=float)
        jet = cls.constant(base, nvars, order)
        if order >= 1:
            jet.coeffs[1 + var] = 1.0
        return jet

    @classmethod
    def from_partials(cls, partial, nvars, order):
        """Build a jet from a callable alpha -> d^alpha f(x0)."""
        table = monomial_table(nvars, order)
        values = [np.asarray(partial(tuple(e))) for e in table.exponents]
        coeffs = np.stack(values) / table.factorials.reshape((-1,) + (1,) * values[0].ndim)
        return cls(coeffs, nvars, order)

    @classmethod
    def stack(cls, items):
        """Stack a nested list of jets (or constants) into one jet.

        The nesting becomes the trailing value axes, so [[a, b], [c, d]] of
        scalar jets is a 2x2 matrix jet.
        """
        leaves = []

        def collect(node):
            if isinstance(node, (list, tuple)):
                for child in node:
                    collect(child)
            else:
                leaves.append(node)

        collect(items)
        reference = next((leaf for leaf in leaves if isinstance(leaf, Jet)), None)
        if reference is None:
            raise DimensionError("Jet.stack needs at least one Jet among its items")
        order = min(leaf.order for leaf in leaves if isinstance(leaf, Jet))
        nvars = reference.nvars
        converted = [
            leaf.truncate(order) if isinstance(leaf, Jet) else cls.constant(leaf, nvars, order)
            for leaf in leaves
        ]
        leaf_shape = np.broadcast_shapes(*(leaf.shape for leaf in converted))
        size = monomial_table(nvars, order).size
        arrays = iter(
            np.broadcast_to(leaf.coeffs, (size,) + leaf_shape) for leaf in converted
        )

        def build(node):
            if not isinstance(node, (list, tuple)):
                return next(arrays), 0
            children = [build(child) for child in node]
            depth = children[0][1]
            stacked = np.stack([child for child, _ in children], axis=children[0][0].ndim - depth)
            return stacked, depth + 1

        coeffs, _ = build(items)
        return cls(np.array(coeffs), nvars, order)

    # Introspection

    @property
    def shape(self):
        return self.coeffs.shape[1:]

    @property
    def ndim(self):
        return self.coeffs.ndim - 1

    @property
    def dtype(self):
        return self.coeffs.dtype

    @property
    def table(self):
        return monomial_table(self.nvars, self.order)

    def value(self):
        return self.coeffs[0]

    def partial(self, alpha):
        """The derivative d^alpha at the base point."""
        alpha = tuple(int(a) for a in alpha)
        if sum(alpha) > self.order:
            raise JetOrderError(f"derivative {alpha} exceeds jet order {self.order}")
        table = self.table
        position = table.index[alpha]
        return self.coeffs[position] * table.factorials[position]

    def is_zero(self):
        return not np.any(self.coeffs)

    def __repr__(self):
        return f"Jet(nvars={self.nvars}, order={self.order}, shape={self.shape})"

    # Structural operations

    def truncate(self, order):
        if order > self.order:
            raise JetOrderError(f"cannot raise jet order from {self.order} to {order}")
        if order == self.order:
            return self
        size = monomial_table(self.nvars, order).size
        return Jet(self.coeffs[:size], self.nvars, order)

    def apply(self, fn):
        """Apply a linear map acting on the value axes to every coefficient."""
        return Jet(fn(self.coeffs), self.nvars, self.order)

    def __getitem__(self, index):
        if not isinstance(index, tuple):
            index = (index,)
        return Jet(self.coeffs[(slice(None),) + index], self.nvars, self.order)

    def conj(self):
        return Jet(np.conj(self.coeffs), self.nvars, self.order)

    @property
    def real(self):
        return Jet(self.coeffs.real, self.nvars, self.order)

    @property
    def imag(self):
        return Jet(self.coeffs.imag, self.nvars, self.order)

    @property
    def T(self):
        return Jet(np.swapaxes(self.coeffs, -1, -2), self.nvars, self.order)

    def dagger(self):
        return self.conj().T

    def trace(self):
        return self.apply(lambda c: np.trace(c, axis1=-2, axis2=-1))

    # Calculus

    def diff(self, var):
        if self.order == 0:
            raise JetOrderError("cannot differentiate an order-0 jet")
        sources, factors = self.table.diff_plan(var)
        coeffs = self.coeffs[sources] * factors.reshape((-1,) + (1,) * self.ndim)
        return Jet(coeffs, self.nvars, self.order - 1)

    def integrate(self, var):
        """Antiderivative in x_var vanishing on x_var = 0; the order grows by one."""
        targets, factors = self.table.integrate_plan(var)
        upper = monomial_table(self.nvars, self.order + 1)
        coeffs = np.zeros((upper.size,) + self.shape, dtype=np.result_type(self.coeffs, float))
        coeffs[targets] = self.coeffs * factors.reshape((-1,) + (1,) * self.ndim)
        return Jet(coeffs, self.nvars, self.order + 1)

    def boundary_trace(self, var=None):
        """Restriction to x_var = 0 (default: the last variable, the normal coordinate)."""
        var = self.nvars - 1 if var is None else var
        mask = self.table.exponents[:, var] == 0
        coeffs = self.coeffs * mask.reshape((-1,) + (1,) * self.ndim)
        return Jet(coeffs, self.nvars, self.order)

    def evaluate(self, displacement):
        """Polynomial value at displacement(s) from the base point, shape (..., nvars)."""
        displacement = np.asarray(displacement, dtype=float)
        monomials = self.table.monomial_values(displacement)
        return np.tensordot(monomials, self.coeffs, axes=([-1], [0]))

    # Arithmetic

    def _lift(self, other):
        if isinstance(other, Jet):
            if other.nvars != self.nvars:
                raise DimensionError(f"jets in {self.nvars} and {other.nvars} variables")
            return other
        if isinstance(other, (numbers.Number, np.ndarray, np.generic)):
            return None
        return NotImplemented

    def _aligned(self, other):
        order = min(self.order, other.order)
        a = self.truncate(order).coeffs
        b = other.truncate(order).coeffs
        ndim = max(a.ndim, b.ndim) - 1
        return _pad_value_dims(a, ndim), _pad_value_dims(b, ndim), order

    def _with_constant(self, value):
        value = np.asarray(value)
        ndim = max(self.ndim, value.ndim)
        return _pad_value_dims(self.coeffs, ndim), value

    def __add__(self, other):
        lifted = self._lift(other)
        if lifted is NotImplemented:
            return NotImplemented
        if lifted is None:
            coeffs, value = self._with_constant(other)
            coeffs = coeffs + np.zeros_like(value, dtype=np.result_type(coeffs, value))
            coeffs[0] = coeffs[0] + value
            return Jet(coeffs, self.nvars, self.order)
        a, b, order = self._aligned(lifted)
        return Jet(a + b, self.nvars, order)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coeffs, self.nvars, self.order)

    def __pos__(self):
        return self

    def __sub__(self, other):
        lifted = self._lift(other)
        if lifted is NotImplemented:
            return NotImplemented
        return self + (-lifted if lifted is not None else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        lifted = self._lift(other)
        if lifted is NotImplemented:
            return NotImplemented
        if lifted is None:
            coeffs, value = self._with_constant(other)
            return Jet(coeffs * value, self.nvars, self.order)
        return self._product(lifted, np.multiply)

    __rmul__ = __mul__

    def __matmul__(self, other):
        lifted = self._lift(other)
        if lifted is NotImplemented:
            return NotImplemented
        if lifted is None:
            return Jet(np.matmul(self.coeffs, np.asarray(other)), self.nvars, self.order)
        return self._product(lifted, np.matmul)

    def __rmatmul__(self, other):
        if self._lift(other) is not None:
            return NotImplemented
        return Jet(np.matmul(np.asarray(other), self.coeffs), self.nvars, self.order)

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * reciprocal(other)
        if isinstance(other, (numbers.Number, np.ndarray, np.generic)):
            return self * (1.0 / np.asarray(other))
        return NotImplemented

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, exponent):
        if not isinstance(exponent, numbers.Integral) or exponent < 0:
            return power(self, exponent)
        result = Jet.constant(np.ones(self.shape), self.nvars, self.order)
        for _ in range(exponent):
            result = result * self
        return result

    def _product(self, other, op):
        a, b, order = self._aligned(other)
        left, right, starts = monomial_table(self.nvars, order).product_plan
        terms = op(a[left], b[right])
        return Jet(np.add.reduceat(terms, starts, axis=0), self.nvars, order)


def compose(jet, derivatives):
    """f(jet) for a scalar function given its derivatives f^(j) at the base value."""
    base = jet.value()
    delta = jet - base
    result = Jet.constant(derivatives[0], jet.nvars, jet.order)
    term = None
    for j in range(1, jet.order + 1):
        term = delta if term is None else term * delta
        result = result + term * (np.asarray(derivatives[j]) / math.factorial(j))
    return result


def exp(jet):
    base = np.exp(jet.value())
    return compose(jet, [base] * (jet.order + 1))


def power(jet, exponent):
    base = jet.value()
    base = base.astype(np.result_type(base, float))
    derivatives = []
    coefficient = 1.0
    for j in range(jet.order + 1):
        derivatives.append(coefficient * np.power(base, exponent - j))
        coefficient *= exponent - j
    return compose(jet, derivatives)


def sqrt(jet):
    return power(jet, 0.5)


def reciprocal(jet):
    return power(jet, -1)


def sin(jet):
    base = jet.value()
    cycle = [np.sin(base), np.cos(base), -np.sin(base), -np.cos(base)]
    return compose(jet, [cycle[j % 4] for j in range(jet.order + 1)])


def cos(jet):
    base = jet.value()
    cycle = [np.cos(base), -np.sin(base), -np.cos(base), np.sin(base)]
    return compose(jet, [cycle[j % 4] for j in range(jet.order + 1)])


def matrix_inverse(jet):
    """Inverse of a square-matrix jet by the Neumann series about its constant term."""
    base_inverse = np.linalg.inv(jet.value())
    nilpotent = jet - jet.value()
    term = Jet.constant(base_inverse, jet.nvars, jet.order)
    result = term
    for _ in range(jet.order):
        term = -(base_inverse @ (nilpotent @ term))
        result = result + term
    return result


def nilpotent_expm(jet):
    """exp(X) for a matrix jet whose constant term vanishes."""
    if np.any(jet.value()):
        raise JetOrderError("nilpotent_expm needs a jet with zero constant term")
    identity = np.broadcast_to(np.eye(jet.shape[-1]), jet.shape)
    result = Jet.constant(identity, jet.nvars, jet.order)
    term = result
    for j in range(1, jet.order + 1):
        term = (term @ jet) * (1.0 / j)
        result = result + term
    return result


def cholesky(matrix):
    """Lower-triangular L with L L^T = matrix, entry by entry on scalar jets."""
    size = matrix.shape[-1]
    rows = [[None] * size for _ in range(size)]
    zero = matrix[..., 0, 0] * 0.0
    for j in range(size):
        diagonal = matrix[..., j, j]
        for k in range(j):
            diagonal = diagonal - rows[j][k] * rows[j][k]
        rows[j][j] = sqrt(diagonal)
        inverse_pivot = reciprocal(rows[j][j])
        for i in range(j + 1, size):
            entry = matrix[..., i, j]
            for k in range(j):
                entry = entry - rows[i][k] * rows[j][k]
            rows[i][j] = entry * inverse_pivot
        for i in range(j):
            rows[i][j] = zero
    return Jet.stack(rows)
