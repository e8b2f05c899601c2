"""
Closed menu of analytic fields on the slab chart x = (x', x^n).

Every field hands out jets at a batch of points, so grid samples, first and
second derivatives and boundary Taylor data all come from one code path.
Tangential wavevectors are integers, which keeps every built-in family
2*pi-periodic in x'.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from ..errors import DimensionError, GaugeError, JetOrderError
from . import jets as jetlib
from .jets import Jet, monomial_table

logger = logging.getLogger(__name__)


def unitary_basis(N):
    """Basis of u(N), orthonormal for the pairing <X, Y> = -trace(XY)."""
    basis = []
    for j in range(N):
        T = np.zeros((N, N), dtype=complex)
        T[j, j] = 1j
        basis.append(T)
    for j in range(N):
        for k in range(j + 1, N):
            T = np.zeros((N, N), dtype=complex)
            T[j, k], T[k, j] = 1.0, -1.0
            basis.append(T / np.sqrt(2.0))
            T = np.zeros((N, N), dtype=complex)
            T[j, k] = T[k, j] = 1j
            basis.append(T / np.sqrt(2.0))
    return np.array(basis)


def random_skew_hermitian(N, rng, scale=1.0):
    M = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    return scale * (M - M.conj().T) / 2.0


def partials_from_jet(jet, max_order):
    """Stack d^alpha values of a jet for all |alpha| <= max_order, keyed by alpha."""
    table = monomial_table(jet.nvars, max_order)
    return {tuple(e): jet.partial(e) for e in table.exponents}


def _reexpand(polynomial, base, points, order):
    """Jets at `points` of a polynomial given as a jet at `base`."""
    points = np.asarray(points, dtype=float)
    displacement = points - np.asarray(base, dtype=float)
    table = monomial_table(polynomial.nvars, order)
    coeffs = []
    cache = {(0,) * polynomial.nvars: polynomial}
    for exponent in table.exponents:
        key = tuple(int(a) for a in exponent)
        derivative = cache.get(key)
        if derivative is None:
            var = max(i for i, a in enumerate(key) if a > 0)
            parent = list(key)
            parent[var] -= 1
            parent_jet = cache[tuple(parent)]
            if parent_jet.order == 0:
                derivative = Jet.constant(np.zeros(parent_jet.shape), parent_jet.nvars, 0)
            else:
                derivative = parent_jet.diff(var)
            cache[key] = derivative
        coeffs.append(derivative.evaluate(displacement))
    coeffs = np.stack(coeffs)
    coeffs = coeffs / table.factorials.reshape((-1,) + (1,) * (coeffs.ndim - 1))
    return Jet(coeffs, polynomial.nvars, order)


# Scalar building block

@dataclass(frozen=True)
class TrigTerm:
    amplitude: float
    wavevector: Tuple[float, ...]
    phase: float = 0.0


@dataclass(frozen=True)
class TrigPolynomial:
    """sum a*cos(k.x + phi) + constant + slope*x^n."""

    nvars: int
    terms: Tuple[TrigTerm, ...] = ()
    constant: float = 0.0
    slope: float = 0.0

    def jet(self, points, order):
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != self.nvars:
            raise DimensionError(f"points of dimension {points.shape[-1]} for a {self.nvars}-variable field")
        table = monomial_table(self.nvars, order)
        batch = points.shape[:-1]
        coeffs = np.zeros((table.size,) + batch)
        for term in self.terms:
            k = np.asarray(term.wavevector, dtype=float)
            phase = points @ k + term.phase
            for index, exponent in enumerate(table.exponents):
                degree = int(exponent.sum())
                weight = term.amplitude * np.prod(k ** exponent)
                coeffs[index] += weight * np.cos(phase + degree * np.pi / 2.0)
        coeffs[0] += self.constant + self.slope * points[..., -1]
        if order >= 1:
            coeffs[self.nvars] += self.slope
        coeffs /= table.factorials.reshape((-1,) + (1,) * len(batch))
        return Jet(coeffs, self.nvars, order)

    def values(self, points):
        return self.jet(points, 0).value()

    def bound(self):
        """Upper bound of |f| on the slab for |x^n| <= 1."""
        return sum(abs(t.amplitude) for t in self.terms) + abs(self.constant) + abs(self.slope)

    @classmethod
    def random(cls, nvars, rng, count=2, amplitude=0.3, max_wavenumber=2, normal_wavenumber=1.0):
        terms = []
        for _ in range(count):
            tangential = rng.integers(-max_wavenumber, max_wavenumber + 1, size=nvars - 1)
            wavevector = tuple(float(v) for v in tangential) + (float(rng.uniform(-normal_wavenumber, normal_wavenumber)),)
            terms.append(TrigTerm(
                amplitude=float(amplitude * rng.uniform(-1.0, 1.0)),
                wavevector=wavevector,
                phase=float(rng.uniform(0.0, 2.0 * np.pi)),
            ))
        return cls(nvars=nvars, terms=tuple(terms))


# Metrics

class MetricField:
    """Boundary-normal metric: g_nn = 1, g_n alpha = 0, tangential block from the family."""

    name = 'abstract'

    def __init__(self, n):
        if n < 2:
            raise DimensionError(f"slab metrics need n >= 2, got {n}")
        self.n = n

    @property
    def m(self):
        return self.n - 1

    def block_jet(self, points, order):
        raise NotImplementedError

    def jet(self, points, order):
        block = self.block_jet(points, order)
        coeffs = np.zeros(block.coeffs.shape[:-2] + (self.n, self.n), dtype=block.dtype)
        coeffs[..., :self.m, :self.m] = block.coeffs
        coeffs[0, ..., self.m, self.m] = 1.0
        return Jet(coeffs, self.n, order)

    def values(self, points):
        return self.jet(points, 0).value()

    def first_derivatives(self, points):
        """Array d_k g_ij with the derivative index k in front of (i, j)."""
        jet = self.jet(points, 1)
        return np.stack([jet.partial(_unit(self.n, k)) for k in range(self.n)], axis=-3)

    def second_derivatives(self, points):
        jet = self.jet(points, 2)
        rows = []
        for k in range(self.n):
            rows.append(np.stack(
                [jet.partial(_unit(self.n, k) + _unit(self.n, l)) for l in range(self.n)], axis=-3
            ))
        return np.stack(rows, axis=-4)

    def describe(self):
        return {'family': self.name, 'n': self.n}


def _unit(n, k):
    e = np.zeros(n, dtype=int)
    e[k] = 1
    return e


class FlatMetric(MetricField):
    name = 'flat'

    def block_jet(self, points, order):
        points = np.asarray(points, dtype=float)
        return Jet.constant(np.broadcast_to(np.eye(self.m), points.shape[:-1] + (self.m, self.m)),
                            self.n, order)


class ConformalMetric(MetricField):
    """e^{2f} on the tangential block."""

    name = 'conformal'

    def __init__(self, n, f: TrigPolynomial):
        super().__init__(n)
        self.f = f

    def block_jet(self, points, order):
        factor = jetlib.exp(self.f.jet(points, order) * 2.0)
        return factor[..., None, None] * np.eye(self.m)

    def describe(self):
        return {**super().describe(), 'f': self.f}


class DiagonalMetric(MetricField):
    """delta_{alpha alpha} (1 + epsilon t_alpha)."""

    name = 'diagonal'

    def __init__(self, n, epsilon, profiles: Sequence[TrigPolynomial]):
        super().__init__(n)
        if len(profiles) != self.m:
            raise DimensionError(f"diagonal metric needs {self.m} profiles, got {len(profiles)}")
        if abs(epsilon) * max(p.bound() for p in profiles) >= 1.0:
            raise DimensionError("diagonal metric perturbation is not uniformly positive")
        self.epsilon = epsilon
        self.profiles = tuple(profiles)

    def block_jet(self, points, order):
        diagonal = [p.jet(points, order) * self.epsilon + 1.0 for p in self.profiles]
        zero = diagonal[0] * 0.0
        rows = [[diagonal[a] if a == b else zero for b in range(self.m)] for a in range(self.m)]
        return Jet.stack(rows)


class SphereMetric(MetricField):
    """Round sphere of radius r in polar-type boundary-normal coordinates (n = 2)."""

    name = 'sphere'

    def __init__(self, radius=1.0, rho0=1.0):
        super().__init__(2)
        if not 0.0 < rho0 < np.pi * radius:
            raise DimensionError("rho0 must lie strictly between the poles")
        self.radius = radius
        self.rho0 = rho0

    def block_jet(self, points, order):
        points = np.asarray(points, dtype=float)
        u = (Jet.variable(1, 2, order, base=points[..., 1]) + self.rho0) * (1.0 / self.radius)
        s = jetlib.sin(u)
        return (s * s * self.radius ** 2)[..., None, None]


class PolynomialMetric(MetricField):
    """Tangential block given as an exact polynomial jet about `base`."""

    name = 'polynomial'

    def __init__(self, n, block: Jet, base):
        super().__init__(n)
        if block.shape[-2:] != (self.m, self.m):
            raise DimensionError("polynomial metric block has the wrong size")
        self.block = block
        self.base = np.asarray(base, dtype=float)

    def block_jet(self, points, order):
        return _reexpand(self.block, self.base, points, order)

    @classmethod
    def random(cls, n, order, rng, amplitude=0.2, base=None):
        m = n - 1
        table = monomial_table(n, order)
        coeffs = np.zeros((table.size, m, m))
        for index in range(table.size):
            R = rng.standard_normal((m, m))
            coeffs[index] = amplitude * (R + R.T) / 2.0 / max(1, table.degrees[index])
        coeffs[0] = np.eye(m) + coeffs[0] * 0.5
        base = np.zeros(n) if base is None else base
        return cls(n, Jet(coeffs, n, order), base)


# Connections

class ConnectionField:
    """u(N)-valued connection coefficients A_a, a = 1..n, in the chart."""

    name = 'abstract'

    def __init__(self, n, N, normal_gauge=False):
        self.n = n
        self.N = N
        self.normal_gauge = normal_gauge

    def jets(self, points, order):
        raise NotImplementedError

    def values(self, points):
        return np.stack([jet.value() for jet in self.jets(points, 0)])

    def derivatives(self, points):
        """Array d_b A_a indexed [b, a, ...]."""
        jets = self.jets(points, 1)
        return np.stack([
            np.stack([jet.partial(_unit(self.n, b)) for jet in jets]) for b in range(self.n)
        ])

    def curvature(self, points):
        """F_ab = d_a A_b - d_b A_a + [A_a, A_b], indexed [a, b, ...]."""
        A = self.values(points)
        dA = self.derivatives(points)
        F = np.zeros((self.n, self.n) + A.shape[1:], dtype=complex)
        for a in range(self.n):
            for b in range(a + 1, self.n):
                F[a, b] = dA[a, b] - dA[b, a] + A[a] @ A[b] - A[b] @ A[a]
                F[b, a] = -F[a, b]
        return F

    def describe(self):
        return {'family': self.name, 'n': self.n, 'N': self.N, 'normal_gauge': self.normal_gauge}


class ZeroConnection(ConnectionField):
    name = 'zero'

    def __init__(self, n, N):
        super().__init__(n, N, normal_gauge=True)

    def jets(self, points, order):
        points = np.asarray(points, dtype=float)
        zero = np.zeros(points.shape[:-1] + (self.N, self.N), dtype=complex)
        return [Jet.constant(zero, self.n, order) for _ in range(self.n)]


class ConstantConnection(ConnectionField):
    name = 'constant'

    def __init__(self, matrices):
        matrices = np.asarray(matrices, dtype=complex)
        n, N = matrices.shape[0], matrices.shape[1]
        if np.max(np.abs(matrices + np.conj(np.swapaxes(matrices, -1, -2)))) > 1e-12:
            raise GaugeError("constant connection coefficients must be skew-Hermitian")
        super().__init__(n, N, normal_gauge=not np.any(matrices[-1]))
        self.matrices = matrices

    def jets(self, points, order):
        points = np.asarray(points, dtype=float)
        batch = points.shape[:-1]
        return [Jet.constant(np.broadcast_to(M, batch + M.shape), self.n, order) for M in self.matrices]


class TrigConnection(ConnectionField):
    """A_a = sum_s T_s t_{a,s}(x) with T_s the orthonormal u(N) basis."""

    name = 'trig'

    def __init__(self, n, N, profiles, normal_gauge=False):
        """`profiles[a]` is a list of (basis index, TrigPolynomial) pairs."""
        super().__init__(n, N, normal_gauge=normal_gauge)
        if len(profiles) != n:
            raise DimensionError(f"need profiles for {n} directions, got {len(profiles)}")
        if normal_gauge:
            profiles = list(profiles[:-1]) + [[]]
        self.profiles = [list(p) for p in profiles]
        self.basis = unitary_basis(N)

    def jets(self, points, order):
        points = np.asarray(points, dtype=float)
        batch = points.shape[:-1]
        result = []
        for profile in self.profiles:
            total = Jet.constant(np.zeros(batch + (self.N, self.N), dtype=complex), self.n, order)
            for s, poly in profile:
                total = total + poly.jet(points, order)[..., None, None] * self.basis[s]
            result.append(total)
        return result

    @classmethod
    def random(cls, n, N, rng, amplitude=0.3, count=2, normal_gauge=True, abelian=False):
        size = 1 if abelian else N * N
        profiles = []
        for _ in range(n):
            profiles.append([(s, TrigPolynomial.random(n, rng, count=count, amplitude=amplitude))
                             for s in range(size)])
        return cls(n, N, profiles, normal_gauge=normal_gauge)

    @classmethod
    def linear_normal(cls, offsets, slopes):
        """Abelian A_alpha = i (c_alpha + x^n d_alpha), A_n = 0."""
        n = len(offsets) + 1
        profiles = [[(0, TrigPolynomial(nvars=n, constant=float(c), slope=float(d)))]
                    for c, d in zip(offsets, slopes)]
        profiles.append([])
        return cls(n, 1, profiles, normal_gauge=True)


class PolynomialConnection(ConnectionField):
    """Exact polynomial jets about `base`; A_n = 0."""

    name = 'polynomial'

    def __init__(self, components: List[Jet], base):
        n = components[0].nvars
        super().__init__(n, components[0].shape[-1], normal_gauge=components[-1].is_zero())
        self.components = components
        self.base = np.asarray(base, dtype=float)

    def jets(self, points, order):
        return [_reexpand(c, self.base, points, order) for c in self.components]

    @classmethod
    def random(cls, n, N, order, rng, amplitude=0.3, base=None):
        table = monomial_table(n, order)
        components = []
        for _ in range(n - 1):
            coeffs = np.stack([
                random_skew_hermitian(N, rng, amplitude / max(1, table.degrees[i]))
                for i in range(table.size)
            ])
            components.append(Jet(coeffs, n, order))
        components.append(Jet(np.zeros((table.size, N, N), dtype=complex), n, order))
        return cls(components, np.zeros(n) if base is None else base)


class SampledConnection(ConnectionField):
    """Connection known only on the points of one grid (output of numerical gauge fixing)."""

    name = 'sampled'

    def __init__(self, points, values, derivatives, normal_gauge=False):
        values = np.asarray(values)
        super().__init__(values.shape[0], values.shape[-1], normal_gauge=normal_gauge)
        self.points = np.asarray(points)
        self._values = values
        self._derivatives = np.asarray(derivatives)

    def _check(self, points):
        points = np.asarray(points)
        if points.shape != self.points.shape or not np.array_equal(points, self.points):
            raise JetOrderError("sampled connection can only be evaluated on its own grid")

    def values(self, points):
        self._check(points)
        return self._values

    def derivatives(self, points):
        self._check(points)
        return self._derivatives

    def jets(self, points, order):
        raise JetOrderError("sampled connections carry no jets")


# Potentials Z in End(S (x) E)

class EndoField:
    """(kN)x(kN) potential Z(x)."""

    name = 'abstract'

    def __init__(self, n, size, hermitian=False):
        self.n = n
        self.size = size
        self.hermitian = hermitian

    def jet(self, points, order):
        raise NotImplementedError

    def values(self, points):
        return self.jet(points, 0).value()

    def describe(self):
        return {'family': self.name, 'size': self.size, 'hermitian': self.hermitian}


class ZeroPotential(EndoField):
    name = 'zero'

    def __init__(self, n, size):
        super().__init__(n, size, hermitian=True)

    def jet(self, points, order):
        points = np.asarray(points, dtype=float)
        return Jet.constant(np.zeros(points.shape[:-1] + (self.size, self.size), dtype=complex),
                            self.n, order)


class ScalarPotential(EndoField):
    name = 'scalar'

    def __init__(self, n, size, z):
        super().__init__(n, size, hermitian=np.imag(z) == 0)
        self.z = complex(z)

    def jet(self, points, order):
        points = np.asarray(points, dtype=float)
        value = np.broadcast_to(self.z * np.eye(self.size), points.shape[:-1] + (self.size, self.size))
        return Jet.constant(value, self.n, order)


class PolynomialPotential(EndoField):
    name = 'polynomial'

    def __init__(self, polynomial: Jet, base, hermitian=False):
        super().__init__(polynomial.nvars, polynomial.shape[-1], hermitian=hermitian)
        self.polynomial = polynomial
        self.base = np.asarray(base, dtype=float)

    def jet(self, points, order):
        return _reexpand(self.polynomial, self.base, points, order)

    @classmethod
    def random(cls, n, size, order, rng, amplitude=0.5, base=None):
        table = monomial_table(n, order)
        coeffs = amplitude * (rng.standard_normal((table.size, size, size))
                              + 1j * rng.standard_normal((table.size, size, size)))
        coeffs /= np.maximum(1, table.degrees).reshape(-1, 1, 1)
        return cls(Jet(coeffs, n, order), np.zeros(n) if base is None else base)


# Gauge transformations

def frechet_expm(X, E):
    """Directional derivative of expm at X along E (batched block-matrix form)."""
    N = X.shape[-1]
    block = np.zeros(X.shape[:-2] + (2 * N, 2 * N), dtype=complex)
    block[..., :N, :N] = X
    block[..., N:, N:] = X
    block[..., :N, N:] = E
    return expm(block)[..., :N, N:]


def second_frechet_expm(X, E1, E2):
    """Mixed second derivative d^2/ds dt expm(X + s E1 + t E2) at s = t = 0."""
    N = X.shape[-1]
    block = np.zeros(X.shape[:-2] + (4 * N, 4 * N), dtype=complex)
    for i in range(4):
        block[..., i * N:(i + 1) * N, i * N:(i + 1) * N] = X
    block[..., 0:N, N:2 * N] = E1
    block[..., 0:N, 2 * N:3 * N] = E2
    block[..., N:2 * N, 3 * N:4 * N] = E2
    block[..., 2 * N:3 * N, 3 * N:4 * N] = E1
    return expm(block)[..., 0:N, 3 * N:4 * N]


class GaugeField:
    """U(N)-valued field G(x) with first and second derivatives."""

    name = 'abstract'
    boundary_identity = False

    def __init__(self, n, N):
        self.n = n
        self.N = N

    def values(self, points):
        raise NotImplementedError

    def derivatives(self, points):
        raise NotImplementedError

    def second_derivatives(self, points):
        raise NotImplementedError

    def jet(self, points, order):
        raise JetOrderError(f"{self.name} gauge fields carry no jets")


class ExponentialGauge(GaugeField):
    """G = expm(rho(x^n) S(x)) with S = sum_s T_s t_s(x); rho = x^n for boundary-identity gauges."""

    name = 'exponential'

    def __init__(self, n, N, profile, boundary_identity=True):
        super().__init__(n, N)
        self.profile = list(profile)
        self.boundary_identity = boundary_identity
        self.basis = unitary_basis(N)

    def generator_jet(self, points, order):
        points = np.asarray(points, dtype=float)
        batch = points.shape[:-1]
        S = Jet.constant(np.zeros(batch + (self.N, self.N), dtype=complex), self.n, order)
        for s, poly in self.profile:
            S = S + poly.jet(points, order)[..., None, None] * self.basis[s]
        if self.boundary_identity:
            rho = Jet.variable(self.n - 1, self.n, order, base=points[..., -1])
            S = rho[..., None, None] * S
        return S

    def values(self, points):
        return expm(self.generator_jet(points, 0).value())

    def derivatives(self, points):
        X = self.generator_jet(points, 1)
        base = X.value()
        return np.stack([frechet_expm(base, X.partial(_unit(self.n, a))) for a in range(self.n)])

    def second_derivatives(self, points):
        X = self.generator_jet(points, 2)
        base = X.value()
        first = [X.partial(_unit(self.n, a)) for a in range(self.n)]
        result = np.zeros((self.n, self.n) + base.shape, dtype=complex)
        for a in range(self.n):
            for b in range(a, self.n):
                mixed = X.partial(_unit(self.n, a) + _unit(self.n, b))
                value = frechet_expm(base, mixed) + second_frechet_expm(base, first[a], first[b])
                result[a, b] = value
                result[b, a] = value
        return result

    def jet(self, points, order):
        X = self.generator_jet(points, order)
        if np.any(X.value()):
            raise JetOrderError("gauge jets are only exact where the generator vanishes")
        return jetlib.nilpotent_expm(X)

    @classmethod
    def random(cls, n, N, rng, amplitude=0.3, count=2, boundary_identity=True, abelian=False):
        size = 1 if abelian else N * N
        profile = [(s, TrigPolynomial.random(n, rng, count=count, amplitude=amplitude)) for s in range(size)]
        return cls(n, N, profile, boundary_identity=boundary_identity)


class SampledGauge(GaugeField):
    """Gauge field known on one grid (output of normal gauge fixing)."""

    name = 'sampled'
    boundary_identity = True

    def __init__(self, points, values, derivatives):
        values = np.asarray(values)
        super().__init__(np.asarray(points).shape[-1], values.shape[-1])
        self.points = np.asarray(points)
        self._values = values
        self._derivatives = np.asarray(derivatives)

    def _check(self, points):
        points = np.asarray(points)
        if points.shape != self.points.shape or not np.array_equal(points, self.points):
            raise JetOrderError("sampled gauge can only be evaluated on its own grid")

    def values(self, points):
        self._check(points)
        return self._values

    def derivatives(self, points):
        self._check(points)
        return self._derivatives
