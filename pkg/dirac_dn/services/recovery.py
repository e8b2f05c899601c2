"""
Boundary determination: invert the symbol recursion.

Order by order the unknown boundary data enter the symbol terms linearly and
with a definite parity in xi, so each step runs the forward engine on the
data recovered so far (later unknowns set to zero) and reads the unknowns off
the difference:

    b_1       -> g|dM by polarisation of b_1^2 = |xi|_g^2
    b_0 odd   -> theta_alpha|dM -> (A_alpha, omega^n_gamma) -> d_n g
    b_-1 odd  -> d_n theta_alpha -> (d_n A_alpha, d_n omega^n_gamma) -> d_n^2 g
    b_-1      -> Z

Exact symbols give boundary jets (tangential Taylor data at x0); DN symbol
estimates give values at one boundary point for the first two orders.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from django.conf import settings

from ..errors import RecoveryError
from . import jets as jetlib
from .clifford import GammaRep
from .dn_numeric import SymbolEstimate, dn_service
from .jets import Jet
from .spin import spin_service
from .symbol_engine import SymbolInputs, SymbolSum, symbol_service

logger = logging.getLogger(__name__)

Field = Union[np.ndarray, Jet]
Sampler = Callable[[int, tuple], Field]

EXACT = 'exact-forward'
NUMERIC = 'numeric-estimate'


def _unit(m, a):
    xi = np.zeros(m)
    xi[a] = 1.0
    return xi


def _scalar(value: Field, size):
    if isinstance(value, Jet):
        return value.trace() * (1.0 / size)
    return np.trace(value) / size


def _stack(rows):
    if any(isinstance(item, Jet) for row in rows for item in row):
        return Jet.stack(rows)
    return np.array(rows)


def _inverse(matrix: Field):
    if isinstance(matrix, Jet):
        return jetlib.matrix_inverse(matrix)
    return np.linalg.inv(matrix)


def _real(value: Field):
    return value.real if isinstance(value, Jet) else np.real(value)


def _tangential_frame(g: Field):
    """U with U^T g U = Id from Gram-Schmidt of d_1..d_m."""
    if isinstance(g, Jet):
        return jetlib.matrix_inverse(jetlib.cholesky(g)).T
    return np.linalg.inv(np.linalg.cholesky(g)).T


def _symmetrize(matrix: Field):
    return (matrix + matrix.T) * 0.5 if isinstance(matrix, Jet) else (matrix + matrix.T) / 2.0


def _value(item: Field):
    return item.value() if isinstance(item, Jet) else np.asarray(item)


def _magnitude(item: Field):
    """Largest absolute entry over every jet coefficient."""
    coeffs = item.coeffs if isinstance(item, Jet) else np.asarray(item)
    return float(np.max(np.abs(coeffs)))


@dataclass(eq=False)
class BoundaryJets:
    """Recovered boundary data; jets for exact symbols, point values for estimates.

    A and d_n A hold the tangential components alpha = 1..n-1 (A_n = 0).
    """

    g: Field
    ginv: Field
    dn_g: Optional[Field] = None
    dn2_g: Optional[Field] = None
    A: Optional[List[Field]] = None
    dn_A: Optional[List[Field]] = None
    Z: Optional[Field] = None
    provenance: str = EXACT
    residuals: Dict[str, float] = field(default_factory=dict)

    OBJECTS = ('g', 'dn_g', 'dn2_g', 'A', 'dn_A', 'Z')

    def item(self, name):
        return getattr(self, name)

    def values(self):
        """Every recovered object evaluated at x0."""
        result = {}
        for name in self.OBJECTS:
            item = self.item(name)
            if item is None:
                continue
            if isinstance(item, list):
                result[name] = np.stack([_value(component) for component in item])
            else:
                result[name] = _value(item)
        return result

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for name, value in self.values().items():
            value = np.asarray(value, dtype=complex)
            if name in ('A', 'dn_A'):
                blocks = [(alpha, value[alpha]) for alpha in range(value.shape[0])]
            else:
                blocks = [(-1, value)]
            for component, block in blocks:
                for (row, col), entry in np.ndenumerate(block):
                    rows.append({
                        'object': name,
                        'component': component,
                        'row': row,
                        'col': col,
                        're': float(entry.real),
                        'im': float(entry.imag),
                        'provenance': self.provenance,
                    })
        return pd.DataFrame(rows, columns=['object', 'component', 'row', 'col', 're', 'im', 'provenance'])


def _embed_metric(block: Jet, n):
    """Boundary-normal metric jet with the given tangential block."""
    m = n - 1
    coeffs = np.zeros(block.coeffs.shape[:-2] + (n, n), dtype=float)
    coeffs[..., :m, :m] = np.real(block.coeffs)
    coeffs[0, m, m] = 1.0
    return Jet(coeffs, n, block.order)


def _normal_extension(values: List[Optional[Jet]]):
    """sum_j (x^n)^j / j! f_j for boundary jets f_0, f_1, ... (None entries skipped).

    Each integration divides by the new power, so j of them supply the 1/j!.
    """
    total = None
    for j, item in enumerate(values):
        if item is None:
            continue
        term = item
        for _ in range(j):
            term = term.integrate(term.nvars - 1)
        total = term if total is None else total + term
    return total


class RecoveryService:
    """Boundary jets of (g, A, Z) from the symbol of the DN map"""

    def exact_sampler(self, b: SymbolSum) -> Sampler:
        """Covector samples of b_d as boundary jets."""
        cache = {}

        def sample(degree, xi):
            key = (degree, tuple(float(v) for v in xi))
            if key not in cache:
                cache[key] = b[degree].evaluate_jet(np.asarray(xi, dtype=float)).boundary_trace()
            return cache[key]

        return sample

    def numeric_sampler(self, estimates: Dict[tuple, SymbolEstimate]) -> Sampler:
        def sample(degree, xi):
            key = tuple(float(v) for v in xi)
            if key not in estimates:
                raise RecoveryError(f"no symbol estimate at covector {key}")
            estimate = estimates[key]
            if degree == 1:
                return estimate.b1
            if degree == 0:
                return estimate.b0
            raise RecoveryError(f"numeric estimates carry no degree-{degree} term")

        return sample

    def sampling_covectors(self, m):
        """+-e_alpha and e_alpha + e_beta."""
        covectors = []
        for a in range(m):
            covectors.append(_unit(m, a))
            covectors.append(-_unit(m, a))
        for a in range(m):
            for b in range(a + 1, m):
                covectors.append(_unit(m, a) + _unit(m, b))
        return covectors

    # Order 0

    def recover_metric(self, sample: Sampler, m, size):
        """(g, g^{-1}) of the tangential block by polarisation of b_1^2."""

        def q2(xi):
            return _scalar(_real(sample(1, xi) @ sample(1, xi)), size)

        diagonal = [q2(_unit(m, a)) for a in range(m)]
        rows = [[None] * m for _ in range(m)]
        for a in range(m):
            rows[a][a] = diagonal[a]
            for b in range(a + 1, m):
                polar = (q2(_unit(m, a) + _unit(m, b)) - diagonal[a] - diagonal[b]) * 0.5
                rows[a][b] = polar
                rows[b][a] = polar
        ginv = _stack(rows)
        eigenvalues = np.linalg.eigvalsh(np.real(_value(ginv)))
        if np.min(eigenvalues) <= 0.0:
            raise RecoveryError(f"recovered inverse metric is not positive definite (eigenvalues {eigenvalues})")
        return _inverse(ginv), ginv

    # Parity

    def parity_split(self, sample: Sampler, degree, covectors):
        """{xi: (odd, even)} with odd = (b(xi) - b(-xi))/2 and even = (b(xi) + b(-xi))/2."""
        result = {}
        for xi in covectors:
            xi = np.asarray(xi, dtype=float)
            plus, minus = sample(degree, xi), sample(degree, -xi)
            result[tuple(xi)] = ((plus - minus) * 0.5, (plus + minus) * 0.5)
        return result

    def _difference(self, true: Sampler, known: Sampler, degree):
        def sample(_, xi):
            return true(degree, xi) - known(degree, xi)
        return sample

    def _solve_odd(self, odd, principal, g, m, weight):
        """theta_alpha = sum_gamma g_{alpha gamma} w_gamma odd(e_gamma) for per-covector weights."""
        result = []
        for alpha in range(m):
            total = None
            for gamma in range(m):
                term = odd[gamma] * (weight(principal[gamma]) * g[..., alpha, gamma])
                total = term if total is None else total + term
            result.append(total)
        return result

    # Order 1

    def recover_theta_and_split(self, sample: Sampler, known: Sampler, g, rep: GammaRep, N, degree=0):
        """(A_alpha, omega_alpha) from the xi-odd part of the degree-`degree` difference.

        Degree 0 gives theta_alpha|dM; degree -1 gives d_n theta_alpha|dM.
        """
        m = rep.n - 1
        size = rep.k * N
        difference = self._difference(sample, known, degree)
        split = self.parity_split(difference, degree, [_unit(m, a) for a in range(m)])
        odd = [split[tuple(_unit(m, a))][0] for a in range(m)]
        principal = [_scalar(sample(1, _unit(m, a)), size) for a in range(m)]
        if degree == 0:
            # odd(e_g) = i g^{g a} theta_a / |e_g|  and  b_1(e_g) = -|e_g|
            theta = self._solve_odd(odd, principal, g, m, lambda s: s * 1j)
        else:
            # odd(e_g) = i g^{g a} d_n theta_a / (2 |e_g|^2)
            theta = self._solve_odd(odd, principal, g, m, lambda s: (s * s) * -2j)
        A, omega = [], []
        for component in theta:
            gauge, spin = spin_service.split_theta(component, rep, N)
            A.append(gauge)
            omega.append(spin)
        return A, omega, split

    def recover_dn_metric(self, omega, g, m):
        """d_n g_ab = -2 sum_c omega^n_c(d_a) (U^{-1})_{cb}, symmetrised."""
        U = _tangential_frame(g)
        inverse = _inverse(U)
        # rows[alpha][c] = omega^n_c(d_alpha)
        rows = [omega[alpha][..., m, :m] for alpha in range(m)]
        stacked = Jet.stack(rows).T if isinstance(rows[0], Jet) else np.array(rows)
        dn_g = _real(stacked @ inverse) * -2.0
        return _symmetrize(dn_g)

    def even_part_normal_metric(self, even, ginv, dn_g, size):
        """Largest gap between the observed xi-even b_0 difference and the one predicted by d_n g.

        With the tangential data fixed, the even part at xi is
        -d_n g^{ab} xi_a xi_b / (4 |xi|^2) + E/2.
        """
        ginv_value = np.real(_value(ginv))
        dn_g_value = np.real(_value(dn_g))
        dn_ginv = -ginv_value @ dn_g_value @ ginv_value
        e_term = -0.5 * np.trace(ginv_value @ dn_g_value)
        worst = 0.0
        for xi, observed in even.items():
            xi = np.asarray(xi)
            predicted = -(xi @ dn_ginv @ xi) / (4.0 * (xi @ ginv_value @ xi)) + e_term / 2.0
            deviation = _value(observed) - predicted * np.eye(size)
            worst = max(worst, float(np.max(np.abs(deviation))))
        return worst

    # Known forward runs

    def _known_symbols(self, rep, N, order, g_parts, A_parts, m_mass, K, Z=None) -> SymbolSum:
        n = rep.n
        block = _normal_extension(g_parts)
        block = block.truncate(order) if block.order > order else block
        g = _embed_metric(block, n)
        A = []
        for alpha in range(n - 1):
            parts = [None if part is None else part[alpha] for part in A_parts]
            extended = _normal_extension(parts)
            if extended is None:
                extended = Jet.constant(np.zeros((N, N), dtype=complex), n, order)
            A.append(extended)
        A.append(Jet.constant(np.zeros((N, N), dtype=complex), n, order))
        inputs = symbol_service.inputs_from_jets(g, A, rep, Z=Z, m=m_mass, provenance='known-part')
        return symbol_service.solve_recursion(inputs, K)

    def _constant_jet(self, value, n, order):
        return Jet.constant(np.asarray(value), n, order)

    # Order 2

    def recover_order2(self, sample: Sampler, rep: GammaRep, N, lower: BoundaryJets, order, m_mass=0.0):
        """(d_n A_alpha, d_n^2 g, Z) from b_-1 with the lower-order data already known."""
        n = rep.n
        m = n - 1
        size = rep.k * N
        first = self.exact_sampler(self._known_symbols(
            rep, N, order, [lower.g, lower.dn_g], [lower.A], m_mass, K=2))
        dn_A, dn_omega, _ = self.recover_theta_and_split(sample, first, lower.g, rep, N, degree=-1)
        dn2_g = self.recover_dn_metric(dn_omega, lower.g, m)
        second = self.exact_sampler(self._known_symbols(
            rep, N, order, [lower.g, lower.dn_g, dn2_g], [lower.A, dn_A], m_mass, K=2))
        difference = self._difference(sample, second, -1)
        # Z = 2 b_1(xi) (b_-1 - known)(xi) for every covector once the lower data are right
        estimates = [difference(-1, xi) * (_scalar(sample(1, xi), size) * 2.0)
                     for xi in self.sampling_covectors(m)]
        Z = estimates[0]
        for item in estimates[1:]:
            Z = Z + item
        Z = Z * (1.0 / len(estimates))
        scale = max(_magnitude(Z), 1.0)
        spread = max(_magnitude(item - Z) for item in estimates) / scale
        odd = max(
            _magnitude((difference(-1, _unit(m, a)) - difference(-1, -_unit(m, a))) * 0.5) for a in range(m)
        ) / scale
        tangential = max(
            float(np.max(np.abs(_value(component)[..., :m, :m]))) for component in dn_omega
        )
        residuals = {'z_spread': spread, 'z_odd_part': odd, 'dn_omega_tangential': tangential}
        tolerance = getattr(settings, 'DN_RECOVERY_TOL', 1e-8)
        if max(spread, odd) > tolerance:
            raise RecoveryError(
                f"degree -1 remainder is not a potential term: spread {spread:.3e}, "
                f"odd part {odd:.3e} (tolerance {tolerance:.1e}); lower-order data are inconsistent"
            )
        return dn_A, dn2_g, Z, residuals

    # Drivers

    def recover_all(self, source: Union[SymbolSum, Dict[tuple, SymbolEstimate]], depth, rep: GammaRep, N,
                    m_mass=0.0) -> BoundaryJets:
        """Orders 0 .. depth-1 of the boundary data (depth <= 3; numeric input stops at depth 2)."""
        if depth < 1 or depth > 3:
            raise RecoveryError(f"recovery depth must be 1, 2 or 3, got {depth}")
        n = rep.n
        m = n - 1
        size = rep.k * N
        if isinstance(source, SymbolSum):
            provenance = EXACT
            sample = self.exact_sampler(source)
            order = source[1].order
            if source.lowest > 2 - depth:
                raise RecoveryError(f"depth {depth} needs symbol terms down to degree {2 - depth}")
        else:
            provenance = NUMERIC
            if depth > 2:
                raise RecoveryError("numeric estimates only support recovery depth <= 2")
            sample = self.numeric_sampler(source)
            order = None
        g, ginv = self.recover_metric(sample, m, size)
        result = BoundaryJets(g=g, ginv=ginv, provenance=provenance)
        logger.info("Recovered boundary metric (%s)", provenance)
        if depth == 1:
            return result

        if provenance == EXACT:
            known = self.exact_sampler(self._known_symbols(rep, N, order, [g], [], m_mass, K=1))
        else:
            constant = self._constant_jet(np.real(g), n, 2)
            known_sum = self._known_symbols(rep, N, 2, [constant], [], m_mass, K=1)
            known = self._point_sampler(known_sum)
        A, omega, split = self.recover_theta_and_split(sample, known, g, rep, N, degree=0)
        dn_g = self.recover_dn_metric(omega, g, m)
        result.A = A
        result.dn_g = dn_g
        even = {
            xi: odd_even[1]
            for xi, odd_even in self.parity_split(self._difference(sample, known, 0), 0,
                                                  self.sampling_covectors(m)).items()
        }
        result.residuals['even_part_normal_metric'] = self.even_part_normal_metric(even, ginv, dn_g, size)
        result.residuals['antihermitian_A'] = max(
            float(np.max(np.abs(_value(a) + np.conj(_value(a)).T))) for a in A
        )
        logger.info("Recovered A and d_n g (even-part gap %.3e)", result.residuals['even_part_normal_metric'])
        if depth == 2:
            return result

        dn_A, dn2_g, Z, extra = self.recover_order2(sample, rep, N, result, order, m_mass)
        result.dn_A = dn_A
        result.dn2_g = dn2_g
        result.Z = Z
        result.residuals.update(extra)
        logger.info("Recovered d_n A, d_n^2 g and Z")
        return result

    def _point_sampler(self, b: SymbolSum) -> Sampler:
        def sample(degree, xi):
            return b[degree].evaluate(np.asarray(xi, dtype=float))
        return sample

    def estimate_samples(self, dn, grid, scales, point=0, bump=None) -> Dict[tuple, SymbolEstimate]:
        """Fitted symbol samples of a DN matrix at every sampling covector."""
        estimates = {}
        for xi in self.sampling_covectors(grid.m):
            estimates[tuple(float(v) for v in xi)] = dn_service.estimate_symbol(
                dn, grid, xi, scales, point=point, bump=bump)
        return estimates

    # Roundtrip

    def truth(self, inputs: SymbolInputs) -> BoundaryJets:
        """The boundary data a forward run was built from."""
        n = inputs.n
        m = n - 1
        g = inputs.g[..., :m, :m]
        return BoundaryJets(
            g=g.boundary_trace(),
            ginv=inputs.ginv.boundary_trace(),
            dn_g=g.diff(n - 1).boundary_trace(),
            dn2_g=g.diff(n - 1).diff(n - 1).boundary_trace(),
            A=[component.boundary_trace() for component in inputs.A[:m]],
            dn_A=[component.diff(n - 1).boundary_trace() for component in inputs.A[:m]],
            Z=inputs.Z.boundary_trace(),
            provenance='truth',
        )

    def relative_errors(self, recovered: BoundaryJets, truth: BoundaryJets) -> Dict[str, float]:
        """||rec - truth|| / max(||truth||, 1) per object over every shared jet coefficient."""
        errors = {}
        for name in BoundaryJets.OBJECTS:
            rec, ref = recovered.item(name), truth.item(name)
            if rec is None or ref is None:
                continue
            pairs = list(zip(rec, ref)) if isinstance(rec, list) else [(rec, ref)]
            difference, scale = 0.0, 0.0
            for a, b in pairs:
                if isinstance(a, Jet) and isinstance(b, Jet):
                    order = min(a.order, b.order)
                    a, b = a.truncate(order).coeffs, b.truncate(order).coeffs
                else:
                    a, b = _value(a), _value(b)
                difference += float(np.sum(np.abs(np.asarray(a) - np.asarray(b)) ** 2))
                scale += float(np.sum(np.abs(np.asarray(b)) ** 2))
            errors[name] = float(np.sqrt(difference) / max(np.sqrt(scale), 1.0))
        return errors


# Global instance
recovery_service = RecoveryService()
