"""
Experiment runner: builds the configured fields, runs one subcommand's
pipeline, checks tolerances and writes tables, report and manifest.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from django.conf import settings
from django.db import DatabaseError
from django.utils import timezone

from ..errors import ConfigError
from ..models import ExperimentRun, ResidualRecord
from ..validators import ExperimentConfig, serialize_config
from .clifford import clifford_service
from .dirac_fd import SlabGrid, dirac_fd_service, smooth_spinor
from .dn_numeric import dn_service
from .families import (
    ConformalMetric, ConstantConnection, DiagonalMetric, ExponentialGauge, FlatMetric,
    PolynomialConnection, PolynomialMetric, PolynomialPotential, ScalarPotential, SphereMetric,
    TrigConnection, TrigPolynomial, ZeroConnection, ZeroPotential, random_skew_hermitian,
)
from .gauge import gauge_service
from .recovery import recovery_service
from .reports import report_service
from .symbol_engine import symbol_service

logger = logging.getLogger(__name__)


@dataclass
class Check:
    name: str
    value: float
    tolerance: Optional[float] = None
    comparison: str = '<='
    grid: str = ''

    @property
    def passed(self):
        if self.tolerance is None:
            return True
        if not math.isfinite(self.value):
            return False
        if self.comparison == '>=':
            return self.value >= self.tolerance
        return self.value <= self.tolerance

    def as_row(self):
        return {
            'name': self.name,
            'value': self.value,
            'tolerance': self.tolerance,
            'comparison': self.comparison,
            'passed': self.passed,
            'grid': self.grid,
        }


@dataclass
class ExperimentOutcome:
    subcommand: str
    directory: Path
    checks: List[Check]
    files: List[Path]
    run_id: Optional[str] = None
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self):
        return all(check.passed for check in self.checks)

    @property
    def exit_code(self):
        return 0 if self.passed else 1


# Field builders

def build_metric(config: ExperimentConfig, rng, order=4):
    section = config.metric
    n = config.grid.dimension
    if section.family == 'flat':
        return FlatMetric(n)
    if section.family == 'conformal':
        return ConformalMetric(n, TrigPolynomial.random(n, rng, count=section.count, amplitude=section.amplitude))
    if section.family == 'diagonal':
        profiles = [TrigPolynomial.random(n, rng, count=section.count, amplitude=section.amplitude)
                    for _ in range(n - 1)]
        return DiagonalMetric(n, section.epsilon, profiles)
    if section.family == 'sphere':
        return SphereMetric(radius=section.radius, rho0=section.rho0)
    return PolynomialMetric.random(n, order, rng, amplitude=section.amplitude)


def build_connection(config: ExperimentConfig, rng, order=4):
    section = config.connection
    n, N = config.grid.dimension, config.grid.rank
    if section.family == 'zero':
        return ZeroConnection(n, N)
    if section.family == 'constant':
        matrices = np.stack([random_skew_hermitian(N, rng, section.amplitude) for _ in range(n)])
        if section.normal_gauge:
            matrices[-1] = 0.0
        return ConstantConnection(matrices)
    if section.family == 'trig':
        return TrigConnection.random(n, N, rng, amplitude=section.amplitude, count=section.count,
                                     normal_gauge=section.normal_gauge, abelian=section.abelian)
    if section.family == 'linear-normal':
        if N != 1:
            raise ConfigError('linear-normal connections are abelian (rank = 1)', section='grid', field='rank')
        return TrigConnection.linear_normal(section.offsets, section.slopes)
    return PolynomialConnection.random(n, N, order, rng, amplitude=section.amplitude)


def build_potential(config: ExperimentConfig, rng, size, order=4):
    section = config.potential
    n = config.grid.dimension
    if section.family == 'zero':
        return None
    if section.family == 'scalar':
        return ScalarPotential(n, size, section.value)
    return PolynomialPotential.random(n, size, order, rng, amplitude=section.amplitude)


def build_gauge(config: ExperimentConfig, rng, boundary_identity=True):
    return ExponentialGauge.random(config.grid.dimension, config.grid.rank, rng,
                                   amplitude=config.gauge.amplitude, count=config.gauge.count,
                                   boundary_identity=boundary_identity,
                                   abelian=config.connection.abelian)


def grid_levels(config: ExperimentConfig) -> List[SlabGrid]:
    """The configured grid and its refinements (spacings halved each time)."""
    section = config.grid
    levels = []
    for level in range(section.refinements + 1):
        scale = 2 ** level
        levels.append(SlabGrid(n=section.dimension, tangential=section.tangential * scale,
                               normal=(section.normal - 1) * scale + 1, T=section.thickness))
    return levels


def observed_rate(coarse, fine):
    if coarse <= 0.0 or fine <= 0.0:
        return float('nan')
    return math.log2(coarse / fine)


class ExperimentRunner:
    """Run one configured experiment and persist its outcome"""

    def run(self, config: ExperimentConfig, out=None, threads=None) -> ExperimentOutcome:
        run = self._start_run(config, threads)
        short_id = run.short_id if run is not None else f'{config.seed:08x}'[-8:]
        directory = report_service.run_directory(config.subcommand, short_id, root=out)
        logger.info("Running %s (seed %d) into %s", config.subcommand, config.seed, directory)
        handler = getattr(self, '_run_' + config.subcommand.replace('-', '_'))
        self.threads = threads or config.solver.threads
        self.rng = np.random.default_rng(config.seed)
        try:
            checks, files, notes = handler(config, directory)
        except Exception as error:
            self._finish_run(run, 'ERROR', None, [], str(error), directory)
            raise

        config_path = directory / 'config.ini'
        config_path.write_text(serialize_config(config), encoding='utf-8')
        checks_path = report_service.write_table(report_service.checks_frame(checks), directory, 'checks.csv')
        report_path = report_service.write_report(directory, config.subcommand, checks, notes)
        files = list(files) + [config_path, checks_path, report_path]
        report_service.write_manifest(directory, files, metadata={
            'subcommand': config.subcommand,
            'seed': config.seed,
        })
        outcome = ExperimentOutcome(subcommand=config.subcommand, directory=directory, checks=checks,
                                    files=files, run_id=str(run.id) if run is not None else None, notes=notes)
        self._finish_run(run, 'PASSED' if outcome.passed else 'FAILED', outcome.exit_code, checks, '', directory)
        logger.info("%s finished: %d checks, %d failed", config.subcommand, len(checks),
                    sum(not check.passed for check in checks))
        return outcome

    # Persistence (best effort: the numerical pipeline does not depend on the database)

    def _start_run(self, config, threads):
        try:
            return ExperimentRun.objects.create(
                subcommand=config.subcommand,
                status='RUNNING',
                seed=config.seed % 2 ** 63,
                threads=threads or config.solver.threads or getattr(settings, 'DN_THREADS', 1),
                config_text=serialize_config(config),
            )
        except DatabaseError as error:
            logger.warning("Experiment run not recorded: %s", error)
            return None

    def _finish_run(self, run, status, exit_code, checks, message, directory):
        if run is None:
            return
        try:
            run.status = status
            run.output_dir = str(directory)
            run.exit_code = exit_code
            run.error_message = message
            run.finished_at = timezone.now()
            run.save()
            ResidualRecord.objects.bulk_create([
                ResidualRecord(run=run, name=check.name, value=check.value if math.isfinite(check.value) else 0.0,
                               tolerance=check.tolerance, passed=check.passed, grid=check.grid)
                for check in checks
            ])
        except DatabaseError as error:
            logger.warning("Experiment run %s not updated: %s", run.short_id, error)

    # Shared pieces

    def _fields(self, config, order=4):
        rep = clifford_service.build_gamma(config.grid.dimension)
        metric = build_metric(config, self.rng, order)
        connection = build_connection(config, self.rng, order)
        potential = build_potential(config, self.rng, rep.k * config.grid.rank, order)
        return rep, metric, connection, potential

    def _rate_check(self, name, levels, values, config, default=1.9):
        if len(values) < 2:
            return []
        rate = observed_rate(values[-2], values[-1])
        return [Check(name, rate, config.tolerance(name, default), '>=', levels[-1].label())]

    # Subcommands

    def _run_verify_clifford(self, config, directory):
        rows, checks = [], []
        for n in range(2, config.grid.max_dimension + 1):
            rep = clifford_service.build_gamma(n)
            residuals = clifford_service.relation_residuals(rep)
            rows.append({'n': n, 'k': rep.k, **residuals})
            checks.append(Check(f'clifford_n{n}', max(residuals.values()), config.tolerance('clifford', 1e-12)))
        path = report_service.write_table(pd.DataFrame(rows), directory, 'clifford_residuals.csv')
        return checks, [path], []

    def _run_lichnerowicz(self, config, directory):
        rep, metric, connection, _ = self._fields(config)
        levels = grid_levels(config)
        rows, residuals, roundoff = [], [], []
        for grid in levels:
            op = dirac_fd_service.build(metric, connection, rep, grid)
            psi = smooth_spinor(grid, op.dof, seed=config.seed)
            residual = dirac_fd_service.lichnerowicz_residual(op, psi)
            residuals.append(residual)
            # round-off floor of D^2 psi: max|psi| / h^2
            roundoff.append(float(np.max(np.abs(psi))) / min(grid.h_normal, *grid.h_tangential) ** 2)
            rows.append({'grid': grid.label(), 'h': grid.h_normal, 'residual': residual})
        for row, rate in zip(rows[1:], [observed_rate(a, b) for a, b in zip(residuals, residuals[1:])]):
            row['rate'] = rate
        path = report_service.write_table(pd.DataFrame(rows), directory, 'lichnerowicz.csv')
        if config.metric.family == 'flat' and config.connection.family == 'zero':
            base = config.tolerance('lichnerowicz_flat', 1e-14)
            checks = [Check('lichnerowicz_flat', r, base * scale, grid=g.label())
                      for r, scale, g in zip(residuals, roundoff, levels)]
        else:
            checks = self._rate_check('lichnerowicz_rate', levels, residuals, config)
        return checks, [path], []

    def _run_dn_compute(self, config, directory):
        rep, metric, connection, potential = self._fields(config)
        grid = grid_levels(config)[0]
        op = dirac_fd_service.build(metric, connection, rep, grid)
        solver = dn_service.factorize(op, m=config.symbol.mass, potential=potential)
        dnm = dn_service.dn_matrix(solver, threads=self.threads)
        path = directory / 'dn_matrix.csv'
        dn_service.export_dn_matrix(dnm, path)
        chi = dn_service.plane_wave(grid, np.eye(grid.m)[0], op.dof)
        consistency = dn_service.dn_hat_consistency(solver, chi)
        checks = [
            Check('dn_hat_consistency', consistency, config.tolerances.get('dn_hat_consistency'), grid=grid.label()),
            Check('dn_condition', solver.condition, config.tolerances.get('dn_condition'), grid=grid.label()),
        ]
        return checks, [path, Path(f'{path}.json')], []

    def _run_dn_oracle(self, config, directory):
        if config.metric.family != 'flat' or config.connection.family != 'zero':
            raise ConfigError('dn-oracle compares against the flat, connection-free slab',
                              section='metric', field='family')
        rep, metric, connection, _ = self._fields(config)
        levels = grid_levels(config)
        rows, worst = [], []
        for grid in levels:
            op = dirac_fd_service.build(metric, connection, rep, grid)
            solver = dn_service.factorize(op)
            level_error = 0.0
            for mode in range(1, config.solver.modes + 1):
                wavevector = mode * np.eye(grid.m)[0]
                computed = dn_service.mode_eigenvalue(solver, wavevector)
                discrete, half_space = dn_service.flat_mode_oracle(grid, wavevector)
                error = abs(computed - discrete)
                level_error = max(level_error, error)
                rows.append({
                    'mode': mode,
                    'grid': grid.label(),
                    'computed': computed,
                    'discrete_oracle': discrete,
                    'half_space': half_space,
                    'abs_error': error,
                    'half_space_gap': abs(computed - half_space),
                })
            worst.append(level_error)
        frame = pd.DataFrame(rows)
        frame['rate'] = np.nan
        for mode in range(1, config.solver.modes + 1):
            errors = frame.loc[frame['mode'] == mode, 'abs_error'].to_numpy()
            index = frame.index[frame['mode'] == mode]
            for position in range(1, len(errors)):
                frame.loc[index[position], 'rate'] = observed_rate(errors[position - 1], errors[position])
        path = report_service.write_table(frame, directory, 'dn_oracle.csv')
        checks = [Check('dn_oracle_error', worst[-1], config.tolerance('dn_oracle_error', 1e-2), grid=levels[-1].label())]
        checks += self._rate_check('dn_oracle_rate', levels, worst, config)
        return checks, [path], []

    def _run_symbol_forward(self, config, directory):
        depth = config.symbol.depth
        order = config.symbol.order or max(depth + 1, 2)
        rep, metric, connection, potential = self._fields(config, order)
        n = config.grid.dimension
        inputs = symbol_service.inputs_from_fields(metric, connection, rep, np.zeros(n), order,
                                                   potential=potential, m=config.symbol.mass)
        b = symbol_service.solve_recursion(inputs, depth)
        symbols_path = report_service.write_table(symbol_service.dump(b), directory, 'symbols.csv')
        residual = symbol_service.residual_at(symbol_service.symbol_residual(inputs, b), self.rng,
                                              count=config.symbol.samples)
        rows = [{'degree': degree, 'max_abs': value} for degree, value in sorted(residual.items(), reverse=True)]
        residual_path = report_service.write_table(pd.DataFrame(rows), directory, 'symbol_residuals.csv')

        ginv = inputs.ginv.value()
        principal = 0.0
        for _ in range(config.symbol.samples):
            xi = self.rng.standard_normal(n - 1)
            expected = -np.sqrt(xi @ ginv @ xi) * np.eye(inputs.size)
            principal = max(principal, float(np.max(np.abs(b[1].evaluate(xi) - expected))))
        checks = [
            Check('symbol_residual', max(residual.values()), config.tolerance('symbol_residual', 1e-10)),
            Check('principal_symbol', principal, config.tolerance('principal_symbol', 1e-12)),
        ]
        notes = [f'lowest degree: {b.lowest}', f'terms per degree: ' +
                 ', '.join(f'{d}: {len(b[d].terms)}' for d in b.degrees)]
        return checks, [symbols_path, residual_path], notes

    def _run_recover(self, config, directory):
        rep, metric, connection, potential = self._fields(config)
        grid = grid_levels(config)[0]
        m, N = grid.m, config.grid.rank
        op = dirac_fd_service.build(metric, connection, rep, grid)
        solver = dn_service.factorize(op, m=config.symbol.mass, potential=potential)
        scales = config.symbol.scales
        estimates = recovery_service.estimate_samples(solver, grid, scales, point=0)
        depth = min(config.symbol.depth, 2)
        recovered = recovery_service.recover_all(estimates, depth, rep, N, m_mass=config.symbol.mass)

        x0 = grid.boundary_points[:1]
        g_true = metric.values(x0)[0, :m, :m]
        ginv_true = np.linalg.inv(g_true)
        rows, b1_error = [], 0.0
        for xi, estimate in estimates.items():
            xi = np.asarray(xi)
            norm = float(np.sqrt(xi @ ginv_true @ xi))
            expected = -norm * np.eye(estimate.b1.shape[0])
            b1_error = max(b1_error, float(np.max(np.abs(estimate.b1 - expected))) / norm)
            rows.append({'xi': ' '.join(f'{v:g}' for v in xi), 'b1': estimate.b1[0, 0],
                         'b0': estimate.b0[0, 0], 'fit_residual': estimate.residual})
        estimates_path = report_service.write_table(pd.DataFrame(rows), directory, 'symbol_estimates.csv')
        recovered_path = report_service.write_table(recovered.to_frame(), directory, 'recovered.csv')

        g_error = float(np.max(np.abs(np.real(recovered.values()['g']) - g_true)) / np.max(np.abs(g_true)))
        checks = [
            Check('b1_relative_error', b1_error, config.tolerance('b1_relative_error', 0.02), grid=grid.label()),
            Check('metric_relative_error', g_error, config.tolerance('metric_relative_error', 0.02),
                  grid=grid.label()),
        ]
        if depth >= 2:
            A_true = connection.values(x0)[:m, 0]
            A_rec = recovered.values()['A']
            scale = float(np.linalg.norm(A_true))
            A_error = float(np.linalg.norm(A_rec - A_true)) / scale if scale > 1e-12 else float(np.linalg.norm(A_rec))
            checks.append(Check('connection_relative_error', A_error,
                                config.tolerance('connection_relative_error', 0.05), grid=grid.label()))
        notes = [f'frequencies: {" ".join(repr(s) for s in scales)}']
        return checks, [estimates_path, recovered_path], notes

    def _run_roundtrip(self, config, directory):
        depth = config.symbol.depth
        order = config.symbol.order or depth + 1
        n, N = config.grid.dimension, config.grid.rank
        rep = clifford_service.build_gamma(n)
        base = np.zeros(n)
        rows, worst = [], 0.0
        for instance in range(config.experiment.instances):
            rng = np.random.default_rng([config.seed, instance])
            metric = PolynomialMetric.random(n, order, rng, amplitude=config.metric.amplitude)
            connection = PolynomialConnection.random(n, N, order, rng, amplitude=config.connection.amplitude)
            potential = PolynomialPotential.random(n, rep.k * N, order, rng, amplitude=config.potential.amplitude)
            inputs = symbol_service.inputs_from_fields(metric, connection, rep, base, order,
                                                       potential=potential, m=config.symbol.mass)
            b = symbol_service.solve_recursion(inputs, depth)
            recovered = recovery_service.recover_all(b, depth, rep, N, m_mass=config.symbol.mass)
            errors = recovery_service.relative_errors(recovered, recovery_service.truth(inputs))
            for name, error in errors.items():
                rows.append({'instance': instance, 'object': name, 'relative_error': error})
                worst = max(worst, error)
            for name, value in recovered.residuals.items():
                rows.append({'instance': instance, 'object': f'residual:{name}', 'relative_error': value})
        path = report_service.write_table(pd.DataFrame(rows), directory, 'roundtrip.csv')
        checks = [Check('roundtrip_max_relative_error', worst, config.tolerance('roundtrip_max_relative_error', 1e-9))]
        notes = ['random polynomial boundary jets; the metric/connection families in the config are not used']
        return checks, [path], notes

    def _run_gauge_invariance(self, config, directory):
        rep, metric, connection, potential = self._fields(config)
        gauge = build_gauge(config, self.rng)
        levels = grid_levels(config)
        defects = [gauge_service.dn_gauge_defect(metric, connection, gauge, rep, grid, m=config.symbol.mass,
                                                 potential=potential) for grid in levels]
        rows = [{'grid': grid.label(), 'h': grid.h_normal, 'defect': defect} for grid, defect in zip(levels, defects)]
        path = report_service.write_table(pd.DataFrame(rows), directory, 'gauge_invariance.csv')
        return self._rate_check('gauge_invariance_rate', levels, defects, config), [path], []

    def _run_normal_gauge(self, config, directory):
        rep, metric, connection, potential = self._fields(config)
        levels = grid_levels(config)
        rows, checks, defects = [], [], []
        for grid in levels:
            fixed = gauge_service.normal_gauge_fix(connection, grid)
            defect = gauge_service.dn_defect(metric, connection, fixed.connection, rep, grid,
                                             m=config.symbol.mass, potential=potential)
            defects.append(defect)
            rows.append({'grid': grid.label(), 'normal_residual': fixed.normal_residual,
                         'unitarity_residual': fixed.unitarity_residual, 'dn_defect': defect})
            checks.append(Check('normal_component', fixed.normal_residual,
                                config.tolerance('normal_component', 1e-8), grid=grid.label()))
            checks.append(Check('gauge_unitarity', fixed.unitarity_residual,
                                config.tolerance('gauge_unitarity', 1e-10), grid=grid.label()))
        path = report_service.write_table(pd.DataFrame(rows), directory, 'normal_gauge.csv')
        notes = []
        if defects[0] > 1e-12:
            checks += self._rate_check('normal_gauge_dn_rate', levels, defects, config)
        else:
            notes.append('connection already in normal gauge; DN defect at round-off')
        return checks, [path], notes

    def _run_ymd_residual(self, config, directory):
        rep, metric, connection, _ = self._fields(config)
        grid = grid_levels(config)[0]
        op = dirac_fd_service.build(metric, connection, rep, grid)
        values, vectors = dirac_fd_service.lowest_dirichlet_modes(op, count=1)
        eigenvalue = values[0]
        phi = np.zeros(op.size, dtype=complex)
        phi[grid.expand(grid.interior_points, op.dof)] = vectors[:, 0]
        r1, r2 = gauge_service.ymd_residuals(op, phi, m=float(np.sqrt(max(eigenvalue.real, 0.0))))
        rows = [{'grid': grid.label(), 'eigenvalue': eigenvalue, 'spinor_residual': r1, 'connection_residual': r2}]
        path = report_service.write_table(pd.DataFrame(rows), directory, 'ymd_residuals.csv')
        checks = [
            Check('ymd_spinor', r1, config.tolerance('ymd_spinor', 1e-8), grid=grid.label()),
            Check('ymd_connection', r2, config.tolerances.get('ymd_connection'), grid=grid.label()),
        ]
        return checks, [path], []

    def _run_transport_equivalence(self, config, directory):
        rep, metric, connection, _ = self._fields(config)
        grid = grid_levels(config)[0]
        n, N = grid.n, config.grid.rank
        gauge = build_gauge(config, self.rng)
        gauged = gauge_service.apply_gauge(connection, gauge, check_points=grid.points)
        substeps = config.gauge.substeps
        equivalent = gauge_service.transport_equivalence(connection, gauged, grid, substeps=substeps)
        gauge_error = float(np.max(np.abs(equivalent.gauge - gauge.values(grid.points))))

        curved = TrigConnection.random(n, N, self.rng, amplitude=config.connection.amplitude,
                                       normal_gauge=False, abelian=config.connection.abelian)
        inequivalent = gauge_service.transport_equivalence(ZeroConnection(n, N), curved, grid, substeps=substeps)
        curvature = gauge_service.curvature_field(curved, grid.points).norm()
        ratio = inequivalent.conjugation_residual / curvature if curvature > 0 else float('nan')
        rows = [
            {'pair': 'gauge-related', 'path_residual': equivalent.path_residual,
             'conjugation_residual': equivalent.conjugation_residual, 'gauge_error': gauge_error},
            {'pair': 'flat-vs-curved', 'path_residual': inequivalent.path_residual,
             'conjugation_residual': inequivalent.conjugation_residual, 'gauge_error': np.nan},
        ]
        path = report_service.write_table(pd.DataFrame(rows), directory, 'transport_equivalence.csv')
        label = grid.label()
        checks = [
            Check('equivalence_conjugation', equivalent.conjugation_residual,
                  config.tolerance('equivalence_conjugation', 1e-6), grid=label),
            Check('equivalence_path', equivalent.path_residual, config.tolerance('equivalence_path', 1e-6), grid=label),
            Check('equivalence_gauge_error', gauge_error, config.tolerance('equivalence_gauge_error', 1e-6), grid=label),
            Check('obstruction_ratio', ratio, config.tolerance('obstruction_ratio', 0.5), '>=', label),
        ]
        return checks, [path], []

    def _run_ck_residual(self, config, directory):
        rep, metric, connection, _ = self._fields(config)
        grid = grid_levels(config)[0]
        N = config.grid.rank
        zero = np.zeros((grid.size, N, N), dtype=complex)
        divergence = gauge_service.ck_residual(zero, connection, metric, grid)
        rows = [{'case': 'S = 0', 'residual': divergence}]
        checks = [Check('ck_zero_generator', divergence, config.tolerances.get('ck_zero_generator'),
                        grid=grid.label())]
        if N == 1:
            S = gauge_service.abelian_gauge_fix(connection, metric, grid)
            residual = gauge_service.ck_residual(S, connection, metric, grid)
            rows.append({'case': 'abelian solve', 'residual': residual})
            checks.append(Check('ck_abelian', residual, config.tolerance('ck_abelian', 1e-6), grid=grid.label()))
        else:
            gauge = build_gauge(config, self.rng)
            residual = gauge_service.ck_residual(gauge, connection, metric, grid)
            rows.append({'case': 'exponential generator', 'residual': residual})
            checks.append(Check('ck_generator', residual, config.tolerances.get('ck_generator'), grid=grid.label()))
        path = report_service.write_table(pd.DataFrame(rows), directory, 'ck_residual.csv')
        return checks, [path], []


# Global instance
experiment_runner = ExperimentRunner()
