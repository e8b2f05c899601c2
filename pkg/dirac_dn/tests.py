import json
import math
import os
import shutil
import tempfile
from io import StringIO
from pathlib import Path

import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from dirac_dn.errors import ConfigError, SolverError
from dirac_dn.models import ExperimentRun
from dirac_dn.services.experiments import Check, ExperimentOutcome, grid_levels, observed_rate
from dirac_dn.services.reports import report_service
from dirac_dn.validators import ExperimentConfig, load_config, parse_config, serialize_config

FULL_CONFIG = """
# roundtrip with every section present
[experiment]
subcommand = roundtrip
seed = 12
instances = 2

[metric]
family = polynomial
amplitude = 0.15

[connection]
family = trig
normal_gauge = false
abelian = yes

[potential]
family = scalar
value = 0.25

[grid]
dimension = 3
rank = 1
tangential = 16
normal = 17
refinements = 2

[symbol]
depth = 2
mass = 0.5
scales = 4 6 8

[tolerances]
roundtrip_max_relative_error = 1e-8
"""


class ConfigParserTest(TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_parse_full_config(self):
        """Test every section is coerced to its typed model"""
        config = parse_config(FULL_CONFIG)
        self.assertEqual(config.subcommand, 'roundtrip')
        self.assertEqual(config.seed, 12)
        self.assertFalse(config.connection.normal_gauge)
        self.assertTrue(config.connection.abelian)
        self.assertEqual(config.symbol.scales, [4.0, 6.0, 8.0])
        self.assertEqual(config.grid.dimension, 3)
        self.assertEqual(config.tolerance('roundtrip_max_relative_error', 1.0), 1e-8)
        self.assertEqual(config.tolerance('missing', 0.3), 0.3)

    def test_serialize_roundtrip(self):
        """Test serialized configs parse back to an equal config"""
        config = parse_config(FULL_CONFIG)
        self.assertEqual(parse_config(serialize_config(config)), config)
        minimal = ExperimentConfig(experiment={'subcommand': 'dn-oracle'})
        self.assertEqual(parse_config(serialize_config(minimal)), minimal)

    def test_empty_config(self):
        with self.assertRaises(ConfigError):
            parse_config('')
        with self.assertRaises(ConfigError):
            parse_config('# only a comment\n')

    def test_unknown_section_reports_line(self):
        with self.assertRaises(ConfigError) as raised:
            parse_config('[experiment]\nsubcommand = roundtrip\n\n[bogus]\n')
        self.assertEqual(raised.exception.section, 'bogus')
        self.assertEqual(raised.exception.line, 4)

    def test_invalid_value_reports_field_and_line(self):
        with self.assertRaises(ConfigError) as raised:
            parse_config('[experiment]\nsubcommand = roundtrip\n\n[grid]\ntangential = 9\n')
        self.assertEqual(raised.exception.section, 'grid')
        self.assertEqual(raised.exception.field, 'tangential')
        self.assertEqual(raised.exception.line, 5)
        self.assertIn('line 5', str(raised.exception))

    def test_structural_errors(self):
        cases = [
            'subcommand = roundtrip\n',
            '[grid]\ndimension = 3\n',
            '[experiment]\nsubcommand = roundtrip\nsubcommand = dn-oracle\n',
            '[experiment]\nsubcommand = launch\n',
            '[experiment]\nsubcommand = roundtrip\ncolour = blue\n',
            '[experiment]\nsubcommand = roundtrip\n[symbol]\nscales = 4 8\n',
            '[experiment]\nsubcommand = roundtrip\n[metric]\nfamily = sphere\n[grid]\ndimension = 3\n',
            '[experiment]\nsubcommand = roundtrip\nthis is not an entry\n',
        ]
        for text in cases:
            with self.assertRaises(ConfigError, msg=text):
                parse_config(text)

    def test_load_config(self):
        path = os.path.join(self.temp_dir, 'run.ini')
        with open(path, 'w') as handle:
            handle.write(FULL_CONFIG)
        self.assertEqual(load_config(path).experiment.instances, 2)
        with self.assertRaises(ConfigError):
            load_config(os.path.join(self.temp_dir, 'missing.ini'))

    def test_grid_levels(self):
        levels = grid_levels(parse_config(FULL_CONFIG))
        self.assertEqual([grid.label() for grid in levels], ['16x16x17', '32x32x33', '64x64x65'])


class CheckTest(TestCase):
    def test_verdicts(self):
        self.assertTrue(Check('a', 1.0).passed)
        self.assertTrue(Check('a', 1e-13, 1e-12).passed)
        self.assertFalse(Check('a', 1e-11, 1e-12).passed)
        self.assertFalse(Check('a', float('nan'), 1.0).passed)
        self.assertTrue(Check('rate', 2.1, 1.9, '>=').passed)
        self.assertFalse(Check('rate', 1.2, 1.9, '>=').passed)

    def test_outcome_exit_code(self):
        outcome = ExperimentOutcome('dn-oracle', Path('.'), [Check('a', 0.0, 1.0), Check('b', 2.0, 1.0)], [])
        self.assertFalse(outcome.passed)
        self.assertEqual(outcome.exit_code, 1)

    def test_observed_rate(self):
        self.assertAlmostEqual(observed_rate(4e-3, 1e-3), 2.0)
        self.assertTrue(math.isnan(observed_rate(0.0, 1e-3)))

    def test_solver_error_context(self):
        error = SolverError('factorization failed', grid='8x9', condition=2.5)
        self.assertEqual(str(error), 'factorization failed (condition=2.5, grid=8x9)')


class ReportServiceTest(TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_run_directory_is_slugged(self):
        directory = report_service.run_directory('verify-clifford', 'AB12cd34', root=self.temp_dir)
        self.assertEqual(directory.name, 'verify-clifford-ab12cd34')
        self.assertTrue(directory.is_dir())

    def test_complex_columns_are_split(self):
        frame = pd.DataFrame({'grid': ['8x9'], 'eigenvalue': [1.5 - 0.25j]})
        path = report_service.write_table(frame, self.temp_dir, 'values.csv')
        written = pd.read_csv(path)
        self.assertEqual(list(written.columns), ['grid', 'eigenvalue_re', 'eigenvalue_im'])
        self.assertEqual(written['eigenvalue_im'][0], -0.25)

    def test_floats_keep_full_precision(self):
        value = 1.0 / 3.0
        path = report_service.write_table(pd.DataFrame({'x': [value]}), self.temp_dir, 'x.csv')
        self.assertEqual(pd.read_csv(path, float_precision='round_trip')['x'][0], value)

    def test_manifest(self):
        path = report_service.write_table(pd.DataFrame({'x': [1.0]}), self.temp_dir, 'x.csv')
        manifest_path = report_service.write_manifest(self.temp_dir, [path], metadata={'seed': 3})
        with open(manifest_path) as handle:
            manifest = json.load(handle)
        self.assertIn('generated_at', manifest)
        self.assertEqual(manifest['seed'], 3)
        self.assertEqual(manifest['files'][0]['file'], 'x.csv')
        self.assertEqual(manifest['files'][0]['sha256'], report_service.file_digest(path))

    def test_report_lines(self):
        checks = [Check('clifford_n2', 0.0, 1e-12), Check('rate', 1.0, 1.9, '>=', '16x17')]
        path = report_service.write_report(self.temp_dir, 'lichnerowicz', checks, ['note'])
        lines = path.read_text().splitlines()
        self.assertEqual(lines[1], 'checks: 2 (1 failed)')
        self.assertTrue(lines[3].startswith('  rate [16x17]:'))
        self.assertTrue(lines[3].endswith('FAIL'))
        self.assertEqual(lines[-1], 'note')


class ExperimentCommandTest(TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def _config(self, text):
        path = os.path.join(self.temp_dir, 'experiment.ini')
        with open(path, 'w') as handle:
            handle.write(text)
        return path

    def test_verify_clifford(self):
        """Test a passing run writes its outputs and records the run"""
        out = StringIO()
        call_command('experiment', 'verify-clifford', out=self.temp_dir, seed=7, stdout=out)
        self.assertIn('all 5 checks passed', out.getvalue())

        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'PASSED')
        self.assertEqual(run.exit_code, 0)
        self.assertEqual(run.seed, 7)
        self.assertEqual(run.residuals.count(), 5)
        self.assertEqual(run.failed_checks, 0)

        directory = Path(run.output_dir)
        for name in ('clifford_residuals.csv', 'checks.csv', 'report.txt', 'manifest.json', 'config.ini'):
            self.assertTrue((directory / name).exists(), name)
        self.assertEqual(load_config(directory / 'config.ini').subcommand, 'verify-clifford')
        residuals = pd.read_csv(directory / 'clifford_residuals.csv')
        self.assertEqual(list(residuals['n']), [2, 3, 4, 5, 6])

    def test_subcommand_overrides_config(self):
        path = self._config('[experiment]\nsubcommand = roundtrip\n[grid]\nmax_dimension = 3\n')
        call_command('experiment', 'verify-clifford', config=path, out=self.temp_dir, stdout=StringIO())
        self.assertEqual(ExperimentRun.objects.get().subcommand, 'verify-clifford')

    def test_roundtrip(self):
        call_command('experiment', 'roundtrip', out=self.temp_dir, stdout=StringIO())
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'PASSED')
        table = pd.read_csv(Path(run.output_dir) / 'roundtrip.csv')
        errors = table[~table['object'].str.startswith('residual:')]
        self.assertLess(errors['relative_error'].max(), 1e-9)

    def test_tolerance_violation_exit_code(self):
        path = self._config('[experiment]\nsubcommand = verify-clifford\n[grid]\nmax_dimension = 2\n'
                            '[tolerances]\nclifford = -1\n')
        with self.assertRaises(CommandError) as raised:
            call_command('experiment', 'verify-clifford', config=path, out=self.temp_dir, stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 1)
        self.assertEqual(ExperimentRun.objects.get().status, 'FAILED')

    def test_invalid_config_exit_code(self):
        path = self._config('[experiment]\nsubcommand = verify-clifford\n[grid]\nnormal = 4\n')
        with self.assertRaises(CommandError) as raised:
            call_command('experiment', 'verify-clifford', config=path, out=self.temp_dir, stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 2)
        self.assertIn('normal', str(raised.exception))
        self.assertFalse(ExperimentRun.objects.exists())

    def test_invalid_seed_exit_code(self):
        with self.assertRaises(CommandError) as raised:
            call_command('experiment', 'verify-clifford', seed=-1, out=self.temp_dir, stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 2)

    def test_gauge_error_exit_code(self):
        path = self._config('[experiment]\nsubcommand = ck-residual\n[grid]\nrank = 2\ntangential = 8\nnormal = 9\n'
                            '[gauge]\namplitude = 20\n')
        with self.assertRaises(CommandError) as raised:
            call_command('experiment', 'ck-residual', config=path, out=self.temp_dir, stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 3)
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'ERROR')
        self.assertIn('Theta', run.error_message)

    def test_symbol_forward_outputs(self):
        path = self._config('[experiment]\nsubcommand = symbol-forward\n[metric]\nfamily = conformal\n'
                            '[connection]\nfamily = trig\n[symbol]\ndepth = 3\n')
        call_command('experiment', 'symbol-forward', config=path, out=self.temp_dir, stdout=StringIO())
        directory = Path(ExperimentRun.objects.get().output_dir)
        symbols = pd.read_csv(directory / 'symbols.csv')
        self.assertLessEqual(set(symbols['degree']), {1, 0, -1, -2})
        self.assertIn(1, set(symbols['degree']))

    def test_recover_from_dn_map(self):
        """Test b_1 and A come back from a computed DN map on the flat slab"""
        path = self._config('[experiment]\nsubcommand = recover\n[metric]\nfamily = flat\n'
                            '[connection]\nfamily = trig\nabelian = yes\nnormal_gauge = yes\n'
                            '[grid]\ndimension = 2\nrank = 1\ntangential = 256\nnormal = 129\nrefinements = 0\n'
                            '[symbol]\ndepth = 2\nscales = 8 16 32\n')
        call_command('experiment', 'recover', config=path, out=self.temp_dir, stdout=StringIO())
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'PASSED')

        directory = Path(run.output_dir)
        checks = pd.read_csv(directory / 'checks.csv').set_index('name')
        self.assertLess(checks.loc['b1_relative_error', 'value'], 0.02)
        self.assertLess(checks.loc['connection_relative_error', 'value'], 0.05)
        recovered = pd.read_csv(directory / 'recovered.csv')
        self.assertEqual(set(recovered['object']), {'g', 'dn_g', 'A'})
        self.assertTrue((recovered['provenance'] == 'numeric-estimate').all())

    def test_flat_lichnerowicz_bound_follows_refinement(self):
        """Test the flat round-off bound grows with 1/h^2 so refined grids still pass"""
        path = self._config('[experiment]\nsubcommand = lichnerowicz\n'
                            '[grid]\ntangential = 32\nnormal = 33\nrefinements = 2\n')
        call_command('experiment', 'lichnerowicz', config=path, out=self.temp_dir, stdout=StringIO())
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'PASSED')
        checks = pd.read_csv(Path(run.output_dir) / 'checks.csv')
        self.assertEqual(list(checks['grid']), ['32x33', '64x65', '128x129'])
        tolerances = list(checks['tolerance'])
        self.assertAlmostEqual(tolerances[1] / tolerances[0], 4.0, delta=0.2)
        self.assertTrue((checks['value'] < checks['tolerance']).all())
