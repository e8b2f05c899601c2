from django.core.management.base import BaseCommand, CommandError

from dirac_dn.errors import ConfigError, DimensionError, GaugeError, JetOrderError, RecoveryError, SolverError
from dirac_dn.services.experiments import experiment_runner
from dirac_dn.validators import SUBCOMMANDS, ExperimentConfig, load_config

# Exit codes: 0 pass, 1 tolerance violation, 2 usage or configuration error, 3 solver failure
USAGE_ERRORS = (ConfigError, DimensionError, JetOrderError)
SOLVER_ERRORS = (SolverError, RecoveryError, GaugeError)


class Command(BaseCommand):
    help = 'Run one Dirac DN experiment from a configuration file'

    def add_arguments(self, parser):
        parser.add_argument('--config', type=str, help='Experiment configuration (INI sections)')
        parser.add_argument('--out', type=str, help='Output root (default: DN_OUTPUT_ROOT)')
        parser.add_argument('--seed', type=int, help='Random seed, overrides [experiment] seed')
        parser.add_argument('--threads', type=int, help='Worker threads, overrides DN_THREADS')
        subparsers = parser.add_subparsers(dest='subcommand', metavar='subcommand', required=True)
        for name, description in SUBCOMMANDS.items():
            subparsers.add_parser(name, help=description, description=description)

    def handle(self, *args, **options):
        subcommand = options['subcommand']
        try:
            config = self._load(subcommand, options)
        except USAGE_ERRORS as e:
            raise CommandError(f'Invalid configuration: {e}', returncode=2)

        try:
            outcome = experiment_runner.run(config, out=options.get('out'), threads=options.get('threads'))
        except USAGE_ERRORS as e:
            raise CommandError(f'{subcommand}: {e}', returncode=2)
        except SOLVER_ERRORS as e:
            raise CommandError(f'{subcommand} failed: {e}', returncode=3)

        for check in outcome.checks:
            line = f'  {check.name}: {check.value:.6e}'
            if check.tolerance is not None:
                line += f' {check.comparison} {check.tolerance:.3e}'
            self.stdout.write(line if check.passed else self.style.ERROR(line))
        self.stdout.write(f'Outputs in {outcome.directory}')

        if not outcome.passed:
            failed = ', '.join(check.name for check in outcome.checks if not check.passed)
            raise CommandError(f'{subcommand}: tolerance violated ({failed})', returncode=1)
        self.stdout.write(self.style.SUCCESS(f'{subcommand}: all {len(outcome.checks)} checks passed'))

    def _load(self, subcommand, options):
        if options.get('config'):
            config = load_config(options['config'])
        else:
            config = ExperimentConfig(experiment={'subcommand': subcommand})
        experiment = {'subcommand': subcommand}
        if options.get('seed') is not None:
            if not 0 <= options['seed'] < 2 ** 64:
                raise ConfigError('seed must be an unsigned 64-bit integer', section='experiment', field='seed')
            experiment['seed'] = options['seed']
        return config.model_copy(update={'experiment': config.experiment.model_copy(update=experiment)})
