"""Exception hierarchy shared by the numerical services and the CLI."""


class DiracDNError(Exception):
    """Base class for all errors raised by dirac_dn."""


class DimensionError(DiracDNError):
    """Shapes, ranks or dimensions do not match."""


class JetOrderError(DiracDNError):
    """An operation needs Taylor coefficients beyond the stored order."""


class SolverError(DiracDNError):
    """A linear solve or ODE integration failed.

    `context` carries whatever the caller knows about the failure
    (condition estimate, iteration count, grid location).
    """

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context

    def __str__(self):
        base = super().__str__()
        if not self.context:
            return base
        details = ', '.join(f'{key}={value}' for key, value in sorted(self.context.items()))
        return f'{base} ({details})'


class RecoveryError(DiracDNError):
    """Boundary data could not be recovered consistently."""


class GaugeError(DiracDNError):
    """Gauge transformation or series input outside its valid range."""


class ConfigError(DiracDNError):
    """Experiment configuration is invalid."""

    def __init__(self, message, section=None, field=None, line=None):
        self.section = section
        self.field = field
        self.line = line
        location = []
        if section:
            location.append(f'[{section}]')
        if field:
            location.append(field)
        if line is not None:
            location.append(f'line {line}')
        if location:
            message = f"{' '.join(location)}: {message}"
        super().__init__(message)
