import re
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

SUBCOMMANDS = {
    'verify-clifford': 'Clifford relation, skew-Hermiticity and trace residuals for a range of n',
    'lichnerowicz': 'D_A^2 against the connection Laplacian side, with refinement rate',
    'dn-compute': 'Assemble the discrete DN matrix and export it as CSV',
    'dn-oracle': 'Flat-slab DN eigenvalues against the exact mode values, with refinement rate',
    'symbol-forward': 'Exact symbol recursion b_1 .. b_{1-K} from boundary jets',
    'recover': 'Recover boundary jets from numerically estimated DN symbols',
    'roundtrip': 'Forward symbols from random jets, then recover and compare',
    'gauge-invariance': 'DN maps before and after a boundary-identity gauge, with refinement rate',
    'normal-gauge': 'Numerical normal gauge fixing and the resulting DN defect',
    'ymd-residual': 'Yang-Mills-Dirac residuals for a Dirichlet eigenmode',
    'transport-equivalence': 'Gauge-equivalence test by path transport',
    'ck-residual': 'Residual of the gauge-fixing elliptic system',
}

METRIC_FAMILIES = ('flat', 'conformal', 'diagonal', 'sphere', 'polynomial')
CONNECTION_FAMILIES = ('zero', 'constant', 'trig', 'linear-normal', 'polynomial')
POTENTIAL_FAMILIES = ('zero', 'scalar', 'polynomial')

SECTIONS = ('experiment', 'metric', 'connection', 'potential', 'gauge', 'grid', 'symbol',
            'solver', 'tolerances')

_SECTION = re.compile(r'^\[([A-Za-z_][\w-]*)\]$')
_ENTRY = re.compile(r'^([A-Za-z_][\w.-]*)\s*=\s*(.*)$')


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class ExperimentSection(_Section):
    subcommand: str
    seed: int = Field(0, ge=0, lt=2 ** 64)
    instances: int = Field(1, ge=1, le=1000)
    description: str = ''

    @field_validator('subcommand')
    def validate_subcommand(cls, v):
        v = v.strip()
        if v not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand '{v}'")
        return v


class MetricSection(_Section):
    family: str = 'flat'
    amplitude: float = Field(0.1, ge=0.0)
    count: int = Field(2, ge=1, le=8)
    epsilon: float = 0.1
    radius: float = Field(1.0, gt=0.0)
    rho0: float = Field(1.0, gt=0.0)

    @field_validator('family')
    def validate_family(cls, v):
        if v not in METRIC_FAMILIES:
            raise ValueError(f"unknown metric family '{v}'")
        return v


class ConnectionSection(_Section):
    family: str = 'zero'
    amplitude: float = Field(0.3, ge=0.0)
    count: int = Field(2, ge=1, le=8)
    normal_gauge: bool = True
    abelian: bool = False
    offsets: List[float] = []
    slopes: List[float] = []

    @field_validator('family')
    def validate_family(cls, v):
        if v not in CONNECTION_FAMILIES:
            raise ValueError(f"unknown connection family '{v}'")
        return v


class PotentialSection(_Section):
    family: str = 'zero'
    value: float = 0.0
    amplitude: float = Field(0.5, ge=0.0)

    @field_validator('family')
    def validate_family(cls, v):
        if v not in POTENTIAL_FAMILIES:
            raise ValueError(f"unknown potential family '{v}'")
        return v


class GaugeSection(_Section):
    amplitude: float = Field(0.3, ge=0.0)
    count: int = Field(2, ge=1, le=8)
    substeps: int = Field(16, ge=1, le=256)


class GridSection(_Section):
    dimension: int = Field(2, ge=2, le=6)
    rank: int = Field(1, ge=1, le=8)
    tangential: int = Field(32, ge=8)
    normal: int = Field(33, ge=9)
    thickness: float = Field(1.0, gt=0.0)
    refinements: int = Field(1, ge=0, le=4)
    max_dimension: int = Field(6, ge=2, le=8)

    @field_validator('tangential')
    def validate_tangential(cls, v):
        if v % 2:
            raise ValueError('tangential size must be even')
        return v


class SymbolSection(_Section):
    depth: int = Field(3, ge=1, le=4)
    order: Optional[int] = Field(None, ge=2, le=8)
    mass: float = Field(0.0, ge=0.0)
    scales: List[float] = [8.0, 16.0, 32.0]
    samples: int = Field(20, ge=1, le=1000)

    @field_validator('scales')
    def validate_scales(cls, v):
        if len(v) < 3:
            raise ValueError('at least three frequencies are needed for the symbol fit')
        if len(set(v)) != len(v) or min(v) <= 0:
            raise ValueError('frequencies must be positive and distinct')
        return v


class SolverSection(_Section):
    rtol: float = Field(1e-10, gt=0.0, lt=1.0)
    threads: Optional[int] = Field(None, ge=1, le=256)
    modes: int = Field(8, ge=1, le=64)


class ExperimentConfig(_Section):
    experiment: ExperimentSection
    metric: MetricSection = Field(default_factory=MetricSection)
    connection: ConnectionSection = Field(default_factory=ConnectionSection)
    potential: PotentialSection = Field(default_factory=PotentialSection)
    gauge: GaugeSection = Field(default_factory=GaugeSection)
    grid: GridSection = Field(default_factory=GridSection)
    symbol: SymbolSection = Field(default_factory=SymbolSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    tolerances: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode='after')
    def check_combinations(self):
        if self.metric.family == 'sphere' and self.grid.dimension != 2:
            raise ValueError('the sphere metric family exists for dimension 2 only')
        if self.connection.family == 'linear-normal':
            expected = self.grid.dimension - 1
            if len(self.connection.offsets) != expected or len(self.connection.slopes) != expected:
                raise ValueError(f'linear-normal needs {expected} offsets and slopes')
        if self.grid.max_dimension < self.grid.dimension:
            raise ValueError('max_dimension is below dimension')
        return self

    @property
    def subcommand(self):
        return self.experiment.subcommand

    @property
    def seed(self):
        return self.experiment.seed

    def tolerance(self, name, default):
        return self.tolerances.get(name, default)


def _tokenize(text: str) -> Tuple[Dict[str, Dict[str, str]], Dict[Tuple[str, str], int]]:
    """Split INI text into sections of raw strings, remembering the line of every entry."""
    sections: Dict[str, Dict[str, str]] = {}
    lines: Dict[Tuple[str, str], int] = {}
    current = None
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith(('#', ';')):
            continue
        match = _SECTION.match(line)
        if match:
            current = match.group(1)
            if current not in SECTIONS:
                raise ConfigError(f"unknown section '{current}'", section=current, line=number)
            if current in sections:
                raise ConfigError('duplicate section', section=current, line=number)
            sections[current] = {}
            lines[(current, '')] = number
            continue
        match = _ENTRY.match(line)
        if not match:
            raise ConfigError(f"cannot parse '{line}'", section=current, line=number)
        if current is None:
            raise ConfigError('entry outside of any section', field=match.group(1), line=number)
        key, value = match.group(1), match.group(2).strip()
        if key in sections[current]:
            raise ConfigError('duplicate key', section=current, field=key, line=number)
        sections[current][key] = value
        lines[(current, key)] = number
    return sections, lines


def _coerce(section, key, value):
    """Raw strings to the shapes pydantic expects; lists are whitespace separated."""
    if section == 'tolerances':
        return value
    if key in ('scales', 'offsets', 'slopes'):
        return value.split()
    if key in ('normal_gauge', 'abelian'):
        lowered = value.lower()
        if lowered in ('true', 'yes', '1'):
            return True
        if lowered in ('false', 'no', '0'):
            return False
    return value


def parse_config(text: str) -> ExperimentConfig:
    """Parse experiment INI text; every problem becomes a ConfigError with section/field/line."""
    if not text or not text.strip():
        raise ConfigError('configuration is empty')
    sections, lines = _tokenize(text)
    if 'experiment' not in sections:
        raise ConfigError('missing [experiment] section')
    data = {
        section: {key: _coerce(section, key, value) for key, value in entries.items()}
        for section, entries in sections.items()
    }
    try:
        return ExperimentConfig(**data)
    except ValidationError as error:
        first = error.errors()[0]
        location = [str(part) for part in first['loc']]
        section = location[0] if location else None
        field = location[1] if len(location) > 1 else None
        line = lines.get((section, field)) or lines.get((section, ''))
        raise ConfigError(first['msg'], section=section, field=field, line=line) from None


def _format(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ' '.join(_format(item) for item in value)
    return str(value)


def serialize_config(config: ExperimentConfig) -> str:
    """INI text that parses back to an equal configuration (floats written with repr)."""
    blocks = []
    for section in SECTIONS:
        value = getattr(config, section)
        entries = value if section == 'tolerances' else value.model_dump()
        rows = [f'[{section}]']
        for key, item in entries.items():
            if item is None:
                continue
            rows.append(f'{key} = {_format(item)}')
        blocks.append('\n'.join(rows))
    return '\n\n'.join(blocks) + '\n'


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding='utf-8') as handle:
            text = handle.read()
    except OSError as error:
        raise ConfigError(f'cannot read configuration: {error}') from error
    return parse_config(text)
