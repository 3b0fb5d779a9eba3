"""Typed experiment configuration, decode reports and the CSV rows the
harness writes."""
import csv
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .core import BudgetError, ConfigError, Constellation, PipelineResult, Record
from .core.lattice import SUPPORTED_ORDERS
from .core.record import check_version, complex_from_pairs, pairs_from_complex, require

CONFIG_VERSION = 1
REPORT_VERSION = 1
DETECTORS = ('mld', 'sdirs', 'dlsd', 'mmse')
ENUMERATIONS = ('se', 'fp')


def _snr_label(snr_db: float) -> str:
    return f'{snr_db:g}'


@dataclass(frozen=True)
class ExperimentConfig(Record):
    """Everything one run of the harness depends on.

    ``q`` is a tuple; a single value in a config file is read as a one-element
    tuple. ``model_dir`` and ``dataset_dir`` default to folders under ``out_dir``.
    ``psi_cache`` names an SQLite file that keeps difference-count tables
    between runs; without it they live in memory.
    """
    n: int = 4
    m: int = 4
    constellation_order: int = 16
    snr_grid_db: Tuple[float, ...] = tuple(float(s) for s in range(8, 27, 2))
    q: Tuple[int, ...] = (3, 10)
    trials: int = 100_000
    seed: int = 0
    detectors: Tuple[str, ...] = DETECTORS
    train_N: int = 20_000
    train_batch: int = 20
    train_epochs: int = 30
    eta: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden_layers: Tuple[int, ...] = (128,)
    enumeration: str = 'se'
    sdirs_max_rounds: int = 500
    importance_samples: int = 1000
    workers: int = 1
    model_dir: Optional[str] = None
    dataset_dir: Optional[str] = None
    out_dir: str = 'results'
    mld_budget: int = 10 ** 6
    psi_cache: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n < 1 or self.m < 1 or self.n < self.m:
            raise ConfigError(f'config: need n >= m >= 1, got n={self.n}, m={self.m}')
        if self.constellation_order not in SUPPORTED_ORDERS:
            raise ConfigError(f'config: field \'constellation_order\' must be one of '
                              f'{SUPPORTED_ORDERS}, got {self.constellation_order}')
        if not self.snr_grid_db:
            raise ConfigError('config: field \'snr_grid_db\' must not be empty')
        if not self.q or min(self.q) < 1:
            raise ConfigError(f'config: field \'q\' must hold integers >= 1, got {list(self.q)}')
        if self.trials < 1:
            raise ConfigError(f'config: field \'trials\' must be >= 1, got {self.trials}')
        if self.seed < 0:
            raise ConfigError(f'config: field \'seed\' must be nonnegative, got {self.seed}')
        unknown = set(self.detectors) - set(DETECTORS)
        if not self.detectors or unknown:
            raise ConfigError(f'config: field \'detectors\' must be a nonempty subset of '
                              f'{DETECTORS}, got {list(self.detectors)}')
        if self.enumeration not in ENUMERATIONS:
            raise ConfigError(f'config: field \'enumeration\' must be one of {ENUMERATIONS}')
        for key in ('train_N', 'train_batch', 'train_epochs', 'sdirs_max_rounds',
                    'importance_samples', 'workers', 'mld_budget'):
            if getattr(self, key) < 1:
                raise ConfigError(f'config: field {key!r} must be >= 1, got {getattr(self, key)}')
        if not (self.eta > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError('config: Adam needs eta > 0, 0 <= beta1, beta2 < 1 and eps > 0')
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigError(f'config: field \'hidden_layers\' must be positive, '
                              f'got {list(self.hidden_layers)}')
        if 'mld' in self.detectors and self.constellation_order ** self.m > self.mld_budget:
            raise BudgetError(f'mld over {self.constellation_order}-QAM with m={self.m} needs '
                              f'{self.constellation_order ** self.m} candidates, '
                              f'over mld_budget={self.mld_budget}')

    @classmethod
    def profile(cls, name: str) -> 'ExperimentConfig':
        if name == 'desk':
            return cls()
        if name == 'desk-2x2':
            return cls(n=2, m=2, constellation_order=4, snr_grid_db=(0.0, 4.0, 8.0, 12.0, 16.0),
                       q=(3,), trials=10_000)
        raise ConfigError(f'unknown profile {name!r}. Choose from {PROFILES}')

    @property
    def constellation(self) -> Constellation:
        return Constellation.qam(self.constellation_order)

    @property
    def model_root(self) -> Path:
        return Path(self.model_dir) if self.model_dir else Path(self.out_dir) / 'models'

    @property
    def dataset_root(self) -> Path:
        return Path(self.dataset_dir) if self.dataset_dir else Path(self.out_dir) / 'datasets'

    def model_path(self, snr_db: float, q: int) -> Path:
        return self.model_root / f'model_snr{_snr_label(snr_db)}_q{q}.json'

    def dataset_path(self, snr_db: float, q: int) -> Path:
        return self.dataset_root / f'dataset_snr{_snr_label(snr_db)}_q{q}.json'

    def train_log_path(self, snr_db: float, q: int) -> Path:
        return self.model_root / f'train_log_snr{_snr_label(snr_db)}_q{q}.csv'

    def with_overrides(self, *, seed=None, out_dir=None, snr_grid_db=None, q=None,
                       trials=None) -> 'ExperimentConfig':
        """A copy with command-line overrides applied; validated again."""
        changes = {}
        if seed is not None:
            changes['seed'] = int(seed)
        if out_dir is not None:
            changes['out_dir'] = str(out_dir)
        if snr_grid_db is not None:
            changes['snr_grid_db'] = tuple(float(s) for s in snr_grid_db)
        if q is not None:
            changes['q'] = _as_tuple(q, int)
        if trials is not None:
            changes['trials'] = int(trials)
        return replace(self, **changes)

    @classmethod
    def from_record(cls, record):
        where = 'config'
        check_version(record, (CONFIG_VERSION,), where)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(record) - known - {'version'})
        if unknown:
            raise ConfigError(f'{where}: unknown field(s) {unknown}')
        values = {}
        for f in fields(cls):
            if f.name not in record:
                continue
            kind, convert = _FIELD_KINDS[f.name]
            value = require(record, f.name, kind, where)
            try:
                values[f.name] = convert(value)
            except (TypeError, ValueError) as e:
                raise ConfigError(f'{where}: field {f.name!r} is malformed ({e})') from e
        return cls(**values)

    def to_record(self) -> dict:
        record = {'version': CONFIG_VERSION}
        for key, value in asdict(self).items():
            record[key] = list(value) if isinstance(value, tuple) else value
        return record

    def _short_format(self):
        return f'{self.n}x{self.m} {self.constellation_order}-QAM, q={list(self.q)}, ' \
               f'{len(self.snr_grid_db)} SNR points, {self.trials} trials, seed {self.seed}'


PROFILES = ('desk', 'desk-2x2')
DEFAULT_PROFILE = 'desk'

_NUMBER = (int, float)


def _as_tuple(value, kind):
    if isinstance(value, (list, tuple)):
        return tuple(kind(v) for v in value)
    return (kind(value),)


def _strict_int(value):
    if isinstance(value, bool):
        raise TypeError('booleans are not integers')
    return int(value)


def _int_list(value):
    values = value if isinstance(value, list) else [value]
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in values):
        raise TypeError('expected integers')
    return tuple(values)


def _number_list(value):
    if not all(isinstance(v, _NUMBER) and not isinstance(v, bool) for v in value):
        raise TypeError('expected numbers')
    return tuple(float(v) for v in value)


def _str_list(value):
    if not all(isinstance(v, str) for v in value):
        raise TypeError('expected strings')
    return tuple(value)


def _optional_str(value):
    if value is not None and not isinstance(value, str):
        raise TypeError('expected a string or null')
    return value


_FIELD_KINDS = {
    'n': (int, _strict_int),
    'm': (int, _strict_int),
    'constellation_order': (int, _strict_int),
    'snr_grid_db': (list, _number_list),
    'q': ((int, list), _int_list),
    'trials': (int, _strict_int),
    'seed': (int, _strict_int),
    'detectors': (list, _str_list),
    'train_N': (int, _strict_int),
    'train_batch': (int, _strict_int),
    'train_epochs': (int, _strict_int),
    'eta': (_NUMBER, float),
    'beta1': (_NUMBER, float),
    'beta2': (_NUMBER, float),
    'eps': (_NUMBER, float),
    'hidden_layers': (list, _int_list),
    'enumeration': (str, str),
    'sdirs_max_rounds': (int, _strict_int),
    'importance_samples': (int, _strict_int),
    'workers': (int, _strict_int),
    'model_dir': (None, _optional_str),
    'dataset_dir': (None, _optional_str),
    'out_dir': (str, str),
    'mld_budget': (int, _strict_int),
    'psi_cache': (None, _optional_str),
}


# ---------------------------------------------------------------- decode report

@dataclass
class DecodeReport(Record):
    """What ``decode`` prints for one observation."""
    solution: np.ndarray = field(repr=False)
    path: str
    round: Optional[int]
    radii: Tuple[float, ...]
    visited: Tuple[int, ...]
    sphere_flops: int
    total_flops: int
    dist2: float

    @classmethod
    def from_result(cls, result: PipelineResult) -> 'DecodeReport':
        return cls(np.asarray(result.solution), result.path.kind.value, result.path.round,
                   tuple(float(r) for r in result.radii_used), tuple(int(v) for v in result.visited),
                   int(result.sphere_flops), int(result.total_flops), float(result.dist2))

    @classmethod
    def from_record(cls, record):
        where = 'decode report'
        check_version(record, (REPORT_VERSION,), where)
        path = require(record, 'path', str, where)
        if path not in ('sphere', 'fallback'):
            raise ConfigError(f'{where}: field \'path\' must be sphere or fallback, got {path!r}')
        round_number = record.get('round')
        if (path == 'sphere') != isinstance(round_number, int):
            raise ConfigError(f'{where}: field \'round\' must be an integer exactly when path is sphere')
        return cls(np.array(complex_from_pairs(require(record, 'solution', list, where), where,
                                               'solution')),
                   path, round_number,
                   tuple(float(r) for r in require(record, 'radii', list, where)),
                   tuple(int(v) for v in require(record, 'visited', list, where)),
                   require(record, 'sphere_flops', int, where),
                   require(record, 'total_flops', int, where),
                   float(require(record, 'dist2', _NUMBER, where)))

    def to_record(self) -> dict:
        return {
            'version': REPORT_VERSION,
            'solution': pairs_from_complex(self.solution),
            'path': self.path,
            'round': self.round,
            'radii': list(self.radii),
            'visited': list(self.visited),
            'sphere_flops': self.sphere_flops,
            'total_flops': self.total_flops,
            'dist2': self.dist2,
        }

    def _short_format(self):
        where = f'sphere round {self.round}' if self.path == 'sphere' else 'MMSE fallback'
        return f'{where}, {self.total_flops} flops, dist2={self.dist2:.6g}'


# ---------------------------------------------------------------- CSV rows

class CsvRow:
    """Dataclass rows written with a header in field order.

    Floats are printed with 17 significant digits; ``None`` is an empty cell.
    Columns named in ``NONDETERMINISTIC`` hold wall-clock measurements.
    """
    NONDETERMINISTIC: Tuple[str, ...] = ()

    @classmethod
    def header(cls) -> list:
        return [f.name for f in fields(cls)]

    def cells(self) -> list:
        return [_cell(getattr(self, name)) for name in self.header()]


def _cell(value) -> str:
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), '.17g')
    return str(value)


def _check_fraction(name: str, value):
    if value is not None and not 0 <= value <= 1:
        raise ValueError(f'{name} must lie in [0, 1], got {value}')


@dataclass
class ResultRow(CsvRow):
    NONDETERMINISTIC = ('avg_time', 'max_time')

    snr_db: float
    detector: str
    ber: float
    avg_flops: Optional[float]
    max_flops: Optional[int]
    avg_time: float
    max_time: float
    avg_points_in_sphere: Optional[float]
    fallback_rate: Optional[float]
    e_c: Optional[float]

    def __post_init__(self):
        _check_fraction('ber', self.ber)
        _check_fraction('fallback_rate', self.fallback_rate)
        if (self.fallback_rate is not None) != self.detector.startswith('dlsd'):
            raise ValueError(f'fallback_rate is reported for dlsd rows only, not {self.detector}')


@dataclass
class ComplexityRow(CsvRow):
    NONDETERMINISTIC = ('avg_time', 'max_time')

    snr_db: float
    detector: str
    avg_flops: float
    max_flops: int
    avg_time: float
    max_time: float
    avg_points_in_sphere: float
    analytic_C: float
    e_c: Optional[float]
    empirical_e_c: Optional[float]


@dataclass
class RatioRow(CsvRow):
    NONDETERMINISTIC = ('avg_time_ratio', 'max_time_ratio')

    snr_db: float
    q: int
    avg_flops_ratio: float
    max_flops_ratio: float
    avg_time_ratio: float
    max_time_ratio: float


@dataclass
class TrainLogRow(CsvRow):
    batch: int
    loss: float


def write_rows(path: Union[str, Path], row_type: type, rows: Sequence[CsvRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(row_type.header())
        for row in rows:
            writer.writerow(row.cells())
    return path


def read_rows(path: Union[str, Path]) -> list:
    """Rows of a harness CSV as dicts of strings."""
    with open(path, newline='') as f:
        return list(csv.DictReader(f))
