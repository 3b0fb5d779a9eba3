import json
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Iterable, Mapping, Union

import numpy as np


class ConfigError(Exception):
    pass


class Record(ABC):
    """Base for everything that is read from or written to a JSON document.

    Subclasses map a plain dict into a typed object with ``from_record`` and
    back with ``to_record``. Format spec ``'s'`` gives a one-line summary.
    """

    @classmethod
    @abstractmethod
    def from_record(cls, record: Mapping[str, Any]):
        ...

    @abstractmethod
    def to_record(self) -> dict:
        ...

    @classmethod
    def load(cls, path: Union[str, Path]):
        return cls.from_record(read_json(path))

    def save(self, path: Union[str, Path]):
        write_json(path, self.to_record())

    def __format__(self, format_spec):
        if format_spec == '':
            return str(self)
        if format_spec == 'r':
            return repr(self)
        if format_spec == 's':
            return self._short_format()
        else:
            raise ValueError(f"'{format_spec}' is not a valid format for {type(self).__name__}")

    @abstractmethod
    def _short_format(self):
        ...


def read_json(path: Union[str, Path]) -> dict:
    with open(path, 'r') as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f'{path}: not valid JSON (line {e.lineno}, column {e.colno})') from e
    if not isinstance(document, dict):
        raise ConfigError(f'{path}: top level must be an object')
    return document


def write_json(path: Union[str, Path], document: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(document, f, sort_keys=True)
        f.write('\n')


def require(record: Mapping[str, Any], key: str, kind=None, where: str = 'record'):
    if key not in record:
        raise ConfigError(f'{where}: missing field {key!r}')
    value = record[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f'{where}: field {key!r} has the wrong type '
                          f'({type(value).__name__})')
    return value


def check_version(record: Mapping[str, Any], supported: Iterable[int], where: str):
    version = require(record, 'version', int, where)
    if version not in tuple(supported):
        raise ConfigError(f'{where}: field \'version\' = {version} is not supported')
    return version


def complex_from_pairs(pairs, where: str, key: str):
    """Parse ``[re, im]`` pairs (possibly nested in rows) into complex values."""
    try:
        return _complex_from_pairs(pairs)
    except (TypeError, ValueError, IndexError) as e:
        raise ConfigError(f'{where}: field {key!r} must hold [re, im] number pairs') from e


def _complex_from_pairs(pairs):
    if len(pairs) == 2 and all(isinstance(p, (int, float)) for p in pairs):
        return complex(float(pairs[0]), float(pairs[1]))
    if isinstance(pairs, list) and pairs and isinstance(pairs[0], list):
        return [_complex_from_pairs(p) for p in pairs]
    raise ValueError(pairs)


def pairs_from_complex(values) -> list:
    values = np.asarray(values, dtype=complex)
    return np.stack([values.real, values.imag], axis=-1).tolist()
