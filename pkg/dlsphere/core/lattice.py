"""Complex MIMO signal model: QAM constellations, Rayleigh channels, noisy
observations, the real-valued lattice embedding and the network input layout."""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .record import ConfigError, Record, check_version, complex_from_pairs, pairs_from_complex, require

SUPPORTED_ORDERS = (4, 16, 64)


class DimensionError(ValueError):
    pass


class UnsupportedConstellationError(ValueError):
    pass


class SingularChannelError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Constellation:
    """Square QAM with consecutive odd-integer levels per real dimension.

    Complex point index is ``re_index * M + im_index``, so sorting symbol
    vectors by index is the same as sorting their real level indices
    ``(re_1, im_1, re_2, im_2, ...)`` lexicographically.
    """
    order: int
    real_levels: tuple
    avg_power: float

    @classmethod
    def qam(cls, order: int) -> 'Constellation':
        if order not in SUPPORTED_ORDERS:
            raise UnsupportedConstellationError(
                f'{order}-QAM is not supported. Choose from {SUPPORTED_ORDERS}')
        M = int(round(np.sqrt(order)))
        levels = tuple(range(-(M - 1), M, 2))
        points = np.array([a + 1j * b for a in levels for b in levels])
        return cls(order, levels, float(np.mean(np.abs(points) ** 2)))

    @property
    def levels_per_dim(self) -> int:
        return len(self.real_levels)

    @property
    def bits_per_dim(self) -> int:
        return int(np.log2(self.levels_per_dim))

    @property
    def bits_per_symbol(self) -> int:
        return 2 * self.bits_per_dim

    @cached_property
    def points(self) -> np.ndarray:
        levels = np.array(self.real_levels, dtype=float)
        return (levels[:, None] + 1j * levels[None, :]).ravel()

    def level_index(self, values) -> np.ndarray:
        """Index of the nearest level for each real value, clamped to the range."""
        M = self.levels_per_dim
        idx = np.rint((np.asarray(values, dtype=float) + (M - 1)) / 2)
        return np.clip(idx, 0, M - 1).astype(int)

    def level_values(self, indices) -> np.ndarray:
        return 2.0 * np.asarray(indices, dtype=float) - (self.levels_per_dim - 1)

    def quantize(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return (self.level_values(self.level_index(z.real))
                + 1j * self.level_values(self.level_index(z.imag)))

    def symbol_indices(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=complex)
        return self.level_index(s.real) * self.levels_per_dim + self.level_index(s.imag)

    def contains(self, s) -> bool:
        s = np.asarray(s, dtype=complex)
        return bool(np.all(self.quantize(s) == s))

    def random_symbols(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return self.points[rng.integers(0, self.order, size=m)]

    def gray_bits(self, s) -> np.ndarray:
        """Gray labels of each real dimension, most significant bit first."""
        s = np.asarray(s, dtype=complex)
        idx = np.stack([self.level_index(s.real), self.level_index(s.imag)], axis=-1).ravel()
        gray = idx ^ (idx >> 1)
        shifts = np.arange(self.bits_per_dim - 1, -1, -1)
        return ((gray[:, None] >> shifts[None, :]) & 1).ravel()

    def bit_errors(self, estimate, truth) -> int:
        return int(np.count_nonzero(self.gray_bits(estimate) != self.gray_bits(truth)))


@dataclass
class Observation(Record):
    """One decoding instance ``y = H s + w``."""
    H: np.ndarray
    y: np.ndarray
    sigma_w2: float
    constellation: Constellation
    truth: Optional[np.ndarray] = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=complex))
        self.y = np.atleast_1d(np.asarray(self.y, dtype=complex))
        n, m = self.H.shape
        if self.y.shape != (n,):
            raise DimensionError(f'y has shape {self.y.shape}, expected ({n},)')
        if n < m:
            raise DimensionError(f'need at least as many receive as transmit antennas, got {n}x{m}')
        if self.sigma_w2 < 0:
            raise ValueError(f'noise variance must be nonnegative, got {self.sigma_w2}')
        if self.truth is not None:
            self.truth = np.atleast_1d(np.asarray(self.truth, dtype=complex))
            if self.truth.shape != (m,):
                raise DimensionError(f'truth has shape {self.truth.shape}, expected ({m},)')
            if not self.constellation.contains(self.truth):
                raise ValueError(f'truth {self.truth} is not in {self.constellation.order}-QAM')

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[1]

    @property
    def snr_linear(self) -> float:
        """Average SNR m*sigma_s^2/sigma_w^2 of this observation (inf when noiseless)."""
        if self.sigma_w2 == 0:
            return float('inf')
        return self.m * self.constellation.avg_power / self.sigma_w2

    def distance2(self, s) -> float:
        r = self.y - self.H @ np.asarray(s, dtype=complex)
        return float(np.real(np.vdot(r, r)))

    @classmethod
    def from_record(cls, record):
        where = 'observation'
        check_version(record, (1,), where)
        order = require(record, 'constellation_order', int, where)
        try:
            constellation = Constellation.qam(order)
        except UnsupportedConstellationError as e:
            raise ConfigError(f'{where}: field \'constellation_order\': {e}') from e
        H = complex_from_pairs(require(record, 'H', list, where), where, 'H')
        y = complex_from_pairs(require(record, 'y', list, where), where, 'y')
        sigma_w2 = require(record, 'sigma_w2', (int, float), where)
        truth = record.get('truth')
        if truth is not None:
            truth = complex_from_pairs(truth, where, 'truth')
        try:
            return cls(np.array(H), np.array(y), float(sigma_w2), constellation,
                       None if truth is None else np.array(truth))
        except ValueError as e:
            raise ConfigError(f'{where}: {e}') from e

    def to_record(self) -> dict:
        record = {
            'version': 1,
            'constellation_order': self.constellation.order,
            'H': pairs_from_complex(self.H),
            'y': pairs_from_complex(self.y),
            'sigma_w2': self.sigma_w2,
        }
        if self.truth is not None:
            record['truth'] = pairs_from_complex(self.truth)
        return record

    def _short_format(self):
        return f'{self.n}x{self.m} {self.constellation.order}-QAM, sigma_w2={self.sigma_w2:g}'


@dataclass
class RealEmbedding:
    y_r: np.ndarray
    H_r: np.ndarray = field(repr=False)


def gen_channel(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    """i.i.d. CN(0, 1) channel matrix."""
    if m < 1 or n < m:
        raise DimensionError(f'invalid channel dimensions {n}x{m}, need n >= m >= 1')
    return (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) / np.sqrt(2)


def snr_to_sigma(snr_db: float, m: int, avg_power: float) -> float:
    if avg_power <= 0 or m < 1:
        raise ValueError(f'need avg_power > 0 and m >= 1, got {avg_power} and {m}')
    return m * avg_power / 10 ** (snr_db / 10)


def sigma_to_snr(sigma_w2: float, m: int, avg_power: float) -> float:
    return 10 * np.log10(m * avg_power / sigma_w2)


def observe(H: np.ndarray, s: np.ndarray, rng: np.random.Generator, sigma_w2: float,
            constellation: Constellation) -> Observation:
    """Pass ``s`` through ``H`` and add CN(0, sigma_w2) noise per receive antenna.

    Noise is drawn even when ``sigma_w2`` is zero so that every trial consumes
    the same amount of the stream.
    """
    if sigma_w2 < 0:
        raise ValueError(f'noise variance must be nonnegative, got {sigma_w2}')
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    n = H.shape[0]
    w = np.sqrt(sigma_w2 / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return Observation(H, H @ s + w, sigma_w2, constellation, s)


def draw_trial(rng: np.random.Generator, n: int, m: int, constellation: Constellation,
               sigma_w2: float) -> Observation:
    s = constellation.random_symbols(rng, m)
    H = gen_channel(rng, n, m)
    return observe(H, s, rng, sigma_w2, constellation)


def real_embedding(obs: Observation) -> RealEmbedding:
    H = obs.H
    y_r = np.concatenate([obs.y.real, obs.y.imag])
    H_r = np.block([[H.real, -H.imag], [H.imag, H.real]])
    return RealEmbedding(y_r, H_r)


def real_stack(s) -> np.ndarray:
    s = np.asarray(s, dtype=complex)
    return np.concatenate([s.real, s.imag])


def stack_input(obs: Observation) -> np.ndarray:
    """Network input ``[Re y, Im y, Re h11, Im h11, ..., Re hnm, Im hnm]``."""
    h = np.stack([obs.H.real, obs.H.imag], axis=-1).ravel()
    return np.concatenate([obs.y.real, obs.y.imag, h])


def input_size(n: int, m: int) -> int:
    return 2 * n * (m + 1)


def mmse_filter(H: np.ndarray, y: np.ndarray, snr_linear: float) -> np.ndarray:
    """Unquantized ``(H^H H + snr^-1 I)^-1 H^H y``; plain least squares when snr is infinite."""
    m = H.shape[1]
    gram = H.conj().T @ H
    if np.isfinite(snr_linear):
        gram = gram + np.eye(m) / snr_linear
    try:
        return np.linalg.solve(gram, H.conj().T @ y)
    except np.linalg.LinAlgError as e:
        logging.warning(f'regularized Gram matrix is singular at snr={snr_linear:g}')
        raise SingularChannelError('regularized Gram matrix is singular') from e
