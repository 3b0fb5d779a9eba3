"""Dense network that predicts the q smallest lattice distances from the
stacked observation, trained by mini-batch MSE under Adam."""
import logging
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .lattice import (Constellation, DimensionError, draw_trial, input_size, snr_to_sigma,
                      stack_input)
from .record import ConfigError, Record, check_version, require
from .search import DEFAULT_BUDGET, q_closest_distances

MODEL_VERSION = 1
DATASET_VERSION = 1


def clipped_relu(u):
    """0 below zero, identity on [0, 1), 1 from one upwards."""
    result = np.clip(u, 0.0, 1.0)
    return float(result) if np.ndim(result) == 0 else result


def _clipped_relu_slope(u):
    return ((u > 0) & (u < 1)).astype(float)


@dataclass
class MlpParams:
    layer_dims: List[int]
    weights: List[np.ndarray] = field(repr=False)
    biases: List[np.ndarray] = field(repr=False)

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise DimensionError(f'{len(self.weights)} weight matrices for layers {self.layer_dims}')
        for ell, (W, b) in enumerate(zip(self.weights, self.biases), start=1):
            expected = (self.layer_dims[ell], self.layer_dims[ell - 1])
            if W.shape != expected or b.shape != (expected[0],):
                raise DimensionError(f'layer {ell}: weights {W.shape} and biases {b.shape}, '
                                     f'expected {expected}')

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], rng: np.random.Generator) -> 'MlpParams':
        """Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_dims), weights, biases)

    @classmethod
    def zeros(cls, layer_dims: Sequence[int]) -> 'MlpParams':
        return cls(list(layer_dims),
                   [np.zeros((b, a)) for a, b in zip(layer_dims[:-1], layer_dims[1:])],
                   [np.zeros(b) for b in layer_dims[1:]])

    @property
    def depth(self) -> int:
        return len(self.weights)

    def arrays(self) -> List[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> 'MlpParams':
        return MlpParams(self.layer_dims, list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> 'MlpParams':
        return self.with_arrays([a.copy() for a in self.arrays()])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class NormStats:
    """Input standardisation and output radius scale learned from a dataset."""
    mean: np.ndarray
    scale: np.ndarray
    radius_scale: float = 1.0

    @classmethod
    def identity(cls, size: int, radius_scale: float = 1.0) -> 'NormStats':
        return cls(np.zeros(size), np.ones(size), radius_scale)

    @classmethod
    def fit(cls, X: np.ndarray, R: np.ndarray) -> 'NormStats':
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0), float(R.max()))

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


def _activations(params: MlpParams, X: np.ndarray, norm_stats: NormStats):
    """Pre-activations and activations of every layer; output is unscaled."""
    if X.shape[-1] != params.layer_dims[0]:
        raise DimensionError(f'input has {X.shape[-1]} features, network expects {params.layer_dims[0]}')
    a = norm_stats.standardize(X)
    pre, post = [], [a]
    for ell, (W, b) in enumerate(zip(params.weights, params.biases), start=1):
        u = a @ W.T + b
        a = u if ell == params.depth else clipped_relu(u)
        pre.append(u)
        post.append(a)
    return pre, post


def forward(params: MlpParams, x, norm_stats: NormStats) -> np.ndarray:
    """Raw predicted radii for one input vector or a batch of row vectors."""
    X = np.asarray(x, dtype=float)
    _, post = _activations(params, X, norm_stats)
    return post[-1] * norm_stats.radius_scale


def _batch_arrays(batch) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray) \
            and batch[0].ndim == 2:
        return batch
    if len(batch) == 0:
        raise ValueError('batch is empty')
    X = np.array([np.asarray(x, dtype=float) for x, _ in batch])
    R = np.array([np.asarray(r, dtype=float) for _, r in batch])
    return X, R


def mse_minibatch_loss(params: MlpParams, batch, norm_stats: NormStats) -> float:
    """Mean over the batch of the squared radius error, in scaled-target units."""
    X, R = _batch_arrays(batch)
    _, post = _activations(params, X, norm_stats)
    error = post[-1] - R / norm_stats.radius_scale
    return float(np.sum(error ** 2) / X.shape[0])


def gradient(params: MlpParams, batch, norm_stats: NormStats) -> MlpParams:
    """Backpropagated gradient of ``mse_minibatch_loss``, shaped like ``params``."""
    X, R = _batch_arrays(batch)
    pre, post = _activations(params, X, norm_stats)
    delta = 2.0 * (post[-1] - R / norm_stats.radius_scale) / X.shape[0]
    grads_W, grads_b = [None] * params.depth, [None] * params.depth
    for ell in range(params.depth - 1, -1, -1):
        grads_W[ell] = delta.T @ post[ell]
        grads_b[ell] = delta.sum(axis=0)
        if ell > 0:
            delta = (delta @ params.weights[ell]) * _clipped_relu_slope(pre[ell - 1])
    return MlpParams(params.layer_dims, grads_W, grads_b)


@dataclass
class AdamState:
    t: int
    alpha: List[np.ndarray] = field(repr=False)
    delta: List[np.ndarray] = field(repr=False)
    eta: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def start(cls, params: MlpParams, eta=0.001, beta1=0.9, beta2=0.999, eps=1e-8) -> 'AdamState':
        zeros = [np.zeros_like(a) for a in params.arrays()]
        return cls(0, zeros, [z.copy() for z in zeros], eta, beta1, beta2, eps)


def adam_step(params: MlpParams, state: AdamState, grads: MlpParams) -> Tuple[MlpParams, AdamState]:
    t = state.t + 1
    new_params, alphas, deltas = [], [], []
    for theta, alpha, delta, g in zip(params.arrays(), state.alpha, state.delta, grads.arrays()):
        alpha = state.beta1 * alpha + (1 - state.beta1) * g
        delta = state.beta2 * delta + (1 - state.beta2) * g * g
        alpha_hat = alpha / (1 - state.beta1 ** t)
        delta_hat = delta / (1 - state.beta2 ** t)
        new_params.append(theta - state.eta * alpha_hat / (np.sqrt(delta_hat) + state.eps))
        alphas.append(alpha)
        deltas.append(delta)
    return params.with_arrays(new_params), replace(state, t=t, alpha=alphas, delta=deltas)


@dataclass
class Dataset(Record):
    X: np.ndarray = field(repr=False)
    R: np.ndarray = field(repr=False)
    snr_db: float
    norm_stats: NormStats = field(repr=False)
    n: int
    m: int
    constellation_order: int

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if self.X.shape[0] != self.R.shape[0]:
            raise DimensionError(f'{self.X.shape[0]} inputs but {self.R.shape[0]} radius vectors')
        if self.X.shape[1] != input_size(self.n, self.m):
            raise DimensionError(f'inputs have {self.X.shape[1]} features, '
                                 f'expected {input_size(self.n, self.m)}')
        if np.any(np.diff(self.R, axis=1) <= 0):
            raise ValueError('every radius vector must be strictly increasing')

    @property
    def q(self) -> int:
        return self.R.shape[1]

    def __len__(self):
        return self.X.shape[0]

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        return zip(self.X, self.R)

    @property
    def examples(self):
        return list(self)

    def subset(self, rows) -> 'Dataset':
        return replace(self, X=self.X[rows], R=self.R[rows])

    @classmethod
    def from_record(cls, record):
        where = 'dataset'
        check_version(record, (DATASET_VERSION,), where)
        try:
            return cls(np.array(require(record, 'x', list, where), dtype=float),
                       np.array(require(record, 'r', list, where), dtype=float),
                       float(require(record, 'snr_db', (int, float), where)),
                       _norm_stats_from_record(require(record, 'norm_stats', dict, where), where),
                       require(record, 'n', int, where),
                       require(record, 'm', int, where),
                       require(record, 'constellation_order', int, where))
        except ValueError as e:
            raise ConfigError(f'{where}: {e}') from e

    def to_record(self) -> dict:
        return {
            'version': DATASET_VERSION,
            'n': self.n,
            'm': self.m,
            'constellation_order': self.constellation_order,
            'snr_db': self.snr_db,
            'q': self.q,
            'norm_stats': _norm_stats_to_record(self.norm_stats),
            'x': self.X.tolist(),
            'r': self.R.tolist(),
        }

    def _short_format(self):
        return f'{len(self)} examples, {self.n}x{self.m} {self.constellation_order}-QAM, ' \
               f'{self.snr_db:g} dB, q={self.q}'


def _norm_stats_to_record(stats: NormStats) -> dict:
    return {'mean': stats.mean.tolist(), 'scale': stats.scale.tolist(),
            'radius_scale': stats.radius_scale}


def _norm_stats_from_record(record, where) -> NormStats:
    return NormStats(np.array(require(record, 'mean', list, where), dtype=float),
                     np.array(require(record, 'scale', list, where), dtype=float),
                     float(require(record, 'radius_scale', (int, float), where)))


def gen_training_set(n: int, m: int, constellation: Constellation, snr_db: float, N: int, q: int,
                     rng: np.random.Generator, budget: int = DEFAULT_BUDGET) -> Dataset:
    """N independent (stacked observation, q closest distances) pairs."""
    if N < 1:
        raise ValueError(f'N must be >= 1, got {N}')
    sigma_w2 = snr_to_sigma(snr_db, m, constellation.avg_power)
    X = np.empty((N, input_size(n, m)))
    R = np.empty((N, q))
    for i in range(N):
        obs = draw_trial(rng, n, m, constellation, sigma_w2)
        X[i] = stack_input(obs)
        R[i] = q_closest_distances(obs, q, budget).radii
    logging.info(f'generated {N} labelled examples at {snr_db:g} dB')
    return Dataset(X, R, float(snr_db), NormStats.fit(X, R), n, m, constellation.order)


def split_dataset(dataset: Dataset, fraction: float, rng: np.random.Generator):
    """Random (train, held-out) split with ``fraction`` of the rows held out.

    Both parts carry norm stats fitted on the training rows only.
    """
    rows = rng.permutation(len(dataset))
    cut = int(round(len(dataset) * fraction))
    if cut >= len(dataset):
        raise ValueError(f'holding out {cut} of {len(dataset)} rows leaves nothing to train on')
    training = dataset.subset(np.sort(rows[cut:]))
    stats = NormStats.fit(training.X, training.R)
    return replace(training, norm_stats=stats), replace(dataset.subset(np.sort(rows[:cut])),
                                                        norm_stats=stats)


def dataset_loss(params: MlpParams, dataset: Dataset, norm_stats: Optional[NormStats] = None) -> float:
    return mse_minibatch_loss(params, (dataset.X, dataset.R), norm_stats or dataset.norm_stats)


@dataclass
class TrainConfig:
    eta: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 20
    epochs: int = 30
    hidden_layers: tuple = (128,)
    seed: int = 0


def _layer_dims(dataset: Dataset, config: TrainConfig) -> List[int]:
    return [dataset.X.shape[1], *config.hidden_layers, dataset.q]


def initial_params(dataset: Dataset, config: TrainConfig) -> MlpParams:
    """The weights training starts from."""
    return MlpParams.initialize(_layer_dims(dataset, config), np.random.default_rng(config.seed))


def train_with_history(dataset: Dataset, config: TrainConfig) -> Tuple[MlpParams, List[float]]:
    """Adam over shuffled mini-batches; the last partial batch of each epoch is dropped."""
    rng = np.random.default_rng(config.seed)
    layer_dims = _layer_dims(dataset, config)
    params = MlpParams.initialize(layer_dims, rng)
    state = AdamState.start(params, config.eta, config.beta1, config.beta2, config.eps)
    n_batches = len(dataset) // config.batch_size
    logging.info(f'training radius network {layer_dims}: {config.epochs} epochs of '
                 f'{n_batches} batches of {config.batch_size}')
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        for b in range(n_batches):
            rows = order[b * config.batch_size:(b + 1) * config.batch_size]
            batch = (dataset.X[rows], dataset.R[rows])
            history.append(mse_minibatch_loss(params, batch, dataset.norm_stats))
            params, state = adam_step(params, state, gradient(params, batch, dataset.norm_stats))
            logging.debug(f'epoch {epoch} batch {b}: loss {history[-1]:.6g}')
        if n_batches:
            logging.info(f'epoch {epoch}: mean batch loss '
                         f'{np.mean(history[-n_batches:]):.6g}')
    return params, history


def train(dataset: Dataset, config: TrainConfig) -> MlpParams:
    return train_with_history(dataset, config)[0]


@dataclass
class RadiusModel(Record):
    """A trained network together with everything needed to apply it."""
    params: MlpParams = field(repr=False)
    norm_stats: NormStats = field(repr=False)
    snr_db: float
    n: int
    m: int
    constellation_order: int

    @property
    def q(self) -> int:
        return self.params.layer_dims[-1]

    @property
    def layer_dims(self) -> List[int]:
        return self.params.layer_dims

    def predict(self, x) -> np.ndarray:
        return forward(self.params, x, self.norm_stats)

    @classmethod
    def from_dataset(cls, params: MlpParams, dataset: Dataset) -> 'RadiusModel':
        return cls(params, dataset.norm_stats, dataset.snr_db, dataset.n, dataset.m,
                   dataset.constellation_order)

    @classmethod
    def from_record(cls, record):
        where = 'model'
        check_version(record, (MODEL_VERSION,), where)
        layer_dims = require(record, 'layer_dims', list, where)
        weights = require(record, 'weights', list, where)
        biases = require(record, 'biases', list, where)
        try:
            params = MlpParams(layer_dims,
                               [np.array(W, dtype=float).reshape(b, a)
                                for W, a, b in zip(weights, layer_dims[:-1], layer_dims[1:])],
                               [np.array(b, dtype=float) for b in biases])
            norm_stats = _norm_stats_from_record(require(record, 'norm_stats', dict, where), where)
            model = cls(params, norm_stats, float(require(record, 'snr_db', (int, float), where)),
                        require(record, 'n', int, where), require(record, 'm', int, where),
                        require(record, 'constellation_order', int, where))
        except ValueError as e:
            raise ConfigError(f'{where}: {e}') from e
        radius_scale = require(record, 'radius_scale', (int, float), where)
        if float(radius_scale) != norm_stats.radius_scale:
            raise ConfigError(f'{where}: field \'radius_scale\' disagrees with norm_stats')
        if require(record, 'q', int, where) != model.q:
            raise ConfigError(f'{where}: field \'q\' disagrees with layer_dims')
        return model

    def to_record(self) -> dict:
        return {
            'version': MODEL_VERSION,
            'layer_dims': self.params.layer_dims,
            'weights': [W.ravel().tolist() for W in self.params.weights],
            'biases': [b.tolist() for b in self.params.biases],
            'norm_stats': _norm_stats_to_record(self.norm_stats),
            'radius_scale': self.norm_stats.radius_scale,
            'snr_db': self.snr_db,
            'q': self.q,
            'n': self.n,
            'm': self.m,
            'constellation_order': self.constellation_order,
        }

    def _short_format(self):
        return f'{self.layer_dims} for {self.n}x{self.m} {self.constellation_order}-QAM at ' \
               f'{self.snr_db:g} dB'
