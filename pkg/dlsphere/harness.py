"""Experiment driver behind the command line.

Every Monte Carlo trial draws its symbols, channel and unit-variance noise
from ``default_rng([seed, trial])``. The same draw is scaled to every SNR
point and handed to every detector, so detectors are compared on identical
realisations and results do not depend on how trials are scheduled.
"""
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import (Constellation, Dataset, DimensionError, Observation, PathKind, RadiusModel,
                   TrainConfig, brute_force_mld, complexity_exponent, count_points_in_sphere,
                   dataset_loss, dl_sphere_decode, draw_trial, expected_complexity_dl,
                   expected_complexity_spi, f_sb, gen_training_set, initial_params, mmse_detect,
                   postprocess_radii, sdirs_decode, sdirs_radii, snr_to_sigma, split_dataset,
                   stack_input, train_with_history, using_psi_cache)
from .core.caching import TableCache
from .records import (ComplexityRow, DecodeReport, ExperimentConfig, RatioRow, ResultRow,
                      TrainLogRow, write_rows)

# spawn keys of the non-trial streams
DATA_STREAM = 0
SPLIT_STREAM = 1
IMPORTANCE_STREAM = 2

HELDOUT_FRACTION = 0.1


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial])


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass
class UnitTrial:
    """Symbols, channel and noise of one trial with the noise at unit variance."""
    H: np.ndarray
    s: np.ndarray
    w: np.ndarray

    @classmethod
    def draw(cls, rng: np.random.Generator, n: int, m: int, constellation: Constellation):
        obs = draw_trial(rng, n, m, constellation, 1.0)
        return cls(obs.H, obs.truth, obs.y - obs.H @ obs.truth)

    def at(self, sigma_w2: float, constellation: Constellation) -> Observation:
        return Observation(self.H, self.H @ self.s + np.sqrt(sigma_w2) * self.w, sigma_w2,
                           constellation, self.s)


@dataclass
class Tally:
    """Per (SNR, detector) sums; integer fields merge exactly."""
    trials: int = 0
    bit_errors: int = 0
    total_bits: int = 0
    flops_sum: int = 0
    flops_max: int = 0
    points_sum: int = 0
    fallbacks: int = 0
    time_sum: float = 0.0
    time_max: float = 0.0

    def add(self, obs: Observation, solution, flops: int, points: int, fallback: bool,
            seconds: float):
        self.trials += 1
        self.bit_errors += obs.constellation.bit_errors(solution, obs.truth)
        self.total_bits += obs.m * obs.constellation.bits_per_symbol
        self.flops_sum += flops
        self.flops_max = max(self.flops_max, flops)
        self.points_sum += points
        self.fallbacks += fallback
        self.time_sum += seconds
        self.time_max = max(self.time_max, seconds)

    def merge(self, other: 'Tally') -> 'Tally':
        return Tally(self.trials + other.trials, self.bit_errors + other.bit_errors,
                     self.total_bits + other.total_bits, self.flops_sum + other.flops_sum,
                     max(self.flops_max, other.flops_max), self.points_sum + other.points_sum,
                     self.fallbacks + other.fallbacks, self.time_sum + other.time_sum,
                     max(self.time_max, other.time_max))

    @property
    def ber(self) -> float:
        return self.bit_errors / self.total_bits if self.total_bits else 0.0

    @property
    def ber_stderr(self) -> float:
        if not self.total_bits:
            return 0.0
        return math.sqrt(self.ber * (1 - self.ber) / self.total_bits)

    @property
    def mean_flops(self) -> float:
        return self.flops_sum / self.trials if self.trials else 0.0

    @property
    def mean_points(self) -> float:
        return self.points_sum / self.trials if self.trials else 0.0

    @property
    def mean_time(self) -> float:
        return self.time_sum / self.trials if self.trials else 0.0

    @property
    def fallback_rate(self) -> float:
        return self.fallbacks / self.trials if self.trials else 0.0


def dlsd_label(q: int) -> str:
    return f'dlsd-q{q}'


def label_q(label: str) -> int:
    return int(label[len('dlsd-q'):])


@dataclass
class TrialPlan:
    """What a worker needs to run a range of trials."""
    n: int
    m: int
    constellation: Constellation
    seed: int
    snr_grid_db: Tuple[float, ...]
    labels: Tuple[str, ...]
    models: Dict[Tuple[float, int], RadiusModel]
    mode: str
    sdirs_max_rounds: int
    mld_budget: int
    count_points: bool

    def detect(self, label: str, snr_db: float, obs: Observation):
        """(solution, flops, accepting radius or None, fell back)."""
        if label == 'mld':
            return brute_force_mld(obs, self.mld_budget)[0], 0, None, False
        if label == 'mmse':
            return mmse_detect(obs, 10 ** (snr_db / 10)), f_sb(obs.m, obs.n), None, False
        if label == 'sdirs':
            outcome = sdirs_decode(obs, self.sdirs_max_rounds, self.mode)
            return outcome.solution, outcome.flops, outcome.accepting_radius, False
        q = label_q(label)
        result = dl_sphere_decode(obs, self.models[(snr_db, q)], q, self.mode)
        return (result.solution, result.total_flops, result.accepting_radius,
                result.path.kind is PathKind.Fallback)

    def run(self, start: int, stop: int) -> Dict[Tuple[int, str], Tally]:
        tallies = {(i, label): Tally() for i in range(len(self.snr_grid_db)) for label in self.labels}
        for trial in range(start, stop):
            unit = UnitTrial.draw(trial_rng(self.seed, trial), self.n, self.m, self.constellation)
            for i, snr_db in enumerate(self.snr_grid_db):
                obs = unit.at(snr_to_sigma(snr_db, self.m, self.constellation.avg_power),
                              self.constellation)
                for label in self.labels:
                    started = time.perf_counter()
                    solution, flops, radius, fallback = self.detect(label, snr_db, obs)
                    seconds = time.perf_counter() - started
                    points = 0
                    if self.count_points and radius is not None:
                        points = count_points_in_sphere(obs, radius)
                    tallies[(i, label)].add(obs, solution, flops, points, fallback, seconds)
        return tallies


def _run_chunk(args):
    plan, start, stop = args
    return plan.run(start, stop)


def run_trials(plan: TrialPlan, trials: int, workers: int = 1) -> Dict[Tuple[int, str], Tally]:
    chunk = max(1, math.ceil(trials / (4 * workers)))
    jobs = [(plan, start, min(start + chunk, trials)) for start in range(0, trials, chunk)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(job) for job in jobs]
    totals = {key: Tally() for key in parts[0]} if parts else {}
    for part in parts:
        for key, tally in part.items():
            totals[key] = totals[key].merge(tally)
    return totals


def _exponent(C: float, m: int) -> Optional[float]:
    return complexity_exponent(C, m) if C > 0 and m >= 2 else None


def _ratio(a: float, b: float) -> float:
    return a / b if b else float('nan')


# ---------------------------------------------------------------- models and data

def load_models(config: ExperimentConfig) -> Dict[Tuple[float, int], RadiusModel]:
    models = {}
    for snr_db in config.snr_grid_db:
        for q in config.q:
            model = RadiusModel.load(config.model_path(snr_db, q))
            if (model.n, model.m, model.constellation_order, model.q) != \
                    (config.n, config.m, config.constellation_order, q):
                raise DimensionError(f'{config.model_path(snr_db, q)} holds a {model:s} model, '
                                     f'expected {config.n}x{config.m} '
                                     f'{config.constellation_order}-QAM with q={q}')
            models[(snr_db, q)] = model
    return models


def cmd_gen_data(config: ExperimentConfig) -> List[Path]:
    """One labelled dataset per (SNR, q); every q at an SNR shares its observations."""
    constellation = config.constellation
    paths = []
    for i, snr_db in enumerate(config.snr_grid_db):
        for q in config.q:
            logging.info(f'generating {config.train_N} examples at {snr_db:g} dB with q={q}')
            dataset = gen_training_set(config.n, config.m, constellation, snr_db, config.train_N, q,
                                       stream_rng(config.seed, DATA_STREAM, i), config.mld_budget)
            path = config.dataset_path(snr_db, q)
            dataset.save(path)
            logging.info(f'wrote {path}')
            paths.append(path)
    return paths


@dataclass
class TrainOutcome:
    model_path: Path
    log_path: Path
    initial_heldout_loss: Optional[float]
    heldout_loss: Optional[float]


def cmd_train(config: ExperimentConfig) -> List[TrainOutcome]:
    """One model per (SNR, q), trained on 90% of its dataset and checked on the rest."""
    train_config = TrainConfig(config.eta, config.beta1, config.beta2, config.eps,
                               config.train_batch, config.train_epochs, config.hidden_layers,
                               config.seed)
    outcomes = []
    for i, snr_db in enumerate(config.snr_grid_db):
        for q in config.q:
            dataset = Dataset.load(config.dataset_path(snr_db, q))
            if (dataset.n, dataset.m, dataset.constellation_order, dataset.q) != \
                    (config.n, config.m, config.constellation_order, q):
                raise DimensionError(f'{config.dataset_path(snr_db, q)} holds {dataset:s}, '
                                     f'which does not match the config')
            training, heldout = split_dataset(dataset, HELDOUT_FRACTION,
                                              stream_rng(config.seed, SPLIT_STREAM, i, q))
            params, history = train_with_history(training, train_config)
            initial_loss = final_loss = None
            if len(heldout):
                initial_loss = dataset_loss(initial_params(training, train_config), heldout)
                final_loss = dataset_loss(params, heldout)
                logging.info(f'{snr_db:g} dB, q={q}: held-out loss {initial_loss:.6g} -> '
                             f'{final_loss:.6g}')
            model_path = config.model_path(snr_db, q)
            RadiusModel.from_dataset(params, training).save(model_path)
            log_path = write_rows(config.train_log_path(snr_db, q), TrainLogRow,
                                  [TrainLogRow(b, loss) for b, loss in enumerate(history)])
            logging.info(f'wrote {model_path} and {log_path}')
            outcomes.append(TrainOutcome(model_path, log_path, initial_loss, final_loss))
    return outcomes


# ---------------------------------------------------------------- Monte Carlo experiments

def _labels(config: ExperimentConfig) -> Tuple[str, ...]:
    labels = []
    for detector in config.detectors:
        if detector == 'dlsd':
            labels.extend(dlsd_label(q) for q in config.q)
        else:
            labels.append(detector)
    return tuple(labels)


def _plan(config: ExperimentConfig, labels, models, mode: str, count_points: bool) -> TrialPlan:
    return TrialPlan(config.n, config.m, config.constellation, config.seed,
                     tuple(config.snr_grid_db), tuple(labels), models, mode,
                     config.sdirs_max_rounds, config.mld_budget, count_points)


def cmd_ber(config: ExperimentConfig) -> Path:
    labels = _labels(config)
    models = load_models(config) if 'dlsd' in config.detectors else {}
    plan = _plan(config, labels, models, config.enumeration, count_points=True)
    logging.info(f'running {config.trials} trials of {list(labels)} over '
                 f'{len(config.snr_grid_db)} SNR points')
    tallies = run_trials(plan, config.trials, config.workers)
    rows = []
    for i, snr_db in enumerate(config.snr_grid_db):
        for label in labels:
            tally = tallies[(i, label)]
            has_flops = label != 'mld'
            in_sphere = label == 'sdirs' or label.startswith('dlsd')
            rows.append(ResultRow(
                snr_db, label, tally.ber,
                tally.mean_flops if has_flops else None,
                tally.flops_max if has_flops else None,
                tally.mean_time, tally.time_max,
                tally.mean_points if in_sphere else None,
                tally.fallback_rate if label.startswith('dlsd') else None,
                _exponent(tally.mean_flops, config.m) if has_flops else None))
            logging.info(f'{snr_db:g} dB {label}: BER {tally.ber:.4g}')
    path = write_rows(Path(config.out_dir) / 'ber.csv', ResultRow, rows)
    logging.info(f'wrote {path}')
    return path


def sample_radius_vectors(config: ExperimentConfig, model: RadiusModel, snr_db: float) -> list:
    """Predicted radius vectors on an independent stream of observations."""
    constellation = config.constellation
    sigma_w2 = snr_to_sigma(snr_db, config.m, constellation.avg_power)
    rng = stream_rng(config.seed, IMPORTANCE_STREAM)
    samples = []
    for _ in range(config.importance_samples):
        obs = UnitTrial.draw(rng, config.n, config.m, constellation).at(sigma_w2, constellation)
        samples.append(postprocess_radii(model.predict(stack_input(obs)), obs))
    return samples


def cmd_complexity(config: ExperimentConfig) -> Tuple[Path, Path]:
    """Empirical and analytic cost of fixed-radius enumeration for SDIRS and DL-SD."""
    if config.psi_cache is None:
        return _complexity(config)
    Path(config.psi_cache).parent.mkdir(parents=True, exist_ok=True)
    with using_psi_cache(TableCache.of(config.psi_cache)):
        return _complexity(config)


def _complexity(config: ExperimentConfig) -> Tuple[Path, Path]:
    constellation = config.constellation
    labels = ('sdirs',) + tuple(dlsd_label(q) for q in config.q)
    models = load_models(config)
    plan = _plan(config, labels, models, 'fp', count_points=True)
    logging.info(f'running {config.trials} complexity trials of {list(labels)}')
    tallies = run_trials(plan, config.trials, config.workers)
    rows, ratios = [], []
    for i, snr_db in enumerate(config.snr_grid_db):
        sigma_w2 = snr_to_sigma(snr_db, config.m, constellation.avg_power)
        for label in labels:
            if label == 'sdirs':
                analytic = expected_complexity_spi(
                    config.m, config.n, sigma_w2,
                    sdirs_radii(sigma_w2, config.n, config.sdirs_max_rounds), constellation)
            else:
                model = models[(snr_db, label_q(label))]
                analytic = expected_complexity_dl(sample_radius_vectors(config, model, snr_db),
                                                  config.m, config.n, sigma_w2, constellation,
                                                  model.layer_dims)
            tally = tallies[(i, label)]
            rows.append(ComplexityRow(snr_db, label, tally.mean_flops, tally.flops_max,
                                      tally.mean_time, tally.time_max, tally.mean_points, analytic,
                                      _exponent(analytic, config.m),
                                      _exponent(tally.mean_flops, config.m)))
            logging.info(f'{snr_db:g} dB {label}: {tally.mean_flops:.6g} flops measured, '
                         f'{analytic:.6g} expected')
        reference = tallies[(i, 'sdirs')]
        for q in config.q:
            tally = tallies[(i, dlsd_label(q))]
            ratios.append(RatioRow(snr_db, q,
                                   _ratio(tally.mean_flops, reference.mean_flops),
                                   _ratio(tally.flops_max, reference.flops_max),
                                   _ratio(tally.mean_time, reference.mean_time),
                                   _ratio(tally.time_max, reference.time_max)))
    out = Path(config.out_dir)
    complexity_path = write_rows(out / 'complexity.csv', ComplexityRow, rows)
    ratios_path = write_rows(out / 'ratios.csv', RatioRow, ratios)
    logging.info(f'wrote {complexity_path} and {ratios_path}')
    return complexity_path, ratios_path


def cmd_decode(model_path, observation_path, mode: str = 'se') -> DecodeReport:
    model = RadiusModel.load(model_path)
    obs = Observation.load(observation_path)
    logging.info(f'decoding {obs:s} with {model:s}')
    return DecodeReport.from_result(dl_sphere_decode(obs, model, mode=mode))
