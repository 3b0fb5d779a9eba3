"""Learned-radius sphere decoding: predict q radii, search each in ascending
order, fall back to rounded MMSE when every sphere is empty."""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from .complexity import FlopModel
from .lattice import DimensionError, Observation, mmse_filter, stack_input
from .network import RadiusModel
from .search import RADIUS_FLOOR, LatticeSearch, RadiusVector, babai_radius, count_points_in_sphere


class PathKind(Enum):
    Sphere = 'sphere'
    Fallback = 'fallback'


@dataclass(frozen=True)
class DecodePath:
    kind: PathKind
    round: Optional[int] = None

    @classmethod
    def sphere(cls, round_number: int) -> 'DecodePath':
        return cls(PathKind.Sphere, round_number)

    @classmethod
    def fallback(cls) -> 'DecodePath':
        return cls(PathKind.Fallback)

    def __str__(self):
        if self.kind is PathKind.Sphere:
            return f'sphere({self.round})'
        return 'fallback'


@dataclass
class PipelineResult:
    solution: np.ndarray
    path: DecodePath
    radii_used: RadiusVector
    visited: np.ndarray = field(repr=False)
    sphere_flops: int
    total_flops: int
    dist2: float

    @property
    def rounds_attempted(self) -> int:
        return self.path.round if self.path.kind is PathKind.Sphere else len(self.radii_used)

    @property
    def accepting_radius(self) -> Optional[float]:
        if self.path.kind is PathKind.Sphere:
            return float(self.radii_used[self.path.round - 1])
        return None


def mmse_detect(obs: Observation, snr_linear: float) -> np.ndarray:
    """``round((H^H H + snr^-1 I)^-1 H^H y)`` to the constellation."""
    if not snr_linear > 0:
        raise ValueError(f'snr must be positive, got {snr_linear}')
    return obs.constellation.quantize(mmse_filter(obs.H, obs.y, snr_linear))


def postprocess_radii(raw, obs: Observation) -> RadiusVector:
    """Replace non-finite predictions by the Babai distance, sort and floor."""
    raw = np.asarray(raw, dtype=float).copy()
    bad = ~np.isfinite(raw)
    if np.any(bad):
        logging.warning(f'{int(bad.sum())} non-finite radius predictions replaced by the Babai distance')
        raw[bad] = babai_radius(obs)
    return RadiusVector.floored(raw)


def decode_with_radii(obs: Observation, radii: RadiusVector, snr_linear: float,
                      layer_dims: Sequence[int] = (), mode: str = 'se') -> PipelineResult:
    """Rounds of sphere search at ``radii``; MMSE when all of them come back empty."""
    search = LatticeSearch(obs)
    flop_model = FlopModel.for_system(obs.constellation, obs.m, obs.n, layer_dims)
    visited = np.zeros(obs.m, dtype=int)
    sphere_flops = 0
    for c, radius in enumerate(radii, start=1):
        outcome = search.decode(max(float(radius), RADIUS_FLOOR), mode)
        visited += outcome.visited
        sphere_flops += outcome.flops
        if outcome.found:
            return PipelineResult(outcome.solution, DecodePath.sphere(c), radii, visited, sphere_flops,
                                  sphere_flops + flop_model.network, outcome.dist2)
    solution = mmse_detect(obs, snr_linear)
    logging.debug(f'all {len(radii)} spheres empty, using MMSE')
    return PipelineResult(solution, DecodePath.fallback(), radii, visited, sphere_flops,
                          sphere_flops + flop_model.network + flop_model.suboptimal,
                          obs.distance2(solution))


def dl_sphere_decode(obs: Observation, model: RadiusModel, q: Optional[int] = None,
                     mode: str = 'se') -> PipelineResult:
    if (obs.n, obs.m, obs.constellation.order) != (model.n, model.m, model.constellation_order):
        raise DimensionError(f'model is for {model.n}x{model.m} {model.constellation_order}-QAM, '
                             f'observation is {obs:s}')
    if q is not None and q != model.q:
        raise DimensionError(f'model predicts {model.q} radii, asked for {q}')
    radii = postprocess_radii(model.predict(stack_input(obs)), obs)
    return decode_with_radii(obs, radii, 10 ** (model.snr_db / 10), model.layer_dims, mode)


@dataclass
class BatchStats:
    """Integer sums over decoded trials; merging is exact and order-free."""
    trials: int = 0
    bit_errors: int = 0
    total_bits: int = 0
    fallbacks: int = 0
    flops_sum: int = 0
    flops_max: int = 0
    points_sum: int = 0

    def add(self, result: PipelineResult, obs: Observation):
        self.trials += 1
        if obs.truth is not None:
            self.bit_errors += obs.constellation.bit_errors(result.solution, obs.truth)
            self.total_bits += obs.m * obs.constellation.bits_per_symbol
        self.fallbacks += result.path.kind is PathKind.Fallback
        self.flops_sum += result.total_flops
        self.flops_max = max(self.flops_max, result.total_flops)
        radius = result.accepting_radius
        self.points_sum += count_points_in_sphere(obs, radius) if radius is not None else 0

    def merge(self, other: 'BatchStats') -> 'BatchStats':
        return BatchStats(self.trials + other.trials, self.bit_errors + other.bit_errors,
                          self.total_bits + other.total_bits, self.fallbacks + other.fallbacks,
                          self.flops_sum + other.flops_sum, max(self.flops_max, other.flops_max),
                          self.points_sum + other.points_sum)

    @property
    def ber(self) -> float:
        return self.bit_errors / self.total_bits if self.total_bits else 0.0

    @property
    def fallback_rate(self) -> float:
        return self.fallbacks / self.trials if self.trials else 0.0

    @property
    def mean_flops(self) -> float:
        return self.flops_sum / self.trials if self.trials else 0.0

    @property
    def mean_points(self) -> float:
        return self.points_sum / self.trials if self.trials else 0.0


@dataclass
class BatchReport:
    results: List[PipelineResult] = field(repr=False)
    stats: BatchStats


def _decode_one(args):
    obs, model, q, mode = args
    result = dl_sphere_decode(obs, model, q, mode)
    stats = BatchStats()
    stats.add(result, obs)
    return result, stats


def decode_batch(observations: Sequence[Observation], model: RadiusModel, q: Optional[int] = None,
                 mode: str = 'se', workers: int = 1) -> BatchReport:
    jobs = [(obs, model, q, mode) for obs in observations]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_decode_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        outputs = [_decode_one(job) for job in jobs]
    stats = BatchStats()
    for _, trial_stats in outputs:
        stats = stats.merge(trial_stats)
    return BatchReport([result for result, _ in outputs], stats)
