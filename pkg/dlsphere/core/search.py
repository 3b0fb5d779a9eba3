"""Closest-point search over the skewed lattice {H s}.

The search runs on the real embedding with the columns interleaved as
``(Re s_1, Im s_1, ..., Re s_m, Im s_m)`` so that two consecutive tree levels
make up one complex dimension. Levels are walked bottom-up after a QR
factorisation; a node at complex depth k is counted once both real
coordinates of the k-th symbol from the bottom are fixed.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .complexity import FlopModel, inv_reg_lower_gamma
from .lattice import Constellation, Observation, SingularChannelError, mmse_filter, real_embedding

RADIUS_FLOOR = 1e-9
# sphere membership slack; absorbs rounding of the QR-rotated distances
MEMBERSHIP_SLACK = 1e-10
DEFAULT_BUDGET = 10 ** 6
# below this many lattice points the label oracle enumerates everything
FULL_ENUMERATION_LIMIT = 4096
SDIRS_MISS = 0.99


class BudgetError(Exception):
    pass


@dataclass
class RadiusVector:
    """Ascending search radii, each at least ``RADIUS_FLOOR``."""
    radii: np.ndarray

    def __post_init__(self):
        self.radii = np.atleast_1d(np.asarray(self.radii, dtype=float))
        if self.radii.size == 0:
            raise ValueError('a radius vector needs at least one radius')
        if not np.all(self.radii > 0):
            raise ValueError(f'radii must be positive, got {self.radii}')
        if np.any(np.diff(self.radii) < 0):
            raise ValueError(f'radii must be ascending, got {self.radii}')

    @classmethod
    def floored(cls, values) -> 'RadiusVector':
        """Sort ``values`` and raise anything below the floor to it."""
        return cls(np.maximum(np.sort(np.asarray(values, dtype=float)), RADIUS_FLOOR))

    @property
    def strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.radii) > 0))

    def __len__(self):
        return len(self.radii)

    def __iter__(self):
        return iter(self.radii)

    def __getitem__(self, item):
        return self.radii[item]


@dataclass
class DecodeOutcome:
    """Result of one fixed-radius search.

    ``solution`` is set exactly when a point was accepted, and then
    ``dist2 <= radius**2 * (1 + MEMBERSHIP_SLACK)``: points up to that
    relative slack past the sphere surface count as inside.
    """
    solution: Optional[np.ndarray]
    dist2: Optional[float]
    visited: np.ndarray = field(repr=False)
    flops: int

    @property
    def found(self) -> bool:
        return self.solution is not None


@dataclass
class SdirsOutcome:
    solution: np.ndarray
    rounds_used: int
    total_visited: np.ndarray = field(repr=False)
    flops: int
    dist2: float
    accepting_radius: float


def qr_preprocess(H_r: np.ndarray):
    """Reduced QR with a nonnegative diagonal; refuses rank-deficient channels."""
    Q, R = np.linalg.qr(H_r)
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    Q = Q * signs[None, :]
    R = R * signs[:, None]
    diag = np.diag(R)
    if diag.size and diag.min() <= 1e-12 * max(diag.max(), 1.0) * diag.size:
        raise SingularChannelError(f'channel is rank deficient (min |R_ii| = {diag.min():.3g})')
    return Q, R


class LatticeSearch:
    """Precomputed tree for one observation; reusable for any number of radii."""

    def __init__(self, obs: Observation):
        self.obs = obs
        m = obs.m
        embedding = real_embedding(obs)
        self.order = [c for j in range(m) for c in (j, m + j)]
        Q, R = qr_preprocess(embedding.H_r[:, self.order])
        z = Q.T @ embedding.y_r
        outside = embedding.y_r - Q @ z
        self.residual = float(outside @ outside)
        self.R = R.tolist()
        self.z = z.tolist()
        self.dims = 2 * m
        self.levels = [float(lv) for lv in obs.constellation.real_levels]
        self.flop_model = FlopModel.for_system(obs.constellation, m, obs.n)

    def _bound(self, radius: float) -> float:
        return radius * radius * (1 + MEMBERSHIP_SLACK) - self.residual

    def decode(self, radius: float, mode: str = 'se') -> DecodeOutcome:
        """Closest point within ``radius`` of y, or a null outcome.

        ``mode='se'`` visits children by increasing partial distance and
        tightens the bound to the best leaf found; ``mode='fp'`` keeps the
        radius fixed and visits children in level order.
        """
        if radius <= 0:
            raise ValueError(f'radius must be positive, got {radius}')
        if mode not in ('se', 'fp'):
            raise ValueError(f"mode must be 'se' or 'fp', got {mode!r}")
        walk = _Walk(self, self._bound(radius), tighten=(mode == 'se'), sort_children=(mode == 'se'))
        walk.run()
        visited = np.array(walk.visited, dtype=int)
        flops = self.flop_model.sphere(visited)
        if walk.best_key is None:
            return DecodeOutcome(None, None, visited, flops)
        solution = self.symbols(walk.best_key)
        return DecodeOutcome(solution, self.obs.distance2(solution), visited, flops)

    def collect(self, radius: float) -> list:
        """Level-index keys of every lattice point within ``radius``."""
        walk = _Walk(self, self._bound(radius), tighten=False, sort_children=False, keep_all=True)
        walk.run()
        return walk.leaves

    def symbols(self, key) -> np.ndarray:
        values = np.array([self.levels[i] for i in key])
        return values[0::2] + 1j * values[1::2]


class _Walk:
    """Depth-first enumeration state for one radius."""

    def __init__(self, search: LatticeSearch, bound: float, tighten: bool, sort_children: bool,
                 keep_all: bool = False):
        self.search = search
        self.bound = bound
        self.tighten = tighten
        self.sort_children = sort_children
        self.keep_all = keep_all
        m = search.dims // 2
        self.visited = [0] * m
        self.x = [0.0] * search.dims
        self.key = [0] * search.dims
        self.best_key = None
        self.best = float('inf')
        self.leaves = []

    def run(self):
        if self.bound >= 0:
            self._descend(self.search.dims - 1, 0.0)

    def _descend(self, i: int, partial: float):
        search = self.search
        row = search.R[i]
        acc = search.z[i]
        x = self.x
        for j in range(i + 1, search.dims):
            acc -= row[j] * x[j]
        rii = row[i]
        center = acc / rii
        rii2 = rii * rii
        children = [(rii2 * (lv - center) ** 2, li) for li, lv in enumerate(search.levels)]
        if self.sort_children:
            children.sort()
        complete = (i % 2 == 0)
        depth = len(self.visited) - i // 2 - 1
        for increment, li in children:
            total = partial + increment
            if total > self.bound:
                if self.sort_children:
                    break
                continue
            if complete:
                self.visited[depth] += 1
            x[i] = search.levels[li]
            self.key[i] = li
            if i == 0:
                self._leaf(total)
            else:
                self._descend(i - 1, total)

    def _leaf(self, total: float):
        key = tuple(self.key)
        if self.keep_all:
            self.leaves.append(key)
        if total < self.best or (total == self.best and key < self.best_key):
            self.best = total
            self.best_key = key
            if self.tighten:
                self.bound = min(self.bound, total)


def sphere_decode(obs: Observation, radius: float, mode: str = 'se') -> DecodeOutcome:
    return LatticeSearch(obs).decode(radius, mode)


def count_points_in_sphere(obs: Observation, radius: float) -> int:
    """Number of lattice points s with ``||y - H s||**2 <= radius**2 * (1 + MEMBERSHIP_SLACK)``."""
    if radius < 0:
        raise ValueError(f'radius must be nonnegative, got {radius}')
    return len(LatticeSearch(obs).collect(radius))


# ---------------------------------------------------------------- exhaustive oracles

@lru_cache(maxsize=16)
def candidate_symbols(constellation: Constellation, m: int) -> np.ndarray:
    """All symbol vectors in lexicographic order of their symbol indices."""
    idx = np.indices((constellation.order,) * m).reshape(m, -1).T
    return constellation.points[idx]


def _check_budget(constellation: Constellation, m: int, budget: int):
    size = constellation.order ** m
    if size > budget:
        raise BudgetError(f'{constellation.order}-QAM with m={m} has {size} lattice points, '
                          f'over the enumeration budget of {budget}')


def _all_distances(obs: Observation, budget: int):
    _check_budget(obs.constellation, obs.m, budget)
    S = candidate_symbols(obs.constellation, obs.m)
    residual = obs.y[None, :] - S @ obs.H.T
    return S, np.einsum('ij,ij->i', residual.real, residual.real) + \
        np.einsum('ij,ij->i', residual.imag, residual.imag)


def brute_force_mld(obs: Observation, budget: int = DEFAULT_BUDGET):
    """Exact ML solution by enumerating every lattice point; ties go to the lowest index."""
    S, dist2 = _all_distances(obs, budget)
    best = int(np.argmin(dist2))
    return S[best].copy(), float(dist2[best])


def _distinct_ascending(values, q: int) -> list:
    distinct = []
    for value in np.sort(values):
        if not distinct or value > distinct[-1] * (1 + 1e-12) + 1e-15:
            distinct.append(float(value))
            if len(distinct) == q:
                break
    return distinct


def babai_estimate(obs: Observation) -> np.ndarray:
    """MMSE-filtered and rounded point; its distance is always achievable."""
    return obs.constellation.quantize(mmse_filter(obs.H, obs.y, obs.snr_linear))


def babai_radius(obs: Observation) -> float:
    return float(np.sqrt(obs.distance2(babai_estimate(obs))))


def q_closest_distances(obs: Observation, q: int, budget: int = DEFAULT_BUDGET) -> RadiusVector:
    """The q smallest distinct distances from y to the skewed lattice."""
    if q < 1:
        raise ValueError(f'q must be >= 1, got {q}')
    size = obs.constellation.order ** obs.m
    if size <= FULL_ENUMERATION_LIMIT:
        _, dist2 = _all_distances(obs, budget)
        distances = _distinct_ascending(np.sqrt(dist2), q)
    else:
        distances = _grow_until(obs, q, budget, size)
    if len(distances) < q:
        raise BudgetError(f'only {len(distances)} distinct distances exist, asked for {q}')
    return RadiusVector.floored(distances)


def _grow_until(obs: Observation, q: int, budget: int, size: int) -> list:
    search = LatticeSearch(obs)
    radius = max(babai_radius(obs), RADIUS_FLOOR)
    while True:
        keys = search.collect(radius)
        if len(keys) > budget:
            raise BudgetError(f'{len(keys)} points inside radius {radius:g}, over budget {budget}')
        distances = np.sqrt([obs.distance2(search.symbols(key)) for key in keys])
        distinct = _distinct_ascending(distances, q)
        if len(distinct) >= q or len(keys) >= size:
            return distinct
        radius *= 2


# ---------------------------------------------------------------- increasing-radius search

def sdirs_radii(sigma_w2: float, n: int, rounds: int) -> np.ndarray:
    """Radii whose hit probabilities are ``1 - 0.99**i`` for ``i = 1..rounds``."""
    probabilities = 1 - SDIRS_MISS ** np.arange(1, rounds + 1)
    return np.maximum(np.sqrt([sigma_w2 * inv_reg_lower_gamma(p, n) for p in probabilities]),
                      RADIUS_FLOOR)


def sdirs_decode(obs: Observation, max_rounds: int = 500, mode: str = 'se') -> SdirsOutcome:
    """Exact ML by sphere search over a growing radius schedule.

    When every scheduled round is empty, one last round at the Babai distance
    is run, which always contains a point.
    """
    if max_rounds < 1:
        raise ValueError(f'max_rounds must be >= 1, got {max_rounds}')
    search = LatticeSearch(obs)
    visited = np.zeros(obs.m, dtype=int)
    flops = 0
    radii = list(sdirs_radii(obs.sigma_w2, obs.n, max_rounds))
    radii.append(max(babai_radius(obs), RADIUS_FLOOR))
    for round_number, radius in enumerate(radii, start=1):
        outcome = search.decode(radius, mode)
        visited += outcome.visited
        flops += outcome.flops
        if outcome.found:
            logging.debug(f'increasing-radius search hit in round {round_number} at r={radius:.4g}')
            return SdirsOutcome(outcome.solution, round_number, visited, flops, outcome.dist2, radius)
    raise AssertionError('the Babai radius always contains its own point')

