"""Expected complexity of fixed-radius, increasing-radius and learned-radius
sphere decoding, counted in elementary operations.

The difference-count tables Psi_2k(v) are indexed in the unit-spacing lattice
(level differences 0, 1, 2, ...). Constellation levels here are odd integers,
two apart, so a difference vector with table index v has squared norm
``LEVEL_SPACING_SQ * v``.
"""
import contextlib
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammainc

from .caching import TableCache
from .lattice import Constellation, SUPPORTED_ORDERS, UnsupportedConstellationError

LEVEL_SPACING_SQ = 4

_psi_cache: TableCache = TableCache.memory_only()


def set_psi_cache(cache: TableCache):
    """Route Psi table builds through ``cache`` (e.g. ``TableCache.of('psi.db')``)."""
    global _psi_cache
    _psi_cache = cache
    _psi_weights.cache_clear()


@contextlib.contextmanager
def using_psi_cache(cache: TableCache):
    """``set_psi_cache`` for the duration of a block."""
    previous = _psi_cache
    set_psi_cache(cache)
    try:
        yield cache
    finally:
        set_psi_cache(previous)


# ---------------------------------------------------------------- incomplete gamma

def reg_lower_gamma(x, n):
    """Regularized lower incomplete gamma ``P(n, x)``; scalar or array ``x``."""
    if np.any(np.asarray(x) < 0):
        raise ValueError(f'x must be nonnegative, got {x}')
    result = gammainc(n, x)
    return float(result) if np.ndim(result) == 0 else result


def inv_reg_lower_gamma(p: float, n: int) -> float:
    """The x with ``reg_lower_gamma(x, n) == p``, found by bracketed root finding."""
    if not 0 <= p < 1:
        raise ValueError(f'p must lie in [0, 1), got {p}')
    if p == 0:
        return 0.0
    hi = max(1.0, float(n))
    while gammainc(n, hi) <= p:
        hi *= 2
    return brentq(lambda x: gammainc(n, x) - p, 0.0, hi, xtol=1e-14, rtol=1e-15, maxiter=500)


# ---------------------------------------------------------------- flop models

def f_sp(k: int, levels_per_dim: int) -> int:
    """Operations per visited point at complex depth ``k`` for M^2-QAM."""
    if k < 1:
        raise ValueError(f'depth must be >= 1, got {k}')
    if levels_per_dim not in (2, 4, 8):
        raise UnsupportedConstellationError(f'{levels_per_dim} levels per dimension')
    return 8 * k + 20 + 4 * levels_per_dim


def f_sb(m: int, n: int) -> int:
    """Operations of one MMSE detection."""
    if not 1 <= m <= n:
        raise ValueError(f'need 1 <= m <= n, got m={m}, n={n}')
    ops = m ** 3 + Fraction(5 * m * m, 2) + n * m * m + 3 * m * n - Fraction(m, 2)
    assert ops.denominator == 1
    return int(ops)


def f_dn(layer_dims: Sequence[int]) -> int:
    """Operations of one forward pass through a dense net."""
    if len(layer_dims) < 2:
        raise ValueError(f'need at least two layers, got {list(layer_dims)}')
    return sum(2 * a * b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


@dataclass(frozen=True)
class FlopModel:
    levels_per_dim: int
    m: int
    n: int
    layer_dims: tuple = ()

    @classmethod
    def for_system(cls, constellation: Constellation, m: int, n: int, layer_dims=()):
        return cls(constellation.levels_per_dim, m, n, tuple(layer_dims))

    def per_node(self, k: int) -> int:
        return f_sp(k, self.levels_per_dim)

    @property
    def suboptimal(self) -> int:
        return f_sb(self.m, self.n)

    @property
    def network(self) -> int:
        return f_dn(self.layer_dims) if self.layer_dims else 0

    def sphere(self, visited: Sequence[int]) -> int:
        return sum(self.per_node(k) * int(count) for k, count in enumerate(visited, start=1))


# ---------------------------------------------------------------- Psi tables

def _poly_mul(a, b):
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] += x * y
    return out


def _poly_pow(p, e: int):
    out = [1]
    for _ in range(e):
        out = _poly_mul(out, p)
    return out


def _poly_add(*polys):
    out = [0] * max(len(p) for p in polys)
    for p in polys:
        for i, c in enumerate(p):
            out[i] += c
    return out


def _poly_from_terms(terms):
    """Polynomial from ``(exponent, coefficient)`` pairs."""
    out = [0] * (max(e for e, _ in terms) + 1)
    for e, c in terms:
        out[e] += c
    return out


def _squares(count, weight=1):
    return [(e * e, weight) for e in range(count)]


QAM16_OUTER = _poly_from_terms([(0, 1), (1, 1), (4, 1), (9, 1)])
QAM16_INNER = _poly_from_terms([(0, 1), (1, 2), (4, 1)])
QAM64_BASES = (
    _poly_from_terms(_squares(8)),
    _poly_from_terms([(1, 1)] + _squares(7)),
    _poly_from_terms([(1, 1), (4, 1)] + _squares(6)),
    _poly_from_terms([(0, -1), (16, -1)] + _squares(5, 2)),
)


def _psi_qam4(k: int):
    return [Fraction(math.comb(2 * k, v)) for v in range(2 * k + 1)]


def _psi_qam16(k: int):
    total = [0]
    for j in range(2 * k + 1):
        omega = _poly_mul(_poly_pow(QAM16_OUTER, j), _poly_pow(QAM16_INNER, 2 * k - j))
        total = _poly_add(total, [math.comb(2 * k, j) * c for c in omega])
    return [Fraction(c, 2 ** (2 * k)) for c in total]


def _psi_qam64(k: int):
    # The multinomial sum over xi_0 + ... + xi_3 = 2k of
    # C(2k; xi) * prod_i P_i^xi_i collapses to (P_0 + P_1 + P_2 + P_3)^2k.
    total = _poly_pow(_poly_add(*QAM64_BASES), 2 * k)
    return [Fraction(c, 4 ** (2 * k)) for c in total]


_PSI_BUILDERS = {4: _psi_qam4, 16: _psi_qam16, 64: _psi_qam64}


def _encode(coeffs) -> str:
    return ','.join(f'{c.numerator}/{c.denominator}' for c in coeffs)


def _decode(text: str):
    return [Fraction(c) for c in text.split(',')]


def psi_polynomial(constellation_order: int, k: int) -> list:
    """Exact coefficients ``[Psi_2k(0), Psi_2k(1), ...]`` over the finite support."""
    if constellation_order not in _PSI_BUILDERS:
        raise UnsupportedConstellationError(
            f'{constellation_order}-QAM is not supported. Choose from {SUPPORTED_ORDERS}')
    if k < 1:
        raise ValueError(f'k must be >= 1, got {k}')
    builder = _PSI_BUILDERS[constellation_order]
    text = _psi_cache.get(f'psi:{constellation_order}:{k}', lambda: _encode(builder(k)))
    return _decode(text)


def psi(constellation_order: int, k: int, v: int) -> Fraction:
    if v < 0:
        raise ValueError(f'v must be nonnegative, got {v}')
    coeffs = psi_polynomial(constellation_order, k)
    return coeffs[v] if v < len(coeffs) else Fraction(0)


@dataclass
class PsiTable:
    constellation_order: int
    k_max: int
    coeffs: dict = field(repr=False)

    @classmethod
    def build(cls, constellation_order: int, k_max: int) -> 'PsiTable':
        coeffs = {}
        for k in range(1, k_max + 1):
            for v, c in enumerate(psi_polynomial(constellation_order, k)):
                if c:
                    coeffs[(k, v)] = c
        return cls(constellation_order, k_max, coeffs)

    def __getitem__(self, kv) -> Fraction:
        return self.coeffs.get(kv, Fraction(0))

    def support(self, k: int) -> int:
        """Largest v with a nonzero coefficient at depth ``k``."""
        return max(v for (kk, v) in self.coeffs if kk == k)

    def mass(self, k: int) -> Fraction:
        return sum((c for (kk, _), c in self.coeffs.items() if kk == k), Fraction(0))


@lru_cache(maxsize=None)
def _psi_weights(constellation_order: int, k: int):
    coeffs = psi_polynomial(constellation_order, k)
    weights = np.array([float(c) for c in coeffs])
    support = np.nonzero(weights)[0]
    return support.astype(float), weights[support]


# ---------------------------------------------------------------- expected complexity

def _gamma_ratio(a: int, d2, denom):
    """``reg_lower_gamma(d2 / denom, a)`` with ``0/0 -> 0`` and ``x/0 -> inf``."""
    d2, denom = np.broadcast_arrays(np.asarray(d2, dtype=float), np.asarray(denom, dtype=float))
    x = np.full(d2.shape, np.inf)
    np.divide(d2, denom, out=x, where=denom > 0)
    x[(denom <= 0) & (d2 <= 0)] = 0.0
    return gammainc(a, x)


def _fixed_radius_per_radius(m, n, sigma_w2, d2, constellation, v_max=None):
    d2 = np.atleast_1d(np.asarray(d2, dtype=float))
    total = np.zeros(d2.shape)
    tail = 0.0
    for k in range(1, m + 1):
        v, w = _psi_weights(constellation.order, k)
        if v_max is not None:
            dropped = v > v_max
            if np.any(dropped):
                # gamma is decreasing in v, so the first dropped v bounds the rest
                bound = _gamma_ratio(n - m + k, d2.max(), sigma_w2 + LEVEL_SPACING_SQ * (v_max + 1))
                tail += f_sp(k, constellation.levels_per_dim) * float(bound) * w[dropped].sum()
            v, w = v[~dropped], w[~dropped]
        g = _gamma_ratio(n - m + k, d2[:, None], sigma_w2 + LEVEL_SPACING_SQ * v[None, :])
        total += f_sp(k, constellation.levels_per_dim) * (g @ w)
    if tail:
        logging.debug(f'fixed-radius complexity truncated at v={v_max}, tail bound {tail:.3g}')
    return total


def expected_complexity_fixed_radius(m: int, n: int, sigma_w2: float, d: float,
                                     constellation: Constellation, v_max=None) -> float:
    """Expected operations of one sphere search of radius ``d`` with plain enumeration."""
    if d <= 0:
        raise ValueError(f'radius must be positive, got {d}')
    return float(_fixed_radius_per_radius(m, n, sigma_w2, d * d, constellation, v_max)[0])


def _hit_probability(n: int, radii, sigma_w2: float):
    return _gamma_ratio(n, np.asarray(radii, dtype=float) ** 2, sigma_w2)


def expected_complexity_spi(m: int, n: int, sigma_w2: float, radii,
                            constellation: Constellation) -> float:
    """Expected operations of increasing-radius search over ``radii``."""
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0 or np.any(np.diff(radii) <= 0) or radii[0] <= 0:
        raise ValueError('radii must be positive and strictly increasing')
    p = _hit_probability(n, radii, sigma_w2)
    dp = np.diff(np.concatenate([[0.0], p]))
    fixed = _fixed_radius_per_radius(m, n, sigma_w2, radii ** 2, constellation)
    return float(dp @ fixed)


def expected_complexity_dl(samples, m: int, n: int, sigma_w2: float,
                           constellation: Constellation, layer_dims) -> float:
    """Sample-mean expected operations of learned-radius decoding.

    ``samples`` holds U predicted radius vectors, each nondecreasing.
    """
    radii = np.array([np.asarray(getattr(s, 'radii', s), dtype=float) for s in samples])
    if radii.size == 0:
        raise ValueError('need at least one radius sample')
    U, q = radii.shape
    p = _hit_probability(n, radii, sigma_w2)
    dp = np.diff(np.concatenate([np.zeros((U, 1)), p], axis=1), axis=1)
    fixed = _fixed_radius_per_radius(m, n, sigma_w2, radii.ravel() ** 2, constellation).reshape(U, q)
    sphere = float(np.sum(dp * fixed)) / U
    fallback = f_sb(m, n) * (1.0 - float(np.mean(p[:, -1])))
    return sphere + fallback + f_dn(layer_dims)


def complexity_exponent(C: float, m: int) -> float:
    """``e_c`` with ``C = m ** e_c``."""
    if C <= 0 or m < 2:
        raise ValueError(f'need C > 0 and m >= 2, got C={C}, m={m}')
    return math.log(C) / math.log(m)
