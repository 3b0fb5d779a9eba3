import math
from fractions import Fraction

import numpy as np
import pytest

from dlsphere.core import (Constellation, FlopModel, PsiTable, TableCache, complexity_exponent,
                           expected_complexity_dl, expected_complexity_fixed_radius,
                           expected_complexity_spi, f_dn, f_sb, f_sp, inv_reg_lower_gamma, psi,
                           reg_lower_gamma, set_psi_cache, snr_to_sigma, sphere_decode)
from dlsphere.core import complexity
from dlsphere.core.complexity import psi_polynomial
from dlsphere.core.lattice import UnsupportedConstellationError
from dlsphere.harness import UnitTrial, trial_rng


class TestIncompleteGamma:

    def test_closed_form_for_one(self):
        for x in np.linspace(0, 30, 100):
            assert reg_lower_gamma(x, 1) == pytest.approx(1 - math.exp(-x), abs=1e-10)

    def test_recurrence(self):
        for n in range(1, 8):
            for x in np.linspace(0.05, 25, 100):
                step = math.exp(n * math.log(x) - x - math.lgamma(n + 1))
                assert reg_lower_gamma(x, n + 1) == pytest.approx(
                    reg_lower_gamma(x, n) - step, abs=1e-10)

    def test_monotone(self):
        values = reg_lower_gamma(np.linspace(0, 20, 200), 4)
        assert np.all(np.diff(values) >= 0)
        assert values[0] == 0.0

    def test_negative_argument(self):
        with pytest.raises(ValueError):
            reg_lower_gamma(-1.0, 2)

    def test_inverse_round_trip(self, rng):
        for p, n in zip(rng.uniform(0.001, 0.999, 100), rng.integers(1, 40, 100)):
            x = inv_reg_lower_gamma(float(p), int(n))
            assert reg_lower_gamma(x, int(n)) == pytest.approx(p, abs=1e-9)

    def test_inverse_closed_form(self):
        assert inv_reg_lower_gamma(1 - math.exp(-1), 1) == pytest.approx(1.0, abs=1e-9)
        assert inv_reg_lower_gamma(0.0, 3) == 0.0

    def test_inverse_domain(self):
        with pytest.raises(ValueError):
            inv_reg_lower_gamma(1.0, 2)


class TestFlops:

    @pytest.mark.parametrize('k, levels, expected', [(1, 4, 44), (1, 2, 36), (10, 8, 132)])
    def test_f_sp(self, k, levels, expected):
        assert f_sp(k, levels) == expected

    def test_f_sb_examples(self):
        assert f_sb(2, 2) == 37
        assert f_sb(1, 1) == 7

    def test_f_sb_is_a_positive_integer(self):
        for n in range(1, 65):
            for m in range(1, n + 1):
                value = f_sb(m, n)
                assert isinstance(value, int) and value > 0

    def test_f_dn(self):
        assert f_dn([12, 128, 3]) == 3840
        assert f_dn([1, 1]) == 2
        assert f_dn([5, 9, 2]) == f_dn([2, 9, 5])
        with pytest.raises(ValueError):
            f_dn([4])

    def test_flop_model(self, qam16):
        model = FlopModel.for_system(qam16, 2, 3, [12, 8, 3])
        assert model.sphere([2, 5]) == 2 * f_sp(1, 4) + 5 * f_sp(2, 4)
        assert model.suboptimal == f_sb(2, 3)
        assert model.network == f_dn([12, 8, 3])
        assert FlopModel.for_system(qam16, 2, 3).network == 0


def _difference_distribution(levels: int):
    """Integer counts of squared level differences over every (sent, other) pair."""
    diffs = [(a - b) ** 2 for a in range(levels) for b in range(levels)]
    return np.bincount(diffs).astype(np.int64)


def _psi_by_convolution(levels: int, k: int):
    per_dim = _difference_distribution(levels)
    total = np.array([1], dtype=np.int64)
    for _ in range(2 * k):
        total = np.convolve(total, per_dim)
    return [Fraction(int(c), levels ** (2 * k)) for c in total]


def _psi_by_enumeration(levels: int, k: int):
    diffs = np.array([(a - b) ** 2 for a in range(levels) for b in range(levels)])
    grids = np.meshgrid(*[diffs] * (2 * k), indexing='ij')
    sums = np.sum([g.ravel() for g in grids], axis=0)
    counts = np.bincount(sums)
    return [Fraction(int(c), levels ** (2 * k)) for c in counts]


def _trim(coeffs):
    coeffs = list(coeffs)
    while coeffs and coeffs[-1] == 0:
        coeffs.pop()
    return coeffs


class TestPsi:

    def test_qam4_binomials(self):
        assert [psi(4, 1, v) for v in range(4)] == [1, 2, 1, 0]
        assert [psi(4, 3, v) for v in range(7)] == [math.comb(6, v) for v in range(7)]

    @pytest.mark.parametrize('order, levels', [(4, 2), (16, 4), (64, 8)])
    @pytest.mark.parametrize('k', [1, 2, 3])
    def test_matches_difference_counts(self, order, levels, k):
        assert _trim(psi_polynomial(order, k)) == _trim(_psi_by_convolution(levels, k))

    @pytest.mark.parametrize('order, levels, k', [(4, 2, 1), (4, 2, 2), (4, 2, 3), (16, 4, 1),
                                                  (16, 4, 2), (64, 8, 1)])
    def test_matches_full_enumeration(self, order, levels, k):
        assert _trim(psi_polynomial(order, k)) == _trim(_psi_by_enumeration(levels, k))

    @pytest.mark.parametrize('order, levels', [(4, 2), (16, 4), (64, 8)])
    def test_table_mass_and_support(self, order, levels):
        table = PsiTable.build(order, 4)
        for k in range(1, 5):
            assert table.mass(k) == levels ** (2 * k)
            assert table[(k, 0)] >= 1
            assert table.support(k) == 2 * k * (levels - 1) ** 2
            assert all(c >= 0 for c in table.coeffs.values())

    def test_outside_support_is_zero(self):
        assert psi(16, 1, 1000) == 0

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            psi(4, 0, 0)
        with pytest.raises(ValueError):
            psi(4, 1, -1)
        with pytest.raises(UnsupportedConstellationError):
            psi(32, 1, 0)


class TestPsiCache:

    @pytest.fixture
    def file_cache(self, tmp_path):
        path = tmp_path / 'psi.db'
        set_psi_cache(TableCache.of(str(path)))
        yield path
        set_psi_cache(TableCache.memory_only())

    def test_file_cache_persists_tables(self, file_cache, monkeypatch):
        first = psi_polynomial(16, 2)
        set_psi_cache(TableCache.of(str(file_cache)))
        calls = []
        original = complexity._PSI_BUILDERS[16]
        monkeypatch.setitem(complexity._PSI_BUILDERS, 16, lambda k: calls.append(k) or original(k))
        assert psi_polynomial(16, 2) == first
        assert calls == []
        psi_polynomial(16, 3)
        assert calls == [3]

    def test_no_cache_still_computes(self):
        set_psi_cache(TableCache.no_cache())
        try:
            assert psi_polynomial(4, 2) == [1, 4, 6, 4, 1]
        finally:
            set_psi_cache(TableCache.memory_only())


class TestExpectedComplexity:

    def test_fixed_radius_vanishes_for_tiny_radius(self, qam4):
        assert expected_complexity_fixed_radius(4, 4, 0.5, 1e-9, qam4) == pytest.approx(0, abs=1e-12)

    def test_fixed_radius_grows_with_radius_squared_near_zero(self, qam4):
        small = expected_complexity_fixed_radius(4, 4, 0.5, 1e-7, qam4)
        larger = expected_complexity_fixed_radius(4, 4, 0.5, 1e-6, qam4)
        assert small > 0
        assert larger / small == pytest.approx(100, rel=1e-3)

    def test_fixed_radius_monotone(self, qam16):
        values = [expected_complexity_fixed_radius(3, 4, 0.8, d, qam16)
                  for d in np.linspace(0.2, 8, 30)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_truncation_never_adds(self, qam16):
        full = expected_complexity_fixed_radius(3, 3, 0.8, 4.0, qam16)
        truncated = expected_complexity_fixed_radius(3, 3, 0.8, 4.0, qam16, v_max=3)
        assert truncated <= full

    def test_fixed_radius_at_huge_radius_counts_every_node(self, qam4):
        m = 3
        expected = sum(f_sp(k, 2) * 4 ** k for k in range(1, m + 1))
        assert expected_complexity_fixed_radius(m, m, 0.5, 1e4, qam4) == pytest.approx(expected)

    def test_spi_single_round(self, qam4):
        r, sigma_w2 = 2.0, 0.5
        p = reg_lower_gamma(r * r / sigma_w2, 4)
        assert expected_complexity_spi(4, 4, sigma_w2, [r], qam4) == pytest.approx(
            p * expected_complexity_fixed_radius(4, 4, sigma_w2, r, qam4))

    def test_spi_large_first_radius(self, qam4):
        fixed = expected_complexity_fixed_radius(2, 2, 0.1, 50.0, qam4)
        assert expected_complexity_spi(2, 2, 0.1, [50.0, 60.0], qam4) == pytest.approx(fixed,
                                                                                   rel=1e-9)

    def test_spi_extra_round_does_not_decrease(self, qam16):
        base = expected_complexity_spi(3, 3, 1.0, [1.0, 1.5], qam16)
        assert expected_complexity_spi(3, 3, 1.0, [1.0, 1.5, 2.5], qam16) >= base

    def test_spi_needs_increasing_radii(self, qam4):
        with pytest.raises(ValueError):
            expected_complexity_spi(2, 2, 1.0, [1.0, 1.0], qam4)

    def test_dl_single_sample_identity(self, qam4):
        radii, sigma_w2, layers = [0.8, 1.4, 2.0], 0.5, [12, 16, 3]
        p_last = reg_lower_gamma(radii[-1] ** 2 / sigma_w2, 2)
        expected = (expected_complexity_spi(2, 2, sigma_w2, radii, qam4) + f_dn(layers)
                    + f_sb(2, 2) * (1 - p_last))
        assert expected_complexity_dl([radii], 2, 2, sigma_w2, qam4, layers) == pytest.approx(expected)

    def test_dl_tiny_radii_is_pure_fallback(self, qam4):
        value = expected_complexity_dl([[1e-9, 1e-9]] * 3, 2, 2, 0.5, qam4, [12, 4, 2])
        assert value == pytest.approx(f_sb(2, 2) + f_dn([12, 4, 2]), rel=1e-9)

    def test_dl_needs_samples(self, qam4):
        with pytest.raises(ValueError):
            expected_complexity_dl([], 2, 2, 0.5, qam4, [12, 4, 2])

    @pytest.mark.parametrize('C, m, e_c', [(100.0, 10, 2.0), (1.0, 4, 0.0), (10 ** 3.5, 10, 3.5)])
    def test_exponent(self, C, m, e_c):
        assert complexity_exponent(C, m) == pytest.approx(e_c)


def _empirical_fixed_radius_flops(snr_db: float, trials: int) -> tuple:
    constellation = Constellation.qam(4)
    n = m = 4
    sigma_w2 = snr_to_sigma(snr_db, m, constellation.avg_power)
    radius = math.sqrt(sigma_w2 * inv_reg_lower_gamma(0.99, n))
    flops = [sphere_decode(UnitTrial.draw(trial_rng(7, t), n, m, constellation)
                           .at(sigma_w2, constellation), radius, 'fp').flops
             for t in range(trials)]
    analytic = expected_complexity_fixed_radius(m, n, sigma_w2, radius, constellation)
    return float(np.mean(flops)), analytic


class TestAgainstMonteCarlo:

    def test_fixed_radius_expectation(self):
        measured, analytic = _empirical_fixed_radius_flops(12.0, 3000)
        assert measured == pytest.approx(analytic, rel=0.25)

    @pytest.mark.slow
    @pytest.mark.parametrize('snr_db', [8.0, 12.0, 16.0])
    def test_fixed_radius_expectation_at_scale(self, snr_db):
        measured, analytic = _empirical_fixed_radius_flops(snr_db, 100_000)
        assert measured == pytest.approx(analytic, rel=0.25)
