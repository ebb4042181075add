import numpy as np
import pytest

from abssplit.assigner import split_ads
from abssplit.diagnostics import (
    balance_test,
    balance_test_arrays,
    detectable_effect,
    power_analysis,
    replicate,
    side_effect_ab,
    welch_test,
)
from abssplit.domain import Ad, AdCopy, CopyType, DataError, SplitConfig, SubMarket
from abssplit.marketsim import ResponseModel, SimConfig, generate_population


@pytest.fixture(scope="module")
def population():
    return generate_population(SimConfig(n_ads=5000, n_users=10, seed=21))


def test_balance_passes_on_random_allocation(population):
    copies = split_ads(population.ads(), SplitConfig(seed=21))
    before = list(copies)
    report = balance_test(copies)
    assert report.passed
    assert report.m1.count == report.m2.count == 5000
    assert report.m1.total + report.m2.total == int(population.budgets.sum())
    assert copies == before


def test_corrupted_allocation_fails(population):
    copies = split_ads(population.ads(), SplitConfig(seed=21))
    forced = [
        AdCopy(c.ad_id, c.copy_type, SubMarket.M1 if c.copy_type is CopyType.HIGH else SubMarket.M2,
               c.budget, c.parent_total, c.rand_b)
        for c in copies
    ]
    report = balance_test(forced)
    assert not report.passed and report.paired_p < 1e-10


def test_symmetric_split_zero_difference(population):
    report = balance_test(split_ads(population.ads(), SplitConfig(alpha=0.5, seed=21)))
    # odd budgets put the extra minor unit on the high copy, so allow for it
    assert abs(report.mean_difference) < 1
    even = [Ad(f"a{i}", 2 * (i + 1) * 100) for i in range(100)]
    exact = balance_test(split_ads(even, SplitConfig(alpha=0.5)))
    assert exact.mean_difference == 0 and exact.variance_ratio == 1 and exact.passed


def test_balance_segments_and_errors(population):
    copies = split_ads(population.ads(), SplitConfig(seed=21))
    segs = {a.ad_id: a.features["country"] for a in population.ads()}
    report = balance_test(copies, segments=segs)
    assert sorted(report.segments) == ["BR", "GB", "IN", "US"]
    with pytest.raises(DataError):
        balance_test([])
    with pytest.raises(DataError):
        balance_test(copies[:3])


def test_balance_arrays_agree(population):
    copies = split_ads(population.ads(), SplitConfig(seed=21))
    hi = np.array([c.budget for c in copies[::2]])
    lo = np.array([c.budget for c in copies[1::2]])
    flip = np.array([c.submarket is SubMarket.M2 for c in copies[::2]])
    assert balance_test_arrays(hi, lo, flip) == balance_test(copies)


def test_welch_against_scipy():
    from scipy import stats

    rng = np.random.default_rng(0)
    a, b = rng.normal(0, 1, 40), rng.normal(0.5, 2, 60)
    t, _, p = welch_test(a, b)
    ref = stats.ttest_ind(a, b, equal_var=False)
    assert t == pytest.approx(ref.statistic) and p == pytest.approx(ref.pvalue)


def test_detectable_effect():
    assert detectable_effect(1.0) == pytest.approx(1.959964 + 0.841621, rel=1e-6)


def test_power_rejects_bad_input():
    with pytest.raises(ValueError):
        power_analysis(SimConfig(n_ads=100), [0.6], 0)
    with pytest.raises(ValueError):
        power_analysis(SimConfig(n_ads=100), [0.5, 0.6], 100)


def test_power_curve_scaling():
    small = power_analysis(SimConfig(n_ads=400, seed=1), [0.6, 0.7], 100)
    big = power_analysis(SimConfig(n_ads=800, seed=1), [0.6], 100)
    s6, s7 = small.points
    assert s7.monte_carlo_se < s6.monte_carlo_se
    assert 0.45 <= s7.monte_carlo_se / s6.monte_carlo_se <= 0.55
    assert big.points[0].mean_clustered_se / s6.mean_clustered_se == pytest.approx(2**-0.5, rel=0.1)
    assert big.points[0].monte_carlo_se / s6.monte_carlo_se == pytest.approx(2**-0.5, rel=0.25)
    assert s6.detectable_effect == pytest.approx(detectable_effect(s6.monte_carlo_se))


def test_replicate_common_random_numbers():
    cfg = SimConfig(n_ads=50, seed=3)
    a, b = replicate(cfg, 0.6, 4), replicate(cfg, 0.7, 4)
    assert a.ad_ids == b.ad_ids
    np.testing.assert_array_equal(a.budget_high + a.budget_low, b.budget_high + b.budget_low)
    np.testing.assert_array_equal(a.high_in_m2, b.high_in_m2)


def test_side_effect_null_and_concave(population):
    lin = side_effect_ab(population, 0.9, SplitConfig(seed=2), SimConfig(seed=2))
    assert lin.n_asymmetric + lin.n_symmetric == 5000
    assert lin.p_value > 0.01
    cc = SimConfig(seed=2, response=ResponseModel(form="concave_power", scale=1.0, exponent=0.5))
    concave = side_effect_ab(population, 0.9, SplitConfig(seed=2), cc)
    assert concave.difference < 0 and concave.p_value < 0.05


def test_side_effect_from_ads_and_errors():
    ads = [Ad(f"a{i}", 10_000) for i in range(200)]
    rep = side_effect_ab(ads, 0.5, SplitConfig(alpha=0.5), SimConfig(response=ResponseModel(noise="none")))
    assert rep.difference == 0 and rep.mean_asymmetric == 20
    with pytest.raises(ValueError):
        side_effect_ab(ads, 0.4, SplitConfig(), SimConfig())
