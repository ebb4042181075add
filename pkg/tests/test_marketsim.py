import numpy as np
import pytest
from scipy import stats

from abssplit.assigner import split_ads
from abssplit.domain import Ad, AdCopy, CopyType, DataError, InteractionKind, SplitConfig, SubMarket
from abssplit.marketsim import (
    BudgetDistribution,
    Noise,
    Population,
    ResponseForm,
    ResponseModel,
    SimConfig,
    expected_outcomes,
    generate_population,
    ground_truth,
    run_market_micro,
    simulate_outcomes,
)

USERS = {SubMarket.M1: ["u1", "u2", "u3"], SubMarket.M2: ["u4", "u5"]}


def copy(ad_id, budget, market, kind=CopyType.HIGH):
    return AdCopy(ad_id, kind, market, budget, budget, 0)


def population_for(copies, quality=0.0):
    ids = sorted({c.ad_id for c in copies})
    return Population([], ids, np.zeros(len(ids), dtype=np.int64), np.full(len(ids), quality))


def count(interactions, ad_id=None):
    return sum(1 for x in interactions if ad_id is None or x.ad_id == ad_id)


def test_linear_noiseless_exact():
    c = [copy("a", 6000, SubMarket.M1)]
    cfg = SimConfig(response=ResponseModel(slope=0.002, noise="none"))
    out = simulate_outcomes(c, population_for(c), cfg, USERS)
    assert len(out) == 12
    assert {x.user_id for x in out} <= set(USERS[SubMarket.M1])
    assert all(x.kind is InteractionKind.CONVERSION for x in out)


def test_concave_power_documented_rounding():
    c = [copy("a", 4000, SubMarket.M1), copy("b", 6000, SubMarket.M2)]
    cfg = SimConfig(response=ResponseModel(form="concave_power", scale=1.0, exponent=0.5, noise="none"))
    out = simulate_outcomes(c, population_for(c), cfg, USERS)
    assert (count(out, "a"), count(out, "b")) == (63, 77)


@pytest.mark.parametrize(
    "model",
    [
        ResponseModel(slope=0.002),
        ResponseModel(form="concave_power", scale=2.0, exponent=0.5),
        ResponseModel(form="saturating", max_level=40, half_saturation=5000),
    ],
)
def test_zero_budget_and_monotone(model):
    grid = np.arange(0, 50_001, 500)
    e = model.expected(grid)
    assert e[0] == 0
    assert np.all(np.diff(e) >= 0)


def test_unknown_ad_rejected():
    c = [copy("a", 100, SubMarket.M1)]
    with pytest.raises(DataError):
        simulate_outcomes(c, population_for([copy("b", 1, SubMarket.M1)]), SimConfig(), USERS)


def test_unknown_response_rejected():
    with pytest.raises(ValueError):
        ResponseModel(form="cubic")
    with pytest.raises(ValueError):
        ResponseModel(form="concave_power", exponent=1.5)


def test_population_defaults_and_correlation():
    pop = generate_population(SimConfig(n_ads=100_000, n_users=10, seed=1))
    assert abs(np.corrcoef(pop.budgets, pop.latent_quality)[0, 1]) < 0.01
    conf = generate_population(SimConfig(n_ads=100_000, n_users=10, seed=1, confounding_strength=0.8))
    assert 0.7 <= np.corrcoef(conf.budgets, conf.latent_quality)[0, 1] <= 0.9
    # the documented formula: corr(log B, q) = c
    assert abs(np.corrcoef(np.log(conf.budgets), conf.latent_quality)[0, 1] - 0.8) < 0.01
    fixed = generate_population(SimConfig(n_ads=50, budget_distribution=BudgetDistribution.fixed(10_000)))
    assert set(fixed.budgets.tolist()) == {10_000}
    assert "latent_quality" not in fixed.ads()[0].features


def test_quality_multiplier_has_unit_mean():
    q = stats.norm.ppf((np.arange(100_000) + 0.5) / 100_000)
    assert abs(ResponseModel(quality_effect=0.5).quality_multiplier(q).mean() - 1) < 1e-3


def test_poisson_counts_match_mean():
    pop = generate_population(SimConfig(n_ads=20_000, n_users=100, seed=3))
    copies = split_ads(pop.ads(), SplitConfig(seed=3))
    cfg = SimConfig(seed=3)
    users = {SubMarket.M1: ["a"], SubMarket.M2: ["b"]}
    n = len(simulate_outcomes(copies, pop, cfg, users))
    truth = ground_truth(copies, pop, cfg)
    mean = sum(r["expected_high"] + r["expected_low"] for r in truth)
    assert abs(n - mean) < 4 * np.sqrt(mean)
    assert all(abs(r["true_slope"] - 0.002) < 1e-12 for r in truth if r["budget_high"] != r["budget_low"])


def test_submarket_isolation_and_determinism():
    pop = generate_population(SimConfig(n_ads=300, n_users=100, seed=9))
    copies = split_ads(pop.ads(), SplitConfig(seed=9))
    users = {m: [f"{m.value}-{i}" for i in range(50)] for m in SubMarket}
    cfg = SimConfig(seed=9)
    full = simulate_outcomes(copies, pop, cfg, users)
    assert full == simulate_outcomes(copies, pop, cfg, users)
    only_m1 = simulate_outcomes([c for c in copies if c.submarket is SubMarket.M1], pop, cfg, users)
    in_m1 = [x for x in full if x.user_id.startswith("M1")]
    assert only_m1 == in_m1


def test_gaussian_noise_floored():
    c = [copy(f"a{i}", 100, SubMarket.M1) for i in range(200)]
    cfg = SimConfig(response=ResponseModel(slope=0.001, noise="gaussian", noise_sigma=3.0), seed=1)
    out = simulate_outcomes(c, population_for(c), cfg, USERS)
    assert len(out) >= 0
    counts = [count(out, f"a{i}") for i in range(200)]
    assert min(counts) == 0 and max(counts) > 0


def test_treatment_response_per_market():
    c = [copy("a", 10_000, SubMarket.M1), copy("b", 10_000, SubMarket.M2)]
    cfg = SimConfig(response=ResponseModel(slope=0.002, noise="none"),
                    treatment_response=ResponseModel(slope=0.003, noise="none"))
    e = expected_outcomes(np.array([10_000, 10_000]), np.array([False, True]), np.zeros(2), cfg)
    assert e.tolist() == [20.0, 30.0]


# auction micro mode -------------------------------------------------------

MICRO = dict(form="auction_micro", arrival_rate=2000, noise="none")


def micro_config(seed=0, **kw):
    return SimConfig(response=ResponseModel(**{**MICRO, **kw}), seed=seed, outcome_kind="conversion")


def test_single_ad_pays_reserve():
    c = [copy("solo", 500, SubMarket.M1)]
    res = run_market_micro(c, micro_config(), USERS)
    imps = [x for x in res.interactions if x.kind is InteractionKind.IMPRESSION]
    assert len(imps) == 500
    assert res.spend[("solo", CopyType.HIGH)] == 500


def test_budget_feasibility_and_isolation():
    c = [copy(f"ad{i}", 300 * (i + 1), m, k) for i in range(6)
         for m, k in ((SubMarket.M1, CopyType.HIGH), (SubMarket.M2, CopyType.LOW))]
    cfg = micro_config(seed=4, noise="poisson")
    res = run_market_micro(c, cfg, USERS)
    assert all(res.spend[(x.ad_id, x.copy_type)] <= x.budget for x in c)
    m1_only = run_market_micro([x for x in c if x.submarket is SubMarket.M1], cfg, USERS)
    assert m1_only.interactions == [x for x in res.interactions if x.user_id in USERS[SubMarket.M1]]
    assert res.interactions == run_market_micro(c, cfg, USERS).interactions


def test_micro_conversions_monotone_in_budget():
    # one ad split across the two sub-markets, total budget on a grid
    totals = []
    for b in range(2000, 20_001, 2000):
        c = split_ads([Ad("x", b)], SplitConfig(seed=1))
        out = run_market_micro(c, micro_config(seed=1, arrival_rate=5000), USERS).interactions
        totals.append(sum(1 for i in out if i.kind is InteractionKind.CONVERSION))
    assert all(a <= b for a, b in zip(totals, totals[1:]))
    assert totals[-1] > totals[0]


def test_identical_ads_symmetric():
    conv = {"p": 0, "q": 0}
    for seed in range(50):
        # budgets never bind, so every arrival is won by one of the two
        c = [copy("p", 10**6, SubMarket.M1), copy("q", 10**6, SubMarket.M1, CopyType.LOW)]
        for x in run_market_micro(c, micro_config(seed=seed, arrival_rate=5000), USERS).interactions:
            if x.kind is InteractionKind.CONVERSION:
                conv[x.ad_id] += 1
    assert abs(conv["p"] - conv["q"]) <= 0.02 * max(conv.values())


def test_micro_via_simulate_outcomes_and_pacing():
    c = [copy("a", 1000, SubMarket.M1), copy("b", 1000, SubMarket.M2, CopyType.LOW)]
    cfg = micro_config(pacing="even")
    out = simulate_outcomes(c, population_for(c), cfg, USERS)
    assert out == run_market_micro(c, cfg, USERS, population_for(c)).interactions
    imps = [x.timestamp for x in out if x.kind is InteractionKind.IMPRESSION]
    assert imps == sorted(imps)
    with pytest.raises(ValueError):
        run_market_micro(c, SimConfig(), USERS)
