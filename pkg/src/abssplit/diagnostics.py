"""Operational checks: sub-market balance, power over alpha, and the side-effect A/B test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from . import hashing
from .assigner import high_in_m2, split_budgets
from .domain import Ad, AdCopy, DataError, SplitConfig, SubMarket
from .estimator import PairedData, RegressionSpec, estimate_incrementality
from .marketsim import Population, SimConfig, expected_outcomes, generate_population, simulate_counts

DEFAULT_POWER = 0.8
DEFAULT_SIZE = 0.05


# Monte-Carlo building blocks ------------------------------------------------


def replicate_seeds(seed: int, rep: int) -> tuple[int, int]:
    """(simulation seed, split seed) for replication ``rep``; independent of alpha."""
    return hashing.derive_seed(seed, "rep", rep), hashing.derive_seed(seed, "split", rep)


def simulate_paired(
    sim_config: SimConfig,
    split_config: SplitConfig,
    population: Population | None = None,
    expected: bool = False,
) -> PairedData:
    """Split, allocate and simulate one marketplace straight into paired arrays.

    ``expected=True`` returns the noiseless real-valued means instead of counts.
    """
    pop = population if population is not None else generate_population(sim_config)
    ds = pop.ad_digests
    high, low = split_budgets(pop.budgets, split_config.alpha)
    flip = high_in_m2(ds, split_config)
    q = pop.latent_quality
    if expected:
        y_high = expected_outcomes(high, flip, q, sim_config)
        y_low = expected_outcomes(low, ~flip, q, sim_config)
    else:
        ones = np.ones(len(ds), dtype=bool)
        y_high = simulate_counts(ds, high, ones, flip, q, sim_config).astype(np.float64)
        y_low = simulate_counts(ds, low, ~ones, ~flip, q, sim_config).astype(np.float64)
    return PairedData(
        ad_ids=pop.ad_ids,
        budget_high=high,
        budget_low=low,
        y_high=y_high,
        y_low=y_low,
        high_in_m2=flip,
        features=dict(pop.features),
    )


def replicate(sim_config: SimConfig, alpha: float, rep: int, seed: int | None = None, **kwargs) -> PairedData:
    """Replication ``rep`` of a design; the same ``rep`` reuses the same randomness at every alpha."""
    sim_seed, split_seed = replicate_seeds(sim_config.seed if seed is None else seed, rep)
    return simulate_paired(
        replace(sim_config, seed=sim_seed), SplitConfig(alpha=alpha, seed=split_seed), **kwargs
    )


# balance -------------------------------------------------------------------


@dataclass
class MarketMoments:
    count: int
    total: int
    mean: float
    variance: float


@dataclass
class BalanceReport:
    """Budget moments per sub-market and the tests comparing them.

    Every ad has exactly one copy in each sub-market, so the decision uses
    paired tests, each at half the significance:

    * means: one-sample t-test on the per-ad difference ``d = x_M1 - x_M2``;
    * variances: ``var(M1) - var(M2)`` equals the sample covariance of ``d``
      and the per-ad sum ``s``, so a one-sample t-test on
      ``(d - mean d) * (s - mean s)`` tests equal variances. Unlike the
      correlation form of the Pitman-Morgan test it stays calibrated for
      heavy-tailed budgets.

    The independent-sample Welch and F statistics are reported for
    reference only; they ignore the pairing.
    """

    m1: MarketMoments
    m2: MarketMoments
    mean_difference: float
    variance_ratio: float
    paired_t: float
    paired_p: float
    variance_t: float
    variance_p: float
    welch_t: float
    welch_p: float
    f_stat: float
    f_p: float
    significance: float
    passed: bool
    segments: dict[str, BalanceReport] = field(default_factory=dict)


def _moments(x: np.ndarray) -> MarketMoments:
    n = len(x)
    return MarketMoments(
        count=n,
        total=int(x.sum()),
        mean=float(x.mean()) if n else math.nan,
        variance=float(x.var(ddof=1)) if n > 1 else math.nan,
    )


def _t_p(t: float, df: float) -> float:
    if math.isnan(t):
        return 1.0
    return float(2.0 * stats.t.sf(abs(t), df))


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return 0.0 if num == 0 else math.copysign(math.inf, num)
    return num / den


def welch_test(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    """Welch's unequal-variance t-test: (t, df, two-sided p)."""
    na, nb = len(a), len(b)
    va, vb = a.var(ddof=1) / na, b.var(ddof=1) / nb
    diff = a.mean() - b.mean()
    t = _ratio(diff, math.sqrt(va + vb))
    if va + vb > 0:
        df = (va + vb) ** 2 / (va**2 / (na - 1) + vb**2 / (nb - 1))
    else:
        df = na + nb - 2
    return t, df, _t_p(t, df)


def _balance_pairs(x1: np.ndarray, x2: np.ndarray, significance: float) -> BalanceReport:
    n = len(x1)
    if n < 3:
        raise DataError("balance test needs at least 3 ads")
    x1 = x1.astype(np.float64)
    x2 = x2.astype(np.float64)
    m1, m2 = _moments(x1), _moments(x2)
    d = x1 - x2
    s = x1 + x2

    paired_t = _ratio(d.mean(), d.std(ddof=1) / math.sqrt(n))
    paired_p = _t_p(paired_t, n - 1)

    g = (d - d.mean()) * (s - s.mean())
    variance_t = _ratio(g.mean(), g.std(ddof=1) / math.sqrt(n))
    variance_p = _t_p(variance_t, n - 1)

    welch_t, _, welch_p = welch_test(x1, x2)
    f_stat = _ratio(m1.variance, m2.variance)
    if math.isfinite(f_stat) and f_stat > 0:
        f_p = float(min(1.0, 2 * min(stats.f.cdf(f_stat, n - 1, n - 1), stats.f.sf(f_stat, n - 1, n - 1))))
    else:
        f_p = 1.0 if f_stat == 0 and m1.variance == 0 else 0.0

    half = significance / 2.0
    return BalanceReport(
        m1=m1,
        m2=m2,
        mean_difference=m1.mean - m2.mean,
        variance_ratio=f_stat,
        paired_t=paired_t,
        paired_p=paired_p,
        variance_t=variance_t,
        variance_p=variance_p,
        welch_t=welch_t,
        welch_p=welch_p,
        f_stat=f_stat,
        f_p=f_p,
        significance=significance,
        passed=paired_p > half and variance_p > half,
    )


def _pairs_from_copies(copies: Sequence[AdCopy]) -> tuple[list[str], np.ndarray, np.ndarray]:
    by_ad: dict[str, dict[SubMarket, int]] = {}
    for c in copies:
        slot = by_ad.setdefault(c.ad_id, {})
        if c.submarket in slot:
            raise DataError(f"{c.ad_id}: two copies in {c.submarket.value}")
        slot[c.submarket] = c.budget
    ad_ids = sorted(by_ad)
    for a in ad_ids:
        if len(by_ad[a]) != 2:
            raise DataError(f"{a}: incomplete copy set")
    x1 = np.array([by_ad[a][SubMarket.M1] for a in ad_ids], dtype=np.int64)
    x2 = np.array([by_ad[a][SubMarket.M2] for a in ad_ids], dtype=np.int64)
    return ad_ids, x1, x2


def balance_test(
    copies: Sequence[AdCopy],
    significance: float = DEFAULT_SIZE,
    segments: Mapping[str, str] | None = None,
) -> BalanceReport:
    """Compare budget distributions of the two sub-markets; never mutates ``copies``.

    ``segments`` maps ad_id to a segment label for per-segment breakdowns.
    """
    if not copies:
        raise DataError("balance test needs a non-empty copy set")
    ad_ids, x1, x2 = _pairs_from_copies(copies)
    report = _balance_pairs(x1, x2, significance)
    if segments:
        labels = np.array([segments.get(a, "") for a in ad_ids])
        for level in sorted(set(labels)):
            mask = labels == level
            if mask.sum() >= 3:
                report.segments[level] = _balance_pairs(x1[mask], x2[mask], significance)
    return report


def balance_test_arrays(
    budget_high: np.ndarray, budget_low: np.ndarray, high_in_m2: np.ndarray, significance: float = DEFAULT_SIZE
) -> BalanceReport:
    """:func:`balance_test` on paired arrays instead of copy records."""
    x1 = np.where(high_in_m2, budget_low, budget_high)
    x2 = np.where(high_in_m2, budget_high, budget_low)
    return _balance_pairs(x1, x2, significance)


# power ---------------------------------------------------------------------


@dataclass
class PowerPoint:
    alpha: float
    monte_carlo_se: float
    mean_clustered_se: float
    mean_rho: float
    detectable_effect: float
    replications: int


@dataclass
class PowerCurve:
    points: list[PowerPoint]
    power: float = DEFAULT_POWER
    size: float = DEFAULT_SIZE


def detectable_effect(se: float, power: float = DEFAULT_POWER, size: float = DEFAULT_SIZE) -> float:
    """Smallest true effect rejected with probability ``power`` by a two-sided test of ``size``."""
    return float((stats.norm.ppf(1 - size / 2) + stats.norm.ppf(power)) * se)


def power_analysis(
    sim_config: SimConfig,
    alphas: Sequence[float],
    replications: int,
    spec: RegressionSpec = RegressionSpec(use_fixed_effects=True),
    power: float = DEFAULT_POWER,
    size: float = DEFAULT_SIZE,
) -> PowerCurve:
    """Monte-Carlo standard error of the incrementality estimate for each alpha.

    Replication ``r`` uses the same population, allocation and noise draws
    at every alpha, so differences across the grid reflect alpha alone.
    """
    if replications < 50:
        raise ValueError("power analysis needs at least 50 replications")
    for a in alphas:
        if not 0.5 < a < 1:
            raise ValueError(f"alpha grid values must lie in (0.5, 1), got {a}")
    points = []
    for a in alphas:
        rhos, ses = [], []
        for r in range(replications):
            est = estimate_incrementality(replicate(sim_config, a, r), spec)
            rhos.append(est.rho)
            ses.append(est.se)
        mc_se = float(np.std(rhos, ddof=1))
        points.append(
            PowerPoint(
                alpha=a,
                monte_carlo_se=mc_se,
                mean_clustered_se=float(np.mean(ses)),
                mean_rho=float(np.mean(rhos)),
                detectable_effect=detectable_effect(mc_se, power, size),
                replications=replications,
            )
        )
    return PowerCurve(points, power, size)


# side effects --------------------------------------------------------------


@dataclass
class SideEffectReport:
    alpha1: float
    alpha0: float
    n_asymmetric: int
    n_symmetric: int
    mean_asymmetric: float
    mean_symmetric: float
    difference: float
    se: float
    t_stat: float
    p_value: float


def side_effect_ab(
    ads: Sequence[Ad] | Population,
    alpha1: float,
    config: SplitConfig,
    sim_config: SimConfig,
    latent_quality: Mapping[str, float] | None = None,
) -> SideEffectReport:
    """Ad-level A/B test of total performance under asymmetric vs symmetric splits.

    Each ad is hashed into the asymmetric arm (split at ``alpha1``) or the
    symmetric arm (split at 0.5) on the side-effect stream, then simulated;
    per-ad totals over both copies are compared with Welch's test.
    """
    if not 0.5 <= alpha1 < 1:
        raise ValueError("alpha1 must lie in [0.5, 1)")
    if isinstance(ads, Population):
        pop = ads
    else:
        ads = sorted(ads, key=lambda a: a.ad_id)
        lq = latent_quality or {}
        pop = Population(
            user_ids=[],
            ad_ids=[a.ad_id for a in ads],
            budgets=np.array([a.total_budget for a in ads], dtype=np.int64),
            latent_quality=np.array([lq.get(a.ad_id, 0.0) for a in ads]),
        )
    ds = pop.ad_digests
    arm_a = hashing.coin(hashing.keyed(ds, config.stream("sidefx"), config.seed))
    hi_a, lo_a = split_budgets(pop.budgets, alpha1)
    hi_b, lo_b = split_budgets(pop.budgets, 0.5)
    high = np.where(arm_a, hi_a, hi_b)
    low = np.where(arm_a, lo_a, lo_b)
    flip = high_in_m2(ds, config)
    ones = np.ones(len(ds), dtype=bool)
    q = pop.latent_quality
    total = (
        simulate_counts(ds, high, ones, flip, q, sim_config) + simulate_counts(ds, low, ~ones, ~flip, q, sim_config)
    ).astype(np.float64)
    a, b = total[arm_a], total[~arm_a]
    if len(a) < 2 or len(b) < 2:
        raise DataError("each arm needs at least two ads")
    t, _, p = welch_test(a, b)
    diff = float(a.mean() - b.mean())
    return SideEffectReport(
        alpha1=alpha1,
        alpha0=0.5,
        n_asymmetric=len(a),
        n_symmetric=len(b),
        mean_asymmetric=float(a.mean()),
        mean_symmetric=float(b.mean()),
        difference=diff,
        se=float(math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))),
        t_stat=float(t),
        p_value=float(p),
    )
