"""Synthetic two-sub-market marketplace with a known response to budget.

Generative model for a population (``q`` and ``e`` are independent standard
normals drawn per ad from the stable hash)::

    log B_i  = mu + sigma * (c * q_i + sqrt(1 - c**2) * e_i)      (LogNormal budgets)
    quality  = exp(tau * q_i - tau**2 / 2)                        (mean one)
    E[Y_ij]  = quality_i * f(B_ij)

``c`` is ``SimConfig.confounding_strength`` and ``tau`` is
``ResponseModel.quality_effect``. The correlation between ``log B`` and
``q`` is exactly ``c``; between ``B`` itself and ``q`` it is
``c * sigma / sqrt(exp(sigma**2) - 1)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from . import hashing
from .domain import (
    Ad,
    AdCopy,
    CopyType,
    DataError,
    Interaction,
    InteractionKind,
    SubMarket,
)

BASE_TIMESTAMP_MS = 1_700_000_000_000
DAY_MS = 86_400_000
COUNTRIES = ("US", "IN", "GB", "BR")
SENIORITY = ("entry", "mid", "senior")


class ResponseForm(str, enum.Enum):
    LINEAR = "linear"
    CONCAVE_POWER = "concave_power"
    SATURATING = "saturating"
    AUCTION_MICRO = "auction_micro"


class Noise(str, enum.Enum):
    NONE = "none"
    POISSON = "poisson"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class ResponseModel:
    """Ground-truth mapping from a copy's budget to its expected outcome count.

    Only the parameters of the selected ``form`` are used: ``base``/``slope``
    for linear, ``scale``/``exponent`` for concave power,
    ``max_level``/``half_saturation`` for saturating, and the auction block
    for the micro simulation.
    """

    form: ResponseForm = ResponseForm.LINEAR
    base: float = 0.0
    slope: float = 0.002
    scale: float = 1.0
    exponent: float = 0.9
    max_level: float = 50.0
    half_saturation: float = 10_000.0
    arrival_rate: float = 20_000.0
    horizon: float = 1.0
    bid_mean: float = 10.0
    bid_sigma: float = 0.5
    ctr: float = 0.05
    cvr: float = 0.2
    pacing: str = "none"
    reserve_price: int = 1
    noise: Noise = Noise.POISSON
    noise_sigma: float = 1.0
    quality_effect: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "form", ResponseForm(self.form))
        object.__setattr__(self, "noise", Noise(self.noise))
        if self.form is ResponseForm.LINEAR and (self.base < 0 or self.slope < 0):
            raise ValueError("linear response needs base >= 0 and slope >= 0")
        if self.form is ResponseForm.CONCAVE_POWER and not (self.scale >= 0 and 0 < self.exponent <= 1):
            raise ValueError("concave power needs scale >= 0 and exponent in (0, 1]")
        if self.form is ResponseForm.SATURATING and not (self.max_level >= 0 and self.half_saturation > 0):
            raise ValueError("saturating response needs max_level >= 0 and half_saturation > 0")
        if self.form is ResponseForm.AUCTION_MICRO:
            if self.arrival_rate <= 0 or self.horizon <= 0 or self.bid_mean <= 0:
                raise ValueError("auction micro needs positive arrival_rate, horizon and bid_mean")
            if not (0 <= self.ctr <= 1 and 0 <= self.cvr <= 1):
                raise ValueError("ctr and cvr must be probabilities")
            if self.pacing not in ("none", "even"):
                raise ValueError(f"unknown pacing rule {self.pacing!r}")
        if self.noise is Noise.GAUSSIAN and self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @classmethod
    def realistic(cls, **overrides) -> ResponseModel:
        """Diminishing-returns preset."""
        params = dict(form=ResponseForm.CONCAVE_POWER, scale=0.0052, exponent=0.9)
        params.update(overrides)
        return cls(**params)

    def expected(self, budget) -> np.ndarray:
        b = np.asarray(budget, dtype=np.float64)
        if self.form is ResponseForm.LINEAR:
            return self.base + self.slope * b
        if self.form is ResponseForm.CONCAVE_POWER:
            return self.scale * np.power(b, self.exponent)
        if self.form is ResponseForm.SATURATING:
            return self.max_level * b / (b + self.half_saturation)
        raise ValueError("auction micro has no closed-form response")

    def quality_multiplier(self, latent_quality) -> np.ndarray:
        tau = self.quality_effect
        return np.exp(tau * np.asarray(latent_quality, dtype=np.float64) - 0.5 * tau * tau)


@dataclass(frozen=True)
class BudgetDistribution:
    kind: str = "lognormal"
    mu: float = math.log(10_000)
    sigma: float = 0.5
    amount: int = 10_000
    values: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("lognormal", "fixed", "empirical"):
            raise ValueError(f"unknown budget distribution {self.kind!r}")
        if self.kind == "lognormal" and self.sigma < 0:
            raise ValueError("lognormal sigma must be non-negative")
        if self.kind == "fixed" and self.amount < 0:
            raise ValueError("fixed budget must be non-negative")
        if self.kind == "empirical" and (not self.values or min(self.values) < 0):
            raise ValueError("empirical budgets must be a non-empty list of non-negative amounts")

    @classmethod
    def lognormal(cls, mu: float, sigma: float) -> BudgetDistribution:
        return cls("lognormal", mu=mu, sigma=sigma)

    @classmethod
    def fixed(cls, amount: int) -> BudgetDistribution:
        return cls("fixed", amount=int(amount))

    @classmethod
    def empirical(cls, source: Sequence[int] | str | Path) -> BudgetDistribution:
        if isinstance(source, (str, Path)):
            from .pipeline import read_ads  # local import: pipeline depends on this module

            source = [ad.total_budget for ad in read_ads(source)]
        return cls("empirical", values=tuple(int(v) for v in source))


@dataclass(frozen=True)
class SimConfig:
    response: ResponseModel = field(default_factory=ResponseModel)
    n_users: int = 10_000
    n_ads: int = 1_000
    budget_distribution: BudgetDistribution = field(default_factory=BudgetDistribution)
    confounding_strength: float = 0.0
    seed: int = 0
    treatment_response: ResponseModel | None = None
    outcome_kind: InteractionKind = InteractionKind.CONVERSION
    with_features: bool = True

    def __post_init__(self):
        if self.n_users < 1 or self.n_ads < 1:
            raise ValueError("n_users and n_ads must be at least 1")
        if not -1.0 <= self.confounding_strength <= 1.0:
            raise ValueError("confounding_strength must lie in [-1, 1]")
        object.__setattr__(self, "outcome_kind", InteractionKind(self.outcome_kind))

    def response_for(self, submarket: SubMarket) -> ResponseModel:
        if submarket is SubMarket.M2 and self.treatment_response is not None:
            return self.treatment_response
        return self.response


@dataclass
class Population:
    """Users and ads of one simulated marketplace.

    ``latent_quality`` is the oracle side channel; it never reaches the ads
    file's features.
    """

    user_ids: list[str]
    ad_ids: list[str]
    budgets: np.ndarray
    latent_quality: np.ndarray
    features: dict[str, list[str]] = field(default_factory=dict)

    @cached_property
    def ad_digests(self) -> np.ndarray:
        return hashing.digests(self.ad_ids)

    @cached_property
    def index(self) -> dict[str, int]:
        return {a: i for i, a in enumerate(self.ad_ids)}

    def ads(self) -> list[Ad]:
        return [
            Ad(ad_id, int(b), {name: vals[i] for name, vals in self.features.items()})
            for i, (ad_id, b) in enumerate(zip(self.ad_ids, self.budgets))
        ]

    def quality_of(self, ad_ids: Sequence[str]) -> np.ndarray:
        try:
            idx = [self.index[a] for a in ad_ids]
        except KeyError as exc:
            raise DataError(f"copy references unknown ad {exc.args[0]!r}") from None
        return self.latent_quality[idx]


@lru_cache(maxsize=8)
def _ids(prefix: str, n: int, width: int) -> tuple[str, ...]:
    return tuple(f"{prefix}{i:0{width}d}" for i in range(n))


@lru_cache(maxsize=8)
def _id_digests(prefix: str, n: int, width: int) -> np.ndarray:
    out = hashing.digests(_ids(prefix, n, width))
    out.flags.writeable = False
    return out


def _normal(ds: np.ndarray, stream: str, seed: int) -> np.ndarray:
    return stats.norm.ppf(hashing.uniform(hashing.keyed(ds, stream, seed)))


def generate_population(config: SimConfig) -> Population:
    width = max(6, len(str(config.n_ads)))
    ad_ids = list(_ids("ad", config.n_ads, width))
    ds = _id_digests("ad", config.n_ads, width)
    seed = config.seed
    q = _normal(ds, "sim/quality", seed)

    dist = config.budget_distribution
    if dist.kind == "lognormal":
        c = config.confounding_strength
        e = _normal(ds, "sim/budget", seed)
        z = c * q + math.sqrt(1.0 - c * c) * e
        budgets = np.floor(np.exp(dist.mu + dist.sigma * z) + 0.5).astype(np.int64)
    elif dist.kind == "fixed":
        budgets = np.full(config.n_ads, dist.amount, dtype=np.int64)
    else:
        pick = hashing.keyed(ds, "sim/budget", seed) % np.uint64(len(dist.values))
        budgets = np.asarray(dist.values, dtype=np.int64)[pick.astype(np.int64)]

    features: dict[str, list[str]] = {}
    if config.with_features:
        for name, levels in (("country", COUNTRIES), ("seniority", SENIORITY)):
            pick = hashing.keyed(ds, f"sim/feat/{name}", seed) % np.uint64(len(levels))
            features[name] = [levels[k] for k in pick.astype(np.int64)]

    uwidth = max(7, len(str(config.n_users)))
    return Population(
        user_ids=list(_ids("u", config.n_users, uwidth)),
        ad_ids=ad_ids,
        budgets=budgets,
        latent_quality=q,
        features=features,
    )


def round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def expected_outcomes(
    budgets: np.ndarray, in_m2: np.ndarray, latent_quality: np.ndarray, config: SimConfig
) -> np.ndarray:
    """Real-valued E[Y] per copy, before noise and rounding."""
    budgets = np.asarray(budgets, dtype=np.float64)
    in_m2 = np.asarray(in_m2, dtype=bool)
    out = np.empty_like(budgets)
    for market, mask in ((SubMarket.M1, ~in_m2), (SubMarket.M2, in_m2)):
        if mask.any():
            response = config.response_for(market)
            out[mask] = response.expected(budgets[mask]) * response.quality_multiplier(latent_quality[mask])
    return out


def draw_counts(means: np.ndarray, uniforms: np.ndarray, response: ResponseModel) -> np.ndarray:
    """Realised counts by inverse-CDF sampling from one uniform per copy.

    One uniform per copy keeps every draw a function of that copy alone.
    """
    means = np.asarray(means, dtype=np.float64)
    if response.noise is Noise.NONE:
        return round_half_up(means).astype(np.int64)
    if response.noise is Noise.POISSON:
        counts = np.zeros(means.shape, dtype=np.int64)
        pos = means > 0
        counts[pos] = stats.poisson.ppf(uniforms[pos], means[pos]).astype(np.int64)
        return counts
    draws = means + response.noise_sigma * stats.norm.ppf(uniforms)
    return np.maximum(round_half_up(draws), 0).astype(np.int64)


def noise_uniforms(ad_digests: np.ndarray, is_high: np.ndarray, seed: int) -> np.ndarray:
    hi = hashing.uniform(hashing.keyed(ad_digests, "sim/noise/high", seed))
    lo = hashing.uniform(hashing.keyed(ad_digests, "sim/noise/low", seed))
    return np.where(is_high, hi, lo)


def simulate_counts(
    ad_digests: np.ndarray,
    budgets: np.ndarray,
    is_high: np.ndarray,
    in_m2: np.ndarray,
    latent_quality: np.ndarray,
    config: SimConfig,
) -> np.ndarray:
    """Outcome count per copy (array form used by the Monte-Carlo loops)."""
    in_m2 = np.asarray(in_m2, dtype=bool)
    means = expected_outcomes(budgets, in_m2, latent_quality, config)
    u = noise_uniforms(ad_digests, is_high, config.seed)
    counts = np.empty(means.shape, dtype=np.int64)
    for market, mask in ((SubMarket.M1, ~in_m2), (SubMarket.M2, in_m2)):
        if mask.any():
            counts[mask] = draw_counts(means[mask], u[mask], config.response_for(market))
    return counts


def _copy_arrays(copies: Sequence[AdCopy]):
    ds = hashing.digests(c.ad_id for c in copies)
    budgets = np.array([c.budget for c in copies], dtype=np.int64)
    is_high = np.array([c.copy_type is CopyType.HIGH for c in copies], dtype=bool)
    in_m2 = np.array([c.submarket is SubMarket.M2 for c in copies], dtype=bool)
    return ds, budgets, is_high, in_m2


def _market_users(submarket_users: Mapping[SubMarket, Sequence[str]]) -> dict[SubMarket, list[str]]:
    return {m: sorted(submarket_users.get(m, ())) for m in SubMarket}


def simulate_outcomes(
    copies: Sequence[AdCopy],
    population: Population,
    config: SimConfig,
    submarket_users: Mapping[SubMarket, Sequence[str]],
) -> list[Interaction]:
    """Interaction log for closed-form response models.

    Each copy's count is drawn from the response model; the interacting users
    are drawn (by hash) from the copy's own sub-market only.
    """
    if any(config.response_for(m).form is ResponseForm.AUCTION_MICRO for m in SubMarket):
        return simulate_market_micro(copies, config, submarket_users, population)
    if not copies:
        return []
    quality = population.quality_of([c.ad_id for c in copies])
    ds, budgets, is_high, in_m2 = _copy_arrays(copies)
    counts = simulate_counts(ds, budgets, is_high, in_m2, quality, config)
    users = _market_users(submarket_users)

    out: list[Interaction] = []
    kind = config.outcome_kind
    for i, copy in enumerate(copies):
        k = int(counts[i])
        if k == 0:
            continue
        pool = users[copy.submarket]
        if not pool:
            raise DataError(f"sub-market {copy.submarket.value} has no users")
        base = hashing.keyed(ds[i : i + 1], f"sim/users/{copy.copy_type.value}", config.seed)
        draws = hashing.indexed(np.repeat(base, k), np.arange(k))
        picks = (draws % np.uint64(len(pool))).astype(np.int64)
        stamps = (hashing.indexed(draws, np.zeros(k)) % np.uint64(DAY_MS)).astype(np.int64)
        out.extend(
            Interaction(pool[p], copy.ad_id, kind, BASE_TIMESTAMP_MS + int(t)) for p, t in zip(picks, stamps)
        )
    return out


def ground_truth(copies: Sequence[AdCopy], population: Population, config: SimConfig) -> list[dict]:
    """Per-ad expected outcomes of both copies and the true finite-difference slope."""
    quality = population.quality_of([c.ad_id for c in copies])
    _, budgets, is_high, in_m2 = _copy_arrays(copies)
    means = expected_outcomes(budgets, in_m2, quality, config)
    by_ad: dict[str, dict] = {}
    for i, copy in enumerate(copies):
        rec = by_ad.setdefault(copy.ad_id, {"ad_id": copy.ad_id, "latent_quality": float(quality[i])})
        rec[f"budget_{copy.copy_type.value}"] = int(budgets[i])
        rec[f"expected_{copy.copy_type.value}"] = float(means[i])
    for rec in by_ad.values():
        diff = rec["budget_high"] - rec["budget_low"]
        rec["true_slope"] = (rec["expected_high"] - rec["expected_low"]) / diff if diff else float("nan")
    return [by_ad[k] for k in sorted(by_ad)]


@dataclass
class MicroResult:
    interactions: list[Interaction]
    spend: dict[tuple[str, CopyType], int]


def simulate_market_micro(
    copies: Sequence[AdCopy],
    config: SimConfig,
    submarket_users: Mapping[SubMarket, Sequence[str]],
    population: Population | None = None,
) -> list[Interaction]:
    """Event-level second-price auction simulation, one independent run per sub-market.

    Users arrive as a Poisson process over ``horizon``. Each arrival starts a
    single-slot auction among copies with budget left; bids are log-normal
    around the ad's value (scaled by latent quality when a population is
    given). The winner pays the larger of the runner-up bid and the reserve,
    rounded up to whole minor units and capped at its remaining budget.
    """
    return run_market_micro(copies, config, submarket_users, population).interactions


def run_market_micro(copies, config, submarket_users, population=None) -> MicroResult:
    """:func:`simulate_market_micro` plus the amount each copy spent."""
    for m in SubMarket:
        if config.response_for(m).form is not ResponseForm.AUCTION_MICRO:
            raise ValueError("simulate_market_micro requires the auction_micro response form")
    users = _market_users(submarket_users)
    out: list[Interaction] = []
    spend: dict[tuple[str, CopyType], int] = {}
    for market in SubMarket:
        in_market = sorted(
            (c for c in copies if c.submarket is market), key=lambda c: (c.ad_id, c.copy_type.value)
        )
        if not in_market:
            continue
        log, spent = _run_auction_market(in_market, market, config, users[market], population)
        out.extend(log)
        spend.update({(c.ad_id, c.copy_type): int(s) for c, s in zip(in_market, spent)})
    out.sort(key=lambda x: (x.timestamp, x.ad_id, x.user_id, x.kind.value))
    return MicroResult(out, spend)


def _run_auction_market(copies, market, config, pool, population):
    rm = config.response_for(market)
    if not pool:
        raise DataError(f"sub-market {market.value} has no users")
    rng = np.random.default_rng(hashing.derive_seed(config.seed, "micro", market.value))
    n = len(copies)
    budget = np.array([c.budget for c in copies], dtype=np.int64)
    remaining = budget.copy()
    values = np.full(n, rm.bid_mean)
    if population is not None:
        values = values * rm.quality_multiplier(population.quality_of([c.ad_id for c in copies]))
    log_values = np.log(values)
    reserve = rm.reserve_price

    n_arrivals = int(rng.poisson(rm.arrival_rate * rm.horizon))
    times = np.sort(rng.uniform(0.0, rm.horizon, n_arrivals))
    arrival_users = rng.integers(0, len(pool), n_arrivals)
    click_acc = np.zeros(n)
    conv_acc = np.zeros(n)
    out: list[Interaction] = []

    def emit(i, u, kind, ts):
        out.append(Interaction(pool[u], copies[i].ad_id, kind, ts))

    chunk = 4096
    for start in range(0, n_arrivals, chunk):
        stop = min(start + chunk, n_arrivals)
        bids_chunk = np.exp(log_values + rm.bid_sigma * rng.standard_normal((stop - start, n)))
        coins = rng.uniform(size=(stop - start, 2))
        for r in range(stop - start):
            a = start + r
            active = remaining >= reserve
            if rm.pacing == "even":
                spent = budget - remaining
                active &= spent <= budget * (times[a] / rm.horizon)
            bids = np.where(active, bids_chunk[r], -1.0)
            bids = np.where(bids >= reserve, bids, -1.0)
            win = int(np.argmax(bids))
            if bids[win] < 0:
                continue
            bids[win] = -1.0
            runner_up = bids.max()
            price = max(math.ceil(runner_up), reserve) if runner_up >= 0 else reserve
            remaining[win] -= min(price, int(remaining[win]))

            ts = BASE_TIMESTAMP_MS + int(times[a] * DAY_MS)
            u = int(arrival_users[a])
            emit(win, u, InteractionKind.IMPRESSION, ts)
            if rm.noise is Noise.NONE:
                before = math.floor(click_acc[win])
                click_acc[win] += rm.ctr
                clicked = math.floor(click_acc[win]) > before
                if clicked:
                    before = math.floor(conv_acc[win])
                    conv_acc[win] += rm.cvr
                    converted = math.floor(conv_acc[win]) > before
                else:
                    converted = False
            else:
                clicked = coins[r, 0] < rm.ctr
                converted = clicked and coins[r, 1] < rm.cvr
            if clicked:
                emit(win, u, InteractionKind.CLICK, ts)
            if converted:
                emit(win, u, InteractionKind.CONVERSION, ts)
    return out, budget - remaining
