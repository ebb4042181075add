"""Core data types shared across the package.

Budgets are integer minor currency units (cents) everywhere outside the
regression itself.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence, Union

Money = int
SignedMoney = int
FeatureValue = Union[str, float]

DEFAULT_ALPHA = 0.6


class DataError(ValueError):
    """Input data violates a structural or referential invariant."""


class SubMarket(str, enum.Enum):
    M1 = "M1"
    M2 = "M2"

    @property
    def other(self) -> SubMarket:
        return SubMarket.M2 if self is SubMarket.M1 else SubMarket.M1


class CopyType(str, enum.Enum):
    HIGH = "high"
    LOW = "low"


class InteractionKind(str, enum.Enum):
    IMPRESSION = "impression"
    CLICK = "click"
    CONVERSION = "conversion"


def _freeze(features: Mapping[str, FeatureValue] | None) -> Mapping[str, FeatureValue]:
    return MappingProxyType(dict(sorted((features or {}).items())))


@dataclass(frozen=True)
class Ad:
    ad_id: str
    total_budget: Money
    features: Mapping[str, FeatureValue] = field(default_factory=dict)
    alpha: float | None = None  # per-ad override of the global split factor

    def __post_init__(self):
        if not self.ad_id:
            raise DataError("ad_id must be non-empty")
        if not isinstance(self.total_budget, int) or self.total_budget < 0:
            raise DataError(f"ad {self.ad_id}: budget must be a non-negative integer")
        if self.alpha is not None and not 0.5 <= self.alpha < 1.0:
            raise DataError(f"ad {self.ad_id}: alpha override must lie in [0.5, 1)")
        object.__setattr__(self, "features", _freeze(self.features))


@dataclass(frozen=True)
class AdCopy:
    ad_id: str
    copy_type: CopyType
    submarket: SubMarket
    budget: Money
    parent_total: Money
    rand_b: SignedMoney


@dataclass(frozen=True)
class SplitConfig:
    """Experiment design: split factor, seed and hash namespace.

    ``alpha == 0.5`` is the symmetric budget-split mode; it is legal for
    splitting but carries no budget variation to estimate from.
    """

    alpha: float = DEFAULT_ALPHA
    seed: int = 0
    hash_namespace: str = "abs"

    def __post_init__(self):
        if not 0.5 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0.5, 1), got {self.alpha}")

    @property
    def symmetric(self) -> bool:
        return self.alpha == 0.5

    def stream(self, purpose: str) -> str:
        """Namespace of one hash stream (``user``, ``copy``, ``sidefx``, ...)."""
        return f"{self.hash_namespace}/{purpose}"


@dataclass(frozen=True)
class Interaction:
    user_id: str
    ad_id: str
    kind: InteractionKind
    timestamp: int


@dataclass(frozen=True)
class EstimationRow:
    ad_id: str
    copy_type: CopyType
    submarket: SubMarket
    budget: Money
    rand_b: SignedMoney
    outcome: int
    features: Mapping[str, FeatureValue] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "features", _freeze(self.features))

    @property
    def treatment(self) -> int:
        return int(self.submarket is SubMarket.M2)


@dataclass(frozen=True)
class IncrementalityEstimate:
    rho: float
    se: float
    ci_low: float
    ci_high: float
    confidence_level: float
    n_ads: int
    n_rows: int
    used_fixed_effects: bool
    used_weights: bool
    control_features: tuple[str, ...] = ()
    n_excluded_ads: int = 0
    segment: str | None = None

    @property
    def t_stat(self) -> float:
        return self.rho / self.se if self.se > 0 else float("nan")


@dataclass(frozen=True)
class LiftEstimate:
    rho: float
    mu: float
    delta_rho: float
    se_rho: float
    se_mu: float
    se_delta_rho: float
    ci_rho: tuple[float, float]
    ci_mu: tuple[float, float]
    ci_delta_rho: tuple[float, float]
    confidence_level: float
    n_ads: int
    n_rows: int
    used_fixed_effects: bool
    used_weights: bool
    control_features: tuple[str, ...] = ()
    n_excluded_ads: int = 0
    segment: str | None = None


@dataclass
class CheckResult:
    name: str
    passed: bool
    failures: list[str] = field(default_factory=list)


@dataclass
class ValidationReport:
    checks: dict[str, CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failed(self) -> list[str]:
        return [name for name, c in self.checks.items() if not c.passed]


def _half_up(total: int) -> int:
    return (total + 1) // 2


def validate_dataset(rows: Sequence[EstimationRow | AdCopy]) -> ValidationReport:
    """Check pairing, sum preservation and sub-market distinctness.

    Accepts estimation rows or ad copies. Estimation rows do not carry the
    parent budget, so sum preservation is checked through the stored
    ``rand_b``: both copies must imply the same half-budget, and that
    half-budget must be the rounded half of the copies' sum.
    """
    by_ad: dict[str, list] = defaultdict(list)
    for row in rows:
        by_ad[row.ad_id].append(row)

    pairing = CheckResult("pairing", True)
    sums = CheckResult("sum_preservation", True)
    distinct = CheckResult("submarket_distinct", True)
    ordering = CheckResult("high_ge_low", True)
    outcomes = CheckResult("outcome_nonnegative", True)

    def fail(check: CheckResult, msg: str):
        check.passed = False
        check.failures.append(msg)

    for ad_id in sorted(by_ad):
        copies = by_ad[ad_id]
        types = sorted(c.copy_type.value for c in copies)
        if types != ["high", "low"]:
            fail(pairing, f"{ad_id}: copies {types}")
            continue
        high = next(c for c in copies if c.copy_type is CopyType.HIGH)
        low = next(c for c in copies if c.copy_type is CopyType.LOW)
        if high.submarket is low.submarket:
            fail(distinct, f"{ad_id}: both copies in {high.submarket.value}")
        if high.budget < low.budget:
            fail(ordering, f"{ad_id}: high {high.budget} < low {low.budget}")
        total = high.budget + low.budget
        if isinstance(high, AdCopy):
            parents = {high.parent_total, low.parent_total}
            if parents != {total}:
                fail(sums, f"{ad_id}: copies sum to {total}, parent {sorted(parents)}")
        else:
            implied = {high.budget - high.rand_b, low.budget - low.rand_b}
            if implied != {_half_up(total)}:
                fail(sums, f"{ad_id}: copies sum to {total}, rand_b implies half {sorted(implied)}")
            for c in copies:
                if c.outcome < 0:
                    fail(outcomes, f"{ad_id}/{c.copy_type.value}: outcome {c.outcome}")

    checks = [pairing, sums, distinct, ordering]
    if rows and isinstance(rows[0], EstimationRow):
        checks.append(outcomes)
    return ValidationReport({c.name: c for c in checks})


def group_by_ad(rows: Iterable[EstimationRow]) -> dict[str, dict[CopyType, EstimationRow]]:
    out: dict[str, dict[CopyType, EstimationRow]] = defaultdict(dict)
    for row in rows:
        if row.copy_type in out[row.ad_id]:
            raise DataError(f"{row.ad_id}: duplicate {row.copy_type.value} copy")
        out[row.ad_id][row.copy_type] = row
    return out
