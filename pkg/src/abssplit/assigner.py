"""User partitioning, asymmetric budget splitting and copy allocation."""

from __future__ import annotations

import enum
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import hashing
from .domain import Ad, AdCopy, CopyType, DataError, SplitConfig, SubMarket


class AllocationLabel(str, enum.Enum):
    """I puts the high copy in M1; II puts it in M2."""

    ALLOCATION_I = "I"
    ALLOCATION_II = "II"

    @property
    def high_submarket(self) -> SubMarket:
        return SubMarket.M1 if self is AllocationLabel.ALLOCATION_I else SubMarket.M2


def _check_id(value: str, what: str) -> None:
    if not value:
        raise ValueError(f"{what} must be non-empty")


def user_submarkets(user_ids: Sequence[str], config: SplitConfig) -> np.ndarray:
    """Boolean array, True where the user belongs to M2."""
    return hashing.coin(hashing.keyed(hashing.digests(user_ids), config.stream("user"), config.seed))


def assign_user(user_id: str, config: SplitConfig) -> SubMarket:
    _check_id(user_id, "user_id")
    in_m2 = user_submarkets([user_id], config)[0]
    return SubMarket.M2 if in_m2 else SubMarket.M1


def high_in_m2(ad_digests: np.ndarray, config: SplitConfig) -> np.ndarray:
    """Allocation II indicator for pre-digested ad ids."""
    return hashing.coin(hashing.keyed(ad_digests, config.stream("copy"), config.seed))


def allocate_copies(ad_id: str, config: SplitConfig) -> AllocationLabel:
    _check_id(ad_id, "ad_id")
    if high_in_m2(hashing.digests([ad_id]), config)[0]:
        return AllocationLabel.ALLOCATION_II
    return AllocationLabel.ALLOCATION_I


def _alpha_fraction(alpha: float) -> Fraction:
    if not 0.5 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0.5, 1), got {alpha}")
    # The shortest decimal repr is the value the user wrote (0.7, not 0.69999...).
    return Fraction(repr(float(alpha)))


def split_budget(total: int, alpha: float) -> tuple[int, int]:
    """Split ``total`` minor units into (high, low) with high = round-half-up(alpha * total)."""
    if total < 0:
        raise ValueError("total budget must be non-negative")
    frac = _alpha_fraction(alpha)
    high = (2 * frac.numerator * total + frac.denominator) // (2 * frac.denominator)
    return high, total - high


def split_budgets(totals: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`split_budget`; exact for totals below 2**53."""
    totals = np.asarray(totals, dtype=np.int64)
    if totals.size and totals.min() < 0:
        raise ValueError("total budget must be non-negative")
    frac = _alpha_fraction(alpha)
    num, den = frac.numerator, frac.denominator
    if totals.size and 2 * num * int(totals.max()) + den < 2**62:
        high = (2 * num * totals + den) // (2 * den)
    else:
        high = np.array([(2 * num * int(t) + den) // (2 * den) for t in totals], dtype=np.int64)
    return high, totals - high


def rand_b(budget: int | np.ndarray, parent_total: int | np.ndarray):
    """Integer deviation from an even split: budget - round-half-up(total / 2)."""
    return budget - (parent_total + 1) // 2


def split_ads(ads: Sequence[Ad], config: SplitConfig) -> list[AdCopy]:
    """Create the high and low copy of every ad, sorted by (ad_id, copy type)."""
    seen: set[str] = set()
    for ad in ads:
        if ad.ad_id in seen:
            raise DataError(f"duplicate ad_id {ad.ad_id!r}")
        seen.add(ad.ad_id)

    ordered = sorted(ads, key=lambda a: a.ad_id)
    flips = high_in_m2(hashing.digests(a.ad_id for a in ordered), config)
    copies: list[AdCopy] = []
    for ad, flip in zip(ordered, flips):
        high, low = split_budget(ad.total_budget, ad.alpha if ad.alpha is not None else config.alpha)
        high_market = SubMarket.M2 if flip else SubMarket.M1
        for copy_type, budget, market in (
            (CopyType.HIGH, high, high_market),
            (CopyType.LOW, low, high_market.other),
        ):
            copies.append(
                AdCopy(
                    ad_id=ad.ad_id,
                    copy_type=copy_type,
                    submarket=market,
                    budget=budget,
                    parent_total=ad.total_budget,
                    rand_b=rand_b(budget, ad.total_budget),
                )
            )
    return copies
