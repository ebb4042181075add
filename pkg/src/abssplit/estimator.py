"""Weighted least squares for incrementality and lift with ad-clustered inference.

Every model is fitted on ads that have both copies. Inside the regression a
copy's random budget component is the real number
``budget - (budget_high + budget_low) / 2``; the integer ``rand_b`` stored in
files differs from it by at most half a minor unit on odd parent budgets.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg, stats

from .domain import (
    CopyType,
    DataError,
    EstimationRow,
    FeatureValue,
    IncrementalityEstimate,
    LiftEstimate,
    SubMarket,
    group_by_ad,
)

MIN_CLUSTERS = 3
MAX_EXCLUDED_SHARE = 0.5
RANK_TOL = 1e-10


class EstimationError(ValueError):
    """The data cannot support the requested fit."""


class RankDeficientError(EstimationError):
    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        super().__init__(f"rank-deficient design; collinear columns: {', '.join(self.columns)}")


@dataclass(frozen=True)
class RegressionSpec:
    use_fixed_effects: bool = False
    control_features: tuple[str, ...] = ()
    use_weights: bool = True
    confidence_level: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "control_features", tuple(_bare(c) for c in self.control_features))
        if self.use_fixed_effects and self.control_features:
            raise ValueError("fixed effects absorb ad-level controls; use one or the other")
        if not 0 < self.confidence_level < 1:
            raise ValueError("confidence_level must lie in (0, 1)")


def _bare(name: str) -> str:
    for prefix in ("feat_", "num_"):
        if name.startswith(prefix):
            return name[len(prefix) :]
    return name


@dataclass
class DesignMatrix:
    y: np.ndarray
    X: np.ndarray
    w: np.ndarray
    clusters: np.ndarray
    columns: list[str]

    def __post_init__(self):
        n = len(self.y)
        if self.X.shape[0] != n or len(self.w) != n or len(self.clusters) != n:
            raise ValueError("design members disagree on the number of rows")
        if self.X.shape[1] != len(self.columns):
            raise ValueError("column names do not match the regressor matrix")
        if np.any(self.w <= 0) or not np.all(np.isfinite(self.w)):
            raise ValueError("weights must be strictly positive and finite")


class WLSFit(NamedTuple):
    coefficients: np.ndarray
    residuals: np.ndarray
    bread: np.ndarray


@dataclass
class PairedData:
    """One entry per ad: both copies' budgets and outcomes side by side."""

    ad_ids: list[str]
    budget_high: np.ndarray
    budget_low: np.ndarray
    y_high: np.ndarray
    y_low: np.ndarray
    high_in_m2: np.ndarray
    features: dict[str, list[FeatureValue]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ad_ids)

    @classmethod
    def from_rows(cls, rows: Sequence[EstimationRow]) -> PairedData:
        grouped = group_by_ad(rows)
        ad_ids = sorted(grouped)
        highs, lows = [], []
        for ad_id in ad_ids:
            pair = grouped[ad_id]
            if set(pair) != {CopyType.HIGH, CopyType.LOW}:
                raise DataError(f"{ad_id}: estimation needs both copies, found {[c.value for c in pair]}")
            hi, lo = pair[CopyType.HIGH], pair[CopyType.LOW]
            if hi.submarket is lo.submarket:
                raise DataError(f"{ad_id}: both copies in {hi.submarket.value}")
            highs.append(hi)
            lows.append(lo)
        names = sorted({k for r in highs for k in r.features})
        return cls(
            ad_ids=ad_ids,
            budget_high=np.array([r.budget for r in highs], dtype=np.int64),
            budget_low=np.array([r.budget for r in lows], dtype=np.int64),
            y_high=np.array([r.outcome for r in highs], dtype=np.float64),
            y_low=np.array([r.outcome for r in lows], dtype=np.float64),
            high_in_m2=np.array([r.submarket is SubMarket.M2 for r in highs], dtype=bool),
            features={n: [r.features.get(n) for r in highs] for n in names},
        )

    def subset(self, mask: np.ndarray) -> PairedData:
        idx = np.flatnonzero(mask)
        return PairedData(
            ad_ids=[self.ad_ids[i] for i in idx],
            budget_high=self.budget_high[idx],
            budget_low=self.budget_low[idx],
            y_high=self.y_high[idx],
            y_low=self.y_low[idx],
            high_in_m2=self.high_in_m2[idx],
            features={k: [v[i] for i in idx] for k, v in self.features.items()},
        )

    @property
    def budget_diff(self) -> np.ndarray:
        return (self.budget_high - self.budget_low).astype(np.float64)

    @property
    def parent(self) -> np.ndarray:
        return (self.budget_high + self.budget_low).astype(np.float64)


def _as_paired(data) -> PairedData:
    return data if isinstance(data, PairedData) else PairedData.from_rows(list(data))


def wls_fit(design: DesignMatrix) -> WLSFit:
    """Minimise sum w (y - X b)^2 through a pivoted QR of the weighted design."""
    sw = np.sqrt(design.w)
    Xw = design.X * sw[:, None]
    yw = design.y * sw
    k = Xw.shape[1]
    q, r, perm = linalg.qr(Xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > RANK_TOL * diag[0])) if k and diag[0] > 0 else 0
    if rank < k:
        raise RankDeficientError([design.columns[j] for j in perm[rank:]])
    beta_p = linalg.solve_triangular(r, q.T @ yw)
    beta = np.empty(k)
    beta[perm] = beta_p
    r_inv = linalg.solve_triangular(r, np.eye(k))
    bread = np.empty((k, k))
    bread[np.ix_(perm, perm)] = r_inv @ r_inv.T
    residuals = design.y - design.X @ beta
    return WLSFit(beta, residuals, bread)


def cr1_factor(n_clusters: int, n_obs: int, n_params: int) -> float:
    return (n_clusters / (n_clusters - 1)) * ((n_obs - 1) / (n_obs - n_params))


def cluster_robust_covariance(
    design: DesignMatrix, residuals: np.ndarray, bread: np.ndarray, clusters: np.ndarray | None = None
) -> np.ndarray:
    """CR1 sandwich covariance with cluster-summed weighted scores."""
    clusters = design.clusters if clusters is None else np.asarray(clusters)
    codes, inverse = np.unique(clusters, return_inverse=True)
    g = len(codes)
    if g < MIN_CLUSTERS:
        raise EstimationError(f"need at least {MIN_CLUSTERS} clusters, got {g}")
    n, k = design.X.shape
    scores = design.X * (design.w * residuals)[:, None]
    summed = np.zeros((g, k))
    np.add.at(summed, inverse, scores)
    meat = summed.T @ summed
    cov = cr1_factor(g, n, k) * (bread @ meat @ bread)
    return 0.5 * (cov + cov.T)


def expand_controls(data: PairedData, names: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    """Ad-level control columns: numeric as-is, categorical one-hot minus the modal level."""
    cols, col_names = [], []
    for name in names:
        if name not in data.features:
            raise EstimationError(f"unknown control feature {name!r}")
        values = data.features[name]
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
            cols.append(np.asarray(values, dtype=np.float64))
            col_names.append(name)
            continue
        labels = ["" if v is None else str(v) for v in values]
        counts = Counter(labels)
        dropped = min(counts, key=lambda lv: (-counts[lv], lv))
        for level in sorted(counts):
            if level != dropped:
                cols.append(np.array([lv == level for lv in labels], dtype=np.float64))
                col_names.append(f"{name}={level}")
    if not cols:
        return np.empty((len(data), 0)), []
    return np.column_stack(cols), col_names


def _usable(data: PairedData) -> tuple[PairedData, int]:
    keep = data.budget_diff != 0
    excluded = int(len(data) - keep.sum())
    if len(data) == 0 or excluded == len(data):
        raise EstimationError("every ad has zero random budget component (zero budget or alpha = 0.5)")
    if excluded > MAX_EXCLUDED_SHARE * len(data):
        raise EstimationError(f"{excluded} of {len(data)} ads have no budget variation; refusing to estimate")
    kept = data.subset(keep)
    if len(kept) < MIN_CLUSTERS:
        raise EstimationError(f"need at least {MIN_CLUSTERS} ads with budget variation, got {len(kept)}")
    return kept, excluded


def difference_design(data: PairedData, use_weights: bool = True) -> DesignMatrix:
    """Within-ad (high minus low) regression through the origin; one row per ad."""
    db = data.budget_diff
    w = 1.0 / db**2 if use_weights else np.ones_like(db)
    return DesignMatrix(
        y=data.y_high - data.y_low,
        X=db[:, None],
        w=w,
        clusters=np.arange(len(data)),
        columns=["rand_b"],
    )


def pooled_design(data: PairedData, controls: Sequence[str] = (), lift: bool = False, use_weights: bool = True):
    """Copy-level design, rows ordered (ad, high), (ad, low)."""
    n = len(data)
    half = data.parent / 2.0
    y = np.empty(2 * n)
    y[0::2], y[1::2] = data.y_high, data.y_low
    rb = np.empty(2 * n)
    rb[0::2], rb[1::2] = data.budget_high - half, data.budget_low - half
    m = np.empty(2 * n)
    m[0::2], m[1::2] = data.high_in_m2, ~data.high_in_m2
    cols = [np.ones(2 * n)]
    names = ["cons"]
    if lift:
        cols += [m, rb, rb * m]
        names += ["mu", "rho", "delta_rho"]
    else:
        cols.append(rb)
        names.append("rand_b")
    ctrl, ctrl_names = expand_controls(data, controls)
    if ctrl_names:
        cols.append(np.repeat(ctrl, 2, axis=0))
        names += ctrl_names
    return DesignMatrix(
        y=y,
        X=np.column_stack(cols),
        w=1.0 / rb**2 if use_weights else np.ones(2 * n),
        clusters=np.repeat(np.arange(n), 2),
        columns=names,
    )


def _t_crit(level: float, n_clusters: int) -> float:
    return float(stats.t.ppf(0.5 + level / 2.0, n_clusters - 1))


def _fit(design: DesignMatrix):
    fit = wls_fit(design)
    cov = cluster_robust_covariance(design, fit.residuals, fit.bread)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return fit.coefficients, se


def estimate_incrementality(data, spec: RegressionSpec = RegressionSpec()) -> IncrementalityEstimate:
    """Average incrementality: outcome per minor unit of exogenous budget.

    With fixed effects the fit is the within-ad difference regression; with
    the default weights it equals the plain mean of per-ad slopes
    ``(y_high - y_low) / (budget_high - budget_low)``.
    """
    paired, excluded = _usable(_as_paired(data))
    if spec.use_fixed_effects:
        design = difference_design(paired, spec.use_weights)
        j = 0
    else:
        design = pooled_design(paired, spec.control_features, use_weights=spec.use_weights)
        j = 1
    coef, se = _fit(design)
    g = len(paired)
    half = _t_crit(spec.confidence_level, g) * se[j]
    return IncrementalityEstimate(
        rho=float(coef[j]),
        se=float(se[j]),
        ci_low=float(coef[j] - half),
        ci_high=float(coef[j] + half),
        confidence_level=spec.confidence_level,
        n_ads=g,
        n_rows=2 * g,
        used_fixed_effects=spec.use_fixed_effects,
        used_weights=spec.use_weights,
        control_features=spec.control_features,
        n_excluded_ads=excluded,
    )


def estimate_lift(data, spec: RegressionSpec = RegressionSpec()) -> LiftEstimate:
    """Incrementality in M1 (rho), level shift of M2 (mu) and slope change in M2 (delta_rho).

    Ad fixed effects are rejected: within an ad the M2 indicator times the
    random budget is exactly half the random budget, so rho and delta_rho
    are not separately identified.
    """
    if spec.use_fixed_effects:
        raise RankDeficientError(["rho", "delta_rho (collinear within ad under fixed effects)"])
    paired, excluded = _usable(_as_paired(data))
    design = pooled_design(paired, spec.control_features, lift=True, use_weights=spec.use_weights)
    if np.ptp(design.X[:, 1]) == 0:
        raise EstimationError("treatment indicator is constant")
    coef, se = _fit(design)
    g = len(paired)
    t = _t_crit(spec.confidence_level, g)

    def ci(i):
        return (float(coef[i] - t * se[i]), float(coef[i] + t * se[i]))

    return LiftEstimate(
        rho=float(coef[2]),
        mu=float(coef[1]),
        delta_rho=float(coef[3]),
        se_rho=float(se[2]),
        se_mu=float(se[1]),
        se_delta_rho=float(se[3]),
        ci_rho=ci(2),
        ci_mu=ci(1),
        ci_delta_rho=ci(3),
        confidence_level=spec.confidence_level,
        n_ads=g,
        n_rows=2 * g,
        used_fixed_effects=False,
        used_weights=spec.use_weights,
        control_features=spec.control_features,
        n_excluded_ads=excluded,
    )


def per_ad_slopes(data) -> np.ndarray:
    paired = _as_paired(data)
    db = paired.budget_diff
    keep = db != 0
    return (paired.y_high[keep] - paired.y_low[keep]) / db[keep]


def estimate_naive(data, confidence_level: float = 0.95) -> IncrementalityEstimate:
    """Ad-level OLS of total outcome on total budget, ignoring the split.

    This is the observational comparison the randomized split replaces; it
    absorbs any correlation between budgets and unobserved ad quality.
    """
    paired = _as_paired(data)
    n = len(paired)
    design = DesignMatrix(
        y=paired.y_high + paired.y_low,
        X=np.column_stack([np.ones(n), paired.parent]),
        w=np.ones(n),
        clusters=np.arange(n),
        columns=["cons", "budget"],
    )
    coef, se = _fit(design)
    half = _t_crit(confidence_level, n) * se[1]
    return IncrementalityEstimate(
        rho=float(coef[1]),
        se=float(se[1]),
        ci_low=float(coef[1] - half),
        ci_high=float(coef[1] + half),
        confidence_level=confidence_level,
        n_ads=n,
        n_rows=n,
        used_fixed_effects=False,
        used_weights=False,
    )


def segment_values(data: PairedData, feature: str) -> list[str]:
    feature = _bare(feature)
    if feature not in data.features:
        raise EstimationError(f"unknown segment feature {feature!r}")
    return sorted({str(v) for v in data.features[feature]})


def estimate_by_segment(data, spec: RegressionSpec, feature: str, lift: bool = False) -> list:
    """Separate fits per level of one ad feature."""
    paired = _as_paired(data)
    name = _bare(feature)
    results = []
    for level in segment_values(paired, name):
        part = paired.subset(np.array([str(v) == level for v in paired.features[name]]))
        fit = estimate_lift(part, spec) if lift else estimate_incrementality(part, spec)
        results.append(replace(fit, segment=f"{name}={level}"))
    return results


@dataclass(frozen=True)
class Baseline:
    budget: int
    outcome: float


@dataclass(frozen=True)
class ForecastPoint:
    budget: int
    expected: float
    ci_low: float
    ci_high: float


def forecast_performance(
    estimate: IncrementalityEstimate, baseline, budget_levels: Sequence[int]
) -> list[ForecastPoint]:
    """Linear extrapolation from an observed copy.

    The interval reflects uncertainty in the slope only; the baseline level
    is taken as known.
    """
    if any(b < 0 for b in budget_levels):
        raise ValueError("budget levels must be non-negative")
    t = _t_crit(estimate.confidence_level, estimate.n_ads) if estimate.n_ads > 1 else math.inf
    ref_b, ref_y = baseline.budget, float(baseline.outcome)
    out = []
    for b in budget_levels:
        step = b - ref_b
        y = ref_y + estimate.rho * step
        half = t * estimate.se * abs(step) if step else 0.0
        out.append(ForecastPoint(int(b), y, y - half, y + half))
    return out
