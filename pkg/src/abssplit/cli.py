"""Command-line front end.

Exit codes: 0 success, 1 data or statistical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, pipeline
from .assigner import split_ads, user_submarkets
from .diagnostics import balance_test, power_analysis, side_effect_ab
from .domain import DEFAULT_ALPHA, DataError, InteractionKind, SplitConfig, SubMarket
from .estimator import (
    Baseline,
    EstimationError,
    RegressionSpec,
    estimate_by_segment,
    estimate_incrementality,
    estimate_lift,
    forecast_performance,
)
from .marketsim import (
    BudgetDistribution,
    Noise,
    Population,
    ResponseForm,
    ResponseModel,
    SimConfig,
    generate_population,
    ground_truth,
    simulate_outcomes,
)

log = logging.getLogger("abssplit")

ENV_SEED = "ABSSPLIT_SEED"
ENV_OUT = "ABSSPLIT_OUT"

FORMATS_HELP = f"""file formats (version {pipeline.FORMAT_VERSION}):
  users.csv            user_id
  ads.csv              ad_id,budget_minor[,alpha][,feat_<name>...][,num_<name>...]
  interactions.jsonl   {{"user_id":..,"ad_id":..,"kind":"impression|click|conversion","ts":<epoch ms>}}
  user_assignment.csv  user_id,submarket
  ads_assignment.csv   ad_id,copy,submarket,budget_minor,parent_budget_minor,rand_b_minor
  estimation.csv       ad_id,copy,submarket,budget_minor,rand_b_minor,outcome,treatment,feat_...
  results.jsonl        one fitted model per line
budgets are integer minor currency units; feat_ columns are categorical, num_ numeric.
environment: {ENV_SEED} overrides the default seed, {ENV_OUT} the default output directory."""


class UsageError(Exception):
    pass


def _alpha(text: str) -> float:
    value = float(text)
    if not 0.5 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in [0.5, 1), got {text}")
    return value


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _default_seed() -> int:
    return int(os.environ.get(ENV_SEED, "42"))


def _default_out() -> Path:
    return Path(os.environ.get(ENV_OUT, "."))


def _budget_dist(text: str) -> BudgetDistribution:
    kind, _, params = text.partition(":")
    try:
        if kind == "lognormal":
            mu, sigma = (float(p) for p in params.split(","))
            return BudgetDistribution.lognormal(mu, sigma)
        if kind == "fixed":
            return BudgetDistribution.fixed(int(params))
        if kind == "empirical":
            return BudgetDistribution.empirical(params)
    except (ValueError, OSError) as exc:
        raise argparse.ArgumentTypeError(f"bad budget distribution {text!r}: {exc}") from None
    raise argparse.ArgumentTypeError(f"unknown budget distribution {text!r}")


def _require(*paths: Path | None) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise UsageError(f"input file not found: {p}")


# argument groups ---------------------------------------------------------


def _add_response(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("response model")
    g.add_argument("--response", choices=[f.value for f in ResponseForm], default="linear")
    g.add_argument("--base", type=float, default=0.0, help="linear intercept a")
    g.add_argument("--slope", type=float, default=0.002, help="linear slope beta, outcomes per minor unit")
    g.add_argument("--scale", type=float, default=1.0, help="concave power theta")
    g.add_argument("--exponent", type=float, default=0.9, help="concave power gamma in (0, 1]")
    g.add_argument("--max-level", type=float, default=50.0, help="saturating maximum")
    g.add_argument("--half-saturation", type=float, default=10_000.0, help="saturating half-saturation budget")
    g.add_argument("--noise", choices=[n.value for n in Noise], default="poisson")
    g.add_argument("--noise-sigma", type=float, default=1.0)
    g.add_argument("--quality-effect", type=float, default=0.0, help="tau: latent quality effect on outcomes")
    g.add_argument("--treatment-slope", type=float, default=None, help="linear slope in M2 (lift scenarios)")
    g.add_argument("--arrival-rate", type=float, default=20_000.0, help="auction_micro arrivals per sub-market")
    g.add_argument("--bid-mean", type=float, default=10.0, help="auction_micro mean bid, minor units")
    g.add_argument("--bid-sigma", type=float, default=0.5)
    g.add_argument("--ctr", type=float, default=0.05)
    g.add_argument("--cvr", type=float, default=0.2)
    g.add_argument("--pacing", choices=["none", "even"], default="none")
    g.add_argument("--outcome-kind", choices=[k.value for k in InteractionKind], default="conversion")


def _add_population(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("population")
    g.add_argument("--n-users", type=int, default=10_000)
    g.add_argument("--n-ads", type=int, default=1_000)
    g.add_argument(
        "--budget-dist",
        type=_budget_dist,
        default=BudgetDistribution(),
        help="lognormal:MU,SIGMA | fixed:AMOUNT | empirical:ADS_CSV (default lognormal:ln(10000),0.5)",
    )
    g.add_argument("--confounding", type=float, default=0.0, help="correlation of log budget with latent quality")


def _response(args) -> ResponseModel:
    return ResponseModel(
        form=args.response,
        base=args.base,
        slope=args.slope,
        scale=args.scale,
        exponent=args.exponent,
        max_level=args.max_level,
        half_saturation=args.half_saturation,
        noise=args.noise,
        noise_sigma=args.noise_sigma,
        quality_effect=args.quality_effect,
        arrival_rate=args.arrival_rate,
        bid_mean=args.bid_mean,
        bid_sigma=args.bid_sigma,
        ctr=args.ctr,
        cvr=args.cvr,
        pacing=args.pacing,
    )


def _sim_config(args, with_population: bool = True) -> SimConfig:
    response = _response(args)
    treatment = replace(response, slope=args.treatment_slope) if args.treatment_slope is not None else None
    kwargs = dict(
        response=response,
        treatment_response=treatment,
        seed=args.seed,
        outcome_kind=args.outcome_kind,
    )
    if with_population:
        kwargs.update(
            n_users=args.n_users,
            n_ads=args.n_ads,
            budget_distribution=args.budget_dist,
            confounding_strength=args.confounding,
        )
    return SimConfig(**kwargs)


def _add_regression(p: argparse.ArgumentParser, lift: bool = False) -> None:
    g = p.add_argument_group("inputs")
    g.add_argument("--data", type=Path, help="estimation.csv (skips the join)")
    g.add_argument("--workdir", type=Path, help="directory with the standard file names; builds estimation.csv")
    g.add_argument("--outcome-kind", choices=[k.value for k in InteractionKind], default="conversion")
    g.add_argument("--lenient", action="store_true", help="drop interactions with unknown users or ads")
    r = p.add_argument_group("model")
    r.add_argument("--fe", action="store_true", help="ad fixed effects" + (" (not identified for lift)" if lift else ""))
    r.add_argument("--controls", default="", help="comma-separated feat_/num_ control columns")
    r.add_argument("--no-weights", action="store_true", help="drop the 1/rand_b^2 weights")
    r.add_argument("--confidence", type=float, default=0.95)
    r.add_argument("--segment-by", default=None, help="fit separately per level of this feature column")
    r.add_argument("--per-currency-unit", action="store_true", help="display slopes per 100 minor units")
    p.add_argument("--out", type=Path, default=None, help="results JSON-lines file")


def _regression_spec(args) -> RegressionSpec:
    controls = tuple(c for c in args.controls.split(",") if c)
    if args.fe and controls:
        raise UsageError("--fe and --controls are mutually exclusive (fixed effects absorb ad controls)")
    return RegressionSpec(
        use_fixed_effects=args.fe,
        control_features=controls,
        use_weights=not args.no_weights,
        confidence_level=args.confidence,
    )


def _load_rows(args):
    if args.data is not None:
        _require(args.data)
        return pipeline.read_estimation(args.data)
    if args.workdir is None:
        raise UsageError("give --data or --workdir")
    paths = pipeline.DatasetPaths.in_dir(args.workdir)
    _require(*paths.inputs())
    return pipeline.build_estimation_data(paths, args.outcome_kind, lenient=args.lenient)


def _results_path(args) -> Path:
    if args.out is not None:
        return args.out
    base = args.workdir if getattr(args, "workdir", None) is not None else _default_out()
    return Path(base) / pipeline.RESULTS_FILE


# commands ----------------------------------------------------------------


def cmd_generate(args) -> int:
    config = _sim_config(args)
    pop = generate_population(config)
    out = Path(args.out)
    pipeline.write_users(out / pipeline.USERS_FILE, pop.user_ids)
    pipeline.write_ads(out / pipeline.ADS_FILE, pop.ads())
    pipeline.write_quality(out / pipeline.QUALITY_FILE, pop.ad_ids, pop.latent_quality)
    print(f"generated {len(pop.user_ids)} users and {len(pop.ad_ids)} ads in {out}")
    return 0


def cmd_split(args) -> int:
    _require(args.users, args.ads)
    config = SplitConfig(alpha=args.alpha, seed=args.seed, hash_namespace=args.namespace)
    users = pipeline.read_users(args.users)
    ads = pipeline.read_ads(args.ads)
    in_m2 = user_submarkets(users, config)
    assignment = {u: (SubMarket.M2 if f else SubMarket.M1) for u, f in zip(users, in_m2)}
    copies = split_ads(ads, config)
    out = Path(args.out)
    pipeline.write_user_assignment(out / pipeline.USER_ASSIGNMENT_FILE, assignment)
    pipeline.write_ads_assignment(out / pipeline.ADS_ASSIGNMENT_FILE, copies)
    n_m2 = int(in_m2.sum())
    if config.symmetric:
        print("note: alpha = 0.5 is the symmetric split; the result carries no budget variation to estimate from")
    print(f"users: {len(users)} (M1 {len(users) - n_m2}, M2 {n_m2}); ads: {len(ads)}; copies: {len(copies)}")
    return 0


def _population_for(copies, quality_path: Path | None) -> Population:
    parents = {c.ad_id: c.parent_total for c in copies}
    ad_ids = sorted(parents)
    quality = pipeline.read_quality(quality_path) if quality_path else {}
    return Population(
        user_ids=[],
        ad_ids=ad_ids,
        budgets=np.array([parents[a] for a in ad_ids], dtype=np.int64),
        latent_quality=np.array([quality.get(a, 0.0) for a in ad_ids]),
    )


def cmd_simulate(args) -> int:
    _require(args.ads_assignment, args.user_assignment, args.quality)
    config = _sim_config(args, with_population=False)
    copies = pipeline.read_ads_assignment(args.ads_assignment)
    users = pipeline.read_user_assignment(args.user_assignment)
    by_market = {m: [u for u, s in users.items() if s is m] for m in SubMarket}
    pop = _population_for(copies, args.quality)
    interactions = simulate_outcomes(copies, pop, config, by_market) if copies else []
    out = Path(args.out)
    pipeline.write_interactions(out / pipeline.INTERACTIONS_FILE, interactions)
    if copies and config.response.form is not ResponseForm.AUCTION_MICRO:
        pipeline.write_truth(out / pipeline.TRUTH_FILE, ground_truth(copies, pop, config))
    print(f"simulated {len(interactions)} interactions for {len(copies)} copies")
    return 0


def _fmt(x: float, scale: float = 1.0) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x * scale:.6g}"


def cmd_estimate(args) -> int:
    spec = _regression_spec(args)
    rows = _load_rows(args)
    if args.segment_by:
        fits = estimate_by_segment(rows, spec, args.segment_by)
    else:
        fits = [estimate_incrementality(rows, spec)]
    pipeline.write_jsonl(_results_path(args), [pipeline.result_record(f, "incrementality") for f in fits])
    scale = 100.0 if args.per_currency_unit else 1.0
    unit = "per currency unit" if args.per_currency_unit else "per minor unit"
    print(f"{'segment':<20} {'rho':>12} {'se':>12} {'ci_low':>12} {'ci_high':>12} {'ads':>7}  ({unit})")
    for f in fits:
        print(
            f"{f.segment or 'all':<20} {_fmt(f.rho, scale):>12} {_fmt(f.se, scale):>12} "
            f"{_fmt(f.ci_low, scale):>12} {_fmt(f.ci_high, scale):>12} {f.n_ads:>7}"
        )
    return 0


def cmd_lift(args) -> int:
    if args.fe:
        raise UsageError("--fe is not available for lift: rho and delta_rho are collinear within an ad")
    spec = _regression_spec(args)
    rows = _load_rows(args)
    if args.segment_by:
        fits = estimate_by_segment(rows, spec, args.segment_by, lift=True)
    else:
        fits = [estimate_lift(rows, spec)]
    pipeline.write_jsonl(_results_path(args), [pipeline.result_record(f, "lift") for f in fits])
    scale = 100.0 if args.per_currency_unit else 1.0
    print(f"{'segment':<20} {'term':<10} {'estimate':>12} {'se':>12} {'ci_low':>12} {'ci_high':>12}")
    for f in fits:
        for term, est, se, ci, s in (
            ("rho", f.rho, f.se_rho, f.ci_rho, scale),
            ("mu", f.mu, f.se_mu, f.ci_mu, 1.0),
            ("delta_rho", f.delta_rho, f.se_delta_rho, f.ci_delta_rho, scale),
        ):
            print(
                f"{f.segment or 'all':<20} {term:<10} {_fmt(est, s):>12} {_fmt(se, s):>12} "
                f"{_fmt(ci[0], s):>12} {_fmt(ci[1], s):>12}"
            )
    return 0


def cmd_balance(args) -> int:
    _require(args.ads_assignment, args.ads)
    copies = pipeline.read_ads_assignment(args.ads_assignment)
    segments = None
    if args.segment_by:
        if args.ads is None:
            raise UsageError("--segment-by needs --ads")
        name = args.segment_by.removeprefix("feat_").removeprefix("num_")
        segments = {a.ad_id: str(a.features.get(name, "")) for a in pipeline.read_ads(args.ads)}
    report = balance_test(copies, args.significance, segments)
    if args.out:
        pipeline.write_jsonl(args.out, [report])
    print(f"{'':<8} {'count':>8} {'total':>14} {'mean':>12} {'variance':>14}")
    for label, m in (("M1", report.m1), ("M2", report.m2)):
        print(f"{label:<8} {m.count:>8} {m.total:>14} {_fmt(m.mean):>12} {_fmt(m.variance):>14}")
    print(f"paired mean test       t={_fmt(report.paired_t)} p={_fmt(report.paired_p)}")
    print(f"paired variance test   t={_fmt(report.variance_t)} p={_fmt(report.variance_p)}")
    print(f"(welch p={_fmt(report.welch_p)}, F p={_fmt(report.f_p)}; independent-sample, reference only)")
    for level, seg in report.segments.items():
        print(f"segment {level}: {'pass' if seg.passed else 'FAIL'} (mean p={_fmt(seg.paired_p)})")
    print("balance: " + ("pass" if report.passed else "FAIL") + f" at significance {args.significance}")
    return 0 if report.passed else 1


def cmd_power(args) -> int:
    for a in args.alphas:
        if not 0.5 < a < 1:
            raise UsageError(f"alpha grid values must lie in (0.5, 1), got {a}")
    if args.replications < 50:
        raise UsageError("--replications must be at least 50")
    curve = power_analysis(
        _sim_config(args), args.alphas, args.replications, power=args.power, size=args.size
    )
    if args.out:
        pipeline.write_jsonl(args.out, curve.points)
    if args.csv:
        args.csv.parent.mkdir(parents=True, exist_ok=True)
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alpha", "monte_carlo_se", "mean_clustered_se", "mean_rho", "detectable_effect", "replications"])
            for p in curve.points:
                w.writerow([p.alpha, repr(p.monte_carlo_se), repr(p.mean_clustered_se), repr(p.mean_rho),
                            repr(p.detectable_effect), p.replications])
    print(f"{'alpha':>6} {'mc_se':>12} {'mean_se':>12} {'mde':>12}  (power {args.power}, size {args.size})")
    for p in curve.points:
        print(f"{p.alpha:>6} {_fmt(p.monte_carlo_se):>12} {_fmt(p.mean_clustered_se):>12} {_fmt(p.detectable_effect):>12}")
    return 0


def cmd_sidefx(args) -> int:
    _require(args.ads, args.quality)
    ads = pipeline.read_ads(args.ads)
    if len(ads) < 4:
        raise DataError("side-effect test needs at least 4 ads")
    quality = pipeline.read_quality(args.quality) if args.quality else None
    config = SplitConfig(alpha=args.alpha1, seed=args.seed, hash_namespace=args.namespace)
    report = side_effect_ab(ads, args.alpha1, config, _sim_config(args, with_population=False), quality)
    if args.out:
        pipeline.write_jsonl(args.out, [report])
    print(f"asymmetric (alpha={report.alpha1}): n={report.n_asymmetric} mean={_fmt(report.mean_asymmetric)}")
    print(f"symmetric  (alpha=0.5): n={report.n_symmetric} mean={_fmt(report.mean_symmetric)}")
    print(f"difference {_fmt(report.difference)} se {_fmt(report.se)} p {_fmt(report.p_value)}")
    return 0


def cmd_forecast(args) -> int:
    _require(args.results)
    records = [r for r in pipeline.read_jsonl(args.results) if r.get("model") == "incrementality"]
    if args.segment:
        records = [r for r in records if r.get("segment") == args.segment]
    if not records:
        raise DataError("no matching incrementality estimate in the results file")
    from .domain import IncrementalityEstimate

    fields = IncrementalityEstimate.__dataclass_fields__
    rec = {k: v for k, v in records[0].items() if k in fields}
    rec["control_features"] = tuple(rec.get("control_features") or ())
    estimate = IncrementalityEstimate(**rec)
    if any(b < 0 for b in args.levels):
        raise UsageError("budget levels must be non-negative")
    points = forecast_performance(estimate, Baseline(args.budget_ref, args.outcome_ref), args.levels)
    if args.out:
        pipeline.write_jsonl(args.out, points)
    print(f"{'budget':>12} {'expected':>12} {'ci_low':>12} {'ci_high':>12}")
    for p in points:
        print(f"{p.budget:>12} {_fmt(p.expected):>12} {_fmt(p.ci_low):>12} {_fmt(p.ci_high):>12}")
    return 0


def cmd_pipeline_build(args) -> int:
    paths = pipeline.DatasetPaths.in_dir(args.workdir)
    _require(*paths.inputs())
    rows = pipeline.build_estimation_data(paths, args.outcome_kind, lenient=args.lenient)
    print(f"wrote {len(rows)} estimation rows to {paths.estimation_output_path}")
    return 0


def cmd_run_all(args) -> int:
    """generate -> split -> simulate -> build -> estimate in one directory."""
    out = Path(args.out)
    steps = [
        ["generate", "--out", str(out)],
        ["split", "--users", str(out / pipeline.USERS_FILE), "--ads", str(out / pipeline.ADS_FILE), "--out", str(out),
         "--alpha", repr(args.alpha)],
        ["simulate", "--ads-assignment", str(out / pipeline.ADS_ASSIGNMENT_FILE),
         "--user-assignment", str(out / pipeline.USER_ASSIGNMENT_FILE),
         "--quality", str(out / pipeline.QUALITY_FILE), "--out", str(out)],
        ["estimate", "--workdir", str(out)] + (["--fe"] if args.fe else []),
    ]
    shared = ["--seed", str(args.seed)]
    pop_flags = ["--n-users", str(args.n_users), "--n-ads", str(args.n_ads), "--confounding", repr(args.confounding)]
    if args.budget_dist_text:
        pop_flags += ["--budget-dist", args.budget_dist_text]
    resp_flags = _response_flags(args)
    for step in steps:
        argv = list(step)
        if step[0] == "generate":
            argv += shared + pop_flags + resp_flags
        elif step[0] in ("split",):
            argv += shared
        elif step[0] == "simulate":
            argv += shared + resp_flags
        elif step[0] == "estimate":
            argv += ["--outcome-kind", args.outcome_kind]
        code = main(argv)
        if code:
            return code
    return 0


_RESPONSE_DESTS = [
    "response", "base", "slope", "scale", "exponent", "max_level", "half_saturation", "noise", "noise_sigma",
    "quality_effect", "treatment_slope", "arrival_rate", "bid_mean", "bid_sigma", "ctr", "cvr", "pacing",
    "outcome_kind",
]


def _response_flags(args) -> list[str]:
    flags = []
    for dest in _RESPONSE_DESTS:
        value = getattr(args, dest)
        if value is None:
            continue
        flags += ["--" + dest.replace("_", "-"), value if isinstance(value, str) else repr(value)]
    return flags


# parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abssplit",
        description="Asymmetric budget split experiments: split, simulate, estimate and diagnose.",
        epilog=FORMATS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=FORMATS_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = command("generate", cmd_generate, "generate a synthetic population (users.csv, ads.csv, quality.csv)")
    _add_population(p)
    _add_response(p)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", type=Path, default=_default_out())

    p = command("split", cmd_split, "partition users and split ad budgets into high/low copies")
    p.add_argument("--users", type=Path, required=True)
    p.add_argument("--ads", type=Path, required=True)
    p.add_argument("--alpha", type=_alpha, default=DEFAULT_ALPHA, help="share of budget on the high copy")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--namespace", default="abs", help="hash namespace prefix")
    p.add_argument("--out", type=Path, default=_default_out())

    p = command("simulate", cmd_simulate, "simulate interactions for split ad copies")
    p.add_argument("--ads-assignment", type=Path, required=True)
    p.add_argument("--user-assignment", type=Path, required=True)
    p.add_argument("--quality", type=Path, default=None, help="latent quality side channel (quality.csv)")
    _add_response(p)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", type=Path, default=_default_out())

    p = command("estimate", cmd_estimate, "estimate incrementality (outcome per minor unit of budget)")
    _add_regression(p)

    p = command("lift", cmd_lift, "estimate the incrementality lift of the M2 mechanism over M1")
    _add_regression(p, lift=True)

    p = command("balance", cmd_balance, "test that budget distributions match across sub-markets")
    p.add_argument("--ads-assignment", type=Path, required=True)
    p.add_argument("--ads", type=Path, default=None, help="ads.csv, for --segment-by")
    p.add_argument("--segment-by", default=None)
    p.add_argument("--significance", type=float, default=0.05)
    p.add_argument("--out", type=Path, default=None)

    p = command("power", cmd_power, "Monte-Carlo standard error and detectable effect over an alpha grid")
    p.add_argument("--alphas", type=_floats, default=[0.55, 0.6, 0.7, 0.8])
    p.add_argument("--replications", type=int, default=200)
    p.add_argument("--power", type=float, default=0.8)
    p.add_argument("--size", type=float, default=0.05)
    _add_population(p)
    _add_response(p)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", type=Path, default=None, help="power curve JSON-lines")
    p.add_argument("--csv", type=Path, default=None, help="power curve CSV for plotting")

    p = command("sidefx", cmd_sidefx, "ad-level A/B test of asymmetric vs symmetric splitting")
    p.add_argument("--ads", type=Path, required=True)
    p.add_argument("--alpha1", type=_alpha, required=True)
    p.add_argument("--quality", type=Path, default=None)
    p.add_argument("--namespace", default="abs")
    _add_response(p)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", type=Path, default=None)

    p = command("forecast", cmd_forecast, "extrapolate an ad copy's outcome to other budgets")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--segment", default=None)
    p.add_argument("--budget-ref", type=int, required=True)
    p.add_argument("--outcome-ref", type=float, required=True)
    p.add_argument("--levels", type=_ints, required=True, help="comma-separated budgets in minor units")
    p.add_argument("--out", type=Path, default=None)

    p = command("pipeline", None, "data pipeline commands")
    psub = p.add_subparsers(dest="pipeline_command", required=True)
    b = psub.add_parser("build", help="join interactions with assignments into estimation.csv")
    b.add_argument("--workdir", type=Path, default=_default_out())
    b.add_argument("--outcome-kind", choices=[k.value for k in InteractionKind], default="conversion")
    b.add_argument("--lenient", action="store_true")
    b.set_defaults(func=cmd_pipeline_build)
    r = psub.add_parser("run-all", help="generate, split, simulate, build and estimate in one directory",
                        epilog=FORMATS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    r.add_argument("--out", type=Path, default=_default_out())
    r.add_argument("--seed", type=int, default=_default_seed())
    r.add_argument("--alpha", type=_alpha, default=DEFAULT_ALPHA)
    r.add_argument("--n-users", type=int, default=10_000)
    r.add_argument("--n-ads", type=int, default=1_000)
    r.add_argument("--budget-dist", dest="budget_dist_text", default=None,
                   help="lognormal:MU,SIGMA | fixed:AMOUNT | empirical:ADS_CSV")
    r.add_argument("--confounding", type=float, default=0.0)
    r.add_argument("--fe", action="store_true")
    _add_response(r)
    r.set_defaults(func=cmd_run_all)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError) as exc:
        print(f"abssplit: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, EstimationError, ValueError) as exc:
        print(f"abssplit: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
