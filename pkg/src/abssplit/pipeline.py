"""File formats and the assignment/interaction join that produces estimation data.

Formats (format version 1, UTF-8, ``\\n`` line endings):

``users.csv``             ``user_id``
``ads.csv``               ``ad_id,budget_minor[,alpha][,feat_<name>...][,num_<name>...]``
``interactions.jsonl``    ``{"user_id", "ad_id", "kind", "ts"}`` one object per line
``user_assignment.csv``   ``user_id,submarket``
``ads_assignment.csv``    ``ad_id,copy,submarket,budget_minor,parent_budget_minor,rand_b_minor``
``estimation.csv``        ``ad_id,copy,submarket,budget_minor,rand_b_minor,outcome,treatment,feat_...``
``results.jsonl``         one fitted model per line

``feat_`` columns are categorical; ``num_`` columns are numeric features.
Budgets are integer minor units.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, is_dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .domain import (
    Ad,
    AdCopy,
    CopyType,
    DataError,
    EstimationRow,
    Interaction,
    InteractionKind,
    SubMarket,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
USERS_FILE = "users.csv"
ADS_FILE = "ads.csv"
INTERACTIONS_FILE = "interactions.jsonl"
USER_ASSIGNMENT_FILE = "user_assignment.csv"
ADS_ASSIGNMENT_FILE = "ads_assignment.csv"
ESTIMATION_FILE = "estimation.csv"
RESULTS_FILE = "results.jsonl"
TRUTH_FILE = "truth.csv"
QUALITY_FILE = "quality.csv"

ASSIGNMENT_HEADER = ["ad_id", "copy", "submarket", "budget_minor", "parent_budget_minor", "rand_b_minor"]
ESTIMATION_HEADER = ["ad_id", "copy", "submarket", "budget_minor", "rand_b_minor", "outcome", "treatment"]


@dataclass(frozen=True)
class DatasetPaths:
    users_path: Path
    ads_path: Path
    interactions_path: Path
    user_assignment_path: Path
    ads_assignment_path: Path
    estimation_output_path: Path

    @classmethod
    def in_dir(cls, directory: str | Path) -> DatasetPaths:
        d = Path(directory)
        return cls(
            d / USERS_FILE,
            d / ADS_FILE,
            d / INTERACTIONS_FILE,
            d / USER_ASSIGNMENT_FILE,
            d / ADS_ASSIGNMENT_FILE,
            d / ESTIMATION_FILE,
        )

    def inputs(self) -> list[Path]:
        return [self.ads_path, self.interactions_path, self.user_assignment_path, self.ads_assignment_path]


def _reader(path: str | Path) -> Iterator[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        yield from csv.DictReader(fh)


def _header(path: str | Path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return next(csv.reader(fh), [])


def _write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _int(value: str, what: str, where: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise DataError(f"{where}: {what} must be an integer, got {value!r}") from None


# users -------------------------------------------------------------------


def read_users(path: str | Path) -> list[str]:
    if "user_id" not in _header(path):
        raise DataError(f"{path}: missing user_id column")
    users = [row["user_id"] for row in _reader(path)]
    if any(not u for u in users):
        raise DataError(f"{path}: empty user_id")
    return users


def write_users(path: str | Path, user_ids: Iterable[str]) -> None:
    _write_csv(path, ["user_id"], ([u] for u in user_ids))


# ads ---------------------------------------------------------------------


def _feature_columns(header: Sequence[str]) -> list[str]:
    return [h for h in header if h.startswith(("feat_", "num_"))]


def read_ads(path: str | Path) -> list[Ad]:
    header = _header(path)
    if not {"ad_id", "budget_minor"} <= set(header):
        raise DataError(f"{path}: ads file needs ad_id and budget_minor columns")
    feats = _feature_columns(header)
    ads, seen = [], set()
    for line, row in enumerate(_reader(path), start=2):
        where = f"{path}:{line}"
        ad_id = row["ad_id"]
        if ad_id in seen:
            raise DataError(f"{where}: duplicate ad_id {ad_id!r}")
        seen.add(ad_id)
        features: dict[str, str | float] = {}
        for col in feats:
            if col.startswith("feat_"):
                features[col[5:]] = row[col]
            else:
                try:
                    features[col[4:]] = float(row[col])
                except ValueError:
                    raise DataError(f"{where}: {col} must be numeric") from None
        alpha = row.get("alpha") or None
        ads.append(
            Ad(
                ad_id,
                _int(row["budget_minor"], "budget_minor", where),
                features,
                float(alpha) if alpha is not None else None,
            )
        )
    return ads


def _feature_header(feature_names: Iterable[tuple[str, bool]]) -> list[str]:
    return [("num_" if numeric else "feat_") + name for name, numeric in feature_names]


def _feature_kinds(items: Iterable[Mapping[str, object]]) -> list[tuple[str, bool]]:
    kinds: dict[str, bool] = {}
    for feats in items:
        for k, v in feats.items():
            numeric = isinstance(v, (int, float)) and not isinstance(v, bool)
            kinds[k] = kinds.get(k, True) and numeric
    return sorted(kinds.items())


def _fmt(v: object) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_ads(path: str | Path, ads: Sequence[Ad]) -> None:
    kinds = _feature_kinds(a.features for a in ads)
    with_alpha = any(a.alpha is not None for a in ads)
    header = ["ad_id", "budget_minor"] + (["alpha"] if with_alpha else []) + _feature_header(kinds)
    rows = []
    for a in sorted(ads, key=lambda a: a.ad_id):
        row = [a.ad_id, a.total_budget]
        if with_alpha:
            row.append("" if a.alpha is None else repr(a.alpha))
        row += [_fmt(a.features.get(name)) for name, _ in kinds]
        rows.append(row)
    _write_csv(path, header, rows)


# assignments -------------------------------------------------------------


def write_user_assignment(path: str | Path, assignment: Mapping[str, SubMarket]) -> None:
    _write_csv(path, ["user_id", "submarket"], ([u, assignment[u].value] for u in sorted(assignment)))


def read_user_assignment(path: str | Path) -> dict[str, SubMarket]:
    out = {}
    for line, row in enumerate(_reader(path), start=2):
        try:
            out[row["user_id"]] = SubMarket(row["submarket"])
        except (KeyError, ValueError):
            raise DataError(f"{path}:{line}: bad user assignment row {row}") from None
    return out


def write_ads_assignment(path: str | Path, copies: Sequence[AdCopy]) -> None:
    _write_csv(
        path,
        ASSIGNMENT_HEADER,
        (
            [c.ad_id, c.copy_type.value, c.submarket.value, c.budget, c.parent_total, c.rand_b]
            for c in sorted(copies, key=lambda c: (c.ad_id, c.copy_type.value))
        ),
    )


def read_ads_assignment(path: str | Path) -> list[AdCopy]:
    header = _header(path)
    if header[: len(ASSIGNMENT_HEADER)] != ASSIGNMENT_HEADER:
        raise DataError(f"{path}: expected header {','.join(ASSIGNMENT_HEADER)}")
    copies = []
    for line, row in enumerate(_reader(path), start=2):
        where = f"{path}:{line}"
        try:
            copies.append(
                AdCopy(
                    ad_id=row["ad_id"],
                    copy_type=CopyType(row["copy"]),
                    submarket=SubMarket(row["submarket"]),
                    budget=_int(row["budget_minor"], "budget_minor", where),
                    parent_total=_int(row["parent_budget_minor"], "parent_budget_minor", where),
                    rand_b=_int(row["rand_b_minor"], "rand_b_minor", where),
                )
            )
        except ValueError as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"{where}: {exc}") from None
    return copies


# interactions ------------------------------------------------------------


def interaction_record(x: Interaction) -> str:
    return json.dumps(
        {"user_id": x.user_id, "ad_id": x.ad_id, "kind": x.kind.value, "ts": x.timestamp}, separators=(",", ":")
    )


def write_interactions(path: str | Path, interactions: Iterable[Interaction]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x in interactions:
            fh.write(interaction_record(x) + "\n")


def iter_interactions(path: str | Path) -> Iterator[Interaction]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                yield Interaction(str(obj["user_id"]), str(obj["ad_id"]), InteractionKind(obj["kind"]), int(obj["ts"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{line_no}: bad interaction record ({exc})") from None


# estimation data ---------------------------------------------------------


def write_estimation(path: str | Path, rows: Sequence[EstimationRow]) -> None:
    kinds = _feature_kinds(r.features for r in rows)
    header = ESTIMATION_HEADER + _feature_header(kinds)
    _write_csv(
        path,
        header,
        (
            [r.ad_id, r.copy_type.value, r.submarket.value, r.budget, r.rand_b, r.outcome, r.treatment]
            + [_fmt(r.features.get(name)) for name, _ in kinds]
            for r in rows
        ),
    )


def read_estimation(path: str | Path) -> list[EstimationRow]:
    header = _header(path)
    if header[: len(ESTIMATION_HEADER)] != ESTIMATION_HEADER:
        raise DataError(f"{path}: expected header {','.join(ESTIMATION_HEADER)}")
    feats = _feature_columns(header)
    rows = []
    for line, row in enumerate(_reader(path), start=2):
        where = f"{path}:{line}"
        try:
            market = SubMarket(row["submarket"])
            copy_type = CopyType(row["copy"])
        except ValueError as exc:
            raise DataError(f"{where}: {exc}") from None
        if _int(row["treatment"], "treatment", where) != int(market is SubMarket.M2):
            raise DataError(f"{where}: treatment disagrees with submarket")
        features: dict[str, str | float] = {}
        for col in feats:
            features[col[5:] if col.startswith("feat_") else col[4:]] = (
                row[col] if col.startswith("feat_") else float(row[col])
            )
        rows.append(
            EstimationRow(
                ad_id=row["ad_id"],
                copy_type=copy_type,
                submarket=market,
                budget=_int(row["budget_minor"], "budget_minor", where),
                rand_b=_int(row["rand_b_minor"], "rand_b_minor", where),
                outcome=_int(row["outcome"], "outcome", where),
                features=features,
            )
        )
    return rows


@dataclass
class BuildStats:
    interactions_read: int = 0
    counted: int = 0
    dropped_orphan_users: int = 0
    dropped_orphan_ads: int = 0


def aggregate_outcomes(
    interactions: Iterable[Interaction],
    user_assignment: Mapping[str, SubMarket],
    copies: Sequence[AdCopy],
    outcome_kind: InteractionKind,
    lenient: bool = False,
    stats: BuildStats | None = None,
) -> Counter:
    """Count ``outcome_kind`` interactions per (ad_id, submarket) in one streaming pass."""
    stats = stats if stats is not None else BuildStats()
    markets: dict[str, set[SubMarket]] = {}
    for c in copies:
        markets.setdefault(c.ad_id, set()).add(c.submarket)
    counts: Counter = Counter()
    for x in interactions:
        stats.interactions_read += 1
        market = user_assignment.get(x.user_id)
        if market is None:
            if not lenient:
                raise DataError(f"interaction references unknown user_id {x.user_id!r}")
            stats.dropped_orphan_users += 1
            continue
        ad_markets = markets.get(x.ad_id)
        if ad_markets is None:
            if not lenient:
                raise DataError(f"interaction references unknown ad_id {x.ad_id!r}")
            stats.dropped_orphan_ads += 1
            continue
        if market not in ad_markets:
            raise DataError(f"corrupt assignment: ad {x.ad_id!r} has no copy in {market.value}")
        if x.kind is outcome_kind:
            counts[(x.ad_id, market)] += 1
            stats.counted += 1
    return counts


def estimation_rows(
    copies: Sequence[AdCopy], ads: Sequence[Ad], counts: Mapping[tuple[str, SubMarket], int]
) -> list[EstimationRow]:
    features = {a.ad_id: a.features for a in ads}
    rows = []
    for c in sorted(copies, key=lambda c: (c.ad_id, c.copy_type.value)):
        if c.ad_id not in features:
            raise DataError(f"assignment references ad {c.ad_id!r} missing from the ads file")
        rows.append(
            EstimationRow(
                ad_id=c.ad_id,
                copy_type=c.copy_type,
                submarket=c.submarket,
                budget=c.budget,
                rand_b=c.rand_b,
                outcome=int(counts.get((c.ad_id, c.submarket), 0)),
                features=features[c.ad_id],
            )
        )
    return rows


def build_estimation_data(
    paths: DatasetPaths,
    outcome_kind: InteractionKind | str = InteractionKind.CONVERSION,
    lenient: bool = False,
    write: bool = True,
) -> list[EstimationRow]:
    """Join interactions to ad copies through the interacting user's sub-market."""
    kind = InteractionKind(outcome_kind)
    for p in paths.inputs():
        if not Path(p).is_file():
            raise FileNotFoundError(p)
    ads = read_ads(paths.ads_path)
    copies = read_ads_assignment(paths.ads_assignment_path)
    users = read_user_assignment(paths.user_assignment_path)
    stats = BuildStats()
    counts = aggregate_outcomes(iter_interactions(paths.interactions_path), users, copies, kind, lenient, stats)
    if stats.dropped_orphan_users or stats.dropped_orphan_ads:
        log.warning(
            "dropped %d interactions with unknown users and %d with unknown ads",
            stats.dropped_orphan_users,
            stats.dropped_orphan_ads,
        )
    rows = estimation_rows(copies, ads, counts)
    if write:
        write_estimation(paths.estimation_output_path, rows)
    return rows


# results -----------------------------------------------------------------


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, tuple):
        return [_clean(v) for v in value]
    return value


def result_record(fit, model: str) -> dict:
    record = {"model": model, "format_version": FORMAT_VERSION}
    record.update({k: _clean(v) for k, v in asdict(fit).items()})
    if hasattr(fit, "t_stat"):
        record["t_stat"] = _clean(fit.t_stat)
    return record


def write_jsonl(path: str | Path, records: Iterable[Mapping | object]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            if is_dataclass(rec):
                rec = {k: _clean(v) for k, v in asdict(rec).items()}
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_truth(path: str | Path, records: Sequence[Mapping]) -> None:
    header = ["ad_id", "latent_quality", "budget_high", "budget_low", "expected_high", "expected_low", "true_slope"]
    _write_csv(path, header, ([_fmt(r[h]) for h in header] for r in records))


def write_quality(path: str | Path, ad_ids: Sequence[str], latent_quality) -> None:
    _write_csv(path, ["ad_id", "latent_quality"], ([a, repr(float(q))] for a, q in zip(ad_ids, latent_quality)))


def read_quality(path: str | Path) -> dict[str, float]:
    return {row["ad_id"]: float(row["latent_quality"]) for row in _reader(path)}
