import filecmp
import random
import shutil
from pathlib import Path

import pytest

from abssplit import pipeline
from abssplit.assigner import split_ads
from abssplit.domain import Ad, AdCopy, CopyType, DataError, Interaction, InteractionKind, SplitConfig, SubMarket
from abssplit.pipeline import DatasetPaths, build_estimation_data

GOLDEN = Path(__file__).parent / "golden"
CONV = InteractionKind.CONVERSION


def write_dataset(tmp_path, ads, copies, users, interactions):
    pipeline.write_ads(tmp_path / pipeline.ADS_FILE, ads)
    pipeline.write_ads_assignment(tmp_path / pipeline.ADS_ASSIGNMENT_FILE, copies)
    pipeline.write_user_assignment(tmp_path / pipeline.USER_ASSIGNMENT_FILE, users)
    pipeline.write_interactions(tmp_path / pipeline.INTERACTIONS_FILE, interactions)
    return DatasetPaths.in_dir(tmp_path)


@pytest.fixture
def one_ad(tmp_path):
    ads = [Ad("ad1", 10_000, {"country": "US"})]
    copies = [
        AdCopy("ad1", CopyType.HIGH, SubMarket.M1, 6000, 10_000, 1000),
        AdCopy("ad1", CopyType.LOW, SubMarket.M2, 4000, 10_000, -1000),
    ]
    users = {"a": SubMarket.M1, "b": SubMarket.M1, "c": SubMarket.M2}
    return tmp_path, ads, copies, users


def test_counting_example(one_ad):
    tmp, ads, copies, users = one_ad
    log = [Interaction(u, "ad1", InteractionKind.CLICK, i) for i, u in enumerate(["a", "b", "a", "c"])]
    rows = build_estimation_data(write_dataset(tmp, ads, copies, users, log), "click")
    assert [(r.copy_type, r.outcome, r.treatment) for r in rows] == [(CopyType.HIGH, 3, 0), (CopyType.LOW, 1, 1)]
    assert rows == pipeline.read_estimation(tmp / pipeline.ESTIMATION_FILE)


def test_no_interactions_gives_zero(one_ad):
    tmp, ads, copies, users = one_ad
    rows = build_estimation_data(write_dataset(tmp, ads, copies, users, []))
    assert [r.outcome for r in rows] == [0, 0]


def test_other_kinds_ignored(one_ad):
    tmp, ads, copies, users = one_ad
    log = [Interaction("a", "ad1", InteractionKind.IMPRESSION, 0), Interaction("c", "ad1", CONV, 1)]
    rows = build_estimation_data(write_dataset(tmp, ads, copies, users, log))
    assert [r.outcome for r in rows] == [0, 1]


def test_orphans_strict_and_lenient(one_ad):
    tmp, ads, copies, users = one_ad
    log = [Interaction("zz", "ad1", CONV, 0), Interaction("a", "nope", CONV, 1), Interaction("a", "ad1", CONV, 2)]
    paths = write_dataset(tmp, ads, copies, users, log)
    with pytest.raises(DataError, match="unknown user_id"):
        build_estimation_data(paths)
    rows = build_estimation_data(paths, lenient=True)
    assert [r.outcome for r in rows] == [1, 0]


def test_corrupt_assignment_detected(one_ad):
    tmp, ads, copies, users = one_ad
    copies = [copies[0], AdCopy("ad1", CopyType.LOW, SubMarket.M1, 4000, 10_000, -1000)]
    paths = write_dataset(tmp, ads, copies, users, [Interaction("c", "ad1", CONV, 0)])
    with pytest.raises(DataError, match="corrupt"):
        build_estimation_data(paths)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        build_estimation_data(DatasetPaths.in_dir(tmp_path))


def test_bad_interaction_line(one_ad):
    tmp, ads, copies, users = one_ad
    paths = write_dataset(tmp, ads, copies, users, [])
    paths.interactions_path.write_text('{"user_id": "a"}\n')
    with pytest.raises(DataError, match="interactions.jsonl:1"):
        build_estimation_data(paths)


def test_golden_rebuild_is_byte_identical(tmp_path):
    work = tmp_path / "w"
    shutil.copytree(GOLDEN, work)
    (work / pipeline.ESTIMATION_FILE).unlink()
    build_estimation_data(DatasetPaths.in_dir(work))
    assert filecmp.cmp(work / pipeline.ESTIMATION_FILE, GOLDEN / pipeline.ESTIMATION_FILE, shallow=False)


def test_golden_conservation_and_pairing():
    rows = pipeline.read_estimation(GOLDEN / pipeline.ESTIMATION_FILE)
    logged = sum(1 for x in pipeline.iter_interactions(GOLDEN / pipeline.INTERACTIONS_FILE) if x.kind is CONV)
    assert sum(r.outcome for r in rows) == logged
    assert len(rows) == 2 * len(pipeline.read_ads(GOLDEN / pipeline.ADS_FILE))


def test_shuffled_interactions_identical_output(tmp_path):
    work = tmp_path / "w"
    shutil.copytree(GOLDEN, work)
    lines = (work / pipeline.INTERACTIONS_FILE).read_text().splitlines(keepends=True)
    random.Random(0).shuffle(lines)
    (work / pipeline.INTERACTIONS_FILE).write_text("".join(lines))
    build_estimation_data(DatasetPaths.in_dir(work))
    assert filecmp.cmp(work / pipeline.ESTIMATION_FILE, GOLDEN / pipeline.ESTIMATION_FILE, shallow=False)


def test_round_trips(tmp_path):
    ads = [Ad("b", 5, {"country": "US", "age": 3.5}), Ad("a", 7, {"country": "GB", "age": 1.0}, alpha=0.7)]
    pipeline.write_ads(tmp_path / "ads.csv", ads)
    assert pipeline.read_ads(tmp_path / "ads.csv") == sorted(ads, key=lambda a: a.ad_id)
    assert (tmp_path / "ads.csv").read_text().splitlines()[0] == "ad_id,budget_minor,alpha,num_age,feat_country"

    copies = split_ads(ads, SplitConfig(seed=1))
    pipeline.write_ads_assignment(tmp_path / "c.csv", copies)
    assert pipeline.read_ads_assignment(tmp_path / "c.csv") == copies

    users = {"u2": SubMarket.M2, "u1": SubMarket.M1}
    pipeline.write_user_assignment(tmp_path / "u.csv", users)
    assert pipeline.read_user_assignment(tmp_path / "u.csv") == users

    log = [Interaction("u1", "a", CONV, 5), Interaction("u2", "b", InteractionKind.CLICK, 6)]
    pipeline.write_interactions(tmp_path / "i.jsonl", log)
    assert list(pipeline.iter_interactions(tmp_path / "i.jsonl")) == log

    pipeline.write_users(tmp_path / "users.csv", ["u1", "u2"])
    assert pipeline.read_users(tmp_path / "users.csv") == ["u1", "u2"]


def test_malformed_files(tmp_path):
    (tmp_path / "ads.csv").write_text("ad_id,budget_minor\na,12.5\n")
    with pytest.raises(DataError, match="ads.csv:2"):
        pipeline.read_ads(tmp_path / "ads.csv")
    (tmp_path / "ads.csv").write_text("ad_id,budget_minor\na,1\na,2\n")
    with pytest.raises(DataError, match="duplicate"):
        pipeline.read_ads(tmp_path / "ads.csv")
    (tmp_path / "est.csv").write_text("ad_id,copy\n")
    with pytest.raises(DataError, match="header"):
        pipeline.read_estimation(tmp_path / "est.csv")
