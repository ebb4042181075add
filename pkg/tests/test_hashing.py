import numpy as np

from abssplit import hashing


def test_uniform_in_open_interval():
    u = hashing.uniform(np.array([0, 2**64 - 1], dtype=np.uint64))
    assert 0 < u[0] < 1e-15 and 1 - 1e-15 < u[1] < 1


def test_keyed_depends_on_seed_and_namespace():
    d = hashing.digests(["a", "b", "c"])
    a = hashing.keyed(d, "abs/user", 1)
    assert np.array_equal(a, hashing.keyed(d, "abs/user", 1))
    assert not np.array_equal(a, hashing.keyed(d, "abs/user", 2))
    assert not np.array_equal(a, hashing.keyed(d, "abs/copy", 1))


def test_derive_seed_is_stable_and_nonnegative():
    s = hashing.derive_seed(42, "rep", 3)
    assert s == hashing.derive_seed(42, "rep", 3)
    assert 0 <= s < 2**63
    assert s != hashing.derive_seed(42, "rep", 4)


def test_coin_is_fair_on_many_ids():
    ids = [f"id{i}" for i in range(200_000)]
    frac = hashing.coin(hashing.keyed(hashing.digests(ids), "t", 0)).mean()
    assert abs(frac - 0.5) < 0.005
