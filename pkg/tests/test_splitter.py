import pytest
from hypothesis import given, settings, strategies as st

from debias_rec.errors import ConfigError, EmptySplitError
from debias_rec.splitter import SplitConfig, intervention_variants, read_split, split, write_split
from debias_rec.types import Interaction, validate_dataset


def _log(n, users=50, items=40):
    return [Interaction(k % users, (k // users) % items, 1, k) for k in range(n)]


def _keys(rows):
    return sorted((r.user, r.item, r.timestamp) for r in rows)


def test_default_sizes_n1000():
    ds = split(_log(1000), SplitConfig(seed=3))
    assert (len(ds.validation), len(ds.test), len(ds.train)) == (100, 200, 700)
    assert ds.n_intervened_train == 100


def test_no_intervention_variant():
    cfg = SplitConfig(uniform_fraction=0.3, val_fraction=0.1, test_fraction=0.2, uniform_train_fraction=0.0)
    ds = split(_log(1000), cfg)
    assert len(ds.train) == 700 and ds.n_intervened_train == 0


def test_same_seed_same_partition():
    a, b = split(_log(500), SplitConfig(seed=9)), split(_log(500), SplitConfig(seed=9))
    assert (a.train, a.validation, a.test) == (b.train, b.validation, b.test)
    c = split(_log(500), SplitConfig(seed=10))
    assert a.test != c.test


def test_fraction_invariant_enforced():
    with pytest.raises(ConfigError):
        SplitConfig(uniform_fraction=0.5)
    with pytest.raises(ConfigError):
        SplitConfig(uniform_fraction=1.2, val_fraction=0.5, test_fraction=0.5, uniform_train_fraction=0.2)


def test_too_small_or_invalid_input():
    with pytest.raises(EmptySplitError):
        split(_log(3))
    with pytest.raises(EmptySplitError):
        split([])
    with pytest.raises(ConfigError):
        split([Interaction(0, 0, 0, 0)] * 20)


def test_variants_share_validation_and_test():
    variants = intervention_variants(_log(1000), [0.0, 0.1, 0.2])
    assert len(variants) == 3
    for ds in variants[1:]:
        assert ds.test == variants[0].test and ds.validation == variants[0].validation
    assert [ds.n_intervened_train for ds in variants] == [0, 100, 200]
    single = intervention_variants(_log(1000), [0.1])[0]
    default = split(_log(1000))
    assert (single.train, single.validation, single.test) == (default.train, default.validation, default.test)
    with pytest.raises(ConfigError):
        intervention_variants(_log(10), [])


@settings(max_examples=40, deadline=None)
@given(st.integers(20, 800), st.integers(0, 1000), st.sampled_from(["uniform", "inverse_popularity"]))
def test_partition_properties(n, seed, sampling):
    rows = _log(n)
    ds = split(rows, SplitConfig(seed=seed, sampling=sampling))
    assert abs(len(ds.validation) - 0.1 * n) <= 1
    assert abs(len(ds.test) - 0.2 * n) <= 1
    assert abs(len(ds.train) - 0.7 * n) <= 1
    assert abs(ds.n_intervened_train - 0.1 * n) <= 1
    assert _keys(ds.train + ds.validation + ds.test) == _keys(rows)
    validate_dataset(ds)


def test_write_read_round_trip(tmp_path):
    cfg = SplitConfig(seed=1)
    ds = split(_log(300), cfg)
    manifest = write_split(ds, tmp_path, cfg)
    assert manifest["sizes"]["test"] == 60
    back = read_split(tmp_path)
    assert (back.train, back.validation, back.test) == (ds.train, ds.validation, ds.test)
    assert back.popularity.tolist() == ds.popularity.tolist()
