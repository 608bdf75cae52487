import numpy as np
import pytest
from scipy.stats import chisquare

from debias_rec.errors import EmptyInput, NoNegativeAvailable
from debias_rec.sampler import SamplerState, eligible_negatives, epoch_batches, sample_batch, sample_negatives
from debias_rec.types import Interaction, SplitDataset


def _ds(pairs, num_users, num_items):
    return SplitDataset.build(num_users, num_items, [Interaction(u, i, 1, 0) for u, i in pairs], [], [])


def _pop_ds():
    # item popularities: item0=10 (positive of user 0), items 1..4 = 3, 12, 20, 14
    pops = {0: 10, 1: 3, 2: 12, 3: 20, 4: 14}
    pairs, user = [], 1
    for item, count in pops.items():
        for _ in range(count - (1 if item == 0 else 0)):
            pairs.append((user, item))
            user += 1
    pairs.append((0, 0))
    return _ds(pairs, user, 5)


def test_margin_zero_everything_non_positive_eligible(small_ds):
    st = SamplerState.from_dataset(small_ds, seed=0)
    pos = set(small_ds.user_positives("train")[0].tolist())
    pool = eligible_negatives(st, 0, int(small_ds.user_positives("train")[0][0]))
    assert set(pool.tolist()) == set(range(small_ds.num_items)) - pos


def test_popularity_gap_filter():
    ds = _pop_ds()
    assert ds.popularity.tolist() == [10, 3, 12, 20, 14]
    st = SamplerState.from_dataset(ds, seed=0, pnsm_margin=5)
    assert set(eligible_negatives(st, 0, 0).tolist()) == {1, 3}
    more = SamplerState.from_dataset(ds, seed=0, pnsm_margin=5, pnsm_mode="more_popular")
    assert set(eligible_negatives(more, 0, 0).tolist()) == {3}
    less = SamplerState.from_dataset(ds, seed=0, pnsm_margin=5, pnsm_mode="less_popular")
    assert set(eligible_negatives(less, 0, 0).tolist()) == {1}


def test_fallback_when_nothing_clears_margin():
    ds = _pop_ds()
    st = SamplerState.from_dataset(ds, seed=0, pnsm_margin=1000)
    assert set(eligible_negatives(st, 0, 0).tolist()) == {1, 2, 3, 4}
    negs = sample_negatives(st, np.zeros(200, dtype=np.int64), np.zeros(200, dtype=np.int64))
    assert set(negs.tolist()) == {1, 2, 3, 4}


def test_no_negative_available():
    st = SamplerState.from_dataset(_ds([(0, 0), (0, 1)], 1, 2), seed=0)
    with pytest.raises(NoNegativeAvailable):
        sample_negatives(st, np.array([0]), np.array([0]))


def test_empty_train():
    st = SamplerState.from_dataset(_ds([], 2, 3), seed=0)
    with pytest.raises(EmptyInput):
        sample_batch(st, 4)


@pytest.mark.parametrize("margin", [0, 2])
def test_triple_invariants_over_many_samples(small_ds, margin):
    st = SamplerState.from_dataset(small_ds, seed=1, pnsm_margin=margin)
    batch = sample_batch(st, 100_000)
    keys = set(zip(*small_ds.train_arrays))
    users, pos, neg = batch.T
    assert all((u, p) in keys for u, p in zip(users[:5000].tolist(), pos[:5000].tolist()))
    assert not st.is_positive(users, neg).any()
    assert ((0 <= neg) & (neg < small_ds.num_items)).all()


def test_negatives_uniform_for_fixed_user(small_ds):
    st = SamplerState.from_dataset(small_ds, seed=2)
    user = 0
    pos_items = small_ds.user_positives("train")[user]
    negs = sample_negatives(st, np.full(100_000, user), np.full(100_000, pos_items[0]))
    allowed = np.setdiff1d(np.arange(small_ds.num_items), pos_items)
    counts = np.bincount(negs, minlength=small_ds.num_items)
    assert counts[pos_items].sum() == 0
    assert chisquare(counts[allowed]).pvalue > 0.01


def test_positives_uniform_over_train(small_ds):
    st = SamplerState.from_dataset(small_ds, seed=3)
    batch = sample_batch(st, 100_000)
    idx = {k: j for j, k in enumerate(zip(*small_ds.train_arrays))}
    counts = np.bincount([idx[(u, p)] for u, p in zip(batch[:, 0].tolist(), batch[:, 1].tolist())],
                         minlength=len(idx))
    assert chisquare(counts).pvalue > 0.01


def test_deterministic_and_epoch_shape(small_ds):
    a = list(epoch_batches(SamplerState.from_dataset(small_ds, seed=4), 7, 2))
    b = list(epoch_batches(SamplerState.from_dataset(small_ds, seed=4), 7, 2))
    assert len(a) == -(-len(small_ds.train) // 7)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sum(len(x) for x in a) == 2 * len(small_ds.train)
