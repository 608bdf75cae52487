import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from debias_rec.errors import DimensionMismatch, ZeroPopularity
from debias_rec.objective import (batch_ips_weights, bpr_loss, composite_loss, hinge_losses, ips_weight,
                                  normalize_batch, similarity)
from debias_rec.types import TABLES, EmbeddingSet, HyperParams


def test_similarity_examples():
    assert similarity([0, 0], [0, 0]) == 0
    assert similarity([1, 0], [0, 1]) == 0
    assert similarity([1, 2], [3, 4]) == 11
    with pytest.raises(DimensionMismatch):
        similarity([1, 2], [1, 2, 3])


def _vectors(s_wz, s_uz):
    # z = e0, w and u chosen so that <w,z> = s_wz and <u,z> = s_uz
    z = np.array([1.0, 0.0])
    return np.array([s_uz, 0.0]), np.array([s_wz, 1.0]), z


def test_hinge_examples():
    u, w, z = _vectors(0.3, 0.5)
    assert hinge_losses(u, w, z, z, 0.1)[0] == 0.0
    u, w, z = _vectors(0.5, 0.3)
    assert hinge_losses(u, w, z, z, 0.1)[0] == pytest.approx(0.3, abs=1e-15)
    rng = np.random.default_rng(0)
    w, z = rng.standard_normal(4), rng.standard_normal(4)
    assert hinge_losses(w, w, z, z, 0.0) == (0.0, 0.0)


def test_swapped_orientation_flips_gap():
    u, w, z = _vectors(0.3, 0.5)
    assert hinge_losses(u, w, z, z, 0.1, "swapped")[0] == pytest.approx(0.3, abs=1e-15)


def test_bpr_examples():
    w = np.array([1.0, 1.0])
    assert abs(bpr_loss(w, [0.5, 0.0], [0.0, 0.5]) - math.log(2)) < 1e-12
    assert bpr_loss([1.0], [1.0], [0.0]) == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    losses = [bpr_loss([1.0], [x], [0.0]) for x in (0, 5, 20, 50, 200)]
    assert all(a > b for a, b in zip(losses, losses[1:])) and losses[-1] < 1e-80


@settings(max_examples=100, deadline=None)
@given(st.floats(-30, 30), st.floats(-30, 30))
def test_bpr_positive_and_decreasing(x, y):
    lx, ly = bpr_loss([1.0], [x], [0.0]), bpr_loss([1.0], [y], [0.0])
    assert lx > 0 and ly > 0
    if x < y:
        assert lx >= ly


vec = st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3)


@settings(max_examples=100, deadline=None)
@given(vec, vec, vec, vec, st.floats(0, 2), st.sampled_from(["as_written", "swapped"]))
def test_hinges_non_negative(u, w, i, z, m, orientation):
    l_u, l_i = hinge_losses(u, w, i, z, m, orientation)
    assert l_u >= 0 and l_i >= 0


def random_emb(rng, nu, ni, d, scale=1.0):
    return EmbeddingSet(*(rng.standard_normal((nu if name.startswith("user") else ni, d)) * scale
                          for name in TABLES))


def loop_total(batch, emb, hp, user_term=True, item_term=True):
    """Per-triple reference built from the scalar loss functions."""
    bpr = lu = li = 0.0
    for v, p, n in batch:
        bpr += bpr_loss(emb.user_debiased[v], emb.item_debiased[p], emb.item_debiased[n])
        a, b = hinge_losses(emb.user_base[v], emb.user_debiased[v], emb.item_base[p], emb.item_debiased[p],
                            hp.margin_m, hp.hinge_orientation)
        lu += a
        li += b
    k = len(batch)
    return hp.alpha * bpr / k + hp.beta * ((lu / k if user_term else 0) + (li / k if item_term else 0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["as_written", "swapped"]))
def test_composite_matches_scalar_reference_and_decomposes(seed, orientation):
    rng = np.random.default_rng(seed)
    emb = random_emb(rng, 5, 6, 4)
    batch = np.stack([rng.integers(0, 5, 8), rng.integers(0, 6, 8), rng.integers(0, 6, 8)], axis=1)
    hp = HyperParams(alpha=rng.uniform(0, 2), beta=rng.uniform(0, 2), margin_m=rng.uniform(0, 1),
                     hinge_orientation=orientation, d=4)
    loss = composite_loss(batch, emb, hp)
    assert abs(loss.total - (hp.alpha * loss.l_bpr + hp.beta * (loss.l_u + loss.l_i))) < 1e-12
    assert abs(loss.total - loop_total(batch, emb, hp)) < 1e-10


def test_beta_zero_is_scaled_bpr():
    rng = np.random.default_rng(1)
    emb = random_emb(rng, 4, 4, 3)
    batch = [(0, 1, 2), (3, 0, 1)]
    loss = composite_loss(batch, emb, HyperParams(beta=0.0, d=3))
    assert loss.total == 0.05 * loss.l_bpr


def test_zero_embeddings_bare_margin():
    emb = EmbeddingSet(*(np.zeros((3, 4)) for _ in TABLES))
    loss = composite_loss([(0, 1, 2), (1, 2, 0)], emb, HyperParams(alpha=0.0, beta=0.7, margin_m=0.2, d=4))
    assert loss.total == pytest.approx(0.7 * 0.4, abs=1e-15)


def test_disabled_terms_report_zero():
    rng = np.random.default_rng(2)
    emb = random_emb(rng, 3, 3, 2)
    hp = HyperParams(margin_m=5.0, d=2)
    only_user = composite_loss([(0, 1, 2)], emb, hp, item_term=False)
    assert only_user.l_i == 0.0 and only_user.l_u > 0 and "item_base" not in only_user.grads
    none = composite_loss([(0, 1, 2)], emb, hp, user_term=False, item_term=False)
    assert set(none.grads) == {"user_debiased", "item_debiased"}


def _flat(emb):
    return np.concatenate([t.ravel() for t in emb.tables().values()])


def _unflat(x, like):
    out, k = {}, 0
    for name, t in like.tables().items():
        out[name] = x[k:k + t.size].reshape(t.shape)
        k += t.size
    return EmbeddingSet(**out)


def _hinge_args(batch, emb, hp):
    s = 1.0 if hp.hinge_orientation == "as_written" else -1.0
    args = []
    for v, p, _ in batch:
        s_wz = emb.user_debiased[v] @ emb.item_debiased[p]
        args.append(s * (s_wz - emb.user_base[v] @ emb.item_debiased[p]) + hp.margin_m)
        args.append(s * (s_wz - emb.user_debiased[v] @ emb.item_base[p]) + hp.margin_m)
    return np.array(args)


def gradient_check(seed, orientation, h=1e-4, d=8):
    """Max relative error of analytic vs central-difference gradients, or None near a kink."""
    rng = np.random.default_rng(seed)
    emb = random_emb(rng, 3, 4, d)
    batch = np.stack([rng.integers(0, 3, 4), rng.integers(0, 4, 4), rng.integers(0, 4, 4)], axis=1)
    hp = HyperParams(alpha=rng.uniform(0.1, 2), beta=rng.uniform(0.1, 2), margin_m=rng.uniform(0, 1),
                     hinge_orientation=orientation, d=d)
    if np.min(np.abs(_hinge_args(batch, emb, hp))) < 1e-3:
        return None
    loss = composite_loss(batch, emb, hp)
    analytic = np.concatenate([loss.dense_grad(emb, name).ravel() for name in TABLES])
    x0 = _flat(emb)
    numeric = np.zeros_like(x0)
    for j in range(len(x0)):
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        numeric[j] = (composite_loss(batch, _unflat(xp, emb), hp).total
                      - composite_loss(batch, _unflat(xm, emb), hp).total) / (2 * h)
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)


@pytest.mark.parametrize("orientation", ["as_written", "swapped"])
def test_gradients_match_finite_differences(orientation):
    errors = [e for e in (gradient_check(s, orientation) for s in range(40)) if e is not None]
    assert len(errors) >= 20
    assert max(errors) < 1e-4


def test_kink_subgradient_is_zero():
    # hinge argument exactly 0: <w,z> - <u,z> + m = 0 with w = 0, u.z = m
    emb = EmbeddingSet(user_base=np.array([[0.5, 0.0]]), item_base=np.array([[0.0, 0.0], [0.0, 0.0]]),
                       user_debiased=np.array([[0.0, 0.0]]), item_debiased=np.array([[1.0, 0.0], [0.0, 0.0]]))
    hp = HyperParams(alpha=0.0, beta=1.0, margin_m=0.5, d=2)
    loss = composite_loss([(0, 0, 1)], emb, hp, item_term=False)
    assert loss.l_u == 0.0
    assert not loss.dense_grad(emb, "user_base").any()


def test_margin_shift_leaves_active_gradient_unchanged():
    rng = np.random.default_rng(3)
    emb = random_emb(rng, 3, 3, 4)
    batch = [(0, 1, 2), (2, 0, 1)]
    a = composite_loss(batch, emb, HyperParams(margin_m=20.0, d=4))
    b = composite_loss(batch, emb, HyperParams(margin_m=40.0, d=4))
    for name in TABLES:
        assert np.array_equal(a.dense_grad(emb, name), b.dense_grad(emb, name))


def test_ips_examples():
    assert ips_weight(4, "ips") == 0.25
    assert ips_weight(2, "ips-c", cap=0.3) == 0.3
    assert normalize_batch([0.5, 1.5]).tolist() == [0.5, 1.5]
    with pytest.raises(ZeroPopularity):
        ips_weight(0)
    assert batch_ips_weights([2, 4], "ips-c").tolist() == [0.3, 0.25]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 10_000), min_size=1, max_size=64), st.floats(0.01, 1.0))
def test_ips_cn_mean_is_one(pops, cap):
    w = batch_ips_weights(pops, "ips-cn", cap)
    assert abs(w.mean() - 1.0) < 1e-12


def test_ips_weights_scale_bpr_term():
    rng = np.random.default_rng(4)
    emb = random_emb(rng, 3, 3, 2)
    batch = [(0, 1, 2), (1, 2, 0)]
    plain = composite_loss(batch, emb, HyperParams(d=2), user_term=False, item_term=False)
    weighted = composite_loss(batch, emb, HyperParams(d=2), user_term=False, item_term=False,
                              weights=np.array([2.0, 2.0]))
    assert weighted.l_bpr == pytest.approx(2 * plain.l_bpr, rel=1e-15)
