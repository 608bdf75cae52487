import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from debias_rec.backbone import (effective_embeddings, graph_from_edges, init_embeddings, load_checkpoint,
                                 propagate, save_checkpoint, scoring_embeddings)
from debias_rec.errors import CheckpointError, GraphMissing
from debias_rec.types import HyperParams


def dense_reference(users, items, nu, ni, eu, ei, layers):
    """Brute-force LightGCN: explicit dense normalized adjacency and Python loops."""
    n = nu + ni
    a = np.zeros((n, n))
    for u, i in zip(users, items):
        a[u, nu + i] = a[nu + i, u] = 1.0
    deg = a.sum(axis=1)
    norm = np.zeros_like(a)
    for r in range(n):
        for c in range(n):
            if a[r, c]:
                norm[r, c] = 1.0 / np.sqrt(deg[r] * deg[c])
    e = np.vstack([eu, ei])
    layers_out = [e]
    for _ in range(layers):
        layers_out.append(norm @ layers_out[-1])
    mean = sum(layers_out) / (layers + 1)
    return mean[:nu], mean[nu:]


def test_init_degenerate_and_deterministic():
    zero = init_embeddings(3, 4, 5, seed=0, std=0.0)
    assert all(not t.any() for t in zero.tables().values())
    a, b = init_embeddings(30, 20, 8, seed=5), init_embeddings(30, 20, 8, seed=5)
    assert a.equals(b)
    assert not np.array_equal(a.user_base, a.user_debiased)


def test_init_moments():
    emb = init_embeddings(100, 100, 64, seed=1, std=0.1)
    for table in emb.tables().values():
        assert abs(table.mean()) < 0.01
        assert abs(table.std() - 0.1) < 0.01


def test_mf_is_identity():
    emb = init_embeddings(4, 3, 2, seed=0)
    out = effective_embeddings(emb, None, HyperParams(d=2))
    assert out is emb


def test_lightgcn_requires_graph():
    emb = init_embeddings(4, 3, 2, seed=0)
    with pytest.raises(GraphMissing):
        effective_embeddings(emb, None, HyperParams(backbone="lightgcn"))


def test_single_edge_and_isolated_node():
    g = graph_from_edges([0], [0], 2, 1)  # user 1 has no edges
    eu = np.array([[1.0, 2.0], [5.0, 7.0]])
    ei = np.array([[3.0, -2.0]])
    u, i = propagate(g, eu, ei, layers=1)
    assert np.allclose(u[0], (eu[0] + ei[0]) / 2)
    assert np.allclose(i[0], (ei[0] + eu[0]) / 2)
    assert np.allclose(u[1], eu[1] / 2)


def test_toy_graph_matches_dense_reference():
    users, items = [0, 0, 1, 2, 2], [0, 1, 1, 1, 2]
    rng = np.random.default_rng(0)
    eu, ei = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    g = graph_from_edges(users, items, 3, 3)
    for layers in (1, 2, 3):
        got = propagate(g, eu, ei, layers)
        ref = dense_reference(users, items, 3, 3, eu, ei, layers)
        assert np.max(np.abs(got[0] - ref[0])) < 1e-9 and np.max(np.abs(got[1] - ref[1])) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5, allow_nan=False))
def test_propagation_is_linear(seed, scale):
    rng = np.random.default_rng(seed)
    users, items = rng.integers(0, 6, 15), rng.integers(0, 5, 15)
    g = graph_from_edges(users, items, 6, 5)
    eu, ei = rng.standard_normal((6, 3)), rng.standard_normal((5, 3))
    base = propagate(g, eu, ei, 2)
    scaled = propagate(g, scale * eu, scale * ei, 2)
    assert np.allclose(scaled[0], scale * base[0], atol=1e-12)
    assert np.allclose(scaled[1], scale * base[1], atol=1e-12)


def test_scoring_embeddings_lightgcn_propagates_all_tables(small_ds):
    emb = init_embeddings(small_ds.num_users, small_ds.num_items, 4, seed=0)
    out = scoring_embeddings(emb, small_ds, HyperParams(backbone="lightgcn", d=4))
    users, items = small_ds.train_arrays
    ref = dense_reference(users, items, small_ds.num_users, small_ds.num_items,
                          emb.user_debiased, emb.item_debiased, 2)
    assert np.allclose(out.user_debiased, ref[0], atol=1e-12)
    assert np.allclose(out.item_debiased, ref[1], atol=1e-12)


def test_checkpoint_round_trip_and_corruption(tmp_path):
    emb = init_embeddings(5, 7, 3, seed=2)
    path = tmp_path / "ck.bin"
    save_checkpoint(emb, path)
    back = load_checkpoint(path)
    for name, table in emb.tables().items():
        assert np.array_equal(getattr(back, name), table.astype(np.float32).astype(np.float64))
    blob = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(blob[:-4])
    (tmp_path / "long.bin").write_bytes(blob + b"\0")
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + blob[4:])
    for bad in ("short.bin", "long.bin", "magic.bin"):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / bad)
