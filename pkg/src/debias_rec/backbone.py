"""Embedding initialisation, LightGCN propagation and the binary checkpoint format."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import CheckpointError, GraphMissing
from .types import TABLES, USER_TABLES, Backbone, EmbeddingSet, HyperParams, SplitDataset

CHECKPOINT_MAGIC = b"DRCK"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def init_embeddings(num_users: int, num_items: int, d: int, seed: int, std: float = 0.1) -> EmbeddingSet:
    """Draw all four tables i.i.d. N(0, std^2), one independent stream per table."""
    streams = np.random.SeedSequence(seed).spawn(len(TABLES))
    tables = {}
    for name, ss in zip(TABLES, streams):
        rows = num_users if name in USER_TABLES else num_items
        tables[name] = np.random.default_rng(ss).standard_normal((rows, d)) * std
    return EmbeddingSet(**tables)


@dataclass(frozen=True)
class NormalizedGraph:
    num_users: int
    num_items: int
    edges: np.ndarray  # (E, 2) user, item
    degree_u: np.ndarray
    degree_i: np.ndarray
    norm_weights: np.ndarray  # 1 / sqrt(deg(u) deg(i)) per edge
    adjacency: sp.csr_matrix  # symmetric (U+I) x (U+I)


def build_graph(ds: SplitDataset) -> NormalizedGraph:
    users, items = ds.train_arrays
    return graph_from_edges(users, items, ds.num_users, ds.num_items)


def graph_from_edges(users, items, num_users: int, num_items: int) -> NormalizedGraph:
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    deg_u = np.bincount(users, minlength=num_users)
    deg_i = np.bincount(items, minlength=num_items)
    weights = 1.0 / np.sqrt(deg_u[users].astype(np.float64) * deg_i[items])
    n = num_users + num_items
    rows = np.concatenate([users, items + num_users])
    cols = np.concatenate([items + num_users, users])
    adj = sp.csr_matrix((np.concatenate([weights, weights]), (rows, cols)), shape=(n, n))
    adj.sort_indices()
    return NormalizedGraph(num_users, num_items, np.stack([users, items], axis=1), deg_u, deg_i, weights, adj)


def propagate(graph: NormalizedGraph, user_table: np.ndarray, item_table: np.ndarray,
              layers: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean of layers 0..K of normalised neighbourhood aggregation.

    The operator is symmetric, so the same call back-propagates gradients.
    """
    e = np.vstack([user_table, item_table])
    acc = e.copy()
    for _ in range(layers):
        e = graph.adjacency @ e
        acc += e
    acc /= layers + 1
    return acc[:graph.num_users], acc[graph.num_users:]


def effective_embeddings(base: EmbeddingSet, graph: NormalizedGraph | None, hp: HyperParams) -> EmbeddingSet:
    if hp.backbone is Backbone.MF:
        return base
    if graph is None:
        raise GraphMissing("lightgcn backbone requires a graph built from train positives")
    u_base, i_base = propagate(graph, base.user_base, base.item_base, hp.gcn_layers)
    u_deb, i_deb = propagate(graph, base.user_debiased, base.item_debiased, hp.gcn_layers)
    return EmbeddingSet(user_base=u_base, item_base=i_base, user_debiased=u_deb, item_debiased=i_deb)


def scoring_embeddings(base: EmbeddingSet, ds: SplitDataset, hp: HyperParams) -> EmbeddingSet:
    """Embeddings actually used for ranking: identity for MF, propagated for LightGCN."""
    graph = build_graph(ds) if hp.backbone is Backbone.LIGHTGCN else None
    return effective_embeddings(base, graph, hp)


def save_checkpoint(emb: EmbeddingSet, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, emb.num_users, emb.num_items, emb.d))
        for name in TABLES:
            fh.write(np.ascontiguousarray(getattr(emb, name), dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> EmbeddingSet:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, n_users, n_items, d = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
    offset = _HEADER.size
    tables = {}
    for name in TABLES:
        rows = n_users if name in USER_TABLES else n_items
        count = rows * d
        if len(blob) < offset + 4 * count:
            raise CheckpointError(f"{path}: truncated table {name}")
        tables[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(rows, d).astype(np.float64)
        offset += 4 * count
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return EmbeddingSet(**tables)
