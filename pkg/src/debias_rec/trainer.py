"""Mini-batch training with row-sparse Adam and validation-based early stopping."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .backbone import build_graph, effective_embeddings, init_embeddings, propagate
from .errors import DivergedError
from .evaluator import evaluate
from .objective import BatchLoss, batch_ips_weights, composite_loss
from .sampler import SamplerState, epoch_batches
from .types import Backbone, EmbeddingSet, HyperParams, Method, SplitDataset

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, tuple[np.ndarray, np.ndarray]],
              state: AdamState, lr: float) -> None:
    """Bias-corrected Adam on the touched rows only, in place.

    Untouched rows keep both their values and their moments (lazy Adam); the bias
    correction uses the global step count.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for name, (rows, g) in grads.items():
        m = state.m[name]
        v = state.v[name]
        m_rows = m[rows]
        m_rows *= ADAM_BETA1
        m_rows += (1.0 - ADAM_BETA1) * g
        v_rows = v[rows]
        v_rows *= ADAM_BETA2
        v_rows += (1.0 - ADAM_BETA2) * (g * g)
        m[rows] = m_rows
        v[rows] = v_rows
        denom = np.sqrt(v_rows / c2)
        denom += ADAM_EPS
        params[name][rows] -= (lr / c1) * m_rows / denom


@dataclass
class TrainReport:
    method: str
    backbone: str
    epochs_run: int = 0
    losses: list[dict[str, float]] = field(default_factory=list)
    val_recall: list[float] = field(default_factory=list)
    best_val_recall: float = float("nan")
    best_epoch: int = -1
    wall_time: float = 0.0

    def to_json(self, include_time: bool = True) -> dict:
        out = asdict(self)
        if not include_time:
            out.pop("wall_time")
        return out

    def dumps(self, include_time: bool = True) -> str:
        return json.dumps(self.to_json(include_time), indent=1, sort_keys=True)


def _batch_loss(method: Method, batch: np.ndarray, emb: EmbeddingSet, hp: HyperParams,
                popularity: np.ndarray) -> BatchLoss:
    if method is Method.BPR:
        return composite_loss(batch, emb, hp, user_term=False, item_term=False)
    if method.ips_variant:
        weights = batch_ips_weights(popularity[batch[:, 1]], method.ips_variant, hp.ips_cap)
        return composite_loss(batch, emb, hp, user_term=False, item_term=False, weights=weights)
    return composite_loss(batch, emb, hp,
                          user_term=method is not Method.DCLMDB_ITEM,
                          item_term=method is not Method.DCLMDB_USER)


def _backprop_graph(loss: BatchLoss, base: EmbeddingSet, graph, layers: int) -> dict:
    """Push gradients on propagated embeddings back onto the base tables."""
    pairs = (("user_base", "item_base"), ("user_debiased", "item_debiased"))
    grads = {}
    for u_name, i_name in pairs:
        if u_name not in loss.grads and i_name not in loss.grads:
            continue
        gu, gi = propagate(graph, loss.dense_grad(base, u_name), loss.dense_grad(base, i_name), layers)
        for name, g in ((u_name, gu), (i_name, gi)):
            rows = np.flatnonzero(np.any(g != 0.0, axis=1))
            grads[name] = (rows, g[rows])
    return grads


def train(ds: SplitDataset, hp: HyperParams, method: Method | str = Method.DCLMDB,
          init: EmbeddingSet | None = None, val_k: int | None = None) -> tuple[EmbeddingSet, TrainReport]:
    """Train one model and return the best-on-validation base embeddings plus a report.

    Ranking always uses the debiased (W, Z) pair; for the BPR and IPS baselines that pair is
    the only one updated.
    """
    method = Method(method)
    started = time.perf_counter()
    val_k = hp.eval_k if val_k is None else val_k
    emb = init.copy() if init is not None else init_embeddings(ds.num_users, ds.num_items, hp.d, hp.seed, hp.init_std)
    report = TrainReport(method=method.value, backbone=hp.backbone.value)
    if hp.epochs == 0 or len(ds.train) == 0:
        report.wall_time = time.perf_counter() - started
        return emb, report

    # seed streams: [0..3] embeddings (init_embeddings), sampler gets its own child
    sampler = SamplerState.from_dataset(ds, np.random.SeedSequence([hp.seed, 1]), hp.pnsm_margin, hp.pnsm_mode)
    params = emb.tables()
    adam = AdamState.zeros_like(params)
    graph = build_graph(ds) if hp.backbone is Backbone.LIGHTGCN else None
    has_val = len(ds.validation) > 0 and ds.num_items > val_k
    best = emb.copy()
    best_recall, stale = -np.inf, 0

    for epoch in range(hp.epochs):
        sums = {"total": 0.0, "bpr": 0.0, "l_u": 0.0, "l_i": 0.0}
        n_batches = 0
        for batch in epoch_batches(sampler, hp.batch_size, hp.negatives_per_positive):
            if graph is None:
                loss = _batch_loss(method, batch, emb, hp, ds.popularity)
                grads = loss.grads
            else:
                eff = effective_embeddings(emb, graph, hp)
                loss = _batch_loss(method, batch, eff, hp, ds.popularity)
                grads = _backprop_graph(loss, emb, graph, hp.gcn_layers)
            if not np.isfinite(loss.total):
                raise DivergedError(f"non-finite loss at epoch {epoch}")
            adam_step(params, grads, adam, hp.lr)
            sums["total"] += loss.total
            sums["bpr"] += loss.l_bpr
            sums["l_u"] += loss.l_u
            sums["l_i"] += loss.l_i
            n_batches += 1
        report.losses.append({k: v / n_batches for k, v in sums.items()})
        report.epochs_run = epoch + 1
        if not emb.is_finite():
            raise DivergedError(f"non-finite embeddings after epoch {epoch}")

        if has_val:
            scoring = effective_embeddings(emb, graph, hp)
            recall = evaluate(scoring, ds, ks=(val_k,), part="validation", with_iou=False).metrics[val_k]["recall"]
            report.val_recall.append(recall)
            log.debug("epoch %d loss %.6f val recall@%d %.4f", epoch, report.losses[-1]["total"], val_k, recall)
            if recall > best_recall:
                best_recall, stale = recall, 0
                best = emb.copy()
                report.best_epoch = epoch
            else:
                stale += 1
                if stale >= hp.patience:
                    log.info("early stop at epoch %d (best %d)", epoch, report.best_epoch)
                    break
        else:
            best = emb
            report.best_epoch = epoch

    report.best_val_recall = float(best_recall) if has_val else float("nan")
    report.wall_time = time.perf_counter() - started
    return best, report
