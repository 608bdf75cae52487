"""Full-ranking top-K evaluation: Recall, HR, NDCG, IOU against popular items, improvement."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EmptyTruth, KTooLarge, ZeroReference
from .types import EmbeddingSet, SplitDataset

_CHUNK = 1024


def rank_topk(emb: EmbeddingSet, ds: SplitDataset, user: int, k: int,
              train_pos: np.ndarray | None = None) -> list[int]:
    """Top-k unseen items for one user by <w_user, z_item>, ties broken by ascending id."""
    if train_pos is None:
        train_pos = ds.user_positives("train")[user]
    scores = emb.item_debiased @ emb.user_debiased[user]
    return select_topk(scores, k, exclude=train_pos)


def select_topk(scores: np.ndarray, k: int, exclude: np.ndarray | None = None) -> list[int]:
    """Partial selection: keep everything tied with the k-th score, then sort that pool."""
    scores = np.asarray(scores, dtype=np.float64)
    cand = np.ones(len(scores), dtype=bool)
    if exclude is not None and len(exclude):
        cand[np.asarray(exclude)] = False
    ids = np.flatnonzero(cand)
    if k > len(ids):
        raise KTooLarge(f"k={k} exceeds the {len(ids)} candidate items")
    if k <= 0:
        return []
    neg = -scores[ids]
    kth = np.partition(neg, k - 1)[k - 1]
    pool = ids[neg <= kth]
    order = np.lexsort((pool, -scores[pool]))
    return pool[order][:k].tolist()


def dot_scorer(emb: EmbeddingSet) -> Callable[[np.ndarray], np.ndarray]:
    return lambda users: emb.user_debiased[users] @ emb.item_debiased.T


def topk_matrix(scorer: Callable[[np.ndarray], np.ndarray], users: np.ndarray, k: int,
                train_pos: Sequence[np.ndarray]) -> np.ndarray:
    """Vectorised top-k for many users; stable sort on negated scores gives the id tie-break."""
    users = np.asarray(users, dtype=np.int64)
    out = np.empty((len(users), k), dtype=np.int64)
    for start in range(0, len(users), _CHUNK):
        chunk = users[start:start + _CHUNK]
        scores = np.array(scorer(chunk), dtype=np.float64)
        for row, u in enumerate(chunk):
            seen = train_pos[u]
            if scores.shape[1] - len(seen) < k:
                raise KTooLarge(f"user {u}: k={k} exceeds {scores.shape[1] - len(seen)} candidates")
            scores[row, seen] = -np.inf
        out[start:start + len(chunk)] = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return out


def recall_hr_ndcg(topk: Sequence[int], truth: Iterable[int], k: int | None = None) -> tuple[float, float, float]:
    truth = set(truth)
    if not truth:
        raise EmptyTruth("ground-truth set is empty")
    topk = list(topk)[:k] if k is not None else list(topk)
    k = len(topk) if k is None else k
    hits = [r for r, item in enumerate(topk, start=1) if item in truth]
    recall = len(hits) / len(truth)
    hr = 1.0 if hits else 0.0
    dcg = sum(1.0 / math.log2(r + 1) for r in hits)
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(truth)) + 1))
    return recall, hr, dcg / idcg


def popular_topk(popularity: np.ndarray, k: int) -> np.ndarray:
    return np.argsort(-np.asarray(popularity), kind="stable")[:k]


def iou(a: Iterable[int], b: Iterable[int]) -> float:
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else 1.0


def iou_with_popular(topk_all_users: Sequence[Sequence[int]], popularity: np.ndarray, k: int) -> float:
    pop = popular_topk(popularity, k)
    if len(topk_all_users) == 0:
        return 0.0
    return float(np.mean([iou(list(t)[:k], pop) for t in topk_all_users]))


def improvement(recall_method: float, recall_reference: float) -> float:
    """Signed relative Recall gain in percent."""
    if recall_reference <= 0:
        raise ZeroReference("reference recall must be > 0")
    return 100.0 * (recall_method - recall_reference) / recall_reference


@dataclass
class MetricsReport:
    metrics: dict[int, dict[str, float]]
    users_evaluated: int
    imp: dict[int, float] = field(default_factory=dict)
    split: str = "test"

    def to_json(self) -> dict:
        return {"metrics": {str(k): v for k, v in self.metrics.items()},
                "imp": {str(k): v for k, v in self.imp.items()},
                "users_evaluated": self.users_evaluated, "split": self.split}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    def csv_rows(self, run_id: str, method: str, backbone: str) -> list[dict]:
        rows = []
        for k in sorted(self.metrics):
            m = self.metrics[k]
            imp = self.imp.get(k)
            rows.append({"run_id": run_id, "method": method, "backbone": backbone, "k": k,
                         "recall": repr(m["recall"]), "hr": repr(m["hr"]), "ndcg": repr(m["ndcg"]),
                         "iou": repr(m["iou"]), "imp": "" if imp is None else repr(imp)})
        return rows


CSV_FIELDS = ["run_id", "method", "backbone", "k", "recall", "hr", "ndcg", "iou", "imp"]


def metrics_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def evaluable_users(ds: SplitDataset, part: str = "test") -> np.ndarray:
    """Users with at least one train positive and one held-out positive."""
    train_users, _ = ds.train_arrays
    part_users, _ = getattr(ds, f"{part}_arrays")
    has_train = np.bincount(train_users, minlength=ds.num_users) > 0
    has_part = np.bincount(part_users, minlength=ds.num_users) > 0
    return np.flatnonzero(has_train & has_part)


def evaluate(emb: EmbeddingSet, ds: SplitDataset, ks: Sequence[int] = (20, 50), part: str = "test",
             reference_recall: dict[int, float] | None = None, with_iou: bool = True) -> MetricsReport:
    """Average per-user metrics over evaluable users; emb must already be the scoring embeddings."""
    return evaluate_scores(dot_scorer(emb), ds, ks, part, reference_recall, with_iou)


def evaluate_scores(scorer: Callable[[np.ndarray], np.ndarray], ds: SplitDataset,
                    ks: Sequence[int] = (20, 50), part: str = "test",
                    reference_recall: dict[int, float] | None = None, with_iou: bool = True) -> MetricsReport:
    ks = sorted(set(int(k) for k in ks))
    users = evaluable_users(ds, part)
    train_pos = ds.user_positives("train")
    truth = ds.user_positives(part)
    kmax = max(ks)
    if len(users) == 0:
        return MetricsReport({k: {"recall": 0.0, "hr": 0.0, "ndcg": 0.0, "iou": 0.0} for k in ks}, 0, split=part)
    top = topk_matrix(scorer, users, kmax, train_pos)

    # vectorised hit matrix, equivalent to recall_hr_ndcg row by row
    hit = np.zeros(top.shape, dtype=bool)
    for row, u in enumerate(users):
        hit[row] = np.isin(top[row], truth[u], assume_unique=True)
    n_truth = np.array([len(truth[u]) for u in users], dtype=np.float64)
    discounts = 1.0 / np.log2(np.arange(2, kmax + 2))
    ideal = np.cumsum(discounts)
    pop_rank = popular_topk(ds.popularity, kmax)

    metrics = {}
    for k in ks:
        h = hit[:, :k]
        n_hit = h.sum(axis=1)
        dcg = (h * discounts[:k]).sum(axis=1)
        idcg = ideal[np.minimum(k, n_truth).astype(np.int64) - 1]
        entry = {"recall": float(np.mean(n_hit / n_truth)), "hr": float(np.mean(n_hit > 0)),
                 "ndcg": float(np.mean(dcg / idcg))}
        if with_iou:
            pop_k = pop_rank[:k]
            inter = np.array([np.isin(row[:k], pop_k).sum() for row in top])
            entry["iou"] = float(np.mean(inter / (2 * k - inter)))
        else:
            entry["iou"] = float("nan")
        metrics[k] = entry
    imp = {}
    if reference_recall:
        imp = {k: improvement(metrics[k]["recall"], reference_recall[k]) for k in ks if k in reference_recall}
    return MetricsReport(metrics, int(len(users)), imp, split=part)
