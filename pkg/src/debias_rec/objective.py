"""Scores, the contrastive hinge terms, BPR, the composite objective and IPS weights.

All gradients are derived by hand; see tests/test_objective.py for the finite-difference checks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DimensionMismatch, ZeroPopularity
from .types import EmbeddingSet, HyperParams, TrainTriple

IPS_VARIANTS = ("ips", "ips-c", "ips-cn")


def similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot compare vectors of shape {a.shape} and {b.shape}")
    return float(a @ b)


def _orientation_sign(orientation: str) -> float:
    if orientation == "as_written":
        return 1.0
    if orientation == "swapped":
        return -1.0
    raise ConfigError(f"unknown hinge orientation {orientation!r}")


def hinge_losses(u_v, w_v, i_p, z_p, m: float, orientation: str = "as_written") -> tuple[float, float]:
    """Return the user-side and item-side contrastive hinge losses for one (v, p) pair.

    as_written: max(<w,z> - <u,z> + m, 0) and max(<w,z> - <w,i> + m, 0).
    swapped flips the sign of the similarity gap in both terms.
    """
    s = _orientation_sign(orientation)
    s_wz = similarity(w_v, z_p)
    l_u = max(s * (s_wz - similarity(u_v, z_p)) + m, 0.0)
    l_i = max(s * (s_wz - similarity(w_v, i_p)) + m, 0.0)
    return l_u, l_i


def softplus(x):
    return np.logaddexp(0.0, x)


def bpr_loss(w_v, z_p, z_n) -> float:
    """-ln sigmoid(<w,z_p> - <w,z_n>), evaluated as softplus of the negated gap."""
    x = similarity(w_v, z_p) - similarity(w_v, z_n)
    return float(softplus(-x))


@dataclass
class BatchLoss:
    l_bpr: float
    l_u: float
    l_i: float
    total: float
    # table name -> (unique row ids, gradient rows); only rows touched by the batch
    grads: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def dense_grad(self, emb: EmbeddingSet, name: str) -> np.ndarray:
        out = np.zeros_like(getattr(emb, name))
        if name in self.grads:
            rows, g = self.grads[name]
            out[rows] = g
        return out


def as_arrays(batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    arr = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def _scatter(index: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum gradient rows sharing an index, in a fixed (sorted) order."""
    order = np.argsort(index, kind="stable")
    idx = index[order]
    starts = np.flatnonzero(np.r_[True, idx[1:] != idx[:-1]])
    return idx[starts], np.add.reduceat(values[order], starts, axis=0)


def composite_loss(batch: Sequence[TrainTriple] | np.ndarray, emb: EmbeddingSet, hp: HyperParams, *,
                   user_term: bool = True, item_term: bool = True,
                   weights: np.ndarray | None = None) -> BatchLoss:
    """alpha * mean BPR + beta * (mean user hinge + mean item hinge), with gradients.

    ``user_term``/``item_term`` switch the hinge terms off for the ablations; a disabled
    term is reported as 0. ``weights`` multiplies each triple's BPR term (IPS baselines).
    """
    v, p, n = as_arrays(batch)
    b = len(v)
    if b == 0:
        return BatchLoss(0.0, 0.0, 0.0, 0.0, {})
    w, zp, zn = emb.user_debiased[v], emb.item_debiased[p], emb.item_debiased[n]
    wt = np.ones(b) if weights is None else np.asarray(weights, dtype=np.float64)

    x = np.einsum("bd,bd->b", w, zp - zn)
    per_bpr = softplus(-x)
    l_bpr = float(np.mean(wt * per_bpr))
    # d softplus(-x) / dx = -sigmoid(-x)
    g = (-(hp.alpha / b) * wt * expit(-x))[:, None]
    d_w = g * (zp - zn)
    d_zp = g * w
    d_zn = -g * w

    l_u = l_i = 0.0
    d_u = d_i = None
    if user_term or item_term:
        s = _orientation_sign(hp.hinge_orientation)
        c = hp.beta / b
        s_wz = np.einsum("bd,bd->b", w, zp)
        if user_term:
            u = emb.user_base[v]
            arg = s * (s_wz - np.einsum("bd,bd->b", u, zp)) + hp.margin_m
            active = arg > 0
            l_u = float(np.mean(np.where(active, arg, 0.0)))
            a = (c * s * active)[:, None]
            d_w = d_w + a * zp
            d_zp = d_zp + a * (w - u)
            d_u = -a * zp
        if item_term:
            i = emb.item_base[p]
            arg = s * (s_wz - np.einsum("bd,bd->b", w, i)) + hp.margin_m
            active = arg > 0
            l_i = float(np.mean(np.where(active, arg, 0.0)))
            a = (c * s * active)[:, None]
            d_w = d_w + a * (zp - i)
            d_zp = d_zp + a * w
            d_i = -a * w

    total = hp.alpha * l_bpr + hp.beta * (l_u + l_i)
    grads = {
        "user_debiased": _scatter(v, d_w),
        "item_debiased": _scatter(np.concatenate([p, n]), np.vstack([d_zp, d_zn])),
    }
    if d_u is not None:
        grads["user_base"] = _scatter(v, d_u)
    if d_i is not None:
        grads["item_base"] = _scatter(p, d_i)
    return BatchLoss(l_bpr, l_u, l_i, total, grads)


def ips_weight(popularity: int, variant: str = "ips", cap: float = 0.3) -> float:
    """Per-item inverse-propensity weight; IPS-CN's batch normalisation lives in batch_ips_weights."""
    if popularity < 1:
        raise ZeroPopularity(f"popularity must be >= 1, got {popularity}")
    if variant not in IPS_VARIANTS:
        raise ConfigError(f"unknown IPS variant {variant!r}")
    w = 1.0 / popularity
    return w if variant == "ips" else min(w, cap)


def normalize_batch(weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    return weights / weights.mean()


def batch_ips_weights(popularity, variant: str, cap: float = 0.3) -> np.ndarray:
    pop = np.asarray(popularity)
    if (pop < 1).any():
        raise ZeroPopularity("every weighted item needs popularity >= 1")
    if variant not in IPS_VARIANTS:
        raise ConfigError(f"unknown IPS variant {variant!r}")
    w = 1.0 / pop.astype(np.float64)
    if variant == "ips":
        return w
    w = np.minimum(w, cap)
    return normalize_batch(w) if variant == "ips-cn" else w
