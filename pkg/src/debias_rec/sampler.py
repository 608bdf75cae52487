"""Positive draws and popularity-gap (PNSM) negative sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyInput, NoNegativeAvailable
from .types import PNSM_MODES, SplitDataset, pair_keys

MAX_REJECTION_ROUNDS = 200


@dataclass
class SamplerState:
    rng: np.random.Generator
    num_items: int
    train_users: np.ndarray
    train_items: np.ndarray
    positive_keys: np.ndarray  # sorted user * num_items + item
    positives: list[np.ndarray]  # per-user sorted positive items
    popularity: np.ndarray
    pnsm_margin: int = 0
    pnsm_mode: str = "symmetric"

    @classmethod
    def from_dataset(cls, ds: SplitDataset, seed: int, pnsm_margin: int = 0,
                     pnsm_mode: str = "symmetric") -> "SamplerState":
        if pnsm_mode not in PNSM_MODES:
            raise ConfigError(f"pnsm_mode must be one of {PNSM_MODES}")
        users, items = ds.train_arrays
        return cls(np.random.default_rng(seed), ds.num_items, users, items, ds.train_keys,
                   ds.user_positives("train"), np.asarray(ds.popularity), int(pnsm_margin), pnsm_mode)

    def is_positive(self, users, items) -> np.ndarray:
        keys = pair_keys(users, items, self.num_items)
        idx = np.searchsorted(self.positive_keys, keys)
        idx = np.minimum(idx, len(self.positive_keys) - 1)
        return self.positive_keys[idx] == keys if len(self.positive_keys) else np.zeros(len(keys), bool)

    def gap_ok(self, pos_items, neg_items) -> np.ndarray:
        gap = self.popularity[neg_items] - self.popularity[pos_items]
        if self.pnsm_mode == "more_popular":
            return gap >= self.pnsm_margin
        if self.pnsm_mode == "less_popular":
            return -gap >= self.pnsm_margin
        return np.abs(gap) >= self.pnsm_margin


def eligible_negatives(state: SamplerState, user: int, pos_item: int) -> np.ndarray:
    """Exact eligible set for one pair, falling back to every non-positive item."""
    candidates = np.setdiff1d(np.arange(state.num_items), state.positives[user], assume_unique=True)
    if len(candidates) == 0:
        raise NoNegativeAvailable(f"user {user} is positive on every item")
    within = candidates[state.gap_ok(np.full(len(candidates), pos_item), candidates)]
    return within if len(within) else candidates


def sample_negatives(state: SamplerState, users: np.ndarray, pos_items: np.ndarray) -> np.ndarray:
    """One negative per (user, positive): rejection rounds, then an exact draw for stragglers."""
    users = np.asarray(users, dtype=np.int64)
    pos_items = np.asarray(pos_items, dtype=np.int64)
    neg = np.full(len(users), -1, dtype=np.int64)
    pending = np.arange(len(users))
    for _ in range(MAX_REJECTION_ROUNDS):
        if len(pending) == 0:
            break
        cand = state.rng.integers(0, state.num_items, size=len(pending))
        ok = ~state.is_positive(users[pending], cand)
        if state.pnsm_margin > 0:
            ok &= state.gap_ok(pos_items[pending], cand)
        neg[pending[ok]] = cand[ok]
        pending = pending[~ok]
    for j in pending:
        pool = eligible_negatives(state, int(users[j]), int(pos_items[j]))
        neg[j] = pool[state.rng.integers(len(pool))]
    return neg


def sample_batch(state: SamplerState, batch_size: int) -> np.ndarray:
    """batch_size triples (user, pos, neg) with (user, pos) uniform over train positives."""
    if len(state.train_users) == 0:
        raise EmptyInput("cannot sample from an empty train set")
    idx = state.rng.integers(0, len(state.train_users), size=batch_size)
    users, pos = state.train_users[idx], state.train_items[idx]
    return np.stack([users, pos, sample_negatives(state, users, pos)], axis=1)


def epoch_batches(state: SamplerState, batch_size: int, negatives_per_positive: int = 1):
    """Reshuffle the positives and yield ceil(|train| / batch_size) triple arrays."""
    n = len(state.train_users)
    order = state.rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        users = np.repeat(state.train_users[idx], negatives_per_positive)
        pos = np.repeat(state.train_items[idx], negatives_per_positive)
        yield np.stack([users, pos, sample_negatives(state, users, pos)], axis=1)
