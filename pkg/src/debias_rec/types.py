"""Shared domain types: interactions, split datasets, embedding tables, hyperparameters."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, fields, replace
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, OverlapError, PopularityMismatch, RangeError


class Interaction(NamedTuple):
    user: int
    item: int
    rating: int
    timestamp: int


class TrainTriple(NamedTuple):
    user: int
    pos: int
    neg: int


def pair_keys(users: np.ndarray, items: np.ndarray, num_items: int) -> np.ndarray:
    """Encode (user, item) pairs as a single int64 key."""
    return np.asarray(users, dtype=np.int64) * int(num_items) + np.asarray(items, dtype=np.int64)


def _columns(rows: Sequence[Interaction]) -> tuple[np.ndarray, np.ndarray]:
    if not rows:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    arr = np.asarray([(r.user, r.item) for r in rows], dtype=np.int64)
    return arr[:, 0].copy(), arr[:, 1].copy()


def count_popularity(train: Iterable[Interaction], num_items: int) -> np.ndarray:
    pop = np.zeros(num_items, dtype=np.int64)
    for row in train:
        if not 0 <= row.item < num_items:
            raise RangeError(f"train item {row.item} outside [0, {num_items})")
        pop[row.item] += 1
    return pop


@dataclass(frozen=True)
class SplitDataset:
    num_users: int
    num_items: int
    train: tuple[Interaction, ...]
    validation: tuple[Interaction, ...]
    test: tuple[Interaction, ...]
    popularity: np.ndarray
    intervention_fraction: float = 0.0
    # how many of the train rows came from the uniformly exposed sample
    n_intervened_train: int = 0

    @classmethod
    def build(cls, num_users, num_items, train, validation, test,
              intervention_fraction=0.0, n_intervened_train=0) -> "SplitDataset":
        train = tuple(train)
        return cls(
            num_users=int(num_users),
            num_items=int(num_items),
            train=train,
            validation=tuple(validation),
            test=tuple(test),
            popularity=count_popularity(train, num_items),
            intervention_fraction=float(intervention_fraction),
            n_intervened_train=int(n_intervened_train),
        )

    @cached_property
    def train_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return _columns(self.train)

    @cached_property
    def validation_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return _columns(self.validation)

    @cached_property
    def test_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return _columns(self.test)

    @cached_property
    def train_keys(self) -> np.ndarray:
        """Sorted pair keys of the train positives, for vectorised membership tests."""
        users, items = self.train_arrays
        return np.unique(pair_keys(users, items, self.num_items))

    def user_positives(self, part: str = "train") -> list[np.ndarray]:
        users, items = getattr(self, f"{part}_arrays")
        order = np.lexsort((items, users))
        users, items = users[order], items[order]
        bounds = np.searchsorted(users, np.arange(self.num_users + 1))
        return [items[bounds[u]:bounds[u + 1]] for u in range(self.num_users)]


def validate_dataset(ds: SplitDataset) -> None:
    """Raise if partitions overlap, ids are out of range, or popularity is stale."""
    seen: dict[tuple[int, int], str] = {}
    for name in ("train", "validation", "test"):
        for row in getattr(ds, name):
            if not (0 <= row.user < ds.num_users):
                raise RangeError(f"{name}: user {row.user} outside [0, {ds.num_users})")
            if not (0 <= row.item < ds.num_items):
                raise RangeError(f"{name}: item {row.item} outside [0, {ds.num_items})")
            key = (row.user, row.item)
            other = seen.get(key)
            if other is not None and other != name:
                raise OverlapError(f"pair {key} appears in both {other} and {name}")
            seen[key] = name
    pop = np.asarray(ds.popularity)
    if pop.shape != (ds.num_items,) or not np.array_equal(pop, count_popularity(ds.train, ds.num_items)):
        raise PopularityMismatch("stored popularity does not match train counts")
    if not 0.0 <= ds.intervention_fraction <= 1.0:
        raise RangeError(f"intervention_fraction {ds.intervention_fraction} outside [0, 1]")


TABLES = ("user_base", "item_base", "user_debiased", "item_debiased")
USER_TABLES = ("user_base", "user_debiased")


@dataclass
class EmbeddingSet:
    """Four dense tables: base (U, I) and debiased (W, Z) embeddings for users and items.

    Scores come from the debiased pair; the base pair only carries the contrastive pressure.
    """

    user_base: np.ndarray
    item_base: np.ndarray
    user_debiased: np.ndarray
    item_debiased: np.ndarray

    def __post_init__(self):
        d = self.user_base.shape[1]
        for name in TABLES:
            table = getattr(self, name)
            if table.ndim != 2 or table.shape[1] != d:
                raise ConfigError(f"{name} has shape {table.shape}, expected (*, {d})")
        if self.user_base.shape != self.user_debiased.shape:
            raise ConfigError("user tables disagree in shape")
        if self.item_base.shape != self.item_debiased.shape:
            raise ConfigError("item tables disagree in shape")

    @property
    def d(self) -> int:
        return self.user_base.shape[1]

    @property
    def num_users(self) -> int:
        return self.user_base.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_base.shape[0]

    def tables(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TABLES}

    def copy(self) -> "EmbeddingSet":
        return EmbeddingSet(**{k: v.copy() for k, v in self.tables().items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tables().values())

    def equals(self, other: "EmbeddingSet") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.tables().values(), other.tables().values()))


class Backbone(str, enum.Enum):
    MF = "mf"
    LIGHTGCN = "lightgcn"


class Method(str, enum.Enum):
    DCLMDB = "dclmdb"
    DCLMDB_USER = "dclmdb-user"
    DCLMDB_ITEM = "dclmdb-item"
    BPR = "bpr"
    IPS = "ips"
    IPS_C = "ips-c"
    IPS_CN = "ips-cn"

    @property
    def is_dclmdb(self) -> bool:
        return self in (Method.DCLMDB, Method.DCLMDB_USER, Method.DCLMDB_ITEM)

    @property
    def ips_variant(self) -> str | None:
        return {Method.IPS: "ips", Method.IPS_C: "ips-c", Method.IPS_CN: "ips-cn"}.get(self)


HINGE_ORIENTATIONS = ("as_written", "swapped")
PNSM_MODES = ("symmetric", "more_popular", "less_popular")


@dataclass(frozen=True)
class HyperParams:
    alpha: float = 0.05
    beta: float = 0.005
    margin_m: float = 0.1
    pnsm_margin: int = 0
    lr: float = 0.001
    d: int = 128
    epochs: int = 200
    negatives_per_positive: int = 1
    backbone: Backbone = Backbone.MF
    gcn_layers: int = 2
    seed: int = 0
    batch_size: int = 128
    patience: int = 10
    init_std: float = 0.1
    hinge_orientation: str = "as_written"
    pnsm_mode: str = "symmetric"
    ips_cap: float = 0.3
    eval_k: int = 20

    def __post_init__(self):
        object.__setattr__(self, "backbone", Backbone(self.backbone))
        if min(self.alpha, self.beta, self.lr) < 0:
            # zero is legal for each: it isolates terms in the equivalence checks
            raise ConfigError("alpha, beta and lr must be >= 0")
        if self.margin_m < 0:
            raise ConfigError("margin_m must be >= 0")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if self.backbone is Backbone.LIGHTGCN and self.gcn_layers < 1:
            raise ConfigError("gcn_layers must be >= 1 for lightgcn")
        if self.epochs < 0 or self.batch_size < 1 or self.negatives_per_positive < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1, negatives_per_positive >= 1 required")
        if self.pnsm_margin < 0 or self.init_std < 0 or self.ips_cap <= 0 or self.eval_k < 1:
            raise ConfigError("pnsm_margin, init_std >= 0; ips_cap > 0; eval_k >= 1 required")
        if self.hinge_orientation not in HINGE_ORIENTATIONS:
            raise ConfigError(f"hinge_orientation must be one of {HINGE_ORIENTATIONS}")
        if self.pnsm_mode not in PNSM_MODES:
            raise ConfigError(f"pnsm_mode must be one of {PNSM_MODES}")

    def replace(self, **changes) -> "HyperParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["backbone"] = self.backbone.value
        return out

    @classmethod
    def field_types(cls) -> dict[str, type]:
        hints = {"Backbone": Backbone, "float": float, "int": int, "str": str}
        return {f.name: hints[str(f.type)] for f in fields(cls)}
