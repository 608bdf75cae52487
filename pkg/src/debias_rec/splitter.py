"""Intervened evaluation split: a random slice of the log plays the role of uniform exposure.

The slice is carved into validation, test and an "intervened" share of train; everything
outside it is the biased remainder, which always joins train.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptySplitError
from .ingestion import read_interactions, write_interactions
from .types import Interaction, SplitDataset

_TOL = 1e-9


@dataclass(frozen=True)
class SplitConfig:
    uniform_fraction: float = 0.4
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    uniform_train_fraction: float = 0.1
    seed: int = 0
    # "uniform" draws the intervened slice uniformly over interactions; "inverse_popularity"
    # weights each interaction by 1/popularity of its item to mimic uniform item exposure
    sampling: str = "uniform"

    def __post_init__(self):
        fracs = (self.uniform_fraction, self.val_fraction, self.test_fraction, self.uniform_train_fraction)
        if any(not (0.0 <= f <= 1.0) for f in fracs):
            raise ConfigError(f"split fractions must lie in [0, 1], got {fracs}")
        total = self.val_fraction + self.test_fraction + self.uniform_train_fraction
        if abs(total - self.uniform_fraction) > _TOL:
            raise ConfigError(
                f"val_fraction + test_fraction + uniform_train_fraction = {total:g} "
                f"but uniform_fraction = {self.uniform_fraction:g}")
        if self.sampling not in ("uniform", "inverse_popularity"):
            raise ConfigError(f"unknown sampling {self.sampling!r}")

    def with_intervention(self, fraction: float) -> "SplitConfig":
        return SplitConfig(
            uniform_fraction=self.val_fraction + self.test_fraction + fraction,
            val_fraction=self.val_fraction, test_fraction=self.test_fraction,
            uniform_train_fraction=fraction, seed=self.seed, sampling=self.sampling)


def _floor(frac: float, n: int) -> int:
    return int(math.floor(frac * n + _TOL))


def _ordering(interactions: Sequence[Interaction], cfg: SplitConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    n = len(interactions)
    if cfg.sampling == "uniform":
        return rng.permutation(n)
    items = np.fromiter((r.item for r in interactions), dtype=np.int64, count=n)
    counts = np.bincount(items)
    weights = 1.0 / counts[items]
    # Efraimidis-Spirakis keys: sorting by u^(1/w) gives weighted sampling without replacement
    keys = np.log(rng.random(n)) / weights
    return np.argsort(-keys, kind="stable")


def _partition(interactions, cfg: SplitConfig, n_uniform_train: int, order: np.ndarray):
    n = len(interactions)
    # floors on cumulative boundaries keep every partition within one of its target size
    n_val = _floor(cfg.val_fraction, n)
    n_test = _floor(cfg.val_fraction + cfg.test_fraction, n) - n_val
    val_idx = order[:n_val]
    test_idx = order[n_val:n_val + n_test]
    rest = order[n_val + n_test:]
    if n_val == 0 or n_test == 0 or len(rest) == 0:
        raise EmptySplitError(f"N={n} too small: |val|={n_val}, |test|={n_test}, |train|={len(rest)}")
    # rest[:n_uniform_train] is the intervened share, the remainder is biased; both train
    pick = lambda idx: [interactions[i] for i in np.sort(idx)]
    return pick(val_idx), pick(test_idx), pick(rest), min(n_uniform_train, len(rest))


def _dims(interactions, num_users, num_items):
    if num_users is None:
        num_users = 1 + max(r.user for r in interactions)
    if num_items is None:
        num_items = 1 + max(r.item for r in interactions)
    return num_users, num_items


def split(interactions: Sequence[Interaction], cfg: SplitConfig = SplitConfig(),
          num_users: int | None = None, num_items: int | None = None) -> SplitDataset:
    """Seeded intervened split of binarized positives."""
    if not interactions:
        raise EmptySplitError("no interactions to split")
    if any(r.rating != 1 for r in interactions):
        raise ConfigError("split expects binarized positives only")
    num_users, num_items = _dims(interactions, num_users, num_items)
    n = len(interactions)
    n_ut = _floor(cfg.uniform_fraction, n) - _floor(cfg.val_fraction + cfg.test_fraction, n)
    val, test, train, n_ut = _partition(interactions, cfg, n_ut, _ordering(interactions, cfg))
    return SplitDataset.build(num_users, num_items, train, val, test,
                              intervention_fraction=cfg.uniform_train_fraction, n_intervened_train=n_ut)


def intervention_variants(interactions: Sequence[Interaction], fractions: Sequence[float],
                          cfg: SplitConfig = SplitConfig(), num_users: int | None = None,
                          num_items: int | None = None) -> list[SplitDataset]:
    """One dataset per intervention fraction, all sharing the same validation and test sets."""
    fractions = list(fractions)
    if not fractions:
        raise ConfigError("intervention_variants needs at least one fraction")
    return [split(interactions, cfg.with_intervention(float(f)), num_users, num_items) for f in fractions]


def write_split(ds: SplitDataset, out_dir: str | Path, cfg: SplitConfig | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(out / "train.tsv", ds.train)
    write_interactions(out / "valid.tsv", ds.validation)
    write_interactions(out / "test.tsv", ds.test)
    manifest = {
        "num_users": ds.num_users,
        "num_items": ds.num_items,
        "sizes": {"train": len(ds.train), "validation": len(ds.validation), "test": len(ds.test),
                  "intervened_train": ds.n_intervened_train},
        "intervention_fraction": ds.intervention_fraction,
        "config": asdict(cfg) if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
    }
    (out / "split.json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return manifest


def read_split(data_dir: str | Path) -> SplitDataset:
    data_dir = Path(data_dir)
    meta = json.loads((data_dir / "split.json").read_text(encoding="utf-8"))
    return SplitDataset.build(
        meta["num_users"], meta["num_items"],
        read_interactions(data_dir / "train.tsv"),
        read_interactions(data_dir / "valid.tsv"),
        read_interactions(data_dir / "test.tsv"),
        intervention_fraction=meta.get("intervention_fraction", 0.0),
        n_intervened_train=meta.get("sizes", {}).get("intervened_train", 0),
    )
