"""Synthetic interaction logs with controllable popularity and conformity confounding.

Train data follows the confounded process: item popularity drives both exposure and clicks,
conformity pulls user taste toward the crowd and a running praise signal feeds back into
clicks. Test data follows the intervened process: uniform exposure, clicks from true taste only.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ConfigError
from .ingestion import RawRecord, write_interactions
from .types import Interaction, SplitDataset

ROUND_SPAN = 1_000_000


@dataclass(frozen=True)
class SynthConfig:
    num_users: int = 2000
    num_items: int = 500
    latent_dim: int = 16
    popularity_weight: float = 2.0
    conformity_weight: float = 1.0
    interactions_per_user: int = 150
    test_interactions_per_user: int = 30
    seed: int = 0
    popularity_exponent: float = 0.1
    rounds: int = 4
    preference_scale: float = 3.0
    mainstream_scale: float = 0.5
    click_bias: float = -2.0

    def __post_init__(self):
        counts = (self.num_users, self.num_items, self.latent_dim, self.interactions_per_user,
                  self.test_interactions_per_user, self.rounds)
        if min(counts) < 1:
            raise ConfigError("all counts must be >= 1")
        if self.popularity_weight < 0 or self.conformity_weight < 0:
            raise ConfigError("popularity and conformity weights must be >= 0")
        if self.popularity_exponent < 0 or self.preference_scale < 0 or self.mainstream_scale < 0:
            raise ConfigError("exponent and scales must be >= 0")
        if max(self.interactions_per_user, self.test_interactions_per_user) > self.num_items:
            raise ConfigError("cannot expose a user to more items than exist")


@dataclass
class SynthData:
    train: list[Interaction]
    test: list[Interaction]
    preference: np.ndarray  # true user x item affinity
    popularity_score: np.ndarray  # latent z_i
    config: SynthConfig

    def stats(self) -> dict:
        train_freq = np.bincount([r.item for r in self.train], minlength=self.config.num_items)
        test_freq = np.bincount([r.item for r in self.test], minlength=self.config.num_items)
        return {"n_train": len(self.train), "n_test": len(self.test),
                "gini_train": gini(train_freq), "gini_test": gini(test_freq)}


def gini(counts) -> float:
    """Gini coefficient of a non-negative frequency vector (0 = perfectly even)."""
    x = np.sort(np.asarray(counts, dtype=np.float64))
    n = len(x)
    if n == 0 or x.sum() == 0:
        return 0.0
    ranks = np.arange(1, n + 1)
    return float((2 * ranks - n - 1) @ x / (n * x.sum()))


def _standardize(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)


def _gumbel_topk(rng: np.random.Generator, logits: np.ndarray, k: int) -> np.ndarray:
    """Row-wise weighted sampling of k items without replacement (-inf logits are never drawn)."""
    keys = logits + rng.gumbel(size=logits.shape)
    return np.argpartition(-keys, k - 1, axis=1)[:, :k]


def _latents(cfg: SynthConfig, rng: np.random.Generator):
    k = cfg.latent_dim
    mainstream = rng.standard_normal(k) * cfg.mainstream_scale
    prefs = mainstream + rng.standard_normal((cfg.num_users, k))
    attrs = rng.standard_normal((cfg.num_items, k))
    ranks = rng.permutation(cfg.num_items) + 1
    z = ranks.astype(np.float64) ** -cfg.popularity_exponent
    susceptibility = rng.random(cfg.num_users)
    return prefs, attrs, z, susceptibility


def _affinity(cfg: SynthConfig, prefs: np.ndarray, attrs: np.ndarray) -> np.ndarray:
    return cfg.preference_scale * (prefs @ attrs.T) / np.sqrt(cfg.latent_dim)


def generate_test(cfg: SynthConfig, preference: np.ndarray, rng: np.random.Generator) -> list[Interaction]:
    """Uniform exposure, clicks driven by true preference only. Never sees z or praise."""
    exposed = _gumbel_topk(rng, np.zeros((cfg.num_users, cfg.num_items)), cfg.test_interactions_per_user)
    users = np.repeat(np.arange(cfg.num_users), exposed.shape[1])
    items = exposed.ravel()
    clicks = rng.random(len(items)) < expit(preference[users, items] + cfg.click_bias)
    stamp = (cfg.rounds + 1) * ROUND_SPAN
    return [Interaction(int(u), int(i), 1, stamp + j)
            for j, (u, i) in enumerate(zip(users[clicks], items[clicks]))]


def generate(cfg: SynthConfig) -> SynthData:
    ss = np.random.SeedSequence(cfg.seed)
    latent_ss, train_ss, test_ss = ss.spawn(3)
    prefs, attrs, z, susceptibility = _latents(cfg, np.random.default_rng(latent_ss))
    preference = _affinity(cfg, prefs, attrs)

    # conformity: each user's expressed taste is pulled toward the population mean
    pull = (susceptibility * (1.0 - np.exp(-cfg.conformity_weight)))[:, None]
    conformed = (1.0 - pull) * prefs + pull * prefs.mean(axis=0)
    expressed = _affinity(cfg, conformed, attrs)

    rng = np.random.default_rng(train_ss)
    exposure_logits = np.tile(cfg.popularity_weight * np.log(z), (cfg.num_users, 1))
    pop_feature = _standardize(np.log(z))
    praise = np.zeros(cfg.num_items)
    per_round = np.diff(np.linspace(0, cfg.interactions_per_user, cfg.rounds + 1).round().astype(int))
    train: list[Interaction] = []
    rows = np.arange(cfg.num_users)[:, None]
    for rnd, n_exp in enumerate(per_round):
        if n_exp == 0:
            continue
        exposed = _gumbel_topk(rng, exposure_logits, n_exp)
        exposure_logits[rows, exposed] = -np.inf
        praise_feature = _standardize(np.log1p(praise))
        logit = (expressed[rows, exposed] + cfg.popularity_weight * pop_feature[exposed]
                 + cfg.conformity_weight * praise_feature[exposed] + cfg.click_bias)
        clicks = rng.random(logit.shape) < expit(logit)
        users = np.broadcast_to(rows, exposed.shape)[clicks]
        items = exposed[clicks]
        praise += np.bincount(items, minlength=cfg.num_items)
        base = (rnd + 1) * ROUND_SPAN
        train.extend(Interaction(int(u), int(i), 1, base + j) for j, (u, i) in enumerate(zip(users, items)))

    test = generate_test(cfg, preference, np.random.default_rng(test_ss))
    return SynthData(train, test, preference, z, cfg)


def to_split_dataset(data: SynthData, val_share: float = 0.5, seed: int = 0) -> SplitDataset:
    """Biased log -> train; unbiased log (minus pairs already in train) -> validation/test."""
    cfg = data.config
    train_pairs = {(r.user, r.item) for r in data.train}
    unbiased = [r for r in data.test if (r.user, r.item) not in train_pairs]
    rng = np.random.default_rng(seed)
    to_val = rng.random(len(unbiased)) < val_share
    val = [r for r, f in zip(unbiased, to_val) if f]
    test = [r for r, f in zip(unbiased, to_val) if not f]
    return SplitDataset.build(cfg.num_users, cfg.num_items, data.train, val, test)


def write_synth(data: SynthData, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(out / "train.tsv", data.train)
    write_interactions(out / "test.tsv", data.test)
    manifest = {"config": asdict(data.config), **data.stats()}
    (out / "truth.json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return manifest


def generate_trend_log(num_items: int = 30, num_stages: int = 20, events_per_stage: int = 4000,
                       num_users: int = 1000, praise_coupling: float = 1.0, seed: int = 0) -> list[RawRecord]:
    """Star-rated log where each item's share of traffic and share of five-star ratings
    follow one latent trend, so praise and popularity co-move across stages."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, num_stages)
    base = rng.normal(0.0, 0.5, num_items)
    amp = rng.uniform(0.5, 1.5, num_items)
    freq = rng.uniform(0.5, 2.0, num_items)
    phase = rng.uniform(0, 2 * np.pi, num_items)
    slope = rng.normal(0.0, 1.0, num_items)
    quality = rng.normal(-0.5, 0.5, num_items)
    records = []
    for s in range(num_stages):
        trend = base + amp * np.sin(2 * np.pi * freq * t[s] + phase) + slope * t[s]
        share = np.exp(trend) / np.exp(trend).sum()
        items = rng.choice(num_items, size=events_per_stage, p=share)
        five = rng.random(events_per_stage) < expit(quality[items] + praise_coupling * trend[items])
        stars = np.where(five, 5.0, rng.integers(1, 9, size=events_per_stage) / 2.0)
        users = rng.integers(0, num_users, size=events_per_stage)
        stamps = s * ROUND_SPAN + np.sort(rng.integers(0, ROUND_SPAN, size=events_per_stage))
        records.extend(RawRecord(f"u{u}", f"i{i}", float(r), int(ts))
                       for u, i, r, ts in zip(users, items, stars, stamps))
    return records
