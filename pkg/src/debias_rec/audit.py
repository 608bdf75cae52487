"""Popularity/conformity co-movement audit over timestamp-ordered stages."""
from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConstantSeries, EmptyInput
from .ingestion import POSITIVE_STARS, RawRecord


@dataclass(frozen=True)
class BiasSeries:
    item: str
    praise_rate: np.ndarray  # NaN where the stage has no five-star ratings at all
    popularity_share: np.ndarray

    @property
    def stages(self) -> int:
        return len(self.popularity_share)


def stage_split(records: Sequence[RawRecord], num_stages: int) -> list[list[RawRecord]]:
    """Sort by timestamp and cut into contiguous buckets whose sizes differ by at most one."""
    if not records:
        raise EmptyInput("no interactions to stage")
    if not 1 <= num_stages <= len(records):
        raise ConfigError(f"need 1 <= T <= N, got T={num_stages}, N={len(records)}")
    ordered = sorted(records, key=lambda r: r.timestamp)
    bounds = np.linspace(0, len(ordered), num_stages + 1).round().astype(int)
    return [ordered[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def stage_counts(buckets: Sequence[Sequence[RawRecord]]) -> list[tuple[Counter, Counter]]:
    """Per stage: (five-star counts per item, interaction counts per item)."""
    out = []
    for bucket in buckets:
        five = Counter(r.item_raw for r in bucket if r.rating == POSITIVE_STARS)
        total = Counter(r.item_raw for r in bucket)
        out.append((five, total))
    return out


def local_series(buckets: Sequence[Sequence[RawRecord]], item: str,
                 counts: list[tuple[Counter, Counter]] | None = None) -> BiasSeries:
    counts = stage_counts(buckets) if counts is None else counts
    praise, share = [], []
    for five, total in counts:
        r_sum, d_sum = sum(five.values()), sum(total.values())
        praise.append(five.get(item, 0) / r_sum if r_sum else np.nan)
        share.append(total.get(item, 0) / d_sum if d_sum else np.nan)
    return BiasSeries(item, np.array(praise), np.array(share))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ConfigError("pearson needs two equal-length series of length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise ConstantSeries("pearson is undefined for a constant series")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def series_pearson(series: BiasSeries) -> float:
    """Pearson over pairwise-complete stages."""
    ok = ~(np.isnan(series.praise_rate) | np.isnan(series.popularity_share))
    return pearson(series.praise_rate[ok], series.popularity_share[ok])


def top_items(records: Sequence[RawRecord], n: int = 10) -> list[str]:
    counts = Counter(r.item_raw for r in records)
    return [item for item, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n]]


@dataclass
class AuditResult:
    series: list[BiasSeries]
    pearson: dict[str, float]

    def to_csv(self) -> str:
        stages = self.series[0].stages if self.series else 0
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["item"] + [f"r_{t}" for t in range(stages)] + [f"m_{t}" for t in range(stages)] + ["pearson"])
        for s in self.series:
            writer.writerow([s.item] + [repr(float(v)) for v in s.praise_rate]
                            + [repr(float(v)) for v in s.popularity_share] + [repr(self.pearson[s.item])])
        return buf.getvalue()


def audit(records: Sequence[RawRecord], num_stages: int = 20, n_items: int = 10) -> AuditResult:
    buckets = stage_split(records, num_stages)
    counts = stage_counts(buckets)
    series = [local_series(buckets, item, counts) for item in top_items(records, n_items)]
    return AuditResult(series, {s.item: series_pearson(s) for s in series})
