"""Raw rating files -> binarized, id-densified interaction lists."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .errors import ParseError
from .types import Interaction

POSITIVE_STARS = 5.0


class RawRecord(NamedTuple):
    user_raw: str
    item_raw: str
    rating: float
    timestamp: int


@dataclass
class IdMap:
    """Bidirectional raw-token <-> dense-id map, assigned in first-seen order."""

    users: dict[str, int] = field(default_factory=dict)
    items: dict[str, int] = field(default_factory=dict)

    def user_id(self, raw: str) -> int:
        return self.users.setdefault(raw, len(self.users))

    def item_id(self, raw: str) -> int:
        return self.items.setdefault(raw, len(self.items))

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_items(self) -> int:
        return len(self.items)

    def raw_users(self) -> list[str]:
        return sorted(self.users, key=self.users.__getitem__)

    def raw_items(self) -> list[str]:
        return sorted(self.items, key=self.items.__getitem__)

    def to_json(self) -> dict:
        return {"users": self.users, "items": self.items}

    @classmethod
    def from_json(cls, data: dict) -> "IdMap":
        return cls(users={str(k): int(v) for k, v in data["users"].items()},
                   items={str(k): int(v) for k, v in data["items"].items()})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "IdMap":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _parse_line(line: str, delimiter: str, line_no: int) -> RawRecord:
    parts = line.split(delimiter)
    if len(parts) < 4:
        raise ParseError(line_no, f"expected 4 fields separated by {delimiter!r}, got {len(parts)}")
    user, item, rating, ts = (p.strip() for p in parts[:4])
    if not user or not item:
        raise ParseError(line_no, "empty user or item token")
    try:
        value = float(rating)
    except ValueError:
        raise ParseError(line_no, f"non-numeric rating {rating!r}") from None
    if not (0.5 <= value <= 5.0) or math.isnan(value):
        raise ParseError(line_no, f"rating {value} outside [0.5, 5.0]")
    try:
        stamp = int(ts)
    except ValueError:
        raise ParseError(line_no, f"non-integer timestamp {ts!r}") from None
    if stamp < 0:
        raise ParseError(line_no, f"negative timestamp {stamp}")
    return RawRecord(user, item, value, stamp)


def parse_file(path: str | Path, delimiter: str = "::") -> list[RawRecord]:
    """Parse a delimited ratings file; fails on the first malformed line."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            records.append(_parse_line(line, delimiter, line_no))
    return records


def serialize_records(records: Iterable[RawRecord], path: str | Path, delimiter: str = "::") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(delimiter.join((r.user_raw, r.item_raw, repr(float(r.rating)), str(r.timestamp))) + "\n")


def binarize(records: Sequence[RawRecord], id_map: IdMap | None = None) -> list[Interaction]:
    """Map five-star ratings to 1 and everything else to 0, densifying ids on the way.

    Only accepts raw records, so a batch cannot be binarized twice.
    """
    id_map = IdMap() if id_map is None else id_map
    out = []
    for r in records:
        if not isinstance(r, RawRecord):
            raise TypeError(f"binarize expects RawRecord, got {type(r).__name__}; already binarized?")
        out.append(Interaction(id_map.user_id(r.user_raw), id_map.item_id(r.item_raw),
                               1 if r.rating == POSITIVE_STARS else 0, int(r.timestamp)))
    return out


def positives(interactions: Iterable[Interaction]) -> list[Interaction]:
    """Drop zero-rated rows and collapse duplicate pairs to their earliest timestamp."""
    best: dict[tuple[int, int], Interaction] = {}
    for row in interactions:
        if row.rating != 1:
            continue
        key = (row.user, row.item)
        prev = best.get(key)
        if prev is None or row.timestamp < prev.timestamp:
            best[key] = row
    return list(best.values())


def write_interactions(path: str | Path, interactions: Iterable[Interaction]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in interactions:
            fh.write(f"{r.user}\t{r.item}\t{r.rating}\t{r.timestamp}\n")


def read_interactions(path: str | Path) -> list[Interaction]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise ParseError(line_no, f"expected 4 tab-separated fields in {path}")
            try:
                out.append(Interaction(*(int(p) for p in parts)))
            except ValueError:
                raise ParseError(line_no, f"non-integer field in {path}") from None
    return out


def ingest(path: str | Path, delimiter: str = "::") -> tuple[list[Interaction], IdMap]:
    """Full ingestion: parse, binarize, densify. Returns all rows (zeros included)."""
    id_map = IdMap()
    return binarize(parse_file(path, delimiter), id_map), id_map
