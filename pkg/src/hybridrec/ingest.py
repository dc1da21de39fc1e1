"""Loading, cleaning and persisting datasets as line-delimited JSON.

Three files make up a dataset directory::

    items.jsonl         {"item_id", "title", "description", "category", "price"}
    reviews.jsonl       {"user_id", "item_id", "text", "timestamp"}
    interactions.jsonl  {"user_id", "item_id", "event", "timestamp", "rating"?,
                         "context": {"device", "daypart", ...}}

Cleaning lowercases and whitespace-collapses text, drops exact duplicates,
min-max scales prices into [0, 1] and sorts interactions by (user, timestamp).
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from hybridrec.domain import (
    DAYPARTS,
    DEVICES,
    EVENTS,
    ContextRecord,
    Interaction,
    ItemRecord,
    ReviewRecord,
    _valid_id,
    validate_dataset,
)
from hybridrec.errors import FileMissing, InvalidDataset, SchemaError

logger = logging.getLogger(__name__)

ITEMS_FILE = "items.jsonl"
REVIEWS_FILE = "reviews.jsonl"
INTERACTIONS_FILE = "interactions.jsonl"

MALFORMED_LIMIT = 0.10

_ITEM_FIELDS = ("item_id", "title", "description", "category", "price")
_REVIEW_FIELDS = ("user_id", "item_id", "text", "timestamp")
_INTERACTION_FIELDS = ("user_id", "item_id", "event", "timestamp", "rating", "context")


def clean_text(text: str) -> str:
    return " ".join(text.split()).lower()


def minmax(values: Sequence[float]) -> list[float]:
    """Scale into [0, 1]; a constant sequence maps to 0.5 everywhere."""
    if not values:
        return []
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.5] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def daypart_of(timestamp: int) -> str:
    hour = (timestamp // 3600) % 24
    if 5 <= hour < 12:
        return "morning"
    if 12 <= hour < 17:
        return "afternoon"
    if 17 <= hour < 22:
        return "evening"
    return "night"


def _interaction_key(x: Interaction):
    return (x.user, x.item, x.event, x.timestamp, x.rating, x.context)


@dataclass(frozen=True)
class DatasetBundle:
    items: tuple[ItemRecord, ...] = ()
    reviews: tuple[ReviewRecord, ...] = ()
    interactions: tuple[Interaction, ...] = ()
    # load-time diagnostics; not part of equality
    warnings: Counter = field(default_factory=Counter, compare=False, repr=False)

    @property
    def users(self) -> tuple[str, ...]:
        seen = {x.user for x in self.interactions}
        seen.update(r.user for r in self.reviews)
        return tuple(sorted(seen))

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(it.item for it in self.items)

    @classmethod
    def from_records(
        cls,
        items: Iterable[ItemRecord],
        reviews: Iterable[ReviewRecord],
        interactions: Iterable[Interaction],
        warnings: Counter | None = None,
    ) -> "DatasetBundle":
        """Canonicalize already-parsed records (dedup, sort, drop dangling refs).

        Text and prices are taken as given; :func:`load_bundle` cleans those
        before calling this.
        """
        warnings = Counter() if warnings is None else warnings
        by_id: dict[str, ItemRecord] = {}
        for it in items:
            prev = by_id.get(it.item)
            if prev is None:
                by_id[it.item] = it
            elif prev != it:
                warnings["conflicting_item_dropped"] += 1
        known = set(by_id)

        def _dedup(records, key):
            seen, out = set(), []
            for r in records:
                k = key(r)
                if k in seen:
                    warnings["duplicate_dropped"] += 1
                    continue
                seen.add(k)
                if r.item not in known:
                    warnings["dangling_item_dropped"] += 1
                    continue
                out.append(r)
            return out

        inter = _dedup(interactions, _interaction_key)
        revs = _dedup(reviews, lambda r: (r.user, r.item, r.text, r.timestamp))
        # sorted() is stable, so timestamp ties keep input order
        inter.sort(key=lambda x: (x.user, x.timestamp))
        revs.sort(key=lambda r: (r.user, r.timestamp))
        return cls(
            items=tuple(by_id[k] for k in sorted(by_id)),
            reviews=tuple(revs),
            interactions=tuple(inter),
            warnings=warnings,
        )

    def validate(self):
        return validate_dataset(None, self.items, self.interactions, self.reviews)


@dataclass(frozen=True)
class BundlePaths:
    items: Path
    reviews: Path
    interactions: Path

    @classmethod
    def in_dir(cls, directory) -> "BundlePaths":
        d = Path(directory)
        return cls(d / ITEMS_FILE, d / REVIEWS_FILE, d / INTERACTIONS_FILE)


class _Malformed(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


def _req_str(obj: dict, name: str, *, is_id: bool = False) -> str:
    value = obj.get(name)
    if not isinstance(value, str):
        raise _Malformed(name, "missing or not a string")
    if is_id and not _valid_id(value):
        raise _Malformed(name, "empty or longer than 256 bytes")
    return value


def _req_int(obj: dict, name: str) -> int:
    value = obj.get(name)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _Malformed(name, "missing or not a number")
    if isinstance(value, float):
        if not value.is_integer():
            raise _Malformed(name, "not an integer")
        value = int(value)
    if value < 0:
        raise _Malformed(name, "negative")
    return value


def _req_real(obj: dict, name: str) -> float:
    value = obj.get(name)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise _Malformed(name, "missing or not a finite number")
    return float(value)


def item_from_json(obj: dict) -> ItemRecord:
    price = _req_real(obj, "price")
    if price < 0:
        raise _Malformed("price", "negative")
    return ItemRecord(
        item=_req_str(obj, "item_id", is_id=True),
        title=clean_text(_req_str(obj, "title")),
        description=clean_text(_req_str(obj, "description")),
        category=clean_text(_req_str(obj, "category")),
        price=price,
    )


def review_from_json(obj: dict) -> ReviewRecord:
    text = clean_text(_req_str(obj, "text"))
    if not text:
        raise _Malformed("text", "empty after trimming")
    return ReviewRecord(
        user=_req_str(obj, "user_id", is_id=True),
        item=_req_str(obj, "item_id", is_id=True),
        text=text,
        timestamp=_req_int(obj, "timestamp"),
    )


def _parse_context(raw, timestamp: int) -> ContextRecord:
    if raw is None:
        return ContextRecord("other", daypart_of(timestamp))
    if not isinstance(raw, dict):
        raise _Malformed("context", "not an object")
    device = str(raw.get("device", "other")).lower()
    daypart = str(raw.get("daypart", daypart_of(timestamp))).lower()
    if device not in DEVICES:
        raise _Malformed("context.device", f"unknown device {device!r}")
    if daypart not in DAYPARTS:
        raise _Malformed("context.daypart", f"unknown daypart {daypart!r}")
    extra = {k: v if isinstance(v, str) else json.dumps(v, sort_keys=True)
             for k, v in raw.items() if k not in ("device", "daypart")}
    return ContextRecord(device, daypart, extra)


def interaction_from_json(obj: dict) -> Interaction:
    event = _req_str(obj, "event").lower()
    if event not in EVENTS:
        raise _Malformed("event", f"unknown event {event!r}")
    ts = _req_int(obj, "timestamp")
    rating = None
    if obj.get("rating") is not None:
        rating = _req_real(obj, "rating")
        if not 0.0 <= rating <= 1.0:
            raise _Malformed("rating", "outside [0, 1]")
    return Interaction(
        user=_req_str(obj, "user_id", is_id=True),
        item=_req_str(obj, "item_id", is_id=True),
        event=event,
        timestamp=ts,
        rating=rating,
        context=_parse_context(obj.get("context"), ts),
    )


def _read_jsonl(path: Path, parse, known_fields, warnings: Counter, label: str) -> list:
    if not path.is_file():
        raise FileMissing(f"{label} file not found: {path}")
    records, bad, total = [], [], 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            total += 1
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise _Malformed("<record>", "not a JSON object")
                records.append(parse(obj))
            except json.JSONDecodeError as exc:
                bad.append((lineno, "<json>", str(exc)))
                continue
            except _Malformed as exc:
                bad.append((lineno, exc.field, str(exc)))
                continue
            unknown = set(obj) - set(known_fields)
            if unknown:
                warnings[f"{label}_unknown_fields"] += 1
    if bad:
        warnings[f"{label}_malformed_skipped"] += len(bad)
        lineno, fld, msg = bad[0]
        if len(bad) > MALFORMED_LIMIT * total:
            raise SchemaError(
                f"{path.name}: {len(bad)}/{total} malformed lines; first at line {lineno} field {fld}: {msg}",
                line=lineno,
                field=fld,
            )
        logger.warning("%s: skipped %d malformed line(s)", path.name, len(bad))
    return records


def load_bundle(source) -> DatasetBundle:
    """Load and clean a dataset from a directory or a :class:`BundlePaths`."""
    paths = source if isinstance(source, BundlePaths) else BundlePaths.in_dir(source)
    warnings: Counter = Counter()
    items = _read_jsonl(paths.items, item_from_json, _ITEM_FIELDS, warnings, "items")
    reviews = _read_jsonl(paths.reviews, review_from_json, _REVIEW_FIELDS, warnings, "reviews")
    interactions = _read_jsonl(
        paths.interactions, interaction_from_json, _INTERACTION_FIELDS, warnings, "interactions"
    )

    # normalize prices over the deduplicated catalog so repeats don't skew the range
    first: dict[str, ItemRecord] = {}
    for it in items:
        first.setdefault(it.item, it)
    scaled = dict(zip(first, minmax([it.price for it in first.values()])))
    items = [ItemRecord(it.item, it.title, it.description, it.category, scaled[it.item])
             if first[it.item] == it else it for it in items]

    bundle = DatasetBundle.from_records(items, reviews, interactions, warnings)
    report = bundle.validate()
    if not report.ok:
        raise InvalidDataset(f"{len(report.errors)} validation error(s): {report.errors[0]}")
    if warnings:
        logger.info("load_bundle diagnostics: %s", dict(warnings))
    return bundle


def item_to_json(it: ItemRecord) -> dict:
    return {"item_id": it.item, "title": it.title, "description": it.description,
            "category": it.category, "price": it.price}


def review_to_json(r: ReviewRecord) -> dict:
    return {"user_id": r.user, "item_id": r.item, "text": r.text, "timestamp": r.timestamp}


def interaction_to_json(x: Interaction) -> dict:
    obj = {"user_id": x.user, "item_id": x.item, "event": x.event, "timestamp": x.timestamp}
    if x.rating is not None:
        obj["rating"] = x.rating
    ctx = {"device": x.context.device, "daypart": x.context.daypart}
    ctx.update(x.context.extra)
    obj["context"] = ctx
    return obj


def dump_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"


def write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dump_line(row))


def save_bundle(bundle: DatasetBundle, path) -> None:
    """Write the canonical three-file form into directory ``path``."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    write_jsonl(d / ITEMS_FILE, map(item_to_json, bundle.items))
    write_jsonl(d / REVIEWS_FILE, map(review_to_json, bundle.reviews))
    write_jsonl(d / INTERACTIONS_FILE, map(interaction_to_json, bundle.interactions))


def temporal_split(bundle: DatasetBundle, test_fraction: float = 0.2) -> tuple[DatasetBundle, DatasetBundle]:
    """Per user, hold out the most recent ``test_fraction`` of interactions.

    Reviews written at or after a user's first held-out interaction go to the
    held-out side as well. Both halves share the full item catalog.
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must be in [0, 1)")
    by_user: dict[str, list[Interaction]] = {}
    for x in bundle.interactions:
        by_user.setdefault(x.user, []).append(x)
    head, tail, cutoff = [], [], {}
    for user, rows in by_user.items():
        n_test = int(math.floor(len(rows) * test_fraction + 0.5))
        split = len(rows) - n_test
        head.extend(rows[:split])
        tail.extend(rows[split:])
        if n_test:
            cutoff[user] = rows[split].timestamp
    rev_head, rev_tail = [], []
    for r in bundle.reviews:
        c = cutoff.get(r.user)
        (rev_tail if c is not None and r.timestamp >= c else rev_head).append(r)
    return (
        DatasetBundle(bundle.items, tuple(rev_head), tuple(head)),
        DatasetBundle(bundle.items, tuple(rev_tail), tuple(tail)),
    )
