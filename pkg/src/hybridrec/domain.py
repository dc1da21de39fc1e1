"""Core record types, relevance labels and dataset validation."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

EVENTS = ("view", "click", "search", "purchase")
DEVICES = ("mobile", "desktop", "other")
DAYPARTS = ("morning", "afternoon", "evening", "night")

# implicit-feedback relevance when no explicit rating is present
EVENT_LABELS = {"view": 0.2, "click": 0.4, "search": 0.3, "purchase": 1.0}

MAX_ID_BYTES = 256


def _valid_id(value) -> bool:
    return isinstance(value, str) and 0 < len(value.encode("utf-8")) <= MAX_ID_BYTES


@dataclass(frozen=True)
class ContextRecord:
    device: str = "other"
    daypart: str = "morning"
    # sorted (key, value) pairs; pass a dict and it is normalized
    extra: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        extra = self.extra
        if isinstance(extra, Mapping):
            extra = extra.items()
        object.__setattr__(
            self, "extra", tuple(sorted((str(k).lower(), str(v)) for k, v in extra))
        )

    @property
    def extra_dict(self) -> dict[str, str]:
        return dict(self.extra)


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    event: str
    timestamp: int
    rating: float | None = None
    context: ContextRecord = field(default_factory=ContextRecord)


@dataclass(frozen=True)
class ItemRecord:
    item: str
    title: str
    description: str
    category: str
    price: float


@dataclass(frozen=True)
class ReviewRecord:
    user: str
    item: str
    text: str
    timestamp: int


@dataclass(frozen=True)
class ScoreTriple:
    cbf: float
    cf: float
    llm: float

    def as_array(self) -> np.ndarray:
        return np.array([self.cbf, self.cf, self.llm], dtype=np.float64)


class EntityIndex:
    """Interns opaque string ids to dense indices in sorted-id order.

    Sorting makes index order coincide with id order, which the retrieval
    tie-break rule relies on.
    """

    def __init__(self, ids: Iterable[str]):
        self.ids: tuple[str, ...] = tuple(sorted(set(ids)))
        self._pos = {k: i for i, k in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, key) -> bool:
        return key in self._pos

    def __iter__(self) -> Iterator[str]:
        return iter(self.ids)

    def get(self, key: str) -> int | None:
        return self._pos.get(key)

    def index(self, key: str) -> int:
        return self._pos[key]


def relevance_labels(interactions: Sequence[Interaction]) -> dict[tuple[str, str], float]:
    """Map every observed (user, item) pair to a relevance label in [0, 1].

    Explicit ratings are min-max scaled over the ratings present in
    ``interactions``; events without a rating use :data:`EVENT_LABELS`.
    The label of a pair is the max over its events.
    """
    ratings = [x.rating for x in interactions if x.rating is not None]
    lo, hi = (min(ratings), max(ratings)) if ratings else (0.0, 1.0)
    span = hi - lo
    labels: dict[tuple[str, str], float] = {}
    for x in interactions:
        if x.rating is not None:
            value = (x.rating - lo) / span if span > 0 else float(x.rating)
        else:
            value = EVENT_LABELS[x.event]
        key = (x.user, x.item)
        prev = labels.get(key)
        if prev is None or value > prev:
            labels[key] = value
    return labels


class RatingsMatrix:
    """Sparse (user, item) -> relevance map.

    Absent pairs are *unobserved* (``get`` returns ``None``); an observed 0.0
    is kept distinct everywhere, including in the sparse export where the
    observation mask is returned separately from the values.
    """

    def __init__(self, entries: Mapping[tuple[str, str], float]):
        self._data: dict[tuple[str, str], float] = {}
        for (u, i), v in entries.items():
            v = float(v)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"relevance {v} for ({u}, {i}) outside [0, 1]")
            self._data[(u, i)] = v
        self._rows: dict[str, dict[str, float]] = {}
        for (u, i), v in self._data.items():
            self._rows.setdefault(u, {})[i] = v

    @classmethod
    def from_interactions(cls, interactions: Sequence[Interaction]) -> "RatingsMatrix":
        return cls(relevance_labels(interactions))

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, pair) -> bool:
        return pair in self._data

    def get(self, user: str, item: str) -> float | None:
        return self._data.get((user, item))

    def is_observed(self, user: str, item: str) -> bool:
        return (user, item) in self._data

    def row(self, user: str) -> dict[str, float]:
        return dict(self._rows.get(user, {}))

    def items(self):
        return self._data.items()

    def to_sparse(self, users: EntityIndex, items: EntityIndex) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Return ``(values, mask)`` CSR matrices; pairs outside the indices are dropped."""
        rows, cols, vals = [], [], []
        for (u, i), v in self._data.items():
            r, c = users.get(u), items.get(i)
            if r is None or c is None:
                continue
            rows.append(r)
            cols.append(c)
            vals.append(v)
        shape = (len(users), len(items))
        rows_a = np.asarray(rows, dtype=np.int64)
        cols_a = np.asarray(cols, dtype=np.int64)
        values = sp.csr_matrix((np.asarray(vals, dtype=np.float64), (rows_a, cols_a)), shape=shape)
        mask = sp.csr_matrix((np.ones(len(rows_a)), (rows_a, cols_a)), shape=shape)
        values.sort_indices()
        mask.sort_indices()
        return values, mask


@dataclass(frozen=True)
class Finding:
    kind: str
    detail: str


@dataclass
class ValidationReport:
    errors: list[Finding] = field(default_factory=list)
    warnings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def count(self, kind: str) -> int:
        return sum(f.kind == kind for f in self.errors + self.warnings)

    def summary(self) -> dict[str, int]:
        return dict(Counter(f.kind for f in self.errors + self.warnings))


def validate_dataset(
    users: Iterable[str] | None,
    items: Sequence[ItemRecord],
    interactions: Sequence[Interaction],
    reviews: Sequence[ReviewRecord],
) -> ValidationReport:
    """Check referential integrity and field ranges; never raises.

    ``users`` may be ``None``, in which case the user set is whatever the
    interactions and reviews mention.
    """
    report = ValidationReport()
    err = report.errors.append

    item_ids: set[str] = set()
    for it in items:
        if not _valid_id(it.item):
            err(Finding("InvalidId", f"item id {it.item!r}"))
        if it.item in item_ids:
            err(Finding("DuplicateId", f"item {it.item}"))
        item_ids.add(it.item)
        if not isinstance(it.price, (int, float)) or not math.isfinite(it.price) or it.price < 0:
            err(Finding("PriceOutOfRange", f"item {it.item} price {it.price!r}"))
        if not it.title and not it.description:
            report.warnings.append(Finding("ItemWithoutText", f"item {it.item}"))

    user_ids: set[str] | None = None
    if users is not None:
        user_ids = set()
        for u in users:
            if not _valid_id(u):
                err(Finding("InvalidId", f"user id {u!r}"))
            if u in user_ids:
                err(Finding("DuplicateId", f"user {u}"))
            user_ids.add(u)

    for n, x in enumerate(interactions):
        where = f"interaction #{n} ({x.user}, {x.item})"
        if not _valid_id(x.user):
            err(Finding("InvalidId", f"{where}: user id"))
        elif user_ids is not None and x.user not in user_ids:
            err(Finding("DanglingUser", where))
        if x.item not in item_ids:
            err(Finding("DanglingItem", where))
        if x.event not in EVENTS:
            err(Finding("InvalidEvent", f"{where}: {x.event!r}"))
        if not isinstance(x.timestamp, int) or x.timestamp < 0:
            err(Finding("TimestampOutOfRange", f"{where}: {x.timestamp!r}"))
        if x.rating is not None and not (
            isinstance(x.rating, (int, float)) and math.isfinite(x.rating) and 0.0 <= x.rating <= 1.0
        ):
            err(Finding("RatingOutOfRange", f"{where}: {x.rating!r}"))
        ctx = x.context
        if ctx.device not in DEVICES or ctx.daypart not in DAYPARTS:
            err(Finding("InvalidContext", f"{where}: {ctx.device!r}/{ctx.daypart!r}"))

    for n, r in enumerate(reviews):
        where = f"review #{n} ({r.user}, {r.item})"
        if not _valid_id(r.user):
            err(Finding("InvalidId", f"{where}: user id"))
        elif user_ids is not None and r.user not in user_ids:
            err(Finding("DanglingUser", where))
        if r.item not in item_ids:
            err(Finding("DanglingItem", where))
        if not r.text.strip():
            err(Finding("EmptyReviewText", where))
        if not isinstance(r.timestamp, int) or r.timestamp < 0:
            err(Finding("TimestampOutOfRange", f"{where}: {r.timestamp!r}"))

    return report
