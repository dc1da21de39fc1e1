"""TF-IDF feature extraction for items and users.

Items and users share one vector space so a single cosine compares them:
``[ text block (vocabulary size) | context block (device + daypart) ]``.
Items leave the context block at zero.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from hybridrec.domain import DAYPARTS, DEVICES, EntityIndex, ItemRecord, relevance_labels
from hybridrec.errors import CorruptArtifact, EmptyCorpus, HashMismatch, UnknownUser
from hybridrec.ingest import DatasetBundle

FORMAT = "hybridrec.feature_space"
FORMAT_VERSION = 1

CONTEXT_DIM = len(DEVICES) + len(DAYPARTS)
SECONDS_PER_DAY = 86400.0

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def item_text(item: ItemRecord) -> str:
    return f"{item.title} {item.description}"


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    df: tuple[int, ...]
    idf: np.ndarray
    n_docs: int
    max_size: int

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def get(self, token: str) -> int | None:
        return self._index.get(token)

    def idf_of(self, token: str) -> float:
        return float(self.idf[self._index[token]])


def build_vocabulary(documents: Sequence[Sequence[str]], max_size: int) -> Vocabulary:
    """Keep the ``max_size`` most frequent tokens by document frequency.

    Ties in document frequency are broken alphabetically; the kept tokens
    are indexed in that rank order. ``idf = ln(N / (1 + df)) + 1``.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    df: Counter = Counter()
    for doc in documents:
        df.update(set(doc))
    if not df:
        raise EmptyCorpus("no tokens in any item or review text")
    ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
    n = len(documents)
    tokens = tuple(t for t, _ in ranked)
    dfs = tuple(c for _, c in ranked)
    idf = np.array([math.log(n / (1 + c)) + 1.0 for c in dfs], dtype=np.float64)
    # ln(N/(N+1)) + 1 > 0 for N >= 1, so no clipping is ever needed
    return Vocabulary(tokens, dfs, idf, n, max_size)


@dataclass(frozen=True)
class FeatureSpace:
    vocab: Vocabulary
    half_life_days: float = 30.0
    context_weight: float = 0.25

    @property
    def text_dim(self) -> int:
        return len(self.vocab)

    @property
    def context_dim(self) -> int:
        return CONTEXT_DIM

    @property
    def total_dim(self) -> int:
        return self.text_dim + self.context_dim

    def to_json(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "text_dim": self.text_dim,
            "context_dim": self.context_dim,
            "max_vocab": self.vocab.max_size,
            "n_docs": self.vocab.n_docs,
            "half_life_days": self.half_life_days,
            "context_weight": self.context_weight,
            "tokens": list(self.vocab.tokens),
            "df": list(self.vocab.df),
            "idf": [float(x) for x in self.vocab.idf],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSpace":
        if obj.get("format") != FORMAT or obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"not a v{FORMAT_VERSION} feature space file")
        vocab = Vocabulary(
            tuple(obj["tokens"]), tuple(obj["df"]), np.array(obj["idf"], dtype=np.float64),
            int(obj["n_docs"]), int(obj["max_vocab"]),
        )
        return cls(vocab, float(obj["half_life_days"]), float(obj["context_weight"]))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def save(self, path) -> None:
        obj = self.to_json()
        obj["fingerprint"] = self.fingerprint()
        Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FeatureSpace":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
            space = cls.from_json(obj)
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptArtifact(f"{path}: unreadable feature space ({exc})") from exc
        stored = obj.get("fingerprint")
        if stored is not None and stored != space.fingerprint():
            raise HashMismatch(f"{path}: stored fingerprint {stored} does not match contents")
        return space


def build_feature_space(
    bundle: DatasetBundle, max_vocab: int, half_life_days: float = 30.0, context_weight: float = 0.25
) -> FeatureSpace:
    if half_life_days <= 0:
        raise ValueError("half_life_days must be > 0")
    docs = [tokenize(item_text(it)) for it in bundle.items]
    docs += [tokenize(r.text) for r in bundle.reviews]
    return FeatureSpace(build_vocabulary(docs, max_vocab), float(half_life_days), float(context_weight))


def _tfidf_rows(texts: Sequence[str], space: FeatureSpace) -> sp.csr_matrix:
    """L2-normalized tf-idf rows over the vocabulary; rows with no known token stay zero."""
    vocab = space.vocab
    indptr, indices, data = [0], [], []
    for text in texts:
        counts = Counter(j for j in map(vocab.get, tokenize(text)) if j is not None)
        cols = sorted(counts)
        vals = np.array([counts[j] for j in cols], dtype=np.float64) * vocab.idf[cols]
        norm = math.sqrt(float(vals @ vals)) if cols else 0.0
        indices.extend(cols)
        data.extend((vals / norm).tolist() if norm > 0 else [])
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(texts), space.text_dim),
    )


def item_text_matrix(items: Sequence[ItemRecord], space: FeatureSpace) -> sp.csr_matrix:
    return _tfidf_rows([item_text(it) for it in items], space)


def item_vector(item: ItemRecord, space: FeatureSpace) -> np.ndarray:
    out = np.zeros(space.total_dim)
    out[: space.text_dim] = item_text_matrix([item], space).toarray()[0]
    return out


def item_matrix(items: Sequence[ItemRecord], space: FeatureSpace) -> np.ndarray:
    """Dense, C-contiguous ``(n_items, total_dim)`` matrix of item vectors."""
    out = np.zeros((len(items), space.total_dim))
    text = item_text_matrix(items, space)
    out[:, : space.text_dim] = text.toarray()
    return out


def recency_weight(age_seconds, half_life_days: float):
    """``0.5 ** (age / half_life)``; strictly decreasing in age."""
    return np.power(0.5, np.asarray(age_seconds, dtype=np.float64) / (half_life_days * SECONDS_PER_DAY))


def interaction_weights(
    bundle: DatasetBundle, users: EntityIndex, items: EntityIndex, half_life_days: float
) -> sp.csr_matrix:
    """Per (user, item): recency of the latest event times the pair's relevance label.

    Ages are measured from the newest interaction in the bundle.
    """
    labels = relevance_labels(bundle.interactions)
    latest: dict[tuple[str, str], int] = {}
    for x in bundle.interactions:
        key = (x.user, x.item)
        if latest.get(key, -1) < x.timestamp:
            latest[key] = x.timestamp
    now = max(latest.values(), default=0)
    rows, cols, vals = [], [], []
    for (u, i), ts in latest.items():
        r, c = users.get(u), items.get(i)
        if r is None or c is None:
            continue
        rows.append(r)
        cols.append(c)
        vals.append(labels[(u, i)] * float(recency_weight(now - ts, half_life_days)))
    return sp.csr_matrix(
        (np.array(vals, dtype=np.float64), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(len(users), len(items)),
    )


def context_histograms(bundle: DatasetBundle, users: EntityIndex) -> np.ndarray:
    """Frequency-normalized device and daypart histograms, one row per user."""
    out = np.zeros((len(users), CONTEXT_DIM))
    dev = {d: k for k, d in enumerate(DEVICES)}
    day = {d: len(DEVICES) + k for k, d in enumerate(DAYPARTS)}
    counts = np.zeros(len(users))
    for x in bundle.interactions:
        r = users.get(x.user)
        if r is None:
            continue
        out[r, dev[x.context.device]] += 1.0
        out[r, day[x.context.daypart]] += 1.0
        counts[r] += 1.0
    nz = counts > 0
    out[nz] /= counts[nz, None]
    return out


def user_matrix(
    bundle: DatasetBundle,
    space: FeatureSpace,
    users: EntityIndex,
    items: EntityIndex | None = None,
    item_text_rows: sp.csr_matrix | None = None,
    half_life_days: float | None = None,
) -> np.ndarray:
    """Dense ``(n_users, total_dim)`` matrix of user vectors.

    ``item_text_rows`` must be row-aligned with ``items`` when given; passing
    it avoids re-tokenizing the catalog.
    """
    half_life = space.half_life_days if half_life_days is None else float(half_life_days)
    if half_life <= 0:
        raise ValueError("half_life_days must be > 0")
    if items is None:
        items = EntityIndex(it.item for it in bundle.items)
    if item_text_rows is None:
        by_id = {it.item: it for it in bundle.items}
        item_text_rows = item_text_matrix([by_id[i] for i in items], space)

    w = interaction_weights(bundle, users, items, half_life)
    text = (w @ item_text_rows).tocsr()
    rev_users = [users.get(r.user) for r in bundle.reviews]
    keep = [k for k, u in enumerate(rev_users) if u is not None]
    if keep:
        rev = _tfidf_rows([bundle.reviews[k].text for k in keep], space)
        assign = sp.csr_matrix(
            (np.ones(len(keep)), (np.array([rev_users[k] for k in keep]), np.arange(len(keep)))),
            shape=(len(users), len(keep)),
        )
        text = text + assign @ rev

    out = np.zeros((len(users), space.total_dim))
    out[:, : space.text_dim] = text.toarray()
    block = out[:, : space.text_dim]
    norms = np.sqrt(np.einsum("ij,ij->i", block, block))
    nz = norms > 0
    block[nz] /= norms[nz, None]
    out[:, space.text_dim:] = space.context_weight * context_histograms(bundle, users)
    return out


def user_vector(
    user: str, bundle: DatasetBundle, space: FeatureSpace, half_life_days: float | None = None
) -> np.ndarray:
    if user not in set(bundle.users):
        raise UnknownUser(f"unknown user {user!r}")
    return user_matrix(bundle, space, EntityIndex([user]), half_life_days=half_life_days)[0]
