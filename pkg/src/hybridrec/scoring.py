"""Component scorers (content, collaborative, semantic) and exact top-k retrieval."""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from hybridrec.domain import EntityIndex, RatingsMatrix, ScoreTriple
from hybridrec.errors import DimMismatch, FileMissing, MissingEmbedding, SchemaError, UnknownItem, UnknownUser
from hybridrec.features import (
    FeatureSpace,
    interaction_weights,
    item_matrix,
    item_text,
    item_text_matrix,
    tokenize,
    user_matrix,
)
from hybridrec.ingest import DatasetBundle

CF_VARIANTS = ("normalized", "raw")


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"dims differ: {a.shape} vs {b.shape}")
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization; zero rows stay zero."""
    m = np.array(m, dtype=np.float64, order="C")
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    nz = norms > 0
    m[nz] /= norms[nz, None]
    return m


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Per row, indices of the ``k`` largest scores, ties by ascending index.

    Equivalent to ``np.argsort(-scores, axis=1, kind="stable")[:, :k]`` but
    only partitions rather than sorting whole rows.
    """
    scores = np.atleast_2d(scores)
    n_rows, n = scores.shape
    if k >= n:
        return np.argsort(-scores, axis=1, kind="stable")
    if k <= 0:
        return np.empty((n_rows, 0), dtype=np.int64)
    part = np.argpartition(-scores, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(scores, part, axis=1).min(axis=1)[:, None]
    strict = scores > kth
    eq = scores == kth
    need = k - strict.sum(axis=1, keepdims=True)
    chosen = strict | (eq & (np.cumsum(eq, axis=1) <= need))
    idx = np.nonzero(chosen)[1].reshape(n_rows, k)
    vals = np.take_along_axis(scores, idx, axis=1)
    order = np.argsort(-vals, axis=1, kind="stable")
    return np.take_along_axis(idx, order, axis=1)


@dataclass(frozen=True)
class ItemMatrix:
    """Contiguous row-major item vectors, L2-normalized, rows in item-id order."""

    index: EntityIndex
    vectors: np.ndarray

    @classmethod
    def build(cls, items, space: FeatureSpace) -> "ItemMatrix":
        items = sorted(items, key=lambda it: it.item)
        index = EntityIndex(it.item for it in items)
        return cls(index, np.ascontiguousarray(normalize_rows(item_matrix(items, space))))

    def __len__(self) -> int:
        return len(self.index)

    def row(self, item: str) -> np.ndarray:
        j = self.index.get(item)
        if j is None:
            raise UnknownItem(f"unknown item {item!r}")
        return self.vectors[j]


@dataclass(frozen=True)
class NeighborModel:
    """Top-``m`` most similar other users per user, sorted by similarity descending."""

    index: EntityIndex
    neighbors: np.ndarray  # (n_users, m) user rows
    sims: np.ndarray  # (n_users, m)
    m: int

    @classmethod
    def build(cls, index: EntityIndex, user_vectors: np.ndarray, m: int = 50,
              clamp_negative: bool = False, chunk: int = 1024) -> "NeighborModel":
        n = len(index)
        m = max(0, min(int(m), n - 1))
        x = normalize_rows(user_vectors)
        nbr = np.zeros((n, m), dtype=np.int64)
        sims = np.zeros((n, m))
        for start in range(0, n, chunk):
            stop = min(n, start + chunk)
            block = x[start:stop] @ x.T
            if clamp_negative:
                np.maximum(block, 0.0, out=block)
            block[np.arange(stop - start), np.arange(start, stop)] = -np.inf
            top = topk_indices(block, m)
            nbr[start:stop] = top
            sims[start:stop] = np.take_along_axis(block, top, axis=1)
        return cls(index, nbr, sims, m)

    def of(self, user: str) -> list[tuple[str, float]]:
        r = self.index.get(user)
        if r is None:
            raise UnknownUser(f"unknown user {user!r}")
        return [(self.index.ids[v], float(s)) for v, s in zip(self.neighbors[r], self.sims[r])]

    def weight_matrix(self) -> sp.csr_matrix:
        n = len(self.index)
        rows = np.repeat(np.arange(n), self.m)
        return sp.csr_matrix((self.sims.ravel(), (rows, self.neighbors.ravel())), shape=(n, n))


def score_cf(user: str, item: str, neighbors: NeighborModel, ratings: RatingsMatrix,
             variant: str = "normalized") -> float:
    """Similarity-weighted sum of neighbors' relevance for ``item``.

    Unobserved relevance counts as 0 in the sum. The normalized variant
    divides by the total |similarity| of neighbors that did observe ``item``.
    """
    if variant not in CF_VARIANTS:
        raise ValueError(f"unknown cf variant {variant!r}")
    num = den = 0.0
    for v, s in neighbors.of(user):
        r = ratings.get(v, item)
        if r is None:
            continue
        num += s * r
        den += abs(s)
    if variant == "raw":
        return num
    return num / den if den > 0 else 0.0


class SemanticScorer:
    """Pair scorer standing in for a language-model relevance signal.

    Subclasses produce one representation per user and per item; the pair
    score is a function of the two, and ``pair_repr`` gives the vector fed
    to a learned output head.
    """

    name = "semantic"
    pair_dim = 0

    def embed(self, bundle: DatasetBundle, users: EntityIndex, items: EntityIndex,
              weights: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def score(self, x_u: np.ndarray, y_i: np.ndarray) -> float:
        return cosine(x_u, y_i)

    def score_matrix(self, user_reprs: np.ndarray, item_reprs: np.ndarray) -> np.ndarray:
        """Scores for every (user row, item row); representations come from ``embed``."""
        return user_reprs @ item_reprs.T

    def pair_repr(self, x_u: np.ndarray, y_i: np.ndarray) -> np.ndarray:
        return np.asarray(x_u) * np.asarray(y_i)

    def describe(self) -> dict:
        return {"name": self.name}


class ConstantScorer(SemanticScorer):
    name = "constant"
    pair_dim = 0

    def __init__(self, value: float = 0.5):
        self.value = float(value)

    def embed(self, bundle, users, items, weights):
        return np.zeros((len(users), 0)), np.zeros((len(items), 0))

    def score(self, x_u, y_i) -> float:
        return self.value

    def score_matrix(self, user_reprs, item_reprs):
        return np.full((len(user_reprs), len(item_reprs)), self.value)

    def pair_repr(self, x_u, y_i):
        return np.zeros(0)

    def describe(self) -> dict:
        return {"name": self.name, "value": self.value}


class HashEmbeddingStub(SemanticScorer):
    """Deterministic random projection of token bags.

    Each token is keyed by its first ``prefix_len`` characters and mapped to
    a seeded Gaussian vector, so surface variants sharing a stem land on the
    same direction while the tf-idf vocabulary sees unrelated tokens.
    """

    name = "hash_stub"

    def __init__(self, dim: int = 64, seed: int = 0, prefix_len: int = 5):
        self.dim = int(dim)
        self.pair_dim = self.dim
        self.seed = int(seed)
        self.prefix_len = int(prefix_len)
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        key = token[: self.prefix_len]
        vec = self._cache.get(key)
        if vec is None:
            digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng([self.seed, int.from_bytes(digest, "little")])
            vec = rng.standard_normal(self.dim)
            self._cache[key] = vec
        return vec

    def embed_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        """Unit-norm projection of a token bag (zero vector for an empty bag)."""
        out = np.zeros(self.dim)
        for tok, c in sorted(Counter(tokens).items()):
            out += c * self.token_vector(tok)
        n = math.sqrt(float(out @ out))
        return out / n if n > 0 else out

    def embed(self, bundle, users, items, weights):
        by_id = {it.item: it for it in bundle.items}
        item_reprs = np.array([self.embed_tokens(tokenize(item_text(by_id[i]))) for i in items])
        item_reprs = item_reprs.reshape(len(items), self.dim)
        user_reprs = np.asarray(weights @ item_reprs).reshape(len(users), self.dim)
        for r in bundle.reviews:
            row = users.get(r.user)
            if row is not None:
                user_reprs[row] += self.embed_tokens(tokenize(r.text))
        return normalize_rows(user_reprs), item_reprs

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, "seed": self.seed, "prefix_len": self.prefix_len}


class EmbeddingScorer(SemanticScorer):
    """Cosine over externally supplied embeddings.

    File format, one object per line::

        {"id": "u1", "kind": "user", "vector": [0.1, ...]}
        {"id": "i7", "kind": "item", "vector": [0.3, ...]}
    """

    name = "embedding"

    def __init__(self, user_vectors: dict[str, np.ndarray], item_vectors: dict[str, np.ndarray],
                 source: str = ""):
        dims = {len(v) for v in list(user_vectors.values()) + list(item_vectors.values())}
        if len(dims) > 1:
            raise DimMismatch(f"embedding dims differ: {sorted(dims)}")
        self.dim = dims.pop() if dims else 0
        self.pair_dim = self.dim
        self.users = {k: np.asarray(v, dtype=np.float64) for k, v in user_vectors.items()}
        self.items = {k: np.asarray(v, dtype=np.float64) for k, v in item_vectors.items()}
        self.source = source

    @classmethod
    def from_file(cls, path) -> "EmbeddingScorer":
        p = Path(path)
        if not p.is_file():
            raise FileMissing(f"embedding file not found: {p}")
        users, items = {}, {}
        with p.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"{p.name}:{lineno}: {exc}", lineno, "<json>") from exc
                kind = obj.get("kind") if isinstance(obj, dict) else None
                if kind not in ("user", "item"):
                    raise SchemaError(f"{p.name}:{lineno}: kind must be 'user' or 'item'", lineno, "kind")
                try:
                    vec = [float(v) for v in obj["vector"]]
                except (KeyError, TypeError, ValueError) as exc:
                    raise SchemaError(f"{p.name}:{lineno}: bad vector", lineno, "vector") from exc
                if not all(math.isfinite(v) for v in vec):
                    raise SchemaError(f"{p.name}:{lineno}: non-finite embedding value", lineno, "vector")
                (users if kind == "user" else items)[str(obj.get("id"))] = vec
        return cls(users, items, source=str(path))

    def embed(self, bundle, users, items, weights):
        def rows(ids, table, kind):
            out = np.zeros((len(ids), self.dim))
            for k, key in enumerate(ids):
                vec = table.get(key)
                if vec is None:
                    raise MissingEmbedding(f"no embedding for {kind} {key!r}")
                out[k] = vec
            return normalize_rows(out)

        return rows(users, self.users, "user"), rows(items, self.items, "item")

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, "source": self.source}


def make_scorer(name: str, **params) -> SemanticScorer:
    if name == "hash_stub":
        return HashEmbeddingStub(**params)
    if name == "constant":
        return ConstantScorer(**params)
    if name == "embedding":
        return EmbeddingScorer.from_file(params["path"])
    raise ValueError(f"unknown semantic scorer {name!r}")


class ScoringEngine:
    """All component models over one dataset snapshot; immutable once built."""

    def __init__(self, users: EntityIndex, items: ItemMatrix, user_vectors: np.ndarray,
                 neighbors: NeighborModel, ratings: RatingsMatrix, scorer: SemanticScorer,
                 user_reprs: np.ndarray, item_reprs: np.ndarray, purchased: sp.csr_matrix,
                 cf_variant: str = "normalized", space: FeatureSpace | None = None):
        if cf_variant not in CF_VARIANTS:
            raise ValueError(f"unknown cf variant {cf_variant!r}")
        self.users = users
        self.items = items
        self.user_vectors = user_vectors
        self.user_unit = normalize_rows(user_vectors)
        self.neighbors = neighbors
        self.ratings = ratings
        self.scorer = scorer
        self.user_reprs = user_reprs
        self.item_reprs = item_reprs
        self.purchased = purchased
        self.cf_variant = cf_variant
        self.space = space
        self._r_values, self._r_mask = ratings.to_sparse(users, items.index)
        self._w = neighbors.weight_matrix()
        self._w_abs = abs(self._w)

    @classmethod
    def build(cls, bundle: DatasetBundle, space: FeatureSpace, scorer: SemanticScorer | None = None,
              m: int = 50, cf_variant: str = "normalized", clamp_negative: bool = False,
              extra_users: Sequence[str] = ()) -> "ScoringEngine":
        """Build every sub-model from ``bundle``.

        ``extra_users`` adds users with no history in ``bundle`` (they get
        zero vectors, i.e. cold start).
        """
        scorer = HashEmbeddingStub() if scorer is None else scorer
        users = EntityIndex(list(bundle.users) + list(extra_users))
        items = sorted(bundle.items, key=lambda it: it.item)
        item_index = EntityIndex(it.item for it in items)
        text_rows = item_text_matrix(items, space)
        dense = np.zeros((len(items), space.total_dim))
        dense[:, : space.text_dim] = text_rows.toarray()
        item_mat = ItemMatrix(item_index, np.ascontiguousarray(normalize_rows(dense)))
        uvec = user_matrix(bundle, space, users, item_index, text_rows)
        neighbors = NeighborModel.build(users, uvec, m, clamp_negative)
        ratings = RatingsMatrix.from_interactions(bundle.interactions)
        weights = interaction_weights(bundle, users, item_index, space.half_life_days)
        user_reprs, item_reprs = scorer.embed(bundle, users, item_index, weights)
        pr, pc = [], []
        for x in bundle.interactions:
            if x.event == "purchase":
                pr.append(users.index(x.user))
                pc.append(item_index.index(x.item))
        purchased = sp.csr_matrix((np.ones(len(pr), dtype=bool), (pr, pc)), shape=(len(users), len(items)))
        return cls(users, item_mat, uvec, neighbors, ratings, scorer, user_reprs, item_reprs,
                   purchased, cf_variant, space)

    # -- lookups -----------------------------------------------------------
    def user_row(self, user: str) -> int:
        r = self.users.get(user)
        if r is None:
            raise UnknownUser(f"unknown user {user!r}")
        return r

    def item_row(self, item: str) -> int:
        j = self.items.index.get(item)
        if j is None:
            raise UnknownItem(f"unknown item {item!r}")
        return j

    @property
    def n_items(self) -> int:
        return len(self.items)

    # -- single pair -------------------------------------------------------
    def score_cbf(self, user: str, item: str) -> float:
        return cosine(self.user_vectors[self.user_row(user)], self.items.vectors[self.item_row(item)])

    def score_cf(self, user: str, item: str) -> float:
        self.item_row(item)
        return score_cf(user, item, self.neighbors, self.ratings, self.cf_variant)

    def score_semantic(self, user: str, item: str) -> float:
        return float(self.scorer.score(self.user_reprs[self.user_row(user)], self.item_reprs[self.item_row(item)]))

    def score_triple(self, user: str, item: str) -> ScoreTriple:
        return ScoreTriple(self.score_cbf(user, item), self.score_cf(user, item), self.score_semantic(user, item))

    def pair_repr(self, user: str, item: str) -> np.ndarray:
        return self.scorer.pair_repr(self.user_reprs[self.user_row(user)], self.item_reprs[self.item_row(item)])

    # -- batched -----------------------------------------------------------
    def cbf_matrix(self, rows: np.ndarray) -> np.ndarray:
        return self.user_unit[rows] @ self.items.vectors.T

    def cf_matrix(self, rows: np.ndarray) -> np.ndarray:
        raw = np.asarray((self._w[rows] @ self._r_values).todense())
        if self.cf_variant == "raw":
            return raw
        den = np.asarray((self._w_abs[rows] @ self._r_mask).todense())
        out = np.zeros_like(raw)
        np.divide(raw, den, out=out, where=den > 0)
        return out

    def llm_matrix(self, rows: np.ndarray) -> np.ndarray:
        return self.scorer.score_matrix(self.user_reprs[rows], self.item_reprs)

    def component_matrices(self, rows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = np.asarray(rows, dtype=np.int64)
        return self.cbf_matrix(rows), self.cf_matrix(rows), self.llm_matrix(rows)

    def seen_mask(self, rows) -> np.ndarray:
        return self.purchased[np.asarray(rows, dtype=np.int64)].toarray()

    # -- retrieval ---------------------------------------------------------
    def top_k_rows(self, rows, k: int, fusion, exclude_seen: bool = True) -> list[np.ndarray]:
        """Ranked item rows for each user row (``k`` or fewer per user)."""
        return self._ranked(rows, k, fusion, exclude_seen)[0]

    def _ranked(self, rows, k, fusion, exclude_seen):
        if k < 1:
            raise ValueError("k must be >= 1")
        rows = np.asarray(rows, dtype=np.int64)
        scores = fusion.score_matrix(self, rows)
        if exclude_seen:
            scores[self.seen_mask(rows)] = -np.inf
        top = topk_indices(scores, min(k, scores.shape[1]))
        finite = np.isfinite(np.take_along_axis(scores, top, axis=1))
        return [t[f] for t, f in zip(top, finite)], scores

    def top_k(self, user: str, k: int, fusion, exclude_seen: bool = True) -> list[tuple[str, float]]:
        ranked, scores = self._ranked([self.user_row(user)], k, fusion, exclude_seen)
        return [(self.items.index.ids[j], float(scores[0, j])) for j in ranked[0]]


def score_cbf(user: str, item: str, engine: ScoringEngine) -> float:
    return engine.score_cbf(user, item)


def score_semantic(user: str, item: str, engine: ScoringEngine) -> float:
    return engine.score_semantic(user, item)


def score_triple(user: str, item: str, engine: ScoringEngine) -> ScoreTriple:
    return engine.score_triple(user, item)


def top_k(user: str, k: int, engine: ScoringEngine, fusion, exclude_seen: bool = True):
    return engine.top_k(user, k, fusion, exclude_seen)
