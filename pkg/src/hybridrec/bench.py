"""Retrieval throughput benchmark over a random catalog.

The engine is assembled directly from random matrices with the production
shapes (sparse tf-idf-like item rows, a 7-slot context block, 64-d semantic
projections) so the timed section runs the same fused top-k path as
``recommend`` and ``evaluate``.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
from threadpoolctl import threadpool_limits

from hybridrec.domain import DAYPARTS, DEVICES, EntityIndex, RatingsMatrix
from hybridrec.fusion import FusionModel
from hybridrec.scoring import HashEmbeddingStub, ItemMatrix, NeighborModel, ScoringEngine, normalize_rows

_LABELS = np.array([0.2, 0.3, 0.4, 1.0])


@dataclass(frozen=True)
class BenchConfig:
    n_users: int = 1000
    n_items: int = 50_000
    text_dim: int = 1024
    k: int = 10
    terms_per_item: int = 40
    items_per_user: int = 20
    neighbors: int = 50
    chunk: int = 250
    threads: int = 1
    seed: int = 0
    budget_s: float = 60.0


def random_engine(cfg: BenchConfig) -> ScoringEngine:
    rng = np.random.default_rng(cfg.seed)
    ctx = len(DEVICES) + len(DAYPARTS)
    dim = cfg.text_dim + ctx

    item_ids = [f"i{j:06d}" for j in range(cfg.n_items)]
    user_ids = [f"u{u:05d}" for u in range(cfg.n_users)]
    cols = rng.integers(0, cfg.text_dim, size=(cfg.n_items, cfg.terms_per_item))
    vals = rng.gamma(1.0, 1.0, size=cols.shape)
    text = sp.csr_matrix((vals.ravel(), (np.repeat(np.arange(cfg.n_items), cfg.terms_per_item), cols.ravel())),
                         shape=(cfg.n_items, dim))
    items = ItemMatrix(EntityIndex(item_ids), normalize_rows(text.toarray()))

    hist = rng.integers(0, cfg.n_items, size=(cfg.n_users, cfg.items_per_user))
    labels = _LABELS[rng.integers(0, len(_LABELS), size=hist.shape)]
    w = sp.csr_matrix((labels.ravel(), (np.repeat(np.arange(cfg.n_users), cfg.items_per_user), hist.ravel())),
                      shape=(cfg.n_users, cfg.n_items))
    uvec = normalize_rows(np.asarray(w @ items.vectors))
    uvec[:, cfg.text_dim:] = 0.25 * rng.dirichlet(np.ones(ctx), size=cfg.n_users)

    users = EntityIndex(user_ids)
    entries = {}
    for u in range(cfg.n_users):
        for j, v in zip(hist[u], labels[u]):
            key = (user_ids[u], item_ids[j])
            entries[key] = max(entries.get(key, 0.0), float(v))
    ratings = RatingsMatrix(entries)
    purchased = sp.csr_matrix(w == 1.0)

    scorer = HashEmbeddingStub(seed=cfg.seed)
    item_reprs = normalize_rows(rng.standard_normal((cfg.n_items, scorer.dim)))
    user_reprs = normalize_rows(np.asarray(w @ item_reprs))
    neighbors = NeighborModel.build(users, uvec, cfg.neighbors)
    return ScoringEngine(users, items, uvec, neighbors, ratings, scorer, user_reprs, item_reprs,
                         purchased, "normalized")


def run_bench(cfg: BenchConfig = BenchConfig()) -> dict:
    """Time fused top-k for every user; returns a JSON-ready result record."""
    with threadpool_limits(limits=cfg.threads):
        t0 = time.perf_counter()
        engine = random_engine(cfg)
        build_s = time.perf_counter() - t0
        model = FusionModel.fixed(1, 1, 1)
        rows = np.arange(cfg.n_users)
        t0 = time.perf_counter()
        n_ranked = 0
        for s in range(0, cfg.n_users, cfg.chunk):
            n_ranked += sum(len(r) for r in engine.top_k_rows(rows[s: s + cfg.chunk], cfg.k, model))
        score_s = time.perf_counter() - t0
    return {
        "config": asdict(cfg),
        "dim": int(engine.items.vectors.shape[1]),
        "build_seconds": round(build_s, 3),
        "score_seconds": round(score_s, 3),
        "users_per_second": round(cfg.n_users / score_s, 1) if score_s > 0 else None,
        "ranked_items": n_ranked,
        "passed": score_s < cfg.budget_s and n_ranked == cfg.n_users * cfg.k,
    }
