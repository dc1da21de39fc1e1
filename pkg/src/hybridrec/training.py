"""Fitting fusion parameters under a diversity-regularized loss.

    loss = mean main loss over labeled pairs + lambda * mean diversity penalty over users

The diversity penalty for one user takes the ``n`` highest-scoring unseen
items, turns their fused scores into ``p = softmax(score / temperature)`` and
returns ``sum_{i != j} p_i p_j cos(y_i, y_j)``: the score-weighted expected
similarity between two distinct recommended items. Lower means more diverse.
Candidates are picked with the current parameters and held fixed while the
gradient is taken, so the objective is piecewise smooth.

Optimization is full-batch gradient descent with analytic gradients; a step
that would increase the training loss is retried at half the learning rate.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from hybridrec.domain import relevance_labels
from hybridrec.errors import DomainError, GradientCheckFailed, InsufficientData
from hybridrec.fusion import FusionModel, softmax
from hybridrec.ingest import DatasetBundle
from hybridrec.scoring import ScoringEngine, topk_indices

logger = logging.getLogger(__name__)

GRAD_CHECK_TOL = 1e-4
_GRAM_LIMIT = 4096


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "linear"
    main_loss: str = "mse"
    lam: float = 0.0
    lr: float = 2.0
    epochs: int = 60
    temperature: float = 0.05
    list_size: int = 10
    seed: int = 0
    train_fraction: float = 0.8
    valid_fraction: float = 0.2
    negatives_per_positive: int = 3
    head_init_scale: float = 0.01
    grad_check: bool = True
    grad_check_pairs: int = 256
    grad_check_users: int = 32

    def __post_init__(self):
        if self.strategy not in ("linear", "learned_head"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.main_loss not in ("mse", "bce"):
            raise ValueError(f"unknown main loss {self.main_loss!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.lr <= 0 or self.temperature <= 0:
            raise ValueError("lr and temperature must be > 0")
        if self.epochs < 1 or self.list_size < 2:
            raise ValueError("epochs >= 1 and list_size >= 2 required")
        if not (0 < self.train_fraction < 1 and 0 < self.valid_fraction < 1):
            raise ValueError("split fractions must lie in (0, 1)")
        if abs(self.train_fraction + self.valid_fraction - 1.0) > 1e-9:
            raise ValueError("train and valid fractions must sum to 1")


def loss_main(pred, label, kind: str = "mse"):
    """Per-pair main loss; works elementwise on arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if kind == "mse":
        out = (pred - label) ** 2
    elif kind == "bce":
        if np.any((pred <= 0.0) | (pred >= 1.0)):
            raise DomainError("bce needs predictions strictly inside (0, 1)")
        out = -(label * np.log(pred) + (1.0 - label) * np.log1p(-pred))
    else:
        raise ValueError(f"unknown main loss {kind!r}")
    return float(out) if out.ndim == 0 else out


def _main_grad(pred: np.ndarray, label: np.ndarray, kind: str) -> np.ndarray:
    if kind == "mse":
        return 2.0 * (pred - label)
    return (pred - label) / (pred * (1.0 - pred))


def diversity_penalty(z: np.ndarray, sim: np.ndarray, temperature: float,
                      valid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Penalty and its gradient w.r.t. ``z`` for a batch of candidate lists.

    ``z``: (users, n) fused scores; ``sim``: (users, n, n) item cosines whose
    diagonal is ignored; ``valid`` masks padding slots.
    """
    z = np.atleast_2d(z) / temperature
    if valid is not None:
        # a row with no valid slot keeps slot 0 so the softmax stays defined
        valid = valid.copy()
        valid[~valid.any(axis=1), 0] = True
        z = np.where(valid, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    off = sim.copy()
    n = off.shape[-1]
    off[:, np.arange(n), np.arange(n)] = 0.0
    g = 2.0 * np.einsum("bij,bj->bi", off, p)
    value = 0.5 * np.einsum("bi,bi->b", p, g)
    dz = (p * g - p * np.einsum("bi,bi->b", p, g)[:, None]) / temperature
    return value, dz


@dataclass
class PairBatch:
    """Labeled pairs plus what the diversity term needs for their users.

    Component scores are read once from a fixed engine; only fusion
    parameters vary during training.
    """

    user_rows: np.ndarray  # (N,)
    item_rows: np.ndarray  # (N,)
    labels: np.ndarray  # (N,)
    triples: np.ndarray  # (N, 3)
    pair_feats: np.ndarray  # (N, d)
    div_users: np.ndarray  # (B,) unique user rows
    comp: np.ndarray  # (B, 3, I) cbf / cf / llm for every item
    user_reprs: np.ndarray  # (B, d)
    item_reprs: np.ndarray  # (I, d)
    seen: np.ndarray  # (B, I) bool
    item_vectors: np.ndarray  # (I, D) unit rows
    gram: np.ndarray | None = None

    @classmethod
    def from_pairs(cls, engine: ScoringEngine, user_rows, item_rows, labels) -> "PairBatch":
        user_rows = np.asarray(user_rows, dtype=np.int64)
        item_rows = np.asarray(item_rows, dtype=np.int64)
        div_users = np.unique(user_rows)
        cbf, cf, llm = engine.component_matrices(div_users)
        comp = np.stack([cbf, cf, llm], axis=1)
        pos = np.searchsorted(div_users, user_rows)
        triples = comp[pos, :, item_rows]
        reprs_u = engine.user_reprs[div_users]
        pair_feats = reprs_u[pos] * engine.item_reprs[item_rows]
        vecs = engine.items.vectors
        gram = vecs @ vecs.T if len(vecs) <= _GRAM_LIMIT else None
        return cls(user_rows, item_rows, np.asarray(labels, dtype=np.float64), triples, pair_feats,
                   div_users, comp, reprs_u, engine.item_reprs, engine.seen_mask(div_users), vecs, gram)

    def subset(self, pair_idx: np.ndarray, max_users: int) -> "PairBatch":
        pair_idx = np.asarray(pair_idx)
        keep = np.arange(min(max_users, len(self.div_users)))
        return PairBatch(self.user_rows[pair_idx], self.item_rows[pair_idx], self.labels[pair_idx],
                         self.triples[pair_idx], self.pair_feats[pair_idx], self.div_users[keep],
                         self.comp[keep], self.user_reprs[keep], self.item_reprs, self.seen[keep],
                         self.item_vectors, self.gram)

    def __len__(self) -> int:
        return len(self.labels)

    def similarity(self, cand: np.ndarray) -> np.ndarray:
        if self.gram is not None:
            return self.gram[cand[:, :, None], cand[:, None, :]]
        v = self.item_vectors[cand]
        return np.einsum("bid,bjd->bij", v, v)


def _pair_scores(strategy: str, params: np.ndarray, triples: np.ndarray, feats: np.ndarray):
    """Fused scores and d(score)/d(params) for each pair.

    Returns ``(z, jac)`` with ``jac`` of shape (..., n_params).
    """
    if strategy == "linear":
        w = softmax(params)
        z = triples @ w
        jac = triples @ (np.diag(w) - np.outer(w, w))
        return z, jac
    full = np.concatenate([feats, triples[..., :2], np.ones(triples.shape[:-1] + (1,))], axis=-1)
    z = expit(full @ params)
    return z, full * (z * (1.0 - z))[..., None]


def _full_scores(strategy: str, params: np.ndarray, batch: PairBatch) -> np.ndarray:
    if strategy == "linear":
        return np.einsum("k,bki->bi", softmax(params), batch.comp)
    d = batch.user_reprs.shape[1]
    w = params[:-1]
    s = (batch.user_reprs * w[:d]) @ batch.item_reprs.T
    s += w[d] * batch.comp[:, 0] + w[d + 1] * batch.comp[:, 1] + params[-1]
    return expit(s)


def select_candidates(strategy: str, params: np.ndarray, batch: PairBatch, n: int):
    """Top-``n`` unseen items per diversity user; returns (indices, valid mask)."""
    scores = _full_scores(strategy, params, batch)
    scores[batch.seen] = -np.inf
    n = min(n, scores.shape[1])
    cand = topk_indices(scores, n)
    valid = np.isfinite(np.take_along_axis(scores, cand, axis=1))
    return cand, valid


def _candidate_inputs(batch: PairBatch, cand: np.ndarray):
    b = np.arange(len(batch.div_users))[:, None]
    triples = np.moveaxis(batch.comp, 1, 2)[b, cand]  # (B, n, 3)
    feats = batch.user_reprs[:, None, :] * batch.item_reprs[cand]
    return triples, feats


def loss_and_grad(strategy: str, params: np.ndarray, batch: PairBatch, cfg: TrainConfig,
                  cand=None, need_grad: bool = True):
    """Total loss (and gradient) at ``params`` with diversity candidates held fixed."""
    params = np.asarray(params, dtype=np.float64)
    z, jac = _pair_scores(strategy, params, batch.triples, batch.pair_feats)
    main = loss_main(z, batch.labels, cfg.main_loss)
    total = float(np.mean(main)) if len(main) else 0.0
    grad = np.zeros_like(params)
    if need_grad and len(main):
        grad += jac.T @ _main_grad(z, batch.labels, cfg.main_loss) / len(main)
    if cfg.lam > 0 and len(batch.div_users):
        if cand is None:
            cand = select_candidates(strategy, params, batch, cfg.list_size)
        idx, valid = cand
        tri, feats = _candidate_inputs(batch, idx)
        zc, jc = _pair_scores(strategy, params, tri, feats)
        value, dz = diversity_penalty(zc, batch.similarity(idx), cfg.temperature, valid)
        total += cfg.lam * float(value.mean())
        if need_grad:
            grad += cfg.lam * np.einsum("bn,bnk->k", dz, jc) / len(value)
    return total, grad


def total_loss(batch: PairBatch, engine: ScoringEngine, model: FusionModel, cfg: TrainConfig) -> float:
    if len(batch) == 0:
        raise InsufficientData("empty batch")
    return loss_and_grad(model.strategy, model.params(), batch, cfg, need_grad=False)[0]


def loss_diversity(user: str, engine: ScoringEngine, model: FusionModel, temperature: float, n: int) -> float:
    """Diversity penalty for one user's ``n`` best unseen items under ``model``."""
    if n < 2:
        raise ValueError("need at least two candidates")
    row = engine.user_row(user)
    scores = model.score_matrix(engine, np.array([row]))
    scores[engine.seen_mask([row])] = -np.inf
    cand = topk_indices(scores, min(n, scores.shape[1]))
    valid = np.isfinite(np.take_along_axis(scores, cand, axis=1))
    vecs = engine.items.vectors[cand[0]]
    value, _ = diversity_penalty(np.take_along_axis(scores, cand, axis=1), (vecs @ vecs.T)[None],
                                 temperature, valid)
    return float(value[0])


def numerical_gradient(f, params: np.ndarray, h: float = 1e-6) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    out = np.zeros_like(params)
    for k in range(len(params)):
        up, dn = params.copy(), params.copy()
        up[k] += h
        dn[k] -= h
        out[k] = (f(up) - f(dn)) / (2.0 * h)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / scale) if scale > 0 else 0.0


def gradient_check(strategy: str, params: np.ndarray, batch: PairBatch, cfg: TrainConfig,
                   h: float = 1e-6) -> float:
    """Relative error between the analytic gradient and central differences."""
    cand = select_candidates(strategy, params, batch, cfg.list_size) if cfg.lam > 0 else None
    _, analytic = loss_and_grad(strategy, params, batch, cfg, cand)
    numeric = numerical_gradient(
        lambda p: loss_and_grad(strategy, p, batch, cfg, cand, need_grad=False)[0], params, h)
    return relative_error(analytic, numeric)


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    final_params: list[float] = field(default_factory=list)
    best_epoch: int = 0
    grad_check_error: float | None = None
    grad_check_passed: bool | None = None
    n_train_pairs: int = 0
    n_valid_pairs: int = 0
    wall_time: float = 0.0

    def write(self, path, deterministic: bool = False) -> None:
        summary = {k: v for k, v in asdict(self).items() if k != "epochs"}
        summary["record"] = "summary"
        if deterministic:
            summary["wall_time"] = 0.0
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for e in self.epochs:
                fh.write(json.dumps({"record": "epoch", **e}, sort_keys=True) + "\n")
            fh.write(json.dumps(summary, sort_keys=True) + "\n")


def labeled_pairs(target: DatasetBundle, engine: ScoringEngine, negatives_per_positive: int,
                  rng: np.random.Generator):
    """Observed target pairs with their labels plus sampled unobserved pairs labeled 0.

    Negatives avoid anything the user touched in either the engine's data or
    the target data.
    """
    labels = relevance_labels(target.interactions)
    touched: dict[int, set[int]] = {}
    for (u, i), _ in engine.ratings.items():
        r, c = engine.users.get(u), engine.items.index.get(i)
        if r is not None and c is not None:
            touched.setdefault(r, set()).add(c)
    pos_u, pos_i, pos_y = [], [], []
    for (u, i), y in sorted(labels.items()):
        r, c = engine.users.get(u), engine.items.index.get(i)
        if r is None or c is None:
            continue
        pos_u.append(r)
        pos_i.append(c)
        pos_y.append(y)
        touched.setdefault(r, set()).add(c)
    n_items = engine.n_items
    neg_u, neg_i = [], []
    for r in pos_u:
        avoid = touched[r]
        if len(avoid) >= n_items:
            continue
        for _ in range(negatives_per_positive):
            c = int(rng.integers(n_items))
            while c in avoid:
                c = int(rng.integers(n_items))
            neg_u.append(r)
            neg_i.append(c)
    users = np.array(pos_u + neg_u, dtype=np.int64)
    items = np.array(pos_i + neg_i, dtype=np.int64)
    y = np.array(pos_y + [0.0] * len(neg_u), dtype=np.float64)
    return users, items, y


def init_params(strategy: str, pair_dim: int, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    if strategy == "linear":
        return np.zeros(3)
    w = rng.normal(0.0, cfg.head_init_scale, size=pair_dim + 2)
    return np.concatenate([w, [0.0]])


def _split_users(user_rows: np.ndarray, cfg: TrainConfig, rng: np.random.Generator):
    users = np.unique(user_rows)
    if len(users) < 2:
        raise InsufficientData("need labeled pairs from at least two users to form a validation split")
    perm = rng.permutation(users)
    n_train = int(round(cfg.train_fraction * len(users)))
    n_train = min(max(n_train, 1), len(users) - 1)
    return np.isin(user_rows, perm[:n_train])


def fit(strategy: str, params: np.ndarray, tr: PairBatch, va: PairBatch, cfg: TrainConfig,
        report: TrainReport | None = None) -> tuple[np.ndarray, float]:
    """Gradient descent from ``params``; returns the best-validation parameters and their loss.

    Per-epoch losses are appended to ``report`` when one is given.
    """
    report = TrainReport() if report is None else report
    params = np.asarray(params, dtype=np.float64).copy()

    def valid_loss(p):
        return loss_and_grad(strategy, p, va, cfg, need_grad=False)[0]

    best_params, best_val, best_epoch = params.copy(), valid_loss(params), 0
    lr = cfg.lr
    for epoch in range(1, cfg.epochs + 1):
        cand = select_candidates(strategy, params, tr, cfg.list_size) if cfg.lam > 0 else None
        loss, grad = loss_and_grad(strategy, params, tr, cfg, cand)
        new_loss = loss
        while lr > 1e-12:
            trial = params - lr * grad
            new_loss = loss_and_grad(strategy, trial, tr, cfg, cand, need_grad=False)[0]
            if new_loss <= loss:
                params = trial
                break
            lr *= 0.5
        else:
            new_loss = loss
        val = valid_loss(params)
        report.epochs.append({"epoch": epoch, "train_loss": new_loss, "valid_loss": val, "lr": lr})
        if val < best_val:
            best_params, best_val, best_epoch = params.copy(), val, epoch
    report.final_params = [float(v) for v in best_params]
    report.best_epoch = best_epoch
    return best_params, best_val


def train(bundle: DatasetBundle, engine: ScoringEngine, cfg: TrainConfig,
          model_template: FusionModel | None = None) -> tuple[FusionModel, TrainReport]:
    """Fit fusion parameters on the labeled pairs of ``bundle``.

    ``bundle`` holds the target interactions (typically each user's most
    recent history, held out from ``engine``'s data). Users are split into
    train and validation; the parameters with the lowest validation loss
    across epochs are returned.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    users, items, y = labeled_pairs(bundle, engine, cfg.negatives_per_positive, rng)
    if len(y) == 0:
        raise InsufficientData("no labeled pairs overlap the engine's users and items")
    in_train = _split_users(users, cfg, rng)
    tr = PairBatch.from_pairs(engine, users[in_train], items[in_train], y[in_train])
    va = PairBatch.from_pairs(engine, users[~in_train], items[~in_train], y[~in_train])
    strategy = cfg.strategy
    params = init_params(strategy, engine.scorer.pair_dim, cfg, rng)
    report = TrainReport(n_train_pairs=len(tr), n_valid_pairs=len(va))

    if cfg.grad_check:
        sub = tr.subset(np.arange(min(cfg.grad_check_pairs, len(tr))), cfg.grad_check_users)
        err = gradient_check(strategy, params, sub, cfg)
        report.grad_check_error = err
        report.grad_check_passed = err <= GRAD_CHECK_TOL
        if err > GRAD_CHECK_TOL:
            raise GradientCheckFailed(f"analytic vs numeric gradient relative error {err:.3g}")

    best_params, best_val = fit(strategy, params, tr, va, cfg, report)

    if model_template is None:
        model_template = (FusionModel.linear() if strategy == "linear"
                          else FusionModel.head([0.0] * (engine.scorer.pair_dim + 2)))
    meta = {**model_template.meta, "lambda": cfg.lam, "main_loss": cfg.main_loss,
            "scorer": engine.scorer.describe(), "cf_variant": engine.cf_variant}
    model = replace(model_template.with_params(best_params), seed=cfg.seed, meta=meta)
    report.wall_time = time.perf_counter() - t0
    logger.info("trained %s fusion: best epoch %d, valid loss %.5f", strategy, report.best_epoch, best_val)
    return model, report
