"""Offline metrics and comparison reports.

Rows report precision@k, recall@k, F1, average CTR and intra-list
diversity per model. Row-level F1 is the harmonic mean of the row's
averaged precision and recall, so ``f1 == 2pr / (p + r)`` holds exactly for
every computed row.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from hybridrec.domain import relevance_labels
from hybridrec.errors import EmptyRelevantSet, ListTooShort, NoClickData
from hybridrec.fusion import FusionModel, sigmoid
from hybridrec.ingest import DatasetBundle
from hybridrec.scoring import ScoringEngine

METRICS = ("precision", "recall", "f1", "avg_ctr", "diversity")

# published reference values; echoed as context, never recomputed here
REFERENCE_ROWS = {
    "reference traditional (not reproduced)": (0.75, 0.68, 0.71, 0.56, 0.34),
    "reference llm-based (not reproduced)": (0.82, 0.77, 0.79, 0.63, 0.48),
}

CLICK_EVENTS = ("click", "purchase")


@dataclass(frozen=True)
class EvalConfig:
    k: int = 10
    relevance_threshold: float = 0.5
    curve_points: int = 21
    pr_negatives: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.relevance_threshold <= 1.0:
            raise ValueError("relevance_threshold must be in (0, 1]")
        if self.curve_points < 2:
            raise ValueError("curve_points must be >= 2")


def precision_recall_f1(recommended: Sequence, relevant, k: int) -> tuple[float, float, float]:
    relevant = set(relevant)
    if not relevant:
        raise EmptyRelevantSet("recall is undefined without relevant items")
    top = list(recommended)[:k]
    hits = len(set(top) & relevant)
    denom = min(k, len(recommended))
    precision = hits / denom if denom else 0.0
    recall = hits / len(relevant)
    return precision, recall, f1_score(precision, recall)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def intra_list_diversity(recommended: Sequence, item_vectors) -> float:
    """``1 - mean pairwise cosine`` over the list, clamped to [0, 1].

    ``item_vectors`` maps each recommended id to its vector (a dict, or an
    array indexed by the entries of ``recommended``).
    """
    n = len(recommended)
    if n < 2:
        raise ListTooShort(f"diversity needs at least 2 items, got {n}")
    v = np.array([item_vectors[i] for i in recommended], dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    nz = norms > 0
    v[nz] /= norms[nz, None]
    sims = v @ v.T
    mean_sim = (sims.sum() - np.trace(sims)) / (n * (n - 1))
    return float(min(1.0, max(0.0, 1.0 - mean_sim)))


def pr_curve(scores, relevant, curve_points: int) -> list[tuple[float, float, float]]:
    """``(threshold, recall, precision)`` at evenly spaced thresholds, highest first.

    A pair is predicted relevant when its score is >= the threshold. The
    thresholds run from the max to the min observed score, so recall never
    decreases along the list and every threshold predicts at least one pair.
    """
    scores = np.asarray(scores, dtype=np.float64)
    relevant = np.asarray(relevant, dtype=bool)
    if scores.size == 0:
        return []
    thresholds = np.linspace(scores.max(), scores.min(), curve_points)
    order = np.argsort(-scores, kind="stable")
    s_sorted = -scores[order]
    cum_rel = np.concatenate([[0], np.cumsum(relevant[order])])
    n_rel = int(relevant.sum())
    out = []
    for t in thresholds:
        n_pred = int(np.searchsorted(s_sorted, -t, side="right"))
        tp = int(cum_rel[n_pred])
        out.append((float(t), tp / n_rel if n_rel else 0.0, tp / n_pred))
    return out


def _unit_hash(*parts) -> float:
    digest = hashlib.blake2b(":".join(map(str, parts)).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


class ClickSimulator:
    """Clicks with probability ``sigmoid(8 * (true_relevance - 0.5))``.

    Draws are a hash of (seed, user, item), so a pair always gets the same
    outcome regardless of evaluation order.
    """

    def __init__(self, relevance: Callable[[str, str], float], seed: int = 0, slope: float = 8.0):
        self.relevance = relevance
        self.seed = seed
        self.slope = slope

    def click_probability(self, user: str, item: str) -> float:
        return float(sigmoid(self.slope * (self.relevance(user, item) - 0.5)))

    def clicked(self, user: str, item: str) -> bool:
        return _unit_hash(self.seed, user, item) < self.click_probability(user, item)


def avg_ctr(recommended: Mapping[str, Sequence[str]], click_log: Mapping[tuple[str, str], int], k: int,
            simulator: ClickSimulator | None = None) -> float:
    """Mean over users of clicked recommendations / k.

    A user whose list touches no logged impression falls back to the
    simulator, or is skipped if there is none.
    """
    return _ctr_details(recommended, click_log, k, simulator)[0]


def _ctr_details(recommended, click_log, k, simulator):
    per_user: dict[str, float] = {}
    sources = {"logged": 0, "simulated": 0, "skipped": 0}
    for user, items in recommended.items():
        items = list(items)[:k]
        logged = [(user, i) in click_log for i in items]
        if any(logged):
            per_user[user] = sum(click_log.get((user, i), 0) for i in items) / k
            sources["logged"] += 1
        elif simulator is not None:
            per_user[user] = sum(simulator.clicked(user, i) for i in items) / k
            sources["simulated"] += 1
        else:
            sources["skipped"] += 1
    if not per_user:
        raise NoClickData("no logged impressions on recommended items and no click simulator")
    return math.fsum(per_user.values()) / len(per_user), per_user, sources


def click_log_from(bundle: DatasetBundle) -> dict[tuple[str, str], int]:
    """Every logged interaction is an impression; click and purchase count as clicks."""
    log: dict[tuple[str, str], int] = {}
    for x in bundle.interactions:
        key = (x.user, x.item)
        log[key] = max(log.get(key, 0), int(x.event in CLICK_EVENTS))
    return log


@dataclass
class ModelRow:
    model: str
    precision: float
    recall: float
    f1: float
    avg_ctr: float
    diversity: float
    n_users: int = 0
    reference: bool = False

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, m) for m in METRICS)


@dataclass
class EvalReport:
    rows: list[ModelRow] = field(default_factory=list)
    pr_curves: dict[str, list[tuple[float, float, float]]] = field(default_factory=dict)
    per_user: dict[str, list[dict]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def computed_rows(self) -> list[ModelRow]:
        return [r for r in self.rows if not r.reference]

    def row(self, model: str) -> ModelRow:
        return next(r for r in self.rows if r.model == model)

    def with_reference_rows(self) -> "EvalReport":
        have = {r.model for r in self.rows}
        for name, vals in REFERENCE_ROWS.items():
            if name not in have:
                self.rows.append(ModelRow(name, *vals, reference=True))
        return self

    def to_table(self) -> str:
        width = max([len("model")] + [len(r.model) for r in self.rows])
        head = f"{'model':<{width}}  " + "  ".join(f"{m:>9}" for m in METRICS) + f"  {'users':>6}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            cells = "  ".join(f"{v:>9.4f}" for v in r.values())
            users = "-" if r.reference else str(r.n_users)
            lines.append(f"{r.model:<{width}}  {cells}  {users:>6}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "metric", "value"])
        for r in self.rows:
            for m, v in zip(METRICS, r.values()):
                w.writerow([r.model, m, repr(float(v))])
        return buf.getvalue()

    def curve_csv(self, model: str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "recall", "precision"])
        for t, r, p in self.pr_curves[model]:
            w.writerow([repr(t), repr(r), repr(p)])
        return buf.getvalue()

    def heatmap_csv(self) -> str:
        """Metric matrix with each column scaled to [0, 1] across models (0.5 if constant)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "metric", "value"])
        cols = {m: [r.values()[j] for r in self.rows] for j, m in enumerate(METRICS)}
        for r in self.rows:
            for j, m in enumerate(METRICS):
                lo, hi = min(cols[m]), max(cols[m])
                v = r.values()[j]
                w.writerow([r.model, m, repr((v - lo) / (hi - lo) if hi > lo else 0.5)])
        return buf.getvalue()

    def per_user_csv(self, model: str) -> str:
        buf = io.StringIO()
        rows = self.per_user.get(model, [])
        cols = ["user", "n_relevant", "hits", "precision", "recall", "f1", "ctr", "diversity"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for d in rows:
            w.writerow(["" if d.get(c) is None else (repr(d[c]) if isinstance(d[c], float) else d[c]) for c in cols])
        return buf.getvalue()

    def write(self, directory, tag: str) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        written = []

        def put(name: str, text: str):
            p = d / name
            p.write_text(text, encoding="utf-8", newline="\n")
            written.append(p)

        put(f"report-{tag}.txt", self.to_table())
        put(f"report-{tag}.csv", self.metrics_csv())
        put(f"heatmap-{tag}.csv", self.heatmap_csv())
        for model in self.pr_curves:
            put(f"pr_curve-{_slug(model)}-{tag}.csv", self.curve_csv(model))
        for model in self.per_user:
            put(f"per_user-{_slug(model)}-{tag}.csv", self.per_user_csv(model))
        return written


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


class Evaluator:
    """Scores models on one held-out split.

    ``engine`` must be built from the history side of the split and know
    every test user (cold-start users included).
    """

    def __init__(self, engine: ScoringEngine, test: DatasetBundle, cfg: EvalConfig,
                 simulator: ClickSimulator | None = None):
        self.engine = engine
        self.cfg = cfg
        self.simulator = simulator
        labels = relevance_labels(test.interactions)
        self.test_items: dict[str, dict[str, float]] = {}
        for (u, i), y in sorted(labels.items()):
            if u in engine.users and i in engine.items.index:
                self.test_items.setdefault(u, {})[i] = y
        self.users = sorted(self.test_items)
        self.relevant = {u: {i for i, y in d.items() if y >= cfg.relevance_threshold}
                         for u, d in self.test_items.items()}
        self.click_log = click_log_from(test)
        self._pairs = self._pr_pairs()

    def _pr_pairs(self):
        """Test items of each user plus seeded random negatives, as (user row, item row, relevant)."""
        rng = np.random.default_rng(self.cfg.seed)
        n_items = self.engine.n_items
        index = self.engine.items.index
        rows, cols, rel = [], [], []
        for u in self.users:
            r = self.engine.user_row(u)
            touched = {index.index(i) for i in self.test_items[u]}
            touched.update(index.index(i) for i in self.engine.ratings.row(u))
            for i, y in self.test_items[u].items():
                rows.append(r)
                cols.append(index.index(i))
                rel.append(y >= self.cfg.relevance_threshold)
            if len(touched) >= n_items:
                continue
            for _ in range(self.cfg.pr_negatives):
                c = int(rng.integers(n_items))
                while c in touched:
                    c = int(rng.integers(n_items))
                rows.append(r)
                cols.append(c)
                rel.append(False)
        return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(rel, dtype=bool)

    def recommend(self, model: FusionModel, chunk: int = 512) -> dict[str, list[str]]:
        ids = self.engine.items.index.ids
        out: dict[str, list[str]] = {}
        rows = np.array([self.engine.user_row(u) for u in self.users], dtype=np.int64)
        for start in range(0, len(rows), chunk):
            lists = self.engine.top_k_rows(rows[start:start + chunk], self.cfg.k, model, exclude_seen=True)
            for u, lst in zip(self.users[start:start + chunk], lists):
                out[u] = [ids[j] for j in lst]
        return out

    def pair_scores(self, model: FusionModel, chunk: int = 512) -> np.ndarray:
        rows, cols, _ = self._pairs
        out = np.empty(len(rows))
        uniq = np.unique(rows)
        for start in range(0, len(uniq), chunk):
            block = uniq[start:start + chunk]
            mat = model.score_matrix(self.engine, block)
            sel = np.isin(rows, block)
            out[sel] = mat[np.searchsorted(block, rows[sel]), cols[sel]]
        return out

    def evaluate(self, name: str, model: FusionModel) -> tuple[ModelRow, list, list[dict]]:
        k = self.cfg.k
        recs = self.recommend(model)
        vecs = self.engine.items.vectors
        index = self.engine.items.index
        details, ps, rs, divs = [], [], [], []
        for u in self.users:
            lst = recs[u]
            d = {"user": u, "n_relevant": len(self.relevant[u]), "hits": None, "precision": None,
                 "recall": None, "f1": None, "ctr": None, "diversity": None}
            if self.relevant[u]:
                p, r, f = precision_recall_f1(lst, self.relevant[u], k)
                d.update(hits=len(set(lst[:k]) & self.relevant[u]), precision=p, recall=r, f1=f)
                ps.append(p)
                rs.append(r)
            if len(lst) >= 2:
                div = intra_list_diversity([index.index(i) for i in lst], vecs)
                d["diversity"] = div
                divs.append(div)
            details.append(d)
        ctr, per_user_ctr, sources = _ctr_details(recs, self.click_log, k, self.simulator)
        for d in details:
            d["ctr"] = per_user_ctr.get(d["user"])
        precision = math.fsum(ps) / len(ps) if ps else 0.0
        recall = math.fsum(rs) / len(rs) if rs else 0.0
        row = ModelRow(name, precision, recall, f1_score(precision, recall), ctr,
                       math.fsum(divs) / len(divs) if divs else 0.0, n_users=len(ps))
        curve = pr_curve(self.pair_scores(model), self._pairs[2], self.cfg.curve_points)
        self.last_ctr_sources = sources
        return row, curve, details


def compare_models(models: Mapping[str, FusionModel], evaluator: Evaluator,
                   include_reference: bool = True) -> EvalReport:
    """Evaluate every model on the evaluator's split into one report."""
    report = EvalReport()
    for name, model in models.items():
        row, curve, details = evaluator.evaluate(name, model)
        report.rows.append(row)
        report.pr_curves[name] = curve
        report.per_user[name] = details
    cfg = evaluator.cfg
    report.notes.extend([
        f"precision/recall/f1 at k={cfg.k}; relevant = held-out label >= {cfg.relevance_threshold}",
        "diversity = 1 - mean pairwise cosine of tf-idf item vectors in each top-k list",
        f"collaborative score variant: {evaluator.engine.cf_variant}",
        "ctr: logged impressions first, simulated clicks otherwise"
        + (" (simulator on)" if evaluator.simulator else " (no simulator; users without logs skipped)"),
    ])
    if include_reference:
        report.with_reference_rows()
        report.notes.append("reference rows are published values, not reproduced here")
    return report
