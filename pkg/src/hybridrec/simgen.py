"""Seeded synthetic e-commerce datasets with a planted semantic signal.

The world is a topic model. Every item has a *true* topic that drives user
interest, and a *surface* topic that decides which topic words appear in its
title and description. For a fraction ``semantic_strength`` of items the two
differ, and the true topic is expressed only through paraphrase tokens:
fresh variants of a topic word that share its first five characters but are
otherwise unique. Each variant is so rare that it falls below the tf-idf
vocabulary cut, while the hash-embedding scorer keys tokens by prefix and
so maps every variant onto its topic word.
"""

from __future__ import annotations

import json
import string
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from hybridrec.domain import DAYPARTS, DEVICES, EVENTS, ContextRecord, Interaction, ItemRecord, ReviewRecord
from hybridrec.ingest import DatasetBundle, minmax, save_bundle, write_jsonl

_LETTERS = np.array(list(string.ascii_lowercase))
_T0 = 1_700_000_000
_SPAN = 180 * 86400

# event mix for interactions drawn from the user's interests vs. browsing noise
_EVENT_P_INTEREST_BROWSE = np.array([0.45, 0.35, 0.20])
_EVENT_P_NOISE = np.array([0.60, 0.25, 0.10, 0.05])


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 500
    n_items: int = 500
    n_interactions: int = 5000
    n_reviews: int = 1000
    n_topics: int = 25
    semantic_strength: float = 0.8
    seed: int = 0
    core_per_topic: int = 12
    n_filler: int = 900
    interest_rate: float = 0.85
    affinity_concentration: float = 0.03
    purchase_rate: float = 0.8

    def __post_init__(self):
        for name in ("n_users", "n_items", "n_interactions", "n_reviews", "n_topics"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.semantic_strength <= 1.0:
            raise ValueError("semantic_strength must be in [0, 1]")
        if not 0.0 <= self.purchase_rate <= 1.0:
            raise ValueError("purchase_rate must be in [0, 1]")
        if self.n_topics < 2 and self.semantic_strength > 0:
            raise ValueError("a misleading surface topic needs at least two topics")


@dataclass
class GroundTruth:
    affinity: np.ndarray  # (n_users, n_topics)
    item_topic: np.ndarray  # (n_items,)
    surface_topic: np.ndarray  # (n_items,)
    user_ids: list[str]
    item_ids: list[str]

    def relevance(self, user: str, item: str) -> float:
        """Affinity of ``user`` for ``item``'s true topic, scaled so the favourite topic is 1."""
        u = self._u[user]
        a = self.affinity[u]
        return float(a[self.item_topic[self._i[item]]] / a.max())

    def __post_init__(self):
        self._u = {k: n for n, k in enumerate(self.user_ids)}
        self._i = {k: n for n, k in enumerate(self.item_ids)}

    def rows(self):
        for u, uid in enumerate(self.user_ids):
            yield {"kind": "user", "id": uid, "affinity": [round(float(v), 12) for v in self.affinity[u]]}
        for i, iid in enumerate(self.item_ids):
            yield {"kind": "item", "id": iid, "topic": int(self.item_topic[i]),
                   "surface_topic": int(self.surface_topic[i])}

    @classmethod
    def from_rows(cls, rows) -> "GroundTruth":
        users, items = [], []
        for r in rows:
            (users if r["kind"] == "user" else items).append(r)
        return cls(np.array([r["affinity"] for r in users]), np.array([r["topic"] for r in items]),
                   np.array([r["surface_topic"] for r in items]),
                   [r["id"] for r in users], [r["id"] for r in items])

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_rows(json.loads(line) for line in fh if line.strip())


def _words(rng: np.random.Generator, n: int, length: int) -> np.ndarray:
    return np.array(["".join(w) for w in _LETTERS[rng.integers(0, 26, size=(n, length))]])


class _Lexicon:
    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        n_core = cfg.n_topics * cfg.core_per_topic
        prefixes: list[str] = []
        seen: set[str] = set()
        while len(prefixes) < n_core:
            for w in _words(rng, n_core, 5):
                if w not in seen and len(prefixes) < n_core:
                    seen.add(w)
                    prefixes.append(w)
        self.prefixes = np.array(prefixes).reshape(cfg.n_topics, cfg.core_per_topic)
        self.core = np.char.add(self.prefixes, _words(rng, n_core, 2).reshape(self.prefixes.shape))
        filler: list[str] = []
        fseen: set[str] = set()
        while len(filler) < cfg.n_filler:
            for w in _words(rng, cfg.n_filler, 6):
                if w[:5] not in seen and w not in fseen and len(filler) < cfg.n_filler:
                    fseen.add(w)
                    filler.append(w)
        self.filler = np.array(filler)

    def core_words(self, rng, topic: int, n: int) -> list[str]:
        return list(self.core[topic, rng.integers(0, self.core.shape[1], size=n)])

    def paraphrases(self, rng, topic: int, n: int) -> list[str]:
        stems = self.prefixes[topic, rng.integers(0, self.prefixes.shape[1], size=n)]
        return list(np.char.add(stems, _words(rng, n, 3)))

    def fillers(self, rng, n: int) -> list[str]:
        return list(self.filler[rng.integers(0, len(self.filler), size=n)])


def _id(prefix: str, k: int, n: int) -> str:
    return f"{prefix}{k:0{len(str(max(n - 1, 1)))}d}"


def generate_with_truth(cfg: SynthConfig) -> tuple[DatasetBundle, GroundTruth]:
    rng = np.random.default_rng(cfg.seed)
    lex = _Lexicon(cfg, rng)
    T = cfg.n_topics

    item_ids = [_id("i", k, cfg.n_items) for k in range(cfg.n_items)]
    user_ids = [_id("u", k, cfg.n_users) for k in range(cfg.n_users)]
    item_topic = rng.permutation(np.arange(cfg.n_items) % T)
    misleading = rng.random(cfg.n_items) < cfg.semantic_strength
    shift = rng.integers(1, max(T, 2), size=cfg.n_items)
    surface = np.where(misleading, (item_topic + shift) % T, item_topic)

    prices = minmax(list(np.round(rng.lognormal(3.0, 0.8, size=cfg.n_items), 2)))
    items = []
    for k in range(cfg.n_items):
        title = lex.core_words(rng, surface[k], 1) + lex.fillers(rng, 2)
        desc = lex.core_words(rng, surface[k], 3) + lex.paraphrases(rng, item_topic[k], 9) + lex.fillers(rng, 8)
        rng.shuffle(desc)
        items.append(ItemRecord(item_ids[k], " ".join(title), " ".join(desc), f"category {surface[k]}", prices[k]))

    affinity = rng.dirichlet(np.full(T, cfg.affinity_concentration), size=cfg.n_users)
    affinity = np.maximum(affinity, 1e-12)
    affinity /= affinity.sum(axis=1, keepdims=True)
    pref_device = rng.integers(0, len(DEVICES), size=cfg.n_users)
    pref_daypart = rng.integers(0, len(DAYPARTS), size=cfg.n_users)

    by_topic = [np.flatnonzero(item_topic == t) for t in range(T)]
    n = cfg.n_interactions
    user_of = np.sort(rng.integers(0, cfg.n_users, size=n))
    interest = rng.random(n) < cfg.interest_rate
    cum = np.cumsum(affinity, axis=1)
    topic = np.minimum((cum[user_of] < rng.random(n)[:, None]).sum(axis=1), T - 1)
    pick = rng.random(n)
    item_of = np.empty(n, dtype=np.int64)
    for k in range(n):
        pool = by_topic[topic[k]] if interest[k] and len(by_topic[topic[k]]) else None
        item_of[k] = pool[int(pick[k] * len(pool))] if pool is not None else int(pick[k] * cfg.n_items)
    ev_u = rng.random(n)
    p_interest = np.append(_EVENT_P_INTEREST_BROWSE * (1.0 - cfg.purchase_rate), cfg.purchase_rate)
    event = np.where(interest,
                     np.searchsorted(np.cumsum(p_interest), ev_u, side="right"),
                     np.searchsorted(np.cumsum(_EVENT_P_NOISE), ev_u, side="right"))
    event = np.minimum(event, len(EVENTS) - 1)
    # distinct timestamps keep every generated record unique through dedup
    ts = _T0 + rng.choice(_SPAN, size=n, replace=False)
    dev = np.where(rng.random(n) < 0.7, pref_device[user_of], rng.integers(0, len(DEVICES), size=n))
    day = np.where(rng.random(n) < 0.6, pref_daypart[user_of], rng.integers(0, len(DAYPARTS), size=n))
    interactions = [
        Interaction(user_ids[user_of[k]], item_ids[item_of[k]], EVENTS[event[k]], int(ts[k]), None,
                    ContextRecord(DEVICES[dev[k]], DAYPARTS[day[k]]))
        for k in range(n)
    ]

    purchases = np.flatnonzero(event == EVENTS.index("purchase"))
    source = purchases if len(purchases) else np.arange(n)
    reviews = []
    for k in rng.choice(source, size=cfg.n_reviews, replace=True):
        i = item_of[k]
        words = lex.paraphrases(rng, item_topic[i], 3) + lex.core_words(rng, surface[i], 2) + lex.fillers(rng, 5)
        rng.shuffle(words)
        reviews.append(ReviewRecord(user_ids[user_of[k]], item_ids[i], " ".join(words),
                                    int(ts[k] + rng.integers(0, 3 * 86400))))

    bundle = DatasetBundle.from_records(items, reviews, interactions)
    truth = GroundTruth(affinity, item_topic, surface, user_ids, item_ids)
    return bundle, truth


def generate(cfg: SynthConfig) -> DatasetBundle:
    return generate_with_truth(cfg)[0]


def write_synthetic(cfg: SynthConfig, directory) -> DatasetBundle:
    """Write the three dataset files plus ``ground_truth.jsonl`` into ``directory``."""
    bundle, truth = generate_with_truth(cfg)
    d = Path(directory)
    save_bundle(bundle, d)
    write_jsonl(d / "ground_truth.jsonl", truth.rows())
    (d / "synth_config.json").write_text(json.dumps(asdict(cfg), sort_keys=True) + "\n", encoding="utf-8")
    return bundle
