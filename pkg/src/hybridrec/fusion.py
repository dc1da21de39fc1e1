"""Score fusion: convex linear blend or a concat + sigmoid output head."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from hybridrec.domain import ScoreTriple
from hybridrec.errors import CorruptArtifact, DimMismatch, WrongStrategy

FORMAT = "hybridrec.fusion_model"
FORMAT_VERSION = 1
STRATEGIES = ("linear", "learned_head")


def softmax(z) -> np.ndarray:
    """Numerically stable softmax; ``-inf`` entries get exactly zero weight."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z))
    return e / e.sum()


def sigmoid(x):
    return expit(x)


@dataclass(frozen=True)
class FusionModel:
    strategy: str
    logits: tuple[float, float, float] = (0.0, 0.0, 0.0)
    weights: tuple[float, ...] = ()
    bias: float = 0.0
    seed: int = 0
    feature_space_hash: str = ""
    config_hash: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        object.__setattr__(self, "logits", tuple(float(v) for v in self.logits))
        object.__setattr__(self, "weights", tuple(float(v) for v in self.weights))
        if len(self.logits) != 3:
            raise ValueError("linear fusion needs exactly three logits")
        if self.strategy == "learned_head" and not all(map(math.isfinite, self.weights + (self.bias,))):
            raise ValueError("head weights must be finite")

    @classmethod
    def linear(cls, logits=(0.0, 0.0, 0.0), **kw) -> "FusionModel":
        return cls("linear", logits=tuple(logits), **kw)

    @classmethod
    def fixed(cls, alpha: float, beta: float, gamma: float, **kw) -> "FusionModel":
        """Linear model with the given blend weights (normalized to sum to 1).

        Zero weights become ``-inf`` logits, so single-component models are
        exact rather than a limit.
        """
        w = np.array([alpha, beta, gamma], dtype=np.float64)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("blend weights must be >= 0 with a positive sum")
        with np.errstate(divide="ignore"):
            logits = np.log(w / w.sum())
        return cls("linear", logits=tuple(logits), **kw)

    @classmethod
    def head(cls, weights: Sequence[float], bias: float = 0.0, **kw) -> "FusionModel":
        return cls("learned_head", weights=tuple(weights), bias=bias, **kw)

    @property
    def blend(self) -> np.ndarray:
        """(alpha, beta, gamma) for the CBF, CF and semantic scores."""
        return softmax(self.logits)

    def with_params(self, params: np.ndarray) -> "FusionModel":
        params = np.asarray(params, dtype=np.float64)
        if self.strategy == "linear":
            return replace(self, logits=tuple(params))
        return replace(self, weights=tuple(params[:-1]), bias=float(params[-1]))

    def params(self) -> np.ndarray:
        if self.strategy == "linear":
            return np.array(self.logits)
        return np.array(self.weights + (self.bias,))

    def score_matrix(self, engine, rows) -> np.ndarray:
        """Fused scores for every item, one row per user row."""
        rows = np.asarray(rows, dtype=np.int64)
        cbf = engine.cbf_matrix(rows)
        if self.strategy == "linear":
            a, b, c = self.blend
            out = cbf
            out *= a
            if b:
                out += b * engine.cf_matrix(rows)
            if c:
                out += c * engine.llm_matrix(rows)
            return out
        cf = engine.cf_matrix(rows)
        w = np.asarray(self.weights)
        d = engine.scorer.pair_dim
        if len(w) != d + 2:
            raise DimMismatch(f"head has {len(w)} weights, engine features need {d + 2}")
        z = (engine.user_reprs[rows] * w[:d]) @ engine.item_reprs.T
        z += w[d] * cbf
        z += w[d + 1] * cf
        z += self.bias
        return expit(z, out=z)

    def to_json(self) -> dict:
        def num(v):
            return v if math.isfinite(v) else ("-inf" if v < 0 else "inf")

        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "strategy": self.strategy,
            "logits": [num(v) for v in self.logits],
            "weights": list(self.weights),
            "bias": self.bias,
            "seed": self.seed,
            "feature_space_hash": self.feature_space_hash,
            "config_hash": self.config_hash,
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FusionModel":
        if obj.get("format") != FORMAT or obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"not a v{FORMAT_VERSION} fusion model file")
        return cls(
            strategy=obj["strategy"],
            logits=tuple(float(v) for v in obj["logits"]),
            weights=tuple(obj["weights"]),
            bias=float(obj["bias"]),
            seed=int(obj["seed"]),
            feature_space_hash=obj.get("feature_space_hash", ""),
            config_hash=obj.get("config_hash", ""),
            meta=obj.get("meta", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FusionModel":
        try:
            return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptArtifact(f"{path}: unreadable fusion model ({exc})") from exc


def fuse_linear(triple: ScoreTriple, model: FusionModel) -> float:
    if model.strategy != "linear":
        raise WrongStrategy(f"fuse_linear needs a linear model, got {model.strategy}")
    a, b, c = model.blend
    terms = [(w, s) for w, s in ((a, triple.cbf), (b, triple.cf), (c, triple.llm)) if w]
    # zero-weight terms are skipped so an exact single-component model ignores the others
    r = float(sum(w * s for w, s in terms))
    # the exact blend is convex; clamping only removes float rounding past the ends
    lo, hi = min(s for _, s in terms), max(s for _, s in terms)
    return min(max(r, lo), hi)


def concat_features(h_llm, h_trad) -> np.ndarray:
    return np.concatenate([np.asarray(h_llm, dtype=np.float64).ravel(),
                           np.asarray(h_trad, dtype=np.float64).ravel()])


def head_features(user: str, item: str, engine) -> np.ndarray:
    """``[semantic pair representation | cbf, cf]`` for one pair."""
    t = engine.score_triple(user, item)
    return concat_features(engine.pair_repr(user, item), [t.cbf, t.cf])


def fuse_head(user: str, item: str, engine, model: FusionModel) -> float:
    if model.strategy != "learned_head":
        raise WrongStrategy(f"fuse_head needs a learned_head model, got {model.strategy}")
    f = head_features(user, item, engine)
    if len(f) != len(model.weights):
        raise DimMismatch(f"head has {len(model.weights)} weights, features have {len(f)}")
    return float(expit(np.dot(model.weights, f) + model.bias))


def fuse(user: str, item: str, engine, model: FusionModel) -> float:
    if model.strategy == "linear":
        return fuse_linear(engine.score_triple(user, item), model)
    return fuse_head(user, item, engine, model)
