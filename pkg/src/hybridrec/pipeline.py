"""End-to-end experiment wiring shared by the CLI and the benchmark scripts.

The split is temporal and two-level::

    full    = history | test          (test: each user's last 20%)
    history = fit     | target        (target: last 20% of the history)

Component models for training are built on ``fit`` and the fusion
parameters are learned on ``target`` pairs, so no training label leaks into
the scores it is fit against. Evaluation rebuilds the components on the whole
``history`` with the same feature space.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from hybridrec.config import RunConfig
from hybridrec.evaluation import ClickSimulator, Evaluator
from hybridrec.features import FeatureSpace, build_feature_space
from hybridrec.fusion import FusionModel
from hybridrec.ingest import DatasetBundle, temporal_split
from hybridrec.scoring import ConstantScorer, EmbeddingScorer, HashEmbeddingStub, ScoringEngine, SemanticScorer
from hybridrec.training import TrainReport, train


def make_scorer(cfg: RunConfig) -> SemanticScorer:
    s = cfg.scorer
    if s.semantic == "hash_stub":
        return HashEmbeddingStub(s.stub_dim, s.stub_seed, s.stub_prefix_len)
    if s.semantic == "constant":
        return ConstantScorer(s.constant)
    p = Path(s.embedding_path)
    return EmbeddingScorer.from_file(p if p.is_absolute() else Path(cfg.base_dir) / p)


def build_engine(bundle: DatasetBundle, space: FeatureSpace, cfg: RunConfig,
                 extra_users=(), scorer: SemanticScorer | None = None) -> ScoringEngine:
    return ScoringEngine.build(
        bundle, space, scorer or make_scorer(cfg), m=cfg.scorer.neighbors, cf_variant=cfg.scorer.cf_variant,
        clamp_negative=cfg.scorer.clamp_negative, extra_users=extra_users,
    )


@dataclass
class Experiment:
    full: DatasetBundle
    history: DatasetBundle
    test: DatasetBundle
    fit: DatasetBundle
    target: DatasetBundle
    space: FeatureSpace
    cfg: RunConfig
    _fit_engine: ScoringEngine | None = None
    _eval_engine: ScoringEngine | None = None

    @classmethod
    def prepare(cls, bundle: DatasetBundle, cfg: RunConfig, space: FeatureSpace | None = None) -> "Experiment":
        history, test = temporal_split(bundle, cfg.split.test_fraction)
        fit, target = temporal_split(history, cfg.split.holdout_fraction)
        if space is None:
            f = cfg.features
            space = build_feature_space(history, f.max_vocab, f.half_life_days, f.context_weight)
        return cls(bundle, history, test, fit, target, space, cfg)

    @property
    def fit_engine(self) -> ScoringEngine:
        if self._fit_engine is None:
            self._fit_engine = build_engine(self.fit, self.space, self.cfg, extra_users=self.target.users)
        return self._fit_engine

    @property
    def eval_engine(self) -> ScoringEngine:
        if self._eval_engine is None:
            self._eval_engine = build_engine(self.history, self.space, self.cfg, extra_users=self.test.users)
        return self._eval_engine

    def train(self, **train_overrides) -> tuple[FusionModel, TrainReport]:
        cfg = self.cfg.override(train=train_overrides) if train_overrides else self.cfg
        template = stamp(FusionModel.linear() if cfg.train.strategy == "linear"
                         else FusionModel.head([0.0] * (self.fit_engine.scorer.pair_dim + 2)), self.space, cfg)
        return train(self.target, self.fit_engine, cfg.train, template)

    def evaluator(self, simulator: ClickSimulator | None = None) -> Evaluator:
        return Evaluator(self.eval_engine, self.test, self.cfg.eval, simulator)


def stamp(model: FusionModel, space: FeatureSpace, cfg: RunConfig) -> FusionModel:
    return replace(model, feature_space_hash=space.fingerprint(), config_hash=cfg.config_hash())


def baseline_models(space: FeatureSpace, cfg: RunConfig) -> dict[str, FusionModel]:
    """Fixed single-component and uniform blends, usable as ``compare`` model names."""
    return {
        "cbf": stamp(FusionModel.fixed(1, 0, 0), space, cfg),
        "cf": stamp(FusionModel.fixed(0, 1, 0), space, cfg),
        "semantic": stamp(FusionModel.fixed(0, 0, 1), space, cfg),
        "uniform": stamp(FusionModel.fixed(1, 1, 1), space, cfg),
        "traditional": stamp(FusionModel.fixed(1, 1, 0), space, cfg),
    }
