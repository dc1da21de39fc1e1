"""Multi-seed comparison of CBF-only against the trained hybrid on synthetic data.

Each seed generates a fresh world, trains the linear blend at two diversity
weights, and evaluates both plus the CBF-only baseline on the held-out split.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from hybridrec.config import RunConfig
from hybridrec.evaluation import compare_models
from hybridrec.pipeline import Experiment, baseline_models
from hybridrec.simgen import SynthConfig, generate


@dataclass(frozen=True)
class ReplicationConfig:
    seeds: tuple[int, ...] = tuple(range(20))
    n_users: int = 5000
    n_items: int = 500
    n_interactions: int = 50_000
    n_reviews: int = 1000
    semantic_strength: float = 0.8
    cf_variant: str = "raw"
    lam_low: float = 0.0
    lam_high: float = 1.0
    min_gap: float = 0.03
    budget_s: float = 600.0


@dataclass
class SeedResult:
    seed: int
    cbf_precision: float
    hybrid_precision: float
    diversity_low: float
    diversity_high: float
    blend: list[float]
    seconds: float

    @property
    def gap(self) -> float:
        return self.hybrid_precision - self.cbf_precision


@dataclass
class ReplicationResult:
    config: ReplicationConfig
    seeds: list[SeedResult] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def mean_gap(self) -> float:
        return float(np.mean([s.gap for s in self.seeds]))

    @property
    def mean_diversity_low(self) -> float:
        return float(np.mean([s.diversity_low for s in self.seeds]))

    @property
    def mean_diversity_high(self) -> float:
        return float(np.mean([s.diversity_high for s in self.seeds]))

    def paired_precision_test(self) -> float:
        """Two-sided paired t-test p-value for hybrid vs CBF precision."""
        if len(self.seeds) < 2:
            return float("nan")
        a = [s.hybrid_precision for s in self.seeds]
        b = [s.cbf_precision for s in self.seeds]
        return float(stats.ttest_rel(a, b).pvalue)

    @property
    def passed(self) -> bool:
        return (self.mean_gap >= self.config.min_gap
                and self.mean_diversity_high > self.mean_diversity_low
                and self.seconds < self.config.budget_s)

    def summary(self) -> dict:
        return {
            "config": asdict(self.config),
            "per_seed": [{**asdict(s), "gap": s.gap} for s in self.seeds],
            "mean_gap": self.mean_gap,
            "mean_diversity_low": self.mean_diversity_low,
            "mean_diversity_high": self.mean_diversity_high,
            "paired_p": self.paired_precision_test(),
            "seconds": round(self.seconds, 1),
            "passed": self.passed,
        }


def run_seed(cfg: ReplicationConfig, seed: int) -> SeedResult:
    t0 = time.perf_counter()
    synth = SynthConfig(n_users=cfg.n_users, n_items=cfg.n_items, n_interactions=cfg.n_interactions,
                        n_reviews=cfg.n_reviews, semantic_strength=cfg.semantic_strength, seed=seed)
    run = RunConfig(seed=seed, synth=synth).override(scorer={"cf_variant": cfg.cf_variant})
    exp = Experiment.prepare(generate(synth), run)
    low, _ = exp.train(lam=cfg.lam_low)
    high, _ = exp.train(lam=cfg.lam_high)
    models = {"cbf": baseline_models(exp.space, run)["cbf"], "low": low, "high": high}
    rep = compare_models(models, exp.evaluator(), include_reference=False)
    return SeedResult(seed, rep.row("cbf").precision, rep.row("low").precision,
                      rep.row("low").diversity, rep.row("high").diversity,
                      [float(w) for w in low.blend], round(time.perf_counter() - t0, 2))


def run_replication(cfg: ReplicationConfig = ReplicationConfig(), progress=None) -> ReplicationResult:
    result = ReplicationResult(cfg)
    t0 = time.perf_counter()
    for seed in cfg.seeds:
        result.seeds.append(run_seed(cfg, seed))
        if progress:
            progress(result.seeds[-1])
    result.seconds = time.perf_counter() - t0
    return result
