"""Run configuration read from a TOML file.

Example::

    seed = 7

    [paths]
    data_dir = "data"
    model_dir = "models"
    report_dir = "reports"

    [features]
    max_vocab = 1024
    half_life_days = 30.0
    context_weight = 0.25

    [scorer]
    neighbors = 50
    cf_variant = "normalized"      # or "raw"
    semantic = "hash_stub"         # "embedding" (needs embedding_path) or "constant"

    [train]
    strategy = "linear"            # or "learned_head"
    main_loss = "mse"
    lam = 0.0

    [eval]
    k = 10

    [synth]
    n_users = 500

The top-level ``seed`` is the default for every section seed that the file
does not set explicitly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from hybridrec.errors import ConfigError
from hybridrec.evaluation import EvalConfig
from hybridrec.simgen import SynthConfig
from hybridrec.training import TrainConfig


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    model_dir: str = "models"
    report_dir: str = "reports"


@dataclass(frozen=True)
class FeatureConfig:
    max_vocab: int = 1024
    half_life_days: float = 30.0
    context_weight: float = 0.25


@dataclass(frozen=True)
class ScorerConfig:
    neighbors: int = 50
    cf_variant: str = "normalized"
    clamp_negative: bool = False
    semantic: str = "hash_stub"
    embedding_path: str = ""
    stub_dim: int = 64
    stub_seed: int = 0
    stub_prefix_len: int = 5
    constant: float = 0.5


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.2
    holdout_fraction: float = 0.2


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    base_dir: str = field(default=".", compare=False)

    def config_hash(self) -> str:
        """Stable digest of everything except filesystem locations."""
        d = asdict(self)
        d.pop("paths")
        d.pop("base_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

    def path(self, name: str) -> Path:
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else Path(self.base_dir) / p

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str = ".") -> "RunConfig":
        raw = dict(raw)
        seed = raw.pop("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError("seed must be an integer")
        sections = {
            "paths": PathsConfig, "features": FeatureConfig, "scorer": ScorerConfig,
            "split": SplitConfig, "train": TrainConfig, "eval": EvalConfig, "synth": SynthConfig,
        }
        built = {}
        for name, klass in sections.items():
            values = dict(raw.pop(name, {}) or {})
            if not isinstance(values, dict):
                raise ConfigError(f"[{name}] must be a table")
            known = {f.name for f in fields(klass)}
            unknown = set(values) - known
            if unknown:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
            if "seed" in known:
                values.setdefault("seed", seed)
            try:
                built[name] = klass(**values)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{name}]: {exc}") from exc
        if raw:
            raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(raw))}")
        cfg = cls(seed=seed, base_dir=base_dir, **built)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = tomllib.loads(p.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        return cls.from_dict(raw, base_dir=str(p.parent))

    def validate(self) -> None:
        if self.features.max_vocab < 1:
            raise ConfigError("features.max_vocab must be >= 1")
        if self.features.half_life_days <= 0:
            raise ConfigError("features.half_life_days must be > 0")
        if self.scorer.cf_variant not in ("normalized", "raw"):
            raise ConfigError("scorer.cf_variant must be 'normalized' or 'raw'")
        if self.scorer.semantic not in ("hash_stub", "embedding", "constant"):
            raise ConfigError("scorer.semantic must be hash_stub, embedding or constant")
        if self.scorer.semantic == "embedding" and not self.scorer.embedding_path:
            raise ConfigError("scorer.embedding_path is required for the embedding scorer")
        if self.scorer.neighbors < 1:
            raise ConfigError("scorer.neighbors must be >= 1")
        for name in ("test_fraction", "holdout_fraction"):
            if not 0.0 < getattr(self.split, name) < 1.0:
                raise ConfigError(f"split.{name} must be in (0, 1)")

    def override(self, **sections) -> "RunConfig":
        """Replace fields section-wise, e.g. ``override(train={"lam": 1.0})``."""
        updates = {}
        for name, values in sections.items():
            current = getattr(self, name)
            updates[name] = replace(current, **values) if isinstance(values, dict) else values
        return replace(self, **updates)
