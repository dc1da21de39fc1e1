"""Command-line entry point: ``hybridrec <command> [--config run.toml] [overrides]``.

Layout on disk (all relative to the config file's directory)::

    <data_dir>/items.jsonl ...            raw input (written by ``synth``)
    <data_dir>/canonical/                 cleaned bundle (written by ``ingest``)
    <model_dir>/model-<hash>.json         fusion model
    <model_dir>/feature_space-<hash>.json vocabulary + idf the model was trained against
    <model_dir>/train_report-<hash>.jsonl
    <report_dir>/...-<hash>.*             evaluation and comparison reports

``<hash>`` is the config hash of the run that wrote the file. Failures print
one line ``error: <Kind>: <message>`` on stderr and exit with 2 (config),
3 (data) or 4 (model).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from hybridrec.bench import BenchConfig, run_bench
from hybridrec.config import RunConfig
from hybridrec.errors import ConfigError, HashMismatch, HybridRecError, MissingArtifact
from hybridrec.evaluation import ClickSimulator, compare_models
from hybridrec.features import FeatureSpace
from hybridrec.fusion import FusionModel
from hybridrec.ingest import ITEMS_FILE, load_bundle, save_bundle
from hybridrec.pipeline import Experiment, baseline_models, build_engine
from hybridrec.simgen import GroundTruth, write_synthetic

log = logging.getLogger("hybridrec")

# flag -> (config section, field, type)
OVERRIDES = {
    "seed": (None, "seed", int),
    "data_dir": ("paths", "data_dir", str),
    "model_dir": ("paths", "model_dir", str),
    "report_dir": ("paths", "report_dir", str),
    "strategy": ("train", "strategy", str),
    "lam": ("train", "lam", float),
    "main_loss": ("train", "main_loss", str),
    "epochs": ("train", "epochs", int),
    "lr": ("train", "lr", float),
    "neighbors": ("scorer", "neighbors", int),
    "cf_variant": ("scorer", "cf_variant", str),
    "semantic": ("scorer", "semantic", str),
    "eval_k": ("eval", "k", int),
    "semantic_strength": ("synth", "semantic_strength", float),
}

CANONICAL = "canonical"
TRUTH_FILE = "ground_truth.jsonl"


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run config (defaults apply when omitted)")
    common.add_argument("--deterministic", action="store_true", help="zero wall-clock fields in outputs")
    common.add_argument("-v", "--verbose", action="store_true")
    for flag, (_, _, typ) in OVERRIDES.items():
        common.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ, default=None)

    p = argparse.ArgumentParser(prog="hybridrec", description="Hybrid recommender experiments")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset into data_dir")
    sub.add_parser("ingest", parents=[common], help="validate and canonicalize data_dir")
    sub.add_parser("train", parents=[common], help="fit a fusion model")
    r = sub.add_parser("recommend", parents=[common], help="print top-k items for one user")
    r.add_argument("--user", required=True)
    r.add_argument("--k", type=int, default=10)
    r.add_argument("--model")
    r.add_argument("--include-seen", action="store_true", help="keep already purchased items")
    e = sub.add_parser("evaluate", parents=[common], help="evaluate one model on the held-out split")
    e.add_argument("--model")
    e.add_argument("--bench", action="store_true", help="also run the retrieval throughput benchmark")
    c = sub.add_parser("compare", parents=[common], help="evaluate several models side by side")
    c.add_argument("--models", required=True,
                   help="comma list of baseline names (%s), 'trained', or model file paths"
                        % ", ".join(("cbf", "cf", "semantic", "uniform", "traditional")))
    c.add_argument("--no-reference-rows", action="store_true")
    return p


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    sections: dict[str, dict] = {}
    seed = getattr(args, "seed", None)
    for flag, (section, name, _) in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None and section is not None:
            sections.setdefault(section, {})[name] = value
    if seed is not None:
        for section in ("train", "eval", "synth"):
            sections.setdefault(section, {}).setdefault("seed", seed)
    try:
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        cfg = cfg.override(**sections) if sections else cfg
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


class Run:
    """Resolved paths and shared loaders for one command invocation."""

    def __init__(self, cfg: RunConfig, deterministic: bool):
        self.cfg = cfg
        self.hash = cfg.config_hash()
        self.deterministic = deterministic
        self.data_dir = cfg.path("data_dir")
        self.model_dir = cfg.path("model_dir")
        self.report_dir = cfg.path("report_dir")

    def canonical_bundle(self):
        d = self.data_dir / CANONICAL
        if not (d / ITEMS_FILE).is_file():
            raise MissingArtifact(f"no canonical dataset in {d}; run 'ingest' first")
        return load_bundle(d)

    def model_path(self, config_hash: str | None = None) -> Path:
        return self.model_dir / f"model-{config_hash or self.hash}.json"

    def space_path(self, config_hash: str) -> Path:
        return self.model_dir / f"feature_space-{config_hash}.json"

    def load_model(self, path: str | None) -> tuple[FusionModel, FeatureSpace]:
        p = Path(path) if path else self.model_path()
        if not p.is_file():
            raise MissingArtifact(f"model file not found: {p}; run 'train' first")
        model = FusionModel.load(p)
        sp = self.space_path(model.config_hash)
        if not sp.is_file():
            raise MissingArtifact(f"feature space for model not found: {sp}")
        space = FeatureSpace.load(sp)
        check_hash(model, space)
        return model, space

    def simulator(self) -> ClickSimulator | None:
        truth = self.data_dir / TRUTH_FILE
        if truth.is_file():
            return ClickSimulator(GroundTruth.load(truth).relevance, self.cfg.eval.seed)
        return None

    def write_json(self, path: Path, obj) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
        return path


def check_hash(model: FusionModel, space: FeatureSpace) -> None:
    if model.feature_space_hash != space.fingerprint():
        raise HashMismatch(f"model was trained against feature space {model.feature_space_hash}, "
                           f"loaded space is {space.fingerprint()}")


def cmd_synth(run: Run, args) -> int:
    bundle = write_synthetic(run.cfg.synth, run.data_dir)
    log.info("wrote %d items, %d interactions, %d reviews to %s",
             len(bundle.items), len(bundle.interactions), len(bundle.reviews), run.data_dir)
    print(run.data_dir)
    return 0


def cmd_ingest(run: Run, args) -> int:
    bundle = load_bundle(run.data_dir)
    out = run.data_dir / CANONICAL
    save_bundle(bundle, out)
    report = {
        "config_hash": run.hash,
        "users": len(bundle.users),
        "items": len(bundle.items),
        "interactions": len(bundle.interactions),
        "reviews": len(bundle.reviews),
        "warnings": dict(sorted(bundle.warnings.items())),
        "validation": bundle.validate().summary(),
    }
    path = run.write_json(run.report_dir / f"ingest-{run.hash}.json", report)
    log.info("canonical dataset in %s", out)
    print(path)
    return 0


def cmd_train(run: Run, args) -> int:
    exp = Experiment.prepare(run.canonical_bundle(), run.cfg)
    model, report = exp.train()
    run.model_dir.mkdir(parents=True, exist_ok=True)
    exp.space.save(run.space_path(run.hash))
    model.save(run.model_path())
    report.write(run.model_dir / f"train_report-{run.hash}.jsonl", deterministic=run.deterministic)
    log.info("best epoch %d of %d, gradient check error %.2e",
             report.best_epoch, len(report.epochs), report.grad_check_error or 0.0)
    print(run.model_path())
    return 0


def cmd_recommend(run: Run, args) -> int:
    model, space = run.load_model(args.model)
    bundle = run.canonical_bundle()
    engine = build_engine(bundle, space, run.cfg)
    for rank, (item, score) in enumerate(engine.top_k(args.user, args.k, model, not args.include_seen), 1):
        print(f"{rank}\t{item}\t{score!r}")
    return 0


def cmd_evaluate(run: Run, args) -> int:
    if args.bench:
        result = run_bench(BenchConfig(seed=run.cfg.seed))
        path = run.write_json(run.report_dir / f"bench-{run.hash}.json", result)
        log.info("bench: %d users x %d items scored in %.2fs", result["config"]["n_users"],
                 result["config"]["n_items"], result["score_seconds"])
        print(path)
        if args.model is None and not run.model_path().is_file():
            return 0 if result["passed"] else 1
    model, space = run.load_model(args.model)
    exp = Experiment.prepare(run.canonical_bundle(), run.cfg, space)
    name = Path(args.model).stem if args.model else "trained"
    report = compare_models({name: model}, exp.evaluator(run.simulator()), include_reference=False)
    for p in report.write(run.report_dir, f"eval-{run.hash}"):
        print(p)
    return 0


def resolve_models(run: Run, names: str) -> tuple[dict[str, FusionModel], FeatureSpace | None]:
    models: dict[str, FusionModel] = {}
    space = None
    for name in (n.strip() for n in names.split(",")):
        if not name:
            continue
        if name in ("cbf", "cf", "semantic", "uniform", "traditional"):
            models[name] = None
            continue
        model, s = run.load_model(None if name == "trained" else name)
        if space is not None and s.fingerprint() != space.fingerprint():
            raise HashMismatch(f"model {name} uses a different feature space than earlier models")
        space = s
        models[name if name == "trained" else Path(name).stem] = model
    if not models:
        raise ConfigError("--models is empty")
    return models, space


def cmd_compare(run: Run, args) -> int:
    models, space = resolve_models(run, args.models)
    exp = Experiment.prepare(run.canonical_bundle(), run.cfg, space)
    base = baseline_models(exp.space, run.cfg)
    models = {k: (base[k] if v is None else v) for k, v in models.items()}
    report = compare_models(models, exp.evaluator(run.simulator()), include_reference=not args.no_reference_rows)
    for p in report.write(run.report_dir, f"compare-{run.hash}"):
        print(p)
    return 0


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train, "recommend": cmd_recommend,
    "evaluate": cmd_evaluate, "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        run = Run(load_config(args), args.deterministic)
        return COMMANDS[args.command](run, args)
    except HybridRecError as exc:
        print(f"error: {exc.kind}: {' '.join(str(exc).split())}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
