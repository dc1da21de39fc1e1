from collections import Counter

import numpy as np
import pytest

from hybridrec.config import RunConfig
from hybridrec.domain import EVENTS
from hybridrec.evaluation import compare_models
from hybridrec.features import build_feature_space, tokenize
from hybridrec.ingest import load_bundle
from hybridrec.pipeline import Experiment, baseline_models
from hybridrec.scoring import HashEmbeddingStub
from hybridrec.simgen import GroundTruth, SynthConfig, generate, generate_with_truth, write_synthetic

from conftest import SMALL_SYNTH


def test_same_seed_byte_identical(tmp_path):
    write_synthetic(SMALL_SYNTH, tmp_path / "a")
    write_synthetic(SMALL_SYNTH, tmp_path / "b")
    for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_different_seed_differs():
    a = generate(SMALL_SYNTH)
    b = generate(SynthConfig(**{**SMALL_SYNTH.__dict__, "seed": 12}))
    assert a.interactions != b.interactions


@pytest.mark.parametrize("s", [0.0, 0.5, 1.0])
def test_counts_validation_and_event_coverage(s):
    cfg = SynthConfig(n_users=60, n_items=40, n_interactions=700, n_reviews=30, n_topics=5, semantic_strength=s)
    bundle = generate(cfg)
    assert len(bundle.interactions) == cfg.n_interactions
    assert len(bundle.items) == cfg.n_items
    assert len(bundle.reviews) == cfg.n_reviews
    assert bundle.validate().ok
    assert set(Counter(x.event for x in bundle.interactions)) == set(EVENTS)


def test_config_validation():
    for bad in ({"n_users": 0}, {"semantic_strength": 1.5}, {"purchase_rate": -0.1},
                {"n_topics": 1, "semantic_strength": 0.5}):
        with pytest.raises(ValueError):
            SynthConfig(**bad)


def test_surface_topic_differs_at_rate_s():
    _, truth = generate_with_truth(SynthConfig(n_items=2000, n_interactions=10, n_reviews=1, semantic_strength=0.8))
    assert abs(np.mean(truth.item_topic != truth.surface_topic) - 0.8) < 0.03
    _, truth0 = generate_with_truth(SynthConfig(n_items=200, n_interactions=10, n_reviews=1, semantic_strength=0.0))
    assert np.array_equal(truth0.item_topic, truth0.surface_topic)


def test_paraphrases_miss_vocabulary_but_share_stub_vectors():
    # the routing relies on the catalog having more rare tokens than the vocabulary cap
    bundle = generate(SynthConfig(n_interactions=5000, n_reviews=1000))
    space = build_feature_space(bundle, 1024)
    core_prefixes = set()
    for item in bundle.items:
        core_prefixes.update(t[:5] for t in tokenize(item.title) if len(t) == 7)
    stub = HashEmbeddingStub()
    paraphrases = [t for item in bundle.items for t in tokenize(item.description)
                   if len(t) == 8 and t[:5] in core_prefixes]
    assert len(paraphrases) > 100
    in_vocab = sum(t in space.vocab for t in paraphrases)
    assert in_vocab / len(paraphrases) < 0.01
    for t in paraphrases[:50]:
        assert np.array_equal(stub.token_vector(t), stub.token_vector(t[:5] + "zz"))


def test_interactions_follow_affinity(small_world):
    bundle, truth = small_world
    rel = [truth.relevance(x.user, x.item) for x in bundle.interactions if x.event == "purchase"]
    uniform = truth.affinity.mean(axis=1) / truth.affinity.max(axis=1)
    assert np.mean(rel) > 3 * np.mean(uniform)


def test_ground_truth_file_round_trip(tmp_path):
    write_synthetic(SMALL_SYNTH, tmp_path)
    _, truth = generate_with_truth(SMALL_SYNTH)
    loaded = GroundTruth.load(tmp_path / "ground_truth.jsonl")
    u, i = truth.user_ids[3], truth.item_ids[7]
    assert loaded.relevance(u, i) == pytest.approx(truth.relevance(u, i), rel=1e-9)
    assert load_bundle(tmp_path).interactions == generate(SMALL_SYNTH).interactions


def _gap(s: float, seed: int) -> float:
    synth = SynthConfig(n_users=2000, n_items=300, n_interactions=20000, n_reviews=300, semantic_strength=s, seed=seed)
    cfg = RunConfig(seed=seed, synth=synth).override(scorer={"cf_variant": "raw"})
    exp = Experiment.prepare(generate(synth), cfg)
    hybrid, _ = exp.train()
    rep = compare_models({"cbf": baseline_models(exp.space, cfg)["cbf"], "hybrid": hybrid},
                         exp.evaluator(), include_reference=False)
    return rep.row("hybrid").precision - rep.row("cbf").precision


def test_semantic_edge_grows_with_s():
    # without misleading surface text CBF stays competitive; at s=0.8 it collapses
    assert _gap(0.8, 0) > _gap(0.0, 0) + 0.01
