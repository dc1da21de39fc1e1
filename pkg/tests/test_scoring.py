import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hybridrec.domain import EntityIndex, RatingsMatrix
from hybridrec.errors import DimMismatch, MissingEmbedding, SchemaError, UnknownItem, UnknownUser
from hybridrec.features import build_feature_space
from hybridrec.fusion import FusionModel
from hybridrec.scoring import (
    ConstantScorer,
    EmbeddingScorer,
    HashEmbeddingStub,
    NeighborModel,
    ScoringEngine,
    cosine,
    score_cf,
    topk_indices,
)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)


@pytest.mark.parametrize("a,b,want", [([1, 0], [1, 0], 1.0), ([1, 0], [0, 1], 0.0), ([1, 1], [1, 0], 1 / math.sqrt(2))])
def test_cosine_examples(a, b, want):
    assert abs(cosine(a, b) - want) < 1e-9


def test_cosine_45_degrees_rounds_to_listed_value():
    assert round(cosine([1, 1], [1, 0]), 8) == 0.70710678


def test_cosine_zero_and_dims():
    assert cosine([0, 0], [1, 2]) == 0.0
    with pytest.raises(DimMismatch):
        cosine([1, 2], [1, 2, 3])


@given(vec3, vec3, st.floats(1e-3, 1e3))
def test_cosine_symmetric_bounded_scale_free(a, b, c):
    s = cosine(a, b)
    assert s == cosine(b, a)
    assert -1 - 1e-9 <= s <= 1 + 1e-9
    assert abs(cosine(c * a, b) - s) < 1e-9


def two_neighbor_fixture():
    # u's neighbors: v (cos 1.0) and w (cos 0.5)
    idx = EntityIndex(["u", "v", "w"])
    nm = NeighborModel(idx, np.array([[1, 2], [0, 2], [0, 1]]), np.array([[1.0, 0.5], [1.0, 0.5], [0.5, 0.5]]), 2)
    return nm


def test_cf_examples():
    nm = two_neighbor_fixture()
    r = RatingsMatrix({("v", "i"): 1.0, ("w", "i"): 0.0})
    assert math.isclose(score_cf("u", "i", nm, r, "normalized"), 1.0 / 1.5)
    assert score_cf("u", "i", nm, r, "raw") == 1.0
    assert score_cf("u", "j", nm, r) == 0.0
    single = NeighborModel(EntityIndex(["u", "v"]), np.array([[1], [0]]), np.array([[1.0], [1.0]]), 1)
    assert score_cf("u", "i", single, RatingsMatrix({("v", "i"): 1.0})) == 1.0
    with pytest.raises(UnknownUser):
        score_cf("zz", "i", nm, r)


def test_neighbors_exclude_self_and_sorted():
    x = np.random.default_rng(1).standard_normal((30, 5))
    nm = NeighborModel.build(EntityIndex([f"u{k:02d}" for k in range(30)]), x, m=7)
    for r in range(30):
        assert r not in nm.neighbors[r]
        assert np.all(np.diff(nm.sims[r]) <= 0)
        assert np.all(np.abs(nm.sims[r]) <= 1 + 1e-12)


def brute_cf(x, labels, u, i):
    xn = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-300)
    return sum(float(xn[u] @ xn[v]) * labels.get((v, i), 0.0) for v in range(len(x)) if v != u)


@given(st.integers(0, 2**31 - 1))
def test_cf_full_neighborhood_matches_brute_force(seed):
    g = np.random.default_rng(seed)
    n_u, n_i = int(g.integers(2, 15)), int(g.integers(1, 10))
    x = g.standard_normal((n_u, 4))
    labels = {(u, i): float(g.choice([0.0, 0.2, 0.4, 1.0])) for u in range(n_u) for i in range(n_i) if g.random() < 0.4}
    users = EntityIndex([f"u{k:02d}" for k in range(n_u)])
    nm = NeighborModel.build(users, x, m=n_u - 1)
    ratings = RatingsMatrix({(users.ids[u], f"i{i}"): y for (u, i), y in labels.items()})
    for u in range(n_u):
        for i in range(n_i):
            assert abs(score_cf(users.ids[u], f"i{i}", nm, ratings, "raw") - brute_cf(x, labels, u, i)) < 1e-9


def test_engine_batched_matches_pairwise(small_engine, small_bundle):
    rows = np.arange(0, len(small_engine.users), 17)
    cbf, cf, llm = small_engine.component_matrices(rows)
    items = small_engine.items.index.ids
    for a, r in enumerate(rows):
        u = small_engine.users.ids[r]
        for j in range(0, len(items), 13):
            t = small_engine.score_triple(u, items[j])
            assert abs(t.cbf - cbf[a, j]) < 1e-12
            assert abs(t.cf - cf[a, j]) < 1e-12
            assert abs(t.llm - llm[a, j]) < 1e-12


def test_engine_normalized_cf_matches_pairwise(small_bundle, small_space):
    eng = ScoringEngine.build(small_bundle, small_space, m=8, cf_variant="normalized")
    rows = np.array([0, 5, 9])
    cf = eng.cf_matrix(rows)
    for a, r in enumerate(rows):
        for j in range(0, eng.n_items, 7):
            assert abs(eng.score_cf(eng.users.ids[r], eng.items.index.ids[j]) - cf[a, j]) < 1e-12


def test_cbf_hand_values(tiny):
    space = build_feature_space(tiny, 50)
    eng = ScoringEngine.build(tiny, space, m=2)
    for u in tiny.users:
        for it in tiny.items:
            want = cosine(eng.user_vectors[eng.user_row(u)], eng.items.row(it.item))
            assert eng.score_cbf(u, it.item) == pytest.approx(want, abs=1e-12)
    with pytest.raises(UnknownItem):
        eng.score_cbf("u1", "zzz")


def test_cold_start_triple(tiny):
    space = build_feature_space(tiny, 50)
    eng = ScoringEngine.build(tiny, space, m=2, extra_users=["new"])
    t = eng.score_triple("new", "a")
    assert (t.cbf, t.cf, t.llm) == (0.0, 0.0, 0.0)


def test_hash_stub_identical_tokens_and_prefix_sharing():
    stub = HashEmbeddingStub(dim=64, seed=3)
    a = stub.embed_tokens(["runni", "shoes"])
    assert math.isclose(stub.score(a, stub.embed_tokens(["shoes", "runni"])), 1.0)
    # tokens sharing the 5-char prefix map to one direction
    assert math.isclose(stub.score(stub.embed_tokens(["planetxyz"]), stub.embed_tokens(["planeabc"])), 1.0)
    assert np.array_equal(HashEmbeddingStub(seed=3).token_vector("hello"), stub.token_vector("hello"))
    assert not np.array_equal(HashEmbeddingStub(seed=4).token_vector("hello"), stub.token_vector("hello"))


def test_constant_scorer(tiny):
    space = build_feature_space(tiny, 50)
    eng = ScoringEngine.build(tiny, space, ConstantScorer(0.5))
    assert {eng.score_semantic(u, i) for u in tiny.users for i in tiny.item_ids} == {0.5}


def test_embedding_scorer(tmp_path, tiny):
    p = tmp_path / "emb.jsonl"
    rows = [{"id": u, "kind": "user", "vector": [1.0, 2.0]} for u in tiny.users]
    rows += [{"id": i, "kind": "item", "vector": [1.0, 2.0] if i == "a" else [2.0, -1.0]} for i in tiny.item_ids]
    p.write_text("".join(json.dumps(r) + "\n" for r in rows))
    eng = ScoringEngine.build(tiny, build_feature_space(tiny, 50), EmbeddingScorer.from_file(p))
    assert math.isclose(eng.score_semantic("u1", "a"), 1.0)
    assert abs(eng.score_semantic("u1", "b")) < 1e-12
    p.write_text("".join(json.dumps(r) + "\n" for r in rows[1:]))
    with pytest.raises(MissingEmbedding):
        ScoringEngine.build(tiny, build_feature_space(tiny, 50), EmbeddingScorer.from_file(p))
    p.write_text('{"id": "x", "kind": "thing", "vector": [1]}\n')
    with pytest.raises(SchemaError):
        EmbeddingScorer.from_file(p)


def oracle_topk(scores, k):
    return [sorted(range(len(row)), key=lambda j: (-row[j], j))[:k] for row in scores]


@given(st.integers(0, 2**31 - 1), st.integers(1, 60), st.integers(1, 70), st.integers(0, 3))
def test_topk_matches_full_sort(seed, n, k, levels):
    g = np.random.default_rng(seed)
    scores = g.integers(0, levels + 1, size=(3, n)).astype(float) if levels else g.standard_normal((3, n))
    got = topk_indices(scores, k)
    assert [list(r) for r in got] == oracle_topk(scores, k)


def test_top_k_equal_scores_and_whole_catalog(tiny):
    eng = ScoringEngine.build(tiny, build_feature_space(tiny, 50), ConstantScorer(0.5))
    const = FusionModel.fixed(0, 0, 1)
    assert [i for i, _ in eng.top_k("u1", 2, const, exclude_seen=False)] == ["a", "b"]
    full = eng.top_k("u1", 10, FusionModel.fixed(1, 0, 0), exclude_seen=False)
    assert len(full) == 3
    assert [s for _, s in full] == sorted((s for _, s in full), reverse=True)


def test_top_k_excludes_purchases(tiny):
    eng = ScoringEngine.build(tiny, build_feature_space(tiny, 50))
    got = [i for i, _ in eng.top_k("u1", 3, FusionModel.fixed(1, 0, 0))]
    assert "a" not in got and len(got) == 2
    with pytest.raises(UnknownUser):
        eng.top_k("ghost", 3, FusionModel.fixed(1, 0, 0))


def test_top_k_100_items_matches_oracle(small_engine):
    model = FusionModel.fixed(0.5, 0.3, 0.2)
    rows = np.arange(len(small_engine.users))[:20]
    scores = model.score_matrix(small_engine, rows)
    scores[small_engine.seen_mask(rows)] = -np.inf
    ranked = small_engine.top_k_rows(rows, 10, model)
    for r, got in zip(scores, ranked):
        want = [j for j in oracle_topk([r], 10)[0] if np.isfinite(r[j])]
        assert list(got) == want
