import math
import warnings

import numpy as np
import pytest

from streamsum import textrep
from streamsum.corpus import Document, Query, Sentence, SentenceStream
from streamsum.features import (
    BASE_NAMES,
    DYNAMIC_NAMES,
    STATIC_NAMES,
    FeatureConfig,
    FeatureVector,
    StreamFeatureCache,
    StreamStats,
    centroid_score,
    conjoin,
    conjoin_names,
    df_percent_change,
    doc_unigram_distribution,
    fit_stream_stats,
    lexrank,
    novelty_scores,
    registry,
    registry_hash,
    static_features,
    sumbasic,
    term_ngrams,
    train_content_classifier,
)

from synth import make_event

NO_STOP = frozenset()


def make_sentence(doc_id, sent_index, ts, tokens, tags=None):
    tokens = tuple(tokens)
    tags = tuple(tags) if tags is not None else ("NONE",) * len(tokens)
    return Sentence(doc_id, sent_index, ts, tokens, tags, " ".join(tokens))


# -- registry -------------------------------------------------------------------

def test_registry_shape_and_stability():
    names = registry()
    assert len(names) == 4 * len(BASE_NAMES) == 160
    assert len(set(names)) == len(names)
    assert registry_hash() == registry_hash(names)
    assert conjoin_names(("x",)) == ("x", "x*scp", "x*df", "x*scp*df")


def test_feature_vector_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        FeatureVector(np.array([1.0, np.nan]), ("a", "b"))


# -- conjoin --------------------------------------------------------------------

def test_conjoin_hand_value():
    assert conjoin(np.array([2.0]), 0.5, 3.0).tolist() == [2.0, 1.0, 6.0, 3.0]


def test_conjoin_zero_and_identity_multipliers():
    f = np.array([1.5, -2.0])
    zeroed = conjoin(f, 0.0, 0.0)
    assert zeroed[2:].tolist() == [0.0] * 6
    same = conjoin(f, 1.0, 1.0)
    assert np.allclose(same.reshape(4, 2), np.tile(f, (4, 1)))
    assert len(conjoin(np.ones(7), 0.3, 0.4)) == 28


# -- salience -------------------------------------------------------------------

def eigen_stationary(vectors, damping=0.85):
    """Independent dense oracle: left eigenvector of the teleporting walk."""
    V = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    N = np.where(norms > 0, V / np.where(norms > 0, norms, 1), 0.0)
    W = np.clip(N @ N.T, 0, None)
    np.fill_diagonal(W, 0.0)
    n = len(W)
    deg = W.sum(axis=1)
    P = np.where(deg[:, None] > 0, W / np.where(deg[:, None] > 0, deg[:, None], 1), 1.0 / n)
    M = (1 - damping) / n * np.ones((n, n)) + damping * P
    vals, vecs = np.linalg.eig(M.T)
    lead = np.argmin(np.abs(vals - 1.0))
    pi = np.real(vecs[:, lead])
    return pi / pi.sum()


def test_lexrank_uniform_for_equal_similarities():
    vectors = np.tile(np.array([1.0, 1.0]), (4, 1))
    assert np.allclose(lexrank(vectors), 0.25, atol=1e-8)


def test_lexrank_single_node():
    assert lexrank(np.array([[1.0, 0.0]])).tolist() == [1.0]


def test_lexrank_matches_eigen_oracle():
    vectors = np.array([[1.0, 0.0], [0.8, 0.6], [0.0, 1.0]])
    scores = lexrank(vectors)
    oracle = eigen_stationary(vectors)
    assert np.allclose(scores, oracle, atol=1e-6)
    assert scores.sum() == pytest.approx(1.0, abs=1e-6)


def test_lexrank_random_graphs_match_oracle_and_scale_invariance():
    rng = np.random.default_rng(4)
    for n in range(3, 11):
        vectors = rng.uniform(0, 1, size=(n, 6))
        scores = lexrank(vectors)
        assert np.allclose(scores, eigen_stationary(vectors), atol=1e-6)
        assert scores.sum() == pytest.approx(1.0, abs=1e-6)
        assert np.allclose(lexrank(vectors * 7.3), scores, atol=1e-9)


def test_lexrank_handles_isolated_nodes():
    vectors = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])  # node 1 isolated
    scores = lexrank(vectors)
    assert np.isfinite(scores).all()
    assert scores.sum() == pytest.approx(1.0, abs=1e-6)


def hand_cosine(a, b):
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def test_centroid_identical_vectors():
    assert np.allclose(centroid_score(np.tile([2.0, 1.0], (3, 1))), 1.0)


def test_centroid_opposite_vectors_zero():
    assert centroid_score(np.array([[1.0, 0.0], [-1.0, 0.0]])).tolist() == [0.0, 0.0]


def test_centroid_hand_values():
    vectors = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    centroid = [2.0 / 3.0, 2.0 / 3.0]
    expected = [hand_cosine(v, centroid) for v in vectors]
    assert np.allclose(centroid_score(np.array(vectors)), expected)


def test_sumbasic_values_and_flag():
    dist = doc_unigram_distribution(["alpha", "beta", "beta", "gamma"], NO_STOP)
    assert dist["beta"] == pytest.approx(0.5)
    one = sumbasic(["alpha"], dist, NO_STOP)
    assert (one.avg, one.total) == (pytest.approx(0.25), pytest.approx(0.25))
    rep = sumbasic(["beta", "beta", "beta"], dist, NO_STOP)
    assert rep.total == pytest.approx(3 * 0.5)
    mixed = sumbasic(["alpha", "beta"], dist, NO_STOP)
    assert mixed.avg == pytest.approx((0.25 + 0.5) / 2)
    assert mixed.total == pytest.approx(0.75)
    flagged = sumbasic(["the"], dist, frozenset({"the"}))
    assert flagged == (0.0, 0.0, True)


def test_novelty_scores_identical_and_degenerate():
    sims = np.ones((3, 3))
    arith, geom = novelty_scores(sims)
    assert np.allclose(arith, 0.0)
    assert np.allclose(geom, 1e-6)  # floored distances
    arith1, geom1 = novelty_scores(np.ones((1, 1)))
    assert arith1.tolist() == [1.0] and geom1.tolist() == [1.0]


# -- content classifier -------------------------------------------------------------

def separable_training_set():
    positives = [["troops", "killed", f"pad{i}"] for i in range(10)]
    negatives = [["weather", "calm", f"pad{i}"] for i in range(10)]
    return positives + negatives, [1] * 10 + [0] * 10


def test_classifier_learns_separating_ngram():
    texts, labels = separable_training_set()
    clf = train_content_classifier(texts, labels)
    assert clf.predict_proba(["killed", "downtown"]) == pytest.approx(1.0)
    assert clf.predict_proba(["calm", "weather"]) == pytest.approx(0.0)


def test_classifier_deterministic():
    texts, labels = separable_training_set()
    a = train_content_classifier(texts, labels)
    b = train_content_classifier(texts, labels)
    assert a.fingerprint == b.fingerprint
    probe = [["killed"], ["calm"], ["killed", "calm"], ["nothing"]]
    assert np.array_equal(a.predict_proba_many(probe), b.predict_proba_many(probe))


def test_classifier_leaf_probabilities_match_recount_oracle():
    rng = np.random.default_rng(8)
    texts, labels = [], []
    for i in range(20):
        label = int(rng.random() < 0.5)
        tokens = ["killed"] if (label and rng.random() < 0.8) else ["quiet"]
        tokens += [f"w{int(rng.integers(0, 5))}" for _ in range(3)]
        texts.append(tokens)
        labels.append(label)
    clf = train_content_classifier(texts, labels)
    X = clf._matrix(texts)
    leaves = clf.tree.apply(X)
    proba = clf.predict_proba_many(texts)
    labels_arr = np.asarray(labels)
    for leaf in np.unique(leaves):
        members = leaves == leaf
        assert np.allclose(proba[members], labels_arr[members].mean())


def test_classifier_single_class_constant_with_warning():
    with pytest.warns(UserWarning, match="single-class"):
        clf = train_content_classifier([["a"], ["b"]], [1, 1])
    assert clf.predict_proba(["anything"]) == 1.0


def test_term_ngrams_range():
    grams = term_ngrams(["A", "b", "c"], 1, 2)
    assert grams == {"a", "b", "c", "a b", "b c"}


# -- stream stats -------------------------------------------------------------------

def test_df_percent_change_guards():
    assert df_percent_change({}, 10) == (0.0, True)
    assert df_percent_change({8: 2, 9: 3}, 10) == ((3 - 2) / 2, False)
    assert df_percent_change({9: 3}, 10) == ((3 - 0) / 1, False)


def test_zscore_clamps_and_handles_zero_variance():
    stats = StreamStats(np.zeros(24), np.zeros(24), np.zeros(24))
    assert stats.zscore(50.0, 0.0) == 3.0
    assert stats.zscore(0.0, 0.0) == 0.0
    stats2 = StreamStats(np.full(24, 1.0), np.full(24, 4.0), np.ones(24))
    assert stats2.zscore(3.0, 0.0) == pytest.approx(1.0)


def constant_df_stream(hours=6):
    sentences = []
    for h in range(hours):
        ts = (1000 + h) * 3600.0 + 60.0
        sentences.append(make_sentence(f"d{h}", 0, ts, ["alpha", f"t{h}"]))
    return SentenceStream("q", tuple(sentences))


def test_constant_document_frequency_zscores_to_zero(small_resources):
    stream = constant_df_stream()
    stats = fit_stream_stats([stream])
    query = Query(id="q", text="t", event_type="disaster",
                  time_range=(0.0, 1e12), keywords=("alpha",))
    resources = small_resources
    import dataclasses
    resources = dataclasses.replace(small_resources, stream_stats=stats)
    cache = StreamFeatureCache(stream, query, resources)
    df_idx = DYNAMIC_NAMES.index("df_change")
    missing_idx = DYNAMIC_NAMES.index("df_missing")
    for t in range(2, len(stream)):
        dyn = cache.dynamic_features(t, [])
        assert dyn[df_idx] == 0.0
        assert dyn[missing_idx] == 0.0
    first = cache.dynamic_features(0, [])
    assert first[df_idx] == 0.0 and first[missing_idx] == 1.0


# -- static features ------------------------------------------------------------------

def test_static_features_single_sentence_document(small_events, small_resources):
    query = small_events[0].query
    s = make_sentence("solo", 0, query.time_range[0] + 10, ["crisis", "alpha", "beta"])
    doc = Document("solo", s.timestamp, (s,))
    fv = static_features(s, doc, query, small_resources)
    values = fv.asdict()
    assert values["doc_position_frac"] == 0.0
    assert values["sent_len_log1p"] == pytest.approx(math.log1p(3))
    for name in ("novelty_tfidf_amean", "novelty_tfidf_gmean",
                 "novelty_latent_amean", "novelty_latent_gmean",
                 "lexrank_tfidf", "lexrank_latent"):
        assert values[name] == 1.0


def test_static_features_identical_sentences(small_events, small_resources):
    query = small_events[0].query
    sents = tuple(make_sentence("d", i, 100.0, ["crisis", "alpha"]) for i in range(3))
    doc = Document("d", 100.0, sents)
    rows = [static_features(s, doc, query, small_resources).asdict() for s in sents]
    for row in rows:
        assert row["novelty_tfidf_amean"] == pytest.approx(0.0)
        assert row["centroid_tfidf"] == pytest.approx(rows[0]["centroid_tfidf"])
        assert row["lexrank_tfidf"] == pytest.approx(1.0 / 3.0, abs=1e-6)


def test_static_lexrank_column_matches_eigen_oracle(small_events, small_resources):
    event = small_events[0]
    doc = next(d for d in event.stream.documents() if len(d.sentences) >= 3)
    from streamsum.features import document_static_matrix
    matrix = document_static_matrix(doc, event.query, small_resources)
    tfidf = small_resources.vectorizer.transform_many([list(s.tokens) for s in doc.sentences])
    oracle = eigen_stationary(tfidf)
    col = STATIC_NAMES.index("lexrank_tfidf")
    assert np.allclose(matrix[:, col], oracle, atol=1e-6)


def test_static_features_finite_on_degenerate_inputs(small_events, small_resources):
    query = small_events[0].query
    stop_word = next(iter(small_resources.stopwords))
    sents = (
        make_sentence("d", 0, 100.0, [stop_word, stop_word]),   # all stopwords
        make_sentence("d", 1, 100.0, ["zzzunknownzzz"]),        # all OOV
        make_sentence("d", 2, 100.0, ["smith"], tags=["PERSON"]),  # no NONE tokens
    )
    doc = Document("d", 100.0, sents)
    for s in sents:
        fv = static_features(s, doc, query, small_resources)
        assert np.isfinite(fv.values).all()


def test_static_features_requires_membership(small_events, small_resources):
    query = small_events[0].query
    s = make_sentence("d", 0, 100.0, ["alpha"])
    other = make_sentence("e", 0, 100.0, ["beta"])
    doc = Document("d", 100.0, (s,))
    with pytest.raises(ValueError, match="not in document"):
        static_features(other, doc, query, small_resources)


def test_ne_ratios_and_query_match_counts(small_events, small_resources):
    query = small_events[0].query  # keywords: crisis, zoneNN; synonyms: alert
    kw2 = query.keywords[1]
    s = make_sentence("d", 0, 100.0,
                      ["crisis", kw2, "alert", "smith", "plain"],
                      tags=["NONE", "NONE", "NONE", "PERSON", "NONE"])
    doc = Document("d", 100.0, (s,))
    values = static_features(s, doc, query, small_resources).asdict()
    assert values["query_match_count"] == 3.0
    assert values["query_match_frac"] == pytest.approx(3.0 / 5.0)
    assert values["ne_ratio_person"] == pytest.approx(1.0 / 4.0)
    assert values["ne_ratio_location"] == 0.0


# -- dynamic features -------------------------------------------------------------------

def test_dynamic_empty_update_history(small_events, small_resources):
    event = small_events[0]
    cache = StreamFeatureCache(event.stream, event.query, small_resources)
    dyn = dict(zip(DYNAMIC_NAMES, cache.dynamic_features(5, [])))
    assert dyn["updates_empty"] == 1.0
    for name in ("upsim_tfidf_avg", "upsim_tfidf_max", "upsim_latent_avg",
                 "upsim_latent_max", "upsim_zero"):
        assert dyn[name] == 0.0


def test_dynamic_identical_previous_update_max_similarity_one(small_resources):
    # tokens drawn from the fitted vocabulary so vectors are non-zero
    sents = (
        make_sentence("a", 0, 100.0, ["w001", "w002", "w003"]),
        make_sentence("b", 0, 200.0, ["w100", "w101"]),
        make_sentence("c", 0, 300.0, ["w001", "w002", "w003"]),
    )
    stream = SentenceStream("q", sents)
    query = Query(id="q", text="t", event_type="disaster",
                  time_range=(0.0, 1e12), keywords=("w001",))
    cache = StreamFeatureCache(stream, query, small_resources)
    dyn = dict(zip(DYNAMIC_NAMES, cache.dynamic_features(2, [0])))
    assert dyn["upsim_tfidf_max"] == pytest.approx(1.0)
    assert dyn["updates_empty"] == 0.0


def test_dynamic_zero_similarity_indicator(small_resources):
    sents = (
        make_sentence("a", 0, 100.0, ["alpha", "beta"]),
        make_sentence("b", 0, 200.0, ["zzzunknownzzz"]),  # OOV -> zero vector
    )
    stream = SentenceStream("q", sents)
    query = Query(id="q", text="t", event_type="disaster",
                  time_range=(0.0, 1e12), keywords=("alpha",))
    cache = StreamFeatureCache(stream, query, small_resources)
    dyn = dict(zip(DYNAMIC_NAMES, cache.dynamic_features(1, [0])))
    assert dyn["upsim_tfidf_max"] == 0.0
    assert dyn["upsim_zero"] == 1.0


def test_phi_constant_dimension_and_finite(small_events, small_resources):
    for event in small_events[:2]:
        cache = StreamFeatureCache(event.stream, event.query, small_resources)
        selected = []
        for t in range(len(cache)):
            phi = cache.phi(t, selected)
            assert phi.shape == (160,)
            assert np.isfinite(phi).all()
            if t % 3 == 0:
                selected.append(t)


def test_prefix_equivalence_under_document_truncation(small_events, small_resources):
    event = small_events[0]
    full = StreamFeatureCache(event.stream, event.query, small_resources)
    docs = event.stream.documents()
    cut = sum(len(d.sentences) for d in docs[:len(docs) // 2])
    truncated_stream = event.stream.truncated(cut)
    trunc = StreamFeatureCache(truncated_stream, event.query, small_resources)
    selected = [t for t in range(0, cut, 4)]
    for t in range(cut):
        sel = [i for i in selected if i < t]
        assert np.array_equal(full.phi(t, sel), trunc.phi(t, sel))
