"""State featurization for select/skip decisions.

Static features describe the current sentence in its document context
(length, position, named-entity ratios, query matches, language-model
scores, SumBasic, novelty, centroid and LexRank salience, and the summary
content probability). Dynamic features depend on the stream history and
prior selections (stream language models, similarity to previous updates,
document-frequency change). The final vector conjoins everything with the
content probability and the document-frequency signal, so its length is
four times the base length and constant across states, queries and runs.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import pickle
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import sparse
from sklearn.tree import DecisionTreeClassifier

from . import textrep
from .corpus import NE_CLASSES, NE_NONE, Document, Query, Sentence, SentenceStream, ValidationError
from .textrep import DEFAULT_STOPWORDS, LanguageModel, avg_log_prob

RESOURCES_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeatureConfig:
    lexrank_damping: float = 0.85
    lexrank_threshold: float | None = None
    lexrank_tol: float = 1e-8
    lexrank_max_iter: int = 1000
    geom_floor: float = 1e-6
    ngram_min: int = 1
    ngram_max: int = 2
    tree_max_depth: int = 8
    tree_min_leaf: int = 5
    tree_max_features: int = 20000
    latent_k: int = textrep.DEFAULT_LATENT_K
    lm_alpha: float = textrep.DEFAULT_LM_ALPHA

    def to_dict(self) -> dict:
        return {
            "lexrank_damping": self.lexrank_damping,
            "lexrank_threshold": self.lexrank_threshold,
            "lexrank_tol": self.lexrank_tol,
            "lexrank_max_iter": self.lexrank_max_iter,
            "geom_floor": self.geom_floor,
            "ngram_min": self.ngram_min,
            "ngram_max": self.ngram_max,
            "tree_max_depth": self.tree_max_depth,
            "tree_min_leaf": self.tree_min_leaf,
            "tree_max_features": self.tree_max_features,
            "latent_k": self.latent_k,
            "lm_alpha": self.lm_alpha,
        }


STATIC_NAMES = (
    "sent_len_log1p",
    "doc_position_frac",
    "ne_ratio_person",
    "ne_ratio_location",
    "ne_ratio_organization",
    "query_match_count",
    "query_match_frac",
    "lm_event_avg_logprob",
    "lm_general_avg_logprob",
    "sumbasic_avg",
    "sumbasic_sum",
    "novelty_tfidf_amean",
    "novelty_tfidf_gmean",
    "novelty_latent_amean",
    "novelty_latent_gmean",
    "centroid_tfidf",
    "centroid_latent",
    "lexrank_tfidf",
    "lexrank_latent",
    "content_prob",
)

DYNAMIC_NAMES = (
    "slm_all_sum", "slm_all_avg", "slm_all_max",
    "slm_person_sum", "slm_person_avg", "slm_person_max",
    "slm_location_sum", "slm_location_avg", "slm_location_max",
    "slm_organization_sum", "slm_organization_avg", "slm_organization_max",
    "upsim_tfidf_avg", "upsim_tfidf_max",
    "upsim_latent_avg", "upsim_latent_max",
    "updates_empty", "upsim_zero",
    "df_change", "df_missing",
)

BASE_NAMES = STATIC_NAMES + DYNAMIC_NAMES


@dataclass(frozen=True)
class FeatureVector:
    """Dense values paired with a stable index -> name registry."""

    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.values) != len(self.names):
            raise ValueError(f"{len(self.values)} values vs {len(self.names)} names")
        if not np.isfinite(self.values).all():
            bad = [self.names[i] for i in np.flatnonzero(~np.isfinite(self.values))]
            raise FloatingPointError(f"non-finite feature values: {bad}")

    def __len__(self) -> int:
        return len(self.values)

    def asdict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))


def conjoin(values: np.ndarray, scp: float, df: float) -> np.ndarray:
    """[f; f*scp; f*df; f*scp*df] -- output is 4x the input length."""
    values = np.asarray(values, dtype=float)
    return np.concatenate([values, values * scp, values * df, values * (scp * df)])


def conjoin_names(names) -> tuple[str, ...]:
    names = tuple(names)
    return (names
            + tuple(n + "*scp" for n in names)
            + tuple(n + "*df" for n in names)
            + tuple(n + "*scp*df" for n in names))


def registry() -> tuple[str, ...]:
    """Full feature-name registry of the conjoined state vector."""
    return conjoin_names(BASE_NAMES)


def registry_hash(names=None) -> str:
    names = registry() if names is None else tuple(names)
    return hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()


def dump_registry(path) -> None:
    """Write the name -> index map as JSON, for debugging feature vectors."""
    names = registry()
    payload = {
        "registry_hash": registry_hash(names),
        "dimension": len(names),
        "names": {name: i for i, name in enumerate(names)},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


# -- salience scores --------------------------------------------------------

def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(norms > 0, matrix / np.where(norms > 0, norms, 1.0), 0.0)
    return out


def cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities; all-zero rows yield 0 against everything."""
    normed = _normalize_rows(np.asarray(vectors, dtype=float))
    return normed @ normed.T


def _pairwise_dots_exact(rows: np.ndarray) -> np.ndarray:
    """Pairwise dot products, one vector-vector product per pair.

    Unlike a single GEMM, each entry is independent of the matrix shape, so
    a truncated stream reproduces its prefix entries bit-for-bit.
    """
    n = len(rows)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = float(np.dot(rows[i], rows[j]))
    return out


def lexrank(vectors, threshold: float | None = None, damping: float = 0.85,
            tol: float = 1e-8, max_iter: int = 1000) -> np.ndarray:
    """Stationary distribution of the cosine-similarity random walk.

    Continuous edge weights (negative similarities carry no weight, the
    diagonal is excluded); rows without outgoing mass fall back to uniform.
    Scores sum to 1.
    """
    sims = cosine_matrix(np.atleast_2d(np.asarray(vectors, dtype=float)))
    return lexrank_from_similarities(sims, threshold=threshold, damping=damping,
                                     tol=tol, max_iter=max_iter)


def lexrank_from_similarities(sims: np.ndarray, threshold: float | None = None,
                              damping: float = 0.85, tol: float = 1e-8,
                              max_iter: int = 1000) -> np.ndarray:
    n = sims.shape[0]
    if n == 1:
        return np.ones(1)
    weights = np.clip(np.asarray(sims, dtype=float), 0.0, None)
    np.fill_diagonal(weights, 0.0)
    if threshold is not None:
        weights = np.where(weights >= threshold, weights, 0.0)
    degree = weights.sum(axis=1)
    transition = np.where(degree[:, None] > 0,
                          weights / np.where(degree[:, None] > 0, degree[:, None], 1.0),
                          1.0 / n)
    scores = np.full(n, 1.0 / n)
    teleport = (1.0 - damping) / n
    for _ in range(max_iter):
        updated = teleport + damping * (transition.T @ scores)
        if np.abs(updated - scores).sum() < tol:
            scores = updated
            break
        scores = updated
    return scores


def centroid_score(vectors) -> np.ndarray:
    """Cosine of each vector to the mean vector (0 for a zero centroid)."""
    matrix = np.atleast_2d(np.asarray(vectors, dtype=float))
    centroid = matrix.mean(axis=0)
    return np.array([textrep.cosine(row, centroid) for row in matrix])


class SumBasicScore(NamedTuple):
    avg: float
    total: float
    no_content: bool


def doc_unigram_distribution(doc_tokens, stopwords=DEFAULT_STOPWORDS) -> dict:
    """Unigram distribution over a document's non-stopword tokens."""
    counts: dict[str, int] = {}
    for t in doc_tokens:
        t = t.lower()
        if t not in stopwords:
            counts[t] = counts.get(t, 0) + 1
    total = sum(counts.values())
    return {t: c / total for t, c in counts.items()} if total else {}


def sumbasic(tokens, distribution: dict, stopwords=DEFAULT_STOPWORDS) -> SumBasicScore:
    """Average and sum of document unigram probabilities over the sentence."""
    probs = [distribution.get(t.lower(), 0.0) for t in tokens if t.lower() not in stopwords]
    if not probs:
        return SumBasicScore(0.0, 0.0, True)
    return SumBasicScore(sum(probs) / len(probs), sum(probs), False)


def novelty_scores(sims: np.ndarray, geom_floor: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Arithmetic and geometric mean cosine distance to the other sentences.

    A peerless sentence scores 1.0 (maximal distance); zero distances are
    floored at geom_floor inside the geometric mean.
    """
    n = sims.shape[0]
    if n == 1:
        return np.ones(1), np.ones(1)
    dist = np.clip(1.0 - sims, 0.0, None)
    off = ~np.eye(n, dtype=bool)
    arith = np.array([dist[i][off[i]].mean() for i in range(n)])
    geom = np.array([
        math.exp(np.log(np.maximum(dist[i][off[i]], geom_floor)).mean()) for i in range(n)
    ])
    return arith, geom


# -- summary content probability ----------------------------------------------

def term_ngrams(tokens, n_min: int = 1, n_max: int = 2) -> set[str]:
    toks = [t.lower() for t in tokens]
    grams: set[str] = set()
    for n in range(n_min, n_max + 1):
        grams.update(" ".join(toks[i:i + n]) for i in range(len(toks) - n + 1))
    return grams


@dataclass
class ContentClassifier:
    """Decision tree over term-ngram presence; outputs P(summary-worthy)."""

    vocabulary: dict
    tree: DecisionTreeClassifier | None
    fingerprint: str
    n_min: int
    n_max: int
    constant: float | None = None  # set when training data was single-class

    def _matrix(self, token_lists) -> sparse.csr_matrix:
        rows, cols = [], []
        for i, tokens in enumerate(token_lists):
            for gram in term_ngrams(tokens, self.n_min, self.n_max):
                col = self.vocabulary.get(gram)
                if col is not None:
                    rows.append(i)
                    cols.append(col)
        data = np.ones(len(rows))
        return sparse.csr_matrix((data, (rows, cols)),
                                 shape=(len(token_lists), len(self.vocabulary)))

    def predict_proba_many(self, token_lists) -> np.ndarray:
        if not token_lists:
            return np.zeros(0)
        if self.constant is not None:
            return np.full(len(token_lists), self.constant)
        proba = self.tree.predict_proba(self._matrix(token_lists))
        positive_col = int(np.flatnonzero(self.tree.classes_ == 1)[0])
        return proba[:, positive_col]

    def predict_proba(self, tokens) -> float:
        return float(self.predict_proba_many([list(tokens)])[0])


def train_content_classifier(token_lists, labels, config: FeatureConfig = FeatureConfig()) -> ContentClassifier:
    """Fit the summary-content tree on ngram presence features."""
    if len(token_lists) != len(labels):
        raise ValueError("token_lists and labels must align")
    if not token_lists:
        raise ValueError("cannot train the content classifier on an empty set")

    fingerprint = hashlib.sha256(
        "\n".join(f"{label}\t{' '.join(t.lower() for t in tokens)}"
                  for tokens, label in zip(token_lists, labels)).encode("utf-8")
    ).hexdigest()

    df: dict[str, int] = {}
    for tokens in token_lists:
        for gram in term_ngrams(tokens, config.ngram_min, config.ngram_max):
            df[gram] = df.get(gram, 0) + 1
    ranked = sorted(df, key=lambda g: (-df[g], g))[:config.tree_max_features]
    vocabulary = {gram: i for i, gram in enumerate(sorted(ranked))}

    clf = ContentClassifier(vocabulary=vocabulary, tree=None, fingerprint=fingerprint,
                            n_min=config.ngram_min, n_max=config.ngram_max)
    unique = sorted(set(labels))
    if len(unique) == 1:
        warnings.warn("content classifier training data is single-class; "
                      f"predicting constant {float(unique[0])}", stacklevel=2)
        clf.constant = float(unique[0])
        return clf

    tree = DecisionTreeClassifier(
        max_depth=config.tree_max_depth,
        min_samples_leaf=config.tree_min_leaf,
        random_state=0,
    )
    tree.fit(clf._matrix(token_lists), np.asarray(labels, dtype=int))
    clf.tree = tree
    return clf


# -- stream statistics ---------------------------------------------------------

HOUR = 3600.0


def hour_index(timestamp: float) -> int:
    return int(math.floor(timestamp / HOUR))


def df_percent_change(hour_counts: dict, hour: int) -> tuple[float, bool]:
    """Percent change in documents/hour between the last two completed hours.

    Returns (0, missing=True) when neither completed hour saw a document.
    """
    prev = hour_counts.get(hour - 1, 0)
    prev2 = hour_counts.get(hour - 2, 0)
    if prev == 0 and prev2 == 0:
        return 0.0, True
    return (prev - prev2) / max(1, prev2), False


@dataclass(frozen=True)
class StreamStats:
    """Hour-of-day mean/variance of the df-change feature, from training streams."""

    hod_mean: np.ndarray  # (24,)
    hod_var: np.ndarray   # (24,)
    hod_count: np.ndarray  # (24,)

    def zscore(self, value: float, timestamp: float, clip: float = 3.0) -> float:
        """Winsorized z-score; unclipped tails destabilize downstream SGD."""
        hod = hour_index(timestamp) % 24
        centered = value - self.hod_mean[hod]
        std = math.sqrt(self.hod_var[hod])
        z = centered / std if std > 0 else centered
        return float(np.clip(z, -clip, clip))

    @classmethod
    def empty(cls) -> "StreamStats":
        return cls(np.zeros(24), np.zeros(24), np.zeros(24))


def _document_hour_counts(stream: SentenceStream) -> dict:
    counts: dict[int, int] = {}
    for doc in stream.documents():
        h = hour_index(doc.timestamp)
        counts[h] = counts.get(h, 0) + 1
    return counts


def fit_stream_stats(streams) -> StreamStats:
    """Collect per-sentence df-change samples from training streams."""
    samples: list[list[float]] = [[] for _ in range(24)]
    for stream in streams:
        counts = _document_hour_counts(stream)
        for sentence in stream:
            h = hour_index(sentence.timestamp)
            value, missing = df_percent_change(counts, h)
            if not missing:
                samples[h % 24].append(value)
    mean = np.zeros(24)
    var = np.zeros(24)
    count = np.zeros(24)
    for hod, bucket in enumerate(samples):
        if bucket:
            arr = np.asarray(bucket)
            mean[hod] = arr.mean()
            var[hod] = arr.var()
            count[hod] = len(arr)
    return StreamStats(mean, var, count)


# -- resources -----------------------------------------------------------------

@dataclass
class Resources:
    """Read-only shared models used by the feature map."""

    vectorizer: textrep.Vectorizer
    projector: textrep.LatentProjector
    event_lms: dict
    general_lm: LanguageModel
    classifier: ContentClassifier
    stream_stats: StreamStats
    config: FeatureConfig = field(default_factory=FeatureConfig)
    meta: dict = field(default_factory=dict)

    @property
    def stopwords(self) -> frozenset:
        return self.vectorizer.stopwords

    def event_lm_for(self, event_type: str) -> LanguageModel:
        return self.event_lms.get(event_type, self.general_lm)

    def registry_hash(self) -> str:
        return registry_hash()


def save_resources(resources: Resources, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        pickle.dump({"format_version": RESOURCES_FORMAT_VERSION, "resources": resources}, f)
    os.replace(tmp, path)


def load_resources(path) -> Resources:
    with open(path, "rb") as f:
        payload = pickle.load(f)
    version = payload.get("format_version")
    if version != RESOURCES_FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported resources format version {version!r}")
    return payload["resources"]


def build_resources(events, config: FeatureConfig = FeatureConfig(),
                    stopwords=DEFAULT_STOPWORDS, event_lm_corpora: dict | None = None,
                    general_lm_corpus=None, seed: int = 0) -> Resources:
    """Fit all shared models from training events.

    Each event supplies .query, .stream and .judgments. Language-model
    corpora (token lists) may be supplied per event type and for the
    general model; otherwise the models fall back to the training streams.
    """
    events = list(events)
    if not events:
        raise ValueError("cannot build resources without training events")

    sentence_tokens = [list(s.tokens) for ev in events for s in ev.stream]
    vectorizer = textrep.fit_vectorizer(sentence_tokens, stopwords=stopwords)

    k = min(config.latent_k, vectorizer.size, len(sentence_tokens))
    if k < config.latent_k:
        warnings.warn(f"latent dimension clamped from {config.latent_k} to {k}", stacklevel=2)
    projector = textrep.fit_latent(vectorizer, sentence_tokens, k, seed=seed)

    if general_lm_corpus is not None:
        general_lm = textrep.fit_language_model(general_lm_corpus, config.lm_alpha, "general")
    else:
        general_lm = textrep.fit_language_model(sentence_tokens, config.lm_alpha, "general")

    event_lm_corpora = event_lm_corpora or {}
    event_lms: dict[str, LanguageModel] = {}
    for event_type in sorted({ev.query.event_type for ev in events}):
        corpus = event_lm_corpora.get(event_type)
        if corpus is None:
            corpus = [list(s.tokens) for ev in events
                      if ev.query.event_type == event_type for s in ev.stream]
        event_lms[event_type] = textrep.fit_language_model(corpus, config.lm_alpha,
                                                           f"event:{event_type}")

    texts, labels = [], []
    for ev in events:
        for s in ev.stream:
            texts.append(list(s.tokens))
            labels.append(1 if ev.judgments.sentence_matches(s) else 0)
    classifier = train_content_classifier(texts, labels, config)

    stream_stats = fit_stream_stats([ev.stream for ev in events])

    return Resources(
        vectorizer=vectorizer,
        projector=projector,
        event_lms=event_lms,
        general_lm=general_lm,
        classifier=classifier,
        stream_stats=stream_stats,
        config=config,
        meta={"latent_k": k, "n_events": len(events),
              "n_sentences": len(sentence_tokens), "seed": seed},
    )


# -- static features -------------------------------------------------------------

def _ne_ratios(sentence: Sentence) -> list[float]:
    none_count = sum(1 for tag in sentence.ne_tags if tag == NE_NONE)
    return [
        sum(1 for tag in sentence.ne_tags if tag == cls) / max(1, none_count)
        for cls in NE_CLASSES
    ]


def document_static_matrix(document: Document, query: Query, resources: Resources) -> np.ndarray:
    """Static features for every sentence of a document (rows align)."""
    cfg = resources.config
    stop = resources.stopwords
    sents = document.sentences

    tfidf = resources.vectorizer.transform_many([list(s.tokens) for s in sents])
    latent = resources.projector.project(tfidf)
    sim_tf = tfidf @ tfidf.T  # rows already L2-normalized (or zero)
    sim_lat = cosine_matrix(latent)

    nov_tf_a, nov_tf_g = novelty_scores(sim_tf, cfg.geom_floor)
    nov_lat_a, nov_lat_g = novelty_scores(sim_lat, cfg.geom_floor)
    cent_tf = centroid_score(tfidf)
    cent_lat = centroid_score(latent)
    lex_tf = lexrank_from_similarities(sim_tf, cfg.lexrank_threshold, cfg.lexrank_damping,
                                       cfg.lexrank_tol, cfg.lexrank_max_iter)
    lex_lat = lexrank_from_similarities(sim_lat, cfg.lexrank_threshold, cfg.lexrank_damping,
                                        cfg.lexrank_tol, cfg.lexrank_max_iter)
    scp = resources.classifier.predict_proba_many([list(s.tokens) for s in sents])

    distribution = doc_unigram_distribution(document.tokens(), stop)
    event_lm = resources.event_lm_for(query.event_type)
    terms = query.match_terms

    rows = np.empty((len(sents), len(STATIC_NAMES)))
    for i, s in enumerate(sents):
        lower = s.lower_tokens()
        match_count = sum(1 for t in lower if t in terms)
        sb = sumbasic(s.tokens, distribution, stop)
        rows[i] = [
            math.log1p(len(s.tokens)),
            s.sent_index / 20.0,
            *_ne_ratios(s),
            match_count,
            match_count / len(s.tokens),
            avg_log_prob(event_lm, s.tokens, stop).value,
            avg_log_prob(resources.general_lm, s.tokens, stop).value,
            sb.avg,
            sb.total,
            nov_tf_a[i], nov_tf_g[i], nov_lat_a[i], nov_lat_g[i],
            cent_tf[i], cent_lat[i], lex_tf[i], lex_lat[i],
            scp[i],
        ]
    return rows


def static_features(sentence: Sentence, document: Document, query: Query,
                    resources: Resources) -> FeatureVector:
    """Static feature vector of one sentence in its document context."""
    try:
        row = document.sentences.index(sentence)
    except ValueError:
        raise ValueError(
            f"sentence {sentence.doc_id}/{sentence.sent_index} is not in document {document.doc_id}"
        ) from None
    matrix = document_static_matrix(document, query, resources)
    return FeatureVector(matrix[row], STATIC_NAMES)


# -- per-stream feature cache ------------------------------------------------------

def _lm_stats(lm: LanguageModel, tokens) -> tuple[float, float, float]:
    if not tokens:
        return 0.0, 0.0, 0.0
    probs = [lm.prob(t) for t in tokens]
    return sum(probs), sum(probs) / len(probs), max(probs)


class StreamFeatureCache:
    """Per-stream precomputation of everything the decision loop needs.

    Static features and the decision-independent dynamic signals (stream
    language models, document frequency) are simulated once, in stream
    order; only the update-similarity block depends on prior selections.
    Dynamic context at position t reflects documents up to and including
    the document of sentence t, so features never look past an arriving
    document.
    """

    def __init__(self, stream: SentenceStream, query: Query, resources: Resources):
        self.stream = stream
        self.query = query
        self.resources = resources
        self.names = registry()
        self.dim = len(self.names)
        T = len(stream)
        d_static = len(STATIC_NAMES)

        docs = stream.documents()
        self.static = (np.vstack([document_static_matrix(d, query, resources) for d in docs])
                       if docs else np.zeros((0, d_static)))
        self.scp = self.static[:, STATIC_NAMES.index("content_prob")].copy()

        # per-row projection and per-pair dots keep every entry independent of
        # the stream length (the online-prefix contract is bit-exact)
        tfidf = resources.vectorizer.transform_many([list(s.tokens) for s in stream])
        if T:
            latent = np.stack([resources.projector.project(row) for row in tfidf])
            self.sim_tfidf = _pairwise_dots_exact(tfidf)
            self.sim_latent = _pairwise_dots_exact(_normalize_rows(latent))
        else:
            self.sim_tfidf = np.zeros((0, 0))
            self.sim_latent = np.zeros((0, 0))

        alpha = resources.config.lm_alpha
        lm_all = LanguageModel(alpha=alpha, domain="stream")
        lm_ne = {cls: LanguageModel(alpha=alpha, domain="stream") for cls in NE_CLASSES}
        stop = resources.stopwords
        stats = resources.stream_stats

        self.slm = np.zeros((T, 12))
        self.df = np.zeros(T)
        self.df_missing = np.zeros(T)
        hour_counts: dict[int, int] = {}
        pos = 0
        for doc in docs:
            doc_tokens = doc.tokens()
            textrep.update_stream_lm(lm_all, doc_tokens)
            for cls in NE_CLASSES:
                class_tokens = [t.lower() for s in doc.sentences
                                for t, tag in zip(s.tokens, s.ne_tags) if tag == cls]
                textrep.update_stream_lm(lm_ne[cls], class_tokens)
            h = hour_index(doc.timestamp)
            hour_counts[h] = hour_counts.get(h, 0) + 1

            for s in doc.sentences:
                content = [t for t in s.lower_tokens() if t not in stop]
                row = list(_lm_stats(lm_all, content))
                for cls in NE_CLASSES:
                    class_tokens = [t.lower() for t, tag in zip(s.tokens, s.ne_tags)
                                    if tag == cls]
                    row.extend(_lm_stats(lm_ne[cls], class_tokens))
                self.slm[pos] = row
                change, missing = df_percent_change(hour_counts, hour_index(s.timestamp))
                self.df[pos] = 0.0 if missing else stats.zscore(change, s.timestamp)
                self.df_missing[pos] = 1.0 if missing else 0.0
                pos += 1

    def __len__(self) -> int:
        return len(self.stream)

    def dynamic_features(self, t: int, selected) -> np.ndarray:
        """Dynamic block at position t given the selected stream indices."""
        if selected:
            sel = np.fromiter(selected, dtype=int)
            sims_tf = self.sim_tfidf[t, sel]
            sims_lat = self.sim_latent[t, sel]
            max_tf = float(sims_tf.max())
            max_lat = float(sims_lat.max())
            update_block = [
                float(sims_tf.mean()), max_tf,
                float(sims_lat.mean()), max_lat,
                0.0,
                1.0 if (max_tf == 0.0 or max_lat == 0.0) else 0.0,
            ]
        else:
            update_block = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        return np.concatenate([
            self.slm[t],
            update_block,
            [self.df[t], self.df_missing[t]],
        ])

    def base(self, t: int, selected) -> np.ndarray:
        return np.concatenate([self.static[t], self.dynamic_features(t, selected)])

    def phi(self, t: int, selected) -> np.ndarray:
        """Full conjoined state vector at position t."""
        return conjoin(self.base(t, selected), self.scp[t], self.df[t])

    def feature_vector(self, t: int, selected) -> FeatureVector:
        return FeatureVector(self.phi(t, selected), self.names)
