"""Comparison systems.

Cos: scan article first sentences, selecting those whose latent-cosine
similarity to every previously selected update stays below a threshold.
APSal: affinity-propagation clustering over non-overlapping time windows
with the summary content probability as the exemplar preference, plus the
same cross-window similarity filter. LsCos: the learned policy's updates
post-filtered by the cosine threshold. All thresholds/windows are
dev-set-tunable via the grid-search helpers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import metrics
from .corpus import Query, SentenceStream, ValidationError
from .features import Resources, StreamFeatureCache, cosine_matrix, _normalize_rows
from .metrics import Update, macro_average

REPRESENTATIONS = ("latent", "tfidf")


@dataclass(frozen=True)
class CosConfig:
    threshold: float = 0.6
    representation: str = "latent"

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValidationError(f"cosine threshold must be in [0, 1], got {self.threshold}")
        if self.representation not in REPRESENTATIONS:
            raise ValidationError(f"representation must be one of {REPRESENTATIONS}")


@dataclass(frozen=True)
class ApConfig:
    # window of 100 stable sweeps: with damping 0.9 the message dynamics
    # need ~70+ sweeps to break within-cluster symmetry, so a shorter
    # window declares convergence prematurely on small inputs
    damping: float = 0.9
    max_iterations: int = 1000
    convergence_window: int = 100
    preference_offset: float = 0.0
    window_secs: float = 3600.0
    similarity_threshold: float = 0.6
    representation: str = "latent"
    jitter: float = 1e-9
    jitter_seed: int = 0

    def __post_init__(self):
        if not 0.5 <= self.damping < 1.0:
            raise ValidationError(f"AP damping must be in [0.5, 1), got {self.damping}")
        if self.window_secs <= 0:
            raise ValidationError(f"AP window must be > 0, got {self.window_secs}")


def _sentence_vectors(sentences, resources: Resources, representation: str) -> np.ndarray:
    tfidf = resources.vectorizer.transform_many([list(s.tokens) for s in sentences])
    if representation == "tfidf":
        return tfidf  # rows already L2-normalized or zero
    return _normalize_rows(resources.projector.project(tfidf))


def first_sentence_view(stream: SentenceStream) -> SentenceStream:
    """Subsequence of article first sentences (sent_index == 0)."""
    return SentenceStream(stream.query_id,
                          tuple(s for s in stream if s.sent_index == 0))


def _max_similarity(vec: np.ndarray, kept: list[np.ndarray]) -> float:
    if not kept:
        return 0.0
    return float(max(np.dot(vec, prev) for prev in kept))


def cos_run(stream: SentenceStream, resources: Resources,
            config: CosConfig = CosConfig()) -> list[Update]:
    """First-sentence cosine-threshold baseline (always takes the first candidate)."""
    candidates = [s for s in stream if s.sent_index == 0]
    if not candidates:
        return []
    vectors = _sentence_vectors(candidates, resources, config.representation)
    updates: list[Update] = []
    kept: list[np.ndarray] = []
    for s, vec in zip(candidates, vectors):
        if not kept or _max_similarity(vec, kept) < config.threshold:
            updates.append(Update(s.doc_id, s.sent_index, s.timestamp, s))
            kept.append(vec)
    return updates


def lscos_filter(updates, resources: Resources, threshold: float,
                 representation: str = "latent") -> list[Update]:
    """Greedy cosine filter over already-produced updates (keeps a subsequence)."""
    updates = list(updates)
    for u in updates:
        if u.sentence is None:
            raise ValidationError(f"update {u.key} carries no sentence text to vectorize")
    if not updates:
        return []
    vectors = _sentence_vectors([u.sentence for u in updates], resources, representation)
    kept_updates: list[Update] = []
    kept_vecs: list[np.ndarray] = []
    for u, vec in zip(updates, vectors):
        if not kept_vecs or _max_similarity(vec, kept_vecs) < threshold:
            kept_updates.append(u)
            kept_vecs.append(vec)
    return kept_updates


# -- affinity propagation ------------------------------------------------------

@dataclass(frozen=True)
class ApResult:
    exemplars: tuple
    assignment: np.ndarray
    converged: bool
    iterations: int


def ap_cluster(similarities, preferences, config: ApConfig = ApConfig()) -> ApResult:
    """Standard affinity-propagation message passing.

    The diagonal of the similarity matrix is replaced by the preferences;
    exemplars are the points with positive responsibility+availability
    self-message once the exemplar set has been stable for the convergence
    window. A tiny seeded jitter breaks exactly symmetric inputs, which
    otherwise oscillate (no effect on generic data).
    """
    S = np.array(similarities, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError(f"similarity matrix must be square, got {S.shape}")
    n = S.shape[0]
    prefs = np.broadcast_to(np.asarray(preferences, dtype=float), (n,)).copy()
    if not (np.isfinite(S).all() and np.isfinite(prefs).all()):
        raise ValidationError("similarities and preferences must be finite")
    np.fill_diagonal(S, prefs)
    if n == 1:
        return ApResult((0,), np.zeros(1, dtype=int), True, 0)
    if config.jitter:
        rng = np.random.default_rng(config.jitter_seed)
        S = S + config.jitter * rng.standard_normal((n, n))

    lam = config.damping
    A = np.zeros((n, n))
    R = np.zeros((n, n))
    rows = np.arange(n)
    prev_exemplars: tuple = ()
    stable = 0
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iterations + 1):
        # responsibilities: r(i,k) = S(i,k) - max_{k' != k} [a(i,k') + S(i,k')]
        AS = A + S
        best = AS.argmax(axis=1)
        first = AS[rows, best]
        AS[rows, best] = -np.inf
        second = AS.max(axis=1)
        R_new = S - first[:, None]
        R_new[rows, best] = S[rows, best] - second
        R = (1.0 - lam) * R_new + lam * R

        # availabilities: a(i,k) = min(0, r(k,k) + sum_{i' not in {i,k}} max(0, r(i',k)))
        Rp = np.maximum(R, 0.0)
        np.fill_diagonal(Rp, np.diag(R))
        A_new = Rp.sum(axis=0)[None, :] - Rp
        diag = np.diag(A_new).copy()
        A_new = np.minimum(A_new, 0.0)
        np.fill_diagonal(A_new, diag)
        A = (1.0 - lam) * A_new + lam * A

        if not (np.isfinite(R).all() and np.isfinite(A).all()):
            raise FloatingPointError("non-finite affinity-propagation messages")

        exemplars = tuple(int(k) for k in np.flatnonzero(np.diag(R) + np.diag(A) > 0))
        if exemplars and exemplars == prev_exemplars:
            stable += 1
        else:
            stable = 0
        prev_exemplars = exemplars
        if exemplars and stable >= config.convergence_window:
            converged = True
            break

    exemplars = prev_exemplars
    if not exemplars:
        exemplars = (int(np.argmax(np.diag(R) + np.diag(A))),)
        converged = False
    E = np.asarray(exemplars)
    assignment = E[S[:, E].argmax(axis=1)]
    assignment[E] = E
    return ApResult(exemplars, assignment, converged, iteration)


def apsal_run(stream: SentenceStream, query: Query, resources: Resources,
              config: ApConfig = ApConfig()) -> list[Update]:
    """Windowed AP clustering with content-probability preferences.

    Exemplars of each non-overlapping time window become candidate updates,
    filtered against all previously emitted updates by the similarity
    threshold; emitted updates carry the window-end timestamp.
    """
    if not len(stream):
        return []
    by_window: dict[int, list] = {}
    for s in stream:
        by_window.setdefault(int(s.timestamp // config.window_secs), []).append(s)

    updates: list[Update] = []
    kept_vecs: list[np.ndarray] = []
    for w in sorted(by_window):
        sentences = by_window[w]
        vectors = _sentence_vectors(sentences, resources, config.representation)
        sims = vectors @ vectors.T
        scp = resources.classifier.predict_proba_many([list(s.tokens) for s in sentences])
        result = ap_cluster(sims, scp + config.preference_offset, config)
        window_end = min((w + 1) * config.window_secs, query.time_range[1])
        for k in result.exemplars:
            vec = vectors[k]
            if kept_vecs and _max_similarity(vec, kept_vecs) >= config.similarity_threshold:
                continue
            s = sentences[k]
            updates.append(Update(s.doc_id, s.sent_index, window_end, s))
            kept_vecs.append(vec)
    return updates


# -- dev-set grid searches -------------------------------------------------------

def _macro_f1(per_event_updates, events, window: float) -> float:
    reports = [
        metrics.evaluate_run(updates, ev.query, ev.nuggets, ev.judgments, window)
        for updates, ev in zip(per_event_updates, events)
    ]
    return macro_average(reports)["f1"]


def grid_search_cos(dev_events, resources: Resources, thresholds,
                    base: CosConfig = CosConfig(),
                    window: float = metrics.DEFAULT_LATENCY_WINDOW) -> dict:
    """Pick the Cos threshold maximizing dev macro F1 (first best wins ties)."""
    rows = []
    best = None
    for tau in thresholds:
        config = replace(base, threshold=tau)
        score = _macro_f1([cos_run(ev.stream, resources, config) for ev in dev_events],
                          dev_events, window)
        rows.append({"threshold": tau, "macro_f1": score})
        if best is None or score > best["macro_f1"]:
            best = rows[-1]
    return {"best": best, "grid": rows}


def grid_search_lscos(model, dev_events, resources: Resources, thresholds,
                      representation: str = "latent",
                      window: float = metrics.DEFAULT_LATENCY_WINDOW,
                      dev_caches=None) -> dict:
    """Tune the LsCos post-filter threshold on dev events."""
    from .learner import run_stream

    if dev_caches is None:
        dev_caches = [StreamFeatureCache(ev.stream, ev.query, resources) for ev in dev_events]
    base_updates = [run_stream(model, cache)[1] for cache in dev_caches]
    rows = []
    best = None
    for tau in thresholds:
        filtered = [lscos_filter(updates, resources, tau, representation)
                    for updates in base_updates]
        score = _macro_f1(filtered, dev_events, window)
        rows.append({"threshold": tau, "macro_f1": score})
        if best is None or score > best["macro_f1"]:
            best = rows[-1]
    return {"best": best, "grid": rows}


def grid_search_apsal(dev_events, resources: Resources, window_lengths, offsets,
                      thresholds, base: ApConfig = ApConfig(),
                      window: float = metrics.DEFAULT_LATENCY_WINDOW) -> dict:
    """Tune APSal window length, preference offset and similarity threshold."""
    rows = []
    best = None
    for window_secs in window_lengths:
        for offset in offsets:
            for tau in thresholds:
                config = replace(base, window_secs=window_secs,
                                 preference_offset=offset, similarity_threshold=tau)
                score = _macro_f1(
                    [apsal_run(ev.stream, ev.query, resources, config) for ev in dev_events],
                    dev_events, window)
                rows.append({"window_secs": window_secs, "preference_offset": offset,
                             "similarity_threshold": tau, "macro_f1": score})
                if best is None or score > best["macro_f1"]:
                    best = rows[-1]
    return {"best": best, "grid": rows}
