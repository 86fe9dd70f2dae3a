"""Shared text representations.

tf-idf bag-of-words vectors, a k-dimensional latent projector (truncated
SVD), cosine similarity, and additively smoothed unigram language models.
The internal convention is cosine *similarity* in [-1, 1]; any distance is
1 - similarity.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.decomposition import TruncatedSVD
from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS

DEFAULT_STOPWORDS = frozenset(ENGLISH_STOP_WORDS)
DEFAULT_LM_ALPHA = 0.1
DEFAULT_LATENT_K = 100


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0.0 when either vector is all-zero."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class Vectorizer:
    """tf-idf bag-of-words with idf = ln(N/df) + 1 and L2-normalized output."""

    vocabulary: dict
    idf: np.ndarray
    stopwords: frozenset
    corpus_id: str = ""

    @property
    def size(self) -> int:
        return len(self.vocabulary)

    def transform(self, tokens) -> np.ndarray:
        """Map a token list to a dense L2-normalized tf-idf vector."""
        vec = np.zeros(self.size)
        for term, count in Counter(t.lower() for t in tokens).items():
            col = self.vocabulary.get(term)
            if col is not None and term not in self.stopwords:
                vec[col] = count * self.idf[col]
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def transform_many(self, token_lists) -> np.ndarray:
        if not token_lists:
            return np.zeros((0, self.size))
        return np.stack([self.transform(tokens) for tokens in token_lists])


def fit_vectorizer(token_lists, stopwords=DEFAULT_STOPWORDS, corpus_id: str = "") -> Vectorizer:
    """Fit tf-idf on a corpus of token lists (one list per unit)."""
    if not token_lists:
        raise ValueError("cannot fit a vectorizer on an empty corpus")
    n_docs = len(token_lists)
    df: Counter = Counter()
    for tokens in token_lists:
        df.update({t.lower() for t in tokens} - stopwords)
    terms = sorted(df)
    vocabulary = {term: i for i, term in enumerate(terms)}
    idf = np.array([math.log(n_docs / df[t]) + 1.0 for t in terms])
    return Vectorizer(vocabulary=vocabulary, idf=idf, stopwords=frozenset(stopwords),
                      corpus_id=corpus_id)


@dataclass(frozen=True)
class LatentProjector:
    """Rank-k linear projector from tf-idf space to a latent space.

    Backed by truncated SVD of the corpus tf-idf matrix; stands in for the
    factorization-based embedding and can be swapped for any V x k map.
    """

    projection: np.ndarray  # (V, k)
    k: int

    def project(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors) @ self.projection


def fit_latent(vectorizer: Vectorizer, token_lists, k: int, seed: int = 0) -> LatentProjector:
    """Fit a rank-k projector on the corpus; deterministic given seed."""
    if k < 1:
        raise ValueError(f"latent dimension must be >= 1, got {k}")
    if k > min(vectorizer.size, len(token_lists)):
        raise ValueError(
            f"latent dimension {k} exceeds min(vocabulary={vectorizer.size}, "
            f"corpus={len(token_lists)})"
        )
    matrix = vectorizer.transform_many(token_lists)
    svd = TruncatedSVD(n_components=k, random_state=seed)
    # degenerate corpora (zero variance) make sklearn's unused
    # explained-variance ratio divide by zero; the projector is unaffected
    with np.errstate(invalid="ignore", divide="ignore"):
        svd.fit(matrix)
    return LatentProjector(projection=svd.components_.T.copy(), k=k)


class AvgLogProb(NamedTuple):
    value: float
    no_content: bool


@dataclass
class LanguageModel:
    """Additively smoothed unigram model; one extra type reserves OOV mass."""

    counts: dict = field(default_factory=dict)
    total: int = 0
    alpha: float = DEFAULT_LM_ALPHA
    domain: str = "general"

    @property
    def vocab_size(self) -> int:
        return len(self.counts)

    def prob(self, token: str) -> float:
        denom = self.total + self.alpha * (self.vocab_size + 1)
        return (self.counts.get(token.lower(), 0) + self.alpha) / denom

    def log_prob(self, token: str) -> float:
        return math.log(self.prob(token))

    def copy(self) -> "LanguageModel":
        return LanguageModel(dict(self.counts), self.total, self.alpha, self.domain)


def fit_language_model(token_lists, alpha: float = DEFAULT_LM_ALPHA,
                       domain: str = "general") -> LanguageModel:
    lm = LanguageModel(alpha=alpha, domain=domain)
    for tokens in token_lists:
        _add_tokens(lm, tokens)
    return lm


def _add_tokens(lm: LanguageModel, tokens) -> None:
    for t in tokens:
        t = t.lower()
        lm.counts[t] = lm.counts.get(t, 0) + 1
        lm.total += 1


def avg_log_prob(lm: LanguageModel, tokens, stopwords=frozenset()) -> AvgLogProb:
    """Mean log probability over non-stopword tokens.

    All-stopword (or empty) input yields value 0.0 with the no_content flag.
    """
    content = [t for t in tokens if t.lower() not in stopwords]
    if not content:
        return AvgLogProb(0.0, True)
    return AvgLogProb(sum(lm.log_prob(t) for t in content) / len(content), False)


def update_stream_lm(lm: LanguageModel, doc_tokens) -> LanguageModel:
    """Fold a newly arrived document's tokens into a stream language model."""
    if lm.domain != "stream":
        raise ValueError(f"update_stream_lm requires a stream LM, got domain {lm.domain!r}")
    _add_tokens(lm, doc_tokens)
    return lm


def read_sentence_corpus(directory) -> list:
    """Read an LM corpus directory: plain-text files, one sentence per line.

    Returns whitespace-tokenized sentences from every regular file, in
    sorted file order.
    """
    import os

    token_lists = []
    for name in sorted(os.listdir(directory)):
        path = os.path.join(directory, name)
        if not os.path.isfile(path):
            continue
        with open(path, encoding="utf-8") as f:
            for line in f:
                tokens = line.split()
                if tokens:
                    token_lists.append(tokens)
    if not token_lists:
        raise ValueError(f"LM corpus directory {directory!r} contains no sentences")
    return token_lists
