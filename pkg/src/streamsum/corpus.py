"""Event queries, timestamped sentence streams, and relevance judgments.

Loading and validation of the on-disk formats, document filtering
(truncation, keyword gate, near-duplicate removal) and stream
downsampling. All types are immutable after construction.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

NE_CLASSES = ("PERSON", "LOCATION", "ORGANIZATION")
NE_NONE = "NONE"
VALID_NE_TAGS = frozenset(NE_CLASSES) | {NE_NONE}

DEFAULT_DEDUP_THRESHOLD = 0.8
DEFAULT_MAX_DOC_SENTENCES = 20


class ValidationError(ValueError):
    """An input file or record violates the data contract."""


def _normalize_terms(terms) -> tuple[str, ...]:
    """Lowercase, strip and deduplicate terms, preserving first-seen order."""
    seen: dict[str, None] = {}
    for term in terms:
        t = " ".join(str(term).lower().split())
        if t and t not in seen:
            seen[t] = None
    return tuple(seen)


@dataclass(frozen=True)
class Query:
    """An event query: text, categorical event type and a time window."""

    id: str
    text: str
    event_type: str
    time_range: tuple[float, float]
    keywords: tuple[str, ...]
    synonyms: tuple[str, ...] = ()

    def __post_init__(self):
        start, end = self.time_range
        if not start < end:
            raise ValidationError(
                f"query {self.id!r}: time_range start ({start}) must be < end ({end})"
            )
        if not self.keywords:
            raise ValidationError(f"query {self.id!r}: keywords must be non-empty")

    @property
    def match_terms(self) -> frozenset[str]:
        """Keywords plus synonyms, for feature-level term matching."""
        return frozenset(self.keywords) | frozenset(self.synonyms)


@dataclass(frozen=True)
class Nugget:
    """A gold sub-event: the atomic unit of evaluation credit."""

    id: str
    query_id: str
    text: str
    timestamp: float


@dataclass(frozen=True)
class Sentence:
    """One stream unit: a tokenized, NE-tagged sentence of a document."""

    doc_id: str
    sent_index: int
    timestamp: float
    tokens: tuple[str, ...]
    ne_tags: tuple[str, ...]
    raw_text: str

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ValidationError(
                f"sentence {self.doc_id}/{self.sent_index}: needs >= 1 token"
            )
        if len(self.tokens) != len(self.ne_tags):
            raise ValidationError(
                f"sentence {self.doc_id}/{self.sent_index}: "
                f"{len(self.tokens)} tokens vs {len(self.ne_tags)} ne_tags"
            )
        if self.sent_index < 0:
            raise ValidationError(
                f"sentence {self.doc_id}/{self.sent_index}: sent_index must be >= 0"
            )
        bad = set(self.ne_tags) - VALID_NE_TAGS
        if bad:
            raise ValidationError(
                f"sentence {self.doc_id}/{self.sent_index}: invalid ne_tags {sorted(bad)}"
            )

    @property
    def key(self) -> tuple[str, int]:
        return (self.doc_id, self.sent_index)

    def lower_tokens(self) -> list[str]:
        return [t.lower() for t in self.tokens]


@dataclass(frozen=True)
class Document:
    """A document as a unit: sentences sharing doc_id and timestamp."""

    doc_id: str
    timestamp: float
    sentences: tuple[Sentence, ...]

    def __post_init__(self):
        if not self.sentences:
            raise ValidationError(f"document {self.doc_id}: no sentences")
        for s in self.sentences:
            if s.doc_id != self.doc_id:
                raise ValidationError(
                    f"document {self.doc_id}: foreign sentence {s.doc_id}/{s.sent_index}"
                )
        indices = [s.sent_index for s in self.sentences]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValidationError(
                f"document {self.doc_id}: sent_index must be strictly increasing"
            )

    def tokens(self) -> list[str]:
        """All tokens of the document, lowercased."""
        out: list[str] = []
        for s in self.sentences:
            out.extend(s.lower_tokens())
        return out

    def truncated(self, max_sentences: int) -> "Document":
        if len(self.sentences) <= max_sentences:
            return self
        return Document(self.doc_id, self.timestamp, self.sentences[:max_sentences])


@dataclass(frozen=True)
class SentenceStream:
    """Time-ordered sentences for one query (ties: doc_id, then sent_index)."""

    query_id: str
    sentences: tuple[Sentence, ...]

    def __post_init__(self):
        ts = [s.timestamp for s in self.sentences]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValidationError(f"stream {self.query_id}: timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    @classmethod
    def from_sentences(cls, query_id: str, sentences) -> "SentenceStream":
        ordered = sorted(sentences, key=lambda s: (s.timestamp, s.doc_id, s.sent_index))
        return cls(query_id, tuple(ordered))

    def documents(self) -> list[Document]:
        """Group consecutive sentences by doc_id into atomic documents."""
        docs: list[Document] = []
        run: list[Sentence] = []
        for s in self.sentences:
            if run and s.doc_id != run[-1].doc_id:
                docs.append(Document(run[0].doc_id, run[0].timestamp, tuple(run)))
                run = []
            run.append(s)
        if run:
            docs.append(Document(run[0].doc_id, run[0].timestamp, tuple(run)))
        return docs

    def truncated(self, length: int) -> "SentenceStream":
        return SentenceStream(self.query_id, self.sentences[:length])


@dataclass(frozen=True)
class JudgmentSet:
    """(doc_id, sent_index) -> matched nugget ids.

    An empty set means judged non-matching; an absent key matches nothing.
    """

    matches: dict = field(default_factory=dict)

    def nuggets_for(self, doc_id: str, sent_index: int) -> frozenset[str]:
        return self.matches.get((doc_id, sent_index), frozenset())

    def sentence_matches(self, sentence: Sentence) -> frozenset[str]:
        return self.nuggets_for(sentence.doc_id, sentence.sent_index)

    def __len__(self) -> int:
        return len(self.matches)


# -- file loading --------------------------------------------------------

def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON ({e})") from e


def _iter_jsonl(path):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: not valid JSON ({e})") from e


def _require(record: dict, fields, where: str):
    for name in fields:
        if name not in record:
            raise ValidationError(f"{where}: missing field {name!r}")


def load_synonyms(path) -> dict:
    """Load a synonym file: a JSON object mapping query term -> synonym list."""
    rec = _read_json(path)
    if not isinstance(rec, dict):
        raise ValidationError(f"{path}: synonym file must map terms to synonym lists")
    out = {}
    for term, syns in rec.items():
        if not isinstance(syns, (list, tuple)):
            raise ValidationError(f"{path}: synonyms for {term!r} must be a list")
        out[" ".join(str(term).lower().split())] = _normalize_terms(syns)
    return out


def load_query(path, synonym_path=None) -> Query:
    """Load and validate a query file (single JSON document).

    A synonym file extends the query's synonyms with the entries of its
    keywords.
    """
    rec = _read_json(path)
    _require(rec, ("id", "text", "event_type", "start", "end", "keywords"), str(path))
    keywords = _normalize_terms(rec["keywords"])
    synonyms = list(rec.get("synonyms", ()))
    if synonym_path is not None:
        table = load_synonyms(synonym_path)
        for keyword in keywords:
            synonyms.extend(table.get(keyword, ()))
    return Query(
        id=str(rec["id"]),
        text=str(rec["text"]),
        event_type=str(rec["event_type"]),
        time_range=(float(rec["start"]), float(rec["end"])),
        keywords=keywords,
        synonyms=_normalize_terms(synonyms),
    )


def load_nuggets(path, query: Query) -> list[Nugget]:
    """Load the nugget file for a query; ids must be unique."""
    nuggets: list[Nugget] = []
    seen: set[str] = set()
    for lineno, rec in _iter_jsonl(path):
        _require(rec, ("nugget_id", "timestamp", "text"), f"{path}:{lineno}")
        nid = str(rec["nugget_id"])
        if nid in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate nugget id {nid!r}")
        seen.add(nid)
        ts = float(rec["timestamp"])
        if ts > query.time_range[1]:
            raise ValidationError(
                f"{path}:{lineno}: nugget {nid!r} timestamp {ts} after query end"
            )
        nuggets.append(Nugget(id=nid, query_id=query.id, text=str(rec["text"]), timestamp=ts))
    return nuggets


def load_judgments(path, nuggets) -> JudgmentSet:
    """Load (doc_id, sent_index, nugget_id) triples; nugget ids must exist.

    A triple with nugget_id null/empty marks the sentence as judged
    non-matching.
    """
    known = {n.id for n in nuggets}
    matches: dict[tuple[str, int], set[str]] = {}
    unknown: set[str] = set()
    for lineno, rec in _iter_jsonl(path):
        _require(rec, ("doc_id", "sent_index", "nugget_id"), f"{path}:{lineno}")
        key = (str(rec["doc_id"]), int(rec["sent_index"]))
        bucket = matches.setdefault(key, set())
        nid = rec["nugget_id"]
        if nid in (None, ""):
            continue
        nid = str(nid)
        if nid not in known:
            unknown.add(nid)
            continue
        bucket.add(nid)
    if unknown:
        raise ValidationError(f"{path}: unknown nugget ids: {sorted(unknown)}")
    return JudgmentSet({k: frozenset(v) for k, v in matches.items()})


def _sentence_from_record(rec: dict, where: str) -> Sentence:
    _require(rec, ("doc_id", "sent_index", "timestamp", "tokens", "ne_tags", "raw_text"), where)
    try:
        return Sentence(
            doc_id=str(rec["doc_id"]),
            sent_index=int(rec["sent_index"]),
            timestamp=float(rec["timestamp"]),
            tokens=tuple(str(t) for t in rec["tokens"]),
            ne_tags=tuple(str(t) for t in rec["ne_tags"]),
            raw_text=str(rec["raw_text"]),
        )
    except ValidationError as e:
        raise ValidationError(f"{where}: {e}") from e


def load_stream(path, query: Query | None = None, query_id: str = "") -> SentenceStream:
    """Load a stream file; with a query, enforce its time range."""
    sentences = [_sentence_from_record(rec, f"{path}:{lineno}") for lineno, rec in _iter_jsonl(path)]
    qid = query.id if query is not None else query_id
    if query is not None:
        start, end = query.time_range
        for s in sentences:
            if not (start <= s.timestamp <= end):
                raise ValidationError(
                    f"{path}: sentence {s.doc_id}/{s.sent_index} timestamp {s.timestamp} "
                    f"outside query time range [{start}, {end}]"
                )
    return SentenceStream.from_sentences(qid, sentences)


def write_stream(stream: SentenceStream, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in stream:
            f.write(json.dumps({
                "doc_id": s.doc_id,
                "sent_index": s.sent_index,
                "timestamp": s.timestamp,
                "tokens": list(s.tokens),
                "ne_tags": list(s.ne_tags),
                "raw_text": s.raw_text,
            }, sort_keys=True) + "\n")


def load_documents(path) -> list[Document]:
    """Load a document file (stream format) into time-ordered documents."""
    by_doc: dict[str, list[Sentence]] = {}
    for lineno, rec in _iter_jsonl(path):
        s = _sentence_from_record(rec, f"{path}:{lineno}")
        by_doc.setdefault(s.doc_id, []).append(s)
    docs = []
    for doc_id, sentences in by_doc.items():
        sentences.sort(key=lambda s: s.sent_index)
        docs.append(Document(doc_id, sentences[0].timestamp, tuple(sentences)))
    docs.sort(key=lambda d: (d.timestamp, d.doc_id))
    return docs


# -- filtering and downsampling ------------------------------------------

def filter_documents(
    docs,
    query: Query,
    vectorizer=None,
    dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD,
    max_doc_sentences: int = DEFAULT_MAX_DOC_SENTENCES,
) -> SentenceStream:
    """Truncate, keyword-gate and near-duplicate-filter a document sequence.

    Documents are truncated to their first `max_doc_sentences` sentences,
    dropped unless the truncated text contains every query keyword
    (case-insensitive exact token match), and dropped when their tf-idf
    cosine similarity to any previously *retained* document exceeds
    `dedup_threshold`. Survivors' sentences are concatenated in time order.

    If no vectorizer is given, one is fitted on the truncated input
    documents. Supplying the same fitted vectorizer makes the operation
    strictly idempotent.
    """
    from . import textrep

    docs = sorted(docs, key=lambda d: (d.timestamp, d.doc_id))
    truncated = [d.truncated(max_doc_sentences) for d in docs]
    if not truncated:
        return SentenceStream(query.id, ())

    if vectorizer is None:
        vectorizer = textrep.fit_vectorizer([d.tokens() for d in truncated])

    keywords = set(query.keywords)
    retained_vecs: list[np.ndarray] = []
    survivors: list[Document] = []
    for doc in truncated:
        if not keywords <= set(doc.tokens()):
            continue
        vec = vectorizer.transform(doc.tokens())
        if any(textrep.cosine(vec, prev) > dedup_threshold for prev in retained_vecs):
            continue
        retained_vecs.append(vec)
        survivors.append(doc)

    sentences: list[Sentence] = []
    for doc in survivors:
        sentences.extend(doc.sentences)
    return SentenceStream(query.id, tuple(sentences))


def downsample(
    stream: SentenceStream,
    n: int,
    judgments: JudgmentSet,
    rng_seed: int,
    max_attempts: int = 1000,
) -> SentenceStream:
    """Uniformly sample n sentences (without replacement), in stream order.

    Redraws with a seed-folded attempt counter until the sample contains at
    least one nugget-matching sentence; deterministic given the seed.
    """
    if n < 1:
        raise ValidationError(f"downsample length must be >= 1, got {n}")
    if len(stream) < n:
        warnings.warn(
            f"stream {stream.query_id!r} has {len(stream)} < {n} sentences; returned unchanged",
            stacklevel=2,
        )
        return stream

    def has_match(sentences) -> bool:
        return any(judgments.sentence_matches(s) for s in sentences)

    if not has_match(stream.sentences):
        raise ValidationError(
            f"stream {stream.query_id!r} has no nugget-matching sentence; resampling cannot terminate"
        )

    for attempt in range(max_attempts):
        rng = np.random.default_rng([rng_seed, attempt])
        idx = np.sort(rng.choice(len(stream), size=n, replace=False))
        picked = [stream.sentences[i] for i in idx]
        if has_match(picked):
            return SentenceStream(stream.query_id, tuple(picked))
    raise RuntimeError(
        f"downsample of stream {stream.query_id!r} found no matching sample in {max_attempts} attempts"
    )
