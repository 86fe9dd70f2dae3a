"""Update-summary evaluation: gain, latency-penalized gain, expected gain,
comprehensiveness and F1, per event and macro-averaged across events.

A summary earns credit once per unique matched nugget. The latency
discount is linear: a nugget first matched delay seconds after its
timestamp contributes max(0, 1 - delay/window); matches at or before the
nugget timestamp contribute 1 (no early bonus). The linear form stands in
for the official track discount, with the window exposed as a flag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .corpus import JudgmentSet, Nugget, Query, Sentence, ValidationError

DEFAULT_LATENCY_WINDOW = 6 * 3600.0


@dataclass(frozen=True)
class Update:
    """A selected sentence: stream reference plus decision time."""

    doc_id: str
    sent_index: int
    timestamp: float
    sentence: Sentence | None = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.doc_id, self.sent_index)


def matched_nuggets(updates, judgments: JudgmentSet) -> set[str]:
    out: set[str] = set()
    for u in updates:
        out |= judgments.nuggets_for(u.doc_id, u.sent_index)
    return out


def gain(updates, judgments: JudgmentSet) -> int:
    """Number of unique nuggets matched; duplicate matches credit once."""
    return len(matched_nuggets(updates, judgments))


def first_match_times(updates, judgments: JudgmentSet) -> dict:
    """Earliest matching update time per matched nugget id."""
    first: dict[str, float] = {}
    for u in updates:
        for nid in judgments.nuggets_for(u.doc_id, u.sent_index):
            if nid not in first or u.timestamp < first[nid]:
                first[nid] = u.timestamp
    return first


def latency_discount(delay: float, window: float) -> float:
    return min(1.0, max(0.0, 1.0 - delay / window))


def latency_gain(updates, judgments: JudgmentSet, nuggets, window: float) -> float:
    """Gain with each nugget's credit discounted by its first-match delay."""
    if window <= 0:
        raise ValueError(f"latency window must be > 0, got {window}")
    nugget_time = {n.id: n.timestamp for n in nuggets}
    total = 0.0
    for nid, t_first in first_match_times(updates, judgments).items():
        total += latency_discount(t_first - nugget_time[nid], window)
    return total


def expected_gain(g: float, num_updates: int) -> float:
    return g / num_updates if num_updates > 0 else 0.0


def comprehensiveness(g: float, num_nuggets: int) -> float:
    if num_nuggets < 1:
        raise ValidationError("comprehensiveness undefined for zero nuggets (malformed query)")
    return g / num_nuggets


def f1(eg: float, comp: float) -> float:
    if eg + comp == 0.0:
        return 0.0
    return 2.0 * eg * comp / (eg + comp)


@dataclass(frozen=True)
class MetricsReport:
    query_id: str
    gain: int
    latency_gain: float
    expected_gain: float
    comprehensiveness: float
    f1: float
    latency_expected_gain: float
    latency_comprehensiveness: float
    latency_f1: float
    num_updates: int
    num_nuggets: int
    first_match_times: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "gain": self.gain,
            "latency_gain": self.latency_gain,
            "expected_gain": self.expected_gain,
            "comprehensiveness": self.comprehensiveness,
            "f1": self.f1,
            "latency_expected_gain": self.latency_expected_gain,
            "latency_comprehensiveness": self.latency_comprehensiveness,
            "latency_f1": self.latency_f1,
            "num_updates": self.num_updates,
            "num_nuggets": self.num_nuggets,
            "first_match_times": dict(sorted(self.first_match_times.items())),
        }


MACRO_FIELDS = (
    "gain", "latency_gain", "expected_gain", "comprehensiveness", "f1",
    "latency_expected_gain", "latency_comprehensiveness", "latency_f1",
    "num_updates",
)


def evaluate_run(updates, query: Query, nuggets, judgments: JudgmentSet,
                 window: float = DEFAULT_LATENCY_WINDOW) -> MetricsReport:
    """Score one event's update summary against its nuggets and judgments."""
    updates = list(updates)
    n_nuggets = len(nuggets)
    g = gain(updates, judgments)
    lg = latency_gain(updates, judgments, nuggets, window)
    eg = expected_gain(g, len(updates))
    comp = comprehensiveness(g, n_nuggets)
    leg = expected_gain(lg, len(updates))
    lcomp = comprehensiveness(lg, n_nuggets)
    return MetricsReport(
        query_id=query.id,
        gain=g,
        latency_gain=lg,
        expected_gain=eg,
        comprehensiveness=comp,
        f1=f1(eg, comp),
        latency_expected_gain=leg,
        latency_comprehensiveness=lcomp,
        latency_f1=f1(leg, lcomp),
        num_updates=len(updates),
        num_nuggets=n_nuggets,
        first_match_times=first_match_times(updates, judgments),
    )


def macro_average(reports) -> dict:
    """Mean of each per-event metric (F1 averaged per event, never of averages)."""
    reports = list(reports)
    if not reports:
        return {name: 0.0 for name in MACRO_FIELDS}
    return {
        name: sum(getattr(r, name) for r in reports) / len(reports)
        for name in MACRO_FIELDS
    }


# -- update file format ----------------------------------------------------

def write_updates(updates, query_id: str, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for u in updates:
            f.write(format_update_record(u, query_id) + "\n")


def format_update_record(u: Update, query_id: str) -> str:
    return json.dumps({
        "query_id": query_id,
        "doc_id": u.doc_id,
        "sent_index": u.sent_index,
        "timestamp": u.timestamp,
        "raw_text": u.sentence.raw_text if u.sentence is not None else "",
    }, sort_keys=True)


def read_updates(path, stream=None) -> list[Update]:
    """Read an update file; with a stream, resolve sentence objects."""
    by_key = {s.key: s for s in stream} if stream is not None else {}
    updates: list[Update] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: not valid JSON ({e})") from e
            for name in ("doc_id", "sent_index", "timestamp"):
                if name not in rec:
                    raise ValidationError(f"{path}:{lineno}: missing field {name!r}")
            key = (str(rec["doc_id"]), int(rec["sent_index"]))
            updates.append(Update(
                doc_id=key[0],
                sent_index=key[1],
                timestamp=float(rec["timestamp"]),
                sentence=by_key.get(key),
            ))
    return updates
