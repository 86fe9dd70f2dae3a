"""Select/skip decision machinery.

Summary states over a sentence stream, the Dice-complement loss between
two decision sequences, the greedy oracle (select iff the summary F1
strictly improves), and the learned cost-sensitive linear policy: one
cost regressor per action, trained by SGD, acting by argmin.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .corpus import JudgmentSet, SentenceStream, ValidationError
from .metrics import Update

SELECT = 1
SKIP = 0
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SummaryState:
    """Stream position t with the decision history a_1..a_t.

    `selected` are the stream indices chosen so far, in order; the next
    sentence to decide is stream.sentences[position].
    """

    stream: SentenceStream
    position: int
    decisions: tuple[int, ...]
    selected: tuple[int, ...]

    def __post_init__(self):
        if len(self.decisions) != self.position:
            raise ValueError(
                f"state at position {self.position} carries {len(self.decisions)} decisions"
            )

    @property
    def current_sentence(self):
        return self.stream.sentences[self.position]

    def updates(self) -> list[Update]:
        return [
            Update(s.doc_id, s.sent_index, s.timestamp, s)
            for s in (self.stream.sentences[i] for i in self.selected)
        ]

    @classmethod
    def initial(cls, stream: SentenceStream) -> "SummaryState":
        return cls(stream, 0, (), ())

    def advanced(self, action: int) -> "SummaryState":
        selected = self.selected + (self.position,) if action == SELECT else self.selected
        return SummaryState(self.stream, self.position + 1,
                            self.decisions + (action,), selected)


def dice_loss(a, b) -> float:
    """Complement of the Dice coefficient between two binary sequences.

    0 iff the sequences are equal (or both all-zero); 1 for disjoint
    selections; penalizes cardinality mismatch.
    """
    if len(a) != len(b):
        raise ValueError(f"decision sequences differ in length: {len(a)} vs {len(b)}")
    overlap = sum(x * y for x, y in zip(a, b))
    size = sum(a) + sum(b)
    if size == 0:
        return 0.0
    return 1.0 - 2.0 * overlap / size


# -- oracle policy ---------------------------------------------------------

def summary_f1(g: int, num_updates: int, num_nuggets: int) -> float:
    """Unpenalized F1 of expected gain and comprehensiveness."""
    return metrics.f1(metrics.expected_gain(g, num_updates),
                      metrics.comprehensiveness(g, num_nuggets))


def oracle_improvement(covered: set, num_updates: int, candidate_nuggets,
                       num_nuggets: int) -> bool:
    """Would adding a sentence with these nugget matches raise summary F1?"""
    before = summary_f1(len(covered), num_updates, num_nuggets)
    after = summary_f1(len(covered | set(candidate_nuggets)), num_updates + 1, num_nuggets)
    return after > before


def oracle_decide(state: SummaryState, judgments: JudgmentSet, nuggets) -> int:
    """Greedy oracle: select iff the candidate strictly improves F1; ties skip."""
    covered = set()
    for i in state.selected:
        covered |= judgments.sentence_matches(state.stream.sentences[i])
    candidate = judgments.sentence_matches(state.current_sentence)
    improved = oracle_improvement(covered, len(state.selected), candidate, len(nuggets))
    return SELECT if improved else SKIP


def oracle_trajectory(stream: SentenceStream, judgments: JudgmentSet, nuggets) -> list[int]:
    """Run the greedy oracle over the whole stream (incremental coverage)."""
    num_nuggets = len(nuggets)
    covered: set[str] = set()
    num_updates = 0
    decisions: list[int] = []
    for sentence in stream:
        candidate = judgments.sentence_matches(sentence)
        if oracle_improvement(covered, num_updates, candidate, num_nuggets):
            decisions.append(SELECT)
            covered |= candidate
            num_updates += 1
        else:
            decisions.append(SKIP)
    return decisions


# -- learned cost-sensitive policy ------------------------------------------

@dataclass
class PolicyModel:
    """Per-action linear cost regressors: cost(a) = w_a . phi + b_a."""

    weights: np.ndarray  # (2, d)
    biases: np.ndarray   # (2,)
    registry_hash: str = ""
    meta: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, dim: int, registry_hash: str = "", meta: dict | None = None) -> "PolicyModel":
        return cls(np.zeros((2, dim)), np.zeros(2), registry_hash, dict(meta or {}))

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "PolicyModel":
        return PolicyModel(self.weights.copy(), self.biases.copy(),
                           self.registry_hash, dict(self.meta))


@dataclass(frozen=True)
class CostExample:
    """One (features, action, cost) triple for the cost regression."""

    features: np.ndarray
    action: int
    cost: float


def predict_costs(model: PolicyModel, features: np.ndarray) -> tuple[float, float]:
    features = np.asarray(features)
    if features.shape != (model.dim,):
        raise ValueError(f"feature dim {features.shape} does not match model dim ({model.dim},)")
    costs = model.weights @ features + model.biases
    return float(costs[0]), float(costs[1])


def policy_action(model: PolicyModel, features: np.ndarray) -> int:
    """Argmin of predicted costs; an exact tie skips."""
    c_skip, c_select = predict_costs(model, features)
    return SELECT if c_select < c_skip else SKIP


def sgd_update(model: PolicyModel, examples, eta: float) -> PolicyModel:
    """One squared-error SGD step per example, in the given order (in place)."""
    if eta <= 0:
        raise ValueError(f"learning rate must be > 0, got {eta}")
    for ex in examples:
        a = ex.action
        residual = float(model.weights[a] @ ex.features + model.biases[a]) - ex.cost
        model.weights[a] -= eta * residual * ex.features
        model.biases[a] -= eta * residual
        if not (np.isfinite(model.weights[a]).all() and np.isfinite(model.biases[a])):
            raise FloatingPointError(
                "non-finite policy weights after SGD step (feature or cost blowup)"
            )
    return model


def save_model(model: PolicyModel, path) -> None:
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "feature_dim": model.dim,
        "feature_registry_hash": model.registry_hash,
        "weights": [model.weights[0].tolist(), model.weights[1].tolist()],
        "biases": model.biases.tolist(),
        "meta": model.meta,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def load_model(path, expected_registry_hash: str | None = None) -> PolicyModel:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    version = payload.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported model format version {version!r}")
    model = PolicyModel(
        weights=np.array(payload["weights"], dtype=float),
        biases=np.array(payload["biases"], dtype=float),
        registry_hash=payload.get("feature_registry_hash", ""),
        meta=payload.get("meta", {}),
    )
    if expected_registry_hash is not None and model.registry_hash != expected_registry_hash:
        raise ValidationError(
            f"{path}: model was trained against a different feature registry "
            f"({model.registry_hash[:12]}... vs {expected_registry_hash[:12]}...)"
        )
    return model
