"""Imitation training of the select/skip policy by locally optimal
learning to search.

Per training stream: roll in with the current learned policy to every
position, force each action, roll the rest of the stream out with a
beta-mixture of the oracle and the learned policy, and score the complete
decision sequence with the Dice-complement loss against the oracle's own
trajectory. The per-state min-normalized costs feed an SGD update of the
cost regressors after each stream; snapshots are taken per (stream, pass)
and the final model is the snapshot with the best dev-set macro F1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics, policy
from .corpus import JudgmentSet, Query, SentenceStream, ValidationError, downsample
from .features import Resources, StreamFeatureCache, registry_hash
from .metrics import MetricsReport, Update, macro_average
from .policy import (
    SELECT,
    CostExample,
    PolicyModel,
    SummaryState,
    dice_loss,
    oracle_improvement,
    oracle_trajectory,
    policy_action,
)

ROLLOUT_MODES = ("per_action", "per_state")


@dataclass(frozen=True)
class LolsConfig:
    n_passes: int = 10
    beta: float = 0.5
    eta: float = 0.01
    seed: int = 0
    rollout_mode: str = "per_action"
    downsample_len: int = 100
    samples_per_event: int = 10
    shuffle_examples: bool = False
    eta_decay: bool = False

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValidationError(f"beta must be in (0, 1), got {self.beta}")
        if self.n_passes < 1:
            raise ValidationError(f"n_passes must be >= 1, got {self.n_passes}")
        if self.eta <= 0:
            raise ValidationError(f"eta must be > 0, got {self.eta}")
        if self.rollout_mode not in ROLLOUT_MODES:
            raise ValidationError(f"rollout_mode must be one of {ROLLOUT_MODES}")

    def to_dict(self) -> dict:
        return {
            "n_passes": self.n_passes,
            "beta": self.beta,
            "eta": self.eta,
            "seed": self.seed,
            "rollout_mode": self.rollout_mode,
            "downsample_len": self.downsample_len,
            "samples_per_event": self.samples_per_event,
            "shuffle_examples": self.shuffle_examples,
            "eta_decay": self.eta_decay,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LolsConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown LolsConfig keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class EventData:
    """Everything one query contributes: stream, nuggets, judgments."""

    query: Query
    stream: SentenceStream
    nuggets: tuple
    judgments: JudgmentSet

    def with_stream(self, stream: SentenceStream) -> "EventData":
        return replace(self, stream=stream)


@dataclass
class TrainingRun:
    """Model snapshots with diagnostics and the dev-selected index."""

    snapshots: list
    diagnostics: list
    dev_f1: list
    selected_index: int

    @property
    def selected_model(self) -> PolicyModel:
        return self.snapshots[self.selected_index]


# -- roll-in / roll-out ------------------------------------------------------

def model_trajectory(model: PolicyModel, cache: StreamFeatureCache) -> list[int]:
    """Execute the learned policy over the whole stream."""
    decisions: list[int] = []
    selected: list[int] = []
    for t in range(len(cache)):
        action = policy_action(model, cache.phi(t, selected))
        decisions.append(action)
        if action == SELECT:
            selected.append(t)
    return decisions


def rollin(model: PolicyModel, cache: StreamFeatureCache, t: int) -> SummaryState:
    """Run the learned policy for the first t decisions and return s_t."""
    if not 0 <= t <= len(cache) - 1:
        raise ValueError(f"roll-in position {t} outside stream of length {len(cache)}")
    decisions: list[int] = []
    selected: list[int] = []
    for u in range(t):
        action = policy_action(model, cache.phi(u, selected))
        decisions.append(action)
        if action == SELECT:
            selected.append(u)
    return SummaryState(cache.stream, t, tuple(decisions), tuple(selected))


class ModelSuffixPolicy:
    """Roll-out suffix driven by the learned cost regressors."""

    def __init__(self, model: PolicyModel):
        self.model = model

    def decide(self, cache, t, selected, covered) -> int:
        return policy_action(self.model, cache.phi(t, selected))


class OracleSuffixPolicy:
    """Roll-out suffix driven by the greedy oracle."""

    def __init__(self, judgments: JudgmentSet, num_nuggets: int):
        self.judgments = judgments
        self.num_nuggets = num_nuggets

    def decide(self, cache, t, selected, covered) -> int:
        candidate = self.judgments.sentence_matches(cache.stream.sentences[t])
        improved = oracle_improvement(covered, len(selected), candidate, self.num_nuggets)
        return SELECT if improved else policy.SKIP


def rollout(cache: StreamFeatureCache, state: SummaryState, forced_action: int,
            suffix_policy, judgments: JudgmentSet) -> list[int]:
    """Complete the decision sequence: roll-in prefix, forced action, suffix."""
    decisions = list(state.decisions)
    selected = list(state.selected)
    covered: set[str] = set()
    for i in selected:
        covered |= judgments.sentence_matches(cache.stream.sentences[i])

    def apply(t: int, action: int) -> None:
        decisions.append(action)
        if action == SELECT:
            selected.append(t)
            covered.update(judgments.sentence_matches(cache.stream.sentences[t]))

    apply(state.position, forced_action)
    for t in range(state.position + 1, len(cache)):
        apply(t, suffix_policy.decide(cache, t, selected, covered))
    return decisions


def collect_examples(model: PolicyModel, event: EventData, cache: StreamFeatureCache,
                     beta: float, rng: np.random.Generator,
                     rollout_mode: str = "per_action",
                     oracle_ref: list[int] | None = None):
    """Build the cost-sensitive training set for one stream: two cost
    examples per position, so 2T in total.

    The mixture coin picks the oracle with probability beta, per (state,
    action) by default or once per state under "per_state".
    """
    T = len(cache)
    if oracle_ref is None:
        oracle_ref = oracle_trajectory(event.stream, event.judgments, event.nuggets)
    oracle_suffix = OracleSuffixPolicy(event.judgments, len(event.nuggets))
    model_suffix = ModelSuffixPolicy(model)

    hat_decisions: list[int] = []
    hat_selected: list[int] = []
    examples: list[CostExample] = []
    raw_losses: list[float] = []
    chosen_costs: list[float] = []

    for t in range(T):
        state = SummaryState(cache.stream, t, tuple(hat_decisions), tuple(hat_selected))
        phi = cache.phi(t, hat_selected)
        if rollout_mode == "per_state":
            state_suffix = oracle_suffix if rng.random() < beta else model_suffix
        costs = {}
        for action in (0, 1):
            if rollout_mode == "per_action":
                suffix = oracle_suffix if rng.random() < beta else model_suffix
            else:
                suffix = state_suffix
            sequence = rollout(cache, state, action, suffix, event.judgments)
            costs[action] = dice_loss(sequence, oracle_ref)
            raw_losses.append(costs[action])
        floor = min(costs.values())
        for action in (0, 1):
            examples.append(CostExample(phi, action, costs[action] - floor))

        hat_action = policy_action(model, phi)
        chosen_costs.append(costs[hat_action] - floor)
        hat_decisions.append(hat_action)
        if hat_action == SELECT:
            hat_selected.append(t)

    stats = {
        "n_examples": len(examples),
        "mean_rollout_loss": float(np.mean(raw_losses)) if raw_losses else 0.0,
        "mean_chosen_cost": float(np.mean(chosen_costs)) if chosen_costs else 0.0,
    }
    return examples, stats


# -- training ---------------------------------------------------------------

def run_stream(model: PolicyModel, cache: StreamFeatureCache) -> tuple[list[int], list[Update]]:
    """Decisions and resulting updates of the learned policy on one stream."""
    decisions = model_trajectory(model, cache)
    updates = [
        Update(s.doc_id, s.sent_index, s.timestamp, s)
        for t, s in enumerate(cache.stream)
        if decisions[t] == SELECT
    ]
    return decisions, updates


def iter_stream_updates(model: PolicyModel, cache: StreamFeatureCache):
    """Yield the learned policy's updates online, one stream pass."""
    selected: list[int] = []
    for t, s in enumerate(cache.stream):
        if policy_action(model, cache.phi(t, selected)) == SELECT:
            selected.append(t)
            yield Update(s.doc_id, s.sent_index, s.timestamp, s)


def evaluate_model(model: PolicyModel, events, caches,
                   window: float = metrics.DEFAULT_LATENCY_WINDOW) -> list[MetricsReport]:
    reports = []
    for event, cache in zip(events, caches):
        _, updates = run_stream(model, cache)
        reports.append(metrics.evaluate_run(updates, event.query, event.nuggets,
                                            event.judgments, window))
    return reports


def _dev_macro_f1(model, dev_events, dev_caches) -> float:
    return macro_average(evaluate_model(model, dev_events, dev_caches))["f1"]


def lols_train(train_events, dev_events, resources: Resources, config: LolsConfig,
               caches=None, dev_caches=None) -> TrainingRun:
    """N passes of per-stream cost collection and SGD; dev-select a snapshot."""
    train_events = list(train_events)
    dev_events = list(dev_events)
    if not train_events:
        raise ValidationError("lols_train requires at least one training stream")

    if caches is None:
        caches = [StreamFeatureCache(ev.stream, ev.query, resources) for ev in train_events]
    if dev_caches is None:
        dev_caches = [StreamFeatureCache(ev.stream, ev.query, resources) for ev in dev_events]

    oracle_refs = [oracle_trajectory(ev.stream, ev.judgments, ev.nuggets)
                   for ev in train_events]

    rng = np.random.default_rng(config.seed)
    reg_hash = registry_hash()
    dim = caches[0].dim
    model = PolicyModel.zeros(dim, reg_hash, meta={
        "n_passes": config.n_passes, "beta": config.beta,
        "eta": config.eta, "seed": config.seed,
    })

    snapshots = [model.copy()]
    diagnostics: list[dict] = []
    step = 0
    for n in range(config.n_passes):
        for event, cache, oracle_ref in zip(train_events, caches, oracle_refs):
            examples, stats = collect_examples(
                model, event, cache, config.beta, rng, config.rollout_mode, oracle_ref
            )
            if config.shuffle_examples:
                examples = [examples[i] for i in rng.permutation(len(examples))]
            eta = config.eta / np.sqrt(step + 1) if config.eta_decay else config.eta
            policy.sgd_update(model, examples, eta)
            snapshots.append(model.copy())
            step += 1
            diagnostics.append({
                "pass": n, "query_id": event.query.id, "snapshot": step,
                "eta": float(eta), **stats,
            })

    dev_f1 = [_dev_macro_f1(snap, dev_events, dev_caches) for snap in snapshots]
    selected = int(np.argmax(dev_f1)) if dev_f1 else 0
    return TrainingRun(snapshots=snapshots, diagnostics=diagnostics,
                       dev_f1=dev_f1, selected_index=selected)


# -- leave-one-out evaluation --------------------------------------------------

def make_training_samples(events, config: LolsConfig) -> list[EventData]:
    """Downsample each event's stream samples_per_event times, deterministically."""
    samples: list[EventData] = []
    for ev_index, ev in enumerate(events):
        for i in range(config.samples_per_event):
            seed = int(np.random.SeedSequence([config.seed, ev_index, i]).generate_state(1)[0])
            sampled = downsample(ev.stream, config.downsample_len, ev.judgments, seed)
            samples.append(ev.with_stream(sampled))
    return samples


@dataclass
class LooResult:
    folds: list
    macro: dict


def leave_one_out(events, dev_events, config: LolsConfig,
                  build_fold_resources, window: float = metrics.DEFAULT_LATENCY_WINDOW) -> LooResult:
    """Train on all-but-one event (downsampled), evaluate on the held-out stream.

    build_fold_resources(train_events) supplies per-fold Resources so the
    held-out query contributes nothing to the shared models.
    """
    events = list(events)
    if len(events) < 2:
        raise ValidationError("leave-one-out needs at least two events")

    folds = []
    for held_out in range(len(events)):
        train_events = [ev for i, ev in enumerate(events) if i != held_out]
        eval_event = events[held_out]
        resources = build_fold_resources(train_events)
        samples = make_training_samples(train_events, config)
        run = lols_train(samples, dev_events, resources, config)
        eval_cache = StreamFeatureCache(eval_event.stream, eval_event.query, resources)
        _, updates = run_stream(run.selected_model, eval_cache)
        report = metrics.evaluate_run(updates, eval_event.query, eval_event.nuggets,
                                      eval_event.judgments, window)
        folds.append({
            "query_id": eval_event.query.id,
            "train_ids": [ev.query.id for ev in train_events],
            "n_training_streams": len(samples),
            "selected_snapshot": run.selected_index,
            "report": report,
        })
    macro = macro_average([f["report"] for f in folds])
    return LooResult(folds=folds, macro=macro)
