"""Command-line surface: filter, train, loo-eval, run, evaluate, compare,
error-analysis and grid-search.

Every output file gets a `<name>.manifest.json` sidecar recording the tool
version, seed, config snapshot and input hashes; the manifest id is a hash
of those stable parts (never of wall-clock time), so update files and
reports are byte-identical across reruns with the same seed. Exit codes:
0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass

from . import __version__, baselines, features, learner, metrics, policy
from .baselines import ApConfig, CosConfig
from .corpus import (
    JudgmentSet,
    SentenceStream,
    ValidationError,
    filter_documents,
    load_documents,
    load_judgments,
    load_nuggets,
    load_query,
    load_stream,
    write_stream,
)
from .features import FeatureConfig, Resources
from .learner import EventData, LolsConfig
from .metrics import DEFAULT_LATENCY_WINDOW, Update, macro_average

SYSTEMS = ("ls", "lscos", "cos", "apsal", "oracle")


# -- manifests ---------------------------------------------------------------

def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """Reproducibility record for one command invocation."""

    command: str
    tool_version: str
    seed: int
    config: dict
    input_hashes: dict
    created_utc: str

    @property
    def manifest_id(self) -> str:
        # content hashes only: output files citing the id stay byte-identical
        # across reruns regardless of where inputs live on disk
        stable = json.dumps({
            "command": self.command,
            "tool_version": self.tool_version,
            "seed": self.seed,
            "config": self.config,
            "inputs": sorted(self.input_hashes.values()),
        }, sort_keys=True)
        return hashlib.sha256(stable.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        return {
            "manifest_id": self.manifest_id,
            "command": self.command,
            "tool_version": self.tool_version,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.input_hashes,
            "created_utc": self.created_utc,
        }


def build_manifest(command: str, seed: int, config: dict, input_paths) -> RunManifest:
    hashes = {str(p): sha256_file(p) for p in sorted(str(p) for p in input_paths)}
    return RunManifest(
        command=command,
        tool_version=__version__,
        seed=seed,
        config=config,
        input_hashes=hashes,
        created_utc=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    )


def write_manifest(manifest: RunManifest, output_path) -> None:
    with open(f"{output_path}.manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")


def _atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


# -- error analysis ------------------------------------------------------------

ERROR_CATEGORIES = ("miss_lead", "miss_body", "empty", "duplicate")


@dataclass(frozen=True)
class ErrorBreakdown:
    miss_lead: int
    miss_body: int
    empty: int
    duplicate: int

    @property
    def total(self) -> int:
        return self.miss_lead + self.miss_body + self.empty + self.duplicate

    def percentages(self) -> dict:
        total = self.total
        return {
            name: (100.0 * getattr(self, name) / total) if total else 0.0
            for name in ERROR_CATEGORIES
        }

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in ERROR_CATEGORIES}
        out["total"] = self.total
        out["percent"] = self.percentages()
        return out


def error_analysis(updates, stream: SentenceStream, judgments: JudgmentSet) -> ErrorBreakdown:
    """Categorize decision errors against the system's own selections.

    miss_lead / miss_body: skipped a sentence carrying a nugget not yet
    covered by prior selected updates (lead = sent_index 0). empty: selected
    a sentence matching no nugget. duplicate: selected a sentence whose
    nuggets were all already covered.
    """
    selected_keys = {u.key for u in updates}
    covered: set[str] = set()
    counts = dict.fromkeys(ERROR_CATEGORIES, 0)
    for s in stream:
        matches = judgments.sentence_matches(s)
        if s.key in selected_keys:
            if not matches:
                counts["empty"] += 1
            elif matches <= covered:
                counts["duplicate"] += 1
            else:
                covered |= matches
        elif matches - covered:
            counts["miss_lead" if s.sent_index == 0 else "miss_body"] += 1
    return ErrorBreakdown(**counts)


# -- event loading convention -----------------------------------------------------

def event_paths(data_dir, qid: str) -> dict:
    return {
        "query": os.path.join(data_dir, f"{qid}.query.json"),
        "stream": os.path.join(data_dir, f"{qid}.stream.jsonl"),
        "nuggets": os.path.join(data_dir, f"{qid}.nuggets.jsonl"),
        "judgments": os.path.join(data_dir, f"{qid}.judgments.jsonl"),
    }


def load_event(data_dir, qid: str, first_sentences_only: bool = False) -> EventData:
    paths = event_paths(data_dir, qid)
    query = load_query(paths["query"])
    stream = load_stream(paths["stream"], query)
    if first_sentences_only:
        stream = baselines.first_sentence_view(stream)
    nuggets = tuple(load_nuggets(paths["nuggets"], query))
    judgments = load_judgments(paths["judgments"], nuggets)
    return EventData(query=query, stream=stream, nuggets=nuggets, judgments=judgments)


def _parse_ids(raw: str) -> list[str]:
    ids = [part.strip() for part in raw.split(",") if part.strip()]
    if not ids:
        raise ValidationError(f"no event ids in {raw!r}")
    return ids


def load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: not valid JSON ({e})") from e
    for section in data:
        if section not in ("lols", "features", "baselines"):
            raise ValidationError(f"{path}: unknown config section {section!r}")
    return data


def _feature_config(config: dict) -> FeatureConfig:
    section = dict(config.get("features", {}))
    known = set(FeatureConfig.__dataclass_fields__)
    unknown = set(section) - known
    if unknown:
        raise ValidationError(f"unknown feature config keys: {sorted(unknown)}")
    return FeatureConfig(**section)


def _lols_config(config: dict, seed: int | None) -> LolsConfig:
    section = dict(config.get("lols", {}))
    if seed is not None:
        section["seed"] = seed
    return LolsConfig.from_dict(section)


# -- report rendering ----------------------------------------------------------

REPORT_COLUMNS = (
    "expected_gain", "comprehensiveness", "f1",
    "latency_expected_gain", "latency_comprehensiveness", "latency_f1",
    "num_updates",
)


def render_table(rows: list[dict], label_key: str) -> str:
    header = f"{'event':<16}" + "".join(f"{c:>12}" for c in REPORT_COLUMNS)
    lines = [header]
    for row in rows:
        cells = "".join(
            f"{row[c]:>12}" if isinstance(row[c], int) else f"{row[c]:>12.4f}"
            for c in REPORT_COLUMNS
        )
        lines.append(f"{str(row[label_key]):<16}" + cells)
    return "\n".join(lines)


def _report_rows(reports) -> list[dict]:
    rows = []
    for r in reports:
        row = {"query_id": r.query_id}
        row.update({c: getattr(r, c) for c in REPORT_COLUMNS})
        rows.append(row)
    return rows


def write_report(path, payload: dict) -> None:
    _atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


# -- commands --------------------------------------------------------------------

def cmd_filter(args) -> int:
    query = load_query(args.query)
    docs = load_documents(args.docs)
    stream = filter_documents(docs, query, dedup_threshold=args.dedup_threshold,
                              max_doc_sentences=args.max_doc_sentences)
    write_stream(stream, args.out)
    manifest = build_manifest("filter", args.seed, {
        "dedup_threshold": args.dedup_threshold,
        "max_doc_sentences": args.max_doc_sentences,
    }, [args.query, args.docs])
    write_manifest(manifest, args.out)
    print(f"filtered stream: {len(stream)} sentences from {len(docs)} documents -> {args.out}")
    return 0


def cmd_train(args) -> int:
    config = load_config_file(args.config)
    lols = _lols_config(config, args.seed)
    feat = _feature_config(config)
    train_ids = _parse_ids(args.train_ids)
    dev_ids = _parse_ids(args.dev_ids)
    overlap = set(train_ids) & set(dev_ids)
    if overlap:
        raise ValidationError(f"train and dev sets overlap: {sorted(overlap)}")

    train_events = [load_event(args.data_dir, qid, args.first_sentences_only)
                    for qid in train_ids]
    dev_events = [load_event(args.data_dir, qid, args.first_sentences_only)
                  for qid in dev_ids]

    resources = features.build_resources(train_events, feat, seed=lols.seed)
    samples = learner.make_training_samples(train_events, lols)
    run = learner.lols_train(samples, dev_events, resources, lols)

    input_paths = [p for qid in train_ids + dev_ids
                   for p in event_paths(args.data_dir, qid).values()]
    manifest = build_manifest("train", lols.seed, {
        "lols": lols.to_dict(), "features": feat.to_dict(),
        "train_ids": train_ids, "dev_ids": dev_ids,
        "first_sentences_only": args.first_sentences_only,
    }, input_paths)

    selected = run.selected_model.copy()
    selected.meta.update({
        "manifest_id": manifest.manifest_id,
        "selected_snapshot": run.selected_index,
        "dev_f1": run.dev_f1[run.selected_index],
        "train_ids": train_ids,
        "dev_ids": dev_ids,
    })
    policy.save_model(selected, args.out_model)
    write_manifest(manifest, args.out_model)
    features.save_resources(resources, args.out_resources)
    write_manifest(manifest, args.out_resources)

    if args.out_diagnostics:
        lines = [json.dumps({"manifest_id": manifest.manifest_id, **row}, sort_keys=True)
                 for row in run.diagnostics]
        lines.append(json.dumps({
            "manifest_id": manifest.manifest_id,
            "dev_f1": run.dev_f1,
            "selected_snapshot": run.selected_index,
        }, sort_keys=True))
        _atomic_write_text(args.out_diagnostics, "\n".join(lines) + "\n")
        write_manifest(manifest, args.out_diagnostics)

    print(f"trained on {len(samples)} streams "
          f"({len(train_events)} events x {lols.samples_per_event} samples); "
          f"selected snapshot {run.selected_index}/{len(run.snapshots) - 1} "
          f"with dev F1 {run.dev_f1[run.selected_index]:.4f}")
    return 0


def cmd_loo_eval(args) -> int:
    config = load_config_file(args.config)
    lols = _lols_config(config, args.seed)
    feat = _feature_config(config)
    ids = _parse_ids(args.ids)
    dev_ids = _parse_ids(args.dev_ids)
    overlap = set(ids) & set(dev_ids)
    if overlap:
        raise ValidationError(f"loo and dev sets overlap: {sorted(overlap)}")

    events = [load_event(args.data_dir, qid, args.first_sentences_only) for qid in ids]
    dev_events = [load_event(args.data_dir, qid, args.first_sentences_only)
                  for qid in dev_ids]

    def build_fold_resources(train_events):
        return features.build_resources(train_events, feat, seed=lols.seed)

    result = learner.leave_one_out(events, dev_events, lols, build_fold_resources,
                                   window=args.latency_window_secs)

    input_paths = [p for qid in ids + dev_ids
                   for p in event_paths(args.data_dir, qid).values()]
    manifest = build_manifest("loo-eval", lols.seed, {
        "lols": lols.to_dict(), "features": feat.to_dict(),
        "ids": ids, "dev_ids": dev_ids,
        "latency_window_secs": args.latency_window_secs,
    }, input_paths)

    payload = {
        "manifest_id": manifest.manifest_id,
        "folds": [{
            "query_id": f["query_id"],
            "train_ids": f["train_ids"],
            "n_training_streams": f["n_training_streams"],
            "selected_snapshot": f["selected_snapshot"],
            "report": f["report"].to_dict(),
        } for f in result.folds],
        "macro": result.macro,
    }
    write_report(args.report, payload)
    write_manifest(manifest, args.report)

    rows = _report_rows([f["report"] for f in result.folds])
    print(render_table(rows, "query_id"))
    macro_row = {"query_id": "macro", **{c: result.macro[c] for c in REPORT_COLUMNS}}
    print(render_table([macro_row], "query_id").splitlines()[1])
    return 0


def _run_system(args, event: EventData, config: dict) -> list[Update]:
    baseline_cfg = config.get("baselines", {})
    if args.system == "oracle":
        decisions = policy.oracle_trajectory(event.stream, event.judgments, event.nuggets)
        return [metrics.Update(s.doc_id, s.sent_index, s.timestamp, s)
                for s, a in zip(event.stream, decisions) if a == policy.SELECT]

    resources = features.load_resources(args.resources)
    if args.system == "cos":
        cos_cfg = CosConfig(**baseline_cfg.get("cos", {}))
        if args.cos_threshold is not None:
            cos_cfg = CosConfig(threshold=args.cos_threshold,
                                representation=cos_cfg.representation)
        return baselines.cos_run(event.stream, resources, cos_cfg)
    if args.system == "apsal":
        ap_cfg = ApConfig(**baseline_cfg.get("apsal", {}))
        return baselines.apsal_run(event.stream, event.query, resources, ap_cfg)

    if not args.model:
        raise ValidationError(f"system {args.system!r} requires --model")
    model = policy.load_model(args.model, expected_registry_hash=features.registry_hash())
    cache = features.StreamFeatureCache(event.stream, event.query, resources)
    _, updates = learner.run_stream(model, cache)
    if args.system == "lscos":
        tau = args.cos_threshold
        if tau is None:
            tau = baseline_cfg.get("lscos", {}).get("threshold", 0.6)
        updates = baselines.lscos_filter(updates, resources, tau)
    return updates


def cmd_run(args) -> int:
    config = load_config_file(args.config)
    event = load_event(args.data_dir, args.id, args.first_sentences_only)
    updates = _run_system(args, event, config)

    lines = [metrics.format_update_record(u, event.query.id) for u in updates]
    _atomic_write_text(args.out, "".join(line + "\n" for line in lines))

    input_paths = list(event_paths(args.data_dir, args.id).values())
    if args.model:
        input_paths.append(args.model)
    if args.resources and args.system != "oracle":
        input_paths.append(args.resources)
    manifest = build_manifest("run", args.seed, {
        "system": args.system,
        "id": args.id,
        "first_sentences_only": args.first_sentences_only,
        "cos_threshold": args.cos_threshold,
        "config": config,
    }, input_paths)
    write_manifest(manifest, args.out)
    print(f"{args.system}: {len(updates)} updates -> {args.out}")
    return 0


def _evaluate_file(updates_path, event: EventData, window: float):
    updates = metrics.read_updates(updates_path, event.stream)
    return metrics.evaluate_run(updates, event.query, event.nuggets,
                                event.judgments, window)


def cmd_evaluate(args) -> int:
    event = load_event(args.data_dir, args.id)
    report = _evaluate_file(args.updates, event, args.latency_window_secs)
    manifest = build_manifest("evaluate", args.seed, {
        "id": args.id, "latency_window_secs": args.latency_window_secs,
    }, [args.updates, *event_paths(args.data_dir, args.id).values()])
    payload = {
        "manifest_id": manifest.manifest_id,
        "events": [report.to_dict()],
        "macro": macro_average([report]),
    }
    write_report(args.report, payload)
    write_manifest(manifest, args.report)
    print(render_table(_report_rows([report]), "query_id"))
    return 0


def cmd_compare(args) -> int:
    event = load_event(args.data_dir, args.id)
    rows = []
    payload_rows = []
    for path in args.updates:
        report = _evaluate_file(path, event, args.latency_window_secs)
        row = {"system": os.path.basename(path)}
        row.update({c: getattr(report, c) for c in REPORT_COLUMNS})
        rows.append(row)
        payload_rows.append({"updates_file": str(path), "report": report.to_dict()})
    manifest = build_manifest("compare", args.seed, {
        "id": args.id, "latency_window_secs": args.latency_window_secs,
    }, [*args.updates, *event_paths(args.data_dir, args.id).values()])
    payload = {"manifest_id": manifest.manifest_id, "runs": payload_rows}
    write_report(args.report, payload)
    write_manifest(manifest, args.report)
    print(render_table(rows, "system"))
    return 0


def cmd_error_analysis(args) -> int:
    event = load_event(args.data_dir, args.id)
    updates = metrics.read_updates(args.updates, event.stream)
    breakdown = error_analysis(updates, event.stream, event.judgments)
    manifest = build_manifest("error-analysis", args.seed, {"id": args.id},
                              [args.updates, *event_paths(args.data_dir, args.id).values()])
    payload = {"manifest_id": manifest.manifest_id, "errors": breakdown.to_dict()}
    write_report(args.report, payload)
    write_manifest(manifest, args.report)
    pct = breakdown.percentages()
    print("  ".join(f"{name}={getattr(breakdown, name)} ({pct[name]:.1f}%)"
                    for name in ERROR_CATEGORIES) + f"  total={breakdown.total}")
    return 0


def _parse_floats(raw: str) -> list[float]:
    values = [float(part) for part in raw.split(",") if part.strip()]
    if not values:
        raise ValidationError(f"no values in {raw!r}")
    return values


def cmd_grid_search(args) -> int:
    config = load_config_file(args.config)
    dev_ids = _parse_ids(args.dev_ids)
    dev_events = [load_event(args.data_dir, qid, args.first_sentences_only)
                  for qid in dev_ids]
    resources = features.load_resources(args.resources)
    thresholds = _parse_floats(args.thresholds)
    window = args.latency_window_secs

    if args.system == "cos":
        result = baselines.grid_search_cos(dev_events, resources, thresholds, window=window)
    elif args.system == "lscos":
        if not args.model:
            raise ValidationError("grid-search --system lscos requires --model")
        model = policy.load_model(args.model, expected_registry_hash=features.registry_hash())
        result = baselines.grid_search_lscos(model, dev_events, resources, thresholds,
                                             window=window)
    elif args.system == "apsal":
        base = ApConfig(**config.get("baselines", {}).get("apsal", {}))
        result = baselines.grid_search_apsal(
            dev_events, resources, _parse_floats(args.windows),
            _parse_floats(args.offsets), thresholds, base=base, window=window)
    else:
        raise ValidationError(f"grid-search does not support system {args.system!r}")

    input_paths = [p for qid in dev_ids for p in event_paths(args.data_dir, qid).values()]
    input_paths.append(args.resources)
    if args.model:
        input_paths.append(args.model)
    manifest = build_manifest("grid-search", args.seed, {
        "system": args.system, "dev_ids": dev_ids, "thresholds": thresholds,
    }, input_paths)
    payload = {"manifest_id": manifest.manifest_id, **result}
    write_report(args.report, payload)
    write_manifest(manifest, args.report)
    print(f"best: {json.dumps(result['best'], sort_keys=True)}")
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamsum",
        description="Streaming update summarization: filter, train, run, evaluate.",
    )
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--latency-window-secs", type=float, default=DEFAULT_LATENCY_WINDOW)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("filter", help="filter raw documents into a query stream")
    p.add_argument("--docs", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dedup-threshold", type=float, default=0.8)
    p.add_argument("--max-doc-sentences", type=int, default=20)
    p.set_defaults(handler=cmd_filter)

    p = sub.add_parser("train", help="train the select/skip policy")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--train-ids", required=True, help="comma-separated event ids")
    p.add_argument("--dev-ids", required=True, help="comma-separated event ids")
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-resources", required=True)
    p.add_argument("--out-diagnostics", default=None)
    p.add_argument("--first-sentences-only", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("loo-eval", help="leave-one-out training and evaluation")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--ids", required=True)
    p.add_argument("--dev-ids", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--first-sentences-only", action="store_true")
    p.set_defaults(handler=cmd_loo_eval)

    p = sub.add_parser("run", help="produce an update file with one system")
    p.add_argument("--system", required=True, choices=SYSTEMS)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--resources", default=None)
    p.add_argument("--cos-threshold", type=float, default=None)
    p.add_argument("--first-sentences-only", action="store_true")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("evaluate", help="score an update file against judgments")
    p.add_argument("--updates", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("compare", help="score several update files on one event")
    p.add_argument("--updates", required=True, nargs="+")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("error-analysis", help="categorize decision errors")
    p.add_argument("--updates", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(handler=cmd_error_analysis)

    p = sub.add_parser("grid-search", help="tune baseline parameters on dev events")
    p.add_argument("--system", required=True, choices=("cos", "lscos", "apsal"))
    p.add_argument("--data-dir", required=True)
    p.add_argument("--dev-ids", required=True)
    p.add_argument("--resources", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--thresholds", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--windows", default="3600,7200,14400")
    p.add_argument("--offsets", default="0.0,0.5,1.0")
    p.add_argument("--first-sentences-only", action="store_true")
    p.set_defaults(handler=cmd_grid_search)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
