import json

import numpy as np
import pytest

from streamsum import metrics, policy
from streamsum.cli import ErrorBreakdown, error_analysis, load_event, main
from streamsum.corpus import JudgmentSet, load_stream, write_stream
from streamsum.metrics import Update, read_updates

from synth import make_event, make_tiny_judged_stream, write_event_files


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("events")
    for i in range(4):
        event = make_event(index=i, seed=13, n_sentences=24, n_nuggets=3,
                           matches_per_nugget=(2, 3), span_hours=12.0)
        write_event_files(event, root)
    return root


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    path.write_text(json.dumps({
        "lols": {"n_passes": 1, "beta": 0.5, "eta": 0.01, "seed": 0,
                 "samples_per_event": 2, "downsample_len": 16},
        "features": {"latent_k": 12},
    }))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir, config_path):
    out = tmp_path_factory.mktemp("model")
    model_path = out / "model.json"
    res_path = out / "resources.pkl"
    diag_path = out / "diagnostics.jsonl"
    code = main([
        "--config", str(config_path), "train",
        "--data-dir", str(data_dir), "--train-ids", "q00,q01", "--dev-ids", "q03",
        "--out-model", str(model_path), "--out-resources", str(res_path),
        "--out-diagnostics", str(diag_path),
    ])
    assert code == 0
    return {"model": model_path, "resources": res_path, "diagnostics": diag_path}


# -- error analysis ------------------------------------------------------------------

def test_error_analysis_select_everything_has_no_misses():
    stream, nuggets, judgments = make_tiny_judged_stream(seed=5, T=10)
    updates = [Update(s.doc_id, s.sent_index, s.timestamp, s) for s in stream]
    breakdown = error_analysis(updates, stream, judgments)
    assert breakdown.miss_lead == 0 and breakdown.miss_body == 0
    non_gaining = breakdown.empty + breakdown.duplicate
    covered = set()
    expected = 0
    for s in stream:
        matches = judgments.sentence_matches(s)
        if not matches or matches <= covered:
            expected += 1
        covered |= matches
    assert non_gaining == expected


def test_error_analysis_oracle_run_has_no_empties_or_duplicates():
    stream, nuggets, judgments = make_tiny_judged_stream(seed=6, T=12)
    decisions = policy.oracle_trajectory(stream, judgments, nuggets)
    updates = [Update(s.doc_id, s.sent_index, s.timestamp, s)
               for s, a in zip(stream, decisions) if a == policy.SELECT]
    breakdown = error_analysis(updates, stream, judgments)
    assert breakdown.empty == 0 and breakdown.duplicate == 0


def test_error_analysis_percentages_sum_to_100():
    stream, nuggets, judgments = make_tiny_judged_stream(seed=7, T=12)
    updates = [Update(s.doc_id, s.sent_index, s.timestamp, s)
               for i, s in enumerate(stream) if i % 2 == 0]
    breakdown = error_analysis(updates, stream, judgments)
    if breakdown.total:
        assert sum(breakdown.percentages().values()) == pytest.approx(100.0)
    zero = ErrorBreakdown(0, 0, 0, 0)
    assert sum(zero.percentages().values()) == 0.0


def test_error_analysis_miss_lead_vs_body():
    from streamsum.corpus import Nugget, Sentence, SentenceStream
    sents = (
        Sentence("d0", 0, 1.0, ("a",), ("NONE",), "a"),   # lead miss
        Sentence("d0", 1, 1.0, ("b",), ("NONE",), "b"),   # body miss
    )
    stream = SentenceStream("q", sents)
    judgments = JudgmentSet({("d0", 0): frozenset({"n0"}), ("d0", 1): frozenset({"n1"})})
    breakdown = error_analysis([], stream, judgments)
    assert breakdown.miss_lead == 1 and breakdown.miss_body == 1


# -- filter command ---------------------------------------------------------------------

def write_docs_file(path, query_keywords, n_sentences=25):
    records = []
    for i in range(n_sentences):
        tokens = list(query_keywords) + [f"tok{i}"]
        records.append({"doc_id": "doc1", "sent_index": i, "timestamp": 1000.0,
                        "tokens": tokens, "ne_tags": ["NONE"] * len(tokens),
                        "raw_text": " ".join(tokens)})
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def test_cmd_filter_truncates_and_is_deterministic(tmp_path, data_dir):
    query_path = data_dir / "q00.query.json"
    keywords = json.loads(query_path.read_text())["keywords"]
    docs_path = tmp_path / "docs.jsonl"
    write_docs_file(docs_path, keywords)
    out1 = tmp_path / "out1.jsonl"
    out2 = tmp_path / "out2.jsonl"
    assert main(["filter", "--docs", str(docs_path), "--query", str(query_path),
                 "--out", str(out1)]) == 0
    assert main(["filter", "--docs", str(docs_path), "--query", str(query_path),
                 "--out", str(out2)]) == 0
    stream = load_stream(out1, query_id="q00")
    assert len(stream) == 20
    assert out1.read_bytes() == out2.read_bytes()
    manifest = json.loads((tmp_path / "out1.jsonl.manifest.json").read_text())
    assert manifest["command"] == "filter"
    assert len(manifest["manifest_id"]) == 64


def test_cmd_filter_empty_input(tmp_path, data_dir):
    docs_path = tmp_path / "empty.jsonl"
    docs_path.write_text("")
    out = tmp_path / "out.jsonl"
    assert main(["filter", "--docs", str(docs_path),
                 "--query", str(data_dir / "q00.query.json"), "--out", str(out)]) == 0
    assert load_stream(out, query_id="q00").sentences == ()


# -- train command -----------------------------------------------------------------------

def test_cmd_train_outputs(trained):
    model = policy.load_model(trained["model"])
    from streamsum.features import registry_hash, load_resources
    assert model.registry_hash == registry_hash()
    assert model.meta["train_ids"] == ["q00", "q01"]
    resources = load_resources(trained["resources"])
    assert resources.meta["n_events"] == 2
    lines = trained["diagnostics"].read_text().splitlines()
    rows = [json.loads(line) for line in lines]
    assert rows[0]["n_examples"] == 2 * 16  # downsampled to 16 sentences
    assert "dev_f1" in rows[-1]
    assert (trained["model"].parent / "model.json.manifest.json").exists()


def test_cmd_train_rejects_overlapping_sets(data_dir, config_path, tmp_path):
    code = main(["--config", str(config_path), "train", "--data-dir", str(data_dir),
                 "--train-ids", "q00,q01", "--dev-ids", "q01",
                 "--out-model", str(tmp_path / "m.json"),
                 "--out-resources", str(tmp_path / "r.pkl")])
    assert code == 1


def test_cmd_train_missing_file_is_runtime_failure(config_path, tmp_path):
    code = main(["--config", str(config_path), "train", "--data-dir", str(tmp_path),
                 "--train-ids", "nope", "--dev-ids", "other",
                 "--out-model", str(tmp_path / "m.json"),
                 "--out-resources", str(tmp_path / "r.pkl")])
    assert code == 2


# -- run / evaluate / compare --------------------------------------------------------------

def run_system(system, data_dir, trained, out_path, extra=()):
    argv = ["run", "--system", system, "--data-dir", str(data_dir), "--id", "q02",
            "--out", str(out_path), "--resources", str(trained["resources"])]
    if system in ("ls", "lscos"):
        argv += ["--model", str(trained["model"])]
    argv += list(extra)
    return main(argv)


@pytest.mark.parametrize("system", ["ls", "lscos", "cos", "apsal", "oracle"])
def test_cmd_run_systems(system, data_dir, trained, tmp_path):
    out = tmp_path / f"{system}.jsonl"
    assert run_system(system, data_dir, trained, out) == 0
    event = load_event(data_dir, "q02")
    updates = read_updates(out, event.stream)
    for u in updates:
        assert u.sentence is not None
    if system == "oracle":
        ref = policy.oracle_trajectory(event.stream, event.judgments, event.nuggets)
        expected = [s.key for s, a in zip(event.stream, ref) if a == policy.SELECT]
        assert [u.key for u in updates] == expected
    record = json.loads(out.read_text().splitlines()[0]) if updates else None
    if record:
        assert set(record) == {"query_id", "doc_id", "sent_index", "timestamp", "raw_text"}
        assert record["query_id"] == "q02"


def test_cmd_run_lscos_never_longer_than_ls(data_dir, trained, tmp_path):
    ls_out = tmp_path / "ls.jsonl"
    lscos_out = tmp_path / "lscos.jsonl"
    assert run_system("ls", data_dir, trained, ls_out) == 0
    assert run_system("lscos", data_dir, trained, lscos_out,
                      extra=["--cos-threshold", "0.5"]) == 0
    ls_updates = read_updates(ls_out)
    lscos_updates = read_updates(lscos_out)
    assert len(lscos_updates) <= len(ls_updates)
    keys = [u.key for u in ls_updates]
    assert [u.key for u in lscos_updates] == [k for k in keys
                                              if k in {u.key for u in lscos_updates}]


def test_cmd_run_requires_model_for_ls(data_dir, trained, tmp_path):
    code = main(["run", "--system", "ls", "--data-dir", str(data_dir), "--id", "q02",
                 "--out", str(tmp_path / "x.jsonl"),
                 "--resources", str(trained["resources"])])
    assert code == 1


def test_cmd_evaluate_and_report(data_dir, trained, tmp_path):
    updates_path = tmp_path / "oracle.jsonl"
    assert run_system("oracle", data_dir, trained, updates_path) == 0
    report_path = tmp_path / "report.json"
    assert main(["evaluate", "--updates", str(updates_path), "--data-dir", str(data_dir),
                 "--id", "q02", "--report", str(report_path)]) == 0
    payload = json.loads(report_path.read_text())
    assert payload["events"][0]["query_id"] == "q02"
    assert payload["events"][0]["comprehensiveness"] == 1.0  # oracle covers everything
    assert payload["macro"]["f1"] == payload["events"][0]["f1"]
    assert len(payload["manifest_id"]) == 64


def test_cmd_evaluate_empty_updates_zeroes(data_dir, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    report_path = tmp_path / "report.json"
    assert main(["evaluate", "--updates", str(empty), "--data-dir", str(data_dir),
                 "--id", "q02", "--report", str(report_path)]) == 0
    payload = json.loads(report_path.read_text())
    assert payload["events"][0]["num_updates"] == 0
    assert payload["events"][0]["f1"] == 0.0


def test_cmd_compare(data_dir, trained, tmp_path, capsys):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    assert run_system("oracle", data_dir, trained, a) == 0
    assert run_system("cos", data_dir, trained, b) == 0
    report_path = tmp_path / "cmp.json"
    assert main(["compare", "--updates", str(a), str(b), "--data-dir", str(data_dir),
                 "--id", "q02", "--report", str(report_path)]) == 0
    payload = json.loads(report_path.read_text())
    assert len(payload["runs"]) == 2
    out = capsys.readouterr().out
    assert "a.jsonl" in out and "b.jsonl" in out


def test_cmd_error_analysis(data_dir, trained, tmp_path):
    updates_path = tmp_path / "oracle.jsonl"
    assert run_system("oracle", data_dir, trained, updates_path) == 0
    report_path = tmp_path / "errors.json"
    assert main(["error-analysis", "--updates", str(updates_path),
                 "--data-dir", str(data_dir), "--id", "q02",
                 "--report", str(report_path)]) == 0
    payload = json.loads(report_path.read_text())["errors"]
    assert payload["empty"] == 0 and payload["duplicate"] == 0
    assert payload["total"] == sum(payload[k] for k in
                                   ("miss_lead", "miss_body", "empty", "duplicate"))


def test_cmd_grid_search_cos(data_dir, trained, tmp_path):
    report_path = tmp_path / "grid.json"
    assert main(["grid-search", "--system", "cos", "--data-dir", str(data_dir),
                 "--dev-ids", "q03", "--resources", str(trained["resources"]),
                 "--thresholds", "0.3,0.6,0.9", "--report", str(report_path)]) == 0
    payload = json.loads(report_path.read_text())
    assert len(payload["grid"]) == 3
    assert payload["best"]["macro_f1"] == max(r["macro_f1"] for r in payload["grid"])


def test_cmd_run_online_prefix_stability(data_dir, trained, tmp_path):
    """Truncating the stream at a document boundary preserves the decision prefix."""
    event = load_event(data_dir, "q02")
    full_out = tmp_path / "full.jsonl"
    assert run_system("ls", data_dir, trained, full_out) == 0

    docs = event.stream.documents()
    cut = sum(len(d.sentences) for d in docs[:len(docs) // 2])
    truncated = event.stream.truncated(cut)
    trunc_dir = tmp_path / "trunc"
    trunc_dir.mkdir()
    for name in ("q02.query.json", "q02.nuggets.jsonl", "q02.judgments.jsonl"):
        (trunc_dir / name).write_bytes((data_dir / name).read_bytes())
    write_stream(truncated, trunc_dir / "q02.stream.jsonl")

    trunc_out = tmp_path / "trunc.jsonl"
    assert main(["run", "--system", "ls", "--data-dir", str(trunc_dir), "--id", "q02",
                 "--out", str(trunc_out), "--model", str(trained["model"]),
                 "--resources", str(trained["resources"])]) == 0

    prefix_keys = {s.key for s in truncated}
    full_updates = [u.key for u in read_updates(full_out) if u.key in prefix_keys]
    trunc_updates = [u.key for u in read_updates(trunc_out)]
    assert trunc_updates == full_updates
