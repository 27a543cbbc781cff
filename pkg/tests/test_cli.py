import json

import numpy as np
import pytest

from ide_net.autolabel import RuleConfig
from ide_net.cli import RunConfig, load_dataset, main
from ide_net.evalkit import iou06_accuracy, whether_accuracy
from ide_net.synthgen import ScenarioMix, generate_dataset, write_sample

from label_oracle import oracle_label


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen -> label -> train (tiny, one epoch) shared by the downstream tests."""
    root = tmp_path_factory.mktemp("pipe")
    data, ckpt = root / "data", root / "ckpt"
    assert main(["gen", "--out", str(data), "--n", "16", "--steps", "40", "--seed", "3"]) == 0
    assert main(["label", "--data", str(data), "--seed", "3"]) == 0
    assert main(["train", "--data", str(data), "--out", str(ckpt), "--desk", "--d-hidden", "16",
                 "--n-heads", "2", "--epochs", "1", "--batch-size", "8"]) == 0
    return root, data, ckpt


def test_gen_writes_and_is_reproducible(tmp_path, capsys):
    code, out, _ = run(capsys, "gen", "--out", tmp_path / "a", "--n", 10, "--seed", 5)
    assert code == 0 and json.loads(out)["written"] == 10
    files = snapshot(tmp_path / "a")
    assert sum(n.endswith(".csv") for n in files) == 10
    assert sum(n.endswith(".json") for n in files) == 10
    run(capsys, "gen", "--out", tmp_path / "b", "--n", 10, "--seed", 5)
    assert snapshot(tmp_path / "b") == files


def test_gen_rejects_negative_counts(tmp_path, capsys):
    code, _, err = run(capsys, "gen", "--out", tmp_path, "--crossing", -1)
    assert code == 2
    assert json.loads(err)["error"] == "ConfigError"


def test_missing_inputs_report_json_errors(tmp_path, capsys):
    code, _, err = run(capsys, "label", "--data", tmp_path / "nowhere")
    assert code == 1 and json.loads(err)["error"] == "FileNotFoundError"
    code, _, err = run(capsys, "extract", "--data", tmp_path, "--out", tmp_path / "x")
    assert code == 2 and "checkpoint" in json.loads(err)["message"]
    bad = tmp_path / "cfg.json"
    bad.write_text('{"bogus": 1}')
    code, _, err = run(capsys, "train", "--config", bad)
    assert code == 2


def test_config_file_and_flag_override(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 4, "desk_scale": True, "model": {"d_hidden": 16, "n_heads": 2},
                                "train": {"epochs": 3}}))
    cfg = RunConfig.from_sources(str(path), {"train.epochs": 7, "seed": None})
    assert cfg.seed == 4
    assert cfg.train_config().epochs == 7
    assert cfg.model_config().d_hidden == 16


def test_label_non_interacting_only(tmp_path, capsys):
    for s in generate_dataset(ScenarioMix(non_interacting=6), 1):
        write_sample(tmp_path, s)
    code, out, _ = run(capsys, "label", "--data", tmp_path)
    assert code == 0
    assert json.loads(out)["all"]["positive"] == 0


def test_label_summary_matches_oracle(pipeline):
    _, data, _ = pipeline
    summary = json.loads((data / "labels_summary.json").read_text())
    samples = load_dataset(data)
    oracle = [oracle_label(s, RuleConfig()) for s in samples]
    assert summary["all"]["positive"] == sum(w == 1 for w, _ in oracle)
    assert summary["all"]["negative"] == sum(w == 0 for w, _ in oracle)
    assert summary["all"]["total"] == len(samples) == 16
    assert (data / "labels_summary.csv").read_text().startswith("set,positive,negative,not_sure,total\n")


def test_label_rerun_is_idempotent(pipeline, capsys):
    _, data, _ = pipeline
    before = snapshot(data)
    assert run(capsys, "label", "--data", data, "--seed", 3)[0] == 0
    assert snapshot(data) == before


def test_prep_stats(pipeline, tmp_path, capsys):
    _, data, _ = pipeline
    code, out, _ = run(capsys, "prep-stats", "--data", data, "--out", tmp_path)
    assert code == 0 and json.loads(out)["scale"] > 0
    assert (tmp_path / "norm.json").exists()


def test_train_outputs(pipeline):
    _, _, ckpt = pipeline
    log = (ckpt / "train_log.jsonl").read_text().splitlines()
    assert len(log) == 1 and "train" in json.loads(log[0])
    run_info = json.loads((ckpt / "run.json").read_text())
    assert not set(run_info["train_ids"]) & set(run_info["val_ids"])


def test_extract_rows_and_determinism(pipeline, tmp_path, capsys):
    _, data, ckpt = pipeline
    assert run(capsys, "extract", "--data", data, "--checkpoint", ckpt, "--out", tmp_path / "a")[0] == 0
    assert run(capsys, "extract", "--data", data, "--checkpoint", ckpt, "--out", tmp_path / "b")[0] == 0
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")
    sample = load_dataset(data)[0]
    lines = (tmp_path / "a" / f"{sample.sample_id}.steps.csv").read_text().splitlines()
    assert len(lines) - 1 == sample.T
    header = lines[0].split(",")
    conf_cols = [i for i, h in enumerate(header) if h.startswith("conf_")]
    for line in lines[1:]:
        vals = line.split(",")
        assert abs(sum(float(vals[i]) for i in conf_cols) - 1.0) < 1e-6


def test_eval_metrics_schema(pipeline, tmp_path, capsys):
    _, data, ckpt = pipeline
    code, out, _ = run(capsys, "eval", "--data", data, "--test-data", data, "--checkpoint", ckpt,
                       "--out", tmp_path)
    assert code == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics == json.loads(out)
    for key in ("whether_accuracy", "iou06_accuracy", "type_ratio_test", "type_ratio_train",
                "rotation_tvd", "pattern_histogram", "n_test"):
        assert key in metrics
    assert 0.0 <= metrics["whether_accuracy"] <= 1.0
    assert len(metrics["type_ratio_test"]) == 3
    assert (tmp_path / "type_assignments.csv").exists()


def test_oracle_predictions_score_perfectly(pipeline):
    _, data, _ = pipeline
    samples = load_dataset(data, labeled_only=True)
    labels = [s.labels.whether for s in samples]
    windows = [s.labels.window for s in samples]
    assert whether_accuracy([float(w) for w in labels], labels) == 1.0
    assert iou06_accuracy(windows, windows, labels) == 1.0


def test_random_predictions_score_about_half(rng):
    labels = np.repeat([0, 1], 500)
    assert abs(whether_accuracy(rng.uniform(size=1000), labels) - 0.5) < 0.05
