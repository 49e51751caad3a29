import json

import pytest

from urelnet.cli import main

SMALL_SYNTH = [
    "synth",
    "--train", "10", "--val", "3", "--test", "4",
    "--min-relations", "2", "--max-relations", "3",
    "--seed", "21",
]

SMALL_TRAIN = [
    "train",
    "--steps", "25",
    "--transform-dim", "12", "--dc-hidden-dim", "6", "--rel-hidden-dim", "12",
    "--seed", "2",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = root / "ds"
    assert main(SMALL_SYNTH + ["--out", str(ds)]) == 0
    run = root / "run"
    assert main(SMALL_TRAIN + ["--dataset", str(ds), "--out-dir", str(run)]) == 0
    return root


def test_synth_writes_dataset_files(workspace):
    ds = workspace / "ds"
    for name in ("dataset.json", "features.bin", "features.idx.json", "embeddings.txt"):
        assert (ds / name).exists()


def test_generate_pairs_command(workspace, tmp_path):
    out = tmp_path / "pairs.json"
    code = main(["generate-pairs", "--dataset", str(workspace / "ds"),
                 "--split", "train", "--out", str(out)])
    assert code == 0
    data = json.loads(out.read_text())
    assert data["totals"]["determinate"] > 0
    assert data["totals"]["undetermined"] > 0
    assert len(data["scenes"]) == 10


def test_build_stats_command(workspace, tmp_path):
    out = tmp_path / "stats.json"
    assert main(["build-stats", "--dataset", str(workspace / "ds"), "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["total"] == sum(c for *_, c in data["counts"])


def test_train_produces_checkpoint_and_log(workspace):
    run = workspace / "run"
    assert (run / "checkpoint.bin").exists()
    lines = (run / "log.jsonl").read_text().strip().splitlines()
    assert len(lines) >= 25
    record = json.loads(lines[0])
    assert {"step", "loss", "learning_rate"} <= set(record)


def test_evaluate_command(workspace, tmp_path):
    out = tmp_path / "report.json"
    code = main([
        "evaluate", "--dataset", str(workspace / "ds"),
        "--checkpoint", str(workspace / "run" / "checkpoint.bin"),
        "--tasks", "relation,predicate", "--n", "20,50", "--zero-shot",
        "--out", str(out),
    ])
    assert code == 0
    report = json.loads(out.read_text())
    assert set(report["tasks"]) == {"relation", "predicate"}
    assert set(report["tasks"]["relation"]["recall"]) == {"20", "50"}


def test_predict_command(workspace, tmp_path, capsys):
    code = main([
        "predict", "--dataset", str(workspace / "ds"),
        "--checkpoint", str(workspace / "run" / "checkpoint.bin"),
        "--image-id", "synth-test-0000", "--top", "5",
    ])
    assert code == 0
    data = json.loads(capsys.readouterr().out)
    assert data["image_id"] == "synth-test-0000"
    assert 0 < len(data["predictions"]) <= 5
    scores = [p["score"] for p in data["predictions"]]
    assert scores == sorted(scores, reverse=True)


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--instances", "2", "--seed", "500"]) == 0
    out = capsys.readouterr().out
    assert "2/2 instances passed" in out


def test_error_is_machine_readable(workspace, capsys, tmp_path):
    code = main([
        "evaluate", "--dataset", str(workspace / "ds"),
        "--checkpoint", str(tmp_path / "missing.bin"),
    ])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert "category" in err["error"]


def test_invalid_dataset_error_category(tmp_path, capsys):
    (tmp_path / "broken").mkdir()
    (tmp_path / "broken" / "dataset.json").write_text("{nope", encoding="utf-8")
    code = main(["build-stats", "--dataset", str(tmp_path / "broken")])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["category"] == "parse-error"


def test_train_reproducibility_via_cli(workspace, tmp_path):
    ds = str(workspace / "ds")
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(SMALL_TRAIN + ["--dataset", ds, "--out-dir", str(out)]) == 0
    assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()
    assert (a / "log.jsonl").read_bytes() == (b / "log.jsonl").read_bytes()


def test_predicate_task_training(workspace, tmp_path):
    run = tmp_path / "pred_run"
    code = main([
        "train", "--dataset", str(workspace / "ds"), "--out-dir", str(run),
        "--task", "predicate", "--steps", "10",
        "--transform-dim", "12", "--dc-hidden-dim", "6", "--rel-hidden-dim", "12",
    ])
    assert code == 0
    record = json.loads((run / "log.jsonl").read_text().splitlines()[0])
    assert record["rel_undetermined"] == 0.0
    assert record["dc_undetermined"] == 0.0


def test_missing_file_error(capsys, tmp_path):
    code = main(["build-stats", "--dataset", str(tmp_path / "absent")])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["category"] == "ingestion-error"
