import json
from pathlib import Path

import numpy as np
import pytest

from sonovox.checkpoint import load_checkpoint
from sonovox.cli import main
from sonovox.data import dataset_fingerprint


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "ds"
    code = main(["synth", "--out", str(path), "--utterances", "5",
                 "--frames", "40", "--seed", "3", "--noise", "0.02"])
    assert code == 0
    return path


@pytest.fixture(scope="module")
def trained_checkpoint(small_dataset, tmp_path_factory):
    ckpt = tmp_path_factory.mktemp("run") / "ckpt"
    code = main(["train", "--data", str(small_dataset), "--model", "cnn3d_convlstm",
                 "--epochs", "1", "--seed", "1", "--out", str(ckpt),
                 "--width-scale", "8", "--batch-size", "8"])
    assert code == 0
    return ckpt


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def test_synth_writes_expected_layout(small_dataset):
    files = {p.name for p in small_dataset.iterdir()}
    assert "manifest.json" in files
    assert "utt0000.frames.stn" in files
    assert "utt0000.targets.stn" in files
    assert "utt0000.json" in files
    manifest = json.loads((small_dataset / "manifest.json").read_text())
    assert len(manifest["utterances"]) == 5
    splits = {e["split"] for e in manifest["utterances"]}
    assert splits == {"train", "dev", "test"}


def test_synth_window_count_printed(tmp_path, capsys):
    code = main(["synth", "--out", str(tmp_path / "d"), "--utterances", "3",
                 "--frames", "30", "--seed", "0"])
    assert code == 0
    out = capsys.readouterr().out
    assert "window count: 18" in out  # 3 * (30 - 24)


def test_synth_byte_identical_across_runs(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / name), "--utterances", "3",
                     "--frames", "30", "--seed", "7"]) == 0
    assert dataset_fingerprint(tmp_path / "a") == dataset_fingerprint(tmp_path / "b")


def test_synth_zero_utterances_usage_error(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "d"), "--utterances", "0",
                 "--frames", "30"]) == 2


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

def test_train_outputs(trained_checkpoint):
    assert (trained_checkpoint / "manifest.json").exists()
    assert (trained_checkpoint / "history.csv").exists()
    assert (trained_checkpoint / "run_manifest.json").exists()
    history = (trained_checkpoint / "history.csv").read_text().splitlines()
    assert history[0] == "epoch,train_mse,dev_mse,dev_mean_r2"
    assert len(history) == 2  # one epoch


def test_train_checkpoint_reloads(trained_checkpoint):
    ckpt = load_checkpoint(trained_checkpoint)
    assert ckpt.model.spec.name == "cnn3d_convlstm"
    assert ckpt.input_stats is not None
    assert len(ckpt.history) == 1


def test_train_unknown_model(small_dataset, tmp_path):
    assert main(["train", "--data", str(small_dataset), "--model", "nope",
                 "--epochs", "1", "--out", str(tmp_path / "c")]) == 3


def test_train_infeasible_config_exit3(small_dataset, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("""
[conv3d]
filters = 4
kernel = 1,13,13
strides = 1,8,8
padding = valid

[conv3d]
filters = 4
kernel = 1,13,13
strides = 1,1,1
padding = valid

[flatten]

[dense]
units = 80
""")
    code = main(["train", "--data", str(small_dataset), "--model", str(cfg),
                 "--epochs", "1", "--out", str(tmp_path / "c")])
    assert code == 3
    err = capsys.readouterr().err
    assert "layer 1" in err and "width" in err


def test_eval_matches_train_summary(trained_checkpoint, small_dataset, capsys):
    code = main(["eval", "--ckpt", str(trained_checkpoint), "--data",
                 str(small_dataset), "--split", "dev"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert set(payload) == {"mse", "mean_r2", "r2_per_target"}
    assert len(payload["r2_per_target"]) == 80
    # eval right after train reproduces the dev metrics train reported
    train_manifest = json.loads((trained_checkpoint / "run_manifest.json").read_text())
    assert train_manifest["command"] == "train"
    assert payload["mse"] == pytest.approx(train_manifest["metrics"]["dev_mse"], rel=1e-12)
    eval_manifest = json.loads(
        (trained_checkpoint / "run_manifest_eval_dev.json").read_text())
    assert eval_manifest["metrics"]["mse"] == payload["mse"]


def test_eval_equals_in_process_evaluate(trained_checkpoint, small_dataset, capsys):
    from sonovox.checkpoint import load_checkpoint
    from sonovox.data import load_windowed
    from sonovox.train import evaluate

    assert main(["eval", "--ckpt", str(trained_checkpoint), "--data",
                 str(small_dataset), "--split", "test"]) == 0
    payload = json.loads(capsys.readouterr().out)
    ckpt = load_checkpoint(trained_checkpoint)
    ds = load_windowed(small_dataset, input_stats=ckpt.input_stats,
                       target_stats=ckpt.target_stats)
    metrics = evaluate(ckpt.model, ds, "test")
    assert payload["mse"] == metrics.mse
    assert payload["mean_r2"] == metrics.mean_r2


def test_sgd_and_adam_histories_differ(small_dataset, tmp_path):
    histories = {}
    for opt in ("adam", "sgd"):
        out = tmp_path / opt
        assert main(["train", "--data", str(small_dataset), "--model",
                     "cnn3d_convlstm", "--epochs", "1", "--seed", "3",
                     "--out", str(out), "--width-scale", "8",
                     "--batch-size", "8", "--optimizer", opt]) == 0
        histories[opt] = (out / "history.csv").read_bytes()
    assert histories["adam"] != histories["sgd"]


def test_eval_twice_identical(trained_checkpoint, small_dataset, capsys):
    main(["eval", "--ckpt", str(trained_checkpoint), "--data", str(small_dataset)])
    first = capsys.readouterr().out
    main(["eval", "--ckpt", str(trained_checkpoint), "--data", str(small_dataset)])
    second = capsys.readouterr().out
    assert first == second


def test_eval_missing_checkpoint(small_dataset, tmp_path):
    assert main(["eval", "--ckpt", str(tmp_path / "none"), "--data",
                 str(small_dataset)]) == 2


def test_eval_stats_mismatch_requires_flag(trained_checkpoint, tmp_path):
    other = tmp_path / "other"
    assert main(["synth", "--out", str(other), "--utterances", "4",
                 "--frames", "30", "--seed", "99"]) == 0
    assert main(["eval", "--ckpt", str(trained_checkpoint),
                 "--data", str(other)]) == 2
    assert main(["eval", "--ckpt", str(trained_checkpoint), "--data", str(other),
                 "--allow-stats-mismatch"]) == 0


# ---------------------------------------------------------------------------
# info
# ---------------------------------------------------------------------------

def test_info_cnn3d(capsys):
    assert main(["info", "--model", "cnn3d"]) == 0
    out = capsys.readouterr().out
    assert "850500" in out   # Dense(500) fed by 1700
    assert "3425845" in out  # total


def test_info_bilstm_shows_reshape(capsys):
    assert main(["info", "--model", "cnn3d_bilstm"]) == 0
    out = capsys.readouterr().out
    assert "reshape(5, 340)" in out


def test_info_convlstm_hidden_layer_count(capsys):
    assert main(["info", "--model", "cnn3d_convlstm"]) == 0
    out = capsys.readouterr().out
    weight_rows = [line for line in out.splitlines()
                   if ("conv3d(" in line or "convlstm(" in line)]
    assert len(weight_rows) == 4


def test_info_infeasible_exit3():
    assert main(["info", "--model", "cnn3d", "--input-shape", "25,16,8,1"]) == 3


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def test_gradcheck_scope_filter(capsys):
    assert main(["gradcheck", "--scope", "dense"]) == 0
    out = capsys.readouterr().out
    assert "dense" in out and "convlstm" not in out


def test_gradcheck_impossible_tolerance(capsys):
    assert main(["gradcheck", "--scope", "dense", "--tol", "1e-12"]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out


def test_gradcheck_unknown_scope():
    assert main(["gradcheck", "--scope", "zzz"]) == 2


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

def test_grid_single_row_file(small_dataset, tmp_path, capsys):
    rows = tmp_path / "rows.txt"
    rows.write_text("C3D,C3D,C3D,CLSTM\n")
    out_dir = tmp_path / "grid"
    code = main(["grid", "--data", str(small_dataset), "--rows", str(rows),
                 "--epochs", "1", "--seed", "0", "--out", str(out_dir),
                 "--width-scale", "8", "--batch-size", "8"])
    assert code == 0
    lines = (out_dir / "grid_results.csv").read_text().splitlines()
    assert lines[0].startswith("layer1,layer2,layer3,layer4,params")
    assert len(lines) == 2
    assert lines[1].endswith("ok")


def test_grid_unknown_preset(small_dataset, tmp_path):
    assert main(["grid", "--data", str(small_dataset), "--rows", "nope",
                 "--out", str(tmp_path / "g")]) == 3


def test_grid_rerun_identical_csv(small_dataset, tmp_path):
    rows = tmp_path / "rows.txt"
    rows.write_text("C3D,C3D,C3D,CLSTM\n")
    outputs = []
    for name in ("g1", "g2"):
        out_dir = tmp_path / name
        assert main(["grid", "--data", str(small_dataset), "--rows", str(rows),
                     "--epochs", "1", "--seed", "4", "--out", str(out_dir),
                     "--width-scale", "8", "--batch-size", "8"]) == 0
        outputs.append((out_dir / "grid_results.csv").read_bytes())
    assert outputs[0] == outputs[1]


def test_grid_row_failure_recorded_without_aborting(small_dataset, tmp_path, capsys):
    rows = tmp_path / "rows.txt"
    rows.write_text("C3D,GRU,C3D\nC3D,C3D,C3D,CLSTM\n")
    out_dir = tmp_path / "grid"
    assert main(["grid", "--data", str(small_dataset), "--rows", str(rows),
                 "--epochs", "1", "--seed", "0", "--out", str(out_dir),
                 "--width-scale", "8", "--batch-size", "8"]) == 0
    lines = (out_dir / "grid_results.csv").read_text().splitlines()
    assert len(lines) == 3
    assert "error" in lines[1]
    assert lines[2].endswith("ok")


def test_usage_error_exit_code():
    assert main(["train"]) == 2  # missing required flags
    assert main([]) == 2
