"""End-to-end pipeline through the command-line interface (micro scale)."""
import csv
import json

import pytest
from click.testing import CliRunner

from interseg.cli import main


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """make-synthetic -> train-auto -> train-inter, shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    base_ckpt = root / "base.npz"
    bundle_ckpt = root / "bundle.npz"
    runner = CliRunner()

    r = runner.invoke(main, ["make-synthetic", "--out", str(data),
                             "--patients", "6", "--slices", "2",
                             "--size", "32", "--seed", "0"])
    assert r.exit_code == 0, r.output

    r = runner.invoke(main, ["train-auto", "--data", str(data),
                             "--out", str(base_ckpt),
                             "--split-sizes", "3,1,1,1",
                             "--steps", "20", "--lr", "1e-3",
                             "--batch-size", "2", "--base-channels", "4",
                             "--seed", "1"])
    assert r.exit_code == 0, r.output

    r = runner.invoke(main, ["train-inter", "--data", str(data),
                             "--checkpoint", str(base_ckpt),
                             "--out", str(bundle_ckpt),
                             "--k", "2", "--steps", "8", "--lr", "1e-3",
                             "--batch-size", "2", "--base-channels", "4",
                             "--seed", "1"])
    assert r.exit_code == 0, r.output
    return runner, data, base_ckpt, bundle_ckpt, root


def test_checkpoints_written(pipeline):
    _, _, base_ckpt, bundle_ckpt, _ = pipeline
    from interseg.nn import load_checkpoint

    base_bundle = load_checkpoint(base_ckpt)
    assert set(base_bundle.models) == {"base"}
    assert base_bundle.median_intensity > 0
    assert base_bundle.extra["splits"]["g1"]

    full = load_checkpoint(bundle_ckpt)
    assert set(full.models) == {"base", "editor"}
    assert full.extra["k_interactions"] == 2
    # training sidecar records
    assert bundle_ckpt.with_suffix(".steps.jsonl").exists()
    summary = json.loads(bundle_ckpt.with_suffix(".summary.json").read_text())
    assert summary["n_steps"] == 8


def test_evaluate_writes_csv_and_plot(pipeline):
    runner, data, _, bundle_ckpt, root = pipeline
    out_csv = root / "results.csv"
    out_plot = root / "curve.png"
    r = runner.invoke(main, ["evaluate", "--data", str(data),
                             "--checkpoint", str(bundle_ckpt),
                             "--out", str(out_csv),
                             "--interactions", "2", "--seed", "3",
                             "--plot", str(out_plot)])
    assert r.exit_code == 0, r.output
    with open(out_csv) as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    assert set(rows[0]) == {"experiment", "K", "patient_id", "slice_idx",
                            "class_id", "interaction", "dice"}
    assert {row["K"] for row in rows} == {"2"}
    assert out_plot.exists() and out_plot.stat().st_size > 0


def test_simulate_prints_curve(pipeline):
    runner, data, _, bundle_ckpt, _ = pipeline
    r = runner.invoke(main, ["simulate", "--data", str(data),
                             "--checkpoint", str(bundle_ckpt),
                             "--interactions", "2", "--seed", "0"])
    assert r.exit_code == 0, r.output
    assert "interaction  0" in r.output
    assert "interaction  2" in r.output


def test_latency_reports_timing(pipeline):
    runner, _, _, bundle_ckpt, _ = pipeline
    r = runner.invoke(main, ["latency", "--checkpoint", str(bundle_ckpt),
                             "--size", "32", "--trials", "3", "--warmup", "1"])
    assert r.exit_code == 0, r.output
    assert "ms per update" in r.output


def test_k_sweep_micro(pipeline):
    runner, data, base_ckpt, _, root = pipeline
    out_dir = root / "sweep"
    r = runner.invoke(main, ["k-sweep", "--data", str(data),
                             "--checkpoint", str(base_ckpt),
                             "--out-dir", str(out_dir),
                             "--k-values", "1,2", "--steps", "4",
                             "--lr", "1e-3", "--base-channels", "4",
                             "--interactions", "2", "--seed", "2"])
    assert r.exit_code == 0, r.output
    with open(out_dir / "results_mean.csv") as fh:
        mean_rows = list(csv.DictReader(fh))
    # one row per (K, interaction) pair
    assert len(mean_rows) == 2 * 3
    assert (out_dir / "results_full.csv").exists()
    assert (out_dir / "k_sweep.png").exists()
    assert (out_dir / "editor_k1.npz").exists()
    assert (out_dir / "editor_k2.npz").exists()


def test_train_auto_rejects_bad_config(pipeline, tmp_path):
    runner, data, *_ = pipeline
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"nonsense": 1}))
    r = runner.invoke(main, ["train-auto", "--data", str(data),
                             "--out", str(tmp_path / "x.npz"),
                             "--config", str(cfg)])
    assert r.exit_code != 0


def test_config_file_with_cli_override(pipeline, tmp_path):
    runner, data, *_ = pipeline
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max_steps": 4, "base_channels": 4,
                               "batch_size": 2, "learning_rate": 1e-3}))
    out = tmp_path / "m.npz"
    r = runner.invoke(main, ["train-auto", "--data", str(data),
                             "--split-sizes", "3,1,1,1",
                             "--out", str(out), "--config", str(cfg),
                             "--steps", "6", "--seed", "0"])
    assert r.exit_code == 0, r.output
    from interseg.nn import load_checkpoint

    assert load_checkpoint(out).extra["base_config"]["max_steps"] == 6  # CLI wins
