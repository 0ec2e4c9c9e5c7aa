"""Command-line entry point.

One binary drives the whole pipeline:

    interseg make-synthetic --out data/ --patients 10 --slices 4 --size 64
    interseg train-auto  --data data/ --out base.npz --steps 300
    interseg train-inter --data data/ --checkpoint base.npz --out bundle.npz --k 10
    interseg evaluate    --data data/ --checkpoint bundle.npz --out results.csv
    interseg k-sweep     --data data/ --checkpoint base.npz --out-dir sweep/
    interseg latency     --checkpoint bundle.npz --size 320
    interseg simulate    --data data/ --checkpoint bundle.npz
    interseg serve       --checkpoint bundle.npz --port 8000

``--config`` points at a JSON (or, on Python >= 3.11, TOML) file mirroring
TrainingConfig; explicit command-line flags win over the file.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import __version__
from .core import ImageSlice, Prediction, ScribbleMask
from .dataio import (
    SplitSpec,
    generate_synthetic,
    load_dataset,
    make_splits,
    normalize,
    save_dataset_png,
)
from .evaluation import (
    SimulationConfig,
    benchmark_latency,
    evaluate_split,
    mean_curve,
    run_k_sweep,
    simulate_editing,
    write_results_csv,
)
from .nn import build_network, load_checkpoint, save_checkpoint, set_backend
from .robot import RobotUserConfig
from .training import TrainingConfig, train_base, train_editor


def _load_config(config_path, seed, **overrides) -> TrainingConfig:
    cfg = TrainingConfig.from_file(config_path) if config_path else TrainingConfig()
    if seed is not None:
        overrides["seed"] = seed
    return cfg.override(**overrides)


def _load_volumes(data, fmt, patch_size):
    if patch_size is None and fmt == "nifti":
        patch_size = 320  # fixed training patch for scanner data
    return load_dataset(data, fmt=fmt, patch_size=patch_size)


def _default_sizes(n: int):
    """Scale the 15/8/1/5 grouping to n patients (g3 stays a single
    model-selection patient)."""
    if n < 4:
        raise click.ClickException(f"need at least 4 patients for a split, got {n}")
    g2 = max(1, round(8 / 29 * n))
    g4 = max(1, round(5 / 29 * n))
    g3 = 1
    g1 = n - g2 - g3 - g4
    return (g1, g2, g3, g4)


def _resolve_split(volumes, splits_path, split_sizes, seed) -> SplitSpec:
    if splits_path:
        return SplitSpec.from_json(Path(splits_path).read_text())
    sizes = tuple(int(s) for s in split_sizes.split(",")) if split_sizes \
        else _default_sizes(len(volumes))
    return make_splits(volumes, sizes=sizes, seed=seed)


def _parse_size(text):
    if "x" in text:
        h, w = text.lower().split("x")
        return (int(h), int(w))
    v = int(text)
    return (v, v)


data_opt = click.option("--data", required=True, type=click.Path(exists=True),
                        help="dataset root directory")
fmt_opt = click.option("--format", "fmt", default="png_pairs",
                       type=click.Choice(["png_pairs", "nifti"]),
                       help="on-disk dataset layout")
patch_opt = click.option("--patch-size", type=int, default=None,
                         help="center-crop/pad slices to this square side "
                              "(default: native for PNG, 320 for NIfTI)")
seed_opt = click.option("--seed", type=int, default=None, help="master seed")
config_opt = click.option("--config", "config_path", type=click.Path(exists=True),
                          default=None, help="TrainingConfig file (JSON/TOML)")
ckpt_opt = click.option("--checkpoint", required=True, type=click.Path(exists=True),
                        help="checkpoint file")
splits_opt = click.option("--splits", "splits_path", type=click.Path(exists=True),
                          default=None, help="split JSON (g1..g4 patient ids)")
backend_opt = click.option("--backend", type=click.Choice(["numba", "numpy"]),
                           default=None, help="kernel backend override")


def _train_overrides(steps, lr, batch_size, k, base_channels, no_augment):
    out = {"max_steps": steps, "learning_rate": lr, "batch_size": batch_size,
           "k_interactions": k, "base_channels": base_channels}
    if no_augment:
        out["augment"] = False
    return out


@click.group()
@click.version_option(__version__)
def main():
    """Interactive segmentation editing: training, evaluation and serving."""


@main.command("make-synthetic")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--patients", default=10, type=int)
@click.option("--slices", "slices_per_patient", default=4, type=int)
@click.option("--size", default="64", help="slice side, e.g. 64 or 320x320")
@click.option("--seed", type=int, default=0)
def make_synthetic_cmd(out_dir, patients, slices_per_patient, size, seed):
    """Generate the synthetic nested-structure dataset as PNG pairs."""
    volumes = generate_synthetic(patients, slices_per_patient,
                                 size=_parse_size(size), seed=seed)
    save_dataset_png(volumes, out_dir)
    click.echo(f"wrote {patients} patients x {slices_per_patient} slices to {out_dir}")


@main.command("train-auto")
@data_opt
@fmt_opt
@patch_opt
@splits_opt
@click.option("--split-sizes", default=None, help="e.g. 15,8,1,5")
@click.option("--out", "out_path", required=True, type=click.Path())
@config_opt
@seed_opt
@backend_opt
@click.option("--steps", type=int, default=None, help="optimizer steps")
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--base-channels", type=int, default=None)
@click.option("--no-augment", is_flag=True, default=False)
def train_auto_cmd(data, fmt, patch_size, splits_path, split_sizes, out_path,
                   config_path, seed, backend, steps, lr, batch_size,
                   base_channels, no_augment):
    """Train the automatic base segmenter on g1 (validation: g2)."""
    if backend:
        set_backend(backend)
    cfg = _load_config(config_path, seed,
                       **_train_overrides(steps, lr, batch_size, None,
                                          base_channels, no_augment))
    volumes = _load_volumes(data, fmt, patch_size)
    split = _resolve_split(volumes, splits_path, split_sizes, cfg.seed)
    model, record, stats = train_base(volumes, split, cfg)
    extra = {"splits": json.loads(split.to_json()),
             "patch_size": patch_size,
             "base_config": asdict(cfg)}
    save_checkpoint(out_path, {"base": model},
                    median_intensity=stats.median_intensity, extra=extra)
    record.write_jsonl(Path(out_path).with_suffix(".steps.jsonl"))
    record.write_summary(Path(out_path).with_suffix(".summary.json"))
    click.echo(f"base: best g2 foreground Dice {record.best_val_dice:.4f} "
               f"at step {record.best_step}; checkpoint -> {out_path}")


@main.command("train-inter")
@data_opt
@fmt_opt
@patch_opt
@splits_opt
@ckpt_opt
@click.option("--out", "out_path", required=True, type=click.Path())
@config_opt
@seed_opt
@backend_opt
@click.option("--k", type=int, default=None, help="interaction rounds per batch")
@click.option("--steps", type=int, default=None, help="total optimizer steps")
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--base-channels", type=int, default=None)
@click.option("--no-augment", is_flag=True, default=False)
@click.option("--region-size", type=int, default=9, help="robot scribble window")
@click.option("--role", type=click.Choice(["editor", "scratch"]), default="editor")
def train_inter_cmd(data, fmt, patch_size, splits_path, checkpoint, out_path,
                    config_path, seed, backend, k, steps, lr, batch_size,
                    base_channels, no_augment, region_size, role):
    """Train the interactive editor on g1+g2 (model selection: g3)."""
    if backend:
        set_backend(backend)
    bundle = load_checkpoint(checkpoint)
    base = bundle.require("base")
    from .dataio import NormalizationStats

    stats = NormalizationStats(bundle.median_intensity)
    cfg = _load_config(config_path, seed,
                       **_train_overrides(steps, lr, batch_size, k,
                                          base_channels, no_augment))
    if patch_size is None:
        patch_size = bundle.extra.get("patch_size")
    volumes = _load_volumes(data, fmt, patch_size)
    if splits_path:
        split = _resolve_split(volumes, splits_path, None, cfg.seed)
    elif bundle.extra.get("splits"):
        split = SplitSpec.from_json(json.dumps(bundle.extra["splits"]))
    else:
        split = _resolve_split(volumes, None, None, cfg.seed)
    robot = RobotUserConfig(region_size=region_size, rng_seed=cfg.seed + 1)
    model, record = train_editor(base, stats, volumes, split, cfg, robot, role=role)
    extra = dict(bundle.extra)
    extra.update({"k_interactions": cfg.k_interactions, "role": role,
                  "editor_config": asdict(cfg), "patch_size": patch_size})
    models = {"base": base, role: model}
    save_checkpoint(out_path, models,
                    median_intensity=stats.median_intensity, extra=extra)
    record.write_jsonl(Path(out_path).with_suffix(".steps.jsonl"))
    record.write_summary(Path(out_path).with_suffix(".summary.json"))
    click.echo(f"{role}: best g3 probe Dice {record.best_val_dice:.4f} at step "
               f"{record.best_step} ({len(record.steps)} updates); "
               f"checkpoint -> {out_path}")


def _bundle_and_data(checkpoint, data, fmt, patch_size, splits_path):
    bundle = load_checkpoint(checkpoint)
    from .dataio import NormalizationStats

    stats = NormalizationStats(bundle.median_intensity)
    if patch_size is None:
        patch_size = bundle.extra.get("patch_size")
    volumes = _load_volumes(data, fmt, patch_size)
    if splits_path:
        split = SplitSpec.from_json(Path(splits_path).read_text())
    elif bundle.extra.get("splits"):
        split = SplitSpec.from_json(json.dumps(bundle.extra["splits"]))
    else:
        raise click.ClickException("no split information: pass --splits")
    return bundle, stats, volumes, split


@main.command("evaluate")
@data_opt
@fmt_opt
@patch_opt
@splits_opt
@ckpt_opt
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="results CSV path")
@click.option("--interactions", type=int, default=20)
@click.option("--region-size", type=int, default=9)
@click.option("--fused-binary", is_flag=True, default=False)
@click.option("--plot", "plot_path", type=click.Path(), default=None)
@seed_opt
@backend_opt
def evaluate_cmd(data, fmt, patch_size, splits_path, checkpoint, out_path,
                 interactions, region_size, fused_binary, plot_path, seed, backend):
    """Simulated interactive editing over the g4 test split."""
    if backend:
        set_backend(backend)
    bundle, stats, volumes, split = _bundle_and_data(checkpoint, data, fmt,
                                                     patch_size, splits_path)
    base, editor = bundle.require("base"), bundle.require("editor")
    cfg = SimulationConfig(n_interactions=interactions,
                           robot=RobotUserConfig(region_size=region_size),
                           fused_binary=fused_binary)
    k_value = bundle.extra.get("k_interactions")
    curves, rows = evaluate_split(volumes, split.g4, stats, base, editor, cfg,
                                  seed if seed is not None else 777,
                                  experiment="editing", k_value=k_value)
    write_results_csv(rows, out_path)
    mc = mean_curve(curves)
    first, mid, last = (mc.mean_over(i) for i in (0, min(5, interactions), interactions))
    click.echo(f"evaluated {len(curves)} slices; foreground mean Dice: "
               f"base {first:.4f} -> 5 edits {mid:.4f} -> {interactions} edits "
               f"{last:.4f}; rows -> {out_path}")
    if plot_path:
        from .plots import plot_dice_curves

        plot_dice_curves({"editing": mc}, plot_path)
        click.echo(f"plot -> {plot_path}")


@main.command("k-sweep")
@data_opt
@fmt_opt
@patch_opt
@splits_opt
@ckpt_opt
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--k-values", default="1,5,10,15")
@click.option("--interactions", type=int, default=20)
@config_opt
@seed_opt
@backend_opt
@click.option("--steps", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--base-channels", type=int, default=None)
def k_sweep_cmd(data, fmt, patch_size, splits_path, checkpoint, out_dir,
                k_values, interactions, config_path, seed, backend, steps, lr,
                base_channels):
    """Train one editor per K on identical schedules and chart the effect."""
    if backend:
        set_backend(backend)
    bundle, stats, volumes, split = _bundle_and_data(checkpoint, data, fmt,
                                                     patch_size, splits_path)
    base = bundle.require("base")
    cfg = _load_config(config_path, seed,
                       **{"max_steps": steps, "learning_rate": lr,
                          "base_channels": base_channels})
    robot = RobotUserConfig(rng_seed=cfg.seed + 1)
    eval_cfg = SimulationConfig(n_interactions=interactions, robot=robot)
    ks = tuple(int(v) for v in k_values.split(","))
    results = run_k_sweep(volumes, split, base, stats, cfg, robot,
                          k_values=ks, eval_cfg=eval_cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_rows = []
    mean_rows = []
    mean_curves = {}
    for k, res in sorted(results.items()):
        all_rows.extend(res["rows"])
        mean_curves[f"K={k}"] = res["mean"]
        for it in res["mean"].iterations:
            mean_rows.append({"K": k, "interaction": it,
                              "dice": f"{res['mean'].mean_over(it):.10f}"})
        save_checkpoint(out_dir / f"editor_k{k}.npz",
                        {"base": base, "editor": res["editor"]},
                        median_intensity=stats.median_intensity,
                        extra={**bundle.extra, "k_interactions": k})
    write_results_csv(all_rows, out_dir / "results_full.csv")
    import csv as _csv

    with open(out_dir / "results_mean.csv", "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=("K", "interaction", "dice"))
        writer.writeheader()
        writer.writerows(mean_rows)
    from .plots import plot_dice_curves

    plot_dice_curves(mean_curves, out_dir / "k_sweep.png",
                     title="Interaction-depth sweep")
    for k, res in sorted(results.items()):
        final = res["mean"].mean_over(interactions)
        click.echo(f"K={k}: final mean Dice {final:.4f}")
    click.echo(f"results -> {out_dir}")


@main.command("latency")
@ckpt_opt
@click.option("--size", default="320", help="input side, e.g. 320 or 320x320")
@click.option("--trials", type=int, default=50)
@click.option("--warmup", type=int, default=3)
@click.option("--compare-backends", is_flag=True, default=False)
@seed_opt
@backend_opt
def latency_cmd(checkpoint, size, trials, warmup, compare_backends, seed, backend):
    """Time single editing updates (input assembly + forward + argmax)."""
    if backend:
        set_backend(backend)
    bundle = load_checkpoint(checkpoint)
    editor = bundle.require("editor")
    h, w = _parse_size(size)
    rng = np.random.default_rng(seed if seed is not None else 0)
    c = editor.spec.num_classes
    img = ImageSlice(rng.random((h, w)).astype(np.float32))
    raw = rng.random((c, h, w)).astype(np.float32)
    prev = Prediction(raw / raw.sum(axis=0))
    marks = np.full((h, w), c, dtype=np.int64)
    marks[h // 2 - 4:h // 2 + 5, w // 2 - 4:w // 2 + 5] = 1
    scr = ScribbleMask(marks, c)
    samples = [(img, prev, scr)]

    def run():
        return benchmark_latency(editor, samples, n_trials=trials, warmup=warmup)

    if compare_backends:
        for name in ("numba", "numpy"):
            set_backend(name)
            rep = run()
            click.echo(f"{name:6s}: {rep.mean_ms:8.2f} +- {rep.std_ms:.2f} ms "
                       f"per update ({trials} trials, {h}x{w})")
    else:
        rep = run()
        click.echo(f"{rep.mean_ms:.2f} +- {rep.std_ms:.2f} ms per update "
                   f"({trials} trials, {h}x{w})")


@main.command("simulate")
@data_opt
@fmt_opt
@patch_opt
@splits_opt
@ckpt_opt
@click.option("--patient", "patient_id", default=None)
@click.option("--slice", "slice_idx", type=int, default=0)
@click.option("--interactions", type=int, default=20)
@click.option("--plot", "plot_path", type=click.Path(), default=None)
@seed_opt
@backend_opt
def simulate_cmd(data, fmt, patch_size, splits_path, checkpoint, patient_id,
                 slice_idx, interactions, plot_path, seed, backend):
    """Replay one simulated editing session on a single slice."""
    if backend:
        set_backend(backend)
    bundle, stats, volumes, split = _bundle_and_data(checkpoint, data, fmt,
                                                     patch_size, splits_path)
    base, editor = bundle.require("base"), bundle.require("editor")
    pid = patient_id or split.g4[0]
    vol = next((v for v in volumes if v.patient_id == pid), None)
    if vol is None:
        raise click.ClickException(f"unknown patient {pid!r}")
    if not 0 <= slice_idx < len(vol.slices):
        raise click.ClickException(f"patient {pid} has {len(vol.slices)} slices")
    img, gt = vol.slices[slice_idx]
    cfg = SimulationConfig(n_interactions=interactions)
    curve = simulate_editing(normalize(img, stats), gt, base, editor, cfg,
                             np.random.default_rng(seed if seed is not None else 0))
    for it in curve.iterations:
        per_class = "  ".join(f"c{c}={curve.at(it, c):.4f}" for c in curve.class_ids)
        click.echo(f"interaction {it:2d}: fg-mean {curve.mean_over(it):.4f}  ({per_class})")
    if plot_path:
        from .plots import plot_dice_curves

        plot_dice_curves({f"{pid}[{slice_idx}]": curve}, plot_path)
        click.echo(f"plot -> {plot_path}")


@main.command("serve")
@click.option("--checkpoint", type=click.Path(exists=True), default=None,
              help="checkpoint file (default: $INTERSEG_CHECKPOINT)")
@click.option("--host", default=None, help="bind address (default: $INTERSEG_HOST or 127.0.0.1)")
@click.option("--port", type=int, default=None, help="port (default: $INTERSEG_PORT or 8008)")
@click.option("--ttl", type=float, default=None, help="session TTL seconds")
@click.option("--persist-dir", type=click.Path(), default=None)
@click.option("--ui-dir", type=click.Path(exists=True), default=None,
              help="serve a built UI from this directory")
def serve_cmd(checkpoint, host, port, ttl, persist_dir, ui_dir):
    """Run the HTTP editing service."""
    import os

    import uvicorn

    from .service import ENV_HOST, ENV_PORT, create_app

    app = create_app(checkpoint, ttl=ttl, persist_dir=persist_dir, ui_dir=ui_dir)
    host = host or os.environ.get(ENV_HOST, "127.0.0.1")
    port = port or int(os.environ.get(ENV_PORT, "8008"))
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
