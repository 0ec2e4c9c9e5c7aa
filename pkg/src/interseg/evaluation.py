"""Simulated interactive-editing evaluation, the K sweep, latency and the
from-scratch baseline.

An evaluation run replays the deployment loop with the robot user standing
in for the human: the base network proposes, then for every interaction
the robot scribbles on the current errors and the editor updates the
prediction.  Dice is recorded per class after every interaction; entry 0
of a curve is the untouched base prediction.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .core import DiceCurve, ImageSlice, LabelMap, Prediction, dice, fuse_binary
from .dataio import normalize
from .nn import UNet, assemble_auto_input, assemble_inter_input, assemble_scratch_input
from .robot import RobotUserConfig, generate_scribbles

__all__ = [
    "SimulationConfig",
    "LatencyReport",
    "simulate_editing",
    "simulate_from_scratch",
    "evaluate_split",
    "run_k_sweep",
    "benchmark_latency",
    "mean_curve",
    "write_results_csv",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("experiment", "K", "patient_id", "slice_idx", "class_id",
               "interaction", "dice")


@dataclass(frozen=True)
class SimulationConfig:
    """How to run one simulated editing session."""

    n_interactions: int = 20
    robot: RobotUserConfig = field(default_factory=RobotUserConfig)
    fused_binary: bool = False   # evaluate on fused foreground instead of
    # the raw classes (for binary benchmarking)
    early_stop: bool = False     # stop once the prediction matches exactly
    # (service-style); curves then end early

    def __post_init__(self):
        if self.n_interactions < 0:
            raise ValueError("n_interactions must be >= 0")


@dataclass
class LatencyReport:
    """Wall-clock times of single editing updates."""

    times_ms: list[float]

    def __post_init__(self):
        if any(t <= 0 for t in self.times_ms):
            raise ValueError("latency samples must be positive")

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.times_ms))

    @property
    def std_ms(self) -> float:
        return float(np.std(self.times_ms))


def _eval_classes(num_classes: int, fused: bool):
    return (0, 1) if fused else tuple(range(num_classes))


def _dice_row(pred: LabelMap, gt: LabelMap, fused: bool):
    if fused:
        pred, gt = fuse_binary(pred), fuse_binary(gt)
    return [dice(gt, pred, c) for c in range(gt.num_classes)]


def simulate_editing(img: ImageSlice, gt: LabelMap, base: UNet, editor: UNet,
                     cfg: SimulationConfig, rng: np.random.Generator,
                     robot_fn=None) -> DiceCurve:
    """One full editing session on one (already normalized) slice.

    Entry 0 of the returned curve is the base prediction's Dice; entry i
    the Dice after i editor updates.  When the prediction is already
    perfect the all-sentinel scribble mask is still fed through, so curves
    keep uniform length unless ``early_stop`` is set.
    """
    robot_fn = robot_fn or generate_scribbles
    num_classes = base.spec.num_classes
    probs = base.forward(assemble_auto_input(img)[None])[0]
    rows = [_dice_row(LabelMap(probs.argmax(axis=0), num_classes), gt,
                      cfg.fused_binary)]
    for _ in range(cfg.n_interactions):
        pred_labels = LabelMap(probs.argmax(axis=0), num_classes)
        if cfg.early_stop and np.array_equal(pred_labels.labels, gt.labels):
            # a satisfied user stops; the curve stays flat at its last value
            rows.extend([rows[-1]] * (cfg.n_interactions + 1 - len(rows)))
            break
        scr = robot_fn(pred_labels, gt, cfg.robot, rng)
        x = assemble_inter_input(img, Prediction(probs), scr)
        probs = editor.forward(x[None])[0]
        rows.append(_dice_row(LabelMap(probs.argmax(axis=0), num_classes), gt,
                              cfg.fused_binary))
    return DiceCurve(np.array(rows), class_ids=_eval_classes(num_classes, cfg.fused_binary))


def simulate_from_scratch(img: ImageSlice, gt: LabelMap, net: UNet,
                          cfg: SimulationConfig, rng: np.random.Generator,
                          robot_fn=None) -> DiceCurve:
    """Editing session for the baseline that segments from scratch.

    There is no base prediction: the first scribbles are drawn against an
    all-background map, so the curve starts at interaction 1 and has
    ``n_interactions`` entries.
    """
    robot_fn = robot_fn or generate_scribbles
    num_classes = net.spec.num_classes
    pred_labels = LabelMap(np.zeros(gt.shape, dtype=np.int64), num_classes)
    rows = []
    for _ in range(cfg.n_interactions):
        scr = robot_fn(pred_labels, gt, cfg.robot, rng)
        x = assemble_scratch_input(img, scr)
        probs = net.forward(x[None])[0]
        pred_labels = LabelMap(probs.argmax(axis=0), num_classes)
        rows.append(_dice_row(pred_labels, gt, cfg.fused_binary))
    values = np.array(rows) if rows else np.zeros((0, len(_eval_classes(num_classes, cfg.fused_binary))))
    return DiceCurve(values, class_ids=_eval_classes(num_classes, cfg.fused_binary),
                     start_iteration=1)


def evaluate_split(volumes, ids, stats, base: UNet, editor: UNet,
                   cfg: SimulationConfig, seed: int, *,
                   experiment: str = "editing", k_value=None):
    """Run simulated editing over every slice of the listed patients.

    Returns (curves, rows): one DiceCurve per slice plus flat CSV rows with
    columns ``CSV_COLUMNS``.  Each slice gets its own RNG stream derived
    from ``seed`` so parallel evaluation would not change results.
    """
    root = np.random.SeedSequence(seed)
    curves, rows = [], []
    for pid in ids:
        vol = next(v for v in volumes if v.patient_id == pid)
        for slice_idx, (img, gt) in enumerate(vol.slices):
            rng = np.random.default_rng(root.spawn(1)[0])
            curve = simulate_editing(normalize(img, stats), gt, base, editor,
                                     cfg, rng)
            curve.meta.update(patient_id=pid, slice_idx=slice_idx)
            curves.append(curve)
            for it in curve.iterations:
                for c in curve.class_ids:
                    rows.append({
                        "experiment": experiment,
                        "K": "" if k_value is None else k_value,
                        "patient_id": pid,
                        "slice_idx": slice_idx,
                        "class_id": c,
                        "interaction": it,
                        "dice": f"{curve.at(it, c):.10f}",
                    })
    return curves, rows


def mean_curve(curves: list[DiceCurve]) -> DiceCurve:
    """Pointwise mean of aligned curves."""
    if not curves:
        raise ValueError("no curves to average")
    first = curves[0]
    if any(c.class_ids != first.class_ids or c.values.shape != first.values.shape
           or c.start_iteration != first.start_iteration for c in curves):
        raise ValueError("curves are not aligned")
    return DiceCurve(np.mean([c.values for c in curves], axis=0),
                     class_ids=first.class_ids,
                     start_iteration=first.start_iteration)


def run_k_sweep(volumes, split, base: UNet, stats, config, robot_cfg=None,
                k_values=(1, 5, 10, 15), eval_cfg: SimulationConfig | None = None,
                eval_seed: int = 977):
    """Train one editor per K on an identical data/seed schedule, then
    evaluate each on the test split.

    Returns {K: {"curves": [...], "rows": [...], "mean": DiceCurve,
    "record": TrainRunRecord}}.  Total optimizer steps are identical across
    K values (max_steps), so the sweep isolates the interaction depth.
    """
    from . import training  # lazy: training also imports this module

    robot_cfg = robot_cfg or RobotUserConfig()
    eval_cfg = eval_cfg or SimulationConfig(robot=robot_cfg)
    out = {}
    for k in k_values:
        cfg_k = config.override(k_interactions=int(k))
        editor, record = training.train_editor(base, stats, volumes, split,
                                               cfg_k, robot_cfg)
        curves, rows = evaluate_split(volumes, split.g4, stats, base, editor,
                                      eval_cfg, eval_seed,
                                      experiment="k_sweep", k_value=int(k))
        out[int(k)] = {"curves": curves, "rows": rows,
                       "mean": mean_curve(curves), "record": record,
                       "editor": editor}
    return out


def benchmark_latency(editor: UNet, samples, n_trials: int = 50,
                      warmup: int = 3) -> LatencyReport:
    """Time single-example editing updates end to end.

    ``samples`` is a list of (ImageSlice, Prediction, ScribbleMask) tuples,
    cycled over; one update = input assembly + editor forward + argmax,
    batch size 1 (interactive use).  Warm-up runs are excluded.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if not samples:
        raise ValueError("need at least one sample input")
    times = []
    for trial in range(warmup + n_trials):
        img, prev, scr = samples[trial % len(samples)]
        t0 = time.perf_counter()
        x = assemble_inter_input(img, prev, scr)
        probs = editor.forward(x[None])[0]
        probs.argmax(axis=0)
        elapsed = (time.perf_counter() - t0) * 1000.0
        if trial >= warmup:
            times.append(elapsed)
    return LatencyReport(times)


def write_results_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
