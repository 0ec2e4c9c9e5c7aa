"""Training loops for the two network roles.

The base segmenter trains conventionally: image in, cross-entropy against
the reference labels.

The editor trains with iterated simulated interactions.  Per batch, the
frozen base network proposes a first prediction, the robot user scribbles
on its errors, and then K rounds follow: the editor predicts from (image,
previous prediction, scribbles), fresh scribbles are drawn from the new
prediction, and the weights are updated after every round.  Consecutive
rounds exchange predictions as plain data: no gradient flows through the
previous prediction (per-round backprop, constant memory in K).

The from-scratch baseline uses the same loop with an all-background first
prediction and no prediction channels in its input.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import LabelMap
from .dataio import (
    NormalizationStats,
    SplitSpec,
    augment_batch,
    compute_normalization,
    normalize,
    slices_for,
)
from .nn import Adam, NetworkSpec, UNet, build_network, scratch_spec
from .nn.layers import softmax_cross_entropy
from .robot import RobotUserConfig, generate_scribbles

__all__ = [
    "TrainingConfig",
    "TrainRunRecord",
    "TrainingDiverged",
    "train_base",
    "train_editor",
    "cross_entropy_loss",
]


class TrainingDiverged(RuntimeError):
    def __init__(self, step, loss):
        super().__init__(f"loss became non-finite at optimizer step {step}: {loss}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters; defaults are the full-scale values, desk-scale runs
    override max_steps / width / learning rate."""

    batch_size: int = 4
    learning_rate: float = 1e-4
    max_steps: int = 140_000
    k_interactions: int = 10
    augment: bool = True
    base_channels: int = 32
    dropout_rate: float = 0.2
    batch_norm: bool = True
    val_interval: int = 0          # optimizer steps between probes; 0 = auto
    val_probe_interactions: int = 5
    seed: int = 0
    hard_label_inputs: bool = False
    generate_final_scribbles: bool = True  # the last round's scribbles are
    # never consumed; drawing them anyway keeps the loop uniform

    def __post_init__(self):
        if self.k_interactions < 1:
            raise ValueError("k_interactions must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    @property
    def n_batches(self) -> int:
        """Outer-loop bound: total optimizer steps stay at max_steps for
        every K, so higher K means fewer (but longer) batches."""
        return max(1, self.max_steps // self.k_interactions)

    @classmethod
    def from_file(cls, path) -> "TrainingConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ImportError as exc:  # Python 3.10
                raise RuntimeError(
                    "TOML config files need Python >= 3.11; use JSON instead"
                ) from exc
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def override(self, **kwargs) -> "TrainingConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs)


@dataclass
class TrainRunRecord:
    """Everything a run emits besides the weights: per-step losses,
    validation probes, the selected checkpoint and the seeds used."""

    role: str
    config: dict
    seeds: dict
    steps: list = field(default_factory=list)       # {"step", "loss"} dicts
    val_points: list = field(default_factory=list)  # {"step", "dice"} dicts
    best_step: int = -1
    best_val_dice: float = -1.0

    def log_step(self, step: int, loss: float):
        self.steps.append({"step": step, "loss": float(loss)})

    def log_val(self, step: int, dice_value: float):
        self.val_points.append({"step": step, "dice": float(dice_value)})

    def summary(self) -> dict:
        losses = [s["loss"] for s in self.steps]
        return {
            "role": self.role,
            "config": self.config,
            "seeds": self.seeds,
            "n_steps": len(self.steps),
            "first_loss": losses[0] if losses else None,
            "final_loss": losses[-1] if losses else None,
            "best_step": self.best_step,
            "best_val_dice": self.best_val_dice,
            "val_points": self.val_points,
        }

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for entry in self.steps:
                fh.write(json.dumps(entry) + "\n")

    def write_summary(self, path):
        Path(path).write_text(json.dumps(self.summary(), indent=2))


def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray,
                       clamp: float = 1e-12) -> float:
    """Mean over pixels of -log p(true class), on probabilities.

    probs: (N, C, H, W) or (C, H, W); labels matching (N, H, W) or (H, W).
    Probabilities are clamped at ``clamp`` for numerical safety.  The
    training loops use the fused logits version for the gradient; this is
    the metric-style entry point and must agree with it.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.ndim == 3:
        probs, labels = probs[None], labels[None]
    if probs.shape[0] != labels.shape[0] or probs.shape[2:] != labels.shape[1:]:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs labels {labels.shape}")
    n, _, h, w = probs.shape
    ni, hi, wi = np.ogrid[:n, :h, :w]
    picked = probs[ni, labels, hi, wi]
    return float(-np.log(np.maximum(picked, clamp)).mean())


# ----------------------------------------------------------------- helpers

def _pool_arrays(slices, stats: NormalizationStats):
    images = np.stack([normalize(img, stats).intensities for img, _ in slices])
    labels = np.stack([lbl.labels for _, lbl in slices])
    return images.astype(np.float32), labels.astype(np.int64)


def _mean_foreground_dice(pred_labels: np.ndarray, gt_labels: np.ndarray,
                          num_classes: int) -> float:
    from .core import dice

    scores = []
    for i in range(pred_labels.shape[0]):
        p = LabelMap(pred_labels[i], num_classes)
        g = LabelMap(gt_labels[i], num_classes)
        scores.extend(dice(g, p, c) for c in range(1, num_classes))
    return float(np.mean(scores))


def _assemble_editor_batch(images, probs, scribbles, num_classes, *,
                           include_prediction=True, hard_labels=False):
    """Vectorized batch version of the per-example input assembly.

    images (N,H,W) float32, probs (N,C,H,W), scribbles (N,H,W) int with
    sentinel C.  Matches assemble_inter_input / assemble_scratch_input
    channel for channel (a test pins this).
    """
    n, h, w = images.shape
    parts = [images[:, None]]
    if include_prediction:
        if hard_labels:
            hard = probs.argmax(axis=1)
            block = np.zeros_like(probs, dtype=np.float32)
            for c in range(num_classes):
                block[:, c] = hard == c
            parts.append(block)
        else:
            parts.append(probs.astype(np.float32, copy=False))
    onehot = np.zeros((n, num_classes + 1, h, w), dtype=np.float32)
    for v in range(num_classes + 1):
        onehot[:, v] = scribbles == v
    parts.append(onehot)
    return np.concatenate(parts, axis=1)


def _robot_batch(robot_fn, pred_labels, gt_labels, num_classes, robot_cfg, rng):
    """Scribbles for every example of a batch; returns (N, H, W) int marks."""
    out = np.empty_like(gt_labels)
    for i in range(gt_labels.shape[0]):
        mask = robot_fn(LabelMap(pred_labels[i], num_classes),
                        LabelMap(gt_labels[i], num_classes), robot_cfg, rng)
        out[i] = mask.marks
    return out


def _spawn_rngs(seed: int, names):
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(ss) for name, ss in zip(names, children)}


def _auto_val_interval(config: TrainingConfig) -> int:
    if config.val_interval > 0:
        return config.val_interval
    return max(1, config.max_steps // 10)


# -------------------------------------------------------------- base model

def train_base(volumes, split: SplitSpec, config: TrainingConfig):
    """Train the automatic base segmenter on g1, selecting the checkpoint
    with the best g2 foreground Dice.

    Returns (model, record, stats); ``stats`` is the g1-only normalization,
    which every downstream consumer of this model must reuse.
    """
    train_slices = slices_for(volumes, split.g1)
    val_slices = slices_for(volumes, split.g2)
    if not train_slices or not val_slices:
        raise ValueError("empty training or validation split")
    num_classes = train_slices[0][1].num_classes
    stats = compute_normalization(
        [v for v in volumes if v.patient_id in set(split.g1)])
    images, labels = _pool_arrays(train_slices, stats)
    val_images, val_labels = _pool_arrays(val_slices, stats)

    rngs = _spawn_rngs(config.seed, ("init", "data", "dropout"))
    spec = NetworkSpec(in_channels=1, num_classes=num_classes,
                       base_channels=config.base_channels,
                       dropout_rate=config.dropout_rate,
                       batch_norm=config.batch_norm)
    model = build_network(spec, rng=rngs["init"])
    opt = Adam(lr=config.learning_rate)
    record = TrainRunRecord(role="base", config=asdict(config),
                            seeds={"seed": config.seed})
    val_interval = _auto_val_interval(config)
    best_params = None

    def probe(step):
        nonlocal best_params
        preds = model.forward(val_images[:, None]).argmax(axis=1)
        score = _mean_foreground_dice(preds, val_labels, num_classes)
        record.log_val(step, score)
        if score > record.best_val_dice:
            record.best_val_dice = score
            record.best_step = step
            best_params = ({k: v.copy() for k, v in model.params.items()},
                           {k: v.copy() for k, v in model.stats.items()})

    for step in range(1, config.max_steps + 1):
        idx = rngs["data"].integers(0, images.shape[0], size=config.batch_size)
        batch_x, batch_y = images[idx], labels[idx]
        if config.augment:
            batch_x, batch_y = augment_batch(batch_x, batch_y, rngs["data"])
        logits, cache = model.forward_logits(batch_x[:, None], train=True,
                                             rng=rngs["dropout"], want_cache=True)
        loss, _, dlogits = softmax_cross_entropy(logits, batch_y)
        if not np.isfinite(loss):
            raise TrainingDiverged(step, loss)
        grads = model.backward(dlogits, cache)
        opt.step(model.params, grads)
        model.step = step
        record.log_step(step, loss)
        if step % val_interval == 0:
            probe(step)
    if record.best_step < config.max_steps:
        probe(config.max_steps)

    model.params, model.stats = best_params
    model.step = record.best_step
    return model, record, stats


# ------------------------------------------------------------------ editor

def train_editor(base: UNet, stats: NormalizationStats, volumes,
                 split: SplitSpec, config: TrainingConfig,
                 robot_cfg: RobotUserConfig | None = None, *,
                 role: str = "editor",
                 robot_fn=None, inner_hook=None):
    """Iterative-interaction training of the editing network.

    The base network stays frozen and supplies the first prediction of each
    batch (an all-background map for the from-scratch role).  Editor
    training pools g1 and g2 — the base performs too well on its own
    training data to yield useful errors, so g2 supplies realistic ones —
    and model selection probes g3 with a short simulated-editing run.

    ``robot_fn`` and ``inner_hook`` exist for instrumentation: the hook
    receives (batch_index, k, scribbles fed into round k, predicted labels
    emitted by round k, loss).
    """
    from . import evaluation  # local import; evaluation also stands alone

    if role not in ("editor", "scratch"):
        raise ValueError(f"unknown role {role!r}")
    robot_cfg = robot_cfg or RobotUserConfig()
    robot_fn = robot_fn or generate_scribbles
    num_classes = base.spec.num_classes

    train_slices = slices_for(volumes, [*split.g1, *split.g2])
    val_slices = slices_for(volumes, split.g3)
    if not train_slices or not val_slices:
        raise ValueError("empty training or validation split")
    if train_slices[0][1].num_classes != num_classes:
        raise ValueError(f"base network expects C={num_classes}, data has "
                         f"C={train_slices[0][1].num_classes}")
    images, labels = _pool_arrays(train_slices, stats)

    arch = NetworkSpec(in_channels=1 + num_classes + (num_classes + 1),
                       num_classes=num_classes,
                       base_channels=config.base_channels,
                       dropout_rate=config.dropout_rate,
                       batch_norm=config.batch_norm)
    include_prediction = role == "editor"
    if role == "scratch":
        arch = scratch_spec(arch)

    rngs = _spawn_rngs(config.seed, ("init", "data", "dropout", "robot", "probe"))
    model = build_network(arch, rng=rngs["init"])
    opt = Adam(lr=config.learning_rate)
    record = TrainRunRecord(role=role, config=asdict(config),
                            seeds={"seed": config.seed,
                                   "robot_seed": robot_cfg.rng_seed})
    val_interval = _auto_val_interval(config)
    best_params = None
    probe_cfg = evaluation.SimulationConfig(
        n_interactions=config.val_probe_interactions, robot=robot_cfg)

    def probe(step):
        nonlocal best_params
        probe_seed = int(rngs["probe"].integers(2 ** 31))
        scores = []
        for img, lbl in val_slices:
            sim_rng = np.random.default_rng(probe_seed)
            if role == "editor":
                curve = evaluation.simulate_editing(
                    normalize(img, stats), lbl, base, model, probe_cfg, sim_rng)
                scores.append(curve.mean_over(config.val_probe_interactions))
            else:
                curve = evaluation.simulate_from_scratch(
                    normalize(img, stats), lbl, model, probe_cfg, sim_rng)
                scores.append(curve.mean_over(config.val_probe_interactions))
        score = float(np.mean(scores))
        record.log_val(step, score)
        if score > record.best_val_dice:
            record.best_val_dice = score
            record.best_step = step
            best_params = ({k: v.copy() for k, v in model.params.items()},
                           {k: v.copy() for k, v in model.stats.items()})

    n_batches = config.n_batches
    k_rounds = config.k_interactions
    step = 0
    next_probe = val_interval
    for b in range(n_batches):
        idx = rngs["data"].integers(0, images.shape[0], size=config.batch_size)
        batch_x, batch_y = images[idx], labels[idx]
        if config.augment:
            # augmented once per batch; every round sees the same geometry
            batch_x, batch_y = augment_batch(batch_x, batch_y, rngs["data"])

        if role == "editor":
            probs = base.forward(batch_x[:, None])
        else:
            probs = np.zeros((batch_x.shape[0], num_classes) + batch_x.shape[1:],
                             dtype=np.float32)
            probs[:, 0] = 1.0  # all-background first prediction
        pred_labels = probs.argmax(axis=1)
        scribbles = _robot_batch(robot_fn, pred_labels, batch_y, num_classes,
                                 robot_cfg, rngs["robot"])

        for k in range(1, k_rounds + 1):
            x = _assemble_editor_batch(batch_x, probs, scribbles, num_classes,
                                       include_prediction=include_prediction,
                                       hard_labels=config.hard_label_inputs)
            logits, cache = model.forward_logits(x, train=True,
                                                 rng=rngs["dropout"],
                                                 want_cache=True)
            loss, probs, dlogits = softmax_cross_entropy(logits, batch_y)
            if not np.isfinite(loss):
                raise TrainingDiverged(step + 1, loss)
            pred_labels = probs.argmax(axis=1)
            fed_scribbles = scribbles
            if k < k_rounds or config.generate_final_scribbles:
                scribbles = _robot_batch(robot_fn, pred_labels, batch_y,
                                         num_classes, robot_cfg, rngs["robot"])
            grads = model.backward(dlogits, cache)
            opt.step(model.params, grads)
            step += 1
            model.step = step
            record.log_step(step, loss)
            if inner_hook is not None:
                inner_hook(b, k, fed_scribbles, pred_labels, loss)
        if step >= next_probe:
            probe(step)
            next_probe += val_interval
    if record.best_step < step:
        probe(step)

    model.params, model.stats = best_params
    model.step = record.best_step
    return model, record
