"""Simulated user that scribbles on mispredicted regions.

The model is deliberately random rather than clever: for every class it
picks one misclassified pixel uniformly at random, stamps a small square
window around it and keeps the window pixels whose ground-truth label is
that class.  The randomness keeps the editing network from latching onto
one particular annotation strategy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabelMap, ScribbleMask

__all__ = [
    "RobotUserConfig",
    "misclassified_pixels",
    "scribble_for_class",
    "scribble_with_center",
    "generate_scribbles",
]


@dataclass(frozen=True)
class RobotUserConfig:
    """Knobs of the simulated user.

    region_size: side of the square stamp placed around each chosen pixel
        (odd so the chosen pixel sits at the center).
    include_background: whether class 0 also receives scribbles.
    rng_seed: default seed for callers that do not inject their own
        generator.
    """

    region_size: int = 9
    include_background: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.region_size < 1 or self.region_size % 2 == 0:
            raise ValueError(f"region_size must be odd and >= 1, got {self.region_size}")

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def _check_shapes(pred: LabelMap, gt: LabelMap):
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")


def misclassified_pixels(pred: LabelMap, gt: LabelMap, class_id: int) -> set[tuple[int, int]]:
    """Pixels that belong to ``class_id`` in the ground truth but were
    predicted as something else."""
    _check_shapes(pred, gt)
    wrong = np.logical_and(gt.labels == class_id, pred.labels != class_id)
    rows, cols = np.nonzero(wrong)
    return {(int(r), int(c)) for r, c in zip(rows, cols)}


def _stamp_window(gt_labels: np.ndarray, class_id: int, center: tuple[int, int],
                  region_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows/cols inside the clipped window around ``center`` whose ground
    truth is ``class_id``.  Windows at image borders are clipped, never
    shifted, so the chosen pixel stays centered."""
    h, w = gt_labels.shape
    half = region_size // 2
    r, c = center
    r0, r1 = max(0, r - half), min(h, r + half + 1)
    c0, c1 = max(0, c - half), min(w, c + half + 1)
    sub = gt_labels[r0:r1, c0:c1] == class_id
    rows, cols = np.nonzero(sub)
    return rows + r0, cols + c0


def scribble_with_center(pred: LabelMap, gt: LabelMap, class_id: int,
                         config: RobotUserConfig, rng: np.random.Generator):
    """Like :func:`scribble_for_class` but also reports the chosen center
    pixel (or None when the class has no misclassified pixels)."""
    _check_shapes(pred, gt)
    wrong = np.logical_and(gt.labels == class_id, pred.labels != class_id)
    flat = np.flatnonzero(wrong)
    if flat.size == 0:
        return set(), None
    pick = int(flat[rng.integers(flat.size)])
    center = divmod(pick, gt.width)
    rows, cols = _stamp_window(gt.labels, class_id, center, config.region_size)
    return {(int(r), int(c)) for r, c in zip(rows, cols)}, center


def scribble_for_class(pred: LabelMap, gt: LabelMap, class_id: int,
                       config: RobotUserConfig,
                       rng: np.random.Generator) -> set[tuple[int, int]]:
    """Scribble pixels for one class, or the empty set if the class is
    already perfectly predicted.

    The returned pixels all carry ground-truth label ``class_id``; the
    randomly chosen (misclassified) center pixel is always among them.
    """
    pixels, _ = scribble_with_center(pred, gt, class_id, config, rng)
    return pixels


def generate_scribbles(pred: LabelMap, gt: LabelMap, config: RobotUserConfig,
                       rng: np.random.Generator) -> ScribbleMask:
    """One scribble mask covering every class (the per-class stamps merged).

    Marked pixels always carry their ground-truth class, so stamps from
    different classes can never claim the same pixel.  A perfect prediction
    yields an all-sentinel mask.
    """
    _check_shapes(pred, gt)
    if pred.num_classes != gt.num_classes:
        raise ValueError(
            f"class count mismatch: pred C={pred.num_classes} vs gt C={gt.num_classes}"
        )
    n_classes = gt.num_classes
    marks = np.full(gt.shape, n_classes, dtype=np.int64)
    first_class = 0 if config.include_background else 1
    for class_id in range(first_class, n_classes):
        wrong = np.logical_and(gt.labels == class_id, pred.labels != class_id)
        flat = np.flatnonzero(wrong)
        if flat.size == 0:
            continue
        pick = int(flat[rng.integers(flat.size)])
        center = divmod(pick, gt.width)
        rows, cols = _stamp_window(gt.labels, class_id, center, config.region_size)
        marks[rows, cols] = class_id
    return ScribbleMask(marks, n_classes)
