"""Pixel-grid types, class-id conventions and the Dice metric.

Conventions used across the package:

* grids are row-major ``(H, W)`` numpy arrays, origin at the top-left,
  addressed as ``(row, col)``;
* class id 0 is background; valid class ids are ``0..C-1``;
* scribble masks use the extra value ``C`` as the "no scribble here"
  sentinel;
* probability fields are stored channels-first as ``(C, H, W)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ImageSlice",
    "LabelMap",
    "Prediction",
    "ScribbleMask",
    "DiceCurve",
    "dice",
    "argmax_labels",
    "fuse_binary",
    "mean_dice",
]


@dataclass(frozen=True)
class ImageSlice:
    """One 2D grayscale slice with (already normalized) intensities."""

    intensities: np.ndarray  # (H, W) float

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image must be a non-empty 2D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        object.__setattr__(self, "intensities", arr)

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensities.shape


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel integer class ids in ``[0, num_classes - 1]``.

    Used both for ground-truth annotations and for hard predictions.
    """

    labels: np.ndarray  # (H, W) int
    num_classes: int

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ValueError(f"label map must be 2D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"labels must be integers, got dtype {arr.dtype}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
            raise ValueError(
                f"label values must lie in [0, {self.num_classes - 1}], "
                f"got range [{arr.min()}, {arr.max()}]"
            )
        object.__setattr__(self, "labels", arr.astype(np.int64, copy=False))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class Prediction:
    """Per-pixel class probabilities, shape ``(C, H, W)`` (softmax output)."""

    probs: np.ndarray
    SUM_TOL = 1e-5

    def __post_init__(self):
        arr = np.asarray(self.probs)
        if arr.ndim != 3:
            raise ValueError(f"probs must have shape (C, H, W), got {arr.shape}")
        if arr.shape[0] < 2:
            raise ValueError("prediction needs at least 2 class channels")
        if np.any(arr < 0):
            raise ValueError("probabilities must be non-negative")
        sums = arr.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > self.SUM_TOL):
            worst = float(np.abs(sums - 1.0).max())
            raise ValueError(f"per-pixel probabilities must sum to 1 (max |sum-1| = {worst:.2e})")
        object.__setattr__(self, "probs", arr)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]

    @property
    def height(self) -> int:
        return self.probs.shape[1]

    @property
    def width(self) -> int:
        return self.probs.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[1:]


@dataclass(frozen=True)
class ScribbleMask:
    """Per-pixel scribble annotations.

    A value ``c < num_classes`` asserts class ``c`` at that pixel; the value
    ``num_classes`` (exactly one past the largest class id) means "no
    scribble here".
    """

    marks: np.ndarray  # (H, W) int in [0, C]
    num_classes: int

    def __post_init__(self):
        arr = np.asarray(self.marks)
        if arr.ndim != 2:
            raise ValueError(f"scribble mask must be 2D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"marks must be integers, got dtype {arr.dtype}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if arr.size and (arr.min() < 0 or arr.max() > self.num_classes):
            raise ValueError(
                f"scribble values must lie in [0, {self.num_classes}], "
                f"got range [{arr.min()}, {arr.max()}]"
            )
        object.__setattr__(self, "marks", arr.astype(np.int64, copy=False))

    @property
    def sentinel(self) -> int:
        return self.num_classes

    @property
    def shape(self) -> tuple[int, int]:
        return self.marks.shape

    def scribbled_pixels(self) -> set[tuple[int, int]]:
        """Coordinates of all non-sentinel pixels."""
        rows, cols = np.nonzero(self.marks != self.num_classes)
        return {(int(r), int(c)) for r, c in zip(rows, cols)}

    @classmethod
    def empty(cls, shape: tuple[int, int], num_classes: int) -> "ScribbleMask":
        return cls(np.full(shape, num_classes, dtype=np.int64), num_classes)


@dataclass
class DiceCurve:
    """Per-class Dice scores indexed by interaction iteration.

    ``values[i, j]`` is the Dice of class ``class_ids[j]`` after iteration
    ``start_iteration + i``.  Editing curves start at iteration 0 (the base
    prediction); from-scratch curves start at iteration 1.
    """

    values: np.ndarray  # (n_entries, n_classes)
    class_ids: tuple[int, ...]
    start_iteration: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != len(self.class_ids):
            raise ValueError("values must be (n_entries, n_classes)")
        if arr.size and (arr.min() < 0 - 1e-12 or arr.max() > 1 + 1e-12):
            raise ValueError("Dice values must lie in [0, 1]")
        self.values = arr

    @property
    def iterations(self) -> list[int]:
        return [self.start_iteration + i for i in range(self.values.shape[0])]

    def at(self, iteration: int, class_id: int) -> float:
        row = iteration - self.start_iteration
        if not 0 <= row < self.values.shape[0]:
            raise ValueError(f"curve does not cover iteration {iteration}")
        try:
            col = self.class_ids.index(class_id)
        except ValueError:
            raise ValueError(f"curve does not cover class {class_id}") from None
        return float(self.values[row, col])

    def mean_over(self, iteration: int, class_ids=None) -> float:
        """Mean Dice at one iteration over the given classes (default: all
        foreground classes, i.e. every covered class id except 0)."""
        if class_ids is None:
            class_ids = [c for c in self.class_ids if c != 0] or list(self.class_ids)
        return float(np.mean([self.at(iteration, c) for c in class_ids]))


def dice(s_g: LabelMap, s_p: LabelMap, class_id: int) -> float:
    """Dice overlap of one class between two label maps.

    Computed as ``2 * |intersection| / (|gt pixels| + |predicted pixels|)``
    on the binary masks of ``class_id``.  When the class is absent from both
    maps the score is defined as 1.0 (the class is perfectly segmented by
    not being there), which also avoids 0/0.
    """
    if s_g.shape != s_p.shape:
        raise ValueError(f"shape mismatch: {s_g.shape} vs {s_p.shape}")
    if not 0 <= class_id < max(s_g.num_classes, s_p.num_classes):
        raise ValueError(f"class_id {class_id} out of range")
    gt = s_g.labels == class_id
    pred = s_p.labels == class_id
    denom = int(gt.sum()) + int(pred.sum())
    if denom == 0:
        return 1.0
    inter = int(np.logical_and(gt, pred).sum())
    return 2.0 * inter / denom


def argmax_labels(p: Prediction) -> LabelMap:
    """Hard labels from a probability field; ties go to the lowest class id."""
    return LabelMap(np.argmax(p.probs, axis=0).astype(np.int64), p.num_classes)


def fuse_binary(l: LabelMap) -> LabelMap:
    """Collapse all foreground classes into a single class 1."""
    return LabelMap((l.labels > 0).astype(np.int64), 2)


def mean_dice(curves: list[DiceCurve], iteration: int, class_id: int) -> float:
    """Arithmetic mean of ``curve.at(iteration, class_id)`` over curves."""
    if not curves:
        raise ValueError("mean_dice over an empty list of curves")
    return float(np.mean([c.at(iteration, class_id) for c in curves]))
