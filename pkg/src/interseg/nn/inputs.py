"""Input-tensor assembly for the two network roles.

Channel layouts (single example, channels-first):

* base segmenter: ``[image]`` -> 1 channel
* editor: ``[image, prob_0 .. prob_{C-1}, scrib_0 .. scrib_C]``
  -> ``1 + C + (C+1)`` channels, where ``scrib_*`` is the one-hot encoding
  of the scribble mask over its C+1 values (sentinel last)
* from-scratch baseline: ``[image, scrib_0 .. scrib_C]`` -> ``1 + (C+1)``

Probabilities are passed through untouched; one-hot encodings avoid
imposing a fake ordering on class ids.
"""
from __future__ import annotations

import numpy as np

from ..core import ImageSlice, Prediction, ScribbleMask


def editor_in_channels(num_classes: int) -> int:
    return 1 + num_classes + (num_classes + 1)


def scratch_in_channels(num_classes: int) -> int:
    return 1 + (num_classes + 1)


def channel_manifest(num_classes: int, role: str) -> list[str]:
    """Human-readable channel names, in tensor order."""
    probs = [f"prob_class_{c}" for c in range(num_classes)]
    scribs = [f"scribble_class_{c}" for c in range(num_classes)] + ["scribble_none"]
    if role == "base":
        return ["image"]
    if role == "editor":
        return ["image"] + probs + scribs
    if role == "scratch":
        return ["image"] + scribs
    raise ValueError(f"unknown role {role!r}")


def one_hot_scribbles(scr: ScribbleMask, dtype=np.float32) -> np.ndarray:
    """(C+1, H, W) one-hot planes; the last plane is the no-scribble sentinel."""
    n_vals = scr.num_classes + 1
    out = np.zeros((n_vals,) + scr.shape, dtype=dtype)
    for v in range(n_vals):
        out[v] = scr.marks == v
    return out


def assemble_auto_input(img: ImageSlice, dtype=np.float32) -> np.ndarray:
    """(1, H, W) tensor holding the normalized intensities unchanged."""
    return img.intensities.astype(dtype, copy=True)[None]


def assemble_inter_input(img: ImageSlice, prev: Prediction, scr: ScribbleMask,
                         *, hard_labels: bool = False, dtype=np.float32) -> np.ndarray:
    """Editor input: image, previous prediction, scribble one-hot.

    ``hard_labels=True`` replaces the probability channels with the one-hot
    of their argmax (ablation switch; probabilities are the default).
    """
    if img.shape != prev.shape or img.shape != scr.shape:
        raise ValueError(f"shape mismatch: image {img.shape}, prediction "
                         f"{prev.shape}, scribbles {scr.shape}")
    if scr.num_classes != prev.num_classes:
        raise ValueError(f"class count mismatch: prediction C={prev.num_classes}, "
                         f"scribbles C={scr.num_classes}")
    if hard_labels:
        hard = prev.probs.argmax(axis=0)
        pred_block = np.zeros_like(prev.probs, dtype=dtype)
        for c in range(prev.num_classes):
            pred_block[c] = hard == c
    else:
        pred_block = prev.probs.astype(dtype, copy=False)
    return np.concatenate([
        img.intensities.astype(dtype, copy=False)[None],
        pred_block,
        one_hot_scribbles(scr, dtype=dtype),
    ], axis=0)


def assemble_scratch_input(img: ImageSlice, scr: ScribbleMask,
                           dtype=np.float32) -> np.ndarray:
    """From-scratch baseline input: image and scribble one-hot only."""
    if img.shape != scr.shape:
        raise ValueError(f"shape mismatch: image {img.shape}, scribbles {scr.shape}")
    return np.concatenate([
        img.intensities.astype(dtype, copy=False)[None],
        one_hot_scribbles(scr, dtype=dtype),
    ], axis=0)
