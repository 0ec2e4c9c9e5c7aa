"""Dataset ingestion, patient-level splits, synthetic data and augmentation.

Two on-disk layouts are supported:

* ``nifti``: ``<root>/<patient_id>/image.nii.gz`` + ``label.nii.gz``
* ``png_pairs``: ``<root>/<patient_id>/slice_###_img.png`` +
  ``slice_###_lbl.png`` (8-bit; label pixel values are raw class ids)

Splits are always patient-level: a patient's slices never straddle groups.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import nifti
from .core import ImageSlice, LabelMap

__all__ = [
    "PatientVolume",
    "SplitSpec",
    "NormalizationStats",
    "load_dataset",
    "save_dataset_png",
    "make_splits",
    "generate_synthetic",
    "compute_normalization",
    "normalize",
    "augment_batch",
    "fit_to_shape",
]


@dataclass
class PatientVolume:
    """All slices of one patient, as (image, label) pairs."""

    patient_id: str
    slices: list[tuple[ImageSlice, LabelMap]]

    def __post_init__(self):
        if not self.slices:
            raise ValueError(f"patient {self.patient_id}: no slices")
        counts = {lbl.num_classes for _, lbl in self.slices}
        if len(counts) != 1:
            raise ValueError(f"patient {self.patient_id}: inconsistent class counts {counts}")

    @property
    def num_classes(self) -> int:
        return self.slices[0][1].num_classes


@dataclass
class SplitSpec:
    """Patient-level split into the four groups:

    g1: base-network training;  g2: base validation (and, together with g1,
    editor training);  g3: editor model selection;  g4: held-out test.
    """

    g1: list[str] = field(default_factory=list)
    g2: list[str] = field(default_factory=list)
    g3: list[str] = field(default_factory=list)
    g4: list[str] = field(default_factory=list)

    def __post_init__(self):
        groups = [self.g1, self.g2, self.g3, self.g4]
        seen: set[str] = set()
        for g in groups:
            for pid in g:
                if pid in seen:
                    raise ValueError(f"patient {pid!r} appears in more than one group")
                seen.add(pid)

    def group(self, name: str) -> list[str]:
        return getattr(self, name)

    def all_ids(self) -> list[str]:
        return [*self.g1, *self.g2, *self.g3, *self.g4]

    def to_json(self) -> str:
        return json.dumps({"g1": self.g1, "g2": self.g2, "g3": self.g3, "g4": self.g4},
                          indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SplitSpec":
        d = json.loads(text)
        return cls(g1=list(d["g1"]), g2=list(d["g2"]), g3=list(d["g3"]), g4=list(d["g4"]))


@dataclass(frozen=True)
class NormalizationStats:
    """Median intensity over every pixel of the training split."""

    median_intensity: float

    def __post_init__(self):
        if not np.isfinite(self.median_intensity) or self.median_intensity <= 0:
            raise ValueError(f"median intensity must be finite and > 0, "
                             f"got {self.median_intensity}")


# --------------------------------------------------------------------- load

def fit_to_shape(arr: np.ndarray, shape: tuple[int, int], pad_value=0) -> np.ndarray:
    """Center-crop and/or zero-pad a 2D array to the requested shape."""
    h, w = arr.shape
    th, tw = shape
    # crop
    if h > th:
        top = (h - th) // 2
        arr = arr[top:top + th]
    if w > tw:
        left = (w - tw) // 2
        arr = arr[:, left:left + tw]
    # pad
    h, w = arr.shape
    if h < th or w < tw:
        pt = (th - h) // 2
        pl = (tw - w) // 2
        out = np.full((th, tw), pad_value, dtype=arr.dtype)
        out[pt:pt + h, pl:pl + w] = arr
        arr = out
    return arr


class DatasetError(RuntimeError):
    pass


def _pair_to_slice(img_arr: np.ndarray, lbl_arr: np.ndarray, where: str,
                   patch_size: int | None):
    if img_arr.shape != lbl_arr.shape:
        raise DatasetError(f"{where}: image shape {img_arr.shape} does not match "
                           f"label shape {lbl_arr.shape}")
    if not np.issubdtype(lbl_arr.dtype, np.integer):
        if not np.all(lbl_arr == np.round(lbl_arr)):
            raise DatasetError(f"{where}: label values are not integers")
        lbl_arr = lbl_arr.astype(np.int64)
    if patch_size is not None:
        img_arr = fit_to_shape(img_arr.astype(np.float32), (patch_size, patch_size))
        lbl_arr = fit_to_shape(lbl_arr, (patch_size, patch_size))
    return img_arr.astype(np.float32), lbl_arr.astype(np.int64)


def load_dataset(root, fmt: str = "png_pairs",
                 patch_size: int | None = None) -> list[PatientVolume]:
    """Read every patient directory under ``root``.

    The class count is inferred from the label value range over the whole
    corpus (max label + 1, at least 2).  ``patch_size`` center-crops or
    zero-pads every slice to a square of that side.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    patient_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not patient_dirs:
        raise DatasetError(f"dataset root {root} contains no patient directories")

    raw: list[tuple[str, list[tuple[np.ndarray, np.ndarray]]]] = []
    max_label = 0
    for pdir in patient_dirs:
        pairs: list[tuple[np.ndarray, np.ndarray]] = []
        if fmt == "nifti":
            img_path = _find_one(pdir, ("image.nii.gz", "image.nii"))
            lbl_path = _find_one(pdir, ("label.nii.gz", "label.nii"))
            img_vol = nifti.read_volume(img_path)
            lbl_vol = nifti.read_volume(lbl_path)
            if img_vol.shape != lbl_vol.shape:
                raise DatasetError(f"{pdir.name}: image volume {img_vol.shape} does not "
                                   f"match label volume {lbl_vol.shape}")
            for k in range(img_vol.shape[2]):
                pairs.append(_pair_to_slice(img_vol[:, :, k], lbl_vol[:, :, k],
                                            f"{pdir.name}[{k}]", patch_size))
        elif fmt == "png_pairs":
            img_files = sorted(pdir.glob("slice_*_img.png"))
            if not img_files:
                raise DatasetError(f"{pdir.name}: no slice_*_img.png files")
            for img_file in img_files:
                lbl_file = pdir / img_file.name.replace("_img.png", "_lbl.png")
                if not lbl_file.exists():
                    raise DatasetError(f"missing label file {lbl_file}")
                img_arr = np.asarray(Image.open(img_file), dtype=np.float32)
                lbl_arr = np.asarray(Image.open(lbl_file))
                pairs.append(_pair_to_slice(img_arr, lbl_arr, img_file.name, patch_size))
        else:
            raise ValueError(f"unknown dataset format {fmt!r}")
        for _, lbl in pairs:
            if lbl.size:
                if lbl.min() < 0:
                    raise DatasetError(f"{pdir.name}: negative label values")
                max_label = max(max_label, int(lbl.max()))
        raw.append((pdir.name, pairs))

    num_classes = max(2, max_label + 1)
    volumes = []
    for pid, pairs in raw:
        slices = [(ImageSlice(img), LabelMap(lbl, num_classes)) for img, lbl in pairs]
        volumes.append(PatientVolume(pid, slices))
    return volumes


def _find_one(pdir: Path, names) -> Path:
    for name in names:
        p = pdir / name
        if p.exists():
            return p
    raise DatasetError(f"{pdir.name}: none of {names} found")


def save_dataset_png(volumes: list[PatientVolume], root):
    """Write volumes in the png_pairs layout (8-bit; intensities scaled to
    use the full range, labels stored as raw class ids)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for vol in volumes:
        pdir = root / vol.patient_id
        pdir.mkdir(exist_ok=True)
        for k, (img, lbl) in enumerate(vol.slices):
            arr = img.intensities
            lo, hi = float(arr.min()), float(arr.max())
            scale = 255.0 / (hi - lo) if hi > lo else 1.0
            img8 = np.clip((arr - lo) * scale, 0, 255).astype(np.uint8)
            Image.fromarray(img8, mode="L").save(pdir / f"slice_{k:03d}_img.png")
            Image.fromarray(lbl.labels.astype(np.uint8), mode="L").save(
                pdir / f"slice_{k:03d}_lbl.png")


# -------------------------------------------------------------------- split

def make_splits(volumes: list[PatientVolume], sizes=(15, 8, 1, 5),
                seed: int = 0) -> SplitSpec:
    """Random patient-level split into four groups of the given sizes."""
    ids = [v.patient_id for v in volumes]
    if len(sizes) != 4:
        raise ValueError("sizes must have four entries")
    if sum(sizes) != len(ids):
        raise ValueError(f"split sizes {sizes} sum to {sum(sizes)}, "
                         f"but there are {len(ids)} patients")
    rng = np.random.default_rng(seed)
    order = list(np.array(ids, dtype=object)[rng.permutation(len(ids))])
    bounds = np.cumsum((0,) + tuple(sizes))
    groups = [order[bounds[i]:bounds[i + 1]] for i in range(4)]
    return SplitSpec(*[[str(p) for p in g] for g in groups])


def slices_for(volumes: list[PatientVolume], ids) -> list[tuple[ImageSlice, LabelMap]]:
    by_id = {v.patient_id: v for v in volumes}
    out = []
    for pid in ids:
        if pid not in by_id:
            raise ValueError(f"unknown patient id {pid!r}")
        out.extend(by_id[pid].slices)
    return out


# ---------------------------------------------------------------- synthetic

def _ellipse_radius(theta, a, b, wobble_amp, wobble_freq, wobble_phase):
    # smooth star-shaped boundary: base ellipse radius modulated by a few
    # low-frequency harmonics
    r = (a * b) / np.sqrt((b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2)
    mod = np.ones_like(theta)
    for amp, freq, phase in zip(wobble_amp, wobble_freq, wobble_phase):
        mod += amp * np.cos(freq * theta + phase)
    return r * mod


def generate_synthetic(n_patients: int, slices_per_patient: int,
                       size=(320, 320), seed: int = 0,
                       noise_level: float = 0.16,
                       texture_level: float = 0.22) -> list[PatientVolume]:
    """Desk-scale stand-in dataset: a noisy inner structure (class 1) nested
    inside an outer ring (class 2) on textured background, three classes.

    Each patient has its own pose, scale, intensity levels and boundary
    wobble; slices sweep through the structure so its cross-section grows
    and shrinks like a body would.  Deterministic per seed.
    """
    if n_patients < 1:
        raise ValueError("n_patients must be >= 1")
    h, w = size
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    volumes = []
    for p in range(n_patients):
        cy = h / 2 + rng.uniform(-0.06, 0.06) * h
        cx = w / 2 + rng.uniform(-0.06, 0.06) * w
        a_out = rng.uniform(0.24, 0.34) * h
        b_out = rng.uniform(0.24, 0.34) * w
        inner_frac = rng.uniform(0.50, 0.62)
        rot = rng.uniform(0, np.pi)
        wob_amp = rng.uniform(0.0, 0.09, size=3)
        wob_freq = rng.integers(2, 6, size=3)
        lvl_bg = rng.uniform(0.25, 0.40)
        lvl_ring = rng.uniform(0.60, 0.80)
        lvl_core = rng.uniform(0.40, 0.52)
        gain = rng.uniform(0.7, 1.4)  # patient-level scanner gain

        slices = []
        for s in range(slices_per_patient):
            t = (2 * s / max(1, slices_per_patient - 1)) - 1 if slices_per_patient > 1 else 0.0
            shrink = np.sqrt(max(0.35, 1.0 - 0.45 * t * t))
            jy = rng.uniform(-2, 2)
            jx = rng.uniform(-2, 2)
            wob_phase = rng.uniform(0, 2 * np.pi, size=3)

            dy = yy - (cy + jy)
            dx = xx - (cx + jx)
            ry = np.cos(rot) * dy + np.sin(rot) * dx
            rx = -np.sin(rot) * dy + np.cos(rot) * dx
            theta = np.arctan2(rx, ry)
            rad = np.hypot(ry, rx)
            r_out = _ellipse_radius(theta, a_out * shrink, b_out * shrink,
                                    wob_amp, wob_freq, wob_phase)
            labels = np.zeros((h, w), dtype=np.int64)
            labels[rad <= r_out] = 2
            labels[rad <= inner_frac * r_out] = 1

            img = np.full((h, w), lvl_bg, dtype=np.float64)
            img[labels == 2] = lvl_ring
            img[labels == 1] = lvl_core
            # low-frequency texture + bias field + pixel noise
            texture = ndimage.gaussian_filter(rng.standard_normal((h, w)),
                                              sigma=max(2.0, h / 16))
            texture *= texture_level / max(1e-9, texture.std())
            gy, gx = rng.uniform(-0.15, 0.15, size=2)
            bias = gy * (yy / h - 0.5) + gx * (xx / w - 0.5)
            img = img + texture + bias + rng.standard_normal((h, w)) * noise_level
            img = np.clip(img * gain, 1e-4, None).astype(np.float32)
            slices.append((ImageSlice(img), LabelMap(labels, 3)))
        volumes.append(PatientVolume(f"synth{p:03d}", slices))
    return volumes


# ------------------------------------------------------------ normalization

def compute_normalization(volumes: list[PatientVolume]) -> NormalizationStats:
    """Median over all pixels of all training slices (corpus-wide)."""
    if not volumes:
        raise ValueError("no volumes to compute normalization from")
    pixels = np.concatenate([img.intensities.ravel()
                             for v in volumes for img, _ in v.slices])
    med = float(np.median(pixels))
    if med <= 0:
        raise ValueError(f"training median is {med}; cannot normalize by it")
    return NormalizationStats(med)


def normalize(sl: ImageSlice, stats: NormalizationStats) -> ImageSlice:
    return ImageSlice(sl.intensities / stats.median_intensity)


def normalize_volumes(volumes, stats) -> list[PatientVolume]:
    return [PatientVolume(v.patient_id,
                          [(normalize(img, stats), lbl) for img, lbl in v.slices])
            for v in volumes]


# ------------------------------------------------------------- augmentation

AUGMENT_KINDS = ("crop", "rotate", "flip")


def _crop_resize(img: np.ndarray, lbl: np.ndarray, top, left, ch, cw):
    h, w = img.shape
    rows = np.linspace(top, top + ch - 1, h)
    cols = np.linspace(left, left + cw - 1, w)
    grid = np.meshgrid(rows, cols, indexing="ij")
    img_out = ndimage.map_coordinates(img, grid, order=1, mode="nearest")
    lbl_out = ndimage.map_coordinates(lbl, grid, order=0, mode="nearest")
    return img_out.astype(np.float32), lbl_out.astype(np.int64)


def apply_augmentation(images, labels, kind: str, params: dict):
    """Apply one transform identically to every image+label pair.

    images: (N, H, W) float;  labels: (N, H, W) int.  Labels are resampled
    with nearest neighbor so no new class ids appear.
    """
    if kind == "flip":
        return np.ascontiguousarray(images[:, :, ::-1]), np.ascontiguousarray(labels[:, :, ::-1])
    if kind == "rotate":
        k = params["k"]
        return (np.ascontiguousarray(np.rot90(images, k=k, axes=(1, 2))),
                np.ascontiguousarray(np.rot90(labels, k=k, axes=(1, 2))))
    if kind == "crop":
        top, left, ch, cw = params["top"], params["left"], params["ch"], params["cw"]
        imgs, lbls = [], []
        for i in range(images.shape[0]):
            im, lb = _crop_resize(images[i], labels[i], top, left, ch, cw)
            imgs.append(im)
            lbls.append(lb)
        return np.stack(imgs), np.stack(lbls)
    raise ValueError(f"unknown augmentation kind {kind!r}")


def draw_augmentation(shape: tuple[int, int], rng: np.random.Generator):
    """Decide whether and how to augment: with probability 0.5 one transform
    is drawn uniformly from crop-and-resize / 90-degree rotation /
    horizontal flip; otherwise None."""
    if rng.random() >= 0.5:
        return None
    kind = AUGMENT_KINDS[int(rng.integers(len(AUGMENT_KINDS)))]
    h, w = shape
    if kind == "rotate":
        return kind, {"k": int(rng.integers(1, 4))}
    if kind == "crop":
        area = rng.uniform(0.70, 0.95)
        frac = float(np.sqrt(area))
        ch, cw = max(2, int(round(h * frac))), max(2, int(round(w * frac)))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        return kind, {"top": top, "left": left, "ch": ch, "cw": cw}
    return kind, {}


def augment_batch(images: np.ndarray, labels: np.ndarray,
                  rng: np.random.Generator):
    """Batch-level augmentation: the same randomly drawn transform (or none)
    applied to every slice in the batch."""
    if images.shape[0] == 0:
        raise ValueError("empty batch")
    drawn = draw_augmentation(images.shape[1:], rng)
    if drawn is None:
        return images, labels
    kind, params = drawn
    return apply_augmentation(images, labels, kind, params)
