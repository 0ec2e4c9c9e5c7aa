"""Self-describing checkpoint container.

A checkpoint is a single ``.npz`` holding one or more named models (for
example ``base`` alone after base training, ``base`` + ``editor`` after
editor training) together with the architecture specs, the shape manifest,
the training-set normalization statistics and step counters.  Loading
verifies every array against the manifest so that incompatible files fail
loudly instead of mis-deserializing.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .unet import NetworkSpec, UNet

FORMAT_NAME = "interseg-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class CheckpointBundle:
    models: dict[str, UNet]
    median_intensity: float | None = None
    extra: dict | None = None

    def require(self, name: str) -> UNet:
        if name not in self.models:
            raise CheckpointError(
                f"checkpoint holds {sorted(self.models)} but {name!r} is required")
        return self.models[name]


def save_checkpoint(path, models: dict[str, UNet], *,
                    median_intensity: float | None = None,
                    extra: dict | None = None):
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "models": {
            name: {
                "spec": m.spec.to_dict(),
                "step": m.step,
                "manifest": {k: list(v) for k, v in m.manifest().items()},
            }
            for name, m in models.items()
        },
        "median_intensity": median_intensity,
        "extra": extra or {},
    }
    arrays = {}
    for name, m in models.items():
        for k, v in m.params.items():
            arrays[f"{name}:params:{k}"] = v
        for k, v in m.stats.items():
            arrays[f"{name}:stats:{k}"] = v
    np.savez_compressed(path, meta=np.asarray(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> CheckpointBundle:
    with np.load(path, allow_pickle=False) as data:
        if "meta" not in data:
            raise CheckpointError(f"{path}: not a checkpoint file (no meta entry)")
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != FORMAT_NAME:
            raise CheckpointError(f"{path}: unknown format {meta.get('format')!r}")
        if meta.get("version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {meta.get('version')}")
        models = {}
        for name, desc in meta["models"].items():
            spec = NetworkSpec.from_dict(desc["spec"])
            manifest = {k: tuple(v) for k, v in desc["manifest"].items()}
            params, stats = {}, {}
            for key, shape in manifest.items():
                is_stat = ".bn" in key and (key.endswith(".mean") or key.endswith(".var"))
                store = stats if is_stat else params
                full = f"{name}:stats:{key}" if is_stat else f"{name}:params:{key}"
                if full not in data:
                    raise CheckpointError(f"{path}: missing array {full}")
                arr = data[full]
                if tuple(arr.shape) != shape:
                    raise CheckpointError(
                        f"{path}: {full} has shape {arr.shape}, manifest says {shape}")
                store[key] = arr
            model = UNet(spec, params, stats, step=int(desc.get("step", 0)))
            # the manifest must exactly describe the architecture
            if model.manifest() != manifest:
                raise CheckpointError(f"{path}: manifest does not match spec for {name!r}")
            models[name] = model
    return CheckpointBundle(models=models,
                            median_intensity=meta.get("median_intensity"),
                            extra=meta.get("extra") or {})
