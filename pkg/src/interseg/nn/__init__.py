from .unet import DOWN_FACTOR, NetworkSpec, UNet, build_network, forward, scratch_spec
from .inputs import (
    assemble_auto_input,
    assemble_inter_input,
    assemble_scratch_input,
    channel_manifest,
    editor_in_channels,
    one_hot_scribbles,
    scratch_in_channels,
)
from .optim import Adam
from .checkpoint import CheckpointBundle, CheckpointError, load_checkpoint, save_checkpoint
from .backends import get_backend, set_backend

__all__ = [
    "DOWN_FACTOR",
    "NetworkSpec",
    "UNet",
    "build_network",
    "forward",
    "scratch_spec",
    "assemble_auto_input",
    "assemble_inter_input",
    "assemble_scratch_input",
    "channel_manifest",
    "editor_in_channels",
    "one_hot_scribbles",
    "scratch_in_channels",
    "Adam",
    "CheckpointBundle",
    "CheckpointError",
    "load_checkpoint",
    "save_checkpoint",
    "get_backend",
    "set_backend",
]
