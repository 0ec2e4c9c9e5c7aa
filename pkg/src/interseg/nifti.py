"""Minimal NIfTI-1 volume IO (plain or gzipped, single-file ``.nii``).

Covers exactly what the dataset layout needs: reading 2D/3D volumes of the
common scalar dtypes with scl slope/intercept applied, and writing float32
or integer volumes.  Orientation metadata is ignored; slices are addressed
as ``volume[:, :, k]``.
"""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}

HEADER_SIZE = 348


class NiftiError(RuntimeError):
    pass


def _read_bytes(path: Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_volume(path) -> np.ndarray:
    """Load a NIfTI-1 file as an array of shape (nx, ny, nz)."""
    raw = _read_bytes(Path(path))
    if len(raw) < HEADER_SIZE:
        raise NiftiError(f"{path}: file shorter than a NIfTI-1 header")
    order = "<"
    (sizeof_hdr,) = struct.unpack_from(order + "i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        order = ">"
        (sizeof_hdr,) = struct.unpack_from(order + "i", raw, 0)
        if sizeof_hdr != HEADER_SIZE:
            raise NiftiError(f"{path}: not a NIfTI-1 file (bad sizeof_hdr)")
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiError(f"{path}: bad magic {magic!r}")
    dim = struct.unpack_from(order + "8h", raw, 40)
    (datatype,) = struct.unpack_from(order + "h", raw, 70)
    (vox_offset,) = struct.unpack_from(order + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(order + "2f", raw, 112)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiError(f"{path}: invalid ndim {ndim}")
    shape = tuple(max(1, d) for d in dim[1:1 + ndim])
    if datatype not in _DTYPES:
        raise NiftiError(f"{path}: unsupported datatype code {datatype}")
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder(order)
    offset = int(vox_offset) if vox_offset else HEADER_SIZE + 4
    count = int(np.prod(shape))
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    vol = np.reshape(data, shape, order="F")
    while vol.ndim > 3 and vol.shape[-1] == 1:
        vol = vol[..., 0]
    if vol.ndim == 2:
        vol = vol[:, :, None]
    if vol.ndim != 3:
        raise NiftiError(f"{path}: expected a 2D/3D volume, got shape {vol.shape}")
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        vol = vol.astype(np.float32) * slope + scl_inter
    return np.ascontiguousarray(vol)


def write_volume(path, volume: np.ndarray):
    """Write an (nx, ny[, nz]) array as single-file NIfTI-1; gzip if *.gz."""
    vol = np.asarray(volume)
    if vol.ndim == 2:
        vol = vol[:, :, None]
    if vol.ndim != 3:
        raise NiftiError(f"can only write 2D/3D volumes, got shape {vol.shape}")
    if np.issubdtype(vol.dtype, np.floating):
        vol = vol.astype(np.float32)
    elif vol.dtype not in _CODES:
        vol = vol.astype(np.int16)
    code = _CODES[np.dtype(vol.dtype)]

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    dim = (3,) + vol.shape + (1, 1, 1, 1)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, vol.dtype.itemsize * 8)
    pixdim = (1.0,) * 8
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(HEADER_SIZE + 4))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[344:348] = b"n+1\x00"

    body = np.asfortranarray(vol).tobytes(order="F")
    payload = bytes(hdr) + b"\x00\x00\x00\x00" + body
    path = Path(path)
    if path.suffix == ".gz":
        path.write_bytes(gzip.compress(payload))
    else:
        path.write_bytes(payload)
