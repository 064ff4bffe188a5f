"""Volume file I/O: raw float32 + JSON sidecar, and NIfTI-1.

The raw format is the canonical bit-exact interchange: little-endian IEEE-754
binary in C order next to a `<name>.json` sidecar holding grid metadata, the
unit tag and (for multi-echo stacks) the echo times. NIfTI-1 is provided for
interoperability with the wider MRI toolchain; values are stored as float32 /
complex64 so a round trip is value-exact at that precision.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import nifti
from .errors import VolumeConsistencyError, VolumeFormatError
from .volume import MaskVolume, MultiEchoVolume, ScalarVolume, VoxelGrid

__all__ = ["load_volume", "save_volume"]

_SIDECAR_SUFFIX = ".json"


def _sidecar_path(path):
    base, _ = os.path.splitext(path)
    return base + _SIDECAR_SUFFIX


def _guess_format(path):
    if path.endswith(".nii"):
        return "nifti1"
    return "raw"


def save_volume(vol, path, fmt=None):
    """Write a ScalarVolume / MaskVolume / MultiEchoVolume to disk.

    fmt: "raw" (float32/complex64 + JSON sidecar) or "nifti1"; inferred from
    the extension (.nii -> nifti1) when omitted.
    """
    fmt = fmt or _guess_format(path)
    if fmt not in ("raw", "nifti1"):
        raise VolumeFormatError(f"unknown format {fmt!r}")

    grid = vol.grid
    meta = {
        "dims": list(grid.dims),
        "spacing_mm": list(grid.spacing),
        "origin_mm": list(grid.origin),
    }
    if isinstance(vol, MaskVolume):
        meta["kind"] = "mask"
        data = vol.data.astype(np.float32)
    elif isinstance(vol, MultiEchoVolume):
        meta["kind"] = "multiecho"
        meta["echo_times_s"] = list(vol.echo_times)
        data = vol.data.astype(np.complex64)
    elif isinstance(vol, ScalarVolume):
        meta["kind"] = "scalar"
        meta["unit"] = vol.unit
        data = vol.data.astype(np.float32)
    else:
        raise VolumeFormatError(f"cannot save object of type {type(vol).__name__}")

    try:
        if fmt == "raw":
            with open(path, "wb") as f:
                f.write(data.astype(data.dtype.newbyteorder("<")).tobytes(order="C"))
        else:
            descrip = "kind=%s;unit=%s" % (meta["kind"], meta.get("unit", ""))
            nifti.write_nii(path, data, grid.spacing, grid.origin, descrip)
        with open(_sidecar_path(path), "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise VolumeFormatError(f"cannot write {path}: {e}") from e


def load_volume(path, fmt=None):
    """Read a volume saved by `save_volume`; returns the matching volume type."""
    fmt = fmt or _guess_format(path)
    if fmt not in ("raw", "nifti1"):
        raise VolumeFormatError(f"unknown format {fmt!r}")

    sidecar = _sidecar_path(path)
    try:
        with open(sidecar) as f:
            meta = json.load(f)
    except FileNotFoundError as e:
        raise VolumeFormatError(f"missing sidecar {sidecar}") from e
    except json.JSONDecodeError as e:
        raise VolumeFormatError(f"malformed sidecar {sidecar}: {e}") from e

    for key in ("dims", "spacing_mm", "origin_mm", "kind"):
        if key not in meta:
            raise VolumeFormatError(f"sidecar {sidecar} missing field {key!r}")
    grid = VoxelGrid(tuple(meta["dims"]), tuple(meta["spacing_mm"]), tuple(meta["origin_mm"]))
    kind = meta["kind"]
    is_multi = kind == "multiecho"

    if fmt == "raw":
        dtype = np.dtype("<c8") if is_multi else np.dtype("<f4")
        raw = np.fromfile(path, dtype=dtype)
        n_expected = grid.n_voxels * (len(meta.get("echo_times_s", [])) if is_multi else 1)
        if raw.size != n_expected:
            raise VolumeConsistencyError(
                f"{path}: {raw.size} values but sidecar implies {n_expected}"
            )
        shape = grid.dims + ((len(meta["echo_times_s"]),) if is_multi else ())
        data = raw.reshape(shape)
    else:
        data, spacing, origin, _ = nifti.read_nii(path)
        expected_shape = grid.dims + ((len(meta["echo_times_s"]),) if is_multi else ())
        if data.shape != expected_shape:
            raise VolumeConsistencyError(
                f"{path}: data shape {data.shape} but sidecar implies {expected_shape}"
            )
        if not np.allclose(spacing, grid.spacing, rtol=1e-5):
            raise VolumeConsistencyError(
                f"{path}: header spacing {spacing} != sidecar {grid.spacing}"
            )

    if kind == "mask":
        return MaskVolume(grid, data != 0)
    if is_multi:
        return MultiEchoVolume(grid, tuple(meta["echo_times_s"]), data)
    return ScalarVolume(grid, data, meta.get("unit", "dimensionless"))
