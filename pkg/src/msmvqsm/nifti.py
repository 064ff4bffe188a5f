"""Minimal NIfTI-1 (.nii) reader/writer.

Covers exactly what this package produces: single-file little-endian NIfTI-1
with float32 (scalar/mask) or complex64 (multi-echo) data, axis-aligned sform.
No compression, no NIfTI-2, no resampling.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import VolumeFormatError

HEADER_SIZE = 348
MAGIC = b"n+1\x00"
DT_FLOAT32 = 16
DT_COMPLEX64 = 32

_DTYPES = {DT_FLOAT32: np.dtype("<f4"), DT_COMPLEX64: np.dtype("<c8")}
_BITPIX = {DT_FLOAT32: 32, DT_COMPLEX64: 64}


def write_nii(path, data, spacing, origin, descrip=""):
    """Write a 3D or 4D array as little-endian NIfTI-1.

    float32 input is stored as FLOAT32, complex64 as COMPLEX64; anything else
    is rejected so that writes stay lossless by construction.
    """
    data = np.asarray(data)
    if data.dtype == np.float32:
        datatype = DT_FLOAT32
    elif data.dtype == np.complex64:
        datatype = DT_COMPLEX64
    else:
        raise VolumeFormatError(f"unsupported dtype for NIfTI write: {data.dtype}")
    if data.ndim not in (3, 4):
        raise VolumeFormatError(f"expected 3D or 4D data, got {data.ndim}D")

    dim = [data.ndim, 1, 1, 1, 1, 1, 1, 1]
    dim[1 : 1 + data.ndim] = data.shape
    pixdim = [1.0, float(spacing[0]), float(spacing[1]), float(spacing[2]), 0, 0, 0, 0]

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)            # sizeof_hdr
    struct.pack_into("<8h", hdr, 40, *dim)                 # dim
    struct.pack_into("<h", hdr, 70, datatype)              # datatype
    struct.pack_into("<h", hdr, 72, _BITPIX[datatype])     # bitpix
    struct.pack_into("<8f", hdr, 76, *pixdim)              # pixdim
    struct.pack_into("<f", hdr, 108, 352.0)                # vox_offset
    struct.pack_into("<f", hdr, 112, 1.0)                  # scl_slope
    struct.pack_into("<b", hdr, 123, 10)                   # xyzt_units: mm | s
    db = descrip.encode()[:79]
    hdr[148 : 148 + len(db)] = db                          # descrip
    struct.pack_into("<h", hdr, 254, 1)                    # sform_code
    srow_x = (spacing[0], 0.0, 0.0, origin[0])
    srow_y = (0.0, spacing[1], 0.0, origin[1])
    srow_z = (0.0, 0.0, spacing[2], origin[2])
    struct.pack_into("<4f", hdr, 280, *srow_x)
    struct.pack_into("<4f", hdr, 296, *srow_y)
    struct.pack_into("<4f", hdr, 312, *srow_z)
    hdr[344:348] = MAGIC

    with open(path, "wb") as f:
        f.write(bytes(hdr))
        f.write(b"\x00\x00\x00\x00")  # no extensions
        f.write(np.asfortranarray(data).tobytes(order="F"))


def read_nii(path):
    """Read a .nii written by `write_nii` (or compatible).

    Returns (data, spacing, origin, descrip) with data in C order.
    """
    with open(path, "rb") as f:
        hdr = f.read(HEADER_SIZE)
        if len(hdr) < HEADER_SIZE:
            raise VolumeFormatError(f"{path}: truncated NIfTI header")
        (sizeof_hdr,) = struct.unpack_from("<i", hdr, 0)
        if sizeof_hdr != HEADER_SIZE:
            raise VolumeFormatError(
                f"{path}: bad sizeof_hdr {sizeof_hdr} (big-endian or non-NIfTI file?)"
            )
        if hdr[344:348] not in (MAGIC, b"ni1\x00"):
            raise VolumeFormatError(f"{path}: missing NIfTI magic")
        dim = struct.unpack_from("<8h", hdr, 40)
        ndim = dim[0]
        if ndim not in (3, 4):
            raise VolumeFormatError(f"{path}: unsupported ndim {ndim}")
        shape = tuple(int(d) for d in dim[1 : 1 + ndim])
        if any(d < 1 for d in shape):
            raise VolumeFormatError(f"{path}: bad dim {shape}")
        (datatype,) = struct.unpack_from("<h", hdr, 70)
        if datatype not in _DTYPES:
            raise VolumeFormatError(f"{path}: unsupported datatype code {datatype}")
        pixdim = struct.unpack_from("<8f", hdr, 76)
        spacing = tuple(float(p) for p in pixdim[1:4])
        (vox_offset,) = struct.unpack_from("<f", hdr, 108)
        (sform_code,) = struct.unpack_from("<h", hdr, 254)
        if sform_code > 0:
            sx = struct.unpack_from("<4f", hdr, 280)
            sy = struct.unpack_from("<4f", hdr, 296)
            sz = struct.unpack_from("<4f", hdr, 312)
            origin = (float(sx[3]), float(sy[3]), float(sz[3]))
        else:
            origin = tuple(float(q) for q in struct.unpack_from("<3f", hdr, 268))
        descrip = hdr[148:228].split(b"\x00", 1)[0].decode(errors="replace")

        f.seek(int(vox_offset))
        dt = _DTYPES[datatype]
        count = int(np.prod(shape))
        raw = f.read(count * dt.itemsize)
        if len(raw) != count * dt.itemsize:
            raise VolumeFormatError(f"{path}: truncated data section")
        data = np.frombuffer(raw, dtype=dt).reshape(shape, order="F")
    return np.ascontiguousarray(data), spacing, origin, descrip
