"""Voxel-grid data model and binary-mask morphology.

All volumes live on a rigid axis-aligned grid described by `VoxelGrid`.
Volumes are immutable after construction and may be shared freely; every
operation in this package is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import GridMismatchError

__all__ = [
    "VoxelGrid",
    "ScalarVolume",
    "MaskVolume",
    "MultiEchoVolume",
    "boundary_layer",
    "erode_mask",
    "dilate_mask",
    "distance_to_outside",
]

VALID_UNITS = ("Hz", "ppm", "1/s", "dimensionless")


@dataclass(frozen=True)
class VoxelGrid:
    """Regular 3D voxel lattice: matrix size, spacing and origin in mm."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")

    @property
    def shape(self):
        return self.dims

    @property
    def n_voxels(self):
        nx, ny, nz = self.dims
        return nx * ny * nz


def require_same_grid(a, b):
    """Volumes are combinable only when their grids are identical."""
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


@dataclass(frozen=True)
class ScalarVolume:
    """One real value per voxel, with a physical unit tag."""

    grid: VoxelGrid
    data: np.ndarray
    unit: str = "dimensionless"

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)  # copy: callers keep ownership
        if data.shape != self.grid.dims:
            raise ValueError(f"data shape {data.shape} != grid dims {self.grid.dims}")
        if not np.all(np.isfinite(data)):
            raise ValueError("ScalarVolume data must be finite (NaN/inf forbidden)")
        if self.unit not in VALID_UNITS:
            raise ValueError(f"unknown unit {self.unit!r}; expected one of {VALID_UNITS}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    def with_data(self, data, unit=None):
        return ScalarVolume(self.grid, data, self.unit if unit is None else unit)


@dataclass(frozen=True)
class MaskVolume:
    """Binary region-of-interest volume."""

    grid: VoxelGrid
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != self.grid.dims:
            raise ValueError(f"mask shape {data.shape} != grid dims {self.grid.dims}")
        data = data.astype(bool)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n_true(self):
        return int(self.data.sum())

    def __and__(self, other):
        require_same_grid(self, other)
        return MaskVolume(self.grid, self.data & other.data)

    def __or__(self, other):
        require_same_grid(self, other)
        return MaskVolume(self.grid, self.data | other.data)

    def __invert__(self):
        return MaskVolume(self.grid, ~self.data)

    def minus(self, other):
        require_same_grid(self, other)
        return MaskVolume(self.grid, self.data & ~other.data)


@dataclass(frozen=True)
class MultiEchoVolume:
    """Complex 4D stack (3D grid x echo) with strictly increasing echo times."""

    grid: VoxelGrid
    echo_times: tuple[float, ...]
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        tes = tuple(float(t) for t in self.echo_times)
        if len(tes) < 1 or any(b <= a for a, b in zip(tes, tes[1:])):
            raise ValueError(f"echo times must be strictly increasing, got {tes}")
        data = np.array(self.data, dtype=np.complex128)
        expected = self.grid.dims + (len(tes),)
        if data.shape != expected:
            raise ValueError(f"data shape {data.shape} != {expected}")
        data.setflags(write=False)
        object.__setattr__(self, "echo_times", tes)
        object.__setattr__(self, "data", data)

    @property
    def n_echoes(self):
        return len(self.echo_times)

    def magnitude(self, j):
        return np.abs(self.data[..., j])


# ---------------------------------------------------------------------------
# mask morphology


def _face_shell(mask):
    """Voxels of the mask with >= 1 face-neighbour outside it."""
    struct = ndimage.generate_binary_structure(3, 1)  # 6-connected
    interior = ndimage.binary_erosion(mask, structure=struct, border_value=0)
    return mask & ~interior

def distance_to_outside(m: MaskVolume) -> np.ndarray:
    """Per-voxel Euclidean distance (mm) to the nearest voxel centre outside the mask.

    Anisotropic spacing is respected; voxels outside the mask get 0.
    """
    if not m.data.any():
        return np.zeros(m.grid.dims)
    if m.data.all():
        # no outside voxel exists on the grid; treat the volume edge as outside
        padded = np.pad(m.data, 1)
        d = ndimage.distance_transform_edt(padded, sampling=m.grid.spacing)
        return d[1:-1, 1:-1, 1:-1]
    return ndimage.distance_transform_edt(m.data, sampling=m.grid.spacing)


def boundary_layer(m: MaskVolume, r_mm: float) -> MaskVolume:
    """Layer of mask voxels within distance `r_mm` of the mask boundary.

    The 1-voxel face-neighbour shell is always part of the layer, so
    ``boundary_layer(m, 0)`` returns exactly that shell and the layer grows
    monotonically with `r_mm`. Distances are centre-to-centre Euclidean in
    physical mm.
    """
    if r_mm < 0:
        raise ValueError(f"radius must be >= 0, got {r_mm}")
    shell = _face_shell(m.data)
    if r_mm == 0:
        return MaskVolume(m.grid, shell)
    d = distance_to_outside(m)
    return MaskVolume(m.grid, shell | (m.data & (d <= r_mm)))


def erode_mask(m: MaskVolume, r_mm: float) -> MaskVolume:
    """Mask minus its boundary layer: complement of `boundary_layer` within the mask."""
    layer = boundary_layer(m, r_mm)
    return MaskVolume(m.grid, m.data & ~layer.data)


def dilate_mask(m: MaskVolume, r_mm: float) -> MaskVolume:
    """Voxels within Euclidean distance `r_mm` (mm) of any mask voxel."""
    if r_mm < 0:
        raise ValueError(f"radius must be >= 0, got {r_mm}")
    if not m.data.any():
        return m
    d = ndimage.distance_transform_edt(~m.data, sampling=m.grid.spacing)
    return MaskVolume(m.grid, m.data | (d <= r_mm))
