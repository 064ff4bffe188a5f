"""Fourier-domain operators: spherical mean value filter and dipole convolution.

The spherical kernel is rasterized in the spatial domain with partial-volume
weights (sub-voxel sampling on boundary voxels) so that even the minimal
radius of `minimal_radius` yields a kernel wider than one voxel, then
normalized to unit sum and transformed. The dipole kernel is evaluated
directly in k-space as 1/3 - (k.b0)^2/|k|^2 with the zero-frequency
coefficient fixed to 0, so a uniform susceptibility produces zero field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fourier
from .errors import GridMismatchError
from .volume import ScalarVolume, VoxelGrid

__all__ = [
    "GAMMA_MHZ_PER_T",
    "SphericalKernel",
    "DipoleKernel",
    "make_spherical_kernel",
    "make_dipole_kernel",
    "smv_apply",
    "smv_residual_apply",
    "minimal_radius",
    "dipole_convolve",
    "spherical_kernel_spectrum",
    "dipole_spectrum",
]

GAMMA_MHZ_PER_T = 42.5775  # proton gyromagnetic ratio / 2pi

_SUBVOXEL_SPLIT = 10  # 20 samples per axis on partial-volume voxels


def _wrapped_abs_coords(n, step):
    """|x| of each index on a periodic axis with the origin at index 0."""
    idx = np.arange(n)
    return np.minimum(idx, n - idx) * step


def rasterize_sphere(pad_shape, spacing, radius_mm):
    """Unit-sum spherical kernel on a periodic grid, origin at index 0.

    Voxels fully inside the sphere get weight 1, voxels overlapping the
    surface get their overlap fraction (sub-voxel sampling), the rest 0.
    """
    ax = [_wrapped_abs_coords(n, s) for n, s in zip(pad_shape, spacing)]
    hx, hy, hz = (s / 2.0 for s in spacing)
    X, Y, Z = np.meshgrid(*ax, indexing="ij", sparse=True)
    r2 = radius_mm**2

    far = (X + hx) ** 2 + (Y + hy) ** 2 + (Z + hz) ** 2  # farthest corner
    near = (
        np.maximum(X - hx, 0) ** 2
        + np.maximum(Y - hy, 0) ** 2
        + np.maximum(Z - hz, 0) ** 2
    )  # nearest point of the voxel to the centre
    kernel = (far <= r2).astype(np.float64)

    shell = (near <= r2) & (far > r2)
    idx = np.argwhere(shell)
    if idx.size:
        split = _SUBVOXEL_SPLIT
        offs = (np.arange(2 * split) - (split - 0.5)) / (2.0 * split)  # (-0.5, 0.5)
        ox, oy, oz = np.meshgrid(offs * spacing[0], offs * spacing[1], offs * spacing[2],
                                 indexing="ij")
        sub = np.stack([ox.ravel(), oy.ravel(), oz.ravel()], axis=1)  # (S,3)
        centers = np.stack(
            [ax[0][idx[:, 0]], ax[1][idx[:, 1]], ax[2][idx[:, 2]]], axis=1
        )  # (K,3)
        # fraction of sub-voxel sample points inside the sphere, chunked to bound memory
        frac = np.empty(len(centers))
        chunk = max(1, 2_000_000 // len(sub))
        for i in range(0, len(centers), chunk):
            c = centers[i : i + chunk, None, :] + sub[None, :, :]
            frac[i : i + chunk] = np.mean((c**2).sum(axis=2) <= r2, axis=1)
        kernel[shell] = frac

    total = kernel.sum()
    if total <= 0:
        raise ValueError(f"spherical kernel of radius {radius_mm} mm is empty")
    return kernel / total


def spherical_kernel_spectrum(pad_shape, spacing, radius_mm):
    """rfftn of the unit-sum spherical kernel (real spectrum)."""
    kernel = rasterize_sphere(pad_shape, spacing, radius_mm)
    return fourier.rfftn(kernel).real


@dataclass(frozen=True)
class SphericalKernel:
    """Spherical mean value filter S_R for a fixed grid, precomputed in k-space."""

    radius_mm: float
    grid: VoxelGrid
    pad_shape: tuple[int, int, int]
    spectrum: np.ndarray = field(repr=False)


def make_spherical_kernel(grid: VoxelGrid, radius_mm: float) -> SphericalKernel:
    margins = [int(math.ceil(radius_mm / s)) + 1 for s in grid.spacing]
    pad_shape = fourier.padded_shape(grid.dims, margins)
    spec = spherical_kernel_spectrum(pad_shape, grid.spacing, radius_mm)
    return SphericalKernel(float(radius_mm), grid, pad_shape, spec)


def smv_apply(b: ScalarVolume, kernel: SphericalKernel) -> ScalarVolume:
    """Replace every voxel by its spherical mean over the kernel radius."""
    if b.grid != kernel.grid:
        raise GridMismatchError(f"volume grid {b.grid} != kernel grid {kernel.grid}")
    out = fourier.convolve_spectrum(b.data, kernel.spectrum, kernel.pad_shape)
    return ScalarVolume(b.grid, out, b.unit)


def smv_residual_apply(b: ScalarVolume, kernel: SphericalKernel) -> ScalarVolume:
    """High-pass companion of `smv_apply`: b minus its spherical mean."""
    smoothed = smv_apply(b, kernel)
    return ScalarVolume(b.grid, b.data - smoothed.data, b.unit)


def minimal_radius(grid: VoxelGrid, eps_mm: float = 0.05) -> float:
    """Smallest usable SMV radius: half the finest voxel dimension plus eps.

    Below this the rasterized kernel degenerates toward a discrete delta and
    the mean-value operation loses meaning.
    """
    if eps_mm <= 0:
        raise ValueError(f"eps must be > 0, got {eps_mm}")
    return 0.5 * min(grid.spacing) + eps_mm


def dipole_spectrum(pad_shape, spacing, b0_dir=(0.0, 0.0, 1.0)):
    """Unit-response dipole kernel in k-space on the padded grid (real array)."""
    b0 = np.asarray(b0_dir, dtype=np.float64)
    norm = np.linalg.norm(b0)
    if norm == 0:
        raise ValueError("B0 direction must be a nonzero vector")
    b0 = b0 / norm

    freqs = [np.fft.fftfreq(n, d=s) for n, s in zip(pad_shape[:2], spacing[:2])]
    freqs.append(np.fft.rfftfreq(pad_shape[2], d=spacing[2]))
    KX, KY, KZ = np.meshgrid(*freqs, indexing="ij", sparse=True)
    k_par = KX * b0[0] + KY * b0[1] + KZ * b0[2]
    k_sq = KX**2 + KY**2 + KZ**2
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 1.0 / 3.0 - k_par**2 / k_sq
    d[0, 0, 0] = 0.0  # uniform susceptibility produces no field
    return d


@dataclass(frozen=True)
class DipoleKernel:
    """Point-dipole field response in k-space for a fixed grid and B0 axis."""

    grid: VoxelGrid
    b0_dir: tuple[float, float, float]
    pad_shape: tuple[int, int, int]
    spectrum: np.ndarray = field(repr=False)


def make_dipole_kernel(grid: VoxelGrid, b0_dir=(0.0, 0.0, 1.0)) -> DipoleKernel:
    # 2x padding approximates the open-boundary dipole field
    pad_shape = fourier.padded_shape(grid.dims, [d // 2 for d in grid.dims])
    spec = dipole_spectrum(pad_shape, grid.spacing, b0_dir)
    return DipoleKernel(grid, tuple(float(v) for v in b0_dir), pad_shape, spec)


def dipole_convolve(chi: ScalarVolume, kernel: DipoleKernel, b0_tesla=None,
                    out_unit="ppm") -> ScalarVolume:
    """Field induced by a susceptibility distribution (ppm).

    out_unit "ppm" returns the relative field in ppm of B0; "Hz" multiplies by
    the central frequency gamma*B0 (requires `b0_tesla`).
    """
    if chi.grid != kernel.grid:
        raise GridMismatchError(f"volume grid {chi.grid} != kernel grid {kernel.grid}")
    if chi.unit != "ppm":
        raise ValueError(f"susceptibility must be in ppm, got {chi.unit!r}")
    out = fourier.convolve_spectrum(chi.data, kernel.spectrum, kernel.pad_shape)
    if out_unit == "ppm":
        return ScalarVolume(chi.grid, out, "ppm")
    if out_unit == "Hz":
        if b0_tesla is None:
            raise ValueError("Hz output requires b0_tesla")
        return ScalarVolume(chi.grid, out * (GAMMA_MHZ_PER_T * b0_tesla), "Hz")
    raise ValueError(f"out_unit must be 'ppm' or 'Hz', got {out_unit!r}")
