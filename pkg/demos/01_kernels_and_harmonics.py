"""Spherical mean value and dipole kernels: why the boundary matters.

The background field inside a region of interest is generated by sources
outside it, which makes it harmonic there. Two classical consequences drive
everything in this package: the field equals its own spherical mean (so a
mean-value filter annihilates it), and its extrema sit on the region
boundary (so that's where leftovers hide). This script builds both kernels
and checks the two properties numerically.
"""

import numpy as np

from msmvqsm import (
    MaskVolume,
    ScalarVolume,
    VoxelGrid,
    boundary_layer,
    dipole_convolve,
    make_dipole_kernel,
    make_spherical_kernel,
    minimal_radius,
    smv_apply,
)
from msmvqsm.volume import distance_to_outside

grid = VoxelGrid((64, 64, 64), (1.0, 1.0, 1.0))
dipole = make_dipole_kernel(grid)

# a compact susceptibility source well outside a spherical region of interest
x, y, z = np.meshgrid(*[np.arange(64)] * 3, indexing="ij")
roi = (x - 36) ** 2 + (y - 32) ** 2 + (z - 32) ** 2 <= 15**2
chi = np.zeros(grid.dims)
chi[6:9, 30:34, 30:34] = 5.0  # ppm
field = dipole_convolve(ScalarVolume(grid, chi, "ppm"), dipole, b0_tesla=3.0, out_unit="Hz")
print(f"field from the exterior source: {field.data[roi].min():+.2f} "
      f"to {field.data[roi].max():+.2f} Hz inside the ROI")

# 1) spherical mean value: averaging over a sphere reproduces the field
radius = 4.0
smv = make_spherical_kernel(grid, radius)
averaged = smv_apply(field, smv)
mask = MaskVolume(grid, roi)
interior = roi & (distance_to_outside(mask) > radius + 2.0)
rel_err = (np.abs(averaged.data - field.data)[interior].max()
           / np.abs(field.data[roi]).max())
print(f"mean-value property: max interior deviation {rel_err:.2e} (relative)")

# 2) maximum principle: the largest magnitude sits on the boundary shell
shell = boundary_layer(mask, np.sqrt(3.0))
magnitude = np.abs(np.where(roi, field.data, 0.0))
peak = np.unravel_index(np.argmax(magnitude), magnitude.shape)
print(f"peak |field| at {peak}, on the boundary shell: {bool(shell.data[peak])}")

# 3) the smallest usable kernel: half a voxel plus a safety margin
r2 = minimal_radius(grid)
tiny = make_spherical_kernel(grid, r2)
print(f"minimal radius {r2:.2f} mm; kernel couples "
      f"{(np.fft.irfftn(tiny.spectrum, tiny.pad_shape) > 1e-12).sum()} voxels")

# 4) uniform susceptibility produces no field at all (k-space convention)
uniform = ScalarVolume(grid, np.full(grid.dims, 0.4), "ppm")
print(f"uniform chi -> max |field| = {np.abs(dipole_convolve(uniform, dipole).data).max():.1e}")
