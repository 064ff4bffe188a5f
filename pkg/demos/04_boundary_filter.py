"""The boundary residual filter step by step.

A known tissue field is contaminated with a harmonic field from a source
just outside the mask - the textbook picture of what background removal
leaves behind. The filter high-passes the field, derives a detection
threshold from the smallest usable kernel, excludes vessels found in the
R2* map, and iteratively suppresses super-threshold boundary voxels. The
whole mask survives: no erosion.
"""

import numpy as np

from msmvqsm import (
    MaskVolume,
    MsmvParams,
    ScalarVolume,
    VoxelGrid,
    dipole_convolve,
    initial_filter,
    make_dipole_kernel,
    msmv_filter,
)
from msmvqsm.volume import boundary_layer, distance_to_outside

grid = VoxelGrid((48, 48, 48), (1.0, 1.0, 1.0))
x, y, z = np.meshgrid(*[np.arange(48)] * 3, indexing="ij")
mask = MaskVolume(grid, (x - 24) ** 2 + (y - 24) ** 2 + (z - 24) ** 2 <= 17**2)
dipole = make_dipole_kernel(grid)

inner_sphere = ((x - 28) ** 2 + (y - 24) ** 2 + (z - 24) ** 2 <= 5**2) & mask.data
b_tissue = dipole_convolve(ScalarVolume(grid, 0.08 * inner_sphere, "ppm"), dipole, 3.0, "Hz")

contamination = np.zeros(grid.dims)
contamination[5:8, 22:27, 22:27] = 40.0  # strong source just outside the mask
b_resid = dipole_convolve(ScalarVolume(grid, contamination, "ppm"), dipole, 3.0, "Hz")
b_hat = ScalarVolume(grid, (b_tissue.data + b_resid.data) * mask.data, "Hz")

params = MsmvParams()  # r1 = 5 mm, t_min = 0.3 Hz at 3 T, i_max = 5
r2star = ScalarVolume(grid, 20.0 * mask.data, "1/s")
filtered, trace = msmv_filter(b_hat, mask, r2star, params, b0_tesla=3.0)

print(f"threshold t = {trace.threshold_hz:.2f} Hz (minimal kernel r2 = {trace.r2_mm:.2f} mm)")
print(f"flagged voxels per iteration: {list(trace.mask_sizes)} "
      f"-> {trace.iterations} filtering passes")

target = initial_filter(ScalarVolume(grid, b_tissue.data * mask.data, "Hz"), mask, params)
start = initial_filter(b_hat, mask, params)
rim = boundary_layer(mask, params.r1_mm)
before = np.abs(start.data - target.data)[rim.data].mean()
after = np.abs(filtered.data - target.data)[rim.data].mean()
print(f"boundary-layer error vs clean tissue field: "
      f"{before:.3f} Hz before, {after:.3f} Hz after ({before / after:.1f}x lower)")

deep = mask.data & (distance_to_outside(mask) > params.r1_mm + trace.r2_mm + 1.0)
unchanged = np.array_equal(filtered.data[deep], (start.data * mask.data)[deep])
print(f"deep interior bit-identical to the high-passed input: {unchanged}")
print(f"output support equals the full mask: "
      f"{np.count_nonzero(filtered.data[mask.data]) == mask.n_true} (zero erosion)")
