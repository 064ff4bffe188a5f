"""Procedural numerical-brain phantom and multi-echo GRE signal synthesis.

The phantom is a painter's-order stack of geometric regions (ellipsoids,
spheres, axis-aligned tubes), each carrying a susceptibility value and a
tissue label. Outside the union of regions the volume is air with a large
positive susceptibility, which is what generates the background field that
the rest of the pipeline has to remove.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, PhantomSpecError
from .kernels import GAMMA_MHZ_PER_T, dipole_convolve, make_dipole_kernel
from .volume import MaskVolume, MultiEchoVolume, ScalarVolume, VoxelGrid

__all__ = [
    "LABELS",
    "Region",
    "PhantomSpec",
    "AcquisitionParams",
    "PhantomVolumes",
    "build_phantom",
    "default_phantom_spec",
    "forward_field",
    "synthesize_mgre",
    "roi_masks_from_labels",
]

LABELS = ("brain-tissue", "gray-matter", "CSF", "vein", "hemorrhage")
AIR_LABEL = "air-background"

# invented per-label defaults, overridable through PhantomSpec
DEFAULT_A_MAP = {
    "brain-tissue": 1.0,
    "gray-matter": 0.9,
    "CSF": 1.0,
    "vein": 0.7,
    "hemorrhage": 0.5,
    AIR_LABEL: 0.0,
}
DEFAULT_R2STAR_MAP = {  # 1/s
    "brain-tissue": 20.0,
    "gray-matter": 25.0,
    "CSF": 5.0,
    "vein": 120.0,
    "hemorrhage": 180.0,
    AIR_LABEL: 0.0,
}


@dataclass(frozen=True)
class Region:
    """One painted shape; later regions overwrite earlier ones."""

    shape: str                      # "ellipsoid" | "sphere" | "tube"
    center_mm: tuple[float, float, float]
    chi_ppm: float
    label: str
    semi_axes_mm: tuple[float, float, float] | None = None   # ellipsoid
    radius_mm: float | None = None                           # sphere / tube
    axis: str = "z"                                          # tube
    half_length_mm: float | None = None                      # tube

    def __post_init__(self):
        if self.label not in LABELS + (AIR_LABEL,):
            raise PhantomSpecError(
                f"unknown label {self.label!r}; expected one of {LABELS + (AIR_LABEL,)}"
            )
        if self.shape == "ellipsoid" and self.semi_axes_mm is None:
            raise PhantomSpecError("ellipsoid region needs semi_axes_mm")
        if self.shape == "sphere" and self.radius_mm is None:
            raise PhantomSpecError("sphere region needs radius_mm")
        if self.shape == "tube" and (self.radius_mm is None or self.half_length_mm is None):
            raise PhantomSpecError("tube region needs radius_mm and half_length_mm")
        if self.shape not in ("ellipsoid", "sphere", "tube"):
            raise PhantomSpecError(f"unknown region shape {self.shape!r}")
        if self.shape == "tube" and self.axis not in ("x", "y", "z"):
            raise PhantomSpecError(f"tube axis must be x/y/z, got {self.axis!r}")

    def extent_mm(self):
        """Axis-aligned bounding half-extents, for the inside-grid check."""
        if self.shape == "ellipsoid":
            return tuple(self.semi_axes_mm)
        if self.shape == "sphere":
            return (self.radius_mm,) * 3
        half = [self.radius_mm] * 3
        half["xyz".index(self.axis)] = self.half_length_mm
        return tuple(half)


@dataclass(frozen=True)
class PhantomSpec:
    grid: VoxelGrid
    regions: tuple[Region, ...]
    chi_background_ppm: float = 9.4
    a_map: dict = field(default_factory=lambda: dict(DEFAULT_A_MAP))
    r2star_map: dict = field(default_factory=lambda: dict(DEFAULT_R2STAR_MAP))
    roi_region_indices: tuple = ()   # regions usable as regression ROIs


@dataclass(frozen=True)
class AcquisitionParams:
    b0_tesla: float = 3.0
    te1_s: float = 2.6e-3
    dte_s: float = 2.6e-3
    n_echoes: int = 11
    snr: float = 50.0

    def __post_init__(self):
        if self.n_echoes < 2:
            raise ValueError("need >= 2 echoes for field/R2* fitting")
        if not (self.snr > 0):
            raise ValueError("SNR must be > 0")

    @property
    def echo_times(self):
        return tuple(self.te1_s + j * self.dte_s for j in range(self.n_echoes))

    @property
    def central_freq_hz(self):
        return GAMMA_MHZ_PER_T * 1e6 * self.b0_tesla

    @property
    def hz_per_ppm(self):
        return GAMMA_MHZ_PER_T * self.b0_tesla


@dataclass(frozen=True)
class PhantomVolumes:
    chi_true: ScalarVolume          # ppm, includes exterior air value
    masks: dict                     # brain / gray / CSF / vein / hemorrhage
    A: ScalarVolume                 # relative magnitude, 0..1
    r2star_true: ScalarVolume       # 1/s
    labels: np.ndarray              # region index per voxel, -1 outside


def _voxel_coords(grid):
    return [o + np.arange(n) * s for o, n, s in zip(grid.origin, grid.dims, grid.spacing)]


def _region_mask(region, grid):
    cx, cy, cz = region.center_mm
    x, y, z = _voxel_coords(grid)
    X = (x - cx)[:, None, None]
    Y = (y - cy)[None, :, None]
    Z = (z - cz)[None, None, :]
    if region.shape == "ellipsoid":
        a, b, c = region.semi_axes_mm
        return (X / a) ** 2 + (Y / b) ** 2 + (Z / c) ** 2 <= 1.0
    if region.shape == "sphere":
        return X**2 + Y**2 + Z**2 <= region.radius_mm**2
    # tube
    r2 = region.radius_mm**2
    if region.axis == "x":
        return (Y**2 + Z**2 <= r2) & (np.abs(X) <= region.half_length_mm)
    if region.axis == "y":
        return (X**2 + Z**2 <= r2) & (np.abs(Y) <= region.half_length_mm)
    return (X**2 + Y**2 <= r2) & (np.abs(Z) <= region.half_length_mm)


def build_phantom(spec: PhantomSpec) -> PhantomVolumes:
    """Paint the regions onto the grid and derive all ground-truth volumes."""
    grid = spec.grid
    lo = [o - 0.5 * s for o, s in zip(grid.origin, grid.spacing)]
    hi = [o + (n - 0.5) * s for o, n, s in zip(grid.origin, grid.dims, grid.spacing)]
    for i, region in enumerate(spec.regions):
        ext = region.extent_mm()
        for ax in range(3):
            if region.center_mm[ax] - ext[ax] < lo[ax] or region.center_mm[ax] + ext[ax] > hi[ax]:
                raise PhantomSpecError(
                    f"region {i} ({region.label}) extends outside the grid on axis {ax}"
                )

    labels = np.full(grid.dims, -1, dtype=np.int16)
    for i, region in enumerate(spec.regions):
        labels[_region_mask(region, grid)] = i

    chi = np.full(grid.dims, spec.chi_background_ppm, dtype=np.float64)
    a_vol = np.full(grid.dims, spec.a_map[AIR_LABEL], dtype=np.float64)
    r2s = np.full(grid.dims, spec.r2star_map[AIR_LABEL], dtype=np.float64)
    brain = np.zeros(grid.dims, dtype=bool)
    label_masks = {name: np.zeros(grid.dims, dtype=bool) for name in LABELS}
    for i, region in enumerate(spec.regions):
        sel = labels == i
        chi[sel] = region.chi_ppm
        a_vol[sel] = spec.a_map[region.label]
        r2s[sel] = spec.r2star_map[region.label]
        if region.label != AIR_LABEL:
            brain |= sel
            label_masks[region.label] |= sel

    masks = {
        "brain": MaskVolume(grid, brain),
        "gray": MaskVolume(grid, label_masks["gray-matter"]),
        "CSF": MaskVolume(grid, label_masks["CSF"]),
        "vein": MaskVolume(grid, label_masks["vein"]),
        "hemorrhage": MaskVolume(grid, label_masks["hemorrhage"]),
    }
    return PhantomVolumes(
        chi_true=ScalarVolume(grid, chi, "ppm"),
        masks=masks,
        A=ScalarVolume(grid, a_vol, "dimensionless"),
        r2star_true=ScalarVolume(grid, r2s, "1/s"),
        labels=labels,
    )


def default_phantom_spec(dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0),
                         buffered=False) -> PhantomSpec:
    """Desk-scale numerical brain: cortical gray shells, CSF ventricle, four
    subcortical gray nuclei (regression ROIs), a cortical vein, a superficial
    hemorrhage and sulcus-like mask notches inside an ellipsoidal brain,
    wrapped in a scalp envelope with a diamagnetic skull shell.

    By default three paranasal-style air pockets touch the brain surface, so
    the phase gradient there exceeds the sampling limit and the estimated
    field keeps a realistic rim of residual background error - the input the
    boundary filter exists for. With `buffered=True` the contact pockets are
    dropped and every air source stays a scalp-thickness away, making the
    field estimation chain exact; use that variant to validate estimators in
    isolation."""
    grid = VoxelGrid(dims, spacing)
    c = tuple((n - 1) / 2.0 * s for n, s in zip(dims, spacing))
    cx, cy, cz = c[0] + 0.5, c[1] + 0.5, c[2] - 1.5  # slight offsets, integer-ish centres

    # proportional geometry: distances quoted in 64-grid voxels, scaled per axis
    fx, fy, fz = (dims[i] / 64.0 * spacing[i] for i in range(3))

    def scaled(v):
        return (v[0] * fx, v[1] * fy, v[2] * fz)

    def at(dx, dy, dz):
        return (cx + dx * fx, cy + dy * fy, cz + dz * fz)

    envelope = (
        # scalp envelope: sources outside the brain mask, water-like chi
        Region("ellipsoid", (cx, cy, cz), 0.00, "air-background",
               semi_axes_mm=scaled((28, 31, 26))),
        # diamagnetic skull shell two voxels off the brain surface
        Region("ellipsoid", (cx, cy, cz), -2.00, "air-background",
               semi_axes_mm=scaled((26.5, 29.5, 24.5))),
        Region("ellipsoid", (cx, cy, cz), 0.00, "air-background",
               semi_axes_mm=scaled((25, 28, 23))),
    )
    if not buffered:
        envelope = envelope + (
            # air pockets in contact with the brain surface (painted before
            # the brain, which clips them back to the exterior)
            Region("sphere", at(24.5, 10, 0), 9.40, "air-background", radius_mm=4.0 * fx),
            Region("sphere", at(0, -28.5, 0), 9.40, "air-background", radius_mm=4.0 * fy),
            Region("sphere", at(0, 0, 23.5), 9.40, "air-background", radius_mm=4.0 * fz),
        )
    core = (
        Region("ellipsoid", (cx, cy, cz), 0.00, "brain-tissue", semi_axes_mm=scaled((23, 26, 21))),
        # outer cortical gray shell: gray ellipsoid with a tissue refill
        Region("ellipsoid", (cx, cy, cz), 0.05, "gray-matter", semi_axes_mm=scaled((20, 23, 18))),
        Region("ellipsoid", (cx, cy, cz), 0.00, "brain-tissue", semi_axes_mm=scaled((18, 21, 16))),
        # deeper gray shell
        Region("ellipsoid", (cx, cy, cz), 0.05, "gray-matter", semi_axes_mm=scaled((16, 18, 14))),
        Region("ellipsoid", (cx, cy, cz), 0.00, "brain-tissue", semi_axes_mm=scaled((14.5, 16.5, 12.5))),
        # CSF ventricle
        Region("ellipsoid", (cx, cy, cz), 0.00, "CSF", semi_axes_mm=scaled((6, 9, 5))),
        # subcortical gray-matter nuclei (regression ROIs)
        Region("sphere", at(10.5, 0, 0), 0.19, "gray-matter", radius_mm=4.0 * fx),
        Region("sphere", at(-10.5, 0, 0), 0.09, "gray-matter", radius_mm=4.0 * fx),
        Region("sphere", at(0, 12, 0), 0.07, "gray-matter", radius_mm=4.0 * fy),
        Region("sphere", at(0, -12, 0), 0.03, "gray-matter", radius_mm=4.0 * fy),
        # cortical vein running along z, touching the brain surface
        Region("tube", at(20, 0, 0), 0.30, "vein", radius_mm=2.0 * fx,
               axis="z", half_length_mm=12.0 * fz),
        # superficial hemorrhage
        Region("sphere", at(0, 20, 0), 1.00, "hemorrhage", radius_mm=3.0 * fy),
        # sulcus-like notches carved out of the mask (water chi, background label)
        Region("ellipsoid", at(22, 8, 4), 0.00, "air-background",
               semi_axes_mm=scaled((4, 4, 5))),
        Region("ellipsoid", at(-12, -19, -8), 0.00, "air-background",
               semi_axes_mm=scaled((5, 5, 5))),
    )
    offset = len(envelope)
    return PhantomSpec(
        grid=grid,
        regions=envelope + core,
        roi_region_indices=tuple(offset + i for i in (6, 7, 8, 9)),
    )


def roi_masks_from_labels(labels, grid, region_indices):
    return [MaskVolume(grid, labels == i) for i in region_indices]


def forward_field(chi_total: ScalarVolume, brain_mask: MaskVolume,
                  acq: AcquisitionParams):
    """Split the induced field into tissue and background parts (Hz).

    Tissue field comes from sources inside the brain mask, background from
    everything outside; their sum is the total field by construction.
    """
    if chi_total.grid != brain_mask.grid:
        raise GridMismatchError("chi and mask grids differ")
    kernel = make_dipole_kernel(chi_total.grid)
    m = brain_mask.data
    chi_in = ScalarVolume(chi_total.grid, chi_total.data * m, "ppm")
    chi_out = ScalarVolume(chi_total.grid, chi_total.data * ~m, "ppm")
    b_tissue = dipole_convolve(chi_in, kernel, acq.b0_tesla, out_unit="Hz")
    b_background = dipole_convolve(chi_out, kernel, acq.b0_tesla, out_unit="Hz")
    b_total = ScalarVolume(chi_total.grid, b_tissue.data + b_background.data, "Hz")
    return {"b_total": b_total, "b_tissue": b_tissue, "b_background": b_background}


def synthesize_mgre(A: ScalarVolume, b_total: ScalarVolume, r2star: ScalarVolume,
                    acq: AcquisitionParams, seed: int) -> MultiEchoVolume:
    """Multi-gradient-echo signal A * exp(-R2* TE) * exp(-2 pi i b TE) + noise.

    Complex Gaussian noise with per-component standard deviation 1/SNR is
    drawn independently per echo from a seeded generator, so identical
    (inputs, seed) give bit-identical output. Pass snr=inf for noiseless data.
    """
    for other in (b_total, r2star):
        if other.grid != A.grid:
            raise GridMismatchError("signal model volumes must share one grid")
    if b_total.unit == "Hz":
        freq = b_total.data
    elif b_total.unit in ("ppm", "dimensionless"):
        freq = b_total.data * acq.hz_per_ppm
    else:
        raise ValueError(f"unsupported field unit {b_total.unit!r}")

    rng = np.random.default_rng(seed)
    tes = acq.echo_times
    data = np.empty(A.grid.dims + (len(tes),), dtype=np.complex128)
    for j, te in enumerate(tes):
        clean = A.data * np.exp(-r2star.data * te) * np.exp(-2j * math.pi * freq * te)
        if math.isinf(acq.snr):
            data[..., j] = clean
        else:
            sigma = 1.0 / acq.snr
            noise = rng.normal(0.0, sigma, A.grid.dims) + 1j * rng.normal(0.0, sigma, A.grid.dims)
            data[..., j] = clean + noise
    return MultiEchoVolume(A.grid, tes, data)
