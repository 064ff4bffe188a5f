import math

import numpy as np
import pytest

from msmvqsm.bfr import pdf, vsharp
from msmvqsm.fieldmap import fit_field
from msmvqsm.kernels import dipole_convolve, make_dipole_kernel
from msmvqsm.phantom import (
    AcquisitionParams,
    build_phantom,
    default_phantom_spec,
    forward_field,
    synthesize_mgre,
)
from msmvqsm.volume import (
    MaskVolume,
    ScalarVolume,
    VoxelGrid,
    boundary_layer,
    erode_mask,
)


def sphere(dims, center, radius):
    grids = np.meshgrid(*[np.arange(n) for n in dims], indexing="ij")
    return sum((g - c) ** 2 for g, c in zip(grids, center)) <= radius**2


@pytest.fixture(scope="module")
def airbox():
    """Spherical mask in a box of air: harmonic-only interior field."""
    g = VoxelGrid((48, 48, 48), (1.0, 1.0, 1.0))
    mask = sphere(g.dims, (24, 24, 24), 16)
    chi = np.where(mask, 0.0, 9.4)
    k = make_dipole_kernel(g)
    b = dipole_convolve(ScalarVolume(g, chi, "ppm"), k, 3.0, "Hz")
    return g, MaskVolume(g, mask), b


@pytest.fixture(scope="module")
def mixed(airbox):
    """Air background plus an interior susceptibility sphere."""
    g, mask, b_air = airbox
    chi_in = np.where(sphere(g.dims, (28, 22, 24), 5), 0.1, 0.0) * mask.data
    k = make_dipole_kernel(g)
    b_in = dipole_convolve(ScalarVolume(g, chi_in, "ppm"), k, 3.0, "Hz")
    b_tot = ScalarVolume(g, b_air.data + b_in.data, "Hz")
    return g, mask, b_tot, b_in


def ones_weight(g):
    return ScalarVolume(g, np.ones(g.dims))


class TestPdf:
    def test_zero_field(self, airbox):
        g, mask, _ = airbox
        res = pdf(ScalarVolume(g, np.zeros(g.dims), "Hz"), mask, ones_weight(g), iters=10)
        assert np.abs(res.b_local.data).max() == 0.0

    def test_exterior_only_sources_removed(self, airbox):
        g, mask, b = airbox
        res = pdf(b, mask, ones_weight(g), iters=100)
        interior = erode_mask(mask, 3.0)
        ratio = (np.sqrt((res.b_local.data[interior.data] ** 2).mean())
                 / np.sqrt((b.data[mask.data] ** 2).mean()))
        assert ratio < 0.05

    def test_mixed_phantom_recovers_tissue_field(self, mixed):
        g, mask, b_tot, b_in = mixed
        res = pdf(b_tot, mask, ones_weight(g), iters=100)
        interior = erode_mask(mask, 3.0)
        cc = np.corrcoef(res.b_local.data[interior.data], b_in.data[interior.data])[0, 1]
        assert cc > 0.99

    def test_mask_preserved(self, airbox):
        g, mask, b = airbox
        res = pdf(b, mask, ones_weight(g), iters=5)
        assert res.mask_out is mask
        assert (res.b_local.data[~mask.data] == 0).all()

    def test_linearity(self, mixed):
        g, mask, b_tot, _ = mixed
        rng = np.random.default_rng(0)
        other = ScalarVolume(g, rng.standard_normal(g.dims), "Hz")
        w = ones_weight(g)
        lhs = pdf(ScalarVolume(g, 2.0 * b_tot.data + 0.5 * other.data, "Hz"),
                  mask, w, iters=40).b_local.data
        rhs = (2.0 * pdf(b_tot, mask, w, iters=40).b_local.data
               + 0.5 * pdf(other, mask, w, iters=40).b_local.data)
        scale = np.abs(lhs).max()
        assert np.abs(lhs - rhs).max() / scale < 0.05  # CG stop times differ slightly

    def test_iters_validated(self, airbox):
        g, mask, b = airbox
        with pytest.raises(ValueError):
            pdf(b, mask, ones_weight(g), iters=0)


class TestVsharp:
    def test_zero_field(self, airbox):
        g, mask, _ = airbox
        res = vsharp(ScalarVolume(g, np.zeros(g.dims), "Hz"), mask)
        assert np.abs(res.b_local.data).max() == 0.0

    def test_harmonic_only_removed(self, airbox):
        g, mask, b = airbox
        res = vsharp(b, mask, r_max_mm=5.0, r_min_mm=1.0, n_radii=5)
        ratio = (np.sqrt((res.b_local.data[res.mask_out.data] ** 2).mean())
                 / np.sqrt((b.data[mask.data] ** 2).mean()))
        assert ratio < 0.05

    def test_mask_eroded_by_r_min(self, airbox):
        g, mask, b = airbox
        res = vsharp(b, mask, r_max_mm=5.0, r_min_mm=1.0, n_radii=5)
        assert np.array_equal(res.mask_out.data, erode_mask(mask, 1.0).data)
        assert (res.b_local.data[~res.mask_out.data] == 0).all()

    def test_parameter_order_enforced(self, airbox):
        g, mask, b = airbox
        with pytest.raises(ValueError):
            vsharp(b, mask, r_max_mm=1.0, r_min_mm=5.0)
        with pytest.raises(ValueError):
            vsharp(b, mask, n_radii=1)

    def test_linearity(self, mixed):
        g, mask, b_tot, _ = mixed
        rng = np.random.default_rng(1)
        other = ScalarVolume(g, rng.standard_normal(g.dims), "Hz")
        lhs = vsharp(ScalarVolume(g, 2.0 * b_tot.data + 0.5 * other.data, "Hz"),
                     mask).b_local.data
        rhs = (2.0 * vsharp(b_tot, mask).b_local.data
               + 0.5 * vsharp(other, mask).b_local.data)
        assert np.abs(lhs - rhs).max() < 1e-8 * max(1.0, np.abs(lhs).max())


class TestResidualRealism:
    def test_pdf_residual_concentrates_at_boundary(self):
        # on the noisy desk phantom the leftover error must be boundary-heavy
        spec = default_phantom_spec()
        ph = build_phantom(spec)
        acq = AcquisitionParams(snr=50.0)
        fields = forward_field(ph.chi_true, ph.masks["brain"], acq)
        mgre = synthesize_mgre(ph.A, fields["b_total"], ph.r2star_true, acq, seed=3)
        fit = fit_field(mgre, ph.masks["brain"])
        res = pdf(fit.b_total, ph.masks["brain"], fit.W, iters=100)
        err = np.abs(res.b_local.data - fields["b_tissue"].data)
        near = boundary_layer(ph.masks["brain"], 5.0)
        far = erode_mask(ph.masks["brain"], 5.0)
        assert err[near.data].mean() >= 2.0 * err[far.data].mean()
