import math

import numpy as np
import pytest

from msmvqsm.errors import ConvergenceError
from msmvqsm.inversion import (
    InversionInputs,
    MediParams,
    _ForwardModel,
    _grad,
    _grad_adjoint,
    build_gradient_mask,
    csf_stats,
    data_fidelity,
    medi_invert,
)
from msmvqsm.kernels import dipole_convolve, make_dipole_kernel
from msmvqsm.volume import MaskVolume, ScalarVolume, VoxelGrid, erode_mask


def sphere(dims, center, radius):
    grids = np.meshgrid(*[np.arange(n) for n in dims], indexing="ij")
    return sum((g - c) ** 2 for g, c in zip(grids, center)) <= radius**2


def ones_mask(g):
    return MaskVolume(g, np.ones(g.dims, bool))


class TestGradientMask:
    def test_constant_magnitude_all_penalized(self):
        g = VoxelGrid((12, 12, 12), (1.0, 1.0, 1.0))
        mag = ScalarVolume(g, np.full(g.dims, 2.0))
        mg = build_gradient_mask(mag, ones_mask(g), 0.3)
        assert mg.data.all()

    def test_sphere_edge_detected(self):
        g = VoxelGrid((24, 24, 24), (1.0, 1.0, 1.0))
        sph = sphere(g.dims, (12, 12, 12), 6)
        mag = ScalarVolume(g, np.where(sph, 1.0, 0.2))
        mg = build_gradient_mask(mag, ones_mask(g), 0.1)
        edges = ~mg.data
        grids = np.meshgrid(*[np.arange(24) - 12] * 3, indexing="ij")
        r = np.sqrt(sum(x**2 for x in grids))
        shell = (r > 4.0) & (r < 8.0)
        assert edges.sum() > 0
        assert (edges & ~shell).sum() == 0  # all edges lie on the surface shell

    def test_exact_edge_count(self):
        g = VoxelGrid((16, 16, 16), (1.0, 1.0, 1.0))
        rng = np.random.default_rng(0)
        mag = ScalarVolume(g, rng.random(g.dims))
        m = MaskVolume(g, rng.random(g.dims) > 0.3)
        frac = 0.25
        mg = build_gradient_mask(mag, m, frac)
        assert (~mg.data).sum() == math.ceil(frac * m.n_true)


class TestCsfStats:
    def test_constant(self):
        g = VoxelGrid((8, 8, 8), (1.0, 1.0, 1.0))
        m = np.zeros(g.dims, bool)
        m[2:5, 2:5, 2:5] = True
        chi = ScalarVolume(g, np.full(g.dims, 0.7), "ppm")
        assert csf_stats(chi, MaskVolume(g, m)) == pytest.approx(0.7)

    def test_two_halves(self):
        g = VoxelGrid((8, 8, 8), (1.0, 1.0, 1.0))
        m = np.zeros(g.dims, bool)
        m[0:4] = True
        data = np.where(np.arange(8)[:, None, None] < 2, 0.1, 0.3) * np.ones(g.dims)
        assert csf_stats(ScalarVolume(g, data, "ppm"), MaskVolume(g, m)) == pytest.approx(0.2)

    def test_empty_mask_message(self):
        g = VoxelGrid((8, 8, 8), (1.0, 1.0, 1.0))
        chi = ScalarVolume(g, np.zeros(g.dims), "ppm")
        with pytest.raises(ValueError, match="lambda2 = 0"):
            csf_stats(chi, MaskVolume(g, np.zeros(g.dims, bool)))


class TestFiniteDifferences:
    def test_grad_adjoint_consistency(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((7, 8, 9))
        y = rng.standard_normal((7, 8, 9))
        for ax, step in ((0, 1.0), (1, 0.9375), (2, 1.5)):
            lhs = (_grad(x, ax, step) * y).sum()
            rhs = (x * _grad_adjoint(y, ax, step)).sum()
            assert lhs == pytest.approx(rhs, rel=1e-12)


class TestDataTerm:
    def test_gradient_matches_finite_differences(self):
        # central differences over every voxel of an 8^3 random instance
        g = VoxelGrid((8, 8, 8), (1.0, 1.0, 1.0))
        rng = np.random.default_rng(3)
        for variant in ("medi", "medi-msmv"):
            model = _ForwardModel(g, variant, 3.0, 3.0, 0.0026)
            theta = 0.4 * rng.standard_normal(g.dims)
            wsq = 0.5 + rng.random(g.dims)
            chi = 0.1 * rng.standard_normal(g.dims)
            _, grad = data_fidelity(chi, theta, wsq, model)
            fd = np.zeros(g.dims)
            h = 1e-5
            for idx in np.ndindex(g.dims):
                e = np.zeros(g.dims)
                e[idx] = h
                cp, _ = data_fidelity(chi + e, theta, wsq, model)
                cm, _ = data_fidelity(chi - e, theta, wsq, model)
                fd[idx] = (cp - cm) / (2 * h)
            rel = np.linalg.norm(fd - grad) / np.linalg.norm(grad)
            assert rel < 1e-4, f"{variant}: rel={rel}"


@pytest.fixture(scope="module")
def two_sphere_instance():
    """Noiseless forward field of two spheres plus a CSF pocket."""
    g = VoxelGrid((32, 32, 32), (1.0, 1.0, 1.0))
    s1 = sphere(g.dims, (11, 16, 16), 4)
    s2 = sphere(g.dims, (22, 16, 16), 4)
    csf = sphere(g.dims, (16, 24, 16), 3)
    chi_true = 0.12 * s1 + 0.05 * s2
    k = make_dipole_kernel(g)
    fld = dipole_convolve(ScalarVolume(g, chi_true, "ppm"), k, 3.0, "Hz")
    mask = ones_mask(g)
    mag = ScalarVolume(g, 1.0 - 0.3 * s1 - 0.2 * s2 - 0.1 * csf)
    m_grad = build_gradient_mask(mag, mask, 0.3)
    return g, chi_true, fld, mask, m_grad, MaskVolume(g, csf), (s1, s2)


class TestMediInvert:
    def test_zero_field_gives_zero_chi(self, two_sphere_instance):
        g, _, _, mask, m_grad, csf, _ = two_sphere_instance
        inputs = InversionInputs(
            field=ScalarVolume(g, np.zeros(g.dims), "Hz"),
            w=ScalarVolume(g, np.ones(g.dims)),
            mask=mask, m_grad=m_grad, m_csf=csf, snr_scale=1e4)
        chi, _ = medi_invert(inputs, MediParams(variant="medi"))
        assert np.abs(chi.data).max() < 1e-3

    def test_noiseless_two_sphere_recovery(self, two_sphere_instance):
        g, chi_true, fld, mask, m_grad, csf, (s1, s2) = two_sphere_instance
        inputs = InversionInputs(
            field=fld, w=ScalarVolume(g, np.ones(g.dims)),
            mask=mask, m_grad=m_grad, m_csf=csf, snr_scale=1e4)
        chi, diag = medi_invert(inputs, MediParams(variant="medi"))
        # ROI-mean regression against truth over three regions
        from msmvqsm.metrics import roi_regression
        rois = [MaskVolume(g, s1), MaskVolume(g, s2),
                MaskVolume(g, sphere(g.dims, (16, 8, 16), 3))]
        slope, _, r = roi_regression(chi, ScalarVolume(g, chi_true, "ppm"), rois)
        assert 0.9 <= slope <= 1.1
        assert r > 0.99
        # zero-reference: CSF pulled to its true zero mean
        assert abs(chi.data[csf.data].mean()) < 0.01
        # diagnostics: total cost non-increasing
        costs = [d["cost_total"] for d in diag]
        assert all(b <= a * (1 + 1e-8) for a, b in zip(costs, costs[1:]))

    def test_support_contracts(self, two_sphere_instance):
        g, chi_true, fld, mask, m_grad, csf, _ = two_sphere_instance
        sub = MaskVolume(g, sphere(g.dims, (16, 16, 16), 13))
        w = ScalarVolume(g, np.ones(g.dims) * sub.data)
        field = ScalarVolume(g, fld.data * sub.data, "Hz")
        inputs = InversionInputs(field=field, w=w, mask=sub, m_grad=m_grad,
                                 m_csf=csf, snr_scale=1e3)
        p = MediParams(variant="medi-msmv", outer_iters=3)
        chi, _ = medi_invert(inputs, p)
        assert (chi.data[~sub.data] == 0).all()
        assert np.count_nonzero(chi.data[sub.data]) == sub.n_true

    def test_large_lambda1_flattens(self, two_sphere_instance):
        g, chi_true, fld, mask, m_grad, csf, _ = two_sphere_instance
        rng = np.random.default_rng(4)
        noisy = ScalarVolume(g, fld.data + 0.2 * rng.standard_normal(g.dims), "Hz")
        w = ScalarVolume(g, np.ones(g.dims))

        def tv_of(chi):
            total = 0.0
            for ax in range(3):
                total += np.abs(m_grad.data * _grad(chi.data, ax, 1.0)).sum()
            return total

        base = MediParams(variant="medi", lambda1=100.0, lambda2=0.0, outer_iters=6)
        stiff = MediParams(variant="medi", lambda1=1e6, lambda2=0.0, outer_iters=6)
        inputs = InversionInputs(field=noisy, w=w, mask=mask, m_grad=m_grad,
                                 m_csf=csf, snr_scale=1e3)
        chi_base, _ = medi_invert(inputs, base)
        chi_stiff, _ = medi_invert(inputs, stiff)
        assert tv_of(chi_base) / max(tv_of(chi_stiff), 1e-30) >= 100.0

    def test_variant_validation(self):
        with pytest.raises(ValueError):
            MediParams(variant="total-field")
        with pytest.raises(ValueError):
            MediParams(lambda1=0.0)
        with pytest.raises(ValueError):
            MediParams(edge_fraction=1.5)
