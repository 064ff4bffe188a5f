"""Total-field, noise-weight and R2* estimation from multi-echo complex data.

The phase chain is: spatially unwrap the first echo-pair phase difference
(FFT-free Poisson solve with Neumann boundaries via DCT), use the resulting
coarse field to resolve the per-echo 2pi ambiguities, then fit (field,
receiver phase) per voxel by magnitude-weighted least squares. R2* comes from
the ARLO three-point recursion on the echo magnitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .volume import MaskVolume, MultiEchoVolume, ScalarVolume

__all__ = [
    "FieldFitResult",
    "R2StarResult",
    "unwrap_phase",
    "fit_field",
    "fit_r2star",
]

TWO_PI = 2.0 * math.pi


MAX_EFFECTIVE_SNR = 1e4  # cap for (near-)noiseless data


@dataclass(frozen=True)
class FieldFitResult:
    b_total: ScalarVolume       # Hz
    W: ScalarVolume             # data-fidelity weight, mean 1 over the mask
    residual: ScalarVolume      # per-voxel fit RMS, Hz
    phi0: ScalarVolume          # receiver phase, rad
    effective_snr: float        # mean echo-combined SNR divided out of W


@dataclass(frozen=True)
class R2StarResult:
    r2star: ScalarVolume        # 1/s, clamped at 0
    valid: MaskVolume           # False where magnitude vanished
    method: str                 # "arlo" or "loglinear"


def _wrap(x):
    return (x + math.pi) % TWO_PI - math.pi


def unwrap_phase(phase: ScalarVolume, mask: MaskVolume) -> ScalarVolume:
    """Laplacian phase unwrapping via a Neumann (DCT-II) Poisson solve.

    The Laplacian of the true phase is estimated from wrapped neighbour
    differences restricted to links inside the mask, then inverted in the
    cosine basis. The result equals the input modulo 2 pi up to a spatially
    smooth harmonic correction; the global constant is restored by circular
    averaging against the input over the mask.
    """
    if not mask.data.any():
        raise ValueError("unwrap_phase: empty mask")
    grid = phase.grid
    phi = phase.data
    m = mask.data

    rho = np.zeros(grid.dims)
    for ax, step in enumerate(grid.spacing):
        fwd = _wrap(np.diff(phi, axis=ax))
        both_in = np.logical_and(
            np.take(m, range(0, grid.dims[ax] - 1), axis=ax),
            np.take(m, range(1, grid.dims[ax]), axis=ax),
        )
        fwd = fwd * both_in
        pad = [(0, 0)] * 3
        pad[ax] = (0, 1)
        div = np.pad(fwd, pad)           # delta_a(r), zero flux at the far face
        pad[ax] = (1, 0)
        div = div - np.pad(fwd, pad)     # minus delta_a(r - e_a)
        rho += div / step**2

    coeff = sfft.dctn(rho, type=2)
    eig = np.zeros(grid.dims)
    for ax, (n, step) in enumerate(zip(grid.dims, grid.spacing)):
        k = np.arange(n).reshape([-1 if a == ax else 1 for a in range(3)])
        eig = eig + 2.0 * (np.cos(math.pi * k / n) - 1.0) / step**2
    eig[0, 0, 0] = 1.0  # placeholder; the DC coefficient is pinned to 0 below
    coeff = coeff / eig
    coeff[0, 0, 0] = 0.0
    psi = sfft.idctn(coeff, type=2)

    offset = np.angle(np.mean(np.exp(1j * (phi - psi))[m]))
    return ScalarVolume(grid, psi + offset, phase.unit)


def _weighted_linefit(phases, weights, tes):
    """Per-voxel weighted LS of phase against -2*pi*TE with free intercept."""
    x = -TWO_PI * np.asarray(tes)
    sw = weights.sum(axis=-1)
    swx = (weights * x).sum(axis=-1)
    swxx = (weights * x**2).sum(axis=-1)
    swy = (weights * phases).sum(axis=-1)
    swxy = (weights * x * phases).sum(axis=-1)
    det = sw * swxx - swx**2
    with np.errstate(divide="ignore", invalid="ignore"):
        b = (sw * swxy - swx * swy) / det
        phi0 = (swy - b * swx) / sw
    bad = ~np.isfinite(b)
    b = np.where(bad, 0.0, b)
    phi0 = np.where(~np.isfinite(phi0), 0.0, phi0)
    return b, phi0, sw


def fit_field(echoes: MultiEchoVolume, mask: MaskVolume, n_passes: int = 2) -> FieldFitResult:
    """Estimate the total field (Hz), receiver phase and fidelity weight W.

    The spatially unwrapped first-pair phase difference only has to be
    accurate to half the echo aliasing bandwidth 1/(2*dTE): for uniformly
    spaced echoes it just selects the 2 pi branch of the per-voxel mean
    echo-to-echo phase increment, which carries the precision. W is the
    echo-combined magnitude (root sum of squares), zeroed outside the mask
    and where the signal vanishes, normalized to unit mean over the mask.
    """
    if echoes.n_echoes < 2:
        raise ValueError("fit_field needs >= 2 echoes")
    grid = echoes.grid
    tes = np.asarray(echoes.echo_times)
    mag = np.abs(echoes.data)
    theta = np.angle(echoes.data)
    weights = mag**2

    # coarse field from the first echo pair: spatial unwrap plus one
    # residual-refinement pass to shrink the harmonic solve error
    pair = np.angle(echoes.data[..., 1] * np.conj(echoes.data[..., 0]))
    dpsi = unwrap_phase(ScalarVolume(grid, pair, "dimensionless"), mask).data
    dpsi = dpsi + unwrap_phase(ScalarVolume(grid, _wrap(pair - dpsi), "dimensionless"), mask).data
    dte = tes[1] - tes[0]
    b = -dpsi / (TWO_PI * dte)

    uniform = len(tes) >= 3 and np.allclose(np.diff(tes), dte, rtol=1e-6)
    if uniform:
        # magnitude-weighted mean echo-to-echo phasor; its angle is the true
        # increment mod 2 pi, branch-selected by the coarse field
        inc_phasor = (echoes.data[..., 1:] * np.conj(echoes.data[..., :-1])).sum(axis=-1)
        inc = np.angle(inc_phasor)
        n_branch = np.round((-TWO_PI * b * dte - inc) / TWO_PI)
        b = -(inc + TWO_PI * n_branch) / (TWO_PI * dte)
    phi0 = np.angle(echoes.data[..., 0] * np.exp(2j * math.pi * b * tes[0]))

    for _ in range(n_passes):
        pred = phi0[..., None] - TWO_PI * b[..., None] * tes
        phases = pred + _wrap(theta - pred)  # resolve per-echo 2 pi ambiguity
        b, phi0, sw = _weighted_linefit(phases, weights, tes)

    zero_sig = sw <= 0
    b = np.where(zero_sig, 0.0, b)
    phi0 = np.where(zero_sig, 0.0, phi0)

    pred = phi0[..., None] - TWO_PI * b[..., None] * tes
    err_hz = (phases - pred) / (TWO_PI * tes)
    with np.errstate(divide="ignore", invalid="ignore"):
        resid = np.sqrt((weights * err_hz**2).sum(axis=-1) / sw)
    resid = np.where(zero_sig, 0.0, resid)

    # per-component noise from the magnitude-weighted phase residuals:
    # each m_j * e_j is about N(0, sigma) at high SNR, with 2 dof absorbed.
    # Voxels whose own residual exceeds the global level (aliased rim, flow)
    # get proportionally less weight: W is the per-voxel fit precision.
    inside = mask.data & ~zero_sig
    n_echo = len(tes)
    sigma = 0.0
    sigma_voxel = None
    if n_echo > 2 and inside.any():
        resid_rad_sq = (weights * (phases - pred) ** 2).sum(axis=-1)
        sigma = math.sqrt(resid_rad_sq[inside].mean() / (n_echo - 2))
        if sigma < 1e-9:
            sigma = 0.0  # numerically noiseless input
        else:
            sigma_voxel = np.sqrt(resid_rad_sq / (n_echo - 2))
    w_raw = np.sqrt((mag**2).sum(axis=-1))
    if sigma > 0:
        w_raw = w_raw / np.maximum(sigma_voxel, sigma)
    w_raw[~inside] = 0.0
    norm_w = w_raw[mask.data].mean()
    w = w_raw / norm_w if norm_w > 0 else w_raw

    norm_mag = np.sqrt((mag**2).sum(axis=-1))[mask.data].mean()
    eff_snr = norm_mag / sigma if sigma > 0 else MAX_EFFECTIVE_SNR
    eff_snr = float(min(eff_snr, MAX_EFFECTIVE_SNR))

    return FieldFitResult(
        b_total=ScalarVolume(grid, b, "Hz"),
        W=ScalarVolume(grid, w, "dimensionless"),
        residual=ScalarVolume(grid, resid, "Hz"),
        phi0=ScalarVolume(grid, phi0, "dimensionless"),
        effective_snr=eff_snr,
    )


def _loglinear_r2star(mag, tes):
    safe = np.maximum(mag, 1e-300)
    y = np.log(safe)
    x = np.asarray(tes)
    n = len(x)
    sx, sxx = x.sum(), (x**2).sum()
    sy = y.sum(axis=-1)
    sxy = (y * x).sum(axis=-1)
    slope = (n * sxy - sx * sy) / (n * sxx - sx**2)
    return -slope


def fit_r2star(echoes: MultiEchoVolume, mask: MaskVolume) -> R2StarResult:
    """Monoexponential decay rate of the echo magnitudes.

    Uses the ARLO three-point recursion when >= 3 equally spaced echoes are
    available, otherwise falls back to a log-linear fit (recorded in
    `method`). Negative estimates are clamped to zero; voxels with vanishing
    magnitude are zeroed and flagged invalid.
    """
    grid = echoes.grid
    tes = np.asarray(echoes.echo_times)
    mag = np.abs(echoes.data)

    uniform = len(tes) >= 3 and np.allclose(np.diff(tes), tes[1] - tes[0], rtol=1e-6)
    if uniform:
        dte = tes[1] - tes[0]
        m0, m1, m2 = mag[..., :-2], mag[..., 1:-1], mag[..., 2:]
        alpha = (dte / 3.0) * (m0 + 4.0 * m1 + m2)
        beta = m0 - m2
        s_ab = (alpha * beta).sum(axis=-1)
        s_bb = (beta * beta).sum(axis=-1)
        s_aa = (alpha * alpha).sum(axis=-1)
        num = s_ab + (dte / 3.0) * s_bb
        den = s_aa + (dte / 3.0) * s_ab
        with np.errstate(divide="ignore", invalid="ignore"):
            r2 = num / den
        r2 = np.where(np.isfinite(r2), r2, 0.0)
        method = "arlo"
    else:
        r2 = _loglinear_r2star(mag, tes)
        method = "loglinear"

    valid = mag.max(axis=-1) > 0
    r2 = np.where(valid, np.maximum(r2, 0.0), 0.0)
    return R2StarResult(
        r2star=ScalarVolume(grid, r2, "1/s"),
        valid=MaskVolume(grid, valid),
        method=method,
    )
