"""Multiscale Hessian vesselness (Frangi) for 3D volumes with anisotropic voxels."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

__all__ = ["frangi_vesselness"]


def _hessian(data, spacing, scale_mm):
    """Scale-normalized Hessian at one Gaussian scale, derivatives per mm."""
    sigma_vox = [scale_mm / s for s in spacing]
    h = np.empty(data.shape + (3, 3))
    for a in range(3):
        for b in range(a, 3):
            order = [0, 0, 0]
            order[a] += 1
            order[b] += 1
            d2 = ndimage.gaussian_filter(data, sigma_vox, order=tuple(order))
            d2 /= spacing[a] * spacing[b]
            h[..., a, b] = d2
            h[..., b, a] = d2
    return h * scale_mm**2


def frangi_vesselness(data, spacing, scales_mm, alpha=0.5, beta=0.5, gamma=None,
                      bright=True):
    """Maximum-over-scales tubularity score in [0, 1].

    Bright tubes have two large negative Hessian eigenvalues; the three
    classic ratios separate tubes from plates (alpha), from blobs (beta) and
    from noise (gamma, default half the max Hessian norm at each scale).
    """
    data = np.asarray(data, dtype=np.float64)
    best = np.zeros(data.shape)
    for scale in scales_mm:
        h = _hessian(data, spacing, scale)
        eigvals = np.linalg.eigvalsh(h)
        order = np.argsort(np.abs(eigvals), axis=-1)
        lam = np.take_along_axis(eigvals, order, axis=-1)
        l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]

        with np.errstate(divide="ignore", invalid="ignore"):
            ra = np.abs(l2) / np.abs(l3)
            rb = np.abs(l1) / np.sqrt(np.abs(l2 * l3))
        ra = np.nan_to_num(ra)
        rb = np.nan_to_num(rb)
        s = np.sqrt(l1**2 + l2**2 + l3**2)
        c = gamma if gamma is not None else 0.5 * s.max()
        if c <= 0:
            continue  # uniform input at this scale

        v = (
            (1.0 - np.exp(-(ra**2) / (2 * alpha**2)))
            * np.exp(-(rb**2) / (2 * beta**2))
            * (1.0 - np.exp(-(s**2) / (2 * c**2)))
        )
        if bright:
            v[(l2 > 0) | (l3 > 0)] = 0.0
        else:
            v[(l2 < 0) | (l3 < 0)] = 0.0
        best = np.maximum(best, v)
    return best
