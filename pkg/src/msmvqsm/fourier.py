"""Zero-padded FFT convolution helpers.

All spectral operators in this package run on a padded grid to suppress
circular wrap-around: each axis is extended to the next 7-smooth length at
least `dims + 2 * margin`. Results are deterministic for a fixed worker
count; the worker count is process-global and set once (CLI `--threads`).
"""

from __future__ import annotations

import numpy as np
from scipy import fft as sfft

_workers = 1


def set_fft_workers(n):
    """Set the process-global FFT worker count (-1 = all cores)."""
    global _workers
    _workers = int(n)


def get_fft_workers():
    return _workers


def good_fft_size(n):
    """Smallest integer >= n whose prime factors are all <= 7."""
    n = int(n)
    while True:
        m = n
        for p in (2, 3, 5, 7):
            while m % p == 0:
                m //= p
        if m == 1:
            return n
        n += 1


def padded_shape(dims, margins):
    """Per-axis 7-smooth size covering dims plus a symmetric margin (voxels)."""
    return tuple(good_fft_size(d + 2 * m) for d, m in zip(dims, margins))


def embed(data, shape):
    """Zero-pad `data` into the corner of a larger array."""
    out = np.zeros(shape, dtype=data.dtype)
    out[tuple(slice(0, s) for s in data.shape)] = data
    return out


def crop(data, dims):
    return data[tuple(slice(0, d) for d in dims)]


def rfftn(x, shape=None):
    return sfft.rfftn(x, s=shape, workers=_workers)


def irfftn(x, shape):
    return sfft.irfftn(x, s=shape, workers=_workers)


def convolve_spectrum(data, spectrum, pad_shape):
    """Circular convolution of `data` (zero-padded) with a kernel spectrum.

    `spectrum` must be the rfftn of a kernel laid out on `pad_shape` with its
    origin at index 0. Returns an array of the input's shape.
    """
    f = sfft.rfftn(embed(data, pad_shape), workers=_workers)
    out = sfft.irfftn(f * spectrum, s=pad_shape, workers=_workers)
    return crop(out, data.shape)
