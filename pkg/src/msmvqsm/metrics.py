"""Quantitative evaluation: shadow score, ROI regression, Bland-Altman
agreement and the Wilcoxon signed-rank test (exact for small n)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError
from .volume import MaskVolume, ScalarVolume

__all__ = [
    "MetricsReport",
    "shadow_score",
    "roi_regression",
    "bland_altman",
    "wilcoxon_signed_rank",
]


@dataclass
class MetricsReport:
    shadow_scores: dict = field(default_factory=dict)       # method -> ppm^2
    regressions: list = field(default_factory=list)         # (pair, slope, intercept, r, n)
    bland_altman: list = field(default_factory=list)        # (pair, bias, lo, hi, n)
    wilcoxon: list = field(default_factory=list)            # (pair, statistic, p, n)


def shadow_score(chi: ScalarVolume, gray_mask: MaskVolume) -> float:
    """Susceptibility variance (population) within the gray matter mask, ppm^2.

    Slowly varying residual-field artifacts show up as excess variance in a
    compartment that should be homogeneous.
    """
    if chi.grid != gray_mask.grid:
        raise GridMismatchError("chi and gray mask grids differ")
    if not gray_mask.data.any():
        raise ValueError("shadow_score: empty gray matter mask")
    values = chi.data[gray_mask.data]
    return float(values.var())  # population variance (divide by n)


def roi_regression(chi_a: ScalarVolume, chi_b: ScalarVolume, roi_masks):
    """OLS of ROI means of `chi_a` against those of `chi_b`: (slope, intercept, r)."""
    if len(roi_masks) < 3:
        raise ValueError("need >= 3 ROIs for a regression")
    means_a, means_b = [], []
    for roi in roi_masks:
        if roi.grid != chi_a.grid or roi.grid != chi_b.grid:
            raise GridMismatchError("ROI mask grid differs from volumes")
        if not roi.data.any():
            raise ValueError("empty ROI mask")
        means_a.append(chi_a.data[roi.data].mean())
        means_b.append(chi_b.data[roi.data].mean())
    x = np.asarray(means_b)
    y = np.asarray(means_a)
    if np.ptp(x) == 0:
        raise ValueError("degenerate regression: all reference ROI means are equal")
    slope, intercept = np.polyfit(x, y, 1)
    r = float(np.corrcoef(x, y)[0, 1])
    return float(slope), float(intercept), r


def bland_altman(values_a, values_b):
    """Agreement of paired measurements: (bias, LoA_low, LoA_high).

    bias = mean(a - b); limits are bias +/- 1.96 sample standard deviations
    of the paired differences.
    """
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("need at least 2 pairs")
    d = a - b
    bias = float(d.mean())
    sd = float(d.std(ddof=1))
    return bias, bias - 1.96 * sd, bias + 1.96 * sd


def _signed_ranks(diffs):
    """Ranks of |d| with average ranks on ties; zeros must be removed already."""
    absd = np.abs(diffs)
    order = np.argsort(absd, kind="stable")
    ranks = np.empty(len(absd))
    sorted_abs = absd[order]
    i = 0
    while i < len(sorted_abs):
        j = i
        while j + 1 < len(sorted_abs) and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average of ranks i+1..j+1
        i = j + 1
    return ranks


def _exact_two_sided_p(ranks, w_plus):
    """Exact two-sided p by dynamic programming over all sign assignments.

    Doubling the (possibly half-integer) ranks makes every achievable rank
    sum an integer, so the distribution of 2*W+ is a table of counts.
    """
    scaled = np.round(2.0 * ranks).astype(int)
    total = int(scaled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for s in scaled:
        shifted = np.zeros_like(counts)
        shifted[s:] = counts[: total + 1 - s]
        counts = counts + shifted
    n_outcomes = 2.0 ** len(ranks)
    w2 = int(round(2.0 * w_plus))
    p_low = counts[: w2 + 1].sum() / n_outcomes
    p_high = counts[w2:].sum() / n_outcomes
    return min(1.0, 2.0 * min(p_low, p_high))


def wilcoxon_signed_rank(pairs_a, pairs_b):
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped, tied |differences| get average ranks. The
    p-value is exact (full sign-assignment distribution) for n <= 25 and a
    tie-corrected normal approximation beyond. Returns (W+, p).
    """
    a = np.asarray(pairs_a, dtype=np.float64)
    b = np.asarray(pairs_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    d = a - b
    d = d[d != 0]
    if d.size == 0:
        raise ValueError("all differences zero")
    if d.size < 5:
        raise ValueError(f"need >= 5 non-zero differences, got {d.size}")
    ranks = _signed_ranks(d)
    w_plus = float(ranks[d > 0].sum())
    n = d.size
    if n <= 25:
        p = _exact_two_sided_p(ranks, w_plus)
    else:
        mu = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
        z = (w_plus - mu) / math.sqrt(var)
        p = math.erfc(abs(z) / math.sqrt(2.0))
    return w_plus, float(p)
