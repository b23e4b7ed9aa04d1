"""Image quality metrics on real (magnitude) images."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 200.0


def _pair(ref, test):
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref, test, peak=None):
    """10 log10(peak^2 / MSE) in dB, capped at 200 dB.

    ``peak`` defaults to the maximum of ``ref``.
    """
    ref, test = _pair(ref, test)
    if peak is None:
        peak = float(ref.max())
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((ref - test) ** 2))
    if mse < peak ** 2 * 1e-20:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak ** 2 / mse))


def nmse(ref, test):
    ref, test = _pair(ref, test)
    denom = float(np.sum(ref ** 2))
    if denom == 0:
        raise ValueError("NMSE undefined for an all-zero reference")
    return float(np.sum((test - ref) ** 2)) / denom


def ssim(ref, test, peak=None, window=8):
    """Mean structural similarity over all ``window x window`` windows.

    Local statistics are plain (unweighted) window means with population
    variances; C1 = (0.01 peak)^2, C2 = (0.03 peak)^2 with ``peak``
    defaulting to the maximum of ``ref``.
    """
    ref, test = _pair(ref, test)
    if ref.ndim != 2:
        raise ValueError("ssim expects 2-D images")
    if min(ref.shape) < window:
        raise ValueError(f"image {ref.shape} smaller than the {window}x{window} window")
    if peak is None:
        peak = float(ref.max())
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    a = sliding_window_view(ref, (window, window))
    b = sliding_window_view(test, (window, window))
    mu_a, mu_b = a.mean(axis=(-2, -1)), b.mean(axis=(-2, -1))
    da = a - mu_a[..., None, None]
    db = b - mu_b[..., None, None]
    var_a = (da * da).mean(axis=(-2, -1))
    var_b = (db * db).mean(axis=(-2, -1))
    cov = (da * db).mean(axis=(-2, -1))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
