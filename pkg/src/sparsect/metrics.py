"""PSNR, SSIM and display windowing."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 7
K1, K2 = 0.01, 0.03


def _pair(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def psnr(x, ref, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    x, ref = _pair(x, ref)
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def ssim(x, ref, data_range: float = 1.0, win: int = SSIM_WINDOW) -> float:
    """Mean SSIM over every fully contained ``win`` x ``win`` uniform window.

    Local (co)variances use the unbiased sample normalization, as in
    scikit-image's ``structural_similarity`` with its defaults.
    """
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    x, ref = _pair(x, ref)
    if x.ndim != 2 or min(x.shape) < win:
        raise ValueError(f"images must be 2-D and at least {win}x{win}, got {x.shape}")
    np_ = win * win
    cov_norm = np_ / (np_ - 1.0)

    def local_mean(a):
        return sliding_window_view(a, (win, win)).mean(axis=(-2, -1))

    ux, uy = local_mean(x), local_mean(ref)
    vx = cov_norm * (local_mean(x * x) - ux * ux)
    vy = cov_norm * (local_mean(ref * ref) - uy * uy)
    vxy = cov_norm * (local_mean(x * ref) - ux * uy)
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    num = (2 * ux * uy + c1) * (2 * vxy + c2)
    den = (ux * ux + uy * uy + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def hu_window(x, lo: float, hi: float) -> np.ndarray:
    """Affine map of [lo, hi] onto [0, 1], clamped."""
    if not hi > lo:
        raise ValueError("window upper bound must exceed lower bound")
    return np.clip((np.asarray(x, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
