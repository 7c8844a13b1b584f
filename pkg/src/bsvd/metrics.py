"""PSNR and SSIM quality metrics on [0, 255] intensity data."""

from __future__ import annotations

import numpy as np

PSNR_CAP_DB = 100.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    """10 log10(peak^2 / MSE) over all pixels; capped at 100 dB for
    identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(peak**2 / mse), PSNR_CAP_DB)


def _window_means(x: np.ndarray, w: int) -> np.ndarray:
    """Means of all w x w sliding windows via a summed-area table."""
    s = np.cumsum(np.cumsum(x, axis=0), axis=1)
    s = np.pad(s, ((1, 0), (1, 0)))
    tot = s[w:, w:] - s[:-w, w:] - s[w:, :-w] + s[:-w, :-w]
    return tot / (w * w)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 8, peak: float = 255.0) -> float:
    """Mean SSIM over sliding uniform windows.

    Inputs are single frames: (H, W) or (C, H, W) (channels averaged).
    C1 = (0.01 peak)^2, C2 = (0.03 peak)^2.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        return float(np.mean([ssim(ac, bc, window, peak) for ac, bc in zip(a, b)]))
    if a.ndim != 2:
        raise ValueError(f"expected a single frame, got ndim={a.ndim}")
    C1 = (0.01 * peak) ** 2
    C2 = (0.03 * peak) ** 2
    mu_a = _window_means(a, window)
    mu_b = _window_means(b, window)
    var_a = _window_means(a * a, window) - mu_a**2
    var_b = _window_means(b * b, window) - mu_b**2
    cov = _window_means(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a**2 + mu_b**2 + C1) * (var_a + var_b + C2)
    return float(np.mean(num / den))
