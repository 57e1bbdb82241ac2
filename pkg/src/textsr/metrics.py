"""Fidelity metrics on the luma channel.

PSNR and SSIM are computed on Y of the BT.601 full-range YCbCr transform
(Y = 0.299 R + 0.587 G + 0.114 B on the 0..255 scale).  SSIM uses a
uniform 8x8 window with stride 1 and the standard stabilisation constants
C1 = (0.01 * 255)^2, C2 = (0.03 * 255)^2; window statistics are population
moments (mean over the window).  Identical images report PSNR as the
infinity sentinel and SSIM as 1.0.

No-reference perceptual metrics are exposed only as a plug-in registry
that reports "unavailable" unless a scorer is registered.
"""

from __future__ import annotations

import math

import numpy as np

SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2

PSNR_INFINITE = float("inf")


def luma_bt601(image: np.ndarray) -> np.ndarray:
    """Y channel (0..255 scale) of an (H, W, 3) image; uint8 or float."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    return 0.299 * image[..., 0] + 0.587 * image[..., 1] + 0.114 * image[..., 2]


def _check_pair(ref: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref, test = np.asarray(ref), np.asarray(test)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {test.shape}")
    return luma_bt601(ref), luma_bt601(test)


def psnr(ref: np.ndarray, test: np.ndarray) -> float:
    """Luma PSNR in dB; identical inputs return the infinity sentinel."""
    yr, yt = _check_pair(ref, test)
    mse = float(np.mean((yr - yt) ** 2))
    if mse == 0.0:
        return PSNR_INFINITE
    return 10.0 * math.log10(255.0 ** 2 / mse)


def ssim(ref: np.ndarray, test: np.ndarray, window: int = SSIM_WINDOW) -> float:
    """Mean local SSIM over all stride-1 uniform windows on luma."""
    yr, yt = _check_pair(ref, test)
    h, w = yr.shape
    if h < window or w < window:
        raise ValueError(f"image {h}x{w} smaller than the {window}x{window} window")
    win_r = np.lib.stride_tricks.sliding_window_view(yr, (window, window))
    win_t = np.lib.stride_tricks.sliding_window_view(yt, (window, window))
    mu_r = win_r.mean(axis=(-1, -2))
    mu_t = win_t.mean(axis=(-1, -2))
    var_r = (win_r ** 2).mean(axis=(-1, -2)) - mu_r ** 2
    var_t = (win_t ** 2).mean(axis=(-1, -2)) - mu_t ** 2
    cov = (win_r * win_t).mean(axis=(-1, -2)) - mu_r * mu_t
    num = (2 * mu_r * mu_t + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_r ** 2 + mu_t ** 2 + SSIM_C1) * (var_r + var_t + SSIM_C2)
    return float(np.mean(num / den))


# -- optional no-reference metric plug-ins -------------------------------

NO_REFERENCE_PLUGINS: dict[str, object] = {}


def no_reference_scores(image: np.ndarray) -> dict[str, object]:
    """Scores from registered plug-ins; 'unavailable' when none exist."""
    if not NO_REFERENCE_PLUGINS:
        return {"status": "unavailable"}
    return {name: scorer(image) for name, scorer in sorted(NO_REFERENCE_PLUGINS.items())}
