"""Separable bicubic resampling via explicit weight matrices.

Used for the degradation downscale and for lifting the LR image onto the
HR grid before latent encoding.  The kernel is the standard Keys cubic
(a = -0.5); downscaling widens the kernel by the scale factor
(antialiasing).  Row weights are renormalised at the borders (replicate
edge handling).  Resizing to the identical size is exactly the identity:
the cubic kernel is 1 at offset 0 and 0 at every other integer offset.
"""

from __future__ import annotations

import math

import numpy as np


def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    inner = (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    outer = a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, inner, np.where(ax < 2.0, outer, 0.0))


def resize_matrix(n_in: int, n_out: int, antialias: bool = True) -> np.ndarray:
    """(n_out, n_in) weight matrix mapping input samples to output samples."""
    scale = n_in / n_out
    width = max(scale, 1.0) if antialias else 1.0
    support = 2.0 * width
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        lo = math.ceil(src - support)
        hi = math.floor(src + support)
        taps = np.arange(lo, hi + 1)
        w = _cubic((taps - src) / width)
        taps = np.clip(taps, 0, n_in - 1)
        np.add.at(m[i], taps, w)
        m[i] /= m[i].sum()
    return m


def resize_bicubic(image: np.ndarray, out_h: int, out_w: int,
                   antialias: bool = True) -> np.ndarray:
    """Resize (H, W) or (H, W, C) float image to (out_h, out_w)."""
    image = np.asarray(image, dtype=np.float64)
    mh = resize_matrix(image.shape[0], out_h, antialias)
    mw = resize_matrix(image.shape[1], out_w, antialias)
    if image.ndim == 2:
        return mh @ image @ mw.T
    return np.einsum("oh,hwc,pw->opc", mh, image, mw, optimize=True)
