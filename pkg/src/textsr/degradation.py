"""Parametric HR -> LR degradation chain.

A simplified stand-in for heavy real-world degradation pipelines:

    Gaussian blur -> bicubic downscale -> additive Gaussian noise
                  -> uniform quantisation

Each stage is skipped when its parameter is neutral (sigma 0, factor 1,
256 levels), so the neutral chain is the exact identity on uint8 input.
The noise stream is keyed by the seed, making the whole chain reproducible
byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .latent import to_float, to_uint8
from .resize import resize_bicubic
from .rng import SALT_DEGRADE, keyed_generator


@dataclass
class DegradationParams:
    blur_sigma: float = 1.2
    downscale_factor: int = 4
    noise_sigma: float = 0.015
    quantization_levels: int = 256

    def validate(self) -> None:
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("sigmas must be non-negative")
        if self.downscale_factor < 1:
            raise ValueError("downscale_factor must be >= 1")
        if self.quantization_levels < 2:
            raise ValueError("quantization_levels must be >= 2")

    def to_dict(self) -> dict:
        return {"blur_sigma": self.blur_sigma,
                "downscale_factor": self.downscale_factor,
                "noise_sigma": self.noise_sigma,
                "quantization_levels": self.quantization_levels}

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationParams":
        params = cls(**d)
        params.validate()
        return params


def degrade(hr_image: np.ndarray, params: DegradationParams, seed: int) -> np.ndarray:
    """Degrade an HR uint8 image to its LR counterpart (uint8)."""
    params.validate()
    hr_image = np.asarray(hr_image)
    h, w = hr_image.shape[:2]
    f = params.downscale_factor
    if h % f or w % f:
        raise ValueError(f"image size {(h, w)} not divisible by factor {f}")

    x = to_float(hr_image)
    if params.blur_sigma > 0:
        x = gaussian_filter(x, sigma=(params.blur_sigma, params.blur_sigma, 0),
                            mode="reflect")
    if f > 1:
        x = resize_bicubic(x, h // f, w // f)
    if params.noise_sigma > 0:
        rng = keyed_generator(SALT_DEGRADE, seed)
        x = x + params.noise_sigma * rng.standard_normal(x.shape)
    x = np.clip(x, 0.0, 1.0)
    levels = params.quantization_levels
    x = np.round(x * (levels - 1)) / (levels - 1)
    return to_uint8(x)
