"""Latent-space coders standing in for a pretrained VAE.

Both coders map float images in [0, 1] of shape (H, W, 3) to latents of
shape (C, H/4, W/4) and back.  The spatial factor is fixed at 4.

``ConvLatentCoder`` is the default: a small strided convolutional encoder
and mirrored decoder, trained jointly with the denoiser on an image
reconstruction loss (the latents handed to the diffusion loss are
detached, so the coder is shaped only by reconstruction).  The encoder
output passes through tanh, keeping latents in (-1, 1) and commensurate
with unit-variance noise.

``PixelShuffleCoder`` is a parameter-free exactly invertible alternative
(space-to-depth of the [-1, 1]-scaled image), useful for isolating
diffusion behaviour from autoencoder error.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Conv2d, ParamStore
from .rng import SALT_INIT, keyed_generator

FACTOR = 4


class PixelShuffleCoder:
    """Invertible space-to-depth latent coder; 48 channels at factor 4."""

    channels = 3 * FACTOR * FACTOR
    factor = FACTOR
    trainable = False

    def encode(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        h, w, _ = image.shape
        if h % FACTOR or w % FACTOR:
            raise ValueError("image dimensions must be divisible by 4")
        x = 2.0 * image - 1.0
        x = x.transpose(2, 0, 1)  # (3, H, W)
        x = x.reshape(3, h // FACTOR, FACTOR, w // FACTOR, FACTOR)
        return x.transpose(0, 2, 4, 1, 3).reshape(self.channels, h // FACTOR, w // FACTOR)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent, dtype=np.float64)
        c, hh, ww = latent.shape
        x = latent.reshape(3, FACTOR, FACTOR, hh, ww)
        x = x.transpose(0, 3, 1, 4, 2).reshape(3, hh * FACTOR, ww * FACTOR)
        return (x.transpose(1, 2, 0) + 1.0) / 2.0


class ConvLatentCoder:
    """Trainable strided-conv encoder/decoder pair (factor 4)."""

    factor = FACTOR
    trainable = True

    def __init__(self, store: ParamStore, channels: int = 12, hidden: int = 24,
                 init_seed: int = 0, prefix: str = "latent"):
        self.channels = channels
        self.hidden = hidden
        rng = keyed_generator(SALT_INIT, init_seed, index=0xAE)
        self.enc1 = Conv2d(store, f"{prefix}.enc1", 3, hidden, rng, stride=2)
        self.enc2 = Conv2d(store, f"{prefix}.enc2", hidden, channels, rng, stride=2)
        self.dec1 = Conv2d(store, f"{prefix}.dec1", channels, hidden, rng)
        self.dec2 = Conv2d(store, f"{prefix}.dec2", hidden, 3, rng)

    def encode_graph(self, images: Tensor) -> Tensor:
        """images: (B, 3, H, W) in [0, 1] -> latents (B, C, H/4, W/4)."""
        h = ad.silu(self.enc1(images))
        return ad.tanh(self.enc2(h))

    def decode_graph(self, latents: Tensor) -> Tensor:
        h = ad.silu(self.dec1(ad.upsample2_nearest(latents)))
        return self.dec2(ad.upsample2_nearest(h))

    def encode(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape[0] % FACTOR or image.shape[1] % FACTOR:
            raise ValueError("image dimensions must be divisible by 4")
        with ad.no_grad():
            z = self.encode_graph(Tensor(image.transpose(2, 0, 1)[None]))
        return z.data[0]

    def decode(self, latent: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            x = self.decode_graph(Tensor(np.asarray(latent, dtype=np.float64)[None]))
        return x.data[0].transpose(1, 2, 0)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Clip a float [0, 1] image and quantise to uint8."""
    return np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def to_float(image: np.ndarray) -> np.ndarray:
    """uint8 image to float64 in [0, 1] (float input passes through)."""
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image.astype(np.float64) / 255.0
    return image.astype(np.float64)
