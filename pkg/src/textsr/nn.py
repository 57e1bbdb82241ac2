"""Parameter containers, layers, and the optimizer.

Parameters live in a flat ``ParamStore`` keyed by dotted module path
(``denoiser.level0.site.gtca.wq`` and so on).  Checkpoints serialise the
store directly, so the key layout is a stable on-disk contract.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ParamStore:
    """Flat name -> Tensor mapping for all trainable arrays of a model."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        return sorted(self._params.items())

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, t in self._params.items():
            key = prefix + name
            if key not in arrays:
                raise KeyError(f"checkpoint missing parameter {key!r}")
            src = np.asarray(arrays[key], dtype=np.float64)
            if src.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {key!r}: checkpoint {src.shape}, model {t.data.shape}")
            t.data = src.copy()


def he_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.w = store.create(f"{name}.w", he_init(rng, (d_in, d_out), d_in))
        self.b = store.create(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x):
        out = ad.matmul(x, self.w)
        return out + self.b if self.b is not None else out


class Conv2d:
    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 rng: np.random.Generator, kernel: int = 3, stride: int = 1,
                 padding: int = 1, bias: bool = True):
        fan_in = c_in * kernel * kernel
        self.w = store.create(f"{name}.w",
                              he_init(rng, (c_out, c_in, kernel, kernel), fan_in))
        self.b = store.create(f"{name}.b", np.zeros(c_out)) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return ad.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class ChannelNorm:
    """LayerNorm over the channel axis of (B,C,H,W) features."""

    def __init__(self, store: ParamStore, name: str, channels: int):
        self.gamma = store.create(f"{name}.gamma", np.ones(channels))
        self.beta = store.create(f"{name}.beta", np.zeros(channels))

    def __call__(self, x):
        g = ad.reshape(self.gamma, (1, -1, 1, 1))
        b = ad.reshape(self.beta, (1, -1, 1, 1))
        return ad.layer_norm(x, g, b, axis=1)


class TokenNorm:
    """LayerNorm over the last axis of (B, N, D) token features."""

    def __init__(self, store: ParamStore, name: str, dim: int):
        self.gamma = store.create(f"{name}.gamma", np.ones(dim))
        self.beta = store.create(f"{name}.beta", np.zeros(dim))

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta, axis=-1)


def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """Standard sin/cos timestep embedding; t is an int array (B,)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


class AdamW:
    """Decoupled-weight-decay Adam over a ParamStore."""

    def __init__(self, store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(v.data) for k, v in store.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in store.items()}

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for name, p in self.store.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step_count": np.array(self.step_count)}
        for k in self.m:
            out[f"m.{k}"] = self.m[k].copy()
            out[f"v.{k}"] = self.v[k].copy()
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        self.step_count = int(arrays[prefix + "step_count"])
        for k in self.m:
            self.m[k] = np.asarray(arrays[f"{prefix}m.{k}"], dtype=np.float64).copy()
            self.v[k] = np.asarray(arrays[f"{prefix}v.{k}"], dtype=np.float64).copy()
