"""Conditional noise-prediction network with four cross-attention branches.

The backbone is a small convolutional encoder-decoder over latents with a
sinusoidal timestep embedding.  At every resolution level one attention
site applies, strictly in this order, the four conditioning branches:

    global text  ->  low-frequency text  ->  high-frequency text  ->  LR features

Each branch is residual cross-attention: spatial positions are queries
(pre-normalised), the conditioning rows are keys/values (projected from
the raw embeddings, bias-free), and the branch output is added through a
learnable scalar gate initialised at zero, so an untrained model is the
unconditional backbone.  A disabled branch, an empty conditioning set, or
a fully masked one leaves the features exactly unchanged.

The LR latent enters as a second input (channel-concatenated with the
noisy latent), separate from the LR feature tokens consumed by the last
branch.  All branch parameters exist regardless of the enable flags, so a
checkpoint trained with every branch on can be evaluated with any subset
disabled (the ablation protocol).

Noise prediction at timestep t decomposes as

    eps = z_t / sqrt(1 - abar_t)  -  sqrt(abar_t / (1 - abar_t)) * z_0,

so the head is parameterised accordingly: a zero-initialised 1x1 linear
skip over the raw input channels (which include z_t pre-scaled by
1/sqrt(1 - abar_t)) captures the first term by routing, and the deep
convolutional output is multiplied by sqrt(abar_t / (1 - abar_t)) so the
trunk only has to learn the timestep-independent clean-latent estimate.
Both scales are supplied via ``set_timestep_scales`` (identity otherwise);
the optimised objective remains the plain noise-prediction MSE.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import (AdamW, ChannelNorm, Conv2d, Linear, ParamStore, TokenNorm,
                 sinusoidal_embedding)
from .priors import LrFeatureTokens, PriorBundle, collate_bundles
from .rng import SALT_INIT, keyed_generator

_NEG_BIG = -1e30  # masked-logit fill; exact zero weight after softmax

BRANCH_NAMES = ("gtca", "lfca", "hfca", "lrca")


@dataclass(frozen=True)
class DenoiserConfig:
    """Architecture and branch-enable flags for the conditional denoiser."""

    latent_channels: int = 12
    base_channels: int = 16
    depth: int = 2
    embed_dim: int = 32
    attention_heads: int = 4
    text_dim: int = 64
    lr_token_dim: int = 32
    time_dim: int = 32
    enable_gtca: bool = True
    enable_lfca: bool = True
    enable_hfca: bool = True
    enable_lrca: bool = True
    mixed_frequency_mode: bool = False
    lrca_final_site_only: bool = False

    def validate(self) -> None:
        for name in ("latent_channels", "base_channels", "depth", "embed_dim",
                     "attention_heads", "text_dim", "lr_token_dim", "time_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.embed_dim % self.attention_heads:
            raise ValueError("embed_dim must be divisible by attention_heads")
        if self.mixed_frequency_mode and not (self.enable_lfca and self.enable_hfca):
            raise ValueError("mixed_frequency_mode requires both LF and HF branches")

    def with_flags(self, **flags) -> "DenoiserConfig":
        cfg = replace(self, **flags)
        cfg.validate()
        return cfg


def parameter_count(config: DenoiserConfig) -> int:
    """Closed-form trainable-parameter count for a given config.

    Branch parameters are counted for all four branches (enable flags only
    gate the forward pass).  Layout per resolution level i with channel
    count F_i = base_channels * 2**i:

      conv_in        (3*C*3*3 + 1) * F_0
      skip head      (3*C + 1) * C
      down_i (i>0)   (F_{i-1}*3*3 + 1) * F_i
      resblock_i     2*2*F_i + 2*(F_i*3*3 + 1)*F_i + (time_dim + 1)*F_i
      site_i         sum over branches of
                       2*F_i + F_i*d + 2*kv*d + d*F_i + 1
                     with d = embed_dim, kv = text_dim (three text branches)
                     or lr_token_dim (LR branch)
      upconv_i       (F_i*3*3 + 1) * F_{i-1}          for i = depth-1 .. 1
      merge_i        (2*F_{i-1}*3*3 + 1) * F_{i-1}
      head           2*F_0 + (F_0*3*3 + 1) * C
    """
    c, f0 = config.latent_channels, config.base_channels
    d, e = config.embed_dim, config.time_dim
    total = (3 * c * 9 + 1) * f0
    total += (3 * c + 1) * c  # 1x1 linear skip head
    for i in range(config.depth):
        fi = f0 * (2 ** i)
        if i > 0:
            total += ((fi // 2) * 9 + 1) * fi
        total += 4 * fi + 2 * (fi * 9 + 1) * fi + (e + 1) * fi
        for kv in (config.text_dim, config.text_dim, config.text_dim,
                   config.lr_token_dim):
            total += 2 * fi + fi * d + 2 * kv * d + d * fi + 1
    for i in range(config.depth - 1, 0, -1):
        f_prev = f0 * (2 ** (i - 1))
        total += (2 * f_prev * 9 + 1) * f_prev
        total += ((2 * f_prev) * 9 + 1) * f_prev
    total += 2 * f0 + (f0 * 9 + 1) * c
    return total


class CrossAttentionBranch:
    """Residual multi-head cross-attention from features onto conditioning rows."""

    def __init__(self, store: ParamStore, name: str, channels: int, kv_dim: int,
                 embed_dim: int, heads: int, rng):
        self.heads = heads
        self.head_dim = embed_dim // heads
        self.q_norm = TokenNorm(store, f"{name}.q_norm", channels)
        scale_q = 1.0 / np.sqrt(channels)
        scale_kv = 1.0 / np.sqrt(kv_dim)
        scale_o = 1.0 / np.sqrt(embed_dim)
        self.wq = store.create(f"{name}.wq",
                               rng.standard_normal((channels, embed_dim)) * scale_q)
        self.wk = store.create(f"{name}.wk",
                               rng.standard_normal((kv_dim, embed_dim)) * scale_kv)
        self.wv = store.create(f"{name}.wv",
                               rng.standard_normal((kv_dim, embed_dim)) * scale_kv)
        self.wo = store.create(f"{name}.wo",
                               rng.standard_normal((embed_dim, channels)) * scale_o)
        self.gate = store.create(f"{name}.gate", np.zeros(()))

    def __call__(self, x, kv, mask=None):
        """x: (B,C,H,W) features; kv: (B,n,kv_dim) rows; mask: (B,n) validity.

        Returns features of the same shape.  n == 0 (or kv None) is the
        exact identity; masked rows are zeroed out of both the values and
        the softmax, so padding cannot change the output.
        """
        if kv is None:
            return x
        kv_data = kv.data if isinstance(kv, Tensor) else np.asarray(kv, dtype=np.float64)
        if kv_data.shape[1] == 0:
            return x
        if mask is not None:
            valid = np.asarray(mask, dtype=bool)
            kv_data = kv_data * valid[:, :, None]
        kv_t = Tensor(kv_data)

        b, c, h, w = x.shape
        n = kv_data.shape[1]
        tokens = ad.transpose(ad.reshape(x, (b, c, h * w)), (0, 2, 1))
        q = ad.matmul(self.q_norm(tokens), self.wq)
        k = ad.matmul(kv_t, self.wk)
        v = ad.matmul(kv_t, self.wv)

        def split_heads(t, length):
            t = ad.reshape(t, (b, length, self.heads, self.head_dim))
            return ad.transpose(t, (0, 2, 1, 3))

        q = split_heads(q, h * w)
        k = split_heads(k, n)
        v = split_heads(v, n)
        logits = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))
        logits = logits * (1.0 / np.sqrt(self.head_dim))
        if mask is not None:
            bias = np.where(valid, 0.0, _NEG_BIG)[:, None, None, :]
            logits = logits + Tensor(bias)
        weights = ad.softmax(logits, axis=-1)
        attended = ad.matmul(weights, v)
        attended = ad.reshape(ad.transpose(attended, (0, 2, 1, 3)),
                              (b, h * w, self.heads * self.head_dim))
        delta = ad.matmul(attended, self.wo)
        delta = ad.reshape(ad.transpose(delta, (0, 2, 1)), (b, c, h, w))
        return x + self.gate * delta


class ResBlock:
    def __init__(self, store: ParamStore, name: str, channels: int,
                 time_dim: int, rng):
        self.norm1 = ChannelNorm(store, f"{name}.norm1", channels)
        self.conv1 = Conv2d(store, f"{name}.conv1", channels, channels, rng)
        self.time_proj = Linear(store, f"{name}.time", time_dim, channels, rng)
        self.norm2 = ChannelNorm(store, f"{name}.norm2", channels)
        self.conv2 = Conv2d(store, f"{name}.conv2", channels, channels, rng)

    def __call__(self, x, temb):
        h = self.conv1(ad.silu(self.norm1(x)))
        bias = self.time_proj(temb)
        h = h + ad.reshape(bias, (bias.shape[0], bias.shape[1], 1, 1))
        h = self.conv2(ad.silu(self.norm2(h)))
        return x + h


class AttentionSite:
    """One per-resolution conditioning site applying the four branches in order."""

    def __init__(self, store: ParamStore, name: str, channels: int,
                 config: DenoiserConfig, rng):
        d, heads = config.embed_dim, config.attention_heads
        self.gtca = CrossAttentionBranch(store, f"{name}.gtca", channels,
                                         config.text_dim, d, heads, rng)
        self.lfca = CrossAttentionBranch(store, f"{name}.lfca", channels,
                                         config.text_dim, d, heads, rng)
        self.hfca = CrossAttentionBranch(store, f"{name}.hfca", channels,
                                         config.text_dim, d, heads, rng)
        self.lrca = CrossAttentionBranch(store, f"{name}.lrca", channels,
                                         config.lr_token_dim, d, heads, rng)

    def __call__(self, x, cond, config: DenoiserConfig, apply_lrca: bool,
                 taps: dict | None = None):
        e_g, E_lf, E_hf, text_mask, f_lr = cond
        if config.mixed_frequency_mode:
            freq_kv = np.concatenate([E_lf, E_hf], axis=1)
            freq_mask = np.concatenate([text_mask, text_mask], axis=1)
            lf_kv, lf_mask = freq_kv, freq_mask
            hf_kv, hf_mask = freq_kv, freq_mask
        else:
            lf_kv, lf_mask = E_lf, text_mask
            hf_kv, hf_mask = E_hf, text_mask

        if config.enable_gtca:
            x = self.gtca(x, e_g[:, None, :])
        if taps is not None:
            taps["g"] = x
        if config.enable_lfca:
            x = self.lfca(x, lf_kv, lf_mask)
        if taps is not None:
            taps["lf"] = x
        if config.enable_hfca:
            x = self.hfca(x, hf_kv, hf_mask)
        if taps is not None:
            taps["hf"] = x
        if config.enable_lrca and apply_lrca:
            x = self.lrca(x, f_lr)
        return x


class ConditionalDenoiser:
    """The trainable noise-prediction network epsilon_theta."""

    def __init__(self, config: DenoiserConfig, init_seed: int = 0,
                 store: ParamStore | None = None, prefix: str = "denoiser"):
        config.validate()
        self.config = config
        self.store = store if store is not None else ParamStore()
        rng = keyed_generator(SALT_INIT, init_seed, index=0xD0)
        c, f0 = config.latent_channels, config.base_channels
        self._input_scales = None
        self._output_scales = None

        self.conv_in = Conv2d(self.store, f"{prefix}.conv_in", 3 * c, f0, rng)
        self.skip_head = Conv2d(self.store, f"{prefix}.skip_head", 3 * c, c, rng,
                                kernel=1, padding=0)
        self.skip_head.w.data[:] = 0.0  # analytic route is learned, not imposed
        self.downs, self.resblocks, self.sites = [], [], []
        for i in range(config.depth):
            fi = f0 * (2 ** i)
            if i > 0:
                self.downs.append(Conv2d(self.store, f"{prefix}.down{i}",
                                         fi // 2, fi, rng, stride=2))
            self.resblocks.append(ResBlock(self.store, f"{prefix}.res{i}", fi,
                                           config.time_dim, rng))
            self.sites.append(AttentionSite(self.store, f"{prefix}.site{i}", fi,
                                            config, rng))
        self.upconvs, self.merges = [], []
        for i in range(config.depth - 1, 0, -1):
            f_prev = f0 * (2 ** (i - 1))
            self.upconvs.append(Conv2d(self.store, f"{prefix}.up{i}",
                                       2 * f_prev, f_prev, rng))
            self.merges.append(Conv2d(self.store, f"{prefix}.merge{i}",
                                      2 * f_prev, f_prev, rng))
        self.out_norm = ChannelNorm(self.store, f"{prefix}.out_norm", f0)
        self.conv_out = Conv2d(self.store, f"{prefix}.conv_out", f0, c, rng)
        self.conv_out.w.data[:] = 0.0  # start as the zero predictor (loss = E|eps|^2)

    def set_timestep_scales(self, alpha_bars: np.ndarray) -> None:
        """Wire the analytic head scales for a given noise schedule."""
        alpha_bars = np.asarray(alpha_bars, dtype=np.float64)
        self._input_scales = 1.0 / np.sqrt(1.0 - alpha_bars)
        self._output_scales = np.sqrt(alpha_bars / (1.0 - alpha_bars))

    # -- forward ---------------------------------------------------------
    def forward(self, z_t, t, lr_latent, e_g, E_lf, E_hf, text_mask, f_lr,
                return_taps: bool = False):
        """Batched graph forward.  z_t/lr_latent: (B,C,H,W); t: (B,) ints;
        e_g: (B,dt); E_lf/E_hf: (B,n,dt); text_mask: (B,n); f_lr: (B,m,df)
        or None."""
        cfg = self.config
        z_t = z_t if isinstance(z_t, Tensor) else Tensor(z_t)
        lr_latent = Tensor(lr_latent) if not isinstance(lr_latent, Tensor) else lr_latent
        temb = Tensor(sinusoidal_embedding(t, cfg.time_dim))
        cond = (np.asarray(e_g, dtype=np.float64),
                np.asarray(E_lf, dtype=np.float64),
                np.asarray(E_hf, dtype=np.float64),
                np.asarray(text_mask, dtype=bool),
                None if f_lr is None else Tensor(np.asarray(f_lr, dtype=np.float64)))

        t_idx = np.atleast_1d(np.asarray(t, dtype=int))
        if self._input_scales is None:
            in_scale = np.ones(len(t_idx))
            out_scale = np.ones(len(t_idx))
        else:
            in_scale = self._input_scales[t_idx]
            out_scale = self._output_scales[t_idx]
        z_scaled = z_t * Tensor(in_scale[:, None, None, None])
        inputs = ad.concat([z_t, lr_latent, z_scaled], axis=1)
        x = self.conv_in(inputs)
        skips, all_taps = [], []
        for i in range(cfg.depth):
            if i > 0:
                x = self.downs[i - 1](x)
            x = self.resblocks[i](x, temb)
            apply_lrca = (not cfg.lrca_final_site_only) or i == cfg.depth - 1
            taps: dict = {} if return_taps else None
            x = self.sites[i](x, cond, cfg, apply_lrca, taps)
            if return_taps:
                all_taps.append(taps)
            if i < cfg.depth - 1:
                skips.append(x)
        for j, i in enumerate(range(cfg.depth - 1, 0, -1)):
            x = self.upconvs[j](ad.upsample2_nearest(x))
            x = self.merges[j](ad.concat([x, skips[i - 1]], axis=1))
        deep = self.conv_out(ad.silu(self.out_norm(x)))
        out = deep * Tensor(out_scale[:, None, None, None]) + self.skip_head(inputs)
        return (out, all_taps) if return_taps else out

    # -- denoiser protocol -------------------------------------------------
    def __call__(self, z_t, lr_latent, t, priors, f_lr=None):
        """Protocol entry point: accepts one record or a batch, returns the
        noise estimate as a Tensor of matching layout."""
        out, _ = self._run(z_t, lr_latent, t, priors, f_lr, return_taps=False)
        return out

    def predict(self, z_t, lr_latent, t, priors, f_lr=None):
        """ndarray forward without gradient tracking."""
        with ad.no_grad():
            out, _ = self._run(z_t, lr_latent, t, priors, f_lr, return_taps=False)
        return out.data

    def denoise_step(self, z_t, t, priors, f_lr=None, lr_latent=None,
                     return_taps: bool = False):
        """Single-record noise prediction with optional intermediate taps.

        Taps are the per-site features after the global, low-frequency,
        and high-frequency branches, each shaped like the site input.
        """
        with ad.no_grad():
            out, taps = self._run(z_t, lr_latent, t, priors, f_lr,
                                  return_taps=return_taps)
        if not return_taps:
            return out.data
        squeezed = [{k: v.data[0] for k, v in site.items()} for site in taps]
        return out.data, squeezed

    def _run(self, z_t, lr_latent, t, priors, f_lr, return_taps: bool):
        z_t_data = z_t.data if isinstance(z_t, Tensor) else np.asarray(z_t, dtype=np.float64)
        batched = z_t_data.ndim == 4
        if not batched:
            z_t_data = z_t_data[None]
        b = z_t_data.shape[0]
        if lr_latent is None:
            lr_data = np.zeros_like(z_t_data)
        else:
            lr_data = np.asarray(lr_latent, dtype=np.float64)
            if lr_data.ndim == 3:
                lr_data = lr_data[None]
        if lr_data.shape != z_t_data.shape:
            raise ValueError(f"lr_latent shape {lr_data.shape} != z_t shape {z_t_data.shape}")
        if z_t_data.shape[1] != self.config.latent_channels:
            raise ValueError(f"expected {self.config.latent_channels} latent channels, "
                             f"got {z_t_data.shape[1]}")

        bundles = priors if isinstance(priors, (list, tuple)) else [priors] * b
        if len(bundles) != b:
            raise ValueError("batch size mismatch between latents and priors")
        e_g, E_lf, E_hf, mask = collate_bundles(list(bundles))

        if f_lr is None:
            f_lr_data = None
        else:
            items = f_lr if isinstance(f_lr, (list, tuple)) else [f_lr] * b
            rows = [it.tokens if isinstance(it, LrFeatureTokens) else np.asarray(it)
                    for it in items]
            f_lr_data = np.stack(rows)

        t_arr = np.full(b, int(t)) if np.isscalar(t) else np.asarray(t)
        out = self.forward(z_t_data, t_arr, lr_data, e_g, E_lf, E_hf, mask,
                           f_lr_data, return_taps=return_taps)
        out, taps = out if return_taps else (out, [])
        if not batched:
            out = ad.reshape(out, out.shape[1:])
        return out, taps

    def make_optimizer(self, lr: float, weight_decay: float = 0.0) -> AdamW:
        return AdamW(self.store, lr=lr, weight_decay=weight_decay)


def denoise_step(model: ConditionalDenoiser, z_t, t, priors, f_lr=None,
                 lr_latent=None, return_taps: bool = False):
    """Functional wrapper over :meth:`ConditionalDenoiser.denoise_step`."""
    return model.denoise_step(z_t, t, priors, f_lr=f_lr, lr_latent=lr_latent,
                              return_taps=return_taps)
