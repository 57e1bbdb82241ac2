"""Classifier-free guidance in three modes: none, single, multi.

The guided noise estimate is

    eps_tilde = eps_hat + lambda_s * (eps_hat - eps_hat_neg)

where ``eps_hat`` is the prediction under the positive priors and
``eps_hat_neg`` the prediction under negative priors.  ``multi`` mode uses
one negative prompt per textual branch (global / low-frequency /
high-frequency) evaluated jointly in a single negative pass; ``single``
mode feeds the same generic negative text to all three branches; ``none``
skips the negative pass entirely (exactly one denoiser call per step).

Both passes share the LR conditioning (latent and feature tokens); only
the textual branches are negated.

The default negative prompts below are desk-scale placeholders chosen for
this implementation, not canonical values, and are config-overridable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .priors import PriorBundle, encode_caption_set, CaptionSet

GUIDANCE_MODES = ("none", "single", "multi")

DEFAULT_LAMBDA_S = 7.0
DEFAULT_NEG_GLOBAL = "wrong layout, duplicated objects"
DEFAULT_NEG_LF = ["distorted shape, wrong proportions"]
DEFAULT_NEG_HF = ["oversmoothed, noisy texture, ringing artifacts"]


@dataclass
class GuidanceSpec:
    """CFG mode, strength, and per-branch negative prompts."""

    mode: str = "multi"
    lambda_s: float = DEFAULT_LAMBDA_S
    neg_global: str = DEFAULT_NEG_GLOBAL
    neg_lf: list[str] = field(default_factory=lambda: list(DEFAULT_NEG_LF))
    neg_hf: list[str] = field(default_factory=lambda: list(DEFAULT_NEG_HF))

    def __post_init__(self):
        if self.mode not in GUIDANCE_MODES:
            raise ValueError(f"mode must be one of {GUIDANCE_MODES}")
        if not (math.isfinite(self.lambda_s) and self.lambda_s >= 0.0):
            raise ValueError("lambda_s must be finite and non-negative")


def negative_captions(spec: GuidanceSpec) -> CaptionSet | None:
    """Caption set for the negative pass (None when guidance is off).

    Single mode reuses the generic negative text for all three branches.
    """
    if spec.mode == "none":
        return None
    if spec.mode == "single":
        return CaptionSet(global_caption=spec.neg_global,
                          lf_captions=[spec.neg_global],
                          hf_captions=[spec.neg_global])
    n = max(len(spec.neg_lf), len(spec.neg_hf), 1)

    def pad(texts):
        texts = list(texts) if texts else [""]
        return texts + [""] * (n - len(texts))

    return CaptionSet(global_caption=spec.neg_global,
                      lf_captions=pad(spec.neg_lf), hf_captions=pad(spec.neg_hf))


def build_negative_bundle(spec: GuidanceSpec, encoder) -> PriorBundle | None:
    """Encode the negative prompts once per sampling run."""
    captions = negative_captions(spec)
    return None if captions is None else encode_caption_set(captions, encoder)


def _as_array(pred) -> np.ndarray:
    out = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("denoiser produced non-finite output")
    return out


def guided_noise(denoiser, z_t, lr_latent, t: int, pos: PriorBundle,
                 spec: GuidanceSpec | None, *, neg: PriorBundle | None = None,
                 f_lr=None) -> np.ndarray:
    """Guided noise estimate at one timestep.

    Mode "none" (or spec None) returns the positive prediction with exactly
    one denoiser evaluation; "single" and "multi" add one joint negative
    pass and apply the extrapolation formula.
    """
    eps_pos = _as_array(denoiser(z_t, lr_latent, t, pos, f_lr))
    if spec is None or spec.mode == "none":
        return eps_pos
    if neg is None:
        raise ValueError("guidance modes 'single'/'multi' require an encoded "
                         "negative bundle (see build_negative_bundle)")
    eps_neg = _as_array(denoiser(z_t, lr_latent, t, neg, f_lr))
    return eps_pos + spec.lambda_s * (eps_pos - eps_neg)
