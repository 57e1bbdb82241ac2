"""Caption and LR-image encoders producing the conditioning bundle.

Three kinds of conditioning feed the denoiser: one global caption
embedding ``e_g``, per-segment low-frequency embeddings ``E_lf``, and
per-segment high-frequency embeddings ``E_hf``, plus feature tokens
``f_lr`` extracted from the LR image.  Production systems would back the
encoders with large pretrained models; here they sit behind two small
interfaces with deterministic reference implementations:

* ``HashingTextEncoder`` - bag-of-token hashing.  Tokens are whitespace
  split (case and punctuation sensitive), each token adds +/-1 (a
  sha256-derived sign) to one of ``dim`` buckets (sha256-derived index),
  and the result is L2-normalised unless it is the zero vector.  Empty
  text maps to the zero vector, which downstream attention treats as a
  no-op.
* ``PatchFeatureEncoder`` - a fixed-weight patch tokenizer: the image is
  cut into non-overlapping patches, each flattened patch is multiplied by
  one frozen pseudo-random matrix (no bias, so an all-zero image yields
  all-zero tokens).

Recorded-replay variants read precomputed vectors from a line-delimited
file keyed by content hash, so adapters to external encoder services stay
hermetic in tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .rng import (SALT_INIT, bytes_key_hash, keyed_generator, stable_token_hash,
                  text_key_hash)

REPLAY_KINDS = ("global", "lf", "hf", "image")


@dataclass
class CaptionSet:
    """One global caption plus aligned per-segment LF/HF captions."""

    global_caption: str
    lf_captions: list[str] = field(default_factory=list)
    hf_captions: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.lf_captions) != len(self.hf_captions):
            raise ValueError("lf_captions and hf_captions must have equal length")

    @property
    def n(self) -> int:
        return len(self.lf_captions)


@dataclass
class PriorBundle:
    """Encoded conditioning triple (e_g, E_lf, E_hf) with a validity mask.

    ``mask[i]`` is False for padded rows; padded rows are all-zero so they
    can never contribute to attention output.
    """

    e_g: np.ndarray
    E_lf: np.ndarray
    E_hf: np.ndarray
    mask: np.ndarray

    def validate(self) -> None:
        if self.E_lf.shape != self.E_hf.shape:
            raise ValueError("E_lf and E_hf must have identical shapes")
        if self.E_lf.ndim != 2 or self.e_g.ndim != 1:
            raise ValueError("e_g must be a vector and E_lf/E_hf matrices")
        if self.mask.shape != (self.E_lf.shape[0],):
            raise ValueError("mask length must equal the row count")
        for arr in (self.e_g, self.E_lf, self.E_hf):
            if not np.all(np.isfinite(arr)):
                raise ValueError("embeddings must be finite")
        pad = ~self.mask.astype(bool)
        if np.any(self.E_lf[pad] != 0.0) or np.any(self.E_hf[pad] != 0.0):
            raise ValueError("padded rows must be all-zero")

    @property
    def n(self) -> int:
        return int(self.E_lf.shape[0])

    def padded(self, n_total: int) -> "PriorBundle":
        """Copy with masked zero rows appended up to n_total."""
        if n_total < self.n:
            raise ValueError("cannot pad to fewer rows")
        extra = n_total - self.n
        d = self.E_lf.shape[1]
        pad_rows = np.zeros((extra, d))
        return PriorBundle(
            e_g=self.e_g.copy(),
            E_lf=np.concatenate([self.E_lf, pad_rows], axis=0),
            E_hf=np.concatenate([self.E_hf, pad_rows], axis=0),
            mask=np.concatenate([self.mask, np.zeros(extra, dtype=bool)]),
        )


@dataclass
class LrFeatureTokens:
    """m x d_f feature tokens extracted from the LR image."""

    tokens: np.ndarray

    def validate(self) -> None:
        if self.tokens.ndim != 2:
            raise ValueError("tokens must be a 2-d matrix")
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError("tokens must be finite")


class HashingTextEncoder:
    """Deterministic bag-of-token text encoder (see module docstring)."""

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def encode(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for token in text.split():
            idx = stable_token_hash(token) % self.dim
            sign = 1.0 if stable_token_hash(token, salt=b"sign") & 1 else -1.0
            v[idx] += sign
        norm = np.linalg.norm(v)
        return v / norm if norm > 0.0 else v


def encode_global(caption: str, encoder) -> np.ndarray:
    vec = np.asarray(encoder.encode(caption), dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise ValueError("encoder produced a non-finite embedding")
    return vec


def encode_lf(lf_captions: list[str], encoder) -> np.ndarray:
    if not lf_captions:
        return np.zeros((0, encoder.dim))
    return np.stack([encode_global(c, encoder) for c in lf_captions])


def encode_hf(hf_captions: list[str], encoder) -> np.ndarray:
    if not hf_captions:
        return np.zeros((0, encoder.dim))
    return np.stack([encode_global(c, encoder) for c in hf_captions])


def encode_caption_set(captions: CaptionSet, encoder) -> PriorBundle:
    """Full bundle for one record; all rows are valid (mask all True)."""
    bundle = PriorBundle(
        e_g=encode_global(captions.global_caption, encoder),
        E_lf=encode_lf(captions.lf_captions, encoder),
        E_hf=encode_hf(captions.hf_captions, encoder),
        mask=np.ones(captions.n, dtype=bool),
    )
    bundle.validate()
    return bundle


def empty_bundle(dim: int) -> PriorBundle:
    """Unconditional bundle: zero global vector and no segment rows."""
    return PriorBundle(e_g=np.zeros(dim), E_lf=np.zeros((0, dim)),
                       E_hf=np.zeros((0, dim)), mask=np.zeros(0, dtype=bool))


class PatchFeatureEncoder:
    """Fixed-weight patch tokenizer standing in for a frozen image encoder."""

    def __init__(self, patch_size: int = 4, dim: int = 32, seed: int = 0,
                 expected_size: tuple[int, int] | None = None):
        self.patch_size = patch_size
        self.dim = dim
        self.expected_size = expected_size
        fan_in = patch_size * patch_size * 3
        rng = keyed_generator(SALT_INIT, seed, index=0xF17)
        self.weight = rng.standard_normal((fan_in, dim)) / np.sqrt(fan_in)

    def encode(self, image: np.ndarray) -> LrFeatureTokens:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError("expected an (H, W, 3) image")
        h, w, _ = image.shape
        if self.expected_size is not None and (h, w) != tuple(self.expected_size):
            raise ValueError(f"image size {(h, w)} != configured {self.expected_size}")
        p = self.patch_size
        if h % p or w % p:
            raise ValueError("image dimensions must be divisible by the patch size")
        patches = image.reshape(h // p, p, w // p, p, 3)
        patches = patches.transpose(0, 2, 1, 3, 4).reshape(-1, p * p * 3)
        tokens = LrFeatureTokens(tokens=patches @ self.weight)
        tokens.validate()
        return tokens


def encode_lr_features(image: np.ndarray, encoder) -> LrFeatureTokens:
    return encoder.encode(image)


# -- recorded-replay adapters -------------------------------------------


def write_replay_records(path, records) -> None:
    """Write replay-embedding records: dicts with key_hash, kind, vector."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            if rec["kind"] not in REPLAY_KINDS:
                raise ValueError(f"unknown replay kind {rec['kind']!r}")
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_replay_records(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


class ReplayTextEncoder:
    """Text encoder that replays prerecorded embeddings keyed by text hash."""

    def __init__(self, path, dim: int = 64):
        self.dim = dim
        self._table: dict[str, np.ndarray] = {}
        for rec in read_replay_records(path):
            if rec["kind"] in ("global", "lf", "hf"):
                self._table[rec["key_hash"]] = np.asarray(rec["vector"], dtype=np.float64)

    def encode(self, text: str) -> np.ndarray:
        key = text_key_hash(text)
        if key not in self._table:
            raise KeyError(f"no replay embedding recorded for text hash {key[:12]}...")
        return self._table[key]


class ReplayImageEncoder:
    """Image tokenizer replaying prerecorded token matrices keyed by bytes hash."""

    def __init__(self, path):
        self._table: dict[str, np.ndarray] = {}
        for rec in read_replay_records(path):
            if rec["kind"] == "image":
                vec = np.asarray(rec["vector"], dtype=np.float64)
                self._table[rec["key_hash"]] = vec.reshape(rec["shape"])

    def encode(self, image: np.ndarray) -> LrFeatureTokens:
        key = bytes_key_hash(np.ascontiguousarray(image).tobytes())
        if key not in self._table:
            raise KeyError(f"no replay tokens recorded for image hash {key[:12]}...")
        return LrFeatureTokens(tokens=self._table[key])


def record_text_embedding(text: str, kind: str, encoder) -> dict:
    """Build one replay record by running the reference encoder."""
    return {"key_hash": text_key_hash(text), "kind": kind,
            "vector": np.asarray(encoder.encode(text)).tolist()}


def record_image_tokens(image: np.ndarray, encoder) -> dict:
    tokens = encoder.encode(image).tokens
    return {"key_hash": bytes_key_hash(np.ascontiguousarray(image).tobytes()),
            "kind": "image", "vector": tokens.ravel().tolist(),
            "shape": list(tokens.shape)}


def collate_bundles(bundles: list[PriorBundle]):
    """Pad a batch of bundles to the max segment count.

    Returns (e_g (B,d), E_lf (B,n,d), E_hf (B,n,d), mask (B,n)).
    """
    if not bundles:
        raise ValueError("empty batch")
    n_max = max(b.n for b in bundles)
    padded = [b.padded(n_max) for b in bundles]
    return (np.stack([b.e_g for b in padded]),
            np.stack([b.E_lf for b in padded]),
            np.stack([b.E_hf for b in padded]),
            np.stack([b.mask for b in padded]))
