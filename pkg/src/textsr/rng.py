"""Deterministic random-number helpers.

Every stochastic operation in this package draws from a counter-based
Philox generator keyed by explicit integers, so any quantity is a pure
function of its key tuple.  Re-running with the same seed reproduces the
same bits on any platform, and independent streams (one per timestep, per
record, per purpose) never interact.

Key layout: ``(purpose_salt, seed, index)`` where ``purpose_salt`` is one
of the module-level constants below.  Philox accepts a 2 x 64-bit key, so
the three values are folded into two words.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Purpose salts keep independent streams apart even with identical
# (seed, index) pairs.
SALT_SAMPLING = 0x5A01
SALT_TRAINING = 0x5A02
SALT_SCENE = 0x5A03
SALT_DEGRADE = 0x5A04
SALT_CORRUPT = 0x5A05
SALT_INIT = 0x5A06
SALT_TEXTURE = 0x5A07

_MASK64 = (1 << 64) - 1


def keyed_generator(salt: int, seed: int, index: int = 0) -> np.random.Generator:
    """Philox generator keyed by (salt, seed, index)."""
    key = np.array([(salt << 32) ^ (int(seed) & _MASK64), int(index) & _MASK64],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sampling_noise(seed: int, t: int, shape) -> np.ndarray:
    """Standard-normal noise for the reverse-process step at timestep t."""
    return keyed_generator(SALT_SAMPLING, seed, t).standard_normal(shape)


def stable_token_hash(token: str, salt: bytes = b"") -> int:
    """Platform-independent 64-bit hash of a text token (sha256 based)."""
    digest = hashlib.sha256(salt + token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def text_key_hash(text: str) -> str:
    """Hex digest used to key replay-embedding records for a caption."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def bytes_key_hash(data: bytes) -> str:
    """Hex digest used to key replay-embedding records for image bytes."""
    return hashlib.sha256(data).hexdigest()
