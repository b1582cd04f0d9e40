"""Exactly invertible latent codec.

Images are folded into ``p x p`` patches (space-to-depth) and the resulting
channel vector is mixed by a fixed orthonormal matrix, so the transform is
norm-preserving and its inverse is the transpose.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = ["LatentGrid", "encode", "decode", "mixing_matrix", "DEFAULT_PATCH", "CODEC_SEED"]

DEFAULT_PATCH = 4
CODEC_SEED = 20240521


@dataclass(frozen=True)
class LatentGrid:
    data: np.ndarray  # (C * p * p, H / p, W / p)
    patch: int
    source_shape: tuple[int, int, int]

    def __post_init__(self):
        c, h, w = self.source_shape
        p = self.patch
        if p < 1 or h % p or w % p:
            raise ValueError(f"source shape {self.source_shape} incompatible with patch {p}")
        expected = (c * p * p, h // p, w // p)
        if tuple(self.data.shape) != expected:
            raise ValueError(f"latent data shape {self.data.shape} != expected {expected}")

    def with_data(self, data: np.ndarray) -> "LatentGrid":
        return LatentGrid(np.asarray(data, dtype=np.float64), self.patch, self.source_shape)


@lru_cache(maxsize=16)
def mixing_matrix(channels: int, seed: int = CODEC_SEED) -> np.ndarray:
    """Seeded orthonormal ``channels x channels`` matrix (QR with sign fix)."""
    rng = np.random.default_rng([seed, channels])
    q, r = np.linalg.qr(rng.standard_normal((channels, channels)))
    q = q * np.sign(np.diag(r))[None, :]
    q.setflags(write=False)
    return q


def _space_to_depth(x: np.ndarray, p: int) -> np.ndarray:
    c, h, w = x.shape
    x = x.reshape(c, h // p, p, w // p, p)
    return x.transpose(0, 2, 4, 1, 3).reshape(c * p * p, h // p, w // p)


def _depth_to_space(z: np.ndarray, shape: tuple[int, int, int], p: int) -> np.ndarray:
    c, h, w = shape
    z = z.reshape(c, p, p, h // p, w // p)
    return z.transpose(0, 3, 1, 4, 2).reshape(c, h, w)


def encode(image, patch: int = DEFAULT_PATCH) -> LatentGrid:
    """Map a ``C x H x W`` image to its latent grid."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected C x H x W image, got shape {x.shape}")
    c, h, w = x.shape
    if h % patch or w % patch:
        raise ValueError(f"image size {h}x{w} not divisible by patch {patch}")
    folded = _space_to_depth(x, patch)
    m = mixing_matrix(folded.shape[0])
    data = np.einsum("ij,jhw->ihw", m, folded)
    return LatentGrid(data, patch, (c, h, w))


def decode(z: LatentGrid) -> np.ndarray:
    """Exact inverse of :func:`encode`."""
    if not isinstance(z, LatentGrid):
        raise TypeError("decode expects a LatentGrid")
    m = mixing_matrix(z.data.shape[0])
    folded = np.einsum("ji,jhw->ihw", m, z.data)
    return _depth_to_space(folded, z.source_shape, z.patch)
