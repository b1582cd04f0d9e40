"""Self-attention, first-frame cross-frame attention and sliding-window CFA.

All three constructions share the query of the current frame and differ only
in where keys and values come from. That choice is a linear mix over the frame
axis, exposed as :func:`frame_mixing_matrix` so that batched callers (the
denoiser) use exactly the same weights as the per-frame functions here.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "SELF",
    "FIRST_FRAME",
    "SLIDING_WINDOW",
    "AttentionMode",
    "ProjectionWeights",
    "FrameTokens",
    "project_qkv",
    "attend",
    "softmax",
    "first_frame_kv",
    "sw_cfa_kv",
    "cross_frame_attend",
    "window_bounds",
    "frame_mixing_matrix",
]

SELF = "self_attention"
FIRST_FRAME = "first_frame_cfa"
SLIDING_WINDOW = "sliding_window_cfa"
_VARIANTS = (SELF, FIRST_FRAME, SLIDING_WINDOW)
DEFAULT_WINDOW_RADIUS = 3


@dataclass(frozen=True)
class AttentionMode:
    variant: str = SLIDING_WINDOW
    window_radius: int = DEFAULT_WINDOW_RADIUS

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown attention variant {self.variant!r}")
        if int(self.window_radius) != self.window_radius or self.window_radius < 0:
            raise ValueError("window_radius must be ≥ 0")

    @classmethod
    def self_attention(cls) -> "AttentionMode":
        return cls(SELF, 0)

    @classmethod
    def first_frame(cls) -> "AttentionMode":
        return cls(FIRST_FRAME, 0)

    @classmethod
    def sliding_window(cls, radius: int = DEFAULT_WINDOW_RADIUS) -> "AttentionMode":
        return cls(SLIDING_WINDOW, radius)


@dataclass(frozen=True)
class ProjectionWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(self.w_q), np.shape(self.w_k), np.shape(self.w_v)}
        if len(shapes) != 1 or len(np.shape(self.w_q)) != 2:
            raise ValueError(f"projection matrices must share one 2-D shape, got {sorted(shapes)}")
        for m in (self.w_q, self.w_k, self.w_v):
            if not np.all(np.isfinite(m)):
                raise ValueError("projection weights must be finite")

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    @property
    def d(self) -> int:
        return self.w_q.shape[1]


@dataclass(frozen=True)
class FrameTokens:
    tokens: np.ndarray  # (L, d_model)
    frame_index: int = 0


def _tokens(frame) -> np.ndarray:
    return np.asarray(frame.tokens if isinstance(frame, FrameTokens) else frame, dtype=np.float64)


def project_qkv(frame, w: ProjectionWeights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = _tokens(frame)
    if x.ndim != 2 or x.shape[1] != w.d_model:
        raise ValueError(f"token shape {x.shape} incompatible with d_model {w.d_model}")
    return x @ w.w_q, x @ w.w_k, x @ w.w_v


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def attend(q, k, v, return_weights: bool = False):
    """``softmax(q k^T / sqrt(d)) v`` with row-per-token matrices."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("attend expects 2-D Q, K, V")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"K has {k.shape[0]} rows but V has {v.shape[0]}")
    if q.shape[1] != k.shape[1] or k.shape[1] != v.shape[1]:
        raise ValueError(f"column mismatch: Q {q.shape}, K {k.shape}, V {v.shape}")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
        raise ValueError("non-finite attention input")
    weights = softmax(q @ k.T / np.sqrt(q.shape[1]))
    out = weights @ v
    return (out, weights) if return_weights else out


def window_bounds(i: int, n_frames: int, radius: int) -> tuple[int, int]:
    """Inclusive window ``[max(0, i - N), min(F - 1, i + N)]``."""
    return max(0, i - radius), min(n_frames - 1, i + radius)


def frame_mixing_matrix(n_frames: int, mode: AttentionMode) -> np.ndarray:
    """Row ``i`` holds the weights combining per-frame K/V into frame ``i``'s K/V.

    Windows clipped at the clip ends are renormalised by their true size.
    """
    if n_frames < 1:
        raise ValueError("video must contain at least one frame")
    mix = np.zeros((n_frames, n_frames))
    if mode.variant == SELF:
        np.fill_diagonal(mix, 1.0)
    elif mode.variant == FIRST_FRAME:
        mix[:, 0] = 1.0
    else:
        for i in range(n_frames):
            lo, hi = window_bounds(i, n_frames, mode.window_radius)
            mix[i, lo : hi + 1] = 1.0 / (hi - lo + 1)
    return mix


def _check_video(video: Sequence, i: int) -> None:
    if len(video) == 0:
        raise ValueError("video must contain at least one frame")
    if not (0 <= i < len(video)):
        raise ValueError(f"frame index {i} out of range for {len(video)} frames")


def first_frame_kv(video: Sequence, w: ProjectionWeights, i: int) -> tuple[np.ndarray, np.ndarray]:
    _check_video(video, i)
    _, k, v = project_qkv(video[0], w)
    return k, v


def sw_cfa_kv(video: Sequence, w: ProjectionWeights, i: int, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Window-averaged keys and values for frame ``i``."""
    _check_video(video, i)
    if radius < 0:
        raise ValueError("window_radius must be ≥ 0")
    lo, hi = window_bounds(i, len(video), radius)
    k_sum = v_sum = None
    for j in range(lo, hi + 1):  # fixed left-to-right order
        _, k, v = project_qkv(video[j], w)
        k_sum = k if k_sum is None else k_sum + k
        v_sum = v if v_sum is None else v_sum + v
    count = hi - lo + 1
    return k_sum / count, v_sum / count


def cross_frame_attend(video: Sequence, w: ProjectionWeights, mode: AttentionMode, i: int) -> np.ndarray:
    _check_video(video, i)
    q, k, v = project_qkv(video[i], w)
    if mode.variant == FIRST_FRAME:
        k, v = first_frame_kv(video, w, i)
    elif mode.variant == SLIDING_WINDOW:
        k, v = sw_cfa_kv(video, w, i, mode.window_radius)
    return attend(q, k, v)
