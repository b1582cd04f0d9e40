"""Synthetic clean clips, task degradations, and the on-disk clip format.

Clean clips are circular translations of a seeded base frame, so the
ground-truth flow between consecutive frames is exact everywhere.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

__all__ = [
    "PATTERNS",
    "FrameSequence",
    "DegradationSpec",
    "generate_clean_video",
    "degrade",
    "degrade_frame",
    "default_spec",
    "haze_depth",
    "write_clip",
    "read_clip",
    "training_pairs",
    "translating_clips",
]

PATTERNS = ("checker", "gradient-blobs", "textured-noise-field")
TASK_PARAMS = {
    "denoise": {"sigma": 0.2},
    "dehaze": {"beta": 1.2, "airlight": 0.85},
    "derain": {"density": 0.02, "angle": 15.0, "length": 7, "intensity": 0.6},
    "mp4": {"block": 8, "quant": 0.7, "levels": 8},
    "sr4": {"factor": 4},
}


@dataclass
class FrameSequence:
    frames: np.ndarray  # (F, C, H, W), values in [0, 1]
    flow: list[tuple[int, int]] | None = None  # per consecutive pair (dx, dy)
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be (F, C, H, W), got {self.frames.shape}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.frames.shape[1:])


@dataclass(frozen=True)
class DegradationSpec:
    task: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def resolved(self) -> dict:
        if self.task not in TASK_PARAMS:
            raise ValueError(f"unknown task {self.task!r}")
        unknown = set(self.params) - set(TASK_PARAMS[self.task])
        if unknown:
            raise ValueError(f"unknown {self.task} parameters: {sorted(unknown)}")
        params = {**TASK_PARAMS[self.task], **self.params}
        _check_params(self.task, params)
        return params


def default_spec(task: str, seed: int = 0, **params) -> DegradationSpec:
    return DegradationSpec(task, dict(params), seed)


# ---------------------------------------------------------------------------
# clean clips


def _base_frame(pattern: str, shape: tuple[int, int, int], rng: np.random.Generator) -> np.ndarray:
    c, h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if pattern == "checker":
        cell = int(rng.integers(4, 9))
        board = ((yy // cell + xx // cell) % 2).astype(np.float64)
        lo, hi = rng.uniform(0.1, 0.35, c), rng.uniform(0.65, 0.9, c)
        return lo[:, None, None] + (hi - lo)[:, None, None] * board[None]
    if pattern == "gradient-blobs":
        img = np.empty(shape)
        for ch in range(c):
            # periodic ramps keep the circular shift seamless
            kx, ky = rng.integers(1, 3, 2)
            ramp = 0.5 + 0.25 * np.sin(2 * np.pi * (kx * xx / w + ky * yy / h) + rng.uniform(0, 2 * np.pi))
            img[ch] = ramp
        for _ in range(int(rng.integers(3, 7))):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            rad = rng.uniform(0.08, 0.2) * min(h, w)
            dy = np.minimum(np.abs(yy - cy), h - np.abs(yy - cy))
            dx = np.minimum(np.abs(xx - cx), w - np.abs(xx - cx))
            blob = np.exp(-(dx**2 + dy**2) / (2 * rad**2))
            img += rng.uniform(-0.35, 0.35, c)[:, None, None] * blob[None]
        return np.clip(img, 0.0, 1.0)
    if pattern == "textured-noise-field":
        # band-limited periodic noise via random low-frequency Fourier coefficients
        img = np.empty(shape)
        for ch in range(c):
            spec = np.zeros((h, w), dtype=complex)
            kmax = 6
            for ky in range(-kmax, kmax + 1):
                for kx in range(-kmax, kmax + 1):
                    if (kx or ky) and kx * kx + ky * ky <= kmax * kmax:
                        spec[ky % h, kx % w] = rng.standard_normal() + 1j * rng.standard_normal()
            field_ = np.real(np.fft.ifft2(spec))
            field_ = (field_ - field_.mean()) / (field_.std() + 1e-12)
            img[ch] = 0.5 + 0.18 * field_
        return np.clip(img, 0.0, 1.0)
    raise ValueError(f"unknown pattern {pattern!r}; expected one of {PATTERNS}")


def generate_clean_video(
    pattern: str,
    shape: tuple[int, int, int],
    n_frames: int,
    velocity: tuple[int, int] = (0, 0),
    seed: int = 0,
) -> FrameSequence:
    """Frame ``t`` is frame 0 circularly shifted by ``t * (dx, dy)`` pixels."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    c, h, w = shape
    dx, dy = (int(v) for v in velocity)
    if (dx, dy) != tuple(velocity):
        raise ValueError(f"velocity must be integer pixels per frame, got {velocity}")
    limit = min(h, w) // n_frames
    if max(abs(dx), abs(dy)) > limit:
        raise ValueError(f"velocity {velocity} too large: |v| must be <= {limit} for {n_frames} frames")
    base = _base_frame(pattern, tuple(shape), np.random.default_rng([seed, 101]))
    frames = np.stack([np.roll(base, (t * dy, t * dx), axis=(1, 2)) for t in range(n_frames)])
    meta = {"pattern": pattern, "seed": int(seed), "velocity": [dx, dy]}
    return FrameSequence(frames, [(dx, dy)] * (n_frames - 1), meta)


# ---------------------------------------------------------------------------
# degradations


def haze_depth(h: int, w: int) -> np.ndarray:
    """Fixed synthetic depth: 1 at the top row falling linearly to 0.2 at the bottom."""
    return np.broadcast_to(np.linspace(1.0, 0.2, h)[:, None], (h, w))


def _box(x: np.ndarray, k: int) -> np.ndarray:
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
    out = np.zeros_like(x)
    for i in range(k):
        for j in range(k):
            out += xp[:, i : i + x.shape[1], j : j + x.shape[2]]
    return out / (k * k)


def _rain_mask(h: int, w: int, p: dict, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros((h, w))
    n_drops = rng.binomial(h * w, p["density"])
    if n_drops == 0:
        return mask
    theta = math.radians(p["angle"])
    ys = rng.integers(0, h, n_drops)
    xs = rng.integers(0, w, n_drops)
    for s in range(int(p["length"])):
        yy = np.clip(np.round(ys + s * math.cos(theta)).astype(int), 0, h - 1)
        xx = np.clip(np.round(xs + s * math.sin(theta)).astype(int), 0, w - 1)
        mask[yy, xx] = 1.0
    return mask


def degrade_frame(frame: np.ndarray, task: str, p: dict, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(frame, dtype=np.float64)
    c, h, w = x.shape
    if task == "denoise":
        if p["sigma"] == 0:
            return x.copy()
        return np.clip(x + p["sigma"] * rng.standard_normal(x.shape), 0.0, 1.0)
    if task == "dehaze":
        if p["beta"] == 0:
            return x.copy()
        trans = np.exp(-p["beta"] * haze_depth(h, w))[None]
        return np.clip(x * trans + p["airlight"] * (1.0 - trans), 0.0, 1.0)
    if task == "derain":
        mask = _rain_mask(h, w, p, rng)
        if not mask.any():
            return x.copy()
        return np.clip(x + p["intensity"] * mask[None], 0.0, 1.0)
    if task == "mp4":
        b, q = int(p["block"]), p["quant"]
        if q == 0:
            return x.copy()
        if h % b or w % b:
            raise ValueError(f"frame {h}x{w} not divisible by mp4 block {b}")
        means = x.reshape(c, h // b, b, w // b, b).mean(axis=(2, 4))
        levels = p["levels"]
        post = np.round(means * levels) / levels
        coarse = post.repeat(b, axis=1).repeat(b, axis=2)
        blended = (1.0 - q) * x + q * coarse
        ringing = blended - _box(blended, 3)
        return np.clip(blended + 0.5 * q * ringing, 0.0, 1.0)
    if task == "sr4":
        f = int(p["factor"])
        if h % f or w % f:
            raise ValueError(f"frame {h}x{w} not divisible by SR factor {f}")
        low = x.reshape(c, h // f, f, w // f, f).mean(axis=(2, 4))
        return low.repeat(f, axis=1).repeat(f, axis=2)
    raise ValueError(f"unknown task {task!r}")


def _check_params(task: str, p: dict) -> None:
    ranges = {
        "sigma": (0.0, 1.0),
        "beta": (0.0, 5.0),
        "airlight": (0.0, 1.0),
        "density": (0.0, 0.5),
        "intensity": (0.0, 1.0),
        "quant": (0.0, 1.0),
    }
    for key, (lo, hi) in ranges.items():
        if key in p and not (lo <= p[key] <= hi):
            raise ValueError(f"{task} parameter {key}={p[key]} outside [{lo}, {hi}]")
    if task == "derain" and p["length"] < 1:
        raise ValueError("rain streak length must be >= 1")
    if task == "mp4" and (p["block"] < 1 or p["levels"] < 1):
        raise ValueError("mp4 block and levels must be >= 1")
    if task == "sr4" and p["factor"] != 4:
        raise ValueError("sr4 factor is fixed at 4")


def degrade(clean: FrameSequence, spec: DegradationSpec) -> FrameSequence:
    params = spec.resolved()
    root = np.random.SeedSequence([int(spec.seed), 202])
    rngs = [np.random.default_rng(s) for s in root.spawn(len(clean))]
    frames = np.stack([degrade_frame(f, spec.task, params, r) for f, r in zip(clean.frames, rngs)])
    meta = {**clean.meta, "task": spec.task, "params": params, "degrade_seed": int(spec.seed)}
    return FrameSequence(frames, clean.flow, meta)


# ---------------------------------------------------------------------------
# seeded datasets


def _child(*key: int) -> int:
    return int(np.random.SeedSequence([int(v) for v in key]).generate_state(1)[0])


def training_pairs(tasks, n_per_task: int, shape: tuple[int, int, int], seed: int = 0) -> list[tuple]:
    """Single-image ``(clean, degraded, task)`` triples, tasks interleaved, patterns cycled."""
    out = []
    for i in range(n_per_task):
        for j, task in enumerate(tasks):
            k = i * len(tasks) + j
            clip = generate_clean_video(PATTERNS[k % len(PATTERNS)], shape, 1, (0, 0), seed=_child(seed, 11, k))
            deg = degrade(clip, default_spec(task, seed=_child(seed, 12, k)))
            out.append((clip.frames[0], deg.frames[0], task))
    return out


def translating_clips(tasks, n_per_task: int, shape: tuple[int, int, int], n_frames: int, seed: int = 0) -> list[tuple]:
    """``(degraded, clean, task)`` clips moving at a seeded nonzero integer velocity."""
    limit = max(1, min(2, min(shape[1:]) // n_frames))
    rng = np.random.default_rng([seed, 13])
    out = []
    for task in tasks:
        for k in range(n_per_task):
            v = (0, 0)
            while v == (0, 0):
                v = tuple(int(x) for x in rng.integers(-limit, limit + 1, size=2))
            clean = generate_clean_video(PATTERNS[k % len(PATTERNS)], shape, n_frames, v, seed=_child(seed, 14, k))
            out.append((degrade(clean, default_spec(task, seed=_child(seed, 15, k))), clean, task))
    return out


# ---------------------------------------------------------------------------
# clip directories


def write_clip(seq: FrameSequence, directory, raw: bool = False, extra: dict | None = None) -> Path:
    """Write ``frame_%05d.png`` (8-bit) files, optional ``.f32`` dumps, and ``manifest.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    c, h, w = seq.shape
    for i, frame in enumerate(seq.frames):
        arr = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
        img = Image.fromarray(arr[0] if c == 1 else arr.transpose(1, 2, 0), mode="L" if c == 1 else "RGB")
        img.save(out / f"frame_{i:05d}.png", optimize=False)
        if raw:
            (out / f"frame_{i:05d}.f32").write_bytes(np.ascontiguousarray(frame, dtype="<f4").tobytes())
    manifest = {
        "task": seq.meta.get("task"),
        "params": seq.meta.get("params", {}),
        "seed": seq.meta.get("seed"),
        "shape": [c, h, w],
        "n_frames": len(seq),
        "flow": [list(v) for v in (seq.flow or [])],
        "raw": bool(raw),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def read_clip(directory) -> FrameSequence:
    src = Path(directory)
    manifest_path = src / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    pngs = sorted(src.glob("frame_*.png"))
    if not pngs:
        raise FileNotFoundError(f"no frame_*.png files in {src}")
    frames = []
    for png in pngs:
        raw_path = png.with_suffix(".f32")
        if manifest.get("raw") and raw_path.exists():
            frames.append(np.frombuffer(raw_path.read_bytes(), dtype="<f4").astype(np.float64).reshape(manifest["shape"]))
        else:
            arr = np.asarray(Image.open(png), dtype=np.float64) / 255.0
            frames.append(arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1))
    flow = [tuple(v) for v in manifest["flow"]] if manifest.get("flow") else None
    meta = {k: manifest[k] for k in ("task", "params", "seed") if k in manifest}
    return FrameSequence(np.stack(frames), flow, meta)
