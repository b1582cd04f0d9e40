"""Temporal-consistency and fidelity metrics.

* frame consistency (FC): mean cosine similarity of consecutive centred frames, x10
* warping error (WE): MSE between a frame and its flow-aligned successor, x1000
* PSNR with a fixed cap for identical inputs
* an exhaustive SAD block matcher for when no ground-truth flow exists
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PSNR_CAP",
    "FC_SCALE",
    "WE_SCALE",
    "frame_consistency",
    "warping_error",
    "warp_backward",
    "estimate_flow",
    "constant_flow",
    "psnr",
    "video_psnr",
    "write_metrics_csv",
    "METRIC_COLUMNS",
]

PSNR_CAP = 99.0
FC_SCALE = 10.0
WE_SCALE = 1000.0
METRIC_COLUMNS = ("clip_id", "task", "mode", "FC", "WE", "PSNR")


def _frames(video) -> np.ndarray:
    arr = np.asarray(getattr(video, "frames", video), dtype=np.float64)
    if arr.ndim == 3:  # (F, H, W) grayscale
        arr = arr[:, None]
    return arr


def _cosine(fa: np.ndarray, fb: np.ndarray) -> float:
    a = fa.ravel() - fa.mean()
    b = fb.ravel() - fb.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        # constant frame: similarity 1 only when both are the same constant
        return 1.0 if na == nb == 0.0 and np.array_equal(fa, fb) else 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def frame_consistency(video) -> float:
    frames = _frames(video)
    if frames.shape[0] < 2:
        raise ValueError("frame consistency needs at least 2 frames")
    sims = [_cosine(frames[i], frames[i + 1]) for i in range(frames.shape[0] - 1)]
    return FC_SCALE * float(np.mean(sims))


def constant_flow(shape_hw: tuple[int, int], dx: float, dy: float) -> np.ndarray:
    h, w = shape_hw
    flow = np.empty((h, w, 2))
    flow[..., 0] = dx
    flow[..., 1] = dy
    return flow


def warp_backward(frame: np.ndarray, flow: np.ndarray, circular: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``frame`` at ``(x + dx, y + dy)`` with bilinear interpolation.

    Returns the warped frame and a validity mask (all True when ``circular``).
    """
    frame = np.asarray(frame, dtype=np.float64)
    c, h, w = frame.shape
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != (h, w, 2):
        raise ValueError(f"flow shape {flow.shape} does not match frame {(h, w)}")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow must be finite")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = xx + flow[..., 0]
    sy = yy + flow[..., 1]
    if circular:
        sx = np.mod(sx, w)
        sy = np.mod(sy, h)
        valid = np.ones((h, w), dtype=bool)
    else:
        valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
        sx = np.clip(sx, 0, w - 1)
        sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = sx - x0
    fy = sy - y0
    x1 = (x0 + 1) % w if circular else np.minimum(x0 + 1, w - 1)
    y1 = (y0 + 1) % h if circular else np.minimum(y0 + 1, h - 1)
    out = (
        frame[:, y0, x0] * ((1 - fx) * (1 - fy))
        + frame[:, y0, x1] * (fx * (1 - fy))
        + frame[:, y1, x0] * ((1 - fx) * fy)
        + frame[:, y1, x1] * (fx * fy)
    )
    return out, valid


def _as_flow_field(flow, hw) -> np.ndarray:
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape == (2,):
        return constant_flow(hw, flow[0], flow[1])
    return flow


def warping_error(video, flows: Sequence, circular: bool = False) -> float:
    """Mean over consecutive pairs of the valid-pixel MSE after aligning frame t+1 to t.

    ``flows[t]`` maps frame ``t`` to ``t + 1``: an (H, W, 2) field or a
    constant ``(dx, dy)`` pair.
    """
    frames = _frames(video)
    n = frames.shape[0]
    if len(flows) != n - 1:
        raise ValueError(f"expected {n - 1} flows for {n} frames, got {len(flows)}")
    if n < 2:
        raise ValueError("warping error needs at least 2 frames")
    errs = []
    for t in range(n - 1):
        flow = _as_flow_field(flows[t], frames.shape[2:])
        warped, valid = warp_backward(frames[t + 1], flow, circular=circular)
        if not valid.any():
            continue
        diff = (warped - frames[t])[:, valid]
        errs.append(float(np.mean(diff * diff)))
    if not errs:
        raise ValueError("no valid pixels for warping error")
    return WE_SCALE * float(np.mean(errs))


def estimate_flow(a, b, block: int = 7, radius: int = 4) -> np.ndarray:
    """Block-wise exhaustive SAD search; returns an integer (H, W, 2) flow.

    Candidates whose displaced block leaves the frame are skipped. Ties go to
    the smaller squared displacement, then to the lexicographically smaller
    ``(dx, dy)``.
    """
    a = _frames([a])[0]
    b = _frames([b])[0]
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if block < 1 or radius < 0:
        raise ValueError("block must be >= 1 and radius >= 0")
    _, h, w = a.shape
    candidates = sorted(
        ((dx, dy) for dx in range(-radius, radius + 1) for dy in range(-radius, radius + 1)),
        key=lambda d: (d[0] ** 2 + d[1] ** 2, d[0], d[1]),
    )
    flow = np.zeros((h, w, 2))
    for y0 in range(0, h, block):
        for x0 in range(0, w, block):
            y1, x1 = min(y0 + block, h), min(x0 + block, w)
            ref = a[:, y0:y1, x0:x1]
            best, best_sad = (0, 0), np.inf
            for dx, dy in candidates:
                if y0 + dy < 0 or x0 + dx < 0 or y1 + dy > h or x1 + dx > w:
                    continue
                sad = np.abs(b[:, y0 + dy : y1 + dy, x0 + dx : x1 + dx] - ref).sum()
                if sad < best_sad:  # strict: earlier (preferred) candidates win ties
                    best, best_sad = (dx, dy), sad
            flow[y0:y1, x0:x1] = best
    return flow


def psnr(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def video_psnr(video, reference) -> float:
    """PSNR over all frames pooled into one MSE."""
    return psnr(_frames(video), _frames(reference))


def write_metrics_csv(rows: Iterable[dict], path):
    """Write rows to ``path``, or to ``path`` itself when it is an open text stream."""
    if hasattr(path, "write"):
        _write_rows(rows, path)
        return path
    path = Path(path)
    with open(path, "w", newline="") as fh:
        _write_rows(rows, fh)
    return path


def _write_rows(rows, fh) -> None:
    writer = csv.DictWriter(fh, fieldnames=list(METRIC_COLUMNS), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in METRIC_COLUMNS})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return v
