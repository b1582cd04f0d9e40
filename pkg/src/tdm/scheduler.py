"""Noise schedules and deterministic DDIM latent updates.

Timesteps are 1-based: ``alpha_bar(t)`` for ``t in [1, T]`` is the cumulative
signal retention after ``t`` noising steps, and ``alpha_bar(0)`` is the
clean-latent convention value ``1.0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Schedule",
    "TimestepLadder",
    "make_schedule",
    "default_schedule",
    "forward_diffuse",
    "ddim_backward_step",
    "ddim_inversion_step",
    "select_timesteps",
]

DEFAULT_TOTAL_STEPS = 1000
DEFAULT_BETA_START = 8.5e-4
DEFAULT_BETA_END = 1.2e-2
DEFAULT_KIND = "scaled_linear"


@dataclass(frozen=True)
class Schedule:
    total_steps: int
    betas: np.ndarray
    alpha_bars: np.ndarray
    alpha_bar_zero: float = 1.0

    def alpha_bar(self, t: int) -> float:
        """Cumulative retention at timestep ``t`` (``t = 0`` gives 1.0)."""
        t = _check_level(t, self.total_steps, allow_zero=True)
        if t == 0:
            return self.alpha_bar_zero
        return float(self.alpha_bars[t - 1])


@dataclass(frozen=True)
class TimestepLadder:
    steps: tuple[int, ...]

    def __post_init__(self):
        steps = tuple(int(t) for t in self.steps)
        if not steps or steps[0] < 1 or any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError(f"ladder steps must be nonempty, >= 1 and strictly increasing: {self.steps}")
        object.__setattr__(self, "steps", steps)

    @property
    def count(self) -> int:
        return len(self.steps)

    @property
    def top(self) -> int:
        return self.steps[-1]

    def ascending_pairs(self) -> list[tuple[int, int]]:
        """``(t, t_next)`` pairs from the clean level 0 up to the top step."""
        levels = (0,) + self.steps
        return list(zip(levels[:-1], levels[1:]))

    def descending_pairs(self) -> list[tuple[int, int]]:
        """``(t, t_prev)`` pairs from the top step down to level 0."""
        return [(b, a) for a, b in reversed(self.ascending_pairs())]


def make_schedule(
    total_steps: int = DEFAULT_TOTAL_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    kind: str = DEFAULT_KIND,
) -> Schedule:
    """Build a beta ladder and its cumulative products.

    ``scaled_linear`` interpolates ``sqrt(beta)`` linearly and squares it.
    """
    if int(total_steps) != total_steps or total_steps < 1:
        raise ValueError(f"total_steps must be a positive integer, got {total_steps}")
    total_steps = int(total_steps)
    for name, b in (("beta_start", beta_start), ("beta_end", beta_end)):
        if not (0.0 < b < 1.0):
            raise ValueError(f"beta out of range: {name}={b} not in (0, 1)")
    if beta_start > beta_end:
        raise ValueError(f"beta_start ({beta_start}) must not exceed beta_end ({beta_end})")

    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, total_steps, dtype=np.float64)
    elif kind == "scaled_linear":
        betas = np.linspace(beta_start**0.5, beta_end**0.5, total_steps, dtype=np.float64) ** 2
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")

    alpha_bars = np.cumprod(1.0 - betas)
    betas.setflags(write=False)
    alpha_bars.setflags(write=False)
    return Schedule(total_steps=total_steps, betas=betas, alpha_bars=alpha_bars)


def default_schedule() -> Schedule:
    return make_schedule()


def _check_level(t, total_steps: int, allow_zero: bool) -> int:
    if int(t) != t:
        raise ValueError(f"timestep must be an integer, got {t}")
    t = int(t)
    lo = 0 if allow_zero else 1
    if not (lo <= t <= total_steps):
        raise ValueError(f"timestep {t} out of range [{lo}, {total_steps}]")
    return t


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: latent {np.shape(a)} vs {what} {np.shape(b)}")


def forward_diffuse(z0, t: int, noise, sched: Schedule) -> np.ndarray:
    """Closed-form ``q(z_t | z_0)``: ``sqrt(ab_t) z0 + sqrt(1 - ab_t) noise``.

    ``t = 0`` uses the ``alpha_bar_zero`` convention and returns ``z0``.
    """
    _check_same_shape(z0, noise, "noise")
    ab = sched.alpha_bar(_check_level(t, sched.total_steps, allow_zero=True))
    return np.sqrt(ab) * np.asarray(z0, dtype=np.float64) + np.sqrt(1.0 - ab) * np.asarray(
        noise, dtype=np.float64
    )


def _ddim_move(z_t, eps, ab_from: float, ab_to: float) -> np.ndarray:
    z_t = np.asarray(z_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if ab_from == ab_to:
        return z_t.copy()
    pred_z0 = (z_t - np.sqrt(1.0 - ab_from) * eps) / np.sqrt(ab_from)
    return np.sqrt(ab_to) * pred_z0 + np.sqrt(1.0 - ab_to) * eps


def ddim_backward_step(z_t, eps, t: int, t_prev: int, sched: Schedule) -> np.ndarray:
    """One deterministic (eta = 0) DDIM step from level ``t`` down to ``t_prev``."""
    _check_same_shape(z_t, eps, "eps")
    t = _check_level(t, sched.total_steps, allow_zero=False)
    t_prev = _check_level(t_prev, sched.total_steps, allow_zero=True)
    if t_prev >= t:
        raise ValueError(f"t_prev ({t_prev}) must be < t ({t})")
    return _ddim_move(z_t, eps, sched.alpha_bar(t), sched.alpha_bar(t_prev))


def ddim_inversion_step(z_t, eps, t: int, t_next: int, sched: Schedule) -> np.ndarray:
    """One DDIM inversion step from level ``t`` up to ``t_next``."""
    _check_same_shape(z_t, eps, "eps")
    t = _check_level(t, sched.total_steps, allow_zero=True)
    t_next = _check_level(t_next, sched.total_steps, allow_zero=False)
    if t_next <= t:
        raise ValueError(f"t_next ({t_next}) must be > t ({t})")
    return _ddim_move(z_t, eps, sched.alpha_bar(t), sched.alpha_bar(t_next))


def select_timesteps(sched: Schedule, n_steps: int) -> TimestepLadder:
    """Trailing uniform ladder: ``T - k * (T // n)`` for ``k = n-1 .. 0``.

    The largest step is always ``T``.
    """
    total = sched.total_steps
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError(f"n_steps must be a positive integer, got {n_steps}")
    if n_steps > total:
        raise ValueError(f"n_steps ({n_steps}) exceeds total_steps ({total})")
    stride = total // int(n_steps)
    steps = tuple(total - k * stride for k in range(int(n_steps) - 1, -1, -1))
    return TimestepLadder(steps=steps)
