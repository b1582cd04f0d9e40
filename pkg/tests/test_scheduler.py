import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tdm.scheduler import (
    TimestepLadder,
    ddim_backward_step,
    ddim_inversion_step,
    default_schedule,
    forward_diffuse,
    make_schedule,
    select_timesteps,
)


def test_two_step_linear_alpha_bars():
    s = make_schedule(2, 0.1, 0.2, "linear")
    np.testing.assert_allclose(s.betas, [0.1, 0.2], rtol=0, atol=1e-15)
    np.testing.assert_allclose(s.alpha_bars, [0.9, 0.72], rtol=1e-14)


def test_single_step_schedule():
    s = make_schedule(1, 0.5, 0.5, "linear")
    np.testing.assert_allclose(s.alpha_bars, [0.5], rtol=1e-15)


@pytest.mark.parametrize("start,end", [(1.5, 1.6), (0.0, 0.1), (0.1, 1.0), (-0.1, 0.2)])
def test_beta_out_of_range(start, end):
    with pytest.raises(ValueError, match="beta out of range"):
        make_schedule(2, start, end, "linear")


def test_bad_total_steps_and_kind():
    with pytest.raises(ValueError):
        make_schedule(0, 0.1, 0.2)
    with pytest.raises(ValueError):
        make_schedule(10, 0.1, 0.2, "cosine")


def test_default_schedule_invariants():
    s = default_schedule()
    assert s.total_steps == 1000
    assert s.alpha_bar_zero == 1.0
    assert np.all((s.betas > 0) & (s.betas < 1))
    assert np.all(np.diff(s.alpha_bars) < 0)
    running = np.cumprod(1.0 - s.betas)
    np.testing.assert_allclose(s.alpha_bars, running, rtol=1e-12)
    # scaled_linear: sqrt(beta) is linear in t
    root = np.sqrt(s.betas)
    np.testing.assert_allclose(np.diff(root, 2), 0.0, atol=1e-15)
    assert math.isclose(s.betas[0], 8.5e-4) and math.isclose(s.betas[-1], 1.2e-2)


def test_forward_diffuse_examples():
    s = make_schedule(2, 0.1, 0.2, "linear")
    assert forward_diffuse(np.array(1.0), 2, np.array(0.0), s) == pytest.approx(math.sqrt(0.72), abs=1e-15)
    z = np.random.default_rng(0).standard_normal((3, 4))
    assert np.array_equal(forward_diffuse(z, 0, np.ones_like(z), s), z)
    half = make_schedule(1, 0.5, 0.5, "linear")
    assert forward_diffuse(np.array(0.0), 1, np.array(1.0), half) == pytest.approx(0.7071067811865476, abs=1e-15)


def test_forward_diffuse_errors():
    s = default_schedule()
    with pytest.raises(ValueError):
        forward_diffuse(np.zeros(3), 5, np.zeros(4), s)
    with pytest.raises(ValueError):
        forward_diffuse(np.zeros(3), 1001, np.zeros(3), s)


def test_forward_diffuse_shrinks_norm():
    s = default_schedule()
    z = np.random.default_rng(1).standard_normal(50)
    norms = [np.linalg.norm(forward_diffuse(z, t, np.zeros_like(z), s)) for t in range(1, 1001, 37)]
    assert all(b < a for a, b in zip(norms, norms[1:]))


def _two_level(ab_hi, ab_lo):
    """Schedule whose alpha_bars are exactly (ab_hi, ab_lo) at t = 1, 2."""
    b1 = 1.0 - ab_hi
    b2 = 1.0 - ab_lo / ab_hi
    return make_schedule(2, b1, b2, "linear")


def test_backward_step_examples():
    s = make_schedule(1, 0.75, 0.75, "linear")  # alpha_bar(1) = 0.25
    assert ddim_backward_step(np.array(0.5), np.array(0.0), 1, 0, s) == pytest.approx(1.0, abs=1e-15)
    s2 = _two_level(0.9, 0.5)
    out = ddim_backward_step(np.array(1.0), np.array(1.0), 2, 1, s2)
    pred = (1 - math.sqrt(0.5)) / math.sqrt(0.5)
    assert out == pytest.approx(math.sqrt(0.9) * pred + math.sqrt(0.1), abs=1e-12)
    assert out == pytest.approx(0.70918, abs=1e-5)


def test_inversion_step_example():
    s = make_schedule(1, 0.75, 0.75, "linear")
    assert ddim_inversion_step(np.array(2.0), np.array(0.0), 0, 1, s) == pytest.approx(1.0, abs=1e-15)


def test_equal_levels_are_identity():
    # float64 products are exactly 1 when beta underflows against 1
    s = make_schedule(3, 1e-17, 1e-17, "linear")
    assert s.alpha_bar(1) == s.alpha_bar(2) == 1.0
    z = np.random.default_rng(2).standard_normal(5)
    eps = np.random.default_rng(3).standard_normal(5)
    assert np.array_equal(ddim_backward_step(z, eps, 2, 1, s), z)
    assert np.array_equal(ddim_inversion_step(z, eps, 1, 2, s), z)


def test_step_direction_errors():
    s = default_schedule()
    z = np.zeros(2)
    with pytest.raises(ValueError):
        ddim_backward_step(z, z, 10, 10, s)
    with pytest.raises(ValueError):
        ddim_inversion_step(z, z, 10, 5, s)
    with pytest.raises(ValueError):
        ddim_backward_step(z, np.zeros(3), 10, 5, s)
    with pytest.raises(ValueError):
        ddim_inversion_step(z, z, 0, 1001, s)


@given(seed=st.integers(0, 2**32 - 1), t=st.integers(0, 999), gap=st.integers(1, 1000))
def test_round_trip_constant_eps(seed, t, gap):
    s = default_schedule()
    t_next = min(1000, t + gap)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(16)
    c = rng.standard_normal(16)
    back = ddim_backward_step(ddim_inversion_step(z, c, t, t_next, s), c, t_next, t, s)
    assert np.linalg.norm(back - z) <= 1e-12 * max(1.0, np.linalg.norm(z))


def test_zero_eps_same_ladder_round_trip():
    s = default_schedule()
    ladder = select_timesteps(s, 10)
    z0 = np.random.default_rng(4).standard_normal(32)
    z = z0
    for t, t_next in ladder.ascending_pairs():
        z = ddim_inversion_step(z, np.zeros_like(z), t, t_next, s)
    np.testing.assert_allclose(z, math.sqrt(s.alpha_bar(1000)) * z0, rtol=1e-12)
    for t, t_prev in ladder.descending_pairs():
        z = ddim_backward_step(z, np.zeros_like(z), t, t_prev, s)
    np.testing.assert_allclose(z, z0, rtol=1e-12, atol=1e-14)


def test_select_timesteps_examples():
    assert select_timesteps(default_schedule(), 10).steps == tuple(range(100, 1001, 100))
    assert select_timesteps(make_schedule(10, 0.01, 0.02), 10).steps == tuple(range(1, 11))
    with pytest.raises(ValueError):
        select_timesteps(make_schedule(5, 0.01, 0.02), 7)


@given(n=st.integers(1, 1000))
def test_ladder_invariants(n):
    ladder = select_timesteps(default_schedule(), n)
    assert ladder.count == n
    assert ladder.top == 1000
    assert ladder.steps[0] >= 1
    assert all(b > a for a, b in zip(ladder.steps, ladder.steps[1:]))
    pairs = ladder.descending_pairs()
    assert pairs[0][0] == 1000 and pairs[-1][1] == 0


def test_ladder_rejects_bad_steps():
    with pytest.raises(ValueError):
        TimestepLadder((3, 2))
    with pytest.raises(ValueError):
        TimestepLadder((0, 5))


def test_determinism():
    s = default_schedule()
    z = np.random.default_rng(5).standard_normal(8)
    e = np.random.default_rng(6).standard_normal(8)
    a = ddim_inversion_step(z, e, 100, 200, s)
    b = ddim_inversion_step(z, e, 100, 200, s)
    assert a.tobytes() == b.tobytes()
