import math

import numpy as np
import pytest

from tdm.attention import AttentionMode
from tdm.codec import encode
from tdm.denoiser import constant_eps_model, init_denoiser, zero_eps_model
from tdm.metrics import warping_error
from tdm.pipeline import (
    ABLATION_ROWS,
    RestoreConfig,
    ablation_configs,
    fine_tune,
    invert_video,
    restore_video,
    run_ablation,
    sample_video,
)
from tdm.synth import default_spec, degrade, generate_clean_video, training_pairs, translating_clips


def _clip(n_frames=4, size=16, seed=0):
    clean = generate_clean_video("textured-noise-field", (1, size, size), n_frames, (1, 0), seed=seed)
    return degrade(clean, default_spec("denoise", seed=seed)), clean


def _perturbed(cfg, seed=0):
    m = init_denoiser(seed, cfg)
    rng = np.random.default_rng(seed)
    for v in m.control.values():
        if not v.any():
            v[...] = 0.1 * rng.standard_normal(v.shape)
    return m


def test_zero_eps_inversion_is_rescaling(tiny_config):
    deg, _ = _clip()
    cfg = RestoreConfig()
    lat = invert_video(zero_eps_model(tiny_config), deg, cfg)
    assert lat.timestep_level == 1000 and len(lat.latents) == 4
    scale = math.sqrt(cfg.schedule().alpha_bar(1000))
    for g, f in zip(lat.latents, deg.frames):
        np.testing.assert_allclose(g.data, scale * encode(f).data, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("sampling", [10, 32])
def test_zero_eps_identity(tiny_config, sampling):
    deg, _ = _clip()
    cfg = RestoreConfig(inversion_steps=10, sampling_steps=sampling)
    out, row = restore_video(zero_eps_model(tiny_config), deg, cfg)
    assert np.max(np.abs(out.frames - deg.frames)) <= 1e-8
    assert row["WE"] == pytest.approx(warping_error(deg, deg.flow, circular=True), abs=1e-6)


def test_constant_eps_same_ladder_round_trip(tiny_config):
    deg, _ = _clip()
    model = constant_eps_model(0.4, tiny_config)
    cfg = RestoreConfig(inversion_steps=10, sampling_steps=10)
    lat = invert_video(model, deg, cfg)
    out = sample_video(model, lat, deg, cfg)
    assert np.max(np.abs(out.frames - deg.frames)) <= 1e-8


def test_inversion_seed_independence(tiny_config):
    deg, _ = _clip(n_frames=3)
    model = _perturbed(tiny_config)
    a, _ = restore_video(model, deg, RestoreConfig(seed=1, sampling_steps=8))
    b, _ = restore_video(model, deg, RestoreConfig(seed=2, sampling_steps=8))
    assert a.frames.tobytes() == b.frames.tobytes()
    c, _ = restore_video(model, deg, RestoreConfig(seed=1, sampling_steps=8, use_inversion=False))
    d, _ = restore_video(model, deg, RestoreConfig(seed=2, sampling_steps=8, use_inversion=False))
    assert not np.array_equal(c.frames, d.frames)
    again, _ = restore_video(model, deg, RestoreConfig(seed=1, sampling_steps=8, use_inversion=False))
    assert again.frames.tobytes() == c.frames.tobytes()


def test_single_frame_modes_agree(tiny_config):
    deg, clean = _clip(n_frames=1)
    model = _perturbed(tiny_config, seed=3)
    ref, row = restore_video(model, deg, RestoreConfig(mode=AttentionMode.self_attention(), sampling_steps=6), clean=clean)
    for n in (1, 3, 7):
        out, _ = restore_video(model, deg, RestoreConfig(mode=AttentionMode.sliding_window(n), sampling_steps=6))
        np.testing.assert_array_equal(out.frames, ref.frames)
    assert row["FC"] is None and row["WE"] is None and row["PSNR"] is not None


@pytest.mark.parametrize("n_frames", [1, 2, 5])
def test_frame_count_preserved(tiny_config, n_frames):
    deg, clean = _clip(n_frames=n_frames)
    out, _ = restore_video(_perturbed(tiny_config), deg, RestoreConfig(sampling_steps=4, inversion_steps=3), clean=clean)
    assert out.frames.shape == deg.frames.shape
    assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0


def test_sample_video_rejects_wrong_level(tiny_config):
    deg, _ = _clip(n_frames=2)
    model = zero_eps_model(tiny_config)
    lat = invert_video(model, deg, RestoreConfig())
    with pytest.raises(ValueError):
        sample_video(model, lat.replaced(lat.stacked(), 500), deg, RestoreConfig())
    with pytest.raises(ValueError):
        sample_video(model, lat, deg.frames[:1], RestoreConfig())


def test_restore_config_validation():
    with pytest.raises(ValueError):
        RestoreConfig(inversion_steps=0)
    with pytest.raises(ValueError):
        RestoreConfig(sampling_steps=0)


def test_fine_tune_zero_epochs_is_noop(tiny_config):
    model = init_denoiser(0, tiny_config)
    before = model.copy()
    data = training_pairs(("denoise",), 2, (1, 16, 16))
    out, losses = fine_tune(model, data, epochs=0)
    assert losses == []
    for k in before.control:
        assert out.control[k].tobytes() == before.control[k].tobytes()


def test_fine_tune_runs_deterministically(tiny_config):
    data = training_pairs(("denoise", "derain"), 3, (1, 16, 16))
    a, la = fine_tune(init_denoiser(0, tiny_config), data, steps=5, seed=4)
    b, lb = fine_tune(init_denoiser(0, tiny_config), data, steps=5, seed=4)
    assert la == lb and len(la) == 5 and all(x >= 0 for x in la)
    base = init_denoiser(0, tiny_config)
    assert all(a.base[k].tobytes() == base.base[k].tobytes() for k in base.base)
    assert all(np.array_equal(a.control[k], b.control[k]) for k in a.control)
    with pytest.raises(ValueError):
        fine_tune(init_denoiser(0, tiny_config), [], epochs=1)


def test_ablation_configs_flags():
    rows = ablation_configs(RestoreConfig())
    assert tuple(rows) == ABLATION_ROWS
    assert rows["T+I"][1] == {"TPG": True, "Inv": True, "SW-CFA": False}
    assert rows["T+I"][0].mode.variant == "self_attention"
    assert rows["T+S"][1]["Inv"] is False and not rows["T+S"][0].use_inversion
    assert rows["I+S"][1]["TPG"] is False and not rows["I+S"][0].use_prompt
    assert all(rows["full"][1].values())


def test_ablation_table_shape(tiny_config):
    tasks = ("denoise", "dehaze", "derain", "mp4", "sr4")
    clips = translating_clips(tasks, 1, (1, 16, 16), 2, seed=0)
    table = run_ablation(zero_eps_model(tiny_config), clips, RestoreConfig(inversion_steps=2, sampling_steps=2))
    assert [r["row"] for r in table] == list(ABLATION_ROWS)
    for r in table:
        assert list(r["tasks"]) == list(tasks)
        assert all(set(m) == {"FC", "WE", "PSNR"} for m in r["tasks"].values())
        assert len(r["clips"]) == 5
