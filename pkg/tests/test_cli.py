import csv
import io
import json

import numpy as np
import pytest

from tdm.cli import ConfigError, main, parse_config
from tdm.synth import read_clip


def test_parse_restore_example():
    cfg = parse_config(["restore", "--in", "clip/", "--task", "denoise", "--mode", "swcfa", "--N", "3", "--out", "o"])
    assert cfg.N == 3 and cfg.mode == "swcfa" and cfg.input == "clip/" and cfg.seed == 0
    assert cfg.inversion_steps == 10 and cfg.sampling_steps == 32


def test_negative_window_radius():
    with pytest.raises(ConfigError, match="window_radius must be ≥ 0"):
        parse_config(["restore", "--in", "c", "--task", "denoise", "--N", "-1", "--out", "o"])


def test_flag_overrides_file(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"sampling_steps": 16, "inversion_steps": 5, "seed": 7}))
    cfg = parse_config(["restore", "--config", str(conf), "--in", "c", "--task", "derain",
                        "--sampling-steps", "32", "--out", "o"])
    assert cfg.sampling_steps == 32 and cfg.inversion_steps == 5 and cfg.seed == 7


def test_unknown_key_and_flag(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError, match="unknown key 'bogus'"):
        parse_config(["synth", "--config", str(conf), "--out", "o"])
    with pytest.raises(ConfigError):
        parse_config(["synth", "--bogus", "--out", "o"])


@pytest.mark.parametrize(
    "argv,field",
    [
        (["synth", "--frames", "0", "--out", "o"], "frames"),
        (["synth", "--pattern", "plaid", "--out", "o"], "pattern"),
        (["restore", "--in", "c", "--out", "o"], "task"),
        (["restore", "--task", "denoise", "--out", "o"], "input"),
        (["train", "--tasks", "denoise,deblur", "--out", "o"], "tasks"),
        (["train", "--lr", "0", "--out", "o"], "lr"),
        (["synth", "--task", "denoise", "--param", "sigma=3", "--out", "o"], "sigma"),
    ],
)
def test_invalid_values_name_the_field(argv, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(argv)


def test_main_exit_codes(tmp_path, capsys):
    assert main(["restore", "--in", "x", "--task", "denoise", "--N", "-1", "--out", str(tmp_path)]) == 1
    assert "window_radius" in capsys.readouterr().err
    assert main(["metrics", "--in", str(tmp_path / "missing")]) == 1
    assert "error" in capsys.readouterr().err


def test_synth_writes_frames(tmp_path):
    out = tmp_path / "clip"
    assert main(["synth", "--pattern", "checker", "--frames", "8", "--velocity", "1,0", "--size", "16", "--out", str(out)]) == 0
    assert len(list(out.glob("frame_*.png"))) == 8
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n_frames"] == 8 and manifest["flow"] == [[1, 0]] * 7
    pair = tmp_path / "pair"
    assert main(["synth", "--task", "derain", "--frames", "3", "--size", "16", "--raw", "--out", str(pair)]) == 0
    deg = read_clip(pair / "degraded")
    assert deg.meta["task"] == "derain" and len(deg) == 3
    assert not np.array_equal(deg.frames, read_clip(pair / "clean").frames)


def test_metrics_csv(tmp_path, capsys):
    clean = tmp_path / "clean"
    main(["synth", "--pattern", "textured-noise-field", "--frames", "4", "--size", "16", "--out", str(clean)])
    capsys.readouterr()
    assert main(["metrics", "--in", str(clean), "--ref", str(clean)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert list(rows[0]) == ["clip_id", "task", "mode", "FC", "WE", "PSNR"]
    assert float(rows[0]["PSNR"]) == 99.0 and float(rows[0]["WE"]) == pytest.approx(0.0, abs=1e-6)
    assert main(["metrics", "--in", str(clean), "--out", str(tmp_path / "m")]) == 0
    assert (tmp_path / "m" / "metrics.csv").exists()


def _restore(clip, out):
    code = main(["restore", "--in", str(clip / "degraded"), "--ref", str(clip / "clean"), "--task", "denoise",
                 "--inversion-steps", "3", "--sampling-steps", "4", "--seed", "5", "--out", str(out)])
    assert code == 0
    return {p.name: p.read_bytes() for p in out.iterdir() if p.name != "timings.json"}


def test_restore_is_deterministic(tmp_path):
    clip = tmp_path / "clip"
    main(["synth", "--task", "denoise", "--frames", "3", "--size", "16", "--seed", "2", "--out", str(clip)])
    first = _restore(clip, tmp_path / "out")
    assert {"report.json", "metrics.csv", "frame_00002.f32", "frame_00002.png"} <= set(first)
    assert _restore(clip, tmp_path / "out") == first


def test_invert_and_train(tmp_path):
    clip = tmp_path / "clip"
    main(["synth", "--task", "sr4", "--frames", "2", "--size", "16", "--out", str(clip)])
    inv = tmp_path / "inv"
    assert main(["invert", "--in", str(clip / "degraded"), "--task", "sr4", "--inversion-steps", "2", "--out", str(inv)]) == 0
    meta = json.loads((inv / "latents.json").read_text())
    data = np.frombuffer((inv / "latents.f32").read_bytes(), dtype="<f4")
    assert data.size == np.prod(meta["shape"]) and meta["timestep_level"] == 1000
    run = tmp_path / "run"
    assert main(["train", "--data", str(clip), "--steps", "2", "--batch-size", "2", "--out", str(run)]) == 0
    assert (run / "model.ckpt").exists()
    assert len((run / "losses.csv").read_text().splitlines()) == 3
