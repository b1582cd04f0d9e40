"""``tdm`` command line: synth, train, restore, invert, metrics, ablate.

Values come from built-in defaults, then an optional JSON ``--config`` file,
then explicit flags (highest precedence). Every run is driven by ``--seed``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from threadpoolctl import threadpool_limits

log = logging.getLogger("tdm")

COMMANDS = ("synth", "train", "restore", "invert", "metrics", "ablate")
MODES = {"self": "self_attention", "first": "first_frame_cfa", "swcfa": "sliding_window_cfa"}


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


@dataclass
class RunConfig:
    command: str
    out: str | None = None
    seed: int = 0
    threads: int = 1
    log_level: str = "warning"
    # clip geometry
    pattern: str = "checker"
    frames: int = 8
    velocity: tuple[int, int] = (1, 0)
    size: tuple[int, int] = (48, 48)
    channels: int = 1
    raw: bool = False
    params: dict = field(default_factory=dict)
    # model and restoration
    input: str | None = None
    ref: str | None = None
    checkpoint: str | None = None
    task: str | None = None
    mode: str = "swcfa"
    N: int = 3
    inversion_steps: int = 10
    sampling_steps: int = 32
    inversion: bool = True
    prompt: bool = True
    # training
    data: list = field(default_factory=list)
    tasks: tuple = ("denoise",)
    n_images: int = 96
    steps: int = 500
    lr: float = 3e-3
    batch_size: int = 4
    # metrics
    block: int = 7
    radius: int = 4
    # ablation
    clips: str | None = None
    clips_per_task: int = 10

    def validate(self) -> "RunConfig":
        from .attention import AttentionMode
        from .prompts import TASKS
        from .synth import PATTERNS, default_spec

        if self.command not in COMMANDS:
            raise ConfigError(f"command must be one of {COMMANDS}")
        _positive(self, "threads", "frames", "channels", "inversion_steps", "sampling_steps",
                  "n_images", "batch_size", "block", "clips_per_task")
        if self.steps < 0:
            raise ConfigError("steps must be ≥ 0")
        if self.radius < 0:
            raise ConfigError("radius must be ≥ 0")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.pattern not in PATTERNS:
            raise ConfigError(f"pattern must be one of {PATTERNS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {tuple(MODES)}")
        try:
            AttentionMode(MODES[self.mode], self.N if self.mode == "swcfa" else 0)
            if self.N < 0:
                AttentionMode(MODES["swcfa"], self.N)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.task is not None and self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        bad = [t for t in self.tasks if t not in TASKS]
        if bad or not self.tasks:
            raise ConfigError(f"tasks must be a nonempty subset of {TASKS}")
        if min(self.size) < 4 or any(s % 4 for s in self.size):
            raise ConfigError("size must be positive multiples of 4")
        if self.params and self.task is None:
            raise ConfigError("params need a task")
        if self.params:
            try:
                default_spec(self.task, **self.params).resolved()
            except ValueError as exc:
                raise ConfigError(f"params: {exc}") from None
        needs = {"restore": ("input",), "invert": ("input",), "metrics": ("input",)}
        for name in needs.get(self.command, ()):
            if getattr(self, name) is None:
                raise ConfigError(f"{name} is required for {self.command}")
        if self.command in ("restore", "invert") and self.task is None:
            raise ConfigError(f"task is required for {self.command}")
        if self.command != "metrics" and self.out is None:
            raise ConfigError(f"out is required for {self.command}")
        return self

    def report_echo(self) -> dict:
        """Config as plain JSON values (paths and all), for report files."""
        d = asdict(self)
        d["velocity"] = list(self.velocity)
        d["size"] = list(self.size)
        d["tasks"] = list(self.tasks)
        return d


def _positive(cfg: RunConfig, *names: str) -> None:
    for name in names:
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be ≥ 1")


# ---------------------------------------------------------------------------
# parsing


def _pair(text: str) -> tuple[int, int]:
    parts = str(text).replace("x", ",").split(",")
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two integers, got {text!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two integers, got {text!r}") from None


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


def _param(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"parameter {key!r} needs a number, got {value!r}") from None
    return key.strip(), int(number) if number.is_integer() else number


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS  # absent flags must not shadow config-file values
    common = _Parser(add_help=False, argument_default=S)
    common.add_argument("--config", help="JSON file of option values")
    common.add_argument("--out", help="output directory (metrics: CSV file or directory; stdout if absent)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--log-level", dest="log_level", choices=("debug", "info", "warning", "error"))

    clip = _Parser(add_help=False, argument_default=S)
    clip.add_argument("--pattern")
    clip.add_argument("--frames", type=int)
    clip.add_argument("--velocity", type=_pair, help="dx,dy pixels per frame")
    clip.add_argument("--size", type=_pair, help="H or HxW")
    clip.add_argument("--channels", type=int)

    model = _Parser(add_help=False, argument_default=S)
    model.add_argument("--checkpoint")
    model.add_argument("--task")
    model.add_argument("--mode", help="self | first | swcfa")
    model.add_argument("--N", type=int, help="SW-CFA window radius")
    model.add_argument("--inversion-steps", dest="inversion_steps", type=int)
    model.add_argument("--sampling-steps", dest="sampling_steps", type=int)
    model.add_argument("--no-inversion", dest="inversion", action="store_false")
    model.add_argument("--no-prompt", dest="prompt", action="store_false")

    parser = _Parser(prog="tdm", description="Temporally consistent diffusion video restoration (desk scale).")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common, clip], argument_default=S, help="write a synthetic clip")
    p.add_argument("--task", help="also write a degraded copy (out/clean, out/degraded)")
    p.add_argument("--param", dest="params", type=_param, action="append", help="degradation key=value")
    p.add_argument("--raw", action="store_true", help="also write float32 frame dumps")

    p = sub.add_parser("train", parents=[common], argument_default=S, help="fine-tune the control branch")
    p.add_argument("--data", nargs="+", help="synth output dirs holding clean/ and degraded/")
    p.add_argument("--tasks", type=_csv_list)
    p.add_argument("--n-images", dest="n_images", type=int, help="synthetic images per task")
    p.add_argument("--size", type=_pair)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--checkpoint", help="start from this checkpoint")

    for name, text in (("restore", "restore a clip"), ("invert", "DDIM-invert a clip to latents")):
        p = sub.add_parser(name, parents=[common, model], argument_default=S, help=text)
        p.add_argument("--in", dest="input")
        p.add_argument("--ref", help="clean reference clip for PSNR")

    p = sub.add_parser("metrics", parents=[common], argument_default=S, help="FC / WE / PSNR of a clip")
    p.add_argument("--in", dest="input")
    p.add_argument("--ref")
    p.add_argument("--block", type=int)
    p.add_argument("--radius", type=int)

    p = sub.add_parser("ablate", parents=[common, model, clip], argument_default=S, help="four-row component ablation")
    p.add_argument("--clips", help="directory of synth outputs (clean/ and degraded/)")
    p.add_argument("--clips-per-task", dest="clips_per_task", type=int)
    p.add_argument("--tasks", type=_csv_list)
    return parser


_TUPLE_FIELDS = {"velocity", "size"}


def _from_file(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    known = {f.name for f in fields(RunConfig)} - {"command"}
    out = {}
    for key, value in data.items():
        name = key.replace("-", "_")
        if name not in known:
            raise ConfigError(f"config: unknown key {key!r}")
        if name in _TUPLE_FIELDS:
            value = _pair(",".join(map(str, value)) if isinstance(value, list) else value)
        elif name == "tasks" and isinstance(value, str):
            value = _csv_list(value)
        elif name == "tasks":
            value = tuple(value)
        out[name] = value
    return out


def parse_config(argv: list[str] | None = None) -> RunConfig:
    """Defaults, then the JSON config file, then flags; validated."""
    ns = vars(build_parser().parse_args(argv))
    values = _from_file(ns.pop("config")) if "config" in ns else {}
    if "params" in ns:
        ns["params"] = dict(ns["params"])
    values.update(ns)
    types = {f.name: f.type for f in fields(RunConfig)}
    for key in ("seed", "threads", "frames", "N", "steps", "n_images", "batch_size", "channels",
                "inversion_steps", "sampling_steps", "block", "radius", "clips_per_task"):
        if key in values and (not isinstance(values[key], int) or isinstance(values[key], bool)):
            raise ConfigError(f"{key} must be an integer ({types[key]})")
    return RunConfig(**values).validate()


# ---------------------------------------------------------------------------
# commands


def _shape(cfg: RunConfig) -> tuple[int, int, int]:
    return (cfg.channels, *cfg.size)


def _model(cfg: RunConfig, channels: int):
    from .denoiser import DenoiserConfig, init_denoiser, load_checkpoint

    if cfg.checkpoint:
        return load_checkpoint(cfg.checkpoint)
    return init_denoiser(cfg.seed, DenoiserConfig(image_channels=channels))


def _restore_cfg(cfg: RunConfig, task: str):
    from .attention import AttentionMode
    from .pipeline import RestoreConfig

    mode = AttentionMode(MODES[cfg.mode], cfg.N if cfg.mode == "swcfa" else 0)
    return RestoreConfig(task=task, mode=mode, inversion_steps=cfg.inversion_steps,
                         sampling_steps=cfg.sampling_steps, use_inversion=cfg.inversion,
                         use_prompt=cfg.prompt, seed=cfg.seed)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n")


def _plain(v):
    if hasattr(v, "tolist"):
        return v.tolist()
    raise TypeError(f"not JSON serialisable: {type(v).__name__}")


def cmd_synth(cfg: RunConfig) -> None:
    from .synth import degrade, default_spec, generate_clean_video, write_clip

    clean = generate_clean_video(cfg.pattern, _shape(cfg), cfg.frames, cfg.velocity, cfg.seed)
    out = Path(cfg.out)
    if cfg.task is None:
        write_clip(clean, out, raw=cfg.raw)
        return
    deg = degrade(clean, default_spec(cfg.task, seed=cfg.seed, **cfg.params))
    write_clip(clean, out / "clean", raw=cfg.raw, extra={"task": cfg.task})
    write_clip(deg, out / "degraded", raw=cfg.raw)


def _pairs_from_dirs(dirs) -> list[tuple]:
    from .synth import read_clip

    pairs = []
    for d in dirs:
        clean, deg = read_clip(Path(d) / "clean"), read_clip(Path(d) / "degraded")
        task = deg.meta.get("task")
        if task is None:
            raise ConfigError(f"data: {d}/degraded has no task in its manifest")
        pairs.extend((c, g, task) for c, g in zip(clean.frames, deg.frames))
    return pairs


def cmd_train(cfg: RunConfig) -> None:
    from .denoiser import save_checkpoint
    from .pipeline import fine_tune
    from .synth import training_pairs

    if cfg.data:
        pairs = _pairs_from_dirs(cfg.data)
    else:
        pairs = training_pairs(cfg.tasks, cfg.n_images, _shape(cfg), cfg.seed)
    model = _model(cfg, pairs[0][0].shape[0])
    start = time.perf_counter()
    model, losses = fine_tune(model, pairs, lr=cfg.lr, seed=cfg.seed, batch_size=cfg.batch_size, steps=cfg.steps)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.ckpt")
    (out / "losses.csv").write_text("step,loss\n" + "".join(f"{i},{v:.8f}\n" for i, v in enumerate(losses)))
    _write_json(out / "report.json", {"config": cfg.report_echo(), "n_pairs": len(pairs), "final_loss": losses[-1] if losses else None})
    _write_json(out / "timings.json", {"train_seconds": time.perf_counter() - start})


def cmd_restore(cfg: RunConfig) -> None:
    from .metrics import write_metrics_csv
    from .pipeline import restore_video
    from .synth import read_clip, write_clip

    clip = read_clip(cfg.input)
    clean = read_clip(cfg.ref) if cfg.ref else None
    model = _model(cfg, clip.shape[0])
    start = time.perf_counter()
    restored, row = restore_video(model, clip, _restore_cfg(cfg, cfg.task), clean=clean)
    elapsed = time.perf_counter() - start
    out = Path(cfg.out)
    write_clip(restored, out, raw=True)
    row = {"clip_id": Path(cfg.input).name, **row}
    write_metrics_csv([row], out / "metrics.csv")
    _write_json(out / "report.json", {"config": cfg.report_echo(), "clips": [row]})
    _write_json(out / "timings.json", {"restore_seconds": elapsed})


def cmd_invert(cfg: RunConfig) -> None:
    import numpy as np

    from .pipeline import invert_video
    from .synth import read_clip

    clip = read_clip(cfg.input)
    model = _model(cfg, clip.shape[0])
    lat = invert_video(model, clip, _restore_cfg(cfg, cfg.task))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    data = lat.stacked()
    (out / "latents.f32").write_bytes(np.ascontiguousarray(data, dtype="<f8").astype("<f4").tobytes())
    _write_json(out / "latents.json", {"shape": list(data.shape), "timestep_level": lat.timestep_level,
                                       "patch": lat.latents[0].patch, "source_shape": list(lat.latents[0].source_shape),
                                       "config": cfg.report_echo()})


def cmd_metrics(cfg: RunConfig) -> None:
    from .metrics import estimate_flow, frame_consistency, video_psnr, warping_error, write_metrics_csv
    from .synth import read_clip

    clip = read_clip(cfg.input)
    frames = clip.frames
    row = {"clip_id": Path(cfg.input).name, "task": clip.meta.get("task") or "", "mode": "", "FC": None, "WE": None, "PSNR": None}
    if len(clip) >= 2:
        row["FC"] = frame_consistency(frames)
        if clip.flow:
            row["WE"] = warping_error(frames, clip.flow, circular=True)
        else:
            est = [estimate_flow(frames[i], frames[i + 1], cfg.block, cfg.radius) for i in range(len(clip) - 1)]
            row["WE"] = warping_error(frames, est)
    if cfg.ref:
        row["PSNR"] = video_psnr(frames, read_clip(cfg.ref).frames)
    if cfg.out is None:
        write_metrics_csv([row], sys.stdout)
        return
    path = Path(cfg.out)
    if path.suffix != ".csv":
        path.mkdir(parents=True, exist_ok=True)
        path = path / "metrics.csv"
    write_metrics_csv([row], path)


def _ablation_clips(cfg: RunConfig) -> list[tuple]:
    from .synth import read_clip, translating_clips

    if cfg.clips is None:
        return translating_clips(cfg.tasks, cfg.clips_per_task, _shape(cfg), cfg.frames, cfg.seed)
    clips = []
    for d in sorted(p for p in Path(cfg.clips).iterdir() if (p / "degraded").is_dir()):
        deg = read_clip(d / "degraded")
        clips.append((deg, read_clip(d / "clean"), deg.meta.get("task")))
    if not clips:
        raise ConfigError(f"clips: no synth outputs under {cfg.clips}")
    return clips


ABLATION_COLUMNS = ("row", "TPG", "Inv", "SW-CFA", "task", "FC", "WE", "PSNR")


def cmd_ablate(cfg: RunConfig) -> None:
    from .pipeline import run_ablation

    clips = _ablation_clips(cfg)
    model = _model(cfg, clips[0][1].shape[0])
    start = time.perf_counter()
    table = run_ablation(model, clips, _restore_cfg(cfg, cfg.task or clips[0][2]))
    elapsed = time.perf_counter() - start
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [",".join(ABLATION_COLUMNS)]
    for row in table:
        for task, m in row["tasks"].items():
            flags = [str(int(row[k])) for k in ("TPG", "Inv", "SW-CFA")]
            lines.append(",".join([row["row"], *flags, task] + [f"{m[k]:.6f}" for k in ("FC", "WE", "PSNR")]))
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    _write_json(out / "report.json", {"config": cfg.report_echo(), "rows": table})
    _write_json(out / "timings.json", {"ablation_seconds": elapsed})


DISPATCH = {
    "synth": cmd_synth,
    "train": cmd_train,
    "restore": cmd_restore,
    "invert": cmd_invert,
    "metrics": cmd_metrics,
    "ablate": cmd_ablate,
}


def dispatch(cfg: RunConfig) -> int:
    DISPATCH[cfg.command](cfg)
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"tdm: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=cfg.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=cfg.threads):
            return dispatch(cfg)
    except Exception as exc:  # any module error becomes exit code 1
        log.debug("command failed", exc_info=True)
        print(f"tdm: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
