"""Toy noise-prediction U-Net with a ControlNet-style control branch.

Base network (frozen after init)::

    z -> conv_in -> [res + transformer] -> down -> [res + transformer] -> mid res
      -> [res + transformer](cat skip1) -> up -> [res + transformer](cat skip0) -> conv_out

The control branch is a trainable copy of the encoder half that also sees the
encoded condition frame through a small hint network. Its features are added
to the base skips and mid block through 1x1 projections that start at zero.

Every self-attention layer mixes keys and values over frames according to an
:class:`~tdm.attention.AttentionMode`; the prompt embedding enters through a
cross-attention layer in each transformer block.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .attention import AttentionMode, frame_mixing_matrix
from .autograd import Tensor
from .codec import DEFAULT_PATCH, encode
from .prompts import TaskPrompt, start_token
from .scheduler import Schedule, forward_diffuse, make_schedule

__all__ = [
    "DenoiserConfig",
    "DenoiserModel",
    "init_denoiser",
    "timestep_embedding",
    "control_residuals",
    "predict_noise",
    "train_step",
    "loss_and_grads",
    "eval_loss",
    "save_checkpoint",
    "load_checkpoint",
    "zero_eps_model",
    "constant_eps_model",
]

CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = b"TDMCKPT1"


@dataclass(frozen=True)
class DenoiserConfig:
    image_channels: int = 1
    patch: int = DEFAULT_PATCH
    widths: tuple[int, int] = (32, 64)
    d_attn: int = 32
    d_prompt: int = 32
    groups: int = 8
    t_dim: int = 32
    temb_dim: int = 64
    ff_mult: int = 2
    data_std: float = 0.25
    total_steps: int = 1000
    beta_start: float = 8.5e-4
    beta_end: float = 1.2e-2
    schedule_kind: str = "scaled_linear"

    def schedule(self) -> Schedule:
        return make_schedule(self.total_steps, self.beta_start, self.beta_end, self.schedule_kind)

    @property
    def latent_channels(self) -> int:
        return self.image_channels * self.patch * self.patch

    def validate(self) -> None:
        dims = (self.image_channels, self.patch, *self.widths, self.d_attn, self.d_prompt, self.groups)
        if any(int(v) != v or v < 1 for v in dims + (self.t_dim, self.temb_dim, self.ff_mult)):
            raise ValueError(f"all denoiser dimensions must be positive integers: {self}")
        if any(w % self.groups for w in self.widths):
            raise ValueError(f"widths {self.widths} must be divisible by groups {self.groups}")
        if self.t_dim % 2:
            raise ValueError("t_dim must be even")


@dataclass
class DenoiserModel:
    config: DenoiserConfig
    seed: int
    base: dict[str, np.ndarray]
    control: dict[str, np.ndarray]
    opt_state: dict = field(default_factory=dict, repr=False)

    def copy(self) -> "DenoiserModel":
        return DenoiserModel(
            self.config,
            self.seed,
            {k: v.copy() for k, v in self.base.items()},
            {k: v.copy() for k, v in self.control.items()},
            {},
        )


# ---------------------------------------------------------------------------
# parameter declaration


class _Init:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict[str, np.ndarray] = {}

    def normal(self, name, shape, fan_in, gain=1.0):
        self.params[name] = self.rng.standard_normal(shape) * (gain / math.sqrt(fan_in))

    def zeros(self, name, shape):
        self.params[name] = np.zeros(shape)

    def ones(self, name, shape):
        self.params[name] = np.ones(shape)

    def conv(self, name, cin, cout, k=3, zero=False):
        if zero:
            self.zeros(f"{name}.w", (cout, cin, k, k))
        else:
            self.normal(f"{name}.w", (cout, cin, k, k), cin * k * k)
        self.zeros(f"{name}.b", (cout,))

    def linear(self, name, din, dout, bias=True):
        self.normal(f"{name}.w", (din, dout), din)
        if bias:
            self.zeros(f"{name}.b", (dout,))

    def norm(self, name, c):
        self.ones(f"{name}.g", (c,))
        self.zeros(f"{name}.b", (c,))

    def res(self, name, cin, cout, temb_dim):
        self.norm(f"{name}.n1", cin)
        self.conv(f"{name}.c1", cin, cout)
        self.linear(f"{name}.t", temb_dim, cout)
        self.norm(f"{name}.n2", cout)
        self.conv(f"{name}.c2", cout, cout)
        if cin != cout:
            self.conv(f"{name}.skip", cin, cout, k=1)

    def transformer(self, name, c, d, d_prompt, ff_mult):
        self.norm(f"{name}.ln1", c)
        for p in ("q", "k", "v"):
            self.linear(f"{name}.attn.{p}", c, d, bias=False)
        self.linear(f"{name}.attn.o", d, c)
        self.norm(f"{name}.ln2", c)
        self.linear(f"{name}.xattn.q", c, d, bias=False)
        # the prompt is a unit-norm vector, not unit-variance entries: fan-in 1
        self.normal(f"{name}.xattn.k.w", (d_prompt, d), 1)
        self.normal(f"{name}.xattn.v.w", (d_prompt, d), 1)
        # zero-init: an untrained prompt pathway contributes nothing
        self.zeros(f"{name}.xattn.o.w", (d, c))
        self.zeros(f"{name}.xattn.o.b", (c,))
        self.norm(f"{name}.ln3", c)
        self.linear(f"{name}.ff1", c, ff_mult * c)
        self.linear(f"{name}.ff2", ff_mult * c, c)


_ENCODER_PREFIXES = ("temb1.", "temb2.", "conv_in.", "enc0.", "tf_e0.", "down.", "enc1.", "tf_e1.", "mid.")


def _declare_base(cfg: DenoiserConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    w0, w1 = cfg.widths
    init = _Init(rng)
    init.linear("temb1", cfg.t_dim, cfg.temb_dim)
    init.linear("temb2", cfg.temb_dim, cfg.temb_dim)
    init.conv("conv_in", cfg.latent_channels, w0)
    init.res("enc0", w0, w0, cfg.temb_dim)
    init.transformer("tf_e0", w0, cfg.d_attn, cfg.d_prompt, cfg.ff_mult)
    init.conv("down", w0, w1)
    init.res("enc1", w1, w1, cfg.temb_dim)
    init.transformer("tf_e1", w1, cfg.d_attn, cfg.d_prompt, cfg.ff_mult)
    init.res("mid", w1, w1, cfg.temb_dim)
    init.res("dec1", 2 * w1, w1, cfg.temb_dim)
    init.transformer("tf_d1", w1, cfg.d_attn, cfg.d_prompt, cfg.ff_mult)
    init.conv("up", w1, w0)
    init.res("dec0", 2 * w0, w0, cfg.temb_dim)
    init.transformer("tf_d0", w0, cfg.d_attn, cfg.d_prompt, cfg.ff_mult)
    init.norm("out_norm", w0)
    init.conv("conv_out", w0, cfg.latent_channels)
    init.ones("precond.gain", (1,))
    init.params["precond.mean"] = encode(np.full((cfg.image_channels, cfg.patch, cfg.patch), 0.5), cfg.patch).data[:, 0, 0]
    return init.params


def _declare_control(cfg: DenoiserConfig, base: dict, rng: np.random.Generator) -> dict[str, np.ndarray]:
    w0, w1 = cfg.widths
    init = _Init(rng)
    for name, value in base.items():
        if name.startswith(_ENCODER_PREFIXES):
            init.params[name] = value.copy()
    init.conv("hint1", cfg.latent_channels, w0)
    init.conv("hint2", w0, w0, zero=True)
    init.conv("zero0", w0, w0, k=1, zero=True)
    init.conv("zero1", w1, w1, k=1, zero=True)
    init.conv("zero_mid", w1, w1, k=1, zero=True)
    return init.params


ZERO_PROJECTIONS = ("zero0", "zero1", "zero_mid")


def init_denoiser(seed: int = 0, config: DenoiserConfig | None = None) -> DenoiserModel:
    cfg = config or DenoiserConfig()
    cfg.validate()
    root = np.random.SeedSequence([int(seed), 7])
    base_ss, ctrl_ss = root.spawn(2)
    base = _declare_base(cfg, np.random.default_rng(base_ss))
    control = _declare_control(cfg, base, np.random.default_rng(ctrl_ss))
    return DenoiserModel(cfg, int(seed), base, control)


# ---------------------------------------------------------------------------
# layers


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal encoding; ``t`` scalar or (B,) -> (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class _Net:
    """Forward pass over one parameter view (base or control)."""

    def __init__(self, params: dict[str, Tensor], cfg: DenoiserConfig):
        self.p = params
        self.cfg = cfg

    def conv(self, name, x, stride=1):
        return ag.conv2d(x, self.p[f"{name}.w"], self.p[f"{name}.b"], stride=stride)

    def linear(self, name, x):
        y = ag.matmul(x, self.p[f"{name}.w"])
        b = self.p.get(f"{name}.b")
        return y if b is None else y + b

    def group_norm(self, name, x):
        bsz, c, h, w = x.shape
        g = self.cfg.groups
        xn = ag.standardize(x.reshape(bsz, g, c // g, h, w), axes=(2, 3, 4)).reshape(bsz, c, h, w)
        return xn * self.p[f"{name}.g"].reshape(1, c, 1, 1) + self.p[f"{name}.b"].reshape(1, c, 1, 1)

    def layer_norm(self, name, x):
        return ag.standardize(x, axes=(-1,)) * self.p[f"{name}.g"] + self.p[f"{name}.b"]

    def temb(self, t):
        e = Tensor(timestep_embedding(t, self.cfg.t_dim))
        return self.linear("temb2", ag.silu(self.linear("temb1", e)))

    def res(self, name, x, temb):
        h = self.conv(f"{name}.c1", ag.silu(self.group_norm(f"{name}.n1", x)))
        tproj = self.linear(f"{name}.t", ag.silu(temb))
        h = h + tproj.reshape(tproj.shape[0], tproj.shape[1], 1, 1)
        h = self.conv(f"{name}.c2", ag.silu(self.group_norm(f"{name}.n2", h)))
        skip = self.conv(f"{name}.skip", x) if f"{name}.skip.w" in self.p else x
        return skip + h

    def transformer(self, name, x, ctx, mix):
        bsz, c, hh, ww = x.shape
        scale = 1.0 / math.sqrt(self.cfg.d_attn)
        tok = x.reshape(bsz, c, hh * ww).transpose(0, 2, 1)

        h = self.layer_norm(f"{name}.ln1", tok)
        q = self.linear(f"{name}.attn.q", h)
        k = ag.mix_frames(mix, self.linear(f"{name}.attn.k", h))
        v = ag.mix_frames(mix, self.linear(f"{name}.attn.v", h))
        w = ag.softmax(ag.matmul(q, k.transpose(0, 2, 1)) * scale)
        tok = tok + self.linear(f"{name}.attn.o", ag.matmul(w, v))

        h = self.layer_norm(f"{name}.ln2", tok)
        q = self.linear(f"{name}.xattn.q", h)
        k = self.linear(f"{name}.xattn.k", ctx)
        v = self.linear(f"{name}.xattn.v", ctx)
        w = ag.softmax(ag.matmul(q, k.transpose(0, 2, 1)) * scale)
        tok = tok + self.linear(f"{name}.xattn.o", ag.matmul(w, v))

        h = self.layer_norm(f"{name}.ln3", tok)
        tok = tok + self.linear(f"{name}.ff2", ag.silu(self.linear(f"{name}.ff1", h)))
        return tok.transpose(0, 2, 1).reshape(bsz, c, hh, ww)


def _control_forward(net: _Net, z, t, cond, ctx, mix) -> list[Tensor]:
    temb = net.temb(t)
    hint = net.conv("hint2", ag.silu(net.conv("hint1", cond)))
    h = net.conv("conv_in", z) + hint
    h = net.transformer("tf_e0", net.res("enc0", h, temb), ctx, mix)
    r0 = net.conv("zero0", h)
    h = net.conv("down", h, stride=2)
    h = net.transformer("tf_e1", net.res("enc1", h, temb), ctx, mix)
    r1 = net.conv("zero1", h)
    h = net.res("mid", h, temb)
    return [r0, r1, net.conv("zero_mid", h)]


def _base_forward(net: _Net, z, t, ctx, mix, residuals) -> Tensor:
    temb = net.temb(t)
    h = net.conv("conv_in", z)
    h = net.transformer("tf_e0", net.res("enc0", h, temb), ctx, mix)
    skip0 = h if residuals is None else h + residuals[0]
    h = net.conv("down", h, stride=2)
    h = net.transformer("tf_e1", net.res("enc1", h, temb), ctx, mix)
    skip1 = h if residuals is None else h + residuals[1]
    h = net.res("mid", h, temb)
    if residuals is not None:
        h = h + residuals[2]
    h = net.transformer("tf_d1", net.res("dec1", ag.concat([h, skip1], axis=1), temb), ctx, mix)
    h = net.conv("up", ag.upsample_nearest(h, 2))
    h = net.transformer("tf_d0", net.res("dec0", ag.concat([h, skip0], axis=1), temb), ctx, mix)
    out = net.conv("conv_out", ag.silu(net.group_norm("out_norm", h)))
    return out + _prior_eps(net, z, t)


def _prior_eps(net: _Net, z: Tensor, t) -> Tensor:
    """Gain-scaled posterior mean of eps under an isotropic Gaussian latent prior.

    This is a fixed skip path (the network learns the residual on top of it);
    with ``precond.gain = 0`` it vanishes.
    """
    cfg = net.cfg
    sched = _schedule_for(cfg)
    ab = np.array([sched.alpha_bar(int(v)) for v in np.asarray(t)])
    s, n = np.sqrt(ab), np.sqrt(1.0 - ab)
    coef = n / (s * s * cfg.data_std**2 + n * n)
    mean = net.p["precond.mean"].reshape(1, -1, 1, 1)
    centred = z - mean * Tensor(s.reshape(-1, 1, 1, 1))
    return centred * Tensor(coef.reshape(-1, 1, 1, 1)) * net.p["precond.gain"]


_SCHEDULES: dict = {}


def _schedule_for(cfg: DenoiserConfig) -> Schedule:
    key = (cfg.total_steps, cfg.beta_start, cfg.beta_end, cfg.schedule_kind)
    if key not in _SCHEDULES:
        _SCHEDULES[key] = cfg.schedule()
    return _SCHEDULES[key]


def _wrap(params: dict[str, np.ndarray], trainable: bool) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=trainable) for k, v in params.items()}


def _as_batch_latents(z, cfg: DenoiserConfig) -> np.ndarray:
    if isinstance(z, (list, tuple)):
        z = np.stack([getattr(f, "data", f) for f in z])
    z = np.asarray(getattr(z, "data", z), dtype=np.float64)
    if z.ndim == 3:
        z = z[None]
    if z.ndim != 4 or z.shape[1] != cfg.latent_channels:
        raise ValueError(f"latents must be (F, {cfg.latent_channels}, h, w), got {z.shape}")
    if z.shape[2] % 2 or z.shape[3] % 2:
        raise ValueError(f"latent grid {z.shape[2:]} must have even size for the down/up path")
    return z


def _encode_condition(condition, cfg: DenoiserConfig, n: int, latent_hw) -> np.ndarray:
    c = np.asarray(condition, dtype=np.float64)
    if c.ndim == 3:
        c = c[None]
    if c.ndim != 4 or c.shape[0] != n:
        raise ValueError(f"condition must hold {n} frames of C x H x W, got {c.shape}")
    lat = np.stack([encode(f, cfg.patch).data for f in c])
    if lat.shape[1] != cfg.latent_channels or lat.shape[2:] != tuple(latent_hw):
        raise ValueError(f"condition shape {c.shape} does not match latent grid {latent_hw}")
    return lat


def _context(prompt, n: int, cfg: DenoiserConfig) -> np.ndarray:
    emb = prompt.embedding if isinstance(prompt, TaskPrompt) else prompt
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim == 1:
        emb = np.broadcast_to(emb, (n, emb.shape[0]))
    if emb.shape != (n, cfg.d_prompt):
        raise ValueError(f"prompt embedding must have dimension {cfg.d_prompt}, got {emb.shape}")
    start = np.broadcast_to(start_token(cfg.d_prompt), emb.shape)
    return np.stack([start, emb], axis=1)


def _timesteps(t, n: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return np.broadcast_to(t, (n,)) if t.ndim == 0 else t


def _run(model, z, t, cond_lat, ctx, mix, control_trainable=False):
    cfg = model.config
    base = _Net(_wrap(model.base, False), cfg)
    residuals = None
    ctrl_params = None
    if cond_lat is not None:
        ctrl_params = _wrap(model.control, control_trainable)
        residuals = _control_forward(_Net(ctrl_params, cfg), Tensor(z), t, Tensor(cond_lat), Tensor(ctx), mix)
    out = _base_forward(base, Tensor(z), t, Tensor(ctx), mix, residuals)
    return out, residuals, ctrl_params


def control_residuals(model: DenoiserModel, z_t, condition_image, t, prompt, mode: AttentionMode | None = None):
    """Control-branch outputs, one per base tap (skip0, skip1, mid)."""
    cfg = model.config
    z = _as_batch_latents(z_t, cfg)
    n = z.shape[0]
    cond_lat = _encode_condition(condition_image, cfg, n, z.shape[2:])
    mix = frame_mixing_matrix(n, mode or AttentionMode.self_attention())
    with ag.no_grad():
        net = _Net(_wrap(model.control, False), cfg)
        res = _control_forward(net, Tensor(z), _timesteps(t, n), Tensor(cond_lat), Tensor(_context(prompt, n, cfg)), mix)
    return [r.data for r in res]


def predict_noise(
    model: DenoiserModel,
    video_latents,
    t,
    condition,
    prompt,
    mode: AttentionMode | None = None,
    condition_latents: np.ndarray | None = None,
) -> np.ndarray:
    """Per-frame eps prediction for frames sharing timestep ``t``.

    ``condition`` holds the degraded frames (F, C, H, W); pass ``None`` to
    evaluate the base network alone. ``condition_latents`` skips re-encoding.
    """
    cfg = model.config
    z = _as_batch_latents(video_latents, cfg)
    n = z.shape[0]
    mode = mode or AttentionMode.self_attention()
    if condition_latents is None and condition is not None:
        condition_latents = _encode_condition(condition, cfg, n, z.shape[2:])
    mix = frame_mixing_matrix(n, mode)
    with ag.no_grad():
        out, _, _ = _run(model, z, _timesteps(t, n), condition_latents, _context(prompt, n, cfg), mix)
    return out.data


# ---------------------------------------------------------------------------
# training


def _training_batch(model, clean_image, degraded_image, t, noise, sched):
    cfg = model.config
    clean = np.asarray(clean_image, dtype=np.float64)
    degraded = np.asarray(degraded_image, dtype=np.float64)
    if clean.ndim == 3:
        clean, degraded = clean[None], degraded[None]
    if clean.shape != degraded.shape:
        raise ValueError(f"clean {clean.shape} and degraded {degraded.shape} differ")
    n = clean.shape[0]
    ts = np.broadcast_to(np.asarray(t), (n,)).astype(int)
    z0 = np.stack([encode(c, cfg.patch).data for c in clean])
    noise = np.asarray(noise, dtype=np.float64).reshape(z0.shape)
    z_t = np.stack([forward_diffuse(z0[i], int(ts[i]), noise[i], sched) for i in range(n)])
    cond = np.stack([encode(d, cfg.patch).data for d in degraded])
    return z_t, ts.astype(np.float64), cond, noise


def loss_and_grads(model, clean_image, degraded_image, prompt, t, noise, sched: Schedule):
    """Epsilon-MSE loss and its gradient w.r.t. every control parameter."""
    cfg = model.config
    z_t, ts, cond, noise = _training_batch(model, clean_image, degraded_image, t, noise, sched)
    n = z_t.shape[0]
    mix = np.eye(n)
    out, _, ctrl = _run(model, z_t, ts, cond, _context(prompt, n, cfg), mix, control_trainable=True)
    diff = out - noise
    loss = (diff * diff).mean()
    if not np.isfinite(loss.data):
        raise FloatingPointError(f"non-finite training loss {loss.data}")
    loss.backward()
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in ctrl.items()}
    return float(loss.data), grads


def eval_loss(model, clean_image, degraded_image, prompt, t, noise, sched: Schedule) -> float:
    cfg = model.config
    z_t, ts, cond, noise = _training_batch(model, clean_image, degraded_image, t, noise, sched)
    n = z_t.shape[0]
    with ag.no_grad():
        out, _, _ = _run(model, z_t, ts, cond, _context(prompt, n, cfg), np.eye(n))
    return float(np.mean((out.data - noise) ** 2))


def _adamw(model: DenoiserModel, grads, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
    st = model.opt_state
    if not st:
        st.update(step=0, m={k: np.zeros_like(v) for k, v in grads.items()}, v={k: np.zeros_like(v) for k, v in grads.items()})
    st["step"] += 1
    b1, b2 = betas
    c1 = 1.0 - b1 ** st["step"]
    c2 = 1.0 - b2 ** st["step"]
    for k, g in grads.items():
        p = model.control[k]
        m = st["m"][k] = b1 * st["m"][k] + (1 - b1) * g
        v = st["v"][k] = b2 * st["v"][k] + (1 - b2) * g * g
        p *= 1.0 - lr * weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def train_step(
    model: DenoiserModel,
    clean_image,
    degraded_image,
    task: TaskPrompt,
    t,
    noise,
    sched: Schedule,
    learning_rate: float,
) -> tuple[DenoiserModel, float]:
    """One AdamW step on the control branch; the base weights are never touched.

    Images may be single (C, H, W) or a batch (B, C, H, W) with per-sample
    timesteps ``t`` and latent-shaped ``noise``.
    """
    loss, grads = loss_and_grads(model, clean_image, degraded_image, task, t, noise, sched)
    _adamw(model, grads, learning_rate)
    return model, loss


# ---------------------------------------------------------------------------
# fixtures


def zero_eps_model(config: DenoiserConfig | None = None, seed: int = 0) -> DenoiserModel:
    """Model whose base weights are all zero, hence eps = 0 for any input."""
    model = init_denoiser(seed, config)
    for v in model.base.values():
        v[...] = 0.0
    return model


def constant_eps_model(value, config: DenoiserConfig | None = None, seed: int = 0) -> DenoiserModel:
    """Model predicting the same eps everywhere: zero output weights, bias = ``value`` per channel."""
    model = init_denoiser(seed, config)
    model.base["conv_out.w"][...] = 0.0
    model.base["conv_out.b"][...] = value
    model.base["precond.gain"][...] = 0.0
    return model


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: DenoiserModel, path) -> None:
    """JSON header then little-endian float32 parameters in declaration order."""
    entries = [("base", k, v) for k, v in model.base.items()] + [("control", k, v) for k, v in model.control.items()]
    cfg = asdict(model.config)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "seed": model.seed,
        "dims": cfg,
        "params": [{"group": g, "name": k, "shape": list(v.shape)} for g, k, v in entries],
    }
    blob = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for _, _, v in entries)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(blob)


def load_checkpoint(path) -> DenoiserModel:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a denoiser checkpoint")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack("<I", raw[off : off + 4])
    off += 4
    header = json.loads(raw[off : off + hlen])
    off += hlen
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    dims = header["dims"]
    dims["widths"] = tuple(dims["widths"])
    cfg = DenoiserConfig(**dims)
    groups: dict[str, dict[str, np.ndarray]] = {"base": {}, "control": {}}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"]))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).astype(np.float64)
        off += 4 * count
        groups[entry["group"]][entry["name"]] = arr.reshape(entry["shape"])
    if off != len(raw):
        raise ValueError("checkpoint blob length does not match header")
    return DenoiserModel(cfg, int(header["seed"]), groups["base"], groups["control"])
