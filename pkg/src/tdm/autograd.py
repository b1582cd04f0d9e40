"""A small reverse-mode autodiff over numpy arrays.

Only the operations the denoiser needs are provided. Graph nodes are recorded
only when some input requires a gradient, so frozen computations cost nothing
extra; inference inside :func:`no_grad` records nothing at all.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "as_tensor",
    "add",
    "mul",
    "matmul",
    "concat",
    "silu",
    "softmax",
    "standardize",
    "conv2d",
    "upsample_nearest",
    "mix_frames",
]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.data.shape
        return _node(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        return _node(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    def sum(self, axis=None, keepdims: bool = False):
        src = self.data.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src),)

        return _node(out, (self,), back)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return mul(self.sum(axis=axis, keepdims=keepdims), 1.0 / float(count))

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()

        def visit(node: Tensor) -> None:
            # iterative DFS; graphs here are a few hundred nodes deep
            stack = [(node, False)]
            while stack:
                n, done = stack.pop()
                if done:
                    order.append(n)
                    continue
                if id(n) in seen:
                    continue
                seen.add(id(n))
                stack.append((n, True))
                for p in n._parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _node(
        ad * bd,
        (a, b),
        lambda g: (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _node(ad @ bd, (a, b), back)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]
    return _node(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, sizes, axis=axis)),
    )


def silu(x: Tensor) -> Tensor:
    xd = x.data
    sig = 1.0 / (1.0 + np.exp(-xd))
    return _node(xd * sig, (x,), lambda g: (g * (sig * (1.0 + xd * (1.0 - sig))),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    return _node(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def standardize(x: Tensor, axes: tuple[int, ...], eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance over ``axes`` (no affine part)."""
    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + eps)
    xhat = xc * inv

    def back(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return _node(xhat, (x,), back)


def _fold_wrap(g: np.ndarray, pad: int) -> np.ndarray:
    """Adjoint of circular padding on the last two axes."""
    if pad == 0:
        return g
    h = g.shape[-2] - 2 * pad
    w = g.shape[-1] - 2 * pad
    gw = g[..., pad : pad + w].copy()
    gw[..., :pad] += g[..., pad + w :]
    gw[..., w - pad :] += g[..., :pad]
    out = gw[..., pad : pad + h, :].copy()
    out[..., :pad, :] += gw[..., pad + h :, :]
    out[..., h - pad :, :] += gw[..., :pad, :]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """2-D convolution with circular ("wrap") padding of ``k // 2``.

    ``x``: (B, C, H, W); ``w``: (O, C, k, k); ``b``: (O,).
    """
    x, w = as_tensor(x), as_tensor(w)
    xd, wd = x.data, w.data
    bsz, cin, h, wid = xd.shape
    cout, cin_w, k, _ = wd.shape
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    pad = k // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="wrap") if pad else xd
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wid + 2 * pad - k) // stride + 1
    # channel-first im2col: rows ordered (i, j, c), columns (b, y, x)
    cols = np.empty((k, k, cin, bsz, oh, ow))
    for i in range(k):
        for j in range(k):
            cols[i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride].transpose(1, 0, 2, 3)
    cols = cols.reshape(k * k * cin, bsz * oh * ow)
    wmat = wd.transpose(0, 2, 3, 1).reshape(cout, k * k * cin)
    out = wmat @ cols
    if b is not None:
        out += as_tensor(b).data[:, None]
    out = out.reshape(cout, bsz, oh, ow).transpose(1, 0, 2, 3)
    parents = (x, w) if b is None else (x, w, as_tensor(b))

    def back(g):
        gm = g.transpose(1, 0, 2, 3).reshape(cout, bsz * oh * ow)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (gm @ cols.T).reshape(cout, k, k, cin).transpose(0, 3, 1, 2)
        if b is not None and parents[2].requires_grad:
            gb = gm.sum(axis=1)
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape(k, k, cin, bsz, oh, ow)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gcols[i, j].transpose(
                        1, 0, 2, 3
                    )
            gx = _fold_wrap(gxp, pad)
        return (gx, gw) if b is None else (gx, gw, gb)

    return _node(out, parents, back)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    xd = x.data
    out = xd.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def back(g):
        s = g.shape
        g = g.reshape(s[:-2] + (s[-2] // factor, factor, s[-1] // factor, factor))
        return (g.sum(axis=(-3, -1)),)

    return _node(out, (x,), back)


def mix_frames(mix: np.ndarray, x: Tensor) -> Tensor:
    """Apply a constant ``F x F`` mixing matrix along the leading frame axis."""
    if np.array_equal(mix, np.eye(mix.shape[0])):
        return x
    shape = x.data.shape
    flat = x.reshape(shape[0], -1)
    return matmul(Tensor(mix), flat).reshape(shape)
