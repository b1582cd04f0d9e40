import numpy as np
import pytest

from tdm import autograd as ag
from tdm.autograd import Tensor


def _numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def _check(build, *arrays, tol=1e-6):
    """Compare autograd gradients of sum(build(*tensors) * probe) with central differences."""
    rng = np.random.default_rng(99)
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    probe = rng.standard_normal(out.shape)
    (out * Tensor(probe)).sum().backward()

    for t in tensors:

        def f():
            with ag.no_grad():
                return float((build(*[Tensor(u.data) for u in tensors]).data * probe).sum())

        num = _numeric_grad(f, t.data)
        np.testing.assert_allclose(t.grad, num, rtol=tol, atol=tol)


def test_elementwise_and_broadcast(rng):
    _check(lambda a, b: a * b + a, rng.standard_normal((3, 4)), rng.standard_normal((1, 4)))
    _check(lambda a: a - 2.0, rng.standard_normal((2, 2)))
    _check(lambda a: -a, rng.standard_normal(3))


def test_matmul_batched(rng):
    _check(lambda a, b: ag.matmul(a, b), rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5)))


def test_shape_ops(rng):
    _check(lambda a: a.reshape(6, 2).transpose(1, 0), rng.standard_normal((3, 4)))
    _check(lambda a: a.sum(axis=1), rng.standard_normal((3, 4)))
    _check(lambda a: a.mean(axis=(0, 2), keepdims=True), rng.standard_normal((2, 3, 4)))
    _check(lambda a, b: ag.concat([a, b], axis=1), rng.standard_normal((2, 3)), rng.standard_normal((2, 2)))


def test_nonlinearities(rng):
    _check(ag.silu, rng.standard_normal((3, 5)))
    _check(lambda a: ag.softmax(a, axis=-1), rng.standard_normal((2, 4)))
    _check(lambda a: ag.standardize(a, axes=(1, 2)), rng.standard_normal((2, 3, 4)), tol=1e-5)


@pytest.mark.parametrize("k,stride", [(3, 1), (3, 2), (1, 1)])
def test_conv2d(rng, k, stride):
    _check(
        lambda x, w, b: ag.conv2d(x, w, b, stride=stride),
        rng.standard_normal((2, 3, 6, 6)),
        rng.standard_normal((4, 3, k, k)),
        rng.standard_normal(4),
    )


def test_conv2d_circular_padding_matches_direct_sum(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((1, 2, 3, 3))
    out = ag.conv2d(Tensor(x), Tensor(w)).data
    ref = np.zeros((5, 5))
    for y in range(5):
        for xx in range(5):
            for c in range(2):
                for i in range(3):
                    for j in range(3):
                        ref[y, xx] += w[0, c, i, j] * x[0, c, (y + i - 1) % 5, (xx + j - 1) % 5]
    np.testing.assert_allclose(out[0, 0], ref, atol=1e-12)


def test_upsample_and_mix(rng):
    _check(lambda a: ag.upsample_nearest(a, 2), rng.standard_normal((1, 2, 3, 3)))
    mix = rng.random((3, 3))
    _check(lambda a: ag.mix_frames(mix, a), rng.standard_normal((3, 2, 2)))
    x = Tensor(rng.standard_normal((3, 2)))
    assert ag.mix_frames(np.eye(3), x) is x


def test_no_grad_records_nothing(rng):
    a = Tensor(rng.standard_normal(3), requires_grad=True)
    with ag.no_grad():
        b = a * 2.0
    assert not b.requires_grad and b._parents == ()
    c = a * 2.0
    assert c.requires_grad


def test_frozen_inputs_get_no_grad(rng):
    a = Tensor(rng.standard_normal(3), requires_grad=True)
    frozen = Tensor(rng.standard_normal(3))
    (a * frozen).sum().backward()
    assert frozen.grad is None
    np.testing.assert_allclose(a.grad, frozen.data)


def test_backward_requires_scalar(rng):
    with pytest.raises(ValueError):
        Tensor(rng.standard_normal(3), requires_grad=True).backward()


def test_conv_channel_mismatch():
    with pytest.raises(ValueError):
        ag.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
