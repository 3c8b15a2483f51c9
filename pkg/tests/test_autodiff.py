"""Finite-difference checks for every autodiff primitive."""

import numpy as np
import pytest

from modkd import autodiff as ad


def fd_check(fn, leaves, h=1e-6, rtol=1e-5, atol=2e-6):
    """Compare analytic gradients of scalar fn(*leaves) with central differences."""
    out = fn(*leaves)
    assert out.data.size == 1
    out.backward()
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in leaves]
    for t in leaves:
        t.zero_grad()
    for leaf, grad in zip(leaves, grads):
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = fn(*leaves).item()
            flat[i] = orig - h
            lm = fn(*leaves).item()
            flat[i] = orig
            num = (lp - lm) / (2 * h)
            ana = grad.reshape(-1)[i]
            assert abs(num - ana) <= atol + rtol * (abs(num) + abs(ana)), (
                f"grad mismatch at flat index {i}: analytic {ana}, numeric {num}"
            )


def leaf(rng, shape):
    return ad.Tensor(rng.standard_normal(shape), requires_grad=True)


def test_add_sub_mul_broadcast():
    rng = np.random.default_rng(0)
    a = leaf(rng, (3, 4))
    b = leaf(rng, (1, 4))
    c = leaf(rng, ())
    fd_check(lambda a, b, c: ad.ssum(ad.mul(ad.add(a, b), ad.sub(a, c))), [a, b, c])


def test_reductions():
    rng = np.random.default_rng(1)
    a = leaf(rng, (2, 3, 4))
    fd_check(lambda a: ad.ssum(ad.mul(ad.ssum(a, axis=(1,), keepdims=True), a)), [a])
    fd_check(lambda a: ad.mul(ad.mean(a), 3.0), [a])
    fd_check(lambda a: ad.ssum(ad.square(ad.mean(a, axis=2))), [a])


def test_elementwise_unary():
    rng = np.random.default_rng(2)
    # keep inputs away from the |x| kink and log/sqrt domain edges
    a = ad.Tensor(rng.uniform(0.5, 2.0, size=(3, 3)), requires_grad=True)
    s = ad.Tensor(np.where(rng.standard_normal((3, 3)) > 0, 1.0, -1.0)
                  * rng.uniform(0.5, 2.0, size=(3, 3)), requires_grad=True)
    fd_check(lambda a: ad.ssum(ad.sqrt(a)), [a])
    fd_check(lambda a: ad.ssum(ad.log(a)), [a])
    fd_check(lambda a: ad.ssum(ad.reciprocal(a)), [a])
    fd_check(lambda s: ad.ssum(ad.absolute(s)), [s])
    fd_check(lambda s: ad.ssum(ad.square(s)), [s])


def test_clip_passes_gradient_inside_only():
    x = ad.Tensor(np.array([-2.0, 0.3, 0.7, 2.0]), requires_grad=True)
    out = ad.ssum(ad.clip(x, 0.0, 1.0))
    out.backward()
    assert np.array_equal(x.grad, [0.0, 1.0, 1.0, 0.0])


def test_sigmoid_and_leaky_relu():
    rng = np.random.default_rng(3)
    a = ad.Tensor(rng.uniform(0.2, 3.0, (4,)) * np.array([1, -1, 1, -1]), requires_grad=True)
    fd_check(lambda a: ad.ssum(ad.sigmoid(a)), [a])
    fd_check(lambda a: ad.ssum(ad.leaky_relu(a, 0.01)), [a])
    big = ad.Tensor(np.array([50.0, -50.0, 800.0, -800.0]))
    y = ad.sigmoid(big)
    assert np.isfinite(y.data).all()
    assert y.data[0] > 0.999 and y.data[1] < 0.001


def test_concat_and_narrow():
    rng = np.random.default_rng(4)
    a = leaf(rng, (2, 3, 4))
    b = leaf(rng, (2, 2, 4))

    def fn(a, b):
        cat = ad.concat([a, b], axis=1)
        return ad.ssum(ad.square(ad.narrow(cat, 1, 1, 3)))

    fd_check(fn, [a, b])


@pytest.mark.parametrize("dims", [2, 3])
def test_upsample_nearest(dims):
    rng = np.random.default_rng(5)
    a = leaf(rng, (2, 3) + (4,) * dims)
    fd_check(lambda a: ad.ssum(ad.square(ad.upsample_nearest(a))), [a])
    up = ad.upsample_nearest(a)
    assert up.data.shape == (2, 3) + (8,) * dims
    assert up.data[0, 0, 0, 0] == up.data[0, 0, 1, 1] if dims == 2 else True


@pytest.mark.parametrize("dims,stride", [(2, 1), (2, 2), (3, 1), (3, 2)])
def test_conv(dims, stride):
    rng = np.random.default_rng(6)
    x = leaf(rng, (2, 2) + (4,) * dims)
    w = leaf(rng, (3, 2) + (3,) * dims)
    fd_check(lambda x, w: ad.ssum(ad.square(ad.conv(x, w, stride=stride, pad=1))), [x, w])
    out = ad.conv(x, w, stride=stride, pad=1)
    expected = 4 if stride == 1 else 2
    assert out.data.shape == (2, 3) + (expected,) * dims


def test_conv_1x1_with_bias_matches_manual():
    rng = np.random.default_rng(7)
    x = leaf(rng, (1, 3, 4, 4))
    w = leaf(rng, (2, 3, 1, 1))
    b = leaf(rng, (2,))
    out = ad.conv(x, w, bias=b, stride=1, pad=0)
    manual = np.einsum("bchw,oc->bohw", x.data, w.data[:, :, 0, 0]) + b.data.reshape(1, 2, 1, 1)
    assert np.allclose(out.data, manual, atol=1e-12)
    fd_check(lambda x, w, b: ad.ssum(ad.square(ad.conv(x, w, bias=b, stride=1, pad=0))), [x, w, b])


def test_conv_matches_direct_convolution():
    # cross-correlation oracle via explicit loops
    rng = np.random.default_rng(8)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    out = ad.conv(ad.Tensor(x), ad.Tensor(w), stride=1, pad=1).data
    xp = np.pad(x, [(0, 0), (0, 0), (1, 1), (1, 1)])
    ref = np.zeros((1, 3, 5, 5))
    for o in range(3):
        for i in range(5):
            for j in range(5):
                ref[0, o, i, j] = (xp[0, :, i:i + 3, j:j + 3] * w[o]).sum()
    assert np.allclose(out, ref, atol=1e-12)


def test_instance_norm():
    rng = np.random.default_rng(9)
    x = leaf(rng, (2, 3, 4, 4))
    g = ad.Tensor(rng.uniform(0.5, 1.5, (3,)), requires_grad=True)
    b = leaf(rng, (3,))
    fd_check(lambda x, g, b: ad.ssum(ad.square(ad.instance_norm(x, g, b))), [x, g, b], rtol=1e-4)
    out = ad.instance_norm(x, ad.Tensor(np.ones(3)), ad.Tensor(np.zeros(3)))
    assert np.allclose(out.data.mean(axis=(2, 3)), 0.0, atol=1e-10)
    assert np.allclose(out.data.std(axis=(2, 3)), 1.0, atol=1e-3)


def test_detach_blocks_gradient():
    x = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = ad.ssum(ad.mul(x.detach(), x))
    y.backward()
    assert np.array_equal(x.grad, x.data)  # only the non-detached factor contributes


def test_shared_node_diamond():
    x = ad.Tensor(np.array([3.0]), requires_grad=True)
    y = ad.add(ad.mul(x, x), x)  # x^2 + x, dy/dx = 2x + 1
    y.backward()
    assert np.allclose(x.grad, [7.0])


def test_no_grad_builds_no_graph():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.mul(x, 2.0)
    assert y._backward is None and not y.requires_grad


def test_backward_requires_scalar():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.mul(x, 2.0).backward()
