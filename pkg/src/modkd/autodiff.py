"""Minimal reverse-mode automatic differentiation over numpy arrays.

Supports exactly the operations the segmentation backbone and losses need:
n-dimensional convolution (via im2col + GEMM), instance normalization,
leaky rectifier, nearest-neighbour upsampling, concatenation/slicing,
sigmoid, clipping, and the usual arithmetic/reduction primitives.
Everything is deterministic: the backward pass walks the graph in reverse
construction order.
"""

from __future__ import annotations

import itertools

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph construction (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """Array node in the computation graph.

    ``data`` is always a numpy array. ``grad`` is allocated lazily during
    the backward pass and has the same shape/dtype as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, cut off from the graph."""
        return Tensor(self.data, requires_grad=False)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Backpropagate from this node. ``seed`` defaults to 1 for scalars."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without seed requires a scalar output")
            seed = np.ones_like(self.data)
        topo = _toposort(self)
        self.grad = np.asarray(seed, dtype=self.data.dtype).reshape(self.data.shape)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar used by the losses; scalars are treated as constants.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data, parents, backward) -> Tensor:
    """Wrap an op result; only records the graph when gradients are wanted."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic / reductions
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def ssum(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not x.requires_grad:
            return
        if axis is None:
            x.accumulate_grad(np.broadcast_to(g, x.data.shape))
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(a % x.data.ndim for a in axes)
            shape = tuple(1 if i in axes else s for i, s in enumerate(x.data.shape))
            g = g.reshape(shape)
        x.accumulate_grad(np.broadcast_to(g, x.data.shape))

    return _make(data, (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size if axis is None else np.prod(
        [x.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(ssum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def absolute(x) -> Tensor:
    x = _as_tensor(x)
    data = np.abs(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * np.sign(x.data))

    return _make(data, (x,), backward)


def square(x) -> Tensor:
    x = _as_tensor(x)
    data = x.data * x.data

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * (2.0 * x.data))

    return _make(data, (x,), backward)


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    data = np.sqrt(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * (0.5 / np.maximum(data, np.finfo(data.dtype).tiny)))

    return _make(data, (x,), backward)


def log(x) -> Tensor:
    x = _as_tensor(x)
    data = np.log(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g / x.data)

    return _make(data, (x,), backward)


def reciprocal(x) -> Tensor:
    """Element-wise 1/x (caller guarantees x is bounded away from zero)."""
    x = _as_tensor(x)
    data = 1.0 / x.data

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(-g * data * data)

    return _make(data, (x,), backward)


def clip(x, lo, hi) -> Tensor:
    """Clamp values to [lo, hi]; the gradient passes through unclamped entries."""
    x = _as_tensor(x)
    data = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * inside)

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    z = x.data
    data = np.empty_like(z)
    pos = z >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    data[~pos] = ez / (1.0 + ez)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * data * (1.0 - data))

    return _make(data, (x,), backward)


def leaky_relu(x, slope=0.01) -> Tensor:
    x = _as_tensor(x)
    neg = x.data < 0
    data = np.where(neg, x.data * slope, x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.where(neg, g * slope, g))

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def concat(tensors, axis=1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(sl)])

    return _make(data, tuple(tensors), backward)


def narrow(x, axis, start, length) -> Tensor:
    """Contiguous slice along one axis."""
    x = _as_tensor(x)
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    data = x.data[sl]

    def backward(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[sl] += g

    return _make(data, (x,), backward)


def upsample_nearest(x) -> Tensor:
    """Double every spatial axis of an [B, C, *spatial] array by repetition."""
    x = _as_tensor(x)
    d = x.data.ndim - 2
    data = x.data
    for ax in range(2, 2 + d):
        data = np.repeat(data, 2, axis=ax)

    def backward(g):
        if not x.requires_grad:
            return
        b, c = x.data.shape[:2]
        sp = x.data.shape[2:]
        shape = (b, c) + tuple(v for s in sp for v in (s, 2))
        g = g.reshape(shape)
        g = g.sum(axis=tuple(range(3, 3 + 2 * d, 2)))
        x.accumulate_grad(g)

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# convolution (im2col + GEMM) and instance norm
# ---------------------------------------------------------------------------

def _im2col(x, k, stride, pad, out):
    """[B, C, *S] -> [B, C*k^d, P] patch matrix (copies)."""
    b, c = x.shape[:2]
    d = x.ndim - 2
    if pad:
        x = np.pad(x, [(0, 0), (0, 0)] + [(pad, pad)] * d)
    p = int(np.prod(out))
    cols = np.empty((b, c, k ** d, p), dtype=x.dtype)
    for idx, off in enumerate(itertools.product(range(k), repeat=d)):
        sl = tuple(slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(off, out))
        cols[:, :, idx, :] = x[(slice(None), slice(None)) + sl].reshape(b, c, p)
    return cols.reshape(b, c * k ** d, p)


def _col2im(dcols, xshape, k, stride, pad, out):
    """Adjoint of ``_im2col``: scatter patch gradients back onto the input."""
    b, c = xshape[:2]
    sp = xshape[2:]
    d = len(sp)
    padded = tuple(s + 2 * pad for s in sp)
    dx = np.zeros((b, c) + padded, dtype=dcols.dtype)
    dcols = dcols.reshape((b, c, k ** d) + tuple(out))
    for idx, off in enumerate(itertools.product(range(k), repeat=d)):
        sl = tuple(slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(off, out))
        dx[(slice(None), slice(None)) + sl] += dcols[:, :, idx]
    if pad:
        core = (slice(None), slice(None)) + tuple(slice(pad, q - pad) for q in padded)
        dx = np.ascontiguousarray(dx[core])
    return dx


def conv(x, w, bias=None, stride=1, pad=1) -> Tensor:
    """n-D cross-correlation. ``x``: [B, C_in, *S]; ``w``: [C_out, C_in, *k]."""
    x, w = _as_tensor(x), _as_tensor(w)
    if bias is not None:
        bias = _as_tensor(bias)
    k = w.data.shape[2]
    sp = x.data.shape[2:]
    out = tuple((s + 2 * pad - k) // stride + 1 for s in sp)
    b = x.data.shape[0]
    c_out = w.data.shape[0]
    cols = _im2col(x.data, k, stride, pad, out)
    wf = w.data.reshape(c_out, -1)
    y = np.matmul(wf, cols)  # [B, C_out, P]
    y = np.ascontiguousarray(y).reshape((b, c_out) + out)
    if bias is not None:
        y = y + bias.data.reshape((1, c_out) + (1,) * len(out))

    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        gf = g.reshape(b, c_out, -1)
        if w.requires_grad:
            dw = np.einsum("bop,bkp->ok", gf, cols, optimize=True)
            w.accumulate_grad(dw.reshape(w.data.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gf.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(wf.T, gf)
            x.accumulate_grad(_col2im(dcols, x.data.shape, k, stride, pad, out))

    return _make(y, parents, backward)


def instance_norm(x, gamma, beta, eps=1e-5) -> Tensor:
    """Per-(sample, channel) normalization over spatial axes with affine scale/shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    axes = tuple(range(2, x.data.ndim))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gshape = (1, -1) + (1,) * len(axes)
    y = gamma.data.reshape(gshape) * xhat + beta.data.reshape(gshape)

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0,) + axes))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0,) + axes))
        if x.requires_grad:
            gx = g * gamma.data.reshape(gshape)
            m1 = gx.mean(axis=axes, keepdims=True)
            m2 = (gx * xhat).mean(axis=axes, keepdims=True)
            x.accumulate_grad(inv * (gx - m1 - xhat * m2))

    return _make(y, (x, gamma, beta), backward)
