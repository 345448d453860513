"""Dense arrays with reverse-mode gradients.

A :class:`Tensor` wraps a float64 numpy array and records, for every
operation that produced it, the parents and a backward rule. Calling
:meth:`Tensor.backward` on a scalar walks the record in reverse
topological order and accumulates ``.grad`` on every tensor that
requires it. :class:`Parameter` is a named leaf tensor whose gradient
buffer always matches its value's shape.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, ProbeError

DTYPE = np.float64

# additive attention mask; exp() of it underflows to exactly 0.0
NEG_INF = -1e9


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
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    # -- graph plumbing ---------------------------------------------------
    @staticmethod
    def _make(data, parents, backward):
        parents = tuple(p for p in parents if p.requires_grad)
        if not parents:
            return Tensor(data)
        return Tensor(data, True, parents, backward)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar, got shape %s" % (self.shape,))
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior buffers are not needed once propagated
                if node._parents:
                    node.grad = None

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._make(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: a._accumulate(-g))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other.reciprocal()
        return self * (1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reciprocal(self):
        a = self
        out = 1.0 / a.data
        return Tensor._make(out, (a,), lambda g: a._accumulate(-g * out * out))

    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: a._accumulate(g * out))

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data))

    def relu(self):
        a = self
        keep = a.data > 0
        return Tensor._make(a.data * keep, (a,), lambda g: a._accumulate(g * keep))

    def sigmoid(self):
        a = self
        out = _sigmoid(a.data)
        return Tensor._make(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))

    def clip(self, lo, hi):
        """Clamp values; gradient passes only where the input was inside."""
        a = self
        inside = (a.data >= lo) & (a.data <= hi)
        out = np.clip(a.data, lo, hi)
        return Tensor._make(out, (a,), lambda g: a._accumulate(g * inside))

    # -- reductions and shape -----------------------------------------------
    def sum(self, axis=None, keepdims=False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape))

        return Tensor._make(out, (a,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        return Tensor._make(a.data.reshape(*shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))

    def transpose(self, *axes):
        a = self
        inv = np.argsort(axes)
        return Tensor._make(a.data.transpose(*axes), (a,), lambda g: a._accumulate(g.transpose(*inv)))

    @property
    def T(self):
        return self.transpose(*reversed(range(self.ndim)))

    def __getitem__(self, key):
        a = self

        def backward(g):
            buf = np.zeros_like(a.data)
            buf[key] += g
            a._accumulate(buf)

        return Tensor._make(a.data[key], (a,), backward)

    def take_rows(self, index):
        """Gather rows of a 2-D table: ``out[...] = self.data[index[...]]``."""
        a = self
        index = np.asarray(index)
        out = a.data[index]

        def backward(g):
            buf = np.zeros_like(a.data)
            np.add.at(buf, index.reshape(-1), g.reshape(-1, a.shape[1]))
            a._accumulate(buf)

        return Tensor._make(out, (a,), backward)


class Parameter(Tensor):
    """Named learnable leaf tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name=""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g):
        self.grad += g

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def matmul(a, b):
    """Matrix product (batched over leading axes), differentiable in both."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # fold leading axes into one GEMM
        k, p = b.shape
        a2 = a.data.reshape(-1, k)

        def backward(g):
            g2 = g.reshape(-1, p)
            if a.requires_grad:
                a._accumulate((g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                b._accumulate(a2.T @ g2)

        return Tensor._make((a2 @ b.data).reshape(*a.shape[:-1], p), (a, b), backward)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return Tensor._make(a.data @ b.data, (a, b), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor._make(out, (x,), backward)


def symmetric_kl_from_logits(z1, z2, floor=1e-12):
    """Per-row ``0.5 * sum((p - q) * (log p - log q))`` with ``p, q = softmax(z1), softmax(z2)``.

    Log-probabilities are floored at ``log(floor)``, matching a clamp of the
    probabilities; the floor blocks gradient like :meth:`Tensor.clip`.
    Returns a tensor with the leading shape of the inputs.
    """
    z1, z2 = as_tensor(z1), as_tensor(z2)
    if z1.shape != z2.shape:
        raise DimensionError(f"kl shape mismatch: {z1.shape} vs {z2.shape}")
    lf = np.log(floor)

    def logsm(z):
        zc = z - z.max(axis=-1, keepdims=True)
        return zc - np.log(np.exp(zc).sum(axis=-1, keepdims=True))

    l1, l2 = logsm(z1.data), logsm(z2.data)
    p, q = np.exp(l1), np.exp(l2)
    a, b = np.maximum(l1, lf), np.maximum(l2, lf)
    diff_p, diff_log = p - q, a - b
    out = 0.5 * (diff_p * diff_log).sum(axis=-1)

    def backward(g):
        g = g[..., None] * 0.5
        # d/dp and d/dq before the softmax Jacobian
        gp = g * (diff_log + np.where(l1 > lf, diff_p / p, 0.0))
        gq = g * (-diff_log - np.where(l2 > lf, diff_p / q, 0.0))
        if z1.requires_grad:
            z1._accumulate(p * (gp - (gp * p).sum(-1, keepdims=True)))
        if z2.requires_grad:
            z2._accumulate(q * (gq - (gq * q).sum(-1, keepdims=True)))

    return Tensor._make(out, (z1, z2), backward)


def softmax_rows(x):
    """Row-wise softmax of a matrix, stabilised by subtracting the row max."""
    return softmax(x, axis=-1)


def layer_norm(x, gain, bias, eps=1e-8):
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    d = x.shape[-1]

    def backward(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx = g * gain.data
            gx = inv / d * (d * gx - gx.sum(-1, keepdims=True) - xhat * (gx * xhat).sum(-1, keepdims=True))
            x._accumulate(gx)

    return Tensor._make(out, (x, gain, bias), backward)


def dropout(x, p, rng, train):
    """Inverted dropout: seeded keep-mask scaled by 1/(1-p); identity in eval."""
    if not train or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * Tensor(keep)


def grad_check(f, params, h=1e-5, order=2):
    """Compare analytic gradients of scalar ``f()`` against central differences.

    Returns the largest ``|analytic - numeric| / (|analytic| + |numeric| + 1e-8)``
    over every coordinate of every parameter. The analytic gradients are
    left in each parameter's ``grad``. ``order=4`` uses the five-point
    stencil, which tolerates a larger ``h`` and so loses less to rounding
    on coordinates with tiny gradients.
    """
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    offsets, weights = ((1, -1), (1, -1)) if order == 2 else ((2, 1, -1, -2), (-1, 8, -8, 1))
    denom = 2 * h if order == 2 else 12 * h
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f()
    if not np.isfinite(out.data).all():
        raise ProbeError("f is not finite at the base point")
    out.backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        ga = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            values = []
            for k in offsets:
                flat[i] = orig + k * h
                values.append(f().item())
            flat[i] = orig
            if not np.isfinite(values).all():
                raise ProbeError(f"f is not finite when probing {getattr(p, 'name', '')}[{i}]")
            num = sum(w * v for w, v in zip(weights, values)) / denom
            err = abs(ga[i] - num) / (abs(ga[i]) + abs(num) + 1e-8)
            worst = max(worst, err)
    for p, ga in zip(params, analytic):
        p.grad = ga
    return worst
