"""Minimal dense-tensor reverse-mode differentiation engine.

Tensors wrap float64 numpy arrays and record backward closures on a tape;
``Tensor.backward()`` walks the tape in reverse topological order. Feature
maps use NHWC layout throughout. Only the primitives the denoiser and the
evaluation classifier need are provided.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Optional, Sequence, Tuple

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording (sampling, frozen-model inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: Tuple["Tensor", ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-accumulate gradients from this (scalar) tensor."""
        if self.data.shape != ():
            raise ValueError(f"backward() needs a scalar, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Build a graph node; records the closure only while grads are enabled."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return make_node(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(-_unbroadcast(g, b.data.shape))

    return make_node(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return make_node(data, (a, b), backward)


def square(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(2.0 * a.data * g)

    return make_node(a.data ** 2, (a,), backward)


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            a.accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return make_node(data, (a,), backward)


def tmean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g / n, a.data.shape).copy())

    return make_node(a.data.mean(), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.data.shape))

    return make_node(a.data.reshape(shape), (a,), backward)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        offs = np.cumsum([0] + sizes)
        for t, lo, hi in zip(tensors, offs[:-1], offs[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    return make_node(data, tuple(tensors), backward)


def channel_slice(a, start, stop) -> Tensor:
    """Slice the trailing (channel) axis; backward scatters into place."""
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[..., start:stop] = g
            a.accumulate(full)

    return make_node(a.data[..., start:stop], (a,), backward)


# ---------------------------------------------------------------------------
# neural-network primitives
# ---------------------------------------------------------------------------

def silu(a) -> Tensor:
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    data = a.data * s

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * s * (1.0 + a.data * (1.0 - s)))

    return make_node(data, (a,), backward)


def linear(x, w, b) -> Tensor:
    """x (B, K) @ w (K, N) + b (N)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(
            f"linear shape mismatch: x {x.data.shape} vs w {w.data.shape}")
    data = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ w.data.T)
        if w.requires_grad:
            w.accumulate(x.data.T @ g)
        if b.requires_grad:
            b.accumulate(g.sum(axis=0))

    return make_node(data, (x, w, b), backward)


def conv2d(x, w, b) -> Tensor:
    """Same-padding stride-1 convolution; x NHWC, w (kh, kw, cin, cout)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    bs, h, wd, cin = x.data.shape
    kh, kw, wcin, cout = w.data.shape
    if cin != wcin:
        raise ValueError(
            f"conv2d channel mismatch: input {x.data.shape} vs kernel {w.data.shape}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.zeros((bs, h, wd, cout))
    for dy in range(kh):
        for dx in range(kw):
            out += xp[:, dy:dy + h, dx:dx + wd, :] @ w.data[dy, dx]
    out += b.data

    def backward(g):
        if b.requires_grad:
            b.accumulate(g.sum(axis=(0, 1, 2)))
        if w.requires_grad:
            dw = np.zeros_like(w.data)
            for dy in range(kh):
                for dx in range(kw):
                    patch = xp[:, dy:dy + h, dx:dx + wd, :]
                    dw[dy, dx] = np.tensordot(patch, g, axes=([0, 1, 2], [0, 1, 2]))
            w.accumulate(dw)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for dy in range(kh):
                for dx in range(kw):
                    dxp[:, dy:dy + h, dx:dx + wd, :] += g @ w.data[dy, dx].T
            x.accumulate(dxp[:, ph:ph + h, pw:pw + wd, :])

    return make_node(out, (x, w, b), backward)


def group_norm(x, gamma, beta, groups, eps=1e-5) -> Tensor:
    """Per-sample, per-group normalization over (H, W, C/groups), then a
    per-channel affine transform."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    bs, h, w, c = x.data.shape
    if c % groups:
        raise ValueError(f"channels {c} not divisible by groups {groups}")
    gx = x.data.reshape(bs, h, w, groups, c // groups)
    mean = gx.mean(axis=(1, 2, 4), keepdims=True)
    var = gx.var(axis=(1, 2, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = ((gx - mean) * inv).reshape(bs, h, w, c)
    data = y * gamma.data + beta.data

    def backward(g):
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=(0, 1, 2)))
        if gamma.requires_grad:
            gamma.accumulate((g * y).sum(axis=(0, 1, 2)))
        if x.requires_grad:
            dy = (g * gamma.data).reshape(bs, h, w, groups, c // groups)
            yg = y.reshape(bs, h, w, groups, c // groups)
            m1 = dy.mean(axis=(1, 2, 4), keepdims=True)
            m2 = (dy * yg).mean(axis=(1, 2, 4), keepdims=True)
            dx = inv * (dy - m1 - yg * m2)
            x.accumulate(dx.reshape(bs, h, w, c))

    return make_node(data, (x, gamma, beta), backward)


def upsample_nearest(x) -> Tensor:
    """Double H and W by nearest-neighbour repetition."""
    x = as_tensor(x)
    data = x.data.repeat(2, axis=1).repeat(2, axis=2)

    def backward(g):
        if x.requires_grad:
            bs, h2, w2, c = g.shape
            x.accumulate(g.reshape(bs, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4)))

    return make_node(data, (x,), backward)


def downsample_avg(x) -> Tensor:
    """Halve H and W by 2x2 average pooling."""
    x = as_tensor(x)
    bs, h, w, c = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"downsample_avg needs even H, W; got {x.data.shape}")
    data = x.data.reshape(bs, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def backward(g):
        if x.requires_grad:
            x.accumulate(g.repeat(2, axis=1).repeat(2, axis=2) / 4.0)

    return make_node(data, (x,), backward)


def embed_lookup(table, idx) -> Tensor:
    """table (N, D) rows gathered by integer index array (B,)."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= table.data.shape[0]:
        raise ValueError(
            f"index out of range [0, {table.data.shape[0]}): {idx}")

    def backward(g):
        if table.requires_grad:
            dt = np.zeros_like(table.data)
            np.add.at(dt, idx, g)
            table.accumulate(dt)

    return make_node(table.data[idx], (table,), backward)


def avgpool2(x) -> Tensor:
    return downsample_avg(x)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of integer labels under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    bs = logits.data.shape[0]
    loss = -logp[np.arange(bs), labels].mean()

    def backward(g):
        if logits.requires_grad:
            probs = np.exp(logp)
            probs[np.arange(bs), labels] -= 1.0
            logits.accumulate(g * probs / bs)

    return make_node(np.float64(loss), (logits,), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain-array softmax used at inference time."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
