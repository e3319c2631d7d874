"""A small tape-based reverse-mode autodiff over numpy arrays.

Only the operations the encoder and the denoiser need are provided.  Each op
returns a new :class:`Tensor` holding its parents and a closure that maps
the output gradient to parent gradients.  Ops are dtype-generic, so the same
graph runs in float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def backward(self, grad=None):
        """Accumulate ``d(self)/d(leaf)`` contracted with ``grad`` into every
        leaf's ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                grads[id(p)] = pg if id(p) not in grads else grads[id(p)] + pg


def leaf(data, requires_grad=True) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def const(data) -> Tensor:
    return Tensor(data)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return Tensor(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return Tensor(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape),
                             _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, k: float) -> Tensor:
    return Tensor(a.data * k, (a,), lambda g: (g * k,))


def matmul(a, b) -> Tensor:
    """Batched ``a @ b`` with numpy broadcasting over leading dims."""
    a, b = _t(a), _t(b)

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor(a.data @ b.data, (a, b), bw)


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return Tensor(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def scatter_rows(a: Tensor, index, n_out: int) -> Tensor:
    """Rows of ``a`` placed at ``index`` in an ``n_out``-row zero matrix."""
    index = np.asarray(index, dtype=int)
    out = np.zeros((n_out,) + a.shape[1:], a.data.dtype)
    out[index] = a.data
    return Tensor(out, (a,), lambda g: (g[index],))


def _sigmoid(x):
    # split by sign so large |x| never overflows exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return Tensor(s, (a,), lambda g: (g * s * (1 - s),))


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return Tensor(a.data * s, (a,), lambda g: (g * (s + a.data * s * (1 - s)),))


def softmax(a: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; ``mask`` (broadcastable, True = keep)
    removes entries from the normalization."""
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor(p, (a,), bw)


def tsum(a: Tensor) -> Tensor:
    return Tensor(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def _im2col(x):
    """(B, C, H, W) -> (B, H, W, C*9) patches of a zero-padded 3x3 window."""
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((B, C, 3, 3, H, W), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            cols[:, :, di, dj] = xp[:, :, di:di + H, dj:dj + W]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(B, H, W, C * 9)


def _col2im(cols, shape):
    B, C, H, W = shape
    cols = cols.reshape(B, H, W, C, 3, 3).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((B, C, H + 2, W + 2), dtype=cols.dtype)
    for di in range(3):
        for dj in range(3):
            xp[:, :, di:di + H, dj:dj + W] += cols[:, :, di, dj]
    return xp[:, :, 1:-1, 1:-1]


def conv3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-size 3x3 convolution with zero padding.  ``w``: (Cout, Cin, 3, 3)."""
    B, C, H, W = x.shape
    cout = w.shape[0]
    cols = _im2col(x.data)
    wm = w.data.reshape(cout, -1)
    out = (cols @ wm.T).transpose(0, 3, 1, 2) + b.data[None, :, None, None]

    def bw(g):
        gm = g.transpose(0, 2, 3, 1)  # B, H, W, Cout
        gw = (gm.reshape(-1, cout).T @ cols.reshape(-1, C * 9)).reshape(w.shape)
        gb = g.sum(axis=(0, 2, 3))
        gx = _col2im(gm @ wm, x.shape)
        return gx, gw, gb

    return Tensor(out, (x, w, b), bw)


def avgpool2(x: Tensor) -> Tensor:
    """2x2 average pooling; odd sizes are zero-padded (ceil mode)."""
    B, C, H, W = x.shape
    H2, W2 = -(-H // 2), -(-W // 2)
    xp = np.zeros((B, C, 2 * H2, 2 * W2), dtype=x.data.dtype)
    xp[:, :, :H, :W] = x.data
    out = xp.reshape(B, C, H2, 2, W2, 2).mean(axis=(3, 5))

    def bw(g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0
        return (gx[:, :, :H, :W].astype(x.data.dtype),)

    return Tensor(out, (x,), bw)


def upsample2(x: Tensor, out_hw) -> Tensor:
    """Nearest-neighbour 2x upsampling cropped to ``out_hw``."""
    B, C, h, w = x.shape
    H, W = out_hw
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)[:, :, :H, :W]

    def bw(g):
        gp = np.zeros((B, C, 2 * h, 2 * w), dtype=g.dtype)
        gp[:, :, :H, :W] = g
        return (gp.reshape(B, C, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor(out, (x,), bw)


def masked_mse(pred: Tensor, target, mask) -> Tensor:
    """Mean of ``(pred - target)^2`` over cells where ``mask`` is True."""
    m = np.asarray(mask, dtype=pred.data.dtype)
    count = max(float(m.sum()), 1.0)
    diff = (pred.data - target) * m
    val = np.asarray((diff * diff).sum() / count, dtype=pred.data.dtype)
    return Tensor(val, (pred,), lambda g: (g * 2.0 * diff / count,))
