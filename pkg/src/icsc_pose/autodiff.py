"""Minimal reverse-mode autodiff over dense numpy arrays.

Just the layer set a small convolutional pose regressor needs: conv2d
(stride 1, zero padding), 2x2 max pooling, relu, fully-connected, flatten.
Each op records a closure that scatters the output gradient to its parents;
Tensor.backward runs them in reverse topological order. Arrays keep whatever
dtype they are given, so gradient checks can run the whole stack in float64
while training stores float32.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=""):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad=None):
        """Backpropagate from this tensor; grad defaults to ones."""
        if self._backward is None and not self._parents:
            raise RuntimeError("backward called on a tensor with no recorded graph")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        if grad is None:
            grad = np.ones_like(self.data)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name!r})"


def _needs_grad(*tensors):
    return any(t.requires_grad for t in tensors)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, _needs_grad(a, b), (a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0), x.requires_grad, (x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    out._backward = backward
    return out


def flatten(x: Tensor) -> Tensor:
    """(N, ...) -> (N, D)."""
    n = x.data.shape[0]
    out = Tensor(x.data.reshape(n, -1), x.requires_grad, (x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.data.shape))

    out._backward = backward
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with x (N, D), w (D, M), b (M,)."""
    out = Tensor(x.data @ w.data + b.data, _needs_grad(x, w, b), (x, w, b))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    out._backward = backward
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor, padding: int = 1) -> Tensor:
    """Stride-1 cross-correlation; x (N,C,H,W), w (F,C,kh,kw), b (F,)."""
    n, c, h, wd = x.data.shape
    f, cw, kh, kw = w.data.shape
    if cw != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, kernel {cw}")
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    oh, ow = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    # (N, C, OH, OW, kh, kw) -> im2col matrix (N, OH*OW, C*kh*kw)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, oh * ow, c * kh * kw)
    wmat = w.data.reshape(f, c * kh * kw)
    y = cols @ wmat.T + b.data
    out = Tensor(y.transpose(0, 2, 1).reshape(n, f, oh, ow), _needs_grad(x, w, b), (x, w, b))

    def backward(g):
        gmat = g.reshape(n, f, oh * ow).transpose(0, 2, 1)  # (N, OH*OW, F)
        if b.requires_grad:
            b._accumulate(gmat.sum(axis=(0, 1)))
        if w.requires_grad:
            gw = np.einsum("npf,npk->fk", gmat, cols, optimize=True)
            w._accumulate(gw.reshape(w.data.shape))
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(n, oh, ow, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + oh, j:j + ow] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            x._accumulate(gxp[:, :, p:p + h, p:p + wd] if p else gxp)

    out._backward = backward
    return out


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; spatial dims must be even."""
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError("maxpool2 needs even spatial dimensions")
    oh, ow = h // 2, w // 2
    tiles = x.data.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    idx = tiles.argmax(axis=-1)
    out = Tensor(np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0],
                 x.requires_grad, (x,))

    def backward(g):
        if not x.requires_grad:
            return
        gt = np.zeros_like(tiles)
        np.put_along_axis(gt, idx[..., None], g[..., None], axis=-1)
        gx = gt.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        x._accumulate(gx)

    out._backward = backward
    return out
