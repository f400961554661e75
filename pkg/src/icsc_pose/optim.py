"""Bias-corrected Adam over named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)  # first moments, by parameter name
    v: dict = field(default_factory=dict)  # second moments, by parameter name


class Adam:
    def __init__(self, params: dict, lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)  # name -> Tensor
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        """One update; parameters with no gradient are left untouched."""
        s = self.state
        s.step += 1
        c1 = 1.0 - s.beta1 ** s.step
        c2 = 1.0 - s.beta2 ** s.step
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            m = s.m[name]
            v = s.v[name]
            m += (1.0 - s.beta1) * (g - m)
            v += (1.0 - s.beta2) * (g * g - v)
            update = (m / c1) / (np.sqrt(v / c2) + s.eps)
            p.data = p.data - (s.lr * update).astype(p.data.dtype)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """Functional single step on plain arrays; returns the updated params.

    Mirrors Adam.step for callers that manage arrays rather than Tensors.
    """
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        g = np.asarray(g)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        out[name] = p - (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return out
