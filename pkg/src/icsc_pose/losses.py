"""Pose regression losses: fixed-beta, learnable-weight, and the scene-coordinate variant.

All three losses share the component terms

    l_x = ||x - x_hat||_2          position error, meters
    l_q = ||q - q_hat||_2          raw 4-vector orientation error
    l_c = ||c - c_hat||_2          image-centre scene coordinate error, meters

where q_hat enters unnormalized (prediction heads are free 4-vectors) but is
normalized before any ray is cast for c_hat, since only a unit quaternion is a
rotation. Learnable log-variances s = log(sigma^2) weight the terms as
l * exp(-s) + s; the additive s term stops s from running to +inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import (
    CylinderModel,
    NonDifferentiableRegion,
    Pose,
    fallback_jacobian,
    icsc,
    icsc_hit,
    icsc_jacobian,
)


@dataclass
class LossState:
    """One evaluation point: prediction, ground truth, and log-variances."""

    pred: Pose
    truth: Pose
    s_x: float = 0.0
    s_q: float = 0.0
    s_c: float = 0.0


@dataclass
class BetaWeight:
    beta: float

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")


@dataclass
class LossBreakdown:
    total: float
    l_x: float
    l_q: float
    l_c: float
    grad_pred: np.ndarray  # d total / d (x_hat, q_hat), shape (7,)
    grad_s: np.ndarray  # d total / d (s_x, s_q, s_c), shape (3,)
    degenerate: bool = False


def _norm_with_grad(diff: np.ndarray):
    """Euclidean norm and its gradient in the first argument; 0 maps to 0."""
    n = float(np.linalg.norm(diff))
    if n == 0.0:
        return 0.0, np.zeros_like(diff)
    return n, diff / n


def loss_position(pred_x, truth_x):
    """||x - x_hat|| and its gradient w.r.t. the prediction."""
    diff = np.asarray(pred_x, dtype=float) - np.asarray(truth_x, dtype=float)
    return _norm_with_grad(diff)


def loss_orientation(pred_q, truth_q):
    """Raw 4-vector distance ||q - q_hat||; the prediction is not normalized."""
    diff = np.asarray(pred_q, dtype=float) - np.asarray(truth_q, dtype=float)
    return _norm_with_grad(diff)


class IcscComponent(NamedTuple):
    value: float
    grad_pred: np.ndarray  # shape (7,)
    degenerate: bool


def loss_icsc_component(pred: Pose, truth: Pose, cyl: CylinderModel) -> IcscComponent:
    """Distance between true and predicted centre scene coordinates.

    The truth ray is expected to hit the cylinder (dataset construction
    guarantees it). A predicted ray that misses uses the continuous
    closest-approach surrogate; its own Jacobian keeps the gradient
    informative. A degenerate (axis-aligned) predicted ray contributes zero
    gradient and is flagged so training can count the event.
    """
    c_true = icsc(truth, cyl)
    hit = icsc_hit(pred, cyl)
    value, dvalue_dc = _norm_with_grad(hit.point - c_true)
    if hit.degenerate:
        return IcscComponent(value, np.zeros(7), True)
    try:
        if hit.hit:
            jac = icsc_jacobian(pred, cyl)
        else:
            jac = fallback_jacobian(pred, cyl)
    except NonDifferentiableRegion:
        # Tangent grazes sit on the hit/miss boundary; the surrogate Jacobian
        # is the continuous extension from the miss side.
        try:
            jac = fallback_jacobian(pred, cyl)
        except NonDifferentiableRegion:
            return IcscComponent(value, np.zeros(7), True)
    return IcscComponent(value, dvalue_dc @ jac, False)


def loss_beta(state: LossState, w: BetaWeight) -> LossBreakdown:
    """Fixed weighting: l_x + beta * l_q."""
    l_x, g_x = loss_position(state.pred.position, state.truth.position)
    l_q, g_q = loss_orientation(state.pred.orientation, state.truth.orientation)
    grad = np.concatenate([g_x, w.beta * g_q])
    return LossBreakdown(
        total=l_x + w.beta * l_q,
        l_x=l_x, l_q=l_q, l_c=0.0,
        grad_pred=grad,
        grad_s=np.zeros(3),
    )


def loss_learnable(state: LossState) -> LossBreakdown:
    """Homoscedastic weighting: l_x e^{-s_x} + s_x + l_q e^{-s_q} + s_q."""
    l_x, g_x = loss_position(state.pred.position, state.truth.position)
    l_q, g_q = loss_orientation(state.pred.orientation, state.truth.orientation)
    wx, wq = math.exp(-state.s_x), math.exp(-state.s_q)
    grad = np.concatenate([wx * g_x, wq * g_q])
    grad_s = np.array([1.0 - l_x * wx, 1.0 - l_q * wq, 0.0])
    return LossBreakdown(
        total=l_x * wx + state.s_x + l_q * wq + state.s_q,
        l_x=l_x, l_q=l_q, l_c=0.0,
        grad_pred=grad,
        grad_s=grad_s,
    )


def loss_icsc_total(state: LossState, cyl: CylinderModel) -> LossBreakdown:
    """Learnable weighting plus the scene-coordinate term l_c e^{-s_c} + s_c."""
    base = loss_learnable(state)
    comp = loss_icsc_component(state.pred, state.truth, cyl)
    wc = math.exp(-state.s_c)
    grad_s = base.grad_s.copy()
    grad_s[2] = 1.0 - comp.value * wc
    # summed as base + extra so the decomposition is exact in floats
    return LossBreakdown(
        total=base.total + (comp.value * wc + state.s_c),
        l_x=base.l_x, l_q=base.l_q, l_c=comp.value,
        grad_pred=base.grad_pred + wc * comp.grad_pred,
        grad_s=grad_s,
        degenerate=comp.degenerate,
    )


def evaluate_loss(selector: str, state: LossState, cyl: CylinderModel,
                  beta: float = 500.0) -> LossBreakdown:
    """Dispatch on the loss selector used throughout training configs."""
    if selector == "beta":
        return loss_beta(state, BetaWeight(beta))
    if selector == "learnable":
        return loss_learnable(state)
    if selector == "icsc":
        return loss_icsc_total(state, cyl)
    raise ValueError(f"unknown loss selector: {selector!r}")
