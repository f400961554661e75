"""Central finite-difference verification of every analytic gradient path.

Three scopes:
  geometry  - scene-coordinate Jacobians (real intersection and surrogate)
  losses    - position, orientation, and scene-coordinate loss gradients
              w.r.t. the 7-vector prediction and the log-variances
  network   - each autodiff layer probed coordinate-wise in float64, plus
              one composite backprop check through a whole small model

Trials whose finite-difference probes would step across the hit/miss
boundary (or into the tangent region) are skipped and counted; gradients
are not defined there and the comparison would be meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import (
    CylinderModel,
    NonDifferentiableRegion,
    Pose,
    fallback_jacobian,
    icsc_hit,
    icsc_jacobian,
    quat_from_yaw_tilt,
)
from .losses import (
    LossState,
    evaluate_loss,
    loss_icsc_component,
    loss_orientation,
    loss_position,
)
from .network import ModelConfig, PoseRegressor, init_parameters

FD_EPS = 1e-6
LAYER_FD_EPS = 1e-5
GEOMETRY_TOL = 1e-4  # geometry and loss gradients, float64 central diff
LAYER_TOL = 1e-6  # individual autodiff layers, float64
REL_FLOOR = 1e-2  # treat absolute noise below this scale as equal
SCOPES = ("geometry", "losses", "network")


class _InconsistentProbe(Exception):
    """A finite-difference probe landed in a different branch than the base point."""


@dataclass
class ComponentCheck:
    name: str
    trials: int
    skipped: int
    worst_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.trials > self.skipped and self.worst_rel_err <= self.tolerance

    def format_line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        note = ""
        if self.skipped:
            note = f", {self.skipped} skipped: non-differentiable region"
        return (f"{self.name:<24} {status:<5} worst {self.worst_rel_err:.3e} "
                f"(tol {self.tolerance:.0e}, {self.trials - self.skipped}/"
                f"{self.trials} trials{note})")


def central_difference(f, x: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Jacobian of f at x by central differences; shape f(x).shape + x.shape."""
    x = np.asarray(x, dtype=np.float64)
    y0 = np.asarray(f(x), dtype=np.float64)
    jac = np.zeros((y0.size, x.size))
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += eps
        xm.flat[i] -= eps
        diff = np.asarray(f(xp), dtype=np.float64) - np.asarray(f(xm), dtype=np.float64)
        jac[:, i] = diff.ravel() / (2.0 * eps)
    return jac.reshape(y0.shape + x.shape)


def relative_error(a, b, floor: float = REL_FLOOR) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def _sample_pose(rng: np.random.Generator, aim: str) -> Pose:
    """Random raw-quaternion pose; `aim` picks solid hits or solid misses."""
    pos = rng.uniform([5.0, -9.25, 6.25], [9.0, -5.25, 7.25])
    pan = rng.uniform(10.0, 30.0)
    tilt = rng.uniform(-18.5, -17.5) if aim == "hit" else rng.uniform(25.0, 40.0)
    q = quat_from_yaw_tilt(pan, tilt)
    q = q * rng.uniform(0.6, 1.7) + rng.normal(0.0, 0.01, size=4)
    return Pose(pos, q)


def _checked_point(vec: np.ndarray, expect_hit: bool, cyl: CylinderModel) -> np.ndarray:
    hit = icsc_hit(Pose.from_vector(vec), cyl)
    if hit.hit != expect_hit or hit.degenerate:
        raise _InconsistentProbe
    return hit.point


def check_scene_jacobian(aim: str, trials: int = 100, seed: int = 0) -> ComponentCheck:
    """FD-verify the 3x7 point Jacobian for hitting or missing view rays."""
    rng = np.random.default_rng(seed)
    cyl = CylinderModel()
    expect_hit = aim == "hit"
    worst = 0.0
    skipped = 0
    for _ in range(trials):
        pose = _sample_pose(rng, aim)
        base = icsc_hit(pose, cyl)
        if base.hit != expect_hit or base.degenerate:
            skipped += 1
            continue
        try:
            jac = icsc_jacobian(pose, cyl) if expect_hit else fallback_jacobian(pose, cyl)
            fd = central_difference(
                lambda v: _checked_point(v, expect_hit, cyl), pose.as_vector())
        except (_InconsistentProbe, NonDifferentiableRegion):
            skipped += 1
            continue
        worst = max(worst, relative_error(jac, fd))
    name = "icsc_jacobian" if expect_hit else "fallback_jacobian"
    return ComponentCheck(name, trials, skipped, worst, GEOMETRY_TOL)


def check_norm_loss(which: str, trials: int = 100, seed: int = 0) -> ComponentCheck:
    """FD-verify the plain distance losses ||x - x_hat|| and ||q - q_hat||."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    dim = 3 if which == "position" else 4
    fn = loss_position if which == "position" else loss_orientation
    for _ in range(trials):
        truth = rng.normal(0.0, 2.0, size=dim)
        pred = truth + rng.normal(0.0, 1.0, size=dim)
        _, grad = fn(pred, truth)
        fd = central_difference(lambda v: fn(v, truth)[0], pred)
        worst = max(worst, relative_error(grad, fd))
    return ComponentCheck(f"loss_{which}", trials, 0, worst, GEOMETRY_TOL)


def check_icsc_component(trials: int = 100, seed: int = 0) -> ComponentCheck:
    """FD-verify d||c - c_hat|| / d(pose) through hit and surrogate branches."""
    rng = np.random.default_rng(seed)
    cyl = CylinderModel()
    worst = 0.0
    skipped = 0
    for trial in range(trials):
        truth = _sample_pose(rng, "hit")
        truth = Pose(truth.position, truth.orientation / np.linalg.norm(truth.orientation))
        if not icsc_hit(truth, cyl).hit:
            skipped += 1
            continue
        aim = "hit" if trial % 2 == 0 else "miss"
        pred = _sample_pose(rng, aim)
        base = icsc_hit(pred, cyl)
        if base.degenerate or base.hit != (aim == "hit"):
            skipped += 1
            continue
        comp = loss_icsc_component(pred, truth, cyl)
        if comp.degenerate:
            skipped += 1
            continue

        def value(vec):
            h = icsc_hit(Pose.from_vector(vec), cyl)
            if h.hit != base.hit or h.degenerate:
                raise _InconsistentProbe
            return loss_icsc_component(Pose.from_vector(vec), truth, cyl).value

        try:
            fd = central_difference(value, pred.as_vector())
        except (_InconsistentProbe, NonDifferentiableRegion):
            skipped += 1
            continue
        worst = max(worst, relative_error(comp.grad_pred, fd))
    return ComponentCheck("loss_icsc_component", trials, skipped, worst, GEOMETRY_TOL)


def check_loss_gradients(selector: str, trials: int = 100, seed: int = 0,
                         beta: float = 500.0) -> ComponentCheck:
    """FD-verify d(total)/d(prediction) and d(total)/d(s) for one loss."""
    rng = np.random.default_rng(seed)
    cyl = CylinderModel()
    worst = 0.0
    skipped = 0
    for trial in range(trials):
        truth = _sample_pose(rng, "hit")
        truth = Pose(truth.position, truth.orientation / np.linalg.norm(truth.orientation))
        if not icsc_hit(truth, cyl).hit:
            skipped += 1
            continue
        aim = "hit" if trial % 2 == 0 else "miss"
        pred = _sample_pose(rng, aim)
        base = icsc_hit(pred, cyl)
        if base.degenerate or base.hit != (aim == "hit"):
            skipped += 1
            continue
        s = rng.normal(0.0, 0.5, size=3)

        def total(pred_vec, s_vec=s):
            if selector == "icsc":
                h = icsc_hit(Pose.from_vector(pred_vec), cyl)
                if h.hit != base.hit or h.degenerate:
                    raise _InconsistentProbe
            state = LossState(Pose.from_vector(pred_vec), truth,
                              s_vec[0], s_vec[1], s_vec[2])
            return evaluate_loss(selector, state, cyl, beta).total

        state = LossState(pred, truth, s[0], s[1], s[2])
        br = evaluate_loss(selector, state, cyl, beta)
        if br.degenerate:
            skipped += 1
            continue
        try:
            fd_pred = central_difference(total, pred.as_vector())
            fd_s = central_difference(lambda sv: total(pred.as_vector(), sv), s)
        except (_InconsistentProbe, NonDifferentiableRegion):
            skipped += 1
            continue
        worst = max(worst, relative_error(br.grad_pred, fd_pred))
        worst = max(worst, relative_error(br.grad_s, fd_s))
    return ComponentCheck(f"loss_{selector}", trials, skipped, worst, GEOMETRY_TOL)


def _layer_case(layer: str, rng: np.random.Generator):
    """One random (inputs, forward) pair for a layer; all tensors float64.

    Inputs are sampled away from relu kinks and maxpool ties so every probe
    point is differentiable.
    """
    if layer == "relu":
        x = rng.normal(0.0, 1.0, size=(3, 5))
        x += np.where(x >= 0, 0.1, -0.1)  # clear the kink at 0
        xs = [ad.Tensor(x, requires_grad=True)]
        return xs, lambda: ad.relu(xs[0])
    if layer == "flatten":
        xs = [ad.Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)]
        return xs, lambda: ad.flatten(xs[0])
    if layer == "linear":
        xs = [ad.Tensor(rng.normal(size=(3, 6)), requires_grad=True),
              ad.Tensor(rng.normal(size=(6, 4)), requires_grad=True),
              ad.Tensor(rng.normal(size=4), requires_grad=True)]
        return xs, lambda: ad.linear(*xs)
    if layer == "conv2d":
        xs = [ad.Tensor(rng.normal(size=(2, 3, 6, 6)), requires_grad=True),
              ad.Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True),
              ad.Tensor(rng.normal(size=4), requires_grad=True)]
        return xs, lambda: ad.conv2d(xs[0], xs[1], xs[2], padding=1)
    if layer == "maxpool2":
        x = rng.normal(0.0, 1.0, size=(2, 3, 6, 6))
        # spread values so no 2x2 window has a near-tie
        x += rng.permuted(np.arange(x.size)).reshape(x.shape) * 1e-3
        xs = [ad.Tensor(x, requires_grad=True)]
        return xs, lambda: ad.maxpool2(xs[0])
    if layer == "add":
        xs = [ad.Tensor(rng.normal(size=(3, 7)), requires_grad=True),
              ad.Tensor(rng.normal(size=(3, 7)), requires_grad=True)]
        return xs, lambda: ad.add(xs[0], xs[1])
    raise ValueError(f"unknown layer: {layer!r}")


def check_layer(layer: str, trials: int = 100, seed: int = 0) -> ComponentCheck:
    """FD-probe one random coordinate of one input per trial against backprop."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        xs, forward = _layer_case(layer, rng)
        out = forward()
        w = rng.normal(size=out.data.shape)
        out.backward(w)
        target = xs[int(rng.integers(len(xs)))]
        i = int(rng.integers(target.data.size))
        orig = target.data.flat[i]
        target.data.flat[i] = orig + LAYER_FD_EPS
        up = float((forward().data * w).sum())
        target.data.flat[i] = orig - LAYER_FD_EPS
        down = float((forward().data * w).sum())
        target.data.flat[i] = orig
        fd = (up - down) / (2.0 * LAYER_FD_EPS)
        worst = max(worst, relative_error(target.grad.flat[i], fd, floor=1.0))
    return ComponentCheck(f"layer_{layer}", trials, 0, worst, LAYER_TOL)


def check_network(seed: int = 0, probes_per_param: int = 20,
                  inject_fault: bool = False) -> ComponentCheck:
    """Probe backprop through a whole small model against finite differences.

    The scalar objective is a fixed random weighting of all outputs over a
    small random batch. `inject_fault` deliberately corrupts one analytic
    gradient so tests can confirm the check has teeth.
    """
    rng = np.random.default_rng(seed)
    config = ModelConfig(input_size=16, conv_channels=(4, 8), dense_widths=(16,))
    params = init_parameters(config, seed, dtype=np.float64)
    model = PoseRegressor(config, params)
    images = rng.normal(0.0, 0.5, size=(2, 3, 16, 16))
    weights = rng.normal(0.0, 1.0, size=(2, 7))

    def objective() -> float:
        out = model.forward(images)
        val = float((out.data * weights).sum())
        model.zero_grad()
        return val

    model.zero_grad()
    model.forward(images)
    model.backward(weights)
    grads = {k: p.grad.copy() for k, p in model.params.items()}
    if inject_fault:
        grads["conv0_w"] += 1e-2
    model.zero_grad()

    worst = 0.0
    trials = 0
    for name, tensor in model.params.items():
        arr = tensor.data
        picks = rng.choice(arr.size, size=min(probes_per_param, arr.size), replace=False)
        for i in picks:
            orig = arr.flat[i]
            arr.flat[i] = orig + LAYER_FD_EPS
            up = objective()
            arr.flat[i] = orig - LAYER_FD_EPS
            down = objective()
            arr.flat[i] = orig
            fd = (up - down) / (2.0 * LAYER_FD_EPS)
            worst = max(worst, relative_error(grads[name].flat[i], fd, floor=1.0))
            trials += 1
    return ComponentCheck("network_backprop", trials, 0, worst, LAYER_TOL)


def run_gradcheck(scopes=SCOPES, seed: int = 0, trials: int = 100,
                  inject_fault: bool = False) -> list[ComponentCheck]:
    checks = []
    for scope in scopes:
        if scope == "geometry":
            checks.append(check_scene_jacobian("hit", trials, seed=seed))
            checks.append(check_scene_jacobian("miss", trials, seed=seed + 1))
        elif scope == "losses":
            checks.append(check_norm_loss("position", trials, seed=seed))
            checks.append(check_norm_loss("orientation", trials, seed=seed))
            checks.append(check_icsc_component(trials, seed=seed))
            for sel in ("beta", "learnable", "icsc"):
                checks.append(check_loss_gradients(sel, trials, seed=seed))
        elif scope == "network":
            for layer in ("relu", "flatten", "linear", "conv2d", "maxpool2", "add"):
                checks.append(check_layer(layer, trials, seed=seed))
            checks.append(check_network(seed=seed, inject_fault=inject_fault))
        else:
            raise ValueError(f"unknown gradcheck scope: {scope!r}")
    return checks


def format_report(checks: list[ComponentCheck]) -> str:
    lines = [c.format_line() for c in checks]
    ok = all(c.passed for c in checks)
    lines.append("all gradient checks passed" if ok else "GRADIENT CHECK FAILURES")
    return "\n".join(lines)
