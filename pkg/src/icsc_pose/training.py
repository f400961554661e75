"""Training loop, batched evaluation, and the multi-seed loss comparison."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor
from .checkpoint import Checkpoint
from .geometry import CylinderModel, Pose
from .losses import LossState, evaluate_loss
from .metrics import MetricsReport, compute_metrics
from .network import ModelConfig, PoseRegressor, init_parameters
from .optim import Adam

LOSS_SELECTORS = ("beta", "learnable", "icsc")
CHECKPOINT_NAME = "checkpoint.npz"
LOG_NAME = "train_log.jsonl"
# A log-variance may drift below the log of the smallest loss component it
# weighs, but never by more than this margin; further means the s-regularizer
# is broken.
S_BOUND_MARGIN = 5.0


@dataclass
class TrainConfig:
    loss: str = "icsc"
    beta: float = 500.0
    epochs: int = 200
    batch_size: int = 25
    learning_rate: float = 1e-4
    seed: int = 0
    max_steps: int | None = None  # optional cap on optimizer steps
    checkpoint_every: int | None = None  # extra periodic saves, in epochs

    def __post_init__(self):
        if self.loss not in LOSS_SELECTORS:
            raise ValueError(f"loss must be one of {LOSS_SELECTORS}, got {self.loss!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.beta <= 0:
            raise ValueError("learning_rate and beta must be positive")


@dataclass
class TrainResult:
    model: PoseRegressor
    s: Tensor
    optimizer: Adam
    history: list
    best_epoch: int
    best_val_loss: float
    best_checkpoint: Checkpoint
    min_components: np.ndarray  # smallest positive l_x, l_q, l_c seen
    checkpoint_path: str | None = None

    def s_bound_violations(self) -> list[str]:
        """log-variances that dove below log(min component loss) - margin."""
        names = ("s_x", "s_q", "s_c")
        out = []
        for i, name in enumerate(names):
            if not math.isfinite(self.min_components[i]):
                continue  # component never observed (e.g. l_c without icsc)
            bound = math.log(self.min_components[i]) - S_BOUND_MARGIN
            if float(self.s.data[i]) < bound:
                out.append(f"{name}={float(self.s.data[i]):.3f} < {bound:.3f}")
        return out


def _batch_loss(preds: np.ndarray, truths: np.ndarray, s: np.ndarray,
                selector: str, cyl: CylinderModel, beta: float):
    """Mean loss over a batch plus gradients w.r.t. predictions and s."""
    n = len(preds)
    grad_pred = np.zeros((n, 7))
    grad_s = np.zeros(3)
    total = 0.0
    comps = np.zeros(3)  # mean l_x, l_q, l_c
    degenerate = 0
    s_x, s_q, s_c = (float(v) for v in s)
    for i in range(n):
        state = LossState(Pose.from_vector(preds[i]), Pose.from_vector(truths[i]),
                          s_x, s_q, s_c)
        br = evaluate_loss(selector, state, cyl, beta)
        total += br.total
        grad_pred[i] = br.grad_pred
        grad_s += br.grad_s
        comps += (br.l_x, br.l_q, br.l_c)
        degenerate += br.degenerate
    return total / n, grad_pred / n, grad_s / n, comps / n, degenerate


def predict(model: PoseRegressor, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Forward the whole array in chunks; returns float64 (N, 7)."""
    outs = []
    for start in range(0, len(images), batch_size):
        out = model.forward(images[start:start + batch_size])
        outs.append(out.data.astype(np.float64))
    model.zero_grad()
    return np.concatenate(outs) if outs else np.zeros((0, 7))


def train(model_config: ModelConfig,
          train_images: np.ndarray, train_poses: np.ndarray,
          val_images: np.ndarray | None, val_poses: np.ndarray | None,
          cfg: TrainConfig, cylinder: CylinderModel | None = None,
          out_dir: str | None = None, verbose: bool = False) -> TrainResult:
    """Full training run; checkpoints the epoch with the best validation loss.

    Without a validation set the epoch training loss drives checkpoint
    selection instead.
    """
    cyl = cylinder if cylinder is not None else CylinderModel()
    model = PoseRegressor(model_config, init_parameters(model_config, cfg.seed))
    s = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True, name="s")
    opt = Adam({**model.params, "s": s}, lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    n_train = len(train_images)
    has_val = val_images is not None and len(val_images) > 0

    log_fh = None
    ckpt_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, LOG_NAME), "w")
        ckpt_path = os.path.join(out_dir, CHECKPOINT_NAME)

    def log(record):
        if log_fh is not None:
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()

    history = []
    best_val = math.inf
    best_epoch = -1
    best_ckpt = None
    min_comps = np.full(3, math.inf)
    steps_done = 0
    t0 = time.monotonic()
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(n_train)
            run_loss = 0.0
            run_comps = np.zeros(3)
            run_n = 0
            degenerate = 0
            for start in range(0, n_train, cfg.batch_size):
                if cfg.max_steps is not None and steps_done >= cfg.max_steps:
                    break
                idx = order[start:start + cfg.batch_size]
                model.zero_grad()
                s.zero_grad()
                out = model.forward(train_images[idx])
                loss, g_pred, g_s, comps, degen = _batch_loss(
                    out.data.astype(np.float64), train_poses[idx], s.data,
                    cfg.loss, cyl, cfg.beta)
                if not math.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite training loss {loss} at epoch {epoch}, "
                        f"batch {start // cfg.batch_size}, s={list(map(float, s.data))}")
                model.backward(g_pred)
                s.grad = g_s.astype(s.data.dtype)
                try:
                    opt.step()
                except FloatingPointError as e:
                    raise FloatingPointError(
                        f"epoch {epoch}, batch {start // cfg.batch_size}, "
                        f"s={list(map(float, s.data))}: {e}") from None
                positive = comps > 0
                min_comps[positive] = np.minimum(min_comps[positive], comps[positive])
                run_loss += loss * len(idx)
                run_comps += comps * len(idx)
                run_n += len(idx)
                degenerate += degen
                steps_done += 1

            train_loss = run_loss / max(run_n, 1)
            train_comps = run_comps / max(run_n, 1)
            wall = time.monotonic() - t0
            entry = {
                "epoch": epoch,
                "split": "train",
                "steps": steps_done,
                "loss": float(train_loss),
                "l_x": float(train_comps[0]),
                "l_q": float(train_comps[1]),
                "l_c": float(train_comps[2]),
                "degenerate_rays": degenerate,
                "s": [float(v) for v in s.data],
                "wall_time_s": round(wall, 3),
            }
            log(entry)
            history.append(entry)
            select_loss = train_loss
            if has_val:
                val_pred = predict(model, val_images)
                val_loss, _, _, val_comps, _ = _batch_loss(
                    val_pred, val_poses, s.data, cfg.loss, cyl, cfg.beta)
                report = compute_metrics(val_pred, val_poses)
                val_entry = {
                    "epoch": epoch,
                    "split": "val",
                    "loss": float(val_loss),
                    "l_x": float(val_comps[0]),
                    "l_q": float(val_comps[1]),
                    "l_c": float(val_comps[2]),
                    "median_position_m": report.median_position_m,
                    "median_angular_deg": report.median_angular_deg,
                    "s": [float(v) for v in s.data],
                    "wall_time_s": round(time.monotonic() - t0, 3),
                }
                log(val_entry)
                history.append(val_entry)
                select_loss = val_loss
            if verbose:
                msg = f"epoch {epoch:3d} train {train_loss:.4f}"
                if has_val:
                    msg += f" val {select_loss:.4f}"
                print(msg)

            if select_loss < best_val:
                best_val = select_loss
                best_epoch = epoch
                best_ckpt = Checkpoint.from_optimizer(
                    model_config, opt, cfg.seed, cfg.loss, cfg.beta)
                if ckpt_path is not None:
                    best_ckpt.save(ckpt_path)
            if (cfg.checkpoint_every is not None and ckpt_path is not None
                    and (epoch + 1) % cfg.checkpoint_every == 0):
                Checkpoint.from_optimizer(model_config, opt, cfg.seed, cfg.loss,
                                          cfg.beta).save(
                    os.path.join(out_dir, f"checkpoint_epoch{epoch:04d}.npz"))
            if cfg.max_steps is not None and steps_done >= cfg.max_steps:
                break
    finally:
        if log_fh is not None:
            log_fh.close()

    if best_ckpt is None:
        best_ckpt = Checkpoint.from_optimizer(model_config, opt, cfg.seed,
                                              cfg.loss, cfg.beta)
    return TrainResult(model=model, s=s, optimizer=opt, history=history,
                       best_epoch=best_epoch, best_val_loss=best_val,
                       best_checkpoint=best_ckpt, min_components=min_comps,
                       checkpoint_path=ckpt_path)


def dataset_loss(model: PoseRegressor, images: np.ndarray, poses: np.ndarray,
                 s: np.ndarray, selector: str, cyl: CylinderModel | None = None,
                 beta: float = 500.0) -> float:
    """Mean loss of a model over a whole labelled set, no gradients kept."""
    cyl = cyl if cyl is not None else CylinderModel()
    preds = predict(model, images)
    return _batch_loss(preds, poses, s, selector, cyl, beta)[0]


def model_from_checkpoint(ckpt: Checkpoint) -> PoseRegressor:
    return PoseRegressor(ckpt.model_config,
                         {k: v.copy() for k, v in ckpt.params.items()})


def evaluate_checkpoint(ckpt: Checkpoint, images: np.ndarray, poses: np.ndarray,
                        dataset_id: str = "") -> tuple[MetricsReport, np.ndarray]:
    """Metrics of a stored model on a labelled image set; also returns predictions."""
    if len(images) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = predict(model_from_checkpoint(ckpt), images)
    report = compute_metrics(preds, poses, loss_selector=ckpt.loss_selector,
                             dataset_id=dataset_id, seed=ckpt.seed)
    return report, preds


def run_comparison(model_config: ModelConfig,
                   train_images, train_poses, val_images, val_poses,
                   test_images, test_poses, base: TrainConfig,
                   selectors=("learnable", "icsc"), seeds=(1, 2, 3),
                   cylinder: CylinderModel | None = None,
                   verbose: bool = False) -> dict:
    """Train every selector at every seed on identical data; aggregate test
    metrics per selector.

    The headline number per selector is the across-seed mean of the per-run
    median test position error (and likewise for angular error). When both
    "icsc" and a baseline are present, their deltas are included.
    """
    results = {}
    for sel in selectors:
        runs = []
        for seed in seeds:
            cfg = replace(base, loss=sel, seed=seed)
            res = train(model_config, train_images, train_poses,
                        val_images, val_poses, cfg, cylinder, verbose=verbose)
            report, _ = evaluate_checkpoint(res.best_checkpoint,
                                            test_images, test_poses)
            runs.append({
                "seed": seed,
                "best_epoch": res.best_epoch,
                "median_position_m": report.median_position_m,
                "median_angular_deg": report.median_angular_deg,
                "mae_position_m": report.position["mae"],
                "mae_angular_deg": report.angular["mae"],
                "rmse_position_m": report.position["rmse"],
                "rmse_angular_deg": report.angular["rmse"],
            })
            if verbose:
                print(f"{sel} seed {seed}: median position "
                      f"{report.median_position_m:.4f} m, median angle "
                      f"{report.median_angular_deg:.3f} deg")
        results[sel] = {
            "runs": runs,
            "mean_median_position_m": float(np.mean([r["median_position_m"] for r in runs])),
            "mean_median_angular_deg": float(np.mean([r["median_angular_deg"] for r in runs])),
        }
    for baseline in ("learnable", "beta"):
        if "icsc" in results and baseline in results:
            results[f"delta_icsc_vs_{baseline}"] = {
                "median_position_m": (results["icsc"]["mean_median_position_m"]
                                      - results[baseline]["mean_median_position_m"]),
                "median_angular_deg": (results["icsc"]["mean_median_angular_deg"]
                                       - results[baseline]["mean_median_angular_deg"]),
            }
    return results


def format_comparison(results: dict) -> str:
    """Per-seed and mean-of-seed medians for every trained selector."""
    lines = [f"{'loss':<12}{'seed':>6}{'median pos [m]':>16}{'median ang [deg]':>18}"]
    for sel, data in results.items():
        if sel.startswith("delta_"):
            continue
        for run in data["runs"]:
            lines.append(f"{sel:<12}{run['seed']:>6}"
                         f"{run['median_position_m']:>16.4f}"
                         f"{run['median_angular_deg']:>18.4f}")
        lines.append(f"{sel:<12}{'mean':>6}"
                     f"{data['mean_median_position_m']:>16.4f}"
                     f"{data['mean_median_angular_deg']:>18.4f}")
    for key, delta in results.items():
        if key.startswith("delta_"):
            lines.append(f"{key}: position {delta['median_position_m']:+.4f} m, "
                         f"angular {delta['median_angular_deg']:+.4f} deg")
    return "\n".join(lines)
