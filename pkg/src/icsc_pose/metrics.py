"""Pose-error metrics over a batch of predictions.

A MetricsReport keeps the per-image errors alongside the three aggregate
statistics (median, MAE, RMSE) for position and orientation, so the
aggregates can always be re-derived and cross-checked from the stored
per-image values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import angular_error, quat_normalize


def lower_median(values) -> float:
    """Median as the lower-middle element: sorted[(n - 1) // 2]."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("median of empty sequence")
    return float(v[(v.size - 1) // 2])


def position_errors(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(pred)[:, :3] - np.asarray(truth)[:, :3], axis=1)


def angular_errors(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Rotation distance in degrees; predicted quaternions are normalized first."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    out = np.empty(len(pred))
    for i in range(len(pred)):
        out[i] = angular_error(quat_normalize(pred[i, 3:7]), truth[i, 3:7])
    return out


def _aggregates(errors: np.ndarray) -> dict:
    return {
        "median": lower_median(errors),
        "mae": float(np.abs(errors).mean()),
        "rmse": float(np.sqrt((errors ** 2).mean())),
    }


@dataclass
class MetricsReport:
    loss_selector: str
    dataset_id: str
    seed: int
    position_errors_m: np.ndarray
    angular_errors_deg: np.ndarray
    position: dict = field(default_factory=dict)  # median / mae / rmse, meters
    angular: dict = field(default_factory=dict)  # median / mae / rmse, degrees

    def __post_init__(self):
        self.position_errors_m = np.asarray(self.position_errors_m, dtype=np.float64)
        self.angular_errors_deg = np.asarray(self.angular_errors_deg, dtype=np.float64)
        if len(self.position_errors_m) != len(self.angular_errors_deg):
            raise ValueError("per-image error arrays must have equal length")
        if len(self.position_errors_m) == 0:
            raise ValueError("metrics require at least one sample")
        if not self.position:
            self.position = _aggregates(self.position_errors_m)
        if not self.angular:
            self.angular = _aggregates(self.angular_errors_deg)

    @property
    def count(self) -> int:
        return len(self.position_errors_m)

    @property
    def median_position_m(self) -> float:
        return self.position["median"]

    @property
    def median_angular_deg(self) -> float:
        return self.angular["median"]

    def consistency_error(self) -> float:
        """Worst gap between stored aggregates and ones recomputed from the
        per-image errors. Should sit at floating-point noise (< 1e-12)."""
        worst = 0.0
        for stored, errors in ((self.position, self.position_errors_m),
                               (self.angular, self.angular_errors_deg)):
            fresh = _aggregates(errors)
            for key in fresh:
                worst = max(worst, abs(stored[key] - fresh[key]))
        return worst

    def to_dict(self) -> dict:
        return {
            "loss_selector": self.loss_selector,
            "dataset_id": self.dataset_id,
            "seed": self.seed,
            "count": self.count,
            "position_m": self.position,
            "angular_deg": self.angular,
            "position_errors_m": [float(v) for v in self.position_errors_m],
            "angular_errors_deg": [float(v) for v in self.angular_errors_deg],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        d = json.loads(text)
        return cls(
            loss_selector=d["loss_selector"],
            dataset_id=d["dataset_id"],
            seed=d["seed"],
            position_errors_m=np.asarray(d["position_errors_m"]),
            angular_errors_deg=np.asarray(d["angular_errors_deg"]),
            position=d["position_m"],
            angular=d["angular_deg"],
        )

    def format_table(self) -> str:
        lines = [
            f"{'':<18}{'Median':>12}{'MAE':>12}{'RMSE':>12}",
            (f"{'position [m]':<18}{self.position['median']:>12.4f}"
             f"{self.position['mae']:>12.4f}{self.position['rmse']:>12.4f}"),
            (f"{'angular [deg]':<18}{self.angular['median']:>12.4f}"
             f"{self.angular['mae']:>12.4f}{self.angular['rmse']:>12.4f}"),
            f"loss: {self.loss_selector or '-'}  dataset: {self.dataset_id or '-'}"
            f"  seed: {self.seed}  samples: {self.count}",
        ]
        return "\n".join(lines)


def compute_metrics(pred: np.ndarray, truth: np.ndarray, loss_selector: str = "",
                    dataset_id: str = "", seed: int = 0) -> MetricsReport:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[1] != 7:
        raise ValueError(f"expected matching (N, 7) arrays, got {pred.shape} "
                         f"and {truth.shape}")
    return MetricsReport(
        loss_selector=loss_selector,
        dataset_id=dataset_id,
        seed=seed,
        position_errors_m=position_errors(pred, truth),
        angular_errors_deg=angular_errors(pred, truth),
    )


def write_predictions(path: str, pred: np.ndarray, truth: np.ndarray):
    """Per-image dump: predicted 7-vector plus both derived errors, one JSON
    object per line."""
    pred = np.asarray(pred, dtype=np.float64)
    p_err = position_errors(pred, truth)
    a_err = angular_errors(pred, truth)
    with open(path, "w") as fh:
        for i in range(len(pred)):
            fh.write(json.dumps({
                "index": i,
                "pred": [float(v) for v in pred[i]],
                "position_error_m": float(p_err[i]),
                "angular_error_deg": float(a_err[i]),
            }) + "\n")


def read_predictions(path: str) -> np.ndarray:
    """Predicted 7-vectors from a predictions file, in index order."""
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    rows.sort(key=lambda r: r["index"])
    return np.asarray([r["pred"] for r in rows], dtype=np.float64)
