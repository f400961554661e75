import numpy as np
import pytest

from icsc_pose.geometry import quat_from_yaw_tilt
from icsc_pose.metrics import (
    MetricsReport,
    angular_errors,
    compute_metrics,
    lower_median,
    position_errors,
    read_predictions,
    write_predictions,
)


def pose_row(position, quaternion):
    return np.concatenate([position, quaternion])


class TestLowerMedian:
    def test_odd(self):
        assert lower_median([3.0, 1.0, 2.0]) == 2.0

    def test_even_takes_lower_middle(self):
        assert lower_median([4.0, 1.0, 3.0, 2.0]) == 2.0

    def test_single(self):
        assert lower_median([7.5]) == 7.5

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            lower_median([])


class TestErrorArrays:
    def test_position(self):
        pred = np.array([pose_row([7.3, -7.4, 7.0], [1, 0, 0, 0])])
        truth = np.array([pose_row([7.0, -7.0, 7.0], [1, 0, 0, 0])])
        np.testing.assert_allclose(position_errors(pred, truth), [0.5],
                                   atol=1e-12)

    def test_angular_zero(self):
        q = quat_from_yaw_tilt(20.0, -18.0)
        rows = np.array([pose_row([7, -7, 7], q)])
        np.testing.assert_allclose(angular_errors(rows, rows), [0.0], atol=1e-6)

    def test_angular_known_rotation(self):
        truth = np.array([pose_row([0, 0, 0], quat_from_yaw_tilt(0.0, 0.0))])
        pred = np.array([pose_row([0, 0, 0], quat_from_yaw_tilt(30.0, 0.0))])
        np.testing.assert_allclose(angular_errors(pred, truth), [30.0],
                                   atol=1e-9)

    def test_angular_normalizes_prediction(self):
        q = quat_from_yaw_tilt(25.0, -18.0)
        truth = np.array([pose_row([0, 0, 0], q)])
        pred = np.array([pose_row([0, 0, 0], 3.7 * q)])
        np.testing.assert_allclose(angular_errors(pred, truth), [0.0],
                                   atol=1e-6)

    def test_double_cover(self):
        q = quat_from_yaw_tilt(25.0, -18.0)
        truth = np.array([pose_row([0, 0, 0], q)])
        pred = np.array([pose_row([0, 0, 0], -q)])
        np.testing.assert_allclose(angular_errors(pred, truth), [0.0],
                                   atol=1e-6)


class TestReport:
    def make(self, n=5, seed=31):
        rng = np.random.default_rng(seed)
        truth = np.stack([
            pose_row(rng.uniform([5, -9.25, 6.25], [9, -5.25, 7.25]),
                     quat_from_yaw_tilt(rng.uniform(10, 30),
                                        rng.uniform(-18.5, -17.5)))
            for _ in range(n)])
        pred = truth + rng.normal(0, 0.05, size=truth.shape)
        return pred, truth

    def test_perfect_predictor(self):
        _, truth = self.make()
        report = compute_metrics(truth, truth)
        assert report.median_position_m == 0.0
        assert report.position["mae"] == 0.0
        assert report.position["rmse"] == 0.0
        assert report.median_angular_deg < 1e-5

    def test_aggregates_match_arrays(self):
        report = compute_metrics(*self.make())
        assert report.consistency_error() < 1e-12

    def test_count(self):
        report = compute_metrics(*self.make(n=9))
        assert report.count == 9

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="\\(N, 7\\)"):
            compute_metrics(np.zeros((3, 6)), np.zeros((3, 6)))
        with pytest.raises(ValueError, match="\\(N, 7\\)"):
            compute_metrics(np.zeros((3, 7)), np.zeros((4, 7)))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            MetricsReport("", "", 0, np.array([]), np.array([]))

    def test_json_round_trip_is_exact(self):
        report = compute_metrics(*self.make(), loss_selector="icsc",
                                 dataset_id="test", seed=3)
        back = MetricsReport.from_json(report.to_json())
        assert back.to_json() == report.to_json()
        np.testing.assert_array_equal(back.position_errors_m,
                                      report.position_errors_m)
        assert back.position == report.position

    def test_format_table_mentions_units(self):
        table = compute_metrics(*self.make()).format_table()
        assert "position [m]" in table
        assert "angular [deg]" in table
        assert "Median" in table


class TestPredictionsFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(32)
        truth = np.stack([pose_row([7, -7, 7], quat_from_yaw_tilt(20, -18))
                          for _ in range(4)])
        pred = truth + rng.normal(0, 0.1, truth.shape)
        path = str(tmp_path / "pred.jsonl")
        write_predictions(path, pred, truth)
        back = read_predictions(path)
        np.testing.assert_array_equal(back, pred)

    def test_error_columns_match_metrics(self, tmp_path):
        import json

        rng = np.random.default_rng(33)
        truth = np.stack([pose_row([7, -7, 7], quat_from_yaw_tilt(20, -18))
                          for _ in range(4)])
        pred = truth + rng.normal(0, 0.1, truth.shape)
        path = str(tmp_path / "pred.jsonl")
        write_predictions(path, pred, truth)
        rows = [json.loads(ln) for ln in open(path) if ln.strip()]
        p_err = position_errors(pred, truth)
        a_err = angular_errors(pred, truth)
        for i, row in enumerate(rows):
            assert row["position_error_m"] == p_err[i]
            assert row["angular_error_deg"] == a_err[i]


class TestManifestCrossCheck:
    def test_constant_predictor_errors(self, tiny_dataset):
        # predicting the workspace center for every image must reproduce the
        # per-record distances computable straight from the manifest
        from icsc_pose.dataset import load_split
        from icsc_pose.network import DEFAULT_OUTPUT_BIAS

        path, records = tiny_dataset
        _, truth = load_split(path, 16)
        pred = np.tile(np.asarray(DEFAULT_OUTPUT_BIAS), (len(truth), 1))
        report = compute_metrics(pred, truth)
        manual = [np.linalg.norm(rec.position - np.asarray(DEFAULT_OUTPUT_BIAS[:3]))
                  for rec in records]
        np.testing.assert_allclose(report.position_errors_m, manual, atol=1e-12)
        assert report.median_position_m == lower_median(manual)
