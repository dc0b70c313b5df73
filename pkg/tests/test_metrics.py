import unittest

import numpy as np

from msgp_bench.datasets import FlightLog
from msgp_bench.metrics import latency_stats, prediction_nmse, tracking_nmse


def _log(t: np.ndarray, r: np.ndarray, r_d: np.ndarray) -> FlightLog:
    n = t.size
    z3 = np.zeros((n, 3))
    return FlightLog(t, r, z3, np.stack([np.eye(3)] * n), z3, np.zeros(n), z3, r_d)


class TestTrackingNMSE(unittest.TestCase):
    def test_perfect_tracking_scores_zero(self) -> None:
        t = np.linspace(0.0, 5.0, 501)
        r_d = np.column_stack((np.sin(t), np.cos(t), 0.5 * t))
        scores = tracking_nmse(_log(t, r_d.copy(), r_d))
        self.assertEqual(scores.values(), (0.0, 0.0, 0.0))

    def test_transient_is_dropped_and_error_normalized(self) -> None:
        t = np.linspace(0.0, 4.0, 401)
        r_d = np.column_stack((np.sin(t), np.sin(2 * t), np.cos(t)))
        r = r_d.copy()
        r[t < 2.0] += 10.0  # ignored
        r[t >= 2.0, 0] += 0.1
        scores = tracking_nmse(_log(t, r, r_d), transient_s=2.0)
        kept = r_d[t >= 2.0, 0]
        expected = kept.size * 0.01 / float(np.sum((kept - kept.mean()) ** 2))
        self.assertAlmostEqual(scores.x, expected, places=12)
        self.assertEqual(scores.y, 0.0)

    def test_constant_reference_axis_uses_raw_mse(self) -> None:
        t = np.linspace(0.0, 3.0, 31)
        r_d = np.column_stack((np.sin(t), np.cos(t), np.full(t.size, -1.0)))
        r = r_d + np.array([0.0, 0.0, 0.2])
        scores = tracking_nmse(_log(t, r, r_d), transient_s=0.0)
        self.assertAlmostEqual(scores.z, 0.04, places=12)

    def test_nothing_to_score_returns_none(self) -> None:
        self.assertIsNone(tracking_nmse(FlightLog.empty()))
        t = np.linspace(0.0, 1.0, 11)
        r_d = np.zeros((11, 3))
        self.assertIsNone(tracking_nmse(_log(t, r_d, r_d), transient_s=5.0))


class TestPredictionNMSE(unittest.TestCase):
    def test_per_channel_scores(self) -> None:
        targets = np.array([[1.0, 2.0], [3.0, 2.0], [5.0, 2.0]])
        predictions = targets + np.array([[0.5, 0.0], [0.0, 0.0], [-0.5, 0.0]])
        scores = prediction_nmse(targets, predictions, ["f_x_N", "f_y_N"])
        self.assertAlmostEqual(scores["f_x_N"], 0.5 / 8.0, places=12)
        # a constant target channel has no spread to normalize by
        self.assertIsNone(scores["f_y_N"])


class TestLatencyStats(unittest.TestCase):
    def test_reports_milliseconds(self) -> None:
        stats = latency_stats([0.001, 0.003, 0.002])
        self.assertAlmostEqual(stats["latency_ms_median"], 2.0)
        self.assertAlmostEqual(stats["latency_ms_mean"], 2.0)
        self.assertAlmostEqual(stats["latency_ms_max"], 3.0)
        self.assertEqual(stats["queries"], 3)

    def test_no_samples(self) -> None:
        self.assertEqual(latency_stats([]), {})


if __name__ == "__main__":
    unittest.main()
