import time
import unittest
from dataclasses import replace
from unittest.mock import patch

import numpy as np

from msgp_bench.cluster import Partition
from msgp_bench.gp import (
    Dataset,
    FitDeadlineError,
    OptimizationFailedError,
    OptimizerConfig,
    center,
    gp_condition,
    gp_predict_batch,
)
from msgp_bench.kernel import default_hyperparameters
from msgp_bench.msgp import (
    FLAG_OPTIMIZATION_FAILED,
    FLAG_PRIOR_DEFAULT,
    TrainedMSGP,
    msgp_batch_predict,
    msgp_fit,
    msgp_predict,
    msgp_predict_uncached,
)
from msgp_bench.spgp import spgp_fit, spgp_predict_batch

FAST = OptimizerConfig(max_iter=40, restarts=1)


def _data(n: int, d: int = 1, seed: int = 0, span: float = 10.0) -> Dataset:
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, span, size=(n, d))
    return Dataset(X, np.sin(X).sum(axis=1) + 0.1 * rng.normal(size=n))


class TestMSGP(unittest.TestCase):
    def test_one_cluster_with_every_point_as_pseudo_input_matches_exact_gp(self) -> None:
        data = _data(25)
        frozen = replace(FAST, max_iter=0, optimize_pseudo=False)
        model = msgp_fit(data, p=25, u=25, opt_cfg=frozen)
        self.assertEqual(model.partition.M, 1)

        centered, _ = center(data, True)
        h = default_hyperparameters(centered.inputs, centered.targets)
        exact = gp_condition(data, h, center_targets=True)
        X = np.linspace(-1.0, 11.0, 30).reshape(-1, 1)
        mu_e, var_e = gp_predict_batch(exact, X)
        for i, pred in enumerate(msgp_batch_predict(model, X)):
            self.assertAlmostEqual(pred.mean, mu_e[i], delta=1e-6)
            self.assertAlmostEqual(pred.variance_heuristic, var_e[i] + h.noise_variance, delta=1e-6)

    def test_one_cluster_matches_a_single_sparse_gp(self) -> None:
        data = _data(60, d=2, span=3.0)
        model = msgp_fit(data, p=60, u=6, seed=3, opt_cfg=FAST)
        sparse = spgp_fit(data, 6, opt_cfg=replace(FAST, seed=3))
        X = np.random.default_rng(4).uniform(0.0, 3.0, size=(8, 2))
        means, variances = spgp_predict_batch(sparse, X)
        for i, pred in enumerate(msgp_batch_predict(model, X)):
            self.assertAlmostEqual(pred.mean, means[i], delta=1e-10)
            self.assertAlmostEqual(pred.variance_heuristic, variances[i], delta=1e-10)

    def test_singleton_cluster_is_flagged_and_still_predicts(self) -> None:
        data = _data(7)
        model = msgp_fit(data, p=2, u=1, opt_cfg=FAST)
        self.assertEqual(model.partition.M, 4)
        singletons = [j for j, spec in enumerate(model.partition.models) if spec.member_indices.size == 1]
        self.assertEqual(len(singletons), 1)
        self.assertEqual(model.flags, {singletons[0]: FLAG_PRIOR_DEFAULT})
        pred = msgp_predict(model, [5.0])
        self.assertTrue(np.isfinite(pred.mean))

    def test_clusters_have_their_own_hyperparameters(self) -> None:
        model = msgp_fit(_data(120, d=2, span=6.0), p=40, u=8, opt_cfg=FAST)
        self.assertEqual(model.partition.M, 3)
        logs = [local.hyper.to_log() for local in model.per_model]
        self.assertFalse(all(np.array_equal(logs[0], other) for other in logs[1:]))
        self.assertTrue(all(local.pseudo.m == 8 for local in model.per_model))

    def test_clusters_in_a_noisier_region_learn_a_larger_noise_variance(self) -> None:
        rng = np.random.default_rng(8)
        X = np.concatenate((rng.uniform(0.0, 5.0, 200), rng.uniform(10.0, 15.0, 200))).reshape(-1, 1)
        noise = np.where(X[:, 0] < 7.5, 0.05, 0.5)
        data = Dataset(X, np.sin(X[:, 0]) + noise * rng.normal(size=400))
        model = msgp_fit(data, p=100, u=10, strategy="kmeans", seed=1, opt_cfg=FAST)
        quiet = [m.hyper.noise_variance for m in model.per_model if m.data.inputs[:, 0].max() < 7.5]
        loud = [m.hyper.noise_variance for m in model.per_model if m.data.inputs[:, 0].min() > 7.5]
        self.assertTrue(quiet and loud)
        self.assertGreater(min(loud), 1.1 * max(quiet))

    def test_cluster_order_does_not_change_predictions(self) -> None:
        model = msgp_fit(_data(120, d=2, span=6.0), p=30, u=5, seed=2, opt_cfg=FAST, neighbors=3)
        order = [2, 0, 3, 1]
        shuffled = TrainedMSGP(
            partition=Partition(tuple(model.partition.models[j] for j in order), model.partition.strategy),
            per_model=tuple(model.per_model[j] for j in order),
            neighbor_count_N=model.neighbor_count_N,
        )
        X = np.random.default_rng(9).uniform(0.0, 6.0, size=(15, 2))
        for a, b in zip(msgp_batch_predict(model, X), msgp_batch_predict(shuffled, X)):
            self.assertAlmostEqual(a.mean, b.mean, delta=1e-10)
            self.assertEqual({order[j] for j, _, _ in b.per_model_means}, {j for j, _, _ in a.per_model_means})

    def test_failed_cluster_fit_keeps_the_initial_hyperparameters(self) -> None:
        def failing_fit(*_args, **_kwargs):
            raise OptimizationFailedError("non-finite NLML", None)

        data = _data(60, d=2, span=6.0)
        with patch("msgp_bench.msgp.spgp_fit", new=failing_fit):
            model = msgp_fit(data, p=20, u=4, opt_cfg=FAST)
        self.assertEqual(model.flags, {j: FLAG_OPTIMIZATION_FAILED for j in range(model.partition.M)})
        for local in model.per_model:
            centered, _ = center(local.data, FAST.center_targets)
            init = default_hyperparameters(
                centered.inputs, centered.targets, ard=FAST.ard, variance_floor=FAST.variance_floor
            )
            np.testing.assert_allclose(local.hyper.to_log(), init.to_log(), atol=1e-12)
        self.assertTrue(np.isfinite(msgp_predict(model, [3.0, 3.0]).mean))

    def test_past_deadline_is_not_absorbed_as_a_cluster_flag(self) -> None:
        cfg = replace(FAST, deadline=time.monotonic() - 1.0)
        with self.assertRaises(FitDeadlineError):
            msgp_fit(_data(40), p=20, u=4, opt_cfg=cfg)

    def test_pseudo_count_larger_than_cluster_size_is_rejected(self) -> None:
        with self.assertRaises(ValueError):
            msgp_fit(_data(20), p=5, u=6)
        with self.assertRaises(ValueError):
            msgp_fit(_data(20), p=5, u=0)

    def test_uncached_matches_cached(self) -> None:
        model = msgp_fit(_data(80, d=2, span=4.0), p=20, u=4, strategy="kmeans", opt_cfg=FAST, neighbors=2)
        for x in np.random.default_rng(5).uniform(0.0, 4.0, size=(4, 2)):
            cached = msgp_predict(model, x)
            uncached = msgp_predict_uncached(model, x)
            self.assertAlmostEqual(cached.mean, uncached.mean, places=8)
            self.assertEqual(
                [entry[0] for entry in cached.per_model_means],
                [entry[0] for entry in uncached.per_model_means],
            )


if __name__ == "__main__":
    unittest.main()
