"""End-to-end checks of the regression and simulation pipeline.

The long-running cases train on full-length flights and time exact GP against
MSGP at benchmark sizes; they run only with ``MSGP_BENCH_SLOW=1``.
"""

import asyncio
import io
import os
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

import numpy as np

from msgp_bench.__main__ import main
from msgp_bench.archive import load_model
from msgp_bench.config import BenchConfig, load_scenario
from msgp_bench.gp import OptimizerConfig
from msgp_bench.metrics import tracking_nmse
from msgp_bench.msgp import msgp_fit, msgp_batch_predict
from msgp_bench.residual import MethodConfig, ResidualDataset, fit_residual_model
from msgp_bench.runner import generate_dataset, run_bench, run_closed_loop, simulate

ROOT = Path(__file__).resolve().parent.parent
SLOW = os.environ.get("MSGP_BENCH_SLOW") == "1"


def _quiet(fn, *args, **kwargs):
    with redirect_stderr(io.StringIO()), redirect_stdout(io.StringIO()):
        return fn(*args, **kwargs)


def _scenario(name: str, **overrides):
    scenario = load_scenario(ROOT / "scenarios" / f"{name}.toml")
    for key, value in overrides.items():
        setattr(scenario, key, value)
    return scenario


class TestNullResidual(unittest.TestCase):
    def test_undisturbed_flight_has_no_residual_to_learn(self) -> None:
        _, clean = generate_dataset(_scenario("nominal", tf=3.0, noise_sigma=0.0))
        self.assertLess(float(np.abs(clean.targets).max()), 1e-6)

        sigma = 1e-3
        _, noisy = generate_dataset(_scenario("nominal", tf=6.0, noise_sigma=sigma))
        train = noisy.subset(np.arange(0, noisy.n, 2))
        held_out = noisy.inputs[1::2][:100]
        model = _quiet(
            msgp_fit, train.channel(2), p=100, u=20, opt_cfg=OptimizerConfig(max_iter=50, restarts=1)
        )
        means = np.array([pred.mean for pred in msgp_batch_predict(model, held_out)])
        self.assertLess(float(np.abs(means).max()), 5 * sigma)


class TestDeterminism(unittest.TestCase):
    def test_pipeline_reproduces_files_and_predictions(self) -> None:
        with tempfile.TemporaryDirectory() as tmp_dir:
            tmp = Path(tmp_dir)
            scenario = tmp / "short.toml"
            scenario.write_text(
                "[scenario]\nname = 'short'\ntf_s = 1.0\nseed = 3\n\n[disturbance]\nwind_g = [0.1, 0.1, 0.0]\n",
                encoding="utf-8",
            )
            config = tmp / "fast.toml"
            config.write_text(
                "[bench]\n[optimizer]\nmax_iter = 20\nrestarts = 2\n\n"
                "[methods.msgp]\nlocal_size = 40\nlocal_pseudo_ratio = 0.25\n",
                encoding="utf-8",
            )
            outputs = []
            for run in ("a", "b"):
                data = tmp / f"{run}.csv"
                archive = tmp / f"{run}.npz"
                self.assertEqual(_quiet(main, ["generate", "--scenario", str(scenario), "--out", str(data)]), 0)
                self.assertEqual(
                    _quiet(
                        main,
                        ["train", "--method", "msgp", "--data", str(data), "--config", str(config), "--out", str(archive)],
                    ),
                    0,
                )
                outputs.append((data, archive))

            (data_a, archive_a), (data_b, archive_b) = outputs
            self.assertEqual(data_a.read_bytes(), data_b.read_bytes())
            self.assertEqual((tmp / "a_log.csv").read_bytes(), (tmp / "b_log.csv").read_bytes())
            X = np.random.default_rng(0).normal(size=(20, 9))
            np.testing.assert_allclose(
                load_model(archive_a).predict_batch(X), load_model(archive_b).predict_batch(X), rtol=0, atol=1e-12
            )


class TestShortWindLearning(unittest.TestCase):
    def test_msgp_augmentation_beats_nominal_on_a_short_wind_flight(self) -> None:
        _, train = generate_dataset(_scenario("wind_train", tf=8.0, dt=0.005))
        train = train.subset(np.arange(0, train.n, 2))
        method = MethodConfig("msgp", local_size=100, local_pseudo_ratio=0.2, optimize_pseudo=False)
        model = _quiet(
            asyncio.run,
            fit_residual_model(train, method, OptimizerConfig(max_iter=20, restarts=1), seed=0, max_concurrency=2),
        )

        test = _scenario("wind_test", tf=8.0, dt=0.005)
        nominal = tracking_nmse(run_closed_loop(test), test.transient_s).values()
        msgp = tracking_nmse(_quiet(run_closed_loop, test, model), test.transient_s).values()
        for axis in range(3):
            self.assertLess(msgp[axis], nominal[axis], f"axis {axis}")


@unittest.skipUnless(SLOW, "set MSGP_BENCH_SLOW=1 to run")
class TestSimulatorInvariants(unittest.TestCase):
    def test_attitude_stays_on_so3_for_full_flights(self) -> None:
        for name in ("wind_train", "combined_train"):
            scenario = _scenario(name)
            _, samples = simulate(scenario)
            self.assertEqual(len(samples), round((scenario.tf - scenario.t0) / scenario.control_dt))
            for sample in samples:
                R = sample.state.R
                self.assertLess(np.linalg.norm(R.T @ R - np.eye(3)), 1e-6, f"{name} t={sample.t}")
                self.assertLess(abs(np.linalg.det(R) - 1.0), 1e-6, f"{name} t={sample.t}")


@unittest.skipUnless(SLOW, "set MSGP_BENCH_SLOW=1 to run")
class TestLearningOrdering(unittest.TestCase):
    def test_msgp_augmentation_beats_nominal_under_wind(self) -> None:
        _, train = generate_dataset(_scenario("wind_train"))
        opt = OptimizerConfig(max_iter=100, restarts=1)
        models = {}
        for method in ("spgp", "msgp"):
            models[method] = _quiet(
                asyncio.run,
                fit_residual_model(train, MethodConfig(method), opt, seed=0, max_concurrency=2),
            )

        test = _scenario("wind_test")
        nominal = tracking_nmse(run_closed_loop(test), test.transient_s).values()
        spgp = tracking_nmse(_quiet(run_closed_loop, test, models["spgp"]), test.transient_s).values()
        msgp = tracking_nmse(_quiet(run_closed_loop, test, models["msgp"]), test.transient_s).values()

        for axis in range(3):
            self.assertLess(msgp[axis], nominal[axis], f"axis {axis}")
        self.assertGreaterEqual(sum(m <= s for m, s in zip(msgp, spgp)), 2)


@unittest.skipUnless(SLOW, "set MSGP_BENCH_SLOW=1 to run")
class TestLatencyOrdering(unittest.TestCase):
    def test_cached_msgp_latency_is_flat_while_exact_gp_grows(self) -> None:
        rng = np.random.default_rng(0)
        inputs = rng.uniform(-3.0, 3.0, size=(13000, 9))
        targets = np.tile((np.sin(inputs[:, 0]) + 0.1 * inputs[:, 4])[:, None], (1, 6))
        master = ResidualDataset(inputs[:12000], targets[:12000])
        test = ResidualDataset(inputs[12000:], targets[12000:])
        config = BenchConfig(
            name="latency",
            output=Path("unused.json"),
            max_concurrency=1,
            sizes=[3000, 6000, 12000],
            optimizer=OptimizerConfig(max_iter=30, restarts=1),
            methods={
                "gp": MethodConfig("gp", hyper_subsample_size=1000),
                "msgp": MethodConfig("msgp", local_size=250, local_pseudo_ratio=0.2, neighbors=5),
            },
            cached_queries=300,
            uncached_queries=2,
            test_queries=200,
            cell_timeout_s=1200.0,
            channels=[0],
        )
        result = _quiet(asyncio.run, run_bench(config, master, test))
        cells = {(c.method, c.size): c for c in result.cells}
        self.assertTrue(all(c.status == "ok" for c in result.cells))
        self.assertEqual(cells[("msgp", 3000)].sizes["u"], 50)

        gp = {n: cells[("gp", n)].uncached["latency_ms_median"] for n in config.sizes}
        self.assertGreater(gp[12000] / gp[6000], 3.0)

        msgp = [cells[("msgp", n)].cached["latency_ms_median"] for n in config.sizes]
        self.assertLess(max(msgp) / min(msgp), 2.0)
        self.assertLess(max(msgp), 5.0)


if __name__ == "__main__":
    unittest.main()
