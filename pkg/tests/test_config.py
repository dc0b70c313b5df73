import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

from msgp_bench.config import (
    CONCURRENCY_ENV,
    ConfigError,
    concurrency_override,
    load_bench_config,
    load_scenario,
)

ROOT = Path(__file__).resolve().parent.parent


def _write(tmp: Path, name: str, lines: list[str]) -> Path:
    path = tmp / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _bench_lines(extra: list[str] | None = None, sizes: str = "[100, 200]") -> list[str]:
    return [
        "[bench]",
        'name = "Test"',
        'output = "out/bench.json"',
        f"sizes = {sizes}",
        'master_data = "master.csv"',
        *(extra or []),
        "",
        "[methods.gp]",
        "hyper_subsample_size = 50",
        "",
        "[methods.msgp]",
        "local_size = 40",
        "local_pseudo_ratio = 0.25",
        "neighbors = 3",
        'strategy = "kmeans"',
    ]


class TestScenarioConfig(unittest.TestCase):
    def test_shipped_scenarios_load(self) -> None:
        for path in sorted((ROOT / "scenarios").glob("*.toml")):
            scenario = load_scenario(path)
            self.assertGreater(scenario.tf, scenario.t0, path.name)
            self.assertLessEqual(scenario.dt, scenario.control_dt, path.name)

    def test_wind_scenario_values(self) -> None:
        scenario = load_scenario(ROOT / "scenarios" / "wind_train.toml")
        np.testing.assert_array_equal(scenario.schedule.wind, [0.17, 0.18, 0.16])
        self.assertEqual(scenario.params.m, 1.25)
        np.testing.assert_array_equal(scenario.params.J, np.diag([1.1, 1.1, 2.2]))
        self.assertEqual(scenario.control_dt, 0.005)

    def test_minimal_scenario_uses_defaults(self) -> None:
        with tempfile.TemporaryDirectory() as tmp_dir:
            path = _write(Path(tmp_dir), "mini.toml", ["[scenario]", "tf_s = 1.0"])
            scenario = load_scenario(path)
        self.assertEqual(scenario.name, "mini")
        self.assertEqual(scenario.dt, 1e-3)
        self.assertEqual(scenario.trajectory.yaw, "atan2")
        self.assertIsNone(scenario.method)

    def test_invalid_scenarios_raise_config_error(self) -> None:
        cases = {
            "no tf": ["[scenario]"],
            "bad ratio": ["[scenario]", "tf_s = 1.0", "dt_s = 0.003", "control_dt_s = 0.01"],
            "negative mass": ["[scenario]", "tf_s = 1.0", "[vehicle]", "mass_kg = -1.0"],
            "bad yaw": ["[scenario]", "tf_s = 1.0", "[trajectory]", 'yaw = "spin"'],
            "short vector": ["[scenario]", "tf_s = 1.0", "[disturbance]", "wind_g = [0.1, 0.2]"],
            "unknown method": ["[scenario]", "tf_s = 1.0", "[controller]", 'method = "svgp"'],
            "overlap": [
                "[scenario]",
                "tf_s = 10.0",
                "[[disturbance.mass_steps]]",
                "t_start_s = 1.0",
                "t_end_s = 3.0",
                "multiplier = 1.5",
                "[[disturbance.mass_steps]]",
                "t_start_s = 2.0",
                "t_end_s = 4.0",
                "multiplier = 0.8",
            ],
        }
        with tempfile.TemporaryDirectory() as tmp_dir:
            for label, lines in cases.items():
                path = _write(Path(tmp_dir), "bad.toml", lines)
                with self.assertRaises(ConfigError, msg=label):
                    load_scenario(path)

    def test_actuator_limits_are_validated(self) -> None:
        cases = {
            "string thrust": ['thrust_max_N = "high"'],
            "negative floor": ["thrust_min_N = -1.0"],
            "zero moment": ["moment_max_Nm = 0.0"],
            "inverted range": ["thrust_min_N = 20.0", "thrust_max_N = 10.0"],
        }
        with tempfile.TemporaryDirectory() as tmp_dir:
            for label, extra in cases.items():
                path = _write(Path(tmp_dir), "bad.toml", ["[scenario]", "tf_s = 1.0", "[controller]", *extra])
                with self.assertRaises(ConfigError, msg=label):
                    load_scenario(path)

            path = _write(
                Path(tmp_dir),
                "limits.toml",
                ["[scenario]", "tf_s = 1.0", "[controller]", "thrust_min_N = 0", "thrust_max_N = 30", "moment_max_Nm = 5.0"],
            )
            limits = load_scenario(path).limits
        self.assertEqual((limits.thrust_min, limits.thrust_max, limits.moment_max), (0.0, 30.0, 5.0))
        self.assertIsInstance(limits.thrust_max, float)

    def test_missing_and_malformed_files(self) -> None:
        with tempfile.TemporaryDirectory() as tmp_dir:
            with self.assertRaises(ConfigError):
                load_scenario(Path(tmp_dir) / "absent.toml")
            path = _write(Path(tmp_dir), "broken.toml", ["[scenario", "tf_s = 1"])
            with self.assertRaisesRegex(ConfigError, "Invalid TOML"):
                load_scenario(path)


class TestBenchConfig(unittest.TestCase):
    def test_paths_resolve_against_config_directory(self) -> None:
        with tempfile.TemporaryDirectory() as tmp_dir:
            tmp = Path(tmp_dir)
            config = load_bench_config(_write(tmp, "bench.toml", _bench_lines()))
        self.assertEqual(config.output, tmp / "out" / "bench.json")
        self.assertEqual(config.master_data, tmp / "master.csv")
        self.assertIsNone(config.test_data)
        self.assertEqual(list(config.methods), ["gp", "msgp"])
        self.assertEqual(config.methods["msgp"].strategy, "kmeans")
        self.assertEqual(config.methods["gp"].hyper_subsample_size, 50)
        self.assertEqual(config.channels, [0, 1, 2])

    def test_shipped_configs_load(self) -> None:
        for name in ("config.toml", "config.example.toml"):
            config = load_bench_config(ROOT / name)
            self.assertEqual(sorted(config.methods), ["gp", "lgp", "msgp", "spgp"])
            self.assertEqual(config.sizes, sorted(config.sizes))

    def test_invalid_bench_settings(self) -> None:
        cases = {
            "descending": _bench_lines(sizes="[200, 100]"),
            "empty sizes": _bench_lines(sizes="[]"),
            "channel": _bench_lines(["channels = [6]"]),
            "zero workers": _bench_lines(["max_concurrency = 0"]),
            "ratio": _bench_lines() + ["pseudo_ratio = 1.5"],
        }
        with tempfile.TemporaryDirectory() as tmp_dir, patch.dict(os.environ, {}, clear=True):
            for label, lines in cases.items():
                with self.assertRaises(ConfigError, msg=label):
                    load_bench_config(_write(Path(tmp_dir), "bench.toml", lines))

            unknown = _bench_lines() + ["", "[methods.svgp]"]
            with self.assertRaisesRegex(ConfigError, "Unknown methods"):
                load_bench_config(_write(Path(tmp_dir), "bench.toml", unknown))

    def test_environment_overrides_concurrency(self) -> None:
        with tempfile.TemporaryDirectory() as tmp_dir:
            path = _write(Path(tmp_dir), "bench.toml", _bench_lines())
            with patch.dict(os.environ, {CONCURRENCY_ENV: "4"}):
                self.assertEqual(load_bench_config(path).max_concurrency, 4)
            with patch.dict(os.environ, {CONCURRENCY_ENV: "many"}):
                with self.assertRaises(ConfigError):
                    load_bench_config(path)

    def test_concurrency_override_default(self) -> None:
        with patch.dict(os.environ, {}, clear=True):
            self.assertEqual(concurrency_override(3), 3)


if __name__ == "__main__":
    unittest.main()
