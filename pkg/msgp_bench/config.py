import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import STRATEGIES
from .gp import OptimizerConfig
from .quadsim import (
    ActuatorLimits,
    ContractError,
    DisturbanceSchedule,
    Gains,
    InertiaStep,
    MassStep,
    QuadParams,
    TrajectoryConfig,
)
from .residual import CHANNELS, METHODS, MethodConfig

CONCURRENCY_ENV = "MSGP_BENCH_MAX_CONCURRENCY"


class ConfigError(Exception):
    pass


@dataclass
class Scenario:
    name: str
    t0: float
    tf: float
    dt: float
    control_dt: float
    params: QuadParams
    trajectory: TrajectoryConfig
    gains: Gains
    schedule: DisturbanceSchedule
    seed: int = 0
    noise_sigma: float = 1e-3
    transient_s: float = 2.0
    start_on_reference: bool = True
    attitude_feedback: bool = True
    limits: ActuatorLimits = field(default_factory=ActuatorLimits)
    method: str | None = None
    path: Path | None = None


@dataclass
class BenchConfig:
    name: str
    output: Path
    max_concurrency: int
    sizes: list[int]
    optimizer: OptimizerConfig
    methods: dict[str, MethodConfig]
    cached_queries: int = 1000
    uncached_queries: int = 20
    test_queries: int = 1000
    cell_timeout_s: float = 600.0
    seed: int = 0
    master_data: Path | None = None
    test_data: Path | None = None
    channels: list[int] = field(default_factory=lambda: [0, 1, 2])


def concurrency_override(default: int) -> int:
    """Worker count from the environment, else ``default``."""
    value = os.environ.get(CONCURRENCY_ENV)
    if not value:
        return default
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{CONCURRENCY_ENV} must be an integer, got {value!r}") from None


def _read_toml(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML in {path}: {e}") from e


def _section(raw: dict, name: str, required: bool = True) -> dict:
    section = raw.get(name)
    if section is None:
        if required:
            raise ConfigError(f"Missing [{name}] section")
        return {}
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a table")
    return section


def _number(section: dict, key: str, where: str, default=None, *, positive: bool = False) -> float:
    if key not in section:
        if default is None:
            raise ConfigError(f"Missing {where}.{key}")
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{where}.{key} must be a finite number, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(f"{where}.{key} must be positive, got {value}")
    return float(value)


def _integer(section: dict, key: str, where: str, default: int | None = None) -> int:
    if key not in section:
        if default is None:
            raise ConfigError(f"Missing {where}.{key}")
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}.{key} must be an integer, got {value!r}")
    return value


def _boolean(section: dict, key: str, where: str, default: bool) -> bool:
    value = section.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{where}.{key} must be true or false, got {value!r}")
    return value


def _vector(section: dict, key: str, where: str, default=None) -> np.ndarray:
    if key not in section:
        if default is None:
            raise ConfigError(f"Missing {where}.{key}")
        return np.asarray(default, dtype=float)
    value = section[key]
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key} must be a list of numbers, got {value!r}") from None
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{where}.{key} must be a list of 3 finite numbers, got {value!r}")
    return arr


def _inertia(section: dict) -> np.ndarray:
    value = section.get("inertia_kgm2", [1.1, 1.1, 2.2])
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"vehicle.inertia_kgm2 must be numeric, got {value!r}") from None
    if arr.shape == (3,):
        return np.diag(arr)
    if arr.shape == (3, 3):
        return arr
    raise ConfigError("vehicle.inertia_kgm2 must be a 3-list (diagonal) or a 3x3 matrix")


def load_scenario(path: "str | Path") -> Scenario:
    path = Path(path)
    raw = _read_toml(path)

    # [scenario]
    sc = _section(raw, "scenario")
    name = sc.get("name", path.stem)
    t0 = _number(sc, "t0_s", "scenario", 0.0)
    tf = _number(sc, "tf_s", "scenario")
    dt = _number(sc, "dt_s", "scenario", 1e-3, positive=True)
    control_dt = _number(sc, "control_dt_s", "scenario", 1e-2, positive=True)
    if tf < t0:
        raise ConfigError(f"scenario.tf_s ({tf}) must not precede scenario.t0_s ({t0})")
    if dt > control_dt:
        raise ConfigError(f"scenario.dt_s ({dt}) must not exceed scenario.control_dt_s ({control_dt})")
    ratio = control_dt / dt
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError("scenario.control_dt_s must be an integer multiple of scenario.dt_s")
    noise_sigma = _number(sc, "noise_sigma", "scenario", 1e-3)
    if noise_sigma < 0:
        raise ConfigError("scenario.noise_sigma must be non-negative")

    # [vehicle]
    vehicle = _section(raw, "vehicle", required=False)
    try:
        params = QuadParams(
            m=_number(vehicle, "mass_kg", "vehicle", 1.25, positive=True),
            J=_inertia(vehicle),
            g=_number(vehicle, "gravity_mps2", "vehicle", 9.81, positive=True),
        )
    except ContractError as e:
        raise ConfigError(f"[vehicle]: {e}") from e

    # [trajectory]
    tr = _section(raw, "trajectory", required=False)
    yaw = tr.get("yaw", "atan2")
    if yaw not in ("atan2", "fixed"):
        raise ConfigError(f"trajectory.yaw must be 'atan2' or 'fixed', got {yaw!r}")
    trajectory = TrajectoryConfig(
        amplitude=_vector(tr, "amplitude_m", "trajectory", [4.0, 5.0, 2.0]),
        frequency=_vector(tr, "frequency_radps", "trajectory", [0.8, 0.4, 0.4]),
        phase=_vector(tr, "phase_rad", "trajectory", [0.0, 0.0, 0.0]),
        yaw=yaw,
        yaw_rad=_number(tr, "yaw_rad", "trajectory", 0.0),
    )

    # [gains]
    gs = _section(raw, "gains", required=False)
    defaults = Gains.defaults()
    try:
        gains = Gains(
            k_r=_vector(gs, "k_r", "gains", defaults.k_r),
            k_v=_vector(gs, "k_v", "gains", defaults.k_v),
            k_R=_vector(gs, "k_R", "gains", defaults.k_R),
            k_Omega=_vector(gs, "k_Omega", "gains", defaults.k_Omega),
        )
    except ContractError as e:
        raise ConfigError(f"[gains]: {e}") from e

    # [disturbance]
    dist = _section(raw, "disturbance", required=False)
    mass_steps = []
    for i, s in enumerate(dist.get("mass_steps", [])):
        where = f"disturbance.mass_steps[{i}]"
        mass_steps.append(
            MassStep(
                t_start=_number(s, "t_start_s", where),
                t_end=_number(s, "t_end_s", where),
                multiplier=_number(s, "multiplier", where, positive=True),
            )
        )
    inertia_steps = []
    for i, s in enumerate(dist.get("inertia_steps", [])):
        where = f"disturbance.inertia_steps[{i}]"
        inertia_steps.append(
            InertiaStep(
                t_start=_number(s, "t_start_s", where),
                t_end=_number(s, "t_end_s", where),
                delta=_vector(s, "delta_kgm2", where),
            )
        )
    schedule = DisturbanceSchedule(
        mass_steps=tuple(mass_steps),
        inertia_steps=tuple(inertia_steps),
        wind=_vector(dist, "wind_g", "disturbance", [0.0, 0.0, 0.0]),
    )
    try:
        schedule.validate(t0, tf)
    except ContractError as e:
        raise ConfigError(f"[disturbance]: {e}") from e

    # [controller]
    ctl = _section(raw, "controller", required=False)
    method = ctl.get("method")
    if method is not None and method not in METHODS:
        raise ConfigError(f"controller.method must be one of {METHODS}, got {method!r}")
    limits = ActuatorLimits(
        thrust_min=_number(ctl, "thrust_min_N", "controller") if "thrust_min_N" in ctl else None,
        thrust_max=_number(ctl, "thrust_max_N", "controller", positive=True) if "thrust_max_N" in ctl else None,
        moment_max=_number(ctl, "moment_max_Nm", "controller", positive=True) if "moment_max_Nm" in ctl else None,
    )
    if limits.thrust_min is not None and limits.thrust_min < 0:
        raise ConfigError(f"controller.thrust_min_N must be non-negative, got {limits.thrust_min}")
    if limits.thrust_min is not None and limits.thrust_max is not None and limits.thrust_min > limits.thrust_max:
        raise ConfigError(
            f"controller.thrust_min_N ({limits.thrust_min}) exceeds controller.thrust_max_N ({limits.thrust_max})"
        )

    return Scenario(
        name=name,
        t0=t0,
        tf=tf,
        dt=dt,
        control_dt=control_dt,
        params=params,
        trajectory=trajectory,
        gains=gains,
        schedule=schedule,
        seed=_integer(sc, "seed", "scenario", 0),
        noise_sigma=noise_sigma,
        transient_s=_number(sc, "transient_s", "scenario", 2.0),
        start_on_reference=_boolean(sc, "start_on_reference", "scenario", True),
        attitude_feedback=_boolean(ctl, "attitude_feedback", "controller", True),
        limits=limits,
        method=method,
        path=path,
    )


def _method_config(name: str, raw: dict) -> MethodConfig:
    where = f"methods.{name}"
    subsample = raw.get("hyper_subsample_size")
    if subsample is not None and (not isinstance(subsample, int) or subsample < 1):
        raise ConfigError(f"{where}.hyper_subsample_size must be a positive integer")
    strategy = raw.get("strategy", "random")
    if strategy not in STRATEGIES:
        raise ConfigError(f"{where}.strategy must be one of {STRATEGIES}, got {strategy!r}")
    for key in ("pseudo_ratio", "local_pseudo_ratio"):
        if key in raw:
            value = _number(raw, key, where)
            if not 0 < value <= 1:
                raise ConfigError(f"{where}.{key} must lie in (0, 1], got {value}")
    local_size = _integer(raw, "local_size", where, 250)
    neighbors = _integer(raw, "neighbors", where, 5)
    if local_size < 1 or neighbors < 1:
        raise ConfigError(f"{where}.local_size and {where}.neighbors must be >= 1")
    return MethodConfig(
        method=name,
        hyper_subsample_size=subsample,
        pseudo_ratio=_number(raw, "pseudo_ratio", where, 0.1),
        optimize_pseudo=_boolean(raw, "optimize_pseudo", where, True),
        local_size=local_size,
        local_pseudo_ratio=_number(raw, "local_pseudo_ratio", where, 0.2),
        neighbors=neighbors,
        strategy=strategy,
    )


def load_bench_config(path: "str | Path") -> BenchConfig:
    path = Path(path)
    base_dir = path.parent
    raw = _read_toml(path)

    # [bench]
    bench = _section(raw, "bench")
    name = bench.get("name", "MSGP Benchmark Run")
    output = base_dir / bench.get("output", "results/bench.json")
    max_concurrency = concurrency_override(_integer(bench, "max_concurrency", "bench", 2))
    if max_concurrency < 1:
        raise ConfigError("bench.max_concurrency must be >= 1")

    sizes = bench.get("sizes", [3000, 6000, 12000])
    if not isinstance(sizes, list) or not sizes or not all(
        isinstance(s, int) and not isinstance(s, bool) and s > 0 for s in sizes
    ):
        raise ConfigError("bench.sizes must be a non-empty list of positive integers")
    if sizes != sorted(sizes):
        raise ConfigError(f"bench.sizes must be ascending, got {sizes}")

    channels = bench.get("channels", [0, 1, 2])
    if not isinstance(channels, list) or not channels or not all(
        isinstance(c, int) and not isinstance(c, bool) and 0 <= c < len(CHANNELS) for c in channels
    ):
        raise ConfigError(f"bench.channels must list channel indices in [0, {len(CHANNELS)})")

    master = bench.get("master_data")
    test = bench.get("test_data")

    # [optimizer]
    opt = _section(raw, "optimizer", required=False)
    optimizer = OptimizerConfig(
        gtol=_number(opt, "gtol", "optimizer", 1e-5, positive=True),
        max_iter=_integer(opt, "max_iter", "optimizer", 200),
        restarts=_integer(opt, "restarts", "optimizer", 3),
        seed=_integer(bench, "seed", "bench", 0),
        ard=_boolean(opt, "ard", "optimizer", True),
        center_targets=_boolean(opt, "center_targets", "optimizer", True),
        variance_floor=_number(opt, "variance_floor", "optimizer", 1e-4, positive=True),
    )

    # [methods.*]
    methods_raw = _section(raw, "methods")
    if not methods_raw:
        raise ConfigError("No [methods.*] tables defined")
    unknown = sorted(set(methods_raw) - set(METHODS))
    if unknown:
        raise ConfigError(f"Unknown methods: {', '.join(unknown)} (expected {', '.join(METHODS)})")
    methods = {name: _method_config(name, methods_raw[name] or {}) for name in METHODS if name in methods_raw}

    return BenchConfig(
        name=name,
        output=output,
        max_concurrency=max_concurrency,
        sizes=sizes,
        optimizer=optimizer,
        methods=methods,
        cached_queries=_integer(bench, "cached_queries", "bench", 1000),
        uncached_queries=_integer(bench, "uncached_queries", "bench", 20),
        test_queries=_integer(bench, "test_queries", "bench", 1000),
        cell_timeout_s=_number(bench, "cell_timeout_s", "bench", 600.0, positive=True),
        seed=optimizer.seed,
        master_data=base_dir / master if master else None,
        test_data=base_dir / test if test else None,
        channels=sorted(set(channels)),
    )
