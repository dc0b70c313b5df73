import asyncio
import inspect
import sys
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Awaitable, Callable

import numpy as np

from .config import BenchConfig, Scenario
from .datasets import FlightLog
from .kernel import KernelError
from .metrics import latency_stats, prediction_nmse
from .quadsim import (
    LogSample,
    QuadState,
    ResidualPredictor,
    SimulationDivergedError,
    flat_to_desired,
    geometric_controller,
    learned_correction,
    residual_targets,
    step,
    true_dynamics,
)
from .residual import (
    CHANNELS,
    ResidualDataset,
    ResidualModel,
    fit_residual_model,
    predict,
    predict_uncached,
)

COMPLEXITY = {
    "gp": {"training": "O(n^3)", "mean": "O(n^3)", "mean_cached": "O(n)"},
    "spgp": {"training": "O(n m^2)", "mean": "O(n m^2)", "mean_cached": "O(m)"},
    "lgp": {"training": "O(M p^3)", "mean": "O(N p^3)", "mean_cached": "O(N p)"},
    "msgp": {"training": "O(M p u^2)", "mean": "O(N p u^2)", "mean_cached": "O(N u)"},
}


# --- closed loop ---


def _initial_state(scenario: Scenario) -> QuadState:
    if not scenario.start_on_reference:
        return QuadState.hover()
    desired = flat_to_desired(scenario.t0, scenario.trajectory, g=scenario.params.g)
    return QuadState(desired.r, desired.v, desired.R, desired.Omega)


def _log_from(samples: list[LogSample], references: list[np.ndarray]) -> FlightLog:
    if not samples:
        return FlightLog.empty()
    return FlightLog(
        t=np.array([s.t for s in samples]),
        r=np.array([s.state.r for s in samples]),
        v=np.array([s.state.v for s in samples]),
        R=np.array([s.state.R for s in samples]),
        Omega=np.array([s.state.Omega for s in samples]),
        F=np.array([s.u.F for s in samples]),
        M=np.array([s.u.M for s in samples]),
        r_d=np.array(references),
    )


def simulate(
    scenario: Scenario, model: ResidualPredictor | None = None
) -> tuple[FlightLog, list[LogSample]]:
    """Closed loop with a zero-order hold at ``control_dt`` and RK4 at ``dt``.

    The controller reads the acceleration the vehicle has at the start of each
    tick under the input still held from the previous one.
    """
    params = scenario.params
    substeps = round(scenario.control_dt / scenario.dt)
    ticks = round((scenario.tf - scenario.t0) / scenario.control_dt)
    state = _initial_state(scenario)
    samples: list[LogSample] = []
    references: list[np.ndarray] = []
    held = None

    for k in range(ticks):
        t = scenario.t0 + k * scenario.control_dt
        desired = flat_to_desired(t, scenario.trajectory, g=params.g)
        mu = learned_correction(state, model, params) if model is not None else None
        accel = None if held is None else true_dynamics(state, held, params, scenario.schedule, t).v_dot
        u = geometric_controller(
            state,
            desired,
            scenario.gains,
            params,
            mu=mu,
            attitude_feedback=scenario.attitude_feedback,
            accel=accel,
        )
        u = scenario.limits.apply(u)
        derivative = true_dynamics(state, u, params, scenario.schedule, t)
        samples.append(LogSample(t, state, u, derivative))
        references.append(desired.r)
        held = u
        try:
            for s in range(substeps):
                state = step(state, u, params, scenario.schedule, t + s * scenario.dt, scenario.dt)
        except SimulationDivergedError as e:
            e.log = _log_from(samples, references)
            raise
    return _log_from(samples, references), samples


def run_closed_loop(scenario: Scenario, model: ResidualPredictor | None = None) -> FlightLog:
    return simulate(scenario, model)[0]


def generate_dataset(scenario: Scenario) -> tuple[FlightLog, ResidualDataset]:
    log, samples = simulate(scenario)
    if not samples:
        return log, ResidualDataset(np.empty((0, 9)), np.empty((0, len(CHANNELS))))
    dataset = residual_targets(
        samples,
        scenario.params,
        noise_sigma=scenario.noise_sigma,
        rng=np.random.default_rng(scenario.seed),
    )
    return log, dataset


# --- benchmark ---


@dataclass
class CellResult:
    method: str
    size: int
    status: str = "ok"
    error: str | None = None
    sizes: dict = field(default_factory=dict)
    train_seconds: float = 0.0
    cached: dict = field(default_factory=dict)
    uncached: dict = field(default_factory=dict)
    prediction_nmse: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)


@dataclass
class BenchResult:
    config: BenchConfig
    cells: list[CellResult] = field(default_factory=list)
    method_summaries: dict = field(default_factory=dict)
    timestamp: str = ""
    total_duration_seconds: float = 0.0


CellKey = tuple[str, str]


def make_cell_key(*, method: str, size: int) -> CellKey:
    return (str(method), str(size))


def cell_key(cell: CellResult) -> CellKey:
    return make_cell_key(method=cell.method, size=cell.size)


def recompute_summaries(result: BenchResult) -> None:
    result.method_summaries = {}
    for method in result.config.methods:
        cells = sorted(
            (c for c in result.cells if c.method == method and c.status == "ok"),
            key=lambda c: c.size,
        )
        result.method_summaries[method] = {
            "complexity": COMPLEXITY[method],
            "sizes_completed": [c.size for c in cells],
            "cells_skipped": sum(
                1 for c in result.cells if c.method == method and c.status == "skipped"
            ),
            "cells_failed": sum(
                1 for c in result.cells if c.method == method and c.status == "failed"
            ),
            "cached_median_ms": {
                str(c.size): c.cached.get("latency_ms_median") for c in cells
            },
            "uncached_median_ms": {
                str(c.size): c.uncached.get("latency_ms_median") for c in cells
            },
            "train_seconds": {str(c.size): round(c.train_seconds, 3) for c in cells},
        }


def _time_queries(
    predict: Callable[[np.ndarray], object], queries: np.ndarray, deadline: float | None = None
) -> list[float]:
    samples = []
    for q in queries:
        if deadline is not None and time.monotonic() >= deadline:
            raise TimeoutError("Latency measurement ran past its deadline")
        t0 = time.perf_counter()
        predict(q)
        samples.append(time.perf_counter() - t0)
    return samples


def measure_latency(
    model: ResidualModel, queries: np.ndarray, uncached_queries: int, deadline: float | None = None
) -> tuple[dict, dict]:
    """Per-query latency of one channel's regressor, cached and uncached."""
    regressor = model.models[0]
    cached = _time_queries(lambda q: predict(regressor, q), queries, deadline)
    uncached = _time_queries(
        lambda q: predict_uncached(regressor, q), queries[: max(0, uncached_queries)], deadline
    )
    return latency_stats(cached), latency_stats(uncached)


class TimingGate:
    """Up to ``slots`` cells train at once; a latency measurement runs with nothing else.

    A pending measurement keeps new training out, so it waits only for the
    cells already running.
    """

    def __init__(self, slots: int) -> None:
        self.slots = max(1, slots)
        self._busy = 0
        self._timing = False
        self._pending = 0
        self._cond = asyncio.Condition()

    @asynccontextmanager
    async def shared(self):
        async with self._cond:
            await self._cond.wait_for(
                lambda: not self._timing and self._pending == 0 and self._busy < self.slots
            )
            self._busy += 1
        try:
            yield
        finally:
            async with self._cond:
                self._busy -= 1
                self._cond.notify_all()

    @asynccontextmanager
    async def exclusive(self):
        async with self._cond:
            self._pending += 1
            try:
                await self._cond.wait_for(lambda: not self._timing and self._busy == 0)
            finally:
                self._pending -= 1
            self._timing = True
        try:
            yield
        finally:
            async with self._cond:
                self._timing = False
                self._cond.notify_all()


async def run_bench(
    config: BenchConfig,
    master: ResidualDataset,
    test: ResidualDataset,
    *,
    skip_keys: set[CellKey] | None = None,
    on_result: Callable[[BenchResult], Awaitable[None] | None] | None = None,
) -> BenchResult:
    result = BenchResult(
        config=config,
        timestamp=datetime.now(timezone.utc).isoformat(),
    )
    skipped = skip_keys or set()

    tasks = []
    for size in config.sizes:
        for method in config.methods:
            if make_cell_key(method=method, size=size) in skipped:
                continue
            tasks.append((method, size))

    total = len(tasks)
    if total == 0:
        return result

    gate = TimingGate(config.max_concurrency)
    lock = asyncio.Lock()
    started = 0
    completed = 0
    rng = np.random.default_rng(config.seed)
    queries = test.inputs[rng.integers(0, test.n, size=config.cached_queries)]
    scored = test.subset(np.arange(min(test.n, config.test_queries)))

    async def process(method: str, size: int) -> CellResult:
        nonlocal started, completed
        async with lock:
            started += 1
            n = started
        method_cfg = config.methods[method]
        cell = CellResult(method=method, size=size, sizes=method_cfg.sizes(min(size, master.n)))
        print(f"[{n}/{total}] Training {method} @ n={size}...", file=sys.stderr)

        train = master.sample(size, config.seed)
        try:
            async with gate.shared():
                # fitting stops itself at the deadline, so no worker thread outlives the cell
                optimizer = replace(config.optimizer, deadline=time.monotonic() + config.cell_timeout_s)
                model = await fit_residual_model(
                    train,
                    method_cfg,
                    optimizer,
                    seed=config.seed,
                    channels=tuple(config.channels),
                )
            cell.train_seconds = model.train_seconds
            cell.flags = [
                f"{CHANNELS[config.channels[k]]}:cluster {j}:{flag}"
                for k, regressor in enumerate(model.models)
                for j, flag in sorted(getattr(regressor, "flags", {}).items())
            ]
            async with gate.exclusive():
                cell.cached, cell.uncached = await asyncio.to_thread(
                    measure_latency,
                    model,
                    queries,
                    config.uncached_queries,
                    time.monotonic() + config.cell_timeout_s,
                )
            async with gate.shared():
                predictions = await asyncio.to_thread(model.predict_batch, scored.inputs)
            cell.prediction_nmse = prediction_nmse(
                scored.targets[:, config.channels],
                predictions,
                [CHANNELS[k] for k in config.channels],
            )
        except TimeoutError:
            cell.status = "skipped"
            cell.error = f"exceeded the {config.cell_timeout_s:.0f}s cell timeout"
            print(f"  SKIP [{method} @ n={size}] {cell.error}", file=sys.stderr)
        except KernelError as e:
            cell.status = "failed"
            cell.error = str(e)
            print(f"  FAIL [{method} @ n={size}] {e}", file=sys.stderr)

        async with lock:
            completed += 1
            done = completed
        median = cell.cached.get("latency_ms_median")
        timing = f"{median:.3f} ms/query" if median is not None else cell.status
        print(f"  [{done}/{total} done] {method} @ n={size}: {timing}", file=sys.stderr)
        return cell

    start = time.monotonic()
    futures = [asyncio.create_task(process(method, size)) for method, size in tasks]
    for future in asyncio.as_completed(futures):
        cell = await future
        result.cells.append(cell)
        recompute_summaries(result)
        if on_result:
            callback_result = on_result(result)
            if inspect.isawaitable(callback_result):
                await callback_result
    result.total_duration_seconds = round(time.monotonic() - start, 3)

    recompute_summaries(result)
    return result
