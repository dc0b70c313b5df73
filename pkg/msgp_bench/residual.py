"""Six-channel residual regressors behind one prediction interface."""

from __future__ import annotations

import asyncio
import sys
import time
from dataclasses import dataclass, field, replace
from functools import singledispatch

import numpy as np

from .gp import (
    Dataset,
    FitReport,
    OptimizerConfig,
    TrainedGP,
    gp_fit,
    gp_predict_batch,
    gp_predict_uncached,
)
from .kernel import DimensionError
from .lgp import TrainedLGP, lgp_batch_predict, lgp_fit, lgp_predict_uncached
from .msgp import TrainedMSGP, msgp_batch_predict, msgp_fit, msgp_predict_uncached
from .spgp import TrainedSPGP, spgp_fit, spgp_predict_batch, spgp_predict_uncached

METHODS = ("gp", "spgp", "lgp", "msgp")
INPUT_COLUMNS = (
    "r_x_m", "r_y_m", "r_z_m",
    "v_x_mps", "v_y_mps", "v_z_mps",
    "Omega_x_radps", "Omega_y_radps", "Omega_z_radps",
)
CHANNELS = ("f_x_N", "f_y_N", "f_z_N", "M_x_Nm", "M_y_Nm", "M_z_Nm")


@dataclass(frozen=True)
class ResidualDataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=float)
        targets = np.asarray(self.targets, dtype=float)
        if inputs.ndim != 2 or inputs.shape[1] != len(INPUT_COLUMNS):
            raise DimensionError(f"Residual inputs must be (n, {len(INPUT_COLUMNS)}), got {inputs.shape}")
        if targets.shape != (inputs.shape[0], len(CHANNELS)):
            raise DimensionError(
                f"Residual targets must be ({inputs.shape[0]}, {len(CHANNELS)}), got {targets.shape}"
            )
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def channel(self, k: int) -> Dataset:
        return Dataset(self.inputs, self.targets[:, k])

    def subset(self, rows) -> "ResidualDataset":
        rows = np.asarray(rows, dtype=int)
        return ResidualDataset(self.inputs[rows], self.targets[rows])

    def sample(self, size: int, seed: int) -> "ResidualDataset":
        """Uniform subsample without replacement, in original row order."""
        if size >= self.n:
            return self
        rng = np.random.default_rng(seed)
        return self.subset(np.sort(rng.choice(self.n, size=size, replace=False)))


@dataclass(frozen=True)
class MethodConfig:
    method: str
    hyper_subsample_size: int | None = None
    pseudo_ratio: float = 0.1
    optimize_pseudo: bool = True
    local_size: int = 250
    local_pseudo_ratio: float = 0.2
    neighbors: int = 5
    strategy: str = "random"

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"Unknown method '{self.method}' (expected one of {METHODS})")
        for name in ("pseudo_ratio", "local_pseudo_ratio"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")

    def pseudo_count(self, n: int) -> int:
        return min(n, max(1, round(self.pseudo_ratio * n)))

    def local_pseudo_count(self) -> int:
        return min(self.local_size, max(1, round(self.local_pseudo_ratio * self.local_size)))

    def sizes(self, n: int) -> dict[str, int]:
        if self.method == "gp":
            return {"n": n}
        if self.method == "spgp":
            return {"n": n, "m": self.pseudo_count(n)}
        M = -(-n // min(self.local_size, n))
        sizes = {"n": n, "p": self.local_size, "M": M, "N": min(self.neighbors, M)}
        if self.method == "msgp":
            sizes["u"] = self.local_pseudo_count()
        return sizes


Regressor = TrainedGP | TrainedSPGP | TrainedLGP | TrainedMSGP


def fit_channel(data: Dataset, cfg: MethodConfig, opt_cfg: OptimizerConfig) -> Regressor:
    if cfg.method == "gp":
        return gp_fit(data, opt_cfg=opt_cfg, hyper_subsample_size=cfg.hyper_subsample_size)
    if cfg.method == "spgp":
        opt_cfg = replace(opt_cfg, optimize_pseudo=cfg.optimize_pseudo)
        return spgp_fit(data, cfg.pseudo_count(data.n), opt_cfg=opt_cfg)
    if cfg.method == "lgp":
        return lgp_fit(
            data,
            cfg.local_size,
            cfg.strategy,
            opt_cfg.seed,
            cfg.hyper_subsample_size,
            opt_cfg,
            cfg.neighbors,
        )
    opt_cfg = replace(opt_cfg, optimize_pseudo=cfg.optimize_pseudo)
    return msgp_fit(
        data,
        cfg.local_size,
        cfg.local_pseudo_count(),
        cfg.strategy,
        opt_cfg.seed,
        opt_cfg,
        cfg.neighbors,
    )


# --- prediction dispatch ---


@singledispatch
def predict_batch(model, X: np.ndarray) -> np.ndarray:
    raise TypeError(f"Unsupported regressor type: {type(model).__name__}")


@predict_batch.register
def _(model: TrainedGP, X: np.ndarray) -> np.ndarray:
    return gp_predict_batch(model, X)[0]


@predict_batch.register
def _(model: TrainedSPGP, X: np.ndarray) -> np.ndarray:
    return spgp_predict_batch(model, X)[0]


@predict_batch.register
def _(model: TrainedLGP, X: np.ndarray) -> np.ndarray:
    return np.array([pr.mean for pr in lgp_batch_predict(model, X)])


@predict_batch.register
def _(model: TrainedMSGP, X: np.ndarray) -> np.ndarray:
    return np.array([pr.mean for pr in msgp_batch_predict(model, X)])


def predict(model, x: np.ndarray) -> float:
    return float(predict_batch(model, np.asarray(x, dtype=float).reshape(1, -1))[0])


@singledispatch
def predict_uncached(model, x: np.ndarray) -> float:
    raise TypeError(f"Unsupported regressor type: {type(model).__name__}")


@predict_uncached.register
def _(model: TrainedGP, x: np.ndarray) -> float:
    return gp_predict_uncached(model, x).mean


@predict_uncached.register
def _(model: TrainedSPGP, x: np.ndarray) -> float:
    return spgp_predict_uncached(model, x).mean


@predict_uncached.register
def _(model: TrainedLGP, x: np.ndarray) -> float:
    return lgp_predict_uncached(model, x).mean


@predict_uncached.register
def _(model: TrainedMSGP, x: np.ndarray) -> float:
    return msgp_predict_uncached(model, x).mean


def fit_report(model: Regressor) -> FitReport | None:
    if isinstance(model, TrainedMSGP):
        return None
    return model.report


@dataclass
class ResidualModel:
    method: str
    config: MethodConfig
    models: tuple[Regressor, ...]
    train_seconds: float = 0.0
    meta: dict = field(default_factory=dict)

    def predict_means(self, q) -> np.ndarray:
        x = np.asarray(q, dtype=float).reshape(1, -1)
        return np.array([predict_batch(model, x)[0] for model in self.models])

    def predict_means_uncached(self, q) -> np.ndarray:
        x = np.asarray(q, dtype=float).reshape(-1)
        return np.array([predict_uncached(model, x) for model in self.models])

    def predict_batch(self, Q) -> np.ndarray:
        X = np.asarray(Q, dtype=float)
        return np.column_stack([predict_batch(model, X) for model in self.models])

    @property
    def n(self) -> int:
        first = self.models[0]
        if isinstance(first, (TrainedLGP, TrainedMSGP)):
            return sum(m.data.n for m in first.per_model)
        return first.data.n


async def fit_residual_model(
    dataset: ResidualDataset,
    method_cfg: MethodConfig,
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    *,
    seed: int = 0,
    channels: tuple[int, ...] = tuple(range(len(CHANNELS))),
    max_concurrency: int = 1,
) -> ResidualModel:
    """Train one regressor per residual channel in worker threads."""
    semaphore = asyncio.Semaphore(max(1, max_concurrency))
    start = time.perf_counter()

    async def fit_one(k: int) -> Regressor:
        async with semaphore:
            channel_cfg = replace(opt_cfg, seed=seed + k)
            t0 = time.perf_counter()
            model = await asyncio.to_thread(fit_channel, dataset.channel(k), method_cfg, channel_cfg)
            elapsed = time.perf_counter() - t0
            report = fit_report(model)
            detail = (
                f" NLML {report.nlml_initial:.3f} -> {report.nlml_final:.3f}"
                if report is not None
                else ""
            )
            print(
                f"  [{method_cfg.method}:{CHANNELS[k]}] trained in {elapsed:.2f}s{detail}",
                file=sys.stderr,
            )
            if isinstance(model, TrainedMSGP):
                for j, flag in sorted(model.flags.items()):
                    print(f"  WARN [{method_cfg.method}:{CHANNELS[k]}] cluster {j}: {flag}", file=sys.stderr)
            return model

    # every channel thread finishes before a failure propagates
    outcomes = await asyncio.gather(*(fit_one(k) for k in channels), return_exceptions=True)
    for outcome in outcomes:
        if isinstance(outcome, BaseException):
            raise outcome
    return ResidualModel(
        method=method_cfg.method,
        config=method_cfg,
        models=tuple(outcomes),
        train_seconds=time.perf_counter() - start,
        meta={"channels": [CHANNELS[k] for k in channels], "seed": seed},
    )
