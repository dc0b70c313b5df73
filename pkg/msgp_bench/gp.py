"""Exact Gaussian process regression with cached solve products."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .kernel import (
    DimensionError,
    Hyperparameters,
    KernelError,
    cov_gradients,
    cov_matrix,
    default_hyperparameters,
    jitter,
)

_LOG_2PI = math.log(2.0 * math.pi)
LOG_VARIANCE_BOUNDS = (math.log(1e-10), math.log(1e8))
LOG_LENGTH_SCALE_BOUNDS = (math.log(1e-4), math.log(1e5))


class IllConditionedKernelError(KernelError):
    def __init__(self, hyper: Hyperparameters, what: str = "K + sn2 I") -> None:
        self.hyper = hyper
        super().__init__(f"Cholesky factorization of {what} failed at {hyper.describe()}")


class OptimizationFailedError(KernelError):
    def __init__(self, message: str, last_theta: np.ndarray | None) -> None:
        self.last_theta = last_theta
        super().__init__(message)


class FitDeadlineError(TimeoutError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=float)
        targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if inputs.ndim != 2 or inputs.shape[0] < 1 or inputs.shape[1] < 1:
            raise DimensionError(f"Dataset inputs must be (n, d) with n, d >= 1, got {inputs.shape}")
        if targets.shape[0] != inputs.shape[0]:
            raise DimensionError(
                f"Dataset has {inputs.shape[0]} inputs but {targets.shape[0]} targets"
            )
        if not np.all(np.isfinite(targets)):
            raise ValueError("Dataset targets must be finite")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.inputs[indices], self.targets[indices])


@dataclass(frozen=True)
class Prediction:
    mean: float
    variance: float


@dataclass(frozen=True)
class OptimizerConfig:
    gtol: float = 1e-5
    max_iter: int = 200
    restarts: int = 3
    seed: int = 0
    ard: bool = True
    center_targets: bool = True
    variance_floor: float = 1e-4
    optimize_pseudo: bool = True
    restart_spread: float = 0.5
    # time.monotonic() value past which fitting stops with FitDeadlineError
    deadline: float | None = None

    def check_deadline(self) -> None:
        if self.deadline is not None and time.monotonic() >= self.deadline:
            raise FitDeadlineError("Fitting ran past its deadline")


@dataclass(frozen=True)
class FitReport:
    nlml_initial: float
    nlml_final: float
    iterations: int
    converged: bool
    failed_restarts: int = 0
    message: str = ""


@dataclass(frozen=True)
class TrainedGP:
    data: Dataset
    hyper: Hyperparameters
    chol_factor: np.ndarray
    alpha: np.ndarray
    target_mean: float = 0.0
    report: FitReport | None = field(default=None, compare=False)


def hyper_bounds(h: Hyperparameters) -> list[tuple[float, float]]:
    return [LOG_VARIANCE_BOUNDS, LOG_VARIANCE_BOUNDS] + [LOG_LENGTH_SCALE_BOUNDS] * h.length_scales.size


def _noisy_cov(X: np.ndarray, h: Hyperparameters) -> np.ndarray:
    K = cov_matrix(X, X, h)
    K[np.diag_indices_from(K)] += h.noise_variance + jitter(h)
    return K


def _cholesky(A: np.ndarray, h: Hyperparameters, what: str = "K + sn2 I") -> np.ndarray:
    try:
        L = cholesky(A, lower=True, check_finite=False)
    except LinAlgError as e:
        raise IllConditionedKernelError(h, what) from e
    if not np.all(np.isfinite(L)):
        raise IllConditionedKernelError(h, what)
    return L


def center(data: Dataset, enabled: bool) -> tuple[Dataset, float]:
    if not enabled:
        return data, 0.0
    offset = float(np.mean(data.targets))
    return Dataset(data.inputs, data.targets - offset), offset


def gp_nlml(data: Dataset, h: Hyperparameters) -> tuple[float, np.ndarray]:
    """Negative log marginal likelihood and its gradient over log-hyperparameters."""
    X, y = data.inputs, data.targets
    n = data.n
    h.scales(data.d)
    L = _cholesky(_noisy_cov(X, h), h)
    alpha = cho_solve((L, True), y, check_finite=False)
    value = 0.5 * float(y @ alpha) + float(np.log(np.diag(L)).sum()) + 0.5 * n * _LOG_2PI

    # 0.5 * tr((K^-1 - alpha alpha^T) dK) for every log-hyperparameter
    inner = cho_solve((L, True), np.eye(n), check_finite=False) - np.outer(alpha, alpha)
    grad = np.array([0.5 * float(np.einsum("ij,ji->", inner, dK)) for dK in cov_gradients(X, h)])
    return value, grad


def gp_condition(
    data: Dataset,
    h: Hyperparameters,
    *,
    center_targets: bool = False,
    report: FitReport | None = None,
) -> TrainedGP:
    h.scales(data.d)
    centered, offset = center(data, center_targets)
    L = _cholesky(_noisy_cov(centered.inputs, h), h)
    alpha = cho_solve((L, True), centered.targets, check_finite=False)
    return TrainedGP(
        data=data,
        hyper=h,
        chol_factor=L,
        alpha=alpha,
        target_mean=offset,
        report=report,
    )


def minimize_nlml(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
    theta0: np.ndarray,
    bounds: list[tuple[float, float]],
    cfg: OptimizerConfig,
    *,
    perturbed: int | None = None,
) -> tuple[np.ndarray, FitReport]:
    """Quasi-Newton minimization of an NLML objective with random restarts.

    Only the first ``perturbed`` entries of theta are jittered between restarts
    (hyperparameters, not pseudo-input locations).
    """
    rng = np.random.default_rng(cfg.seed)
    perturbed = theta0.size if perturbed is None else perturbed
    lower = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    upper = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    theta0 = np.clip(theta0, lower, upper)

    cfg.check_deadline()
    initial_value, _ = objective(theta0)
    if not math.isfinite(initial_value):
        raise OptimizationFailedError("NLML is not finite at the initial point", theta0)
    if cfg.max_iter <= 0:
        return theta0, FitReport(initial_value, initial_value, 0, False, 0, "optimization disabled")

    best: tuple[float, np.ndarray, int, bool, str] | None = None
    failures = 0
    last_finite = theta0
    for restart in range(max(1, cfg.restarts)):
        start = theta0.copy()
        if restart > 0:
            start[:perturbed] += rng.normal(0.0, cfg.restart_spread, size=perturbed)
            start = np.clip(start, lower, upper)
        tracker = {"theta": start}

        def guarded(theta: np.ndarray) -> tuple[float, np.ndarray]:
            cfg.check_deadline()
            try:
                value, grad = objective(theta)
            except KernelError as e:
                raise OptimizationFailedError(str(e), tracker["theta"]) from e
            if not (math.isfinite(value) and np.all(np.isfinite(grad))):
                raise OptimizationFailedError("NLML became non-finite", tracker["theta"])
            tracker["theta"] = theta.copy()
            return value, grad

        try:
            result = minimize(
                guarded,
                start,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": cfg.max_iter, "gtol": cfg.gtol},
            )
        except OptimizationFailedError as e:
            failures += 1
            if e.last_theta is not None:
                last_finite = e.last_theta
            continue
        if best is None or result.fun < best[0]:
            best = (float(result.fun), result.x, int(result.nit), bool(result.success), str(result.message))

    if best is None:
        raise OptimizationFailedError(
            f"All {max(1, cfg.restarts)} optimizer runs diverged", last_finite
        )
    value, theta, iterations, converged, message = best
    if value > initial_value:
        # restarts can only improve on the supplied starting point
        theta, value, iterations = theta0, initial_value, 0
    return theta, FitReport(initial_value, value, iterations, converged, failures, message)


def gp_fit(
    data: Dataset,
    init: Hyperparameters | None = None,
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    *,
    hyper_subsample_size: int | None = None,
) -> TrainedGP:
    centered, _ = center(data, opt_cfg.center_targets)
    training = centered
    if hyper_subsample_size is not None and hyper_subsample_size < data.n:
        rng = np.random.default_rng(opt_cfg.seed)
        rows = np.sort(rng.choice(data.n, size=hyper_subsample_size, replace=False))
        training = centered.subset(rows)
    if init is None:
        init = default_hyperparameters(
            training.inputs,
            training.targets,
            ard=opt_cfg.ard,
            variance_floor=opt_cfg.variance_floor,
        )

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        return gp_nlml(training, Hyperparameters.from_log(theta))

    theta, report = minimize_nlml(objective, init.to_log(), hyper_bounds(init), opt_cfg)
    return gp_condition(
        data,
        Hyperparameters.from_log(theta),
        center_targets=opt_cfg.center_targets,
        report=report,
    )


def _query(x_star, d: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x_star, dtype=float))
    if x.ndim != 1 or x.size != d:
        raise DimensionError(f"Query must have dimension {d}, got shape {x.shape}")
    return x


def _queries(X_star, d: int) -> np.ndarray:
    X = np.asarray(X_star, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != d:
        raise DimensionError(f"Queries must be (q, {d}), got shape {X.shape}")
    return X


def gp_predict_batch(model: TrainedGP, X_star) -> tuple[np.ndarray, np.ndarray]:
    X = _queries(X_star, model.data.d)
    Ks = cov_matrix(model.data.inputs, X, model.hyper)
    means = Ks.T @ model.alpha + model.target_mean
    v = solve_triangular(model.chol_factor, Ks, lower=True, check_finite=False)
    variances = np.maximum(model.hyper.signal_variance - np.einsum("ij,ij->j", v, v), 0.0)
    return means, variances


def gp_predict(model: TrainedGP, x_star) -> Prediction:
    x = _query(x_star, model.data.d)
    means, variances = gp_predict_batch(model, x[np.newaxis, :])
    return Prediction(mean=float(means[0]), variance=float(variances[0]))


def gp_predict_uncached(model: TrainedGP, x_star) -> Prediction:
    """Prediction without the saved factorization: rebuild and solve per query."""
    x = _query(x_star, model.data.d)
    X, h = model.data.inputs, model.hyper
    L = _cholesky(_noisy_cov(X, h), h)
    alpha = cho_solve((L, True), model.data.targets - model.target_mean, check_finite=False)
    ks = cov_matrix(X, x[np.newaxis, :], h)[:, 0]
    v = solve_triangular(L, ks, lower=True, check_finite=False)
    return Prediction(
        mean=float(ks @ alpha) + model.target_mean,
        variance=max(h.signal_variance - float(v @ v), 0.0),
    )
