"""Sparse pseudo-input GP (FITC) with jointly optimized pseudo-inputs.

The predictive mean keeps the K_mn factor of the FITC derivation:

    mean(x*) = k_m*^T Q_m^-1 K_mn (Lambda_n + sn2 I)^-1 y
    Q_m      = K_m + K_mn (Lambda_n + sn2 I)^-1 K_nm

Everything is computed from the low-rank-plus-diagonal structure, so no n x n
matrix is ever formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .gp import (
    Dataset,
    FitReport,
    OptimizerConfig,
    Prediction,
    _cholesky,
    _queries,
    _query,
    center,
    hyper_bounds,
    minimize_nlml,
)
from .kernel import (
    DimensionError,
    Hyperparameters,
    KernelError,
    cov_matrix,
    default_hyperparameters,
    jitter,
)

_LOG_2PI = math.log(2.0 * math.pi)
INIT_STRATEGIES = ("random", "kmeans")


class DegeneratePseudoSetError(KernelError):
    pass


@dataclass(frozen=True)
class PseudoSet:
    locations: np.ndarray

    def __post_init__(self) -> None:
        locations = np.asarray(self.locations, dtype=float)
        if locations.ndim != 2 or locations.shape[0] < 1:
            raise DimensionError(f"Pseudo-inputs must be (m, d) with m >= 1, got {locations.shape}")
        object.__setattr__(self, "locations", locations)

    @property
    def m(self) -> int:
        return self.locations.shape[0]


class NLMLResult(NamedTuple):
    value: float
    grad_hyper: np.ndarray
    grad_pseudo: np.ndarray


@dataclass(frozen=True)
class TrainedSPGP:
    data: Dataset
    pseudo: PseudoSet
    hyper: Hyperparameters
    chol_km: np.ndarray
    chol_qm: np.ndarray
    weights: np.ndarray
    lam: np.ndarray
    target_mean: float = 0.0
    report: FitReport | None = field(default=None, compare=False)


@dataclass(frozen=True)
class _Fitc:
    Kmm: np.ndarray
    Kmn: np.ndarray
    chol_km: np.ndarray
    V: np.ndarray
    lam: np.ndarray
    active: np.ndarray
    gamma: np.ndarray
    chol_a: np.ndarray


def _fitc(X: np.ndarray, U: np.ndarray, h: Hyperparameters) -> _Fitc:
    if U.shape[1] != X.shape[1]:
        raise DimensionError(f"Pseudo-inputs have dimension {U.shape[1]}, data {X.shape[1]}")
    h.scales(X.shape[1])
    m = U.shape[0]
    Kmm = cov_matrix(U, U, h)
    try:
        chol_km = cholesky(Kmm + jitter(h) * np.eye(m), lower=True, check_finite=False)
    except LinAlgError as e:
        raise DegeneratePseudoSetError(
            f"K_m is not factorizable for {m} pseudo-inputs at {h.describe()}"
        ) from e
    Kmn = cov_matrix(U, X, h)
    V = solve_triangular(chol_km, Kmn, lower=True, check_finite=False)
    lam_raw = h.signal_variance - np.einsum("ij,ij->j", V, V)
    active = lam_raw > 0.0
    lam = np.where(active, lam_raw, 0.0)
    gamma = lam + h.noise_variance
    A = np.eye(m) + (V / gamma) @ V.T
    chol_a = _cholesky(A, h, "I + V Gamma^-1 V^T")
    return _Fitc(Kmm, Kmn, chol_km, V, lam, active, gamma, chol_a)


def spgp_nlml(data: Dataset, pseudo: PseudoSet, h: Hyperparameters) -> NLMLResult:
    X, y = data.inputs, data.targets
    U = pseudo.locations
    n = data.n
    f = _fitc(X, U, h)
    V, gamma, La, Lm = f.V, f.gamma, f.chol_a, f.chol_km

    Vg = V / gamma
    yg = y / gamma
    c = solve_triangular(La, Vg @ y, lower=True, check_finite=False)
    value = (
        0.5 * (float(y @ yg) - float(c @ c))
        + 0.5 * float(np.log(gamma).sum())
        + float(np.log(np.diag(La)).sum())
        + 0.5 * n * _LOG_2PI
    )

    # W = C^-1 - beta beta^T is only ever touched through P W and diag(W)
    beta = yg - (V.T @ solve_triangular(La, c, lower=True, trans="T", check_finite=False)) / gamma
    S = solve_triangular(La, Vg, lower=True, check_finite=False)
    w = 1.0 / gamma - np.einsum("ij,ij->j", S, S) - beta**2
    P = solve_triangular(Lm, V, lower=True, trans="T", check_finite=False)
    PG = P / gamma
    AinvVg = cho_solve((La, True), Vg, check_finite=False)
    PW = PG - (PG @ V.T) @ AinvVg - np.outer(P @ beta, beta)
    masked = w * f.active
    B1 = PW - P * masked
    B2 = B1 @ P.T
    B2 = 0.5 * (B2 + B2.T)

    sf2, sn2 = h.signal_variance, h.noise_variance
    Kmm_j = f.Kmm + jitter(h) * np.eye(U.shape[0])
    T1 = B1 * f.Kmn
    T2 = B2 * f.Kmm
    grad = [
        0.5 * (2.0 * T1.sum() - float(np.sum(B2 * Kmm_j)) + float(masked.sum()) * sf2),
        0.5 * float(w.sum()) * sn2,
    ]
    scales = h.scales(data.d)
    per_dim = []
    for k in range(data.d):
        D_mn = (U[:, k : k + 1] - X[:, k][np.newaxis, :]) ** 2 / scales[k] ** 2
        D_mm = (U[:, k : k + 1] - U[:, k][np.newaxis, :]) ** 2 / scales[k] ** 2
        per_dim.append(0.5 * (2.0 * float(np.sum(T1 * D_mn)) - float(np.sum(T2 * D_mm))))
    if h.is_isotropic:
        grad.append(sum(per_dim))
    else:
        grad.extend(per_dim)

    inv_l2 = 1.0 / scales**2
    G1 = (T1 @ X - U * T1.sum(axis=1)[:, np.newaxis]) * inv_l2
    G2 = 2.0 * (T2 @ U - U * T2.sum(axis=1)[:, np.newaxis]) * inv_l2
    return NLMLResult(value, np.array(grad), G1 - 0.5 * G2)


def spgp_condition(
    data: Dataset,
    pseudo: PseudoSet,
    h: Hyperparameters,
    *,
    center_targets: bool = False,
    report: FitReport | None = None,
) -> TrainedSPGP:
    centered, offset = center(data, center_targets)
    f = _fitc(centered.inputs, pseudo.locations, h)
    inner = cho_solve((f.chol_a, True), (f.V / f.gamma) @ centered.targets, check_finite=False)
    weights = solve_triangular(f.chol_km, inner, lower=True, trans="T", check_finite=False)
    return TrainedSPGP(
        data=data,
        pseudo=pseudo,
        hyper=h,
        chol_km=f.chol_km,
        chol_qm=f.chol_km @ f.chol_a,
        weights=weights,
        lam=f.lam,
        target_mean=offset,
        report=report,
    )


def initial_pseudo_set(
    data: Dataset, m: int, init_strategy: str = "random", seed: int = 0
) -> PseudoSet:
    if not 1 <= m <= data.n:
        raise ValueError(f"Pseudo-input count must lie in [1, {data.n}], got {m}")
    rng = np.random.default_rng(seed)
    if init_strategy == "random":
        rows = np.sort(rng.choice(data.n, size=m, replace=False))
        return PseudoSet(data.inputs[rows].copy())
    if init_strategy == "kmeans":
        centroids, _ = kmeans2(data.inputs, m, iter=100, minit="++", seed=rng)
        return PseudoSet(centroids)
    raise ValueError(f"Unknown pseudo-input init strategy '{init_strategy}'")


def spgp_fit(
    data: Dataset,
    m: int,
    init: Hyperparameters | None = None,
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    init_strategy: str = "random",
) -> TrainedSPGP:
    pseudo = initial_pseudo_set(data, m, init_strategy, opt_cfg.seed)
    centered, _ = center(data, opt_cfg.center_targets)
    if init is None:
        init = default_hyperparameters(
            centered.inputs,
            centered.targets,
            ard=opt_cfg.ard,
            variance_floor=opt_cfg.variance_floor,
        )
    n_hyper = init.to_log().size
    shape = pseudo.locations.shape

    if opt_cfg.optimize_pseudo:
        theta0 = np.concatenate((init.to_log(), pseudo.locations.ravel()))
        bounds = hyper_bounds(init) + [(None, None)] * pseudo.locations.size

        def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
            result = spgp_nlml(
                centered,
                PseudoSet(theta[n_hyper:].reshape(shape)),
                Hyperparameters.from_log(theta[:n_hyper]),
            )
            return result.value, np.concatenate((result.grad_hyper, result.grad_pseudo.ravel()))

    else:
        theta0 = init.to_log()
        bounds = hyper_bounds(init)

        def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
            result = spgp_nlml(centered, pseudo, Hyperparameters.from_log(theta))
            return result.value, result.grad_hyper

    theta, report = minimize_nlml(objective, theta0, bounds, opt_cfg, perturbed=n_hyper)
    if opt_cfg.optimize_pseudo:
        pseudo = PseudoSet(theta[n_hyper:].reshape(shape))
    return spgp_condition(
        data,
        pseudo,
        Hyperparameters.from_log(theta[:n_hyper]),
        center_targets=opt_cfg.center_targets,
        report=report,
    )


def spgp_predict_batch(model: TrainedSPGP, X_star) -> tuple[np.ndarray, np.ndarray]:
    X = _queries(X_star, model.data.d)
    h = model.hyper
    Ks = cov_matrix(model.pseudo.locations, X, h)
    means = Ks.T @ model.weights + model.target_mean
    a = solve_triangular(model.chol_km, Ks, lower=True, check_finite=False)
    b = solve_triangular(model.chol_qm, Ks, lower=True, check_finite=False)
    variances = (
        h.signal_variance
        - np.einsum("ij,ij->j", a, a)
        + np.einsum("ij,ij->j", b, b)
        + h.noise_variance
    )
    return means, np.maximum(variances, h.noise_variance)


def spgp_predict(model: TrainedSPGP, x_star) -> Prediction:
    x = _query(x_star, model.data.d)
    means, variances = spgp_predict_batch(model, x[np.newaxis, :])
    return Prediction(mean=float(means[0]), variance=float(variances[0]))


def spgp_predict_uncached(model: TrainedSPGP, x_star) -> Prediction:
    """Prediction that rebuilds the O(n m^2) FITC solve for every query."""
    x = _query(x_star, model.data.d)
    shifted = Dataset(model.data.inputs, model.data.targets - model.target_mean)
    rebuilt = spgp_condition(shifted, model.pseudo, model.hyper)
    prediction = spgp_predict(rebuilt, x)
    return Prediction(prediction.mean + model.target_mean, prediction.variance)
