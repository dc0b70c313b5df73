"""Squared-exponential kernel shared by every regressor in the package."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

JITTER = 1e-8


class KernelError(Exception):
    """Base class for numerical failures in the regression stack."""


class DimensionError(KernelError, ValueError):
    pass


@dataclass(frozen=True)
class Hyperparameters:
    signal_variance: float
    noise_variance: float
    length_scales: np.ndarray

    def __post_init__(self) -> None:
        scales = np.atleast_1d(np.asarray(self.length_scales, dtype=float)).copy()
        if scales.ndim != 1 or scales.size == 0:
            raise ValueError("length_scales must be a non-empty vector")
        scales.setflags(write=False)
        object.__setattr__(self, "length_scales", scales)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        values = [self.signal_variance, self.noise_variance, *scales.tolist()]
        if not all(math.isfinite(v) and v > 0 for v in values):
            raise ValueError(f"Hyperparameters must be finite and positive: {self}")

    @property
    def is_isotropic(self) -> bool:
        return self.length_scales.size == 1

    def scales(self, d: int) -> np.ndarray:
        """Length-scales broadcast to ``d`` input dimensions."""
        if self.is_isotropic:
            return np.full(d, self.length_scales[0])
        if self.length_scales.size != d:
            raise DimensionError(
                f"Hyperparameters carry {self.length_scales.size} length-scales "
                f"but inputs have dimension {d}"
            )
        return self.length_scales

    def to_log(self) -> np.ndarray:
        """Log-space parameter vector ``[log sf2, log sn2, log l_1, ...]``."""
        return np.log(
            np.concatenate(([self.signal_variance, self.noise_variance], self.length_scales))
        )

    @classmethod
    def from_log(cls, theta: np.ndarray) -> "Hyperparameters":
        values = np.exp(np.asarray(theta, dtype=float))
        return cls(
            signal_variance=values[0],
            noise_variance=values[1],
            length_scales=values[2:],
        )

    def replace_noise(self, noise_variance: float) -> "Hyperparameters":
        return Hyperparameters(self.signal_variance, noise_variance, self.length_scales)

    def describe(self) -> str:
        scales = ", ".join(f"{v:.4g}" for v in self.length_scales)
        return (
            f"sf2={self.signal_variance:.4g}, sn2={self.noise_variance:.4g}, "
            f"l=[{scales}]"
        )


@dataclass(frozen=True)
class KernelGradient:
    # ordered like Hyperparameters.to_log(); the noise entry is always zero
    log_hyper: np.ndarray
    x2: np.ndarray


def jitter(h: Hyperparameters) -> float:
    return JITTER * h.signal_variance


def _as_point(x, d: int | None = None) -> np.ndarray:
    point = np.atleast_1d(np.asarray(x, dtype=float))
    if point.ndim != 1:
        raise DimensionError(f"Expected a vector input, got shape {point.shape}")
    if d is not None and point.size != d:
        raise DimensionError(f"Expected dimension {d}, got {point.size}")
    return point


def _as_points(X) -> np.ndarray:
    points = np.asarray(X, dtype=float)
    if points.ndim == 1:
        points = points[np.newaxis, :] if points.size else points.reshape(0, 0)
    if points.ndim != 2:
        raise DimensionError(f"Expected an (n, d) input matrix, got shape {points.shape}")
    return points


def se_kernel(x, x2, h: Hyperparameters) -> float:
    a = _as_point(x)
    b = _as_point(x2, a.size)
    scaled = (a - b) / h.scales(a.size)
    return h.signal_variance * math.exp(-0.5 * float(scaled @ scaled))


def scaled_sqdist(X, X2, h: Hyperparameters) -> np.ndarray:
    """Pairwise ``sum_i (x_i - x2_i)^2 / l_i^2`` between the rows of X and X2."""
    A = _as_points(X)
    B = _as_points(X2)
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    if A.shape[1] != B.shape[1]:
        raise DimensionError(f"Input dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    scales = h.scales(A.shape[1])
    return cdist(A / scales, B / scales, metric="sqeuclidean")


def cov_matrix(X, X2, h: Hyperparameters) -> np.ndarray:
    return h.signal_variance * np.exp(-0.5 * scaled_sqdist(X, X2, h))


def se_kernel_grad(x, x2, h: Hyperparameters) -> KernelGradient:
    a = _as_point(x)
    b = _as_point(x2, a.size)
    scales = h.scales(a.size)
    diff = a - b
    k = se_kernel(a, b, h)
    per_dim = diff**2 / scales**2
    if h.is_isotropic:
        d_scales = np.array([k * per_dim.sum()])
    else:
        d_scales = k * per_dim
    return KernelGradient(
        log_hyper=np.concatenate(([k, 0.0], d_scales)),
        x2=k * diff / scales**2,
    )


def cov_gradients(X, h: Hyperparameters) -> list[np.ndarray]:
    """dK/dlog-hyperparameter for the noisy training covariance of X.

    The noisy covariance is ``K + (sn2 + jitter) I``; the jitter scales with sf2
    so it is part of the signal-variance derivative.
    """
    A = _as_points(X)
    n, d = A.shape
    K = cov_matrix(A, A, h)
    eye = np.eye(n)
    grads = [K + jitter(h) * eye, h.noise_variance * eye]
    scales = h.scales(d)
    if h.is_isotropic:
        grads.append(K * scaled_sqdist(A, A, h))
    else:
        for i in range(d):
            column = A[:, i : i + 1] / scales[i]
            grads.append(K * cdist(column, column, metric="sqeuclidean"))
    return grads


def default_hyperparameters(
    inputs: np.ndarray,
    targets: np.ndarray,
    *,
    ard: bool = True,
    variance_floor: float = 1e-4,
) -> Hyperparameters:
    """Data-driven starting point for marginal-likelihood optimization."""
    inputs = _as_points(inputs)
    targets = np.asarray(targets, dtype=float)
    variance = float(np.var(targets)) if targets.size > 1 else 0.0
    spread = inputs.std(axis=0) if inputs.shape[0] > 1 else np.zeros(inputs.shape[1])
    spread = np.where(spread > 1e-12, spread, 1.0)
    scales = spread if ard else np.array([float(np.mean(spread))])
    return Hyperparameters(
        signal_variance=max(variance, variance_floor),
        noise_variance=max(0.1 * variance, variance_floor),
        length_scales=scales,
    )
