"""Partitioning into local models and Gaussian-kernel neighbour ranking."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2

from .gp import Dataset
from .kernel import DimensionError

STRATEGIES = ("random", "kmeans")
KMEANS_MAX_ITER = 100
UNDERFLOW_FLOOR = 1e-300


@dataclass(frozen=True)
class LocalModelSpec:
    member_indices: np.ndarray
    center: np.ndarray
    size: int


@dataclass(frozen=True)
class Partition:
    models: tuple[LocalModelSpec, ...]
    strategy: str

    @property
    def M(self) -> int:
        return len(self.models)

    @property
    def centers(self) -> np.ndarray:
        return np.vstack([model.center for model in self.models])


@dataclass(frozen=True)
class NeighborSelection:
    indices: np.ndarray
    log_weights: np.ndarray
    clamped: bool = False

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


@dataclass(frozen=True)
class WeightedPrediction:
    mean: float
    # (model index, local mean, weight) in ranking order
    per_model_means: tuple[tuple[int, float, float], ...]
    variance_heuristic: float
    fallback: bool = False
    clamped: bool = False


def _spec(data: Dataset, members: np.ndarray, p: int) -> LocalModelSpec:
    members = np.sort(np.asarray(members, dtype=int))
    members.setflags(write=False)
    return LocalModelSpec(
        member_indices=members,
        center=data.inputs[members].mean(axis=0),
        size=p,
    )


def partition(
    data: Dataset, target_size_p: int, strategy: str = "random", seed: int = 0
) -> Partition:
    """Split ``data`` into ceil(n / p) disjoint local models.

    ``random`` shuffles the rows and deals them into near-equal chunks; ``kmeans``
    runs Lloyd iterations on the inputs and keeps the non-empty clusters.
    """
    if target_size_p < 1:
        raise ValueError(f"Local model size must be >= 1, got {target_size_p}")
    if strategy not in STRATEGIES:
        raise ValueError(f"Unknown partition strategy '{strategy}' (expected one of {STRATEGIES})")
    n = data.n
    p = min(target_size_p, n)
    M = math.ceil(n / p)
    if M == 1:
        return Partition((_spec(data, np.arange(n), n),), strategy)

    rng = np.random.default_rng(seed)
    if strategy == "random":
        chunks = np.array_split(rng.permutation(n), M)
    else:
        _, labels = kmeans2(data.inputs, M, iter=KMEANS_MAX_ITER, minit="++", seed=rng)
        chunks = [np.flatnonzero(labels == j) for j in range(M)]
        chunks = [chunk for chunk in chunks if chunk.size]
    return Partition(tuple(_spec(data, chunk, p) for chunk in chunks), strategy)


def model_distance(x_star, model_center, length_scale) -> float:
    x = np.atleast_1d(np.asarray(x_star, dtype=float))
    c = np.atleast_1d(np.asarray(model_center, dtype=float))
    if x.shape != c.shape:
        raise DimensionError(f"Query shape {x.shape} does not match center shape {c.shape}")
    scales = np.broadcast_to(np.asarray(length_scale, dtype=float), x.shape)
    if np.any(scales <= 0):
        raise ValueError("length_scale must be positive")
    return math.exp(-0.5 * float(np.sum((x - c) ** 2 / scales**2)))


def log_model_distances(X_star, centers: np.ndarray, length_scales: Sequence) -> np.ndarray:
    """Log of the kernel weight of every model for every query, shape (q, M)."""
    X = np.atleast_2d(np.asarray(X_star, dtype=float))
    if X.shape[1] != centers.shape[1]:
        raise DimensionError(f"Queries have dimension {X.shape[1]}, centers {centers.shape[1]}")
    scales = np.vstack(
        [np.broadcast_to(np.asarray(s, dtype=float), centers.shape[1]) for s in length_scales]
    )
    scaled = (X[:, np.newaxis, :] - centers[np.newaxis, :, :]) / scales[np.newaxis, :, :]
    return -0.5 * np.einsum("qmd,qmd->qm", scaled, scaled)


def select_neighbors(log_weights: np.ndarray, N: int) -> NeighborSelection:
    if N < 1:
        raise ValueError(f"Neighbour count must be >= 1, got {N}")
    M = log_weights.size
    # stable sort on the negated weights keeps the lower model index first on ties
    order = np.argsort(-log_weights, kind="stable")[: min(N, M)]
    return NeighborSelection(order, log_weights[order], clamped=N > M)


def nearest_models(
    x_star, partition: Partition, per_model_length_scales: Sequence, N: int
) -> NeighborSelection:
    if len(per_model_length_scales) != partition.M:
        raise ValueError(
            f"Expected {partition.M} length-scale entries, got {len(per_model_length_scales)}"
        )
    log_weights = log_model_distances(x_star, partition.centers, per_model_length_scales)[0]
    return select_neighbors(log_weights, N)


def weighted_average(
    selection: NeighborSelection, means: Sequence[float], variances: Sequence[float]
) -> WeightedPrediction:
    """Kernel-weighted average of the selected local predictions.

    ``means`` and ``variances`` are aligned with ``selection.indices``. When every
    weight underflows, the nearest model is used alone with unit weight.
    """
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    weights = selection.weights
    total = float(weights.sum())
    if total < UNDERFLOW_FLOOR:
        index = int(selection.indices[0])
        return WeightedPrediction(
            mean=float(means[0]),
            per_model_means=((index, float(means[0]), 1.0),),
            variance_heuristic=float(variances[0]),
            fallback=True,
            clamped=selection.clamped,
        )
    return WeightedPrediction(
        mean=float(weights @ means) / total,
        per_model_means=tuple(
            (int(j), float(mu), float(w)) for j, mu, w in zip(selection.indices, means, weights)
        ),
        variance_heuristic=float(weights @ variances) / total,
        clamped=selection.clamped,
    )


LocalBatch = Callable[[int, np.ndarray], tuple[np.ndarray, np.ndarray]]


def ensemble_predict(
    X_star: np.ndarray,
    partition: Partition,
    length_scales: Sequence,
    N: int,
    local_batch: LocalBatch,
) -> list[WeightedPrediction]:
    """Weighted predictions for a batch of queries.

    Each local model is queried once, for exactly the rows that selected it;
    ``local_batch(j, rows)`` returns the means and variances of model ``j``.
    """
    log_weights = log_model_distances(X_star, partition.centers, length_scales)
    selections = [select_neighbors(row, N) for row in log_weights]
    q = X_star.shape[0]
    means = np.zeros((q, partition.M))
    variances = np.zeros((q, partition.M))
    wanted: list[list[int]] = [[] for _ in range(partition.M)]
    for i, selection in enumerate(selections):
        for j in selection.indices:
            wanted[j].append(i)
    for j, rows in enumerate(wanted):
        if rows:
            means[rows, j], variances[rows, j] = local_batch(j, X_star[rows])
    return [
        weighted_average(sel, means[i, sel.indices], variances[i, sel.indices])
        for i, sel in enumerate(selections)
    ]
