"""Local GP baseline: exact GPs per cluster sharing one global hyperparameter set."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cluster import Partition, WeightedPrediction, ensemble_predict, partition
from .gp import (
    Dataset,
    FitReport,
    OptimizerConfig,
    TrainedGP,
    _queries,
    _query,
    gp_condition,
    gp_fit,
    gp_predict_batch,
    gp_predict_uncached,
)
from .kernel import Hyperparameters

DEFAULT_HYPER_SUBSAMPLE = 1000
DEFAULT_NEIGHBORS = 5


@dataclass(frozen=True)
class TrainedLGP:
    partition: Partition
    per_model: tuple[TrainedGP, ...]
    global_hyper: Hyperparameters
    neighbor_count_N: int = DEFAULT_NEIGHBORS
    report: FitReport | None = field(default=None, compare=False)

    @property
    def d(self) -> int:
        return self.per_model[0].data.d

    def length_scales(self) -> list[np.ndarray]:
        return [self.global_hyper.scales(self.d)] * self.partition.M


def lgp_fit(
    data: Dataset,
    p: int,
    strategy: str = "random",
    seed: int = 0,
    hyper_subsample_size: int | None = None,
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    neighbors: int = DEFAULT_NEIGHBORS,
) -> TrainedLGP:
    """Fit the global hyperparameters on a subsample, then condition every cluster."""
    size = min(data.n, hyper_subsample_size or DEFAULT_HYPER_SUBSAMPLE)
    training = data
    if size < data.n:
        rng = np.random.default_rng(seed)
        training = data.subset(np.sort(rng.choice(data.n, size=size, replace=False)))
    global_fit = gp_fit(training, opt_cfg=opt_cfg)
    hyper = global_fit.hyper

    parts = partition(data, p, strategy, seed)
    per_model = tuple(
        gp_condition(
            data.subset(spec.member_indices),
            hyper,
            center_targets=opt_cfg.center_targets,
        )
        for spec in parts.models
    )
    return TrainedLGP(
        partition=parts,
        per_model=per_model,
        global_hyper=hyper,
        neighbor_count_N=min(neighbors, parts.M),
        report=global_fit.report,
    )


def lgp_batch_predict(model: TrainedLGP, X_star, N: int | None = None) -> list[WeightedPrediction]:
    X = _queries(X_star, model.d)
    return ensemble_predict(
        X,
        model.partition,
        model.length_scales(),
        N or model.neighbor_count_N,
        lambda j, rows: gp_predict_batch(model.per_model[j], rows),
    )


def lgp_predict(model: TrainedLGP, x_star, N: int | None = None) -> WeightedPrediction:
    x = _query(x_star, model.d)
    return lgp_batch_predict(model, x[np.newaxis, :], N)[0]


def lgp_predict_uncached(model: TrainedLGP, x_star, N: int | None = None) -> WeightedPrediction:
    x = _query(x_star, model.d)

    def rebuild(j: int, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        predictions = [gp_predict_uncached(model.per_model[j], row) for row in rows]
        return (
            np.array([pr.mean for pr in predictions]),
            np.array([pr.variance for pr in predictions]),
        )

    return ensemble_predict(
        x[np.newaxis, :],
        model.partition,
        model.length_scales(),
        N or model.neighbor_count_N,
        rebuild,
    )[0]
