"""Mixture of sparse GPs: one FITC model per cluster with its own hyperparameters.

Every cluster is trained independently (hyperparameters and pseudo-inputs), and
a query is answered by the kernel-weighted average of its N nearest clusters.
The cached per-cluster weight vectors make the mean O(N u) per query.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cluster import Partition, WeightedPrediction, ensemble_predict, partition
from .gp import Dataset, OptimizerConfig, _queries, _query, center
from .kernel import KernelError, default_hyperparameters
from .spgp import (
    TrainedSPGP,
    initial_pseudo_set,
    spgp_condition,
    spgp_fit,
    spgp_predict_batch,
    spgp_predict_uncached,
)

MSGPPrediction = WeightedPrediction

DEFAULT_NEIGHBORS = 5
FLAG_PRIOR_DEFAULT = "prior-default"
FLAG_OPTIMIZATION_FAILED = "optimization-failed"


@dataclass(frozen=True)
class TrainedMSGP:
    partition: Partition
    per_model: tuple[TrainedSPGP, ...]
    neighbor_count_N: int = DEFAULT_NEIGHBORS
    # cluster index -> note for clusters that did not get optimized hyperparameters
    flags: dict[int, str] = field(default_factory=dict, compare=False)

    @property
    def d(self) -> int:
        return self.per_model[0].data.d

    def length_scales(self) -> list[np.ndarray]:
        return [model.hyper.scales(self.d) for model in self.per_model]


def _fallback_cluster(
    local: Dataset, u: int, opt_cfg: OptimizerConfig, init_strategy: str
) -> TrainedSPGP:
    centered, _ = center(local, opt_cfg.center_targets)
    init = default_hyperparameters(
        centered.inputs,
        centered.targets,
        ard=opt_cfg.ard,
        variance_floor=opt_cfg.variance_floor,
    )
    pseudo = initial_pseudo_set(local, min(u, local.n), init_strategy, opt_cfg.seed)
    return spgp_condition(local, pseudo, init, center_targets=opt_cfg.center_targets)


def _fit_cluster(
    local: Dataset, u: int, opt_cfg: OptimizerConfig, init_strategy: str
) -> tuple[TrainedSPGP, str | None]:
    if local.n < 2:
        return _fallback_cluster(local, u, opt_cfg, init_strategy), FLAG_PRIOR_DEFAULT
    try:
        return spgp_fit(local, min(u, local.n), opt_cfg=opt_cfg, init_strategy=init_strategy), None
    except KernelError:
        return _fallback_cluster(local, u, opt_cfg, init_strategy), FLAG_OPTIMIZATION_FAILED


def msgp_fit(
    data: Dataset,
    p: int,
    u: int,
    strategy: str = "random",
    seed: int = 0,
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    neighbors: int = DEFAULT_NEIGHBORS,
    init_strategy: str = "random",
) -> TrainedMSGP:
    if not 1 <= u <= p:
        raise ValueError(f"Pseudo-input count per cluster must lie in [1, p={p}], got {u}")
    parts = partition(data, p, strategy, seed)
    per_model: list[TrainedSPGP] = []
    flags: dict[int, str] = {}
    for j, spec in enumerate(parts.models):
        opt_cfg.check_deadline()
        local_cfg = replace(opt_cfg, seed=seed + j)
        model, flag = _fit_cluster(data.subset(spec.member_indices), u, local_cfg, init_strategy)
        per_model.append(model)
        if flag is not None:
            flags[j] = flag
    return TrainedMSGP(
        partition=parts,
        per_model=tuple(per_model),
        neighbor_count_N=min(neighbors, parts.M),
        flags=flags,
    )


def msgp_batch_predict(model: TrainedMSGP, X_star, N: int | None = None) -> list[MSGPPrediction]:
    X = _queries(X_star, model.d)
    return ensemble_predict(
        X,
        model.partition,
        model.length_scales(),
        N or model.neighbor_count_N,
        lambda j, rows: spgp_predict_batch(model.per_model[j], rows),
    )


def msgp_predict(model: TrainedMSGP, x_star, N: int | None = None) -> MSGPPrediction:
    x = _query(x_star, model.d)
    return msgp_batch_predict(model, x[np.newaxis, :], N)[0]


def msgp_predict_uncached(model: TrainedMSGP, x_star, N: int | None = None) -> MSGPPrediction:
    x = _query(x_star, model.d)

    def rebuild(j: int, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        predictions = [spgp_predict_uncached(model.per_model[j], row) for row in rows]
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
