"""Self-describing ``.npz`` archives for trained residual models.

The archive holds a JSON ``meta`` record and named arrays per channel
(``c<k>_<name>``). Cached FITC weights are stored as-is; exact-GP factors are
recomputed from the stored data, which reproduces them bit for bit.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .cluster import LocalModelSpec, Partition
from .gp import Dataset, FitReport, TrainedGP, gp_condition
from .kernel import Hyperparameters
from .lgp import TrainedLGP
from .msgp import TrainedMSGP
from .residual import MethodConfig, ResidualModel
from .spgp import PseudoSet, TrainedSPGP

FORMAT = "msgp-bench-archive"
FORMAT_VERSION = 1


class ArchiveError(Exception):
    pass


def _hyper_array(h: Hyperparameters) -> np.ndarray:
    return np.concatenate(([h.signal_variance, h.noise_variance], h.length_scales))


def _hyper_from(values: np.ndarray) -> Hyperparameters:
    return Hyperparameters(float(values[0]), float(values[1]), values[2:].copy())


def _report_dict(report: FitReport | None) -> dict | None:
    return asdict(report) if report is not None else None


def _report_from(record: dict | None) -> FitReport | None:
    return FitReport(**record) if record is not None else None


def _pack_partition(parts: Partition, arrays: dict, prefix: str) -> None:
    members = [spec.member_indices for spec in parts.models]
    arrays[f"{prefix}members"] = np.concatenate(members)
    arrays[f"{prefix}member_counts"] = np.array([m.size for m in members])
    arrays[f"{prefix}centers"] = parts.centers


def _unpack_partition(arrays, prefix: str, strategy: str, size: int) -> Partition:
    counts = arrays[f"{prefix}member_counts"]
    members = np.split(arrays[f"{prefix}members"], np.cumsum(counts)[:-1])
    centers = arrays[f"{prefix}centers"]
    models = []
    for idx, center in zip(members, centers):
        idx = idx.astype(int)
        idx.setflags(write=False)
        models.append(LocalModelSpec(member_indices=idx, center=center, size=size))
    return Partition(tuple(models), strategy)


def _pack_spgp(model: TrainedSPGP, arrays: dict, prefix: str, with_data: bool = True) -> dict:
    if with_data:
        arrays[f"{prefix}inputs"] = model.data.inputs
        arrays[f"{prefix}targets"] = model.data.targets
    arrays[f"{prefix}hyper"] = _hyper_array(model.hyper)
    arrays[f"{prefix}pseudo"] = model.pseudo.locations
    arrays[f"{prefix}chol_km"] = model.chol_km
    arrays[f"{prefix}chol_qm"] = model.chol_qm
    arrays[f"{prefix}weights"] = model.weights
    arrays[f"{prefix}lam"] = model.lam
    return {"target_mean": model.target_mean, "report": _report_dict(model.report)}


def _unpack_spgp(arrays, prefix: str, record: dict, data: Dataset | None = None) -> TrainedSPGP:
    if data is None:
        data = Dataset(arrays[f"{prefix}inputs"], arrays[f"{prefix}targets"])
    return TrainedSPGP(
        data=data,
        pseudo=PseudoSet(arrays[f"{prefix}pseudo"]),
        hyper=_hyper_from(arrays[f"{prefix}hyper"]),
        chol_km=arrays[f"{prefix}chol_km"],
        chol_qm=arrays[f"{prefix}chol_qm"],
        weights=arrays[f"{prefix}weights"],
        lam=arrays[f"{prefix}lam"],
        target_mean=float(record["target_mean"]),
        report=_report_from(record["report"]),
    )


def _pack_channel(model, arrays: dict, prefix: str) -> dict:
    if isinstance(model, TrainedGP):
        arrays[f"{prefix}inputs"] = model.data.inputs
        arrays[f"{prefix}targets"] = model.data.targets
        arrays[f"{prefix}hyper"] = _hyper_array(model.hyper)
        return {
            "kind": "gp",
            "centered": model.target_mean != 0.0,
            "report": _report_dict(model.report),
        }
    if isinstance(model, TrainedSPGP):
        return {"kind": "spgp", **_pack_spgp(model, arrays, prefix)}
    if isinstance(model, TrainedLGP):
        data = _local_union(model.per_model, model.partition)
        arrays[f"{prefix}inputs"] = data.inputs
        arrays[f"{prefix}targets"] = data.targets
        arrays[f"{prefix}hyper"] = _hyper_array(model.global_hyper)
        _pack_partition(model.partition, arrays, prefix)
        return {
            "kind": "lgp",
            "strategy": model.partition.strategy,
            "size": model.partition.models[0].size,
            "neighbors": model.neighbor_count_N,
            "centered": [gp.target_mean != 0.0 for gp in model.per_model],
            "report": _report_dict(model.report),
        }
    if isinstance(model, TrainedMSGP):
        data = _local_union(model.per_model, model.partition)
        arrays[f"{prefix}inputs"] = data.inputs
        arrays[f"{prefix}targets"] = data.targets
        _pack_partition(model.partition, arrays, prefix)
        clusters = [
            _pack_spgp(local, arrays, f"{prefix}m{j}_", with_data=False)
            for j, local in enumerate(model.per_model)
        ]
        return {
            "kind": "msgp",
            "strategy": model.partition.strategy,
            "size": model.partition.models[0].size,
            "neighbors": model.neighbor_count_N,
            "clusters": clusters,
            "flags": {str(j): flag for j, flag in model.flags.items()},
        }
    raise ArchiveError(f"Cannot archive regressor of type {type(model).__name__}")


def _local_union(per_model, parts: Partition) -> Dataset:
    """Reassemble the parent dataset from the cluster subsets."""
    n = sum(spec.member_indices.size for spec in parts.models)
    d = per_model[0].data.d
    inputs = np.empty((n, d))
    targets = np.empty(n)
    for spec, local in zip(parts.models, per_model):
        inputs[spec.member_indices] = local.data.inputs
        targets[spec.member_indices] = local.data.targets
    return Dataset(inputs, targets)


def _unpack_channel(arrays, prefix: str, record: dict):
    kind = record["kind"]
    if kind == "spgp":
        return _unpack_spgp(arrays, prefix, record)
    data = Dataset(arrays[f"{prefix}inputs"], arrays[f"{prefix}targets"])
    if kind == "gp":
        return gp_condition(
            data,
            _hyper_from(arrays[f"{prefix}hyper"]),
            center_targets=record["centered"],
            report=_report_from(record["report"]),
        )
    parts = _unpack_partition(arrays, prefix, record["strategy"], record["size"])
    if kind == "lgp":
        hyper = _hyper_from(arrays[f"{prefix}hyper"])
        per_model = tuple(
            gp_condition(data.subset(spec.member_indices), hyper, center_targets=centered)
            for spec, centered in zip(parts.models, record["centered"])
        )
        return TrainedLGP(parts, per_model, hyper, record["neighbors"], _report_from(record["report"]))
    if kind == "msgp":
        per_model = tuple(
            _unpack_spgp(arrays, f"{prefix}m{j}_", cluster, data.subset(spec.member_indices))
            for j, (spec, cluster) in enumerate(zip(parts.models, record["clusters"]))
        )
        flags = {int(j): flag for j, flag in record["flags"].items()}
        return TrainedMSGP(parts, per_model, record["neighbors"], flags)
    raise ArchiveError(f"Unknown channel kind '{kind}'")


def save_model(model: ResidualModel, path: str | Path) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    arrays: dict[str, np.ndarray] = {}
    channels = [_pack_channel(m, arrays, f"c{k}_") for k, m in enumerate(model.models)]
    meta = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "method": model.method,
        "config": asdict(model.config),
        "train_seconds": model.train_seconds,
        "meta": model.meta,
        "channels": channels,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}.", suffix=".npz")
    try:
        with os.fdopen(fd, "wb") as f:
            np.savez_compressed(f, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_model(path: str | Path, *, expected_method: str | None = None) -> ResidualModel:
    path = Path(path)
    if not path.exists():
        raise ArchiveError(f"Model archive not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (OSError, ValueError) as e:
        raise ArchiveError(f"Cannot read model archive {path}: {e}") from e
    if "meta" not in arrays:
        raise ArchiveError(f"{path} has no meta record")
    try:
        meta = json.loads(str(arrays.pop("meta")))
    except json.JSONDecodeError as e:
        raise ArchiveError(f"{path} has a malformed meta record: {e}") from e
    if meta.get("format") != FORMAT:
        raise ArchiveError(f"{path} is not a {FORMAT} file")
    if meta.get("version") != FORMAT_VERSION:
        raise ArchiveError(
            f"{path} has archive version {meta.get('version')}, expected {FORMAT_VERSION}"
        )
    if expected_method is not None and meta["method"] != expected_method:
        raise ArchiveError(
            f"{path} holds a '{meta['method']}' model but '{expected_method}' was requested"
        )
    try:
        models = tuple(
            _unpack_channel(arrays, f"c{k}_", record) for k, record in enumerate(meta["channels"])
        )
    except KeyError as e:
        raise ArchiveError(f"{path} is missing array {e}") from e
    return ResidualModel(
        method=meta["method"],
        config=MethodConfig(**meta["config"]),
        models=models,
        train_seconds=meta["train_seconds"],
        meta=meta["meta"],
    )
