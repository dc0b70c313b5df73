from __future__ import annotations

import json
import os
import statistics
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any

from .runner import COMPLEXITY, BenchResult, CellKey, make_cell_key


def _build_json(result: BenchResult) -> dict:
    config = result.config
    output = {
        "benchmark": {
            "name": config.name,
            "timestamp": result.timestamp,
            "total_duration_seconds": result.total_duration_seconds,
            "config": {
                "sizes": list(config.sizes),
                "seed": config.seed,
                "channels": list(config.channels),
                "cached_queries": config.cached_queries,
                "uncached_queries": config.uncached_queries,
                "test_queries": config.test_queries,
                "cell_timeout_s": config.cell_timeout_s,
                "optimizer": asdict(config.optimizer),
                "methods": {name: asdict(cfg) for name, cfg in config.methods.items()},
            },
        },
        "results": [],
        "method_summaries": result.method_summaries,
    }

    for cell in result.cells:
        output["results"].append(
            {
                "method": cell.method,
                "size": cell.size,
                "status": cell.status,
                "error": cell.error,
                "sizes": cell.sizes,
                "train_seconds": cell.train_seconds,
                "cached": cell.cached,
                "uncached": cell.uncached,
                "prediction_nmse": cell.prediction_nmse,
                "flags": cell.flags,
            }
        )
    return output


def load_results(output_path: Path) -> dict[str, Any] | None:
    if not output_path.exists():
        return None

    try:
        with open(output_path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"Output file is not valid JSON: {output_path} ({e})") from e


def _row_key(row: dict[str, Any]) -> CellKey | None:
    method = row.get("method")
    size = row.get("size")
    if not isinstance(method, str) or not method or isinstance(size, bool) or not isinstance(size, int):
        return None
    return make_cell_key(method=method, size=size)


def _is_completed_row(row: dict[str, Any]) -> bool:
    if row.get("status") != "ok":
        return False
    cached = row.get("cached")
    return isinstance(cached, dict) and cached.get("latency_ms_median") is not None


def completed_cell_keys(
    data: dict[str, Any],
    *,
    methods: set[str] | None = None,
) -> set[CellKey]:
    """Cells of a previous report that need not be run again.

    Skipped (timed out) and failed cells are retried.
    """
    keys: set[CellKey] = set()
    for row in data.get("results", []):
        key = _row_key(row)
        if not key:
            continue
        if methods and key[0] not in methods:
            continue
        if not _is_completed_row(row):
            continue
        keys.add(key)
    return keys


def _recompute_method_summaries(data: dict[str, Any]) -> dict[str, dict[str, Any]]:
    rows_by_method: dict[str, list[dict[str, Any]]] = {}
    for row in data.get("results", []):
        if _row_key(row) is None:
            continue
        rows_by_method.setdefault(row["method"], []).append(row)

    summaries: dict[str, dict[str, Any]] = {}
    for method, rows in rows_by_method.items():
        ok = sorted((r for r in rows if r.get("status") == "ok"), key=lambda r: r["size"])
        summaries[method] = {
            "complexity": COMPLEXITY.get(method, {}),
            "sizes_completed": [r["size"] for r in ok],
            "cells_skipped": sum(1 for r in rows if r.get("status") == "skipped"),
            "cells_failed": sum(1 for r in rows if r.get("status") == "failed"),
            "cached_median_ms": {
                str(r["size"]): (r.get("cached") or {}).get("latency_ms_median") for r in ok
            },
            "uncached_median_ms": {
                str(r["size"]): (r.get("uncached") or {}).get("latency_ms_median") for r in ok
            },
            "train_seconds": {str(r["size"]): round(float(r.get("train_seconds", 0.0)), 3) for r in ok},
        }
    return summaries


def _merge_existing_results(new_data: dict[str, Any], existing_data: dict[str, Any]) -> None:
    merged_rows: dict[CellKey, dict[str, Any]] = {}
    passthrough_rows: list[dict[str, Any]] = []

    for rows in (existing_data.get("results", []), new_data.get("results", [])):
        for row in rows:
            key = _row_key(row)
            if key is None:
                passthrough_rows.append(row)
                continue
            merged_rows[key] = row

    new_data["results"] = passthrough_rows + sorted(
        merged_rows.values(), key=lambda r: (r["size"], r["method"])
    )

    sizes = set(new_data["benchmark"]["config"].get("sizes", []))
    sizes.update(existing_data.get("benchmark", {}).get("config", {}).get("sizes", []))
    new_data["benchmark"]["config"]["sizes"] = sorted(sizes)

    new_data["method_summaries"] = _recompute_method_summaries(new_data)


def write_results_data(data: dict[str, Any], output_path: Path) -> None:
    output_path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = output_path.with_suffix(f"{output_path.suffix}.tmp")
    with open(temp_path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
        f.flush()
        os.fsync(f.fileno())
    os.replace(temp_path, output_path)
    print(f"\nResults written to {output_path}", file=sys.stderr)


def write_results(
    result: BenchResult,
    output_path: Path,
    existing_data: dict[str, Any] | None = None,
) -> dict[str, Any]:
    data = _build_json(result)
    if existing_data:
        _merge_existing_results(data, existing_data)
    write_results_data(data, output_path)
    return data


def _fmt_ms(value: float | None) -> str:
    if value is None:
        return "-"
    if value < 1.0:
        return f"{value:.3f}"
    return f"{value:.1f}"


def _mean_nmse(row: dict[str, Any]) -> float | None:
    values = [v for v in (row.get("prediction_nmse") or {}).values() if v is not None]
    return statistics.mean(values) if values else None


def print_summary(data: dict[str, Any]) -> None:
    """Latency by method and training size, then the complexity annotation."""
    rows = [r for r in data.get("results", []) if _row_key(r) is not None]
    sizes = sorted({r["size"] for r in rows})
    methods = [m for m in COMPLEXITY if any(r["method"] == m for r in rows)]
    by_key = {(r["method"], r["size"]): r for r in rows}

    print("\n=== Cached per-query latency, median ms ===", file=sys.stderr)
    header = f"{'Method':<8}" + "".join(f" {'n=' + str(s):>11}" for s in sizes)
    print(header, file=sys.stderr)
    print("-" * len(header), file=sys.stderr)
    for method in methods:
        cells = []
        for size in sizes:
            row = by_key.get((method, size))
            if row is None:
                cells.append("-")
            elif row.get("status") != "ok":
                cells.append(str(row.get("status")))
            else:
                cells.append(_fmt_ms((row.get("cached") or {}).get("latency_ms_median")))
        print(f"{method:<8}" + "".join(f" {c:>11}" for c in cells), file=sys.stderr)

    print("\n=== Per-cell detail ===", file=sys.stderr)
    header = (
        f"{'Method':<8} {'n':>7} {'Train(s)':>9} {'Cached':>9} {'Uncached':>9}"
        f" {'NMSE':>9} {'Flags':>6}"
    )
    print(header, file=sys.stderr)
    print("-" * len(header), file=sys.stderr)
    for method in methods:
        for size in sizes:
            row = by_key.get((method, size))
            if row is None or row.get("status") != "ok":
                continue
            nmse = _mean_nmse(row)
            print(
                f"{method:<8} {size:>7} {float(row.get('train_seconds', 0.0)):>9.2f}"
                f" {_fmt_ms((row.get('cached') or {}).get('latency_ms_median')):>9}"
                f" {_fmt_ms((row.get('uncached') or {}).get('latency_ms_median')):>9}"
                f" {(f'{nmse:.4f}' if nmse is not None else '-'):>9}"
                f" {len(row.get('flags') or []):>6}",
                file=sys.stderr,
            )

    print("\n=== Complexity ===", file=sys.stderr)
    header = f"{'Method':<8} {'Training':>12} {'Mean':>12} {'Mean cached':>12}"
    print(header, file=sys.stderr)
    print("-" * len(header), file=sys.stderr)
    for method in methods:
        c = COMPLEXITY[method]
        print(
            f"{method:<8} {c['training']:>12} {c['mean']:>12} {c['mean_cached']:>12}",
            file=sys.stderr,
        )

    duration = data.get("benchmark", {}).get("total_duration_seconds")
    if duration is not None:
        print(f"\nTotal duration: {float(duration):.1f}s", file=sys.stderr)
