from __future__ import annotations

import argparse
import asyncio
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from dotenv import load_dotenv

from .archive import ArchiveError, load_model, save_model
from .config import (
    BenchConfig,
    ConfigError,
    concurrency_override,
    load_bench_config,
    load_scenario,
)
from .datasets import TableError, read_dataset, write_dataset, write_flight_log
from .gp import OptimizerConfig
from .kernel import KernelError
from .metrics import latency_stats, prediction_nmse, tracking_nmse
from .quadsim import ContractError, DegenerateFlatnessError, SimulationDivergedError
from .residual import CHANNELS, METHODS, MethodConfig, fit_residual_model
from .results import (
    completed_cell_keys,
    load_results,
    print_summary,
    write_results,
    write_results_data,
)
from .runner import generate_dataset, run_bench, run_closed_loop

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_DIVERGED = 4


def _sizes(value: str) -> list[int]:
    try:
        sizes = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from None
    if not sizes or any(s <= 0 for s in sizes):
        raise argparse.ArgumentTypeError("sizes must be positive")
    if sizes != sorted(sizes):
        raise argparse.ArgumentTypeError(f"sizes must be ascending, got {value}")
    return sizes


def _log_path(out: Path) -> Path:
    return out.with_name(f"{out.stem}_log{out.suffix or '.csv'}")


def _write_partial_log(e: SimulationDivergedError, out: Path) -> None:
    if e.log is not None and out is not None:
        write_flight_log(out, e.log)
        print(f"Partial flight log written to {out}", file=sys.stderr)
    last = float(e.log.t[-1]) if e.log is not None and len(e.log) else None
    if last is not None:
        print(f"Last good sample at t={last:.4f}s", file=sys.stderr)


def cmd_generate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    out = Path(args.out or f"data/{scenario.name}.csv")
    print(
        f"Scenario OK: {scenario.name}, t=[{scenario.t0:g}, {scenario.tf:g}]s, "
        f"control_dt={scenario.control_dt:g}s, seed={scenario.seed}",
        file=sys.stderr,
    )
    if args.dry_run:
        return 0

    try:
        log, dataset = generate_dataset(scenario)
    except SimulationDivergedError as e:
        print(f"Simulation error: {e}", file=sys.stderr)
        _write_partial_log(e, _log_path(out))
        return EXIT_DIVERGED

    write_dataset(out, dataset)
    write_flight_log(_log_path(out), log)
    print(f"Wrote {dataset.n} samples to {out} (flight log {_log_path(out)})", file=sys.stderr)
    return 0


def _method_settings(args: argparse.Namespace) -> tuple[MethodConfig, OptimizerConfig, int]:
    if args.config:
        config = load_bench_config(args.config)
        method_cfg = config.methods.get(args.method, MethodConfig(args.method))
        return method_cfg, config.optimizer, config.max_concurrency
    return MethodConfig(args.method), OptimizerConfig(), concurrency_override(1)


def cmd_train(args: argparse.Namespace) -> int:
    method_cfg, opt_cfg, workers = _method_settings(args)
    if args.seed is not None:
        opt_cfg = replace(opt_cfg, seed=args.seed)
    dataset = read_dataset(args.data)
    sizes = ", ".join(f"{k}={v}" for k, v in method_cfg.sizes(dataset.n).items())
    print(f"Data OK: {dataset.n} samples; {args.method} with {sizes}", file=sys.stderr)
    if args.dry_run:
        return 0

    model = asyncio.run(
        fit_residual_model(
            dataset,
            method_cfg,
            opt_cfg,
            seed=opt_cfg.seed,
            max_concurrency=workers,
        )
    )
    out = save_model(model, args.out or f"models/{args.method}.npz")
    print(f"Trained {args.method} in {model.train_seconds:.2f}s; archive written to {out}", file=sys.stderr)
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    model = None
    if args.model:
        model = load_model(args.model, expected_method=args.method or scenario.method)
        if len(model.models) != len(CHANNELS):
            raise ArchiveError(
                f"{args.model} holds {len(model.models)} channel(s); the augmented controller needs {len(CHANNELS)}"
            )
    label = model.method if model is not None else "nominal"
    print(f"Scenario OK: {scenario.name}, controller: {label}", file=sys.stderr)
    if args.dry_run:
        return 0

    out = Path(args.out) if args.out else None
    try:
        log = run_closed_loop(scenario, model)
    except SimulationDivergedError as e:
        print(f"Simulation error: {e}", file=sys.stderr)
        _write_partial_log(e, out)
        return EXIT_DIVERGED

    if out is not None:
        write_flight_log(out, log)
        print(f"Flight log written to {out}", file=sys.stderr)
    scores = tracking_nmse(log, scenario.transient_s)
    report = {
        "scenario": scenario.name,
        "controller": label,
        "samples": len(log),
        "transient_s": scenario.transient_s,
        "nmse": scores.as_dict() if scores is not None else None,
    }
    if scores is None:
        report["status"] = "no data"
        print("No data to score (empty horizon after transient trimming).", file=sys.stderr)
    print(json.dumps(report, indent=2))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_model(args.model, expected_method=args.method)
    dataset = read_dataset(args.data)
    channels = list(model.meta.get("channels", CHANNELS[: len(model.models)]))
    columns = [CHANNELS.index(name) for name in channels]
    print(f"Model OK: {model.method}, {len(channels)} channel(s); {dataset.n} samples", file=sys.stderr)
    if args.dry_run:
        return 0

    start = time.perf_counter()
    predictions = model.predict_batch(dataset.inputs)
    batch_seconds = time.perf_counter() - start
    queries = dataset.inputs[: min(dataset.n, 1000)]
    cached = []
    for q in queries:
        t0 = time.perf_counter()
        model.predict_means(q)
        cached.append(time.perf_counter() - t0)
    uncached = []
    for q in queries[: 0 if args.cached else 20]:
        t0 = time.perf_counter()
        model.predict_means_uncached(q)
        uncached.append(time.perf_counter() - t0)

    report = {
        "model": str(args.model),
        "method": model.method,
        "data": str(args.data),
        "samples": dataset.n,
        "prediction_nmse": prediction_nmse(dataset.targets[:, columns], predictions, channels),
        "batch_seconds": batch_seconds,
        "cached": latency_stats(cached),
        "uncached": latency_stats(uncached),
    }
    if args.out:
        write_results_data(report, Path(args.out))
    print(json.dumps(report, indent=2))
    return 0


def _bench_data(config: BenchConfig, args: argparse.Namespace):
    master_path = Path(args.data) if args.data else config.master_data
    if master_path is None:
        raise ConfigError("bench needs a master dataset (--data or bench.master_data)")
    master = read_dataset(master_path)
    test_path = Path(args.test_data) if args.test_data else config.test_data
    if test_path is None:
        print("  WARN [bench] no test dataset given, scoring on the master dataset", file=sys.stderr)
        return master, master
    return master, read_dataset(test_path)


def cmd_bench(args: argparse.Namespace) -> int:
    config = load_bench_config(args.config)
    if args.out:
        config.output = Path(args.out)
    if args.sizes:
        config.sizes = args.sizes
    if args.seed is not None:
        config.seed = args.seed
        config.optimizer = replace(config.optimizer, seed=args.seed)
    if args.method:
        if args.method not in config.methods:
            raise ConfigError(f"Method '{args.method}' has no [methods.{args.method}] table")
        config.methods = {args.method: config.methods[args.method]}
    if args.cached:
        config.uncached_queries = 0
    elif args.uncached:
        config.uncached_queries = max(config.uncached_queries, 1)

    try:
        existing_data = load_results(config.output)
    except ValueError as e:
        print(f"Output error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    print(
        f"Config OK: {len(config.methods)} method(s), sizes {config.sizes}, "
        f"channels {[CHANNELS[k] for k in config.channels]}",
        file=sys.stderr,
    )
    if args.dry_run:
        return 0

    master, test = _bench_data(config, args)
    if config.sizes[-1] > master.n:
        print(
            f"  WARN [bench] largest size {config.sizes[-1]} exceeds the {master.n} master samples",
            file=sys.stderr,
        )

    skip_keys = (
        completed_cell_keys(existing_data, methods=set(config.methods)) if existing_data else set()
    )
    if skip_keys:
        print(f"Found {len(skip_keys)} completed cells in {config.output}; resuming.", file=sys.stderr)

    try:
        result = asyncio.run(
            run_bench(
                config,
                master,
                test,
                skip_keys=skip_keys,
                on_result=lambda partial: write_results(
                    partial,
                    config.output,
                    existing_data=existing_data,
                ),
            )
        )
    except KeyboardInterrupt:
        print("\nInterrupted.", file=sys.stderr)
        return EXIT_CONFIG

    if not result.cells:
        print("Nothing to run: all configured cells are already complete.", file=sys.stderr)
        return 0

    data = write_results(result, config.output, existing_data=existing_data)
    print_summary(data)
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msgp_bench",
        description="Sparse GP mixture regression for learning-based quadrotor control",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="Output path")
    common.add_argument("--seed", type=int, help="Override the configured seed")
    common.add_argument("--dry-run", action="store_true", help="Validate inputs only, don't run")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="Simulate a scenario and write residual data")
    p.add_argument("--scenario", required=True, help="Path to scenario TOML file")

    p = sub.add_parser("train", parents=[common], help="Train a residual model and archive it")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--data", required=True, help="Training dataset (CSV)")
    p.add_argument("--config", help="Bench/method TOML file with [optimizer] and [methods.*]")

    p = sub.add_parser("simulate", parents=[common], help="Closed-loop flight, nominal or augmented")
    p.add_argument("--scenario", required=True, help="Path to scenario TOML file")
    p.add_argument("--model", help="Model archive for the augmented controller")
    p.add_argument("--method", choices=METHODS, help="Expected method of the model archive")

    p = sub.add_parser("bench", parents=[common], help="Training-size latency benchmark")
    p.add_argument("--config", required=True, help="Path to bench TOML file")
    p.add_argument("--data", help="Master dataset (overrides bench.master_data)")
    p.add_argument("--test-data", help="Test dataset (overrides bench.test_data)")
    p.add_argument("--sizes", type=_sizes, help="Comma-separated ascending training sizes")
    p.add_argument("--method", choices=METHODS, help="Benchmark a single method")
    latency = p.add_mutually_exclusive_group()
    latency.add_argument("--cached", action="store_true", help="Measure cached latency only")
    latency.add_argument("--uncached", action="store_true", help="Also measure uncached latency")

    p = sub.add_parser("eval", parents=[common], help="Score a model archive on a dataset")
    p.add_argument("--model", required=True, help="Model archive")
    p.add_argument("--data", required=True, help="Dataset (CSV)")
    p.add_argument("--method", choices=METHODS, help="Expected method of the model archive")
    p.add_argument("--cached", action="store_true", help="Skip the uncached latency measurement")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    load_dotenv()

    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ContractError, DegenerateFlatnessError) as e:
        print(f"Config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ArchiveError as e:
        print(f"Archive error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TableError as e:
        print(f"Data error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except KernelError as e:
        print(f"Numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SimulationDivergedError as e:
        print(f"Simulation error: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
