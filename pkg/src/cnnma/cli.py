"""Command line entry point: ``cnnma {train,anneal,sweep,compare,bench}``.

Exit codes: 0 success, 2 usage, 3 data error, 4 invalid configuration,
5 runtime failure (every run diverged or an objective went non-finite).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import mnist_io
from .annealer import AnnealConfig, NonFiniteEnergyError
from .cnn import DivergenceError
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .harness import (bench, compare_ma_sa, emit_report, emit_sweep, load_dataset,
                      run_experiment, sweep_delta_scale, sweep_neighborhood)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4, 5

log = logging.getLogger("cnnma")

_ANNEAL_FLAGS = {
    "neighborhood": "neighborhood_size",
    "maxit": "max_iterations",
    "kinetic": "initial_kinetic",
    "cooling": "cooling_factor",
    "delta": "delta_scale",
    "temperature": "initial_temperature",
    "epsilon": "epsilon",
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--data-dir", help="directory holding the MNIST IDX files")
    p.add_argument("--subset", type=int, help="stratified training subset size (0 = all)")
    p.add_argument("--test-subset", type=int, help="evaluation subset size (0 = all)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    for flag, name in _ANNEAL_FLAGS.items():
        p.add_argument(f"--{flag}", type=float if name in (
            "initial_kinetic", "cooling_factor", "delta_scale", "initial_temperature", "epsilon"
        ) else int, dest=f"anneal_{name}")
    p.add_argument("--strict", action="store_true", default=None, dest="anneal_strict_microcanonical",
                   help="pure microcanonical run (no kinetic rescaling)")
    p.add_argument("--positive-delta", action="store_false", default=None,
                   dest="anneal_signed_delta", help="draw perturbations from [0, delta) only")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cnnma", description="CNN + microcanonical annealing experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("train", help="baseline SGD only"))
    _common(sub.add_parser("anneal", help="baseline vs SGD + microcanonical annealing"))

    p = sub.add_parser("sweep", help="sweep delta scale or neighborhood size")
    _common(p)
    p.add_argument("--param", choices=("delta", "neighborhood"), required=True)
    p.add_argument("--values", help="comma separated values (default 0.001,0.0001 or 5,10,20)")

    _common(sub.add_parser("compare", help="baseline vs MA vs SA on paired seeds"))

    p = sub.add_parser("bench", help="MA vs SA on sphere/rastrigin/rosenbrock")
    p.add_argument("--function", choices=("sphere", "rastrigin", "rosenbrock"), default="sphere")
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--neighborhood", type=int, default=10)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--kinetic", type=float, default=100.0)
    p.add_argument("--cooling", type=float, default=0.95)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args, mode: str) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    top = {}
    for name in ("data_dir", "subset", "test_subset", "epochs", "seed", "repeats", "workers",
                 "learning_rate", "batch_size"):
        value = getattr(args, name, None)
        if value is not None:
            top[name] = value
    anneal = {k[len("anneal_"):]: v for k, v in vars(args).items()
              if k.startswith("anneal_") and v is not None}
    try:
        return dataclasses.replace(
            config, mode=mode, anneal=dataclasses.replace(config.anneal, **anneal), **top)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def _print_summary(report):
    for s in report.summary():
        print(f"{s['method']:>9} epoch {s['epoch']:>3}  acc {s['accuracy_mean']:7.2f} "
              f"+- {s['accuracy_sd']:.2f}  time {s['seconds_mean']:8.2f}s  (n={s['n']})")
    for method in report.methods:
        if method == "baseline":
            continue
        for p in report.paired(method):
            print(f"{method:>9} repeat {p['repeat']} epoch {p['epoch']}: "
                  f"delta {p['accuracy_delta']:+.2f}pp  time ratio {p['time_ratio']:.3f}")


def _all_failed(reports) -> bool:
    records = [r for rep in reports for r in rep.records]
    return bool(records) and all(r.status != "ok" for r in records)


def _run(args) -> int:
    if args.command == "bench":
        cfg = AnnealConfig(neighborhood_size=args.neighborhood, max_iterations=args.iterations,
                           initial_kinetic=args.kinetic, cooling_factor=args.cooling,
                           delta_scale=args.delta, initial_temperature=args.temperature)
        res = bench(args.function, args.dim, args.runs, cfg, threshold=args.threshold, seed=args.seed)
        for key in ("ma", "sa"):
            energies = res["best_energy"][key]
            print(f"{key}: {res['successes'][key]}/{args.runs} below {args.threshold:g}, "
                  f"median best energy {sorted(energies)[len(energies) // 2]:.3e}")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            for key in ("ma", "sa"):
                for i, trace in enumerate(res["traces"][key]):
                    trace.to_csv(args.out / f"{key}_run{i}.csv")
            summary = {k: v for k, v in res.items() if k != "traces"}
            (args.out / "bench.json").write_text(json.dumps(summary, indent=1) + "\n")
        return EXIT_OK

    if args.command == "sweep":
        mode = "sweep_delta" if args.param == "delta" else "sweep_neighborhood"
    else:
        mode = {"train": "baseline", "anneal": "cnn_ma", "compare": "compare"}[args.command]
    config = resolve_config(args, mode)
    out = args.out or Path("runs") / args.command
    dataset = load_dataset(config)
    log.info("dataset: %s", dataset.description)

    if args.command == "sweep":
        if args.values:
            raw = [v for v in args.values.split(",") if v.strip()]
        else:
            raw = ["0.001", "0.0001"] if args.param == "delta" else ["5", "10", "20"]
        try:
            values = [float(v) for v in raw] if args.param == "delta" else [int(v) for v in raw]
        except ValueError as e:
            raise ConfigError(f"bad --values: {e}") from e
        sweep = sweep_delta_scale if args.param == "delta" else sweep_neighborhood
        reports = sweep(config, values, dataset)
        for value, report in reports.items():
            print(f"== {args.param} = {value}")
            _print_summary(report)
        emit_sweep(reports, args.param, out)
        (out / "config.yaml").write_text(dump_config(config))
        print(f"wrote {out}")
        return EXIT_RUNTIME if _all_failed(reports.values()) else EXIT_OK

    report = compare_ma_sa(config, dataset) if args.command == "compare" else run_experiment(config, dataset)
    _print_summary(report)
    emit_report(report, out)
    (out / "config.yaml").write_text(dump_config(config))
    print(f"wrote {out}")
    return EXIT_RUNTIME if _all_failed([report]) else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return _run(args)
    except (FileNotFoundError, mnist_io.IDXError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError, KeyError) as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NonFiniteEnergyError, FloatingPointError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
