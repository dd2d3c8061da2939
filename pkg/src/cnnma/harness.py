"""Seeded experiment runs: baseline SGD vs SGD followed by annealing refinement.

Every repeat derives all of its randomness (initial weights, per-epoch
shuffles, annealer streams) from ``(config.seed, repeat)`` only, so the
methods of one repeat share initialization and batch order and can be
compared pairwise.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import platform
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import mnist_io
from .annealer import (AnnealTrace, NonFiniteEnergyError, anneal_run, benchmark_objective,
                       cnn_objective, sa_run)
from .cnn import DEFAULT_ARCH, DivergenceError, accuracy, init_network, sgd_epoch
from .config import ExperimentConfig

log = logging.getLogger(__name__)

METHODS = ("baseline", "cnn_ma", "cnn_sa")


@dataclass(frozen=True, eq=False)
class Dataset:
    train_x: np.ndarray
    train_labels: mnist_io.LabelSet
    eval_x: np.ndarray
    eval_labels: mnist_io.LabelSet
    description: dict


def load_dataset(config: ExperimentConfig) -> Dataset:
    """Read the training split (optionally a stratified subset) and the
    evaluation split named by ``config.split``."""
    train_images, train_labels = mnist_io.load_split(config.data_dir, "train")
    if config.split == "train":
        eval_images, eval_labels = train_images, train_labels
    else:
        eval_images, eval_labels = mnist_io.load_split(config.data_dir, "test")
    train_idx = mnist_io.stratified_subset(train_labels, config.subset)
    eval_idx = mnist_io.stratified_subset(eval_labels, config.test_subset)
    description = {
        "data_dir": str(config.data_dir),
        "train_split": "train",
        "train_available": train_labels.count,
        "train_used": int(train_idx.size),
        "eval_split": config.split,
        "eval_available": eval_labels.count,
        "eval_used": int(eval_idx.size),
    }
    return Dataset(
        mnist_io.normalize(train_images.subset(train_idx)),
        train_labels.subset(train_idx),
        mnist_io.normalize(eval_images.subset(eval_idx)),
        eval_labels.subset(eval_idx),
        description,
    )


# ---------------------------------------------------------------- records


@dataclass
class EpochRecord:
    epoch: int
    accuracy: float
    train_loss: float
    seconds: float  # cumulative training wall time, evaluation excluded
    anneal: dict | None = None
    trace: AnnealTrace | None = None

    def to_dict(self) -> dict:
        d = {"epoch": self.epoch, "accuracy": self.accuracy, "train_loss": self.train_loss,
             "seconds": self.seconds, "anneal": self.anneal}
        d["trace"] = self.trace.to_dict() if self.trace is not None else None
        return d


@dataclass
class RunRecord:
    method: str
    repeat: int
    seed: int
    status: str = "ok"
    error: str | None = None
    epochs: list[EpochRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"method": self.method, "repeat": self.repeat, "seed": self.seed,
                "status": self.status, "error": self.error,
                "epochs": [e.to_dict() for e in self.epochs]}


def mean_sd(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (N - 1); sd is NaN for one value."""
    values = list(values)
    if not values:
        return math.nan, math.nan
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else math.nan
    return mean, sd


@dataclass
class RunReport:
    config: dict
    environment: dict
    records: list[RunRecord] = field(default_factory=list)
    dataset: dict = field(default_factory=dict)
    label: str = ""

    @property
    def methods(self) -> list[str]:
        return [m for m in METHODS if any(r.method == m for r in self.records)]

    @property
    def n_epochs(self) -> int:
        return max((len(r.epochs) for r in self.records), default=0)

    def epoch_values(self, method: str, epoch: int, attr: str) -> list[float]:
        out = []
        for r in self.records:
            if r.method == method and len(r.epochs) >= epoch:
                out.append(getattr(r.epochs[epoch - 1], attr))
        return out

    def summary(self) -> list[dict]:
        rows = []
        for method in self.methods:
            for epoch in range(1, self.n_epochs + 1):
                acc = self.epoch_values(method, epoch, "accuracy")
                sec = self.epoch_values(method, epoch, "seconds")
                a_mean, a_sd = mean_sd(acc)
                s_mean, s_sd = mean_sd(sec)
                rows.append({"method": method, "epoch": epoch, "n": len(acc),
                             "accuracy_mean": a_mean, "accuracy_sd": a_sd,
                             "seconds_mean": s_mean, "seconds_sd": s_sd})
        return rows

    def paired(self, method: str, reference: str = "baseline") -> list[dict]:
        """Per-repeat accuracy delta and wall-time ratio against ``reference``."""
        ref = {r.repeat: r for r in self.records if r.method == reference}
        out = []
        for r in self.records:
            if r.method != method or r.repeat not in ref:
                continue
            base = ref[r.repeat]
            for a, b in zip(r.epochs, base.epochs):
                out.append({"repeat": r.repeat, "epoch": a.epoch,
                            "accuracy": a.accuracy, "reference_accuracy": b.accuracy,
                            "accuracy_delta": a.accuracy - b.accuracy,
                            "time_ratio": a.seconds / b.seconds if b.seconds > 0 else math.nan})
        return out

    def to_dict(self) -> dict:
        d = {"label": self.label, "config": self.config, "environment": self.environment,
             "dataset": self.dataset, "records": [r.to_dict() for r in self.records],
             "summary": self.summary()}
        d["paired"] = {m: self.paired(m) for m in self.methods if m != "baseline"}
        return d


def environment_stamp() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "machine": platform.machine(),
        "byteorder": sys.byteorder,
    }


# ---------------------------------------------------------------- runs


def _derive_seeds(seed: int, repeat: int, epochs: int):
    rng = np.random.default_rng(np.random.SeedSequence([seed, repeat]))
    init_seed = int(rng.integers(2**63))
    per_epoch = rng.integers(2**63, size=(epochs, 3))
    return init_seed, [tuple(int(v) for v in row) for row in per_epoch]


def run_single(config: ExperimentConfig, dataset: Dataset, method: str, repeat: int,
               clock: Callable[[], float] = time.perf_counter) -> RunRecord:
    """Train one network with one method; failures are recorded, not raised."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    init_seed, epoch_seeds = _derive_seeds(config.seed, repeat, config.epochs)
    record = RunRecord(method, repeat, init_seed)
    net = init_network(DEFAULT_ARCH, seed=init_seed, beta_init=config.beta_init)
    elapsed = 0.0
    try:
        for epoch, (shuffle_seed, anneal_batch_seed, anneal_seed) in enumerate(epoch_seeds, start=1):
            t0 = clock()
            batches = mnist_io.make_batches(dataset.train_x, dataset.train_labels,
                                            config.batch_size, shuffle_seed)
            net, train_loss = sgd_epoch(net, batches, config.learning_rate)
            anneal_info, trace = None, None
            if method != "baseline":
                anneal_info, trace = _refine(net, dataset, config, method,
                                             anneal_batch_seed, anneal_seed)
            elapsed += clock() - t0
            acc = accuracy(net, dataset.eval_x, dataset.eval_labels)
            record.epochs.append(EpochRecord(epoch, acc, train_loss, elapsed, anneal_info, trace))
            log.info("%s repeat=%d epoch=%d acc=%.2f loss=%.4f t=%.2fs",
                     method, repeat, epoch, acc, train_loss, elapsed)
    except (DivergenceError, NonFiniteEnergyError) as e:
        record.status = "diverged"
        record.error = str(e)
        log.warning("%s repeat=%d diverged: %s", method, repeat, e)
    return record


def _refine(net, dataset, config, method, batch_seed, anneal_seed):
    """Anneal the flattened parameters of ``net`` in place.

    The objective's batches are a fresh shuffle of the training set; the
    incumbent is written back into ``net`` after every equilibrium loop.
    """
    batches = mnist_io.make_batches(dataset.train_x, dataset.train_labels,
                                    config.batch_size, batch_seed)
    objective = cnn_objective(net.clone(), batches)
    anneal_cfg = dataclasses.replace(config.anneal, seed=anneal_seed)

    def write_back(_, best_x):
        net.params[:] = best_x

    run = anneal_run if method == "cnn_ma" else sa_run
    result = run(objective, net.params.copy(), anneal_cfg, on_iteration=write_back)
    net.params[:] = result.best_x
    info = {
        "initial_energy": result.trace.energy[0] if len(result.trace) else result.best_energy,
        "best_energy": result.best_energy,
        "iterations": result.iterations,
        "evaluations": result.evaluations,
        "accepts": int(sum(result.trace.accepts)),
        "terminated_by": result.terminated_by,
    }
    return info, result.trace


def _task(args):
    config, dataset, method, repeat = args
    return run_single(config, dataset, method, repeat)


def run_experiment(config: ExperimentConfig, dataset: Dataset | None = None,
                   methods: Sequence[str] | None = None,
                   clock: Callable[[], float] = time.perf_counter, label: str = "") -> RunReport:
    """Run every method of ``config.mode`` for ``config.repeats`` repeats.

    ``clock`` is only consulted for wall-time columns; pass a deterministic
    one to make whole reports bitwise reproducible.
    """
    if dataset is None:
        dataset = load_dataset(config)
    methods = tuple(methods or config.methods)
    tasks = [(config, dataset, m, r) for r in range(config.repeats) for m in methods]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(_task, tasks))
    else:
        records = [run_single(c, d, m, r, clock) for c, d, m, r in tasks]
    return RunReport(config.to_dict(), environment_stamp(), records, dataset.description, label)


def sweep_delta_scale(config: ExperimentConfig, values: Sequence[float],
                      dataset: Dataset | None = None, **kwargs) -> dict[float, RunReport]:
    """One ``cnn_ma`` experiment per perturbation scale."""
    if not values or any(v <= 0 for v in values):
        raise ValueError("delta values must be non-empty and positive")
    dataset = dataset or load_dataset(config)
    return {v: run_experiment(config.with_anneal(delta_scale=float(v)), dataset,
                              methods=("cnn_ma",), label=f"delta_scale={v}", **kwargs)
            for v in values}


def sweep_neighborhood(config: ExperimentConfig, sizes: Sequence[int],
                       dataset: Dataset | None = None, **kwargs) -> dict[int, RunReport]:
    """One ``cnn_ma`` experiment per neighborhood size."""
    if not sizes or any(int(s) < 1 for s in sizes):
        raise ValueError("neighborhood sizes must be non-empty and >= 1")
    dataset = dataset or load_dataset(config)
    return {int(s): run_experiment(config.with_anneal(neighborhood_size=int(s)), dataset,
                                   methods=("cnn_ma",), label=f"neighborhood_size={s}", **kwargs)
            for s in sizes}


def compare_ma_sa(config: ExperimentConfig, dataset: Dataset | None = None, **kwargs) -> RunReport:
    """Baseline, MA and SA on identical seeds and evaluation budgets."""
    config = dataclasses.replace(config, mode="compare")
    return run_experiment(config, dataset, label="ma_vs_sa", **kwargs)


def bench(name: str, dim: int, runs: int, anneal, x0_scale: float = 1.0,
          threshold: float = 1e-2, seed: int = 0) -> dict:
    """MA vs SA on a closed-form objective from the same seeded starts."""
    objective = benchmark_objective(name, dim)
    results = {"ma": [], "sa": []}
    traces = {"ma": [], "sa": []}
    for r in range(runs):
        x0 = np.random.default_rng([seed, r]).uniform(-x0_scale, x0_scale, dim)
        cfg = dataclasses.replace(anneal, seed=seed * 1_000_003 + r)
        for key, run in (("ma", anneal_run), ("sa", sa_run)):
            res = run(objective, x0, cfg)
            results[key].append(res.best_energy)
            traces[key].append(res.trace)
    return {
        "function": name, "dim": dim, "runs": runs, "threshold": threshold,
        "best_energy": results,
        "successes": {k: int(sum(e < threshold for e in v)) for k, v in results.items()},
        "traces": traces,
    }


# ---------------------------------------------------------------- emission


def _num(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])


TABLE_COLUMNS = ("epoch", "A1", "T1", "A2", "T2")


def table_rows(report: RunReport, treatment: str | None = None) -> list[tuple]:
    """Mean accuracy/time per epoch: baseline (A1, T1) next to ``treatment`` (A2, T2)."""
    if treatment is None:
        others = [m for m in report.methods if m != "baseline"]
        treatment = others[0] if others else None
    summary = {(s["method"], s["epoch"]): s for s in report.summary()}
    rows = []
    for epoch in range(1, report.n_epochs + 1):
        base = summary.get(("baseline", epoch))
        treat = summary.get((treatment, epoch)) if treatment else None
        rows.append((
            epoch,
            base["accuracy_mean"] if base else None,
            base["seconds_mean"] if base else None,
            treat["accuracy_mean"] if treat else None,
            treat["seconds_mean"] if treat else None,
        ))
    return rows


def emit_report(report: RunReport, directory) -> list[Path]:
    """Write results.json, table.csv (plus table_<method>.csv for extra
    treatments), summary.csv, epochs.csv and one trace CSV per annealing
    phase under traces/."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "results.json"
    path.write_text(json.dumps(_jsonable(report.to_dict()), indent=1, sort_keys=True) + "\n")
    written.append(path)

    treatments = [m for m in report.methods if m != "baseline"]
    path = out / "table.csv"
    _write_csv(path, TABLE_COLUMNS, table_rows(report, treatments[0] if treatments else None))
    written.append(path)
    for extra in treatments[1:]:
        path = out / f"table_{extra}.csv"
        _write_csv(path, TABLE_COLUMNS, table_rows(report, extra))
        written.append(path)

    path = out / "summary.csv"
    cols = ("method", "epoch", "n", "accuracy_mean", "accuracy_sd", "seconds_mean", "seconds_sd")
    _write_csv(path, cols, ([s[c] for c in cols] for s in report.summary()))
    written.append(path)

    path = out / "epochs.csv"
    cols = ("method", "repeat", "epoch", "accuracy", "error_rate", "train_loss", "seconds", "status")
    rows = []
    for r in report.records:
        for e in r.epochs:
            rows.append((r.method, r.repeat, e.epoch, e.accuracy, 100.0 - e.accuracy,
                         e.train_loss, e.seconds, r.status))
    _write_csv(path, cols, rows)
    written.append(path)

    for r in report.records:
        for e in r.epochs:
            if e.trace is None:
                continue
            tdir = out / "traces"
            tdir.mkdir(exist_ok=True)
            written.append(e.trace.to_csv(tdir / f"{r.method}_r{r.repeat}_e{e.epoch}.csv"))
    return written


def emit_sweep(reports: dict, param: str, directory) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    rows = []
    for value, report in reports.items():
        written += emit_report(report, out / f"{param}_{value}")
        for s in report.summary():
            rows.append((value, s["method"], s["epoch"], s["n"], s["accuracy_mean"],
                         s["accuracy_sd"], s["seconds_mean"], s["seconds_sd"]))
    path = out / "sweep.csv"
    _write_csv(path, (param, "method", "epoch", "n", "accuracy_mean", "accuracy_sd",
                      "seconds_mean", "seconds_sd"), rows)
    written.append(path)
    return written
