"""Baseline vs SGD + microcanonical annealing over several epochs and repeats.

    python scripts/run_epochs.py --data-dir data/mnist --epochs 10 --repeats 5 --out runs/epochs

Writes the usual report files (table.csv holds epoch, A1, T1, A2, T2).
"""

import argparse
from pathlib import Path

from cnnma.config import ExperimentConfig, dump_config
from cnnma.harness import emit_report, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", default="data/mnist")
    ap.add_argument("--subset", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("runs/epochs"))
    args = ap.parse_args()

    cfg = ExperimentConfig(data_dir=args.data_dir, subset=args.subset, epochs=args.epochs,
                           repeats=args.repeats, seed=args.seed, workers=args.workers)
    report = run_experiment(cfg)
    emit_report(report, args.out)
    (args.out / "config.yaml").write_text(dump_config(cfg))
    print((args.out / "table.csv").read_text())


if __name__ == "__main__":
    main()
