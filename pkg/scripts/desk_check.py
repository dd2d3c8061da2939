"""Run the desk-scale directional checks against any IDX directory.

    python scripts/desk_check.py --data-dir data/mnist --subset 10000

Prints the paired baseline/MA accuracies and time ratios, then the
neighborhood and delta sweeps, each with a pass/fail verdict.
"""

import argparse
import json

import numpy as np

from cnnma.config import ExperimentConfig
from cnnma.harness import load_dataset, run_experiment, sweep_delta_scale, sweep_neighborhood


def median(report, method, attr):
    return float(np.median(report.epoch_values(method, 1, attr)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", default="data/mnist")
    ap.add_argument("--subset", type=int, default=10_000)
    ap.add_argument("--test-subset", type=int, default=0)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--beta-init", type=float, default=1.0)
    ap.add_argument("--json", help="also write the numbers here")
    args = ap.parse_args()

    cfg = ExperimentConfig(data_dir=args.data_dir, subset=args.subset, test_subset=args.test_subset,
                           repeats=args.repeats, seed=args.seed, beta_init=args.beta_init)
    dataset = load_dataset(cfg)
    print(dataset.description)

    report = run_experiment(cfg, dataset)
    paired = report.paired("cnn_ma")
    for p in paired:
        print(f"seed {p['repeat']}: baseline {p['reference_accuracy']:.2f}  cnn_ma {p['accuracy']:.2f}  "
              f"delta {p['accuracy_delta']:+.2f}pp  ratio {p['time_ratio']:.3f}")
    gain = median(report, "cnn_ma", "accuracy") - median(report, "baseline", "accuracy")
    ratio = float(np.median([p["time_ratio"] for p in paired]))
    ok_table = gain >= 1.0 and 1.0 <= ratio <= 2.0
    print(f"per-epoch table: median gain {gain:+.2f}pp, median ratio {ratio:.3f} -> {'PASS' if ok_table else 'FAIL'}")

    hood = sweep_neighborhood(cfg, [5, 10, 20], dataset)
    accs = [median(hood[k], "cnn_ma", "accuracy") for k in (5, 10, 20)]
    secs = [median(hood[k], "cnn_ma", "seconds") for k in (5, 10, 20)]
    ok_hood = accs[0] <= accs[1] <= accs[2] and secs[0] < secs[1] < secs[2]
    print(f"neighborhood 5/10/20: acc {np.round(accs, 2).tolist()} time {np.round(secs, 2).tolist()} "
          f"-> {'PASS' if ok_hood else 'FAIL'}")

    delta = sweep_delta_scale(cfg, [0.001, 0.0001], dataset)
    d = {v: median(delta[v], "cnn_ma", "accuracy") for v in delta}
    ok_delta = d[0.001] > d[0.0001]
    print(f"delta 0.001 vs 0.0001: {d[0.001]:.2f} vs {d[0.0001]:.2f} -> {'PASS' if ok_delta else 'FAIL'}")

    if args.json:
        with open(args.json, "w") as f:
            json.dump({"paired": paired, "gain": gain, "ratio": ratio, "hood_acc": accs,
                       "hood_seconds": secs, "delta_acc": {str(k): v for k, v in d.items()}}, f, indent=1)


if __name__ == "__main__":
    main()
