"""Exit criteria. Each test appends a PASS/FAIL line to the acceptance
section of the pytest terminal summary.

The MNIST criteria read the official IDX files from ``CNNMA_MNIST_DIR``
(default ``data/mnist`` in the repository root) and fail when they are absent.
"""

import itertools
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from cnnma import mnist_io
from cnnma.annealer import AnnealConfig, DemonState, anneal_run, benchmark_objective, demon_step
from cnnma.cnn import (Architecture, Network, backprop_grads, init_network, loss,
                       network_forward)
from cnnma.config import ExperimentConfig
from cnnma.harness import (compare_ma_sa, emit_report, emit_sweep, load_dataset, run_experiment,
                           sweep_delta_scale, sweep_neighborhood)
from cnnma.mnist_io import MiniBatch, one_hot

from conftest import MNIST_DIR


@contextmanager
def criterion(request, name):
    lines = request.config._acceptance_lines
    result = {"detail": ""}
    t0 = time.perf_counter()
    try:
        yield result
    except pytest.skip.Exception as e:
        lines.append(f"SKIP  {name}: {e.msg}")
        raise
    except BaseException as e:
        msg = str(e).strip().splitlines()[0] if str(e).strip() else type(e).__name__
        lines.append(f"FAIL  {name}: {msg}")
        raise
    lines.append(f"PASS  {name} ({time.perf_counter() - t0:.2f}s) {result['detail']}")


def require_mnist():
    try:
        for split in ("train", "test"):
            mnist_io.find_split_files(MNIST_DIR, split)
    except FileNotFoundError as e:
        pytest.fail(f"official MNIST IDX files not found ({e}); set CNNMA_MNIST_DIR")
    return MNIST_DIR


# ---------------------------------------------------------------- annealer


def test_demon_conservation(request):
    with criterion(request, "demon conservation (strict, 10k steps, rel <= 1e-9)") as r:
        t0 = time.perf_counter()
        rng = np.random.default_rng(0)
        quad = benchmark_objective("sphere", 5)
        x = rng.uniform(-1, 1, 5)
        s = DemonState(x, quad(x), 2.0, 1.0, x, quad(x))
        total = s.total
        worst, accepted, min_kinetic = 0.0, 0, math.inf
        for _ in range(10_000):
            cand = s.x + 0.3 * rng.uniform(-1, 1, 5)
            ok, s = demon_step(s, quad(cand), cand)
            accepted += ok
            min_kinetic = min(min_kinetic, s.kinetic)
            worst = max(worst, abs(s.total - total) / total)
        elapsed = time.perf_counter() - t0
        r["detail"] = f"max rel drift {worst:.1e}, {accepted} accepted, min E_k {min_kinetic:.3g}"
        assert 0 < accepted < 10_000
        assert min_kinetic >= 0.0
        assert worst <= 1e-9
        assert elapsed < 1.0


def test_demon_rule_oracle(request):
    with criterion(request, "demon rule == brute force on 200x200 grid") as r:
        t0 = time.perf_counter()
        deltas = np.linspace(-10.0, 10.0, 200)
        kinetics = np.linspace(0.0, 10.0, 200)
        mismatches = 0
        for d in deltas:
            for k in kinetics:
                base = DemonState(np.zeros(1), 5.0, float(k), 1.0, np.zeros(1), 5.0)
                accepted, after = demon_step(base, 5.0 + float(d))
                delta = (5.0 + float(d)) - 5.0
                expect = delta <= k  # oracle: accept iff dE <= E_k
                want_k = float(k) - delta if expect else float(k)
                if accepted != expect or after.kinetic != want_k or (not expect and after is not base):
                    mismatches += 1
        elapsed = time.perf_counter() - t0
        r["detail"] = f"{mismatches} mismatches in 40000 cells"
        assert mismatches == 0
        assert elapsed < 1.0


def test_optimizer_sanity(request):
    with criterion(request, "MA on sphere(10), 2000x10: >= 95/100 below 1e-2") as r:
        t0 = time.perf_counter()
        obj = benchmark_objective("sphere", 10)
        hits = 0
        for seed in range(100):
            x0 = np.random.default_rng([1, seed]).uniform(-1, 1, 10)
            cfg = AnnealConfig(neighborhood_size=10, max_iterations=2000, delta_scale=0.05, seed=seed)
            hits += anneal_run(obj, x0, cfg).best_energy < 1e-2
        elapsed = time.perf_counter() - t0
        r["detail"] = f"{hits}/100 in {elapsed:.1f}s"
        assert hits >= 95
        assert elapsed < 10.0


# ---------------------------------------------------------------- CNN


def test_gradient_check(request):
    with criterion(request, "backprop vs central differences (h=1e-5), rel <= 1e-4") as r:
        t0 = time.perf_counter()
        worst = 0.0
        total_params = 0
        for arch, seed in ((Architecture((8, 8), (2, 3), (5, 1)), 0),
                           (Architecture((8, 8), (4,), (5,)), 1)):
            net = init_network(arch, seed=seed)
            assert net.n_params <= 500
            rng = np.random.default_rng(seed)
            net.params += rng.normal(0, 0.3, net.n_params)
            batch = MiniBatch(rng.random((5, 8, 8)), one_hot(rng.integers(0, 10, 5)), np.arange(5))
            g = backprop_grads(net, batch)
            h = 1e-5
            for i in range(net.n_params):
                p = net.params.copy()
                p[i] += h
                up = loss(network_forward(Network(arch, p), batch), batch.targets)
                p[i] -= 2 * h
                down = loss(network_forward(Network(arch, p), batch), batch.targets)
                fd = (up - down) / (2 * h)
                rel = abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1e-8)
                worst = max(worst, rel)
            total_params += net.n_params
        elapsed = time.perf_counter() - t0
        r["detail"] = f"{total_params} coordinates, worst rel error {worst:.1e}"
        assert worst <= 1e-4
        assert elapsed < 30.0


def test_loss_oracle(request):
    with criterion(request, "loss == scalar-loop oracle on 100 pairs (1e-12)") as r:
        t0 = time.perf_counter()
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(1, 101))
            x, y = rng.random((n, 10)), rng.random((n, 10))
            acc = 0.0
            for i in range(n):
                for j in range(10):
                    acc += (x[i, j] - y[i, j]) ** 2
            expected = 0.5 * math.sqrt(acc / n)
            worst = max(worst, abs(loss(y, x) - expected))
        elapsed = time.perf_counter() - t0
        r["detail"] = f"max abs difference {worst:.1e}"
        assert worst <= 1e-12
        assert elapsed < 1.0


# ---------------------------------------------------------------- MNIST


def test_idx_parsing(request):
    with criterion(request, "official MNIST parses to 60000/10000 x 28x28, bitwise round trip") as r:
        data_dir = require_mnist()
        t0 = time.perf_counter()
        shapes = {}
        for split, n in (("train", 60000), ("test", 10000)):
            image_path, label_path = mnist_io.find_split_files(data_dir, split)
            raw_images = mnist_io._maybe_gunzip(image_path.read_bytes())
            raw_labels = mnist_io._maybe_gunzip(label_path.read_bytes())
            images = mnist_io.parse_idx_images(raw_images)
            labels = mnist_io.parse_idx_labels(raw_labels)
            assert (images.count, images.rows, images.cols) == (n, 28, 28)
            assert labels.count == n
            assert mnist_io.serialize_images(images) == raw_images
            assert mnist_io.serialize_labels(labels) == raw_labels
            shapes[split] = (images.count, images.rows, images.cols)
        elapsed = time.perf_counter() - t0
        r["detail"] = str(shapes)
        assert elapsed < 5.0


@pytest.fixture(scope="module")
def desk():
    """Defaults of the protocol on a stratified 10k training subset, full test split."""
    data_dir = MNIST_DIR
    try:
        cfg = ExperimentConfig(data_dir=str(data_dir), subset=10_000, epochs=1, repeats=3, seed=0)
        return cfg, load_dataset(cfg)
    except FileNotFoundError:
        return None


def need(desk):
    if desk is None:
        require_mnist()
    return desk


def test_desk_gain_direction(request, desk):
    with criterion(request, "desk run: median MA - baseline >= +1pp, time ratio in [1, 2]") as r:
        cfg, dataset = need(desk)
        report = run_experiment(cfg, dataset)
        paired = report.paired("cnn_ma")
        base = np.median([p["reference_accuracy"] for p in paired])
        ma = np.median([p["accuracy"] for p in paired])
        ratio = float(np.median([p["time_ratio"] for p in paired]))
        r["detail"] = (f"baseline {base:.2f}%, cnn_ma {ma:.2f}%, delta {ma - base:+.2f}pp, "
                       f"ratio {ratio:.3f} (ref 82.39 / 86.99, 1.02-1.38x)")
        request.config._acceptance_lines.append("      " + r["detail"])
        assert ma - base >= 1.0, r["detail"]
        assert 1.0 <= ratio <= 2.0, r["detail"]


def test_sweep_direction(request, desk):
    with criterion(request, "sweeps: acc non-decreasing & time increasing in {5,10,20}; "
                            "acc(0.001) > acc(0.0001)") as r:
        cfg, dataset = need(desk)
        hood = sweep_neighborhood(cfg, [5, 10, 20], dataset)
        accs = [float(np.median(hood[k].epoch_values("cnn_ma", 1, "accuracy"))) for k in (5, 10, 20)]
        secs = [float(np.median(hood[k].epoch_values("cnn_ma", 1, "seconds"))) for k in (5, 10, 20)]
        delta = sweep_delta_scale(cfg, [0.001, 0.0001], dataset)
        d_acc = {v: float(np.median(delta[v].epoch_values("cnn_ma", 1, "accuracy"))) for v in delta}
        r["detail"] = (f"acc {accs} (ref 85.74/87.52/88.06), time {[round(s, 2) for s in secs]}, "
                       f"acc(0.001)={d_acc[0.001]:.2f} vs acc(0.0001)={d_acc[0.0001]:.2f} (ref 87.60/85.45)")
        request.config._acceptance_lines.append("      " + r["detail"])
        assert accs[0] <= accs[1] <= accs[2], r["detail"]
        assert secs[0] < secs[1] < secs[2], r["detail"]
        assert d_acc[0.001] > d_acc[0.0001], r["detail"]


# ---------------------------------------------------------------- determinism


def test_determinism(request, synthetic_dir, tmp_path):
    with criterion(request, "identical config + seed -> bitwise identical records and files") as r:
        data_dir = MNIST_DIR if (MNIST_DIR / "train-images-idx3-ubyte").exists() else synthetic_dir
        cfg = ExperimentConfig(data_dir=str(data_dir), subset=300, test_subset=200, batch_size=50,
                               repeats=2, epochs=2, seed=11,
                               anneal=AnnealConfig(max_iterations=4, neighborhood_size=5))

        def run_all(out):
            ticks = itertools.count()
            clock = lambda: float(next(ticks))  # wall time is the only non-deterministic input
            emit_report(compare_ma_sa(cfg, clock=clock), out / "compare")
            emit_sweep(sweep_delta_scale(cfg, [0.01, 0.001], clock=clock), "delta", out / "sweep")
            report = run_experiment(cfg)  # real clock: raw records minus seconds must match
            raw = report.to_dict()["records"]
            for rec in raw:
                for e in rec["epochs"]:
                    e.pop("seconds")
            return json.dumps(raw)

        raw_a = run_all(tmp_path / "a")
        raw_b = run_all(tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        differing = [str(f) for f in files
                     if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
        r["detail"] = f"{len(files)} files compared on {Path(data_dir).name}"
        assert raw_a == raw_b
        assert files and not differing, differing


# ---------------------------------------------------------------- slow, not gated


@pytest.mark.slow
def test_full_mnist_baseline_epoch1(request):
    with criterion(request, "[slow] full MNIST baseline, 1 epoch, within 82.39 +- 3pp") as r:
        if not (MNIST_DIR / "train-images-idx3-ubyte").exists() and \
                not (MNIST_DIR / "train-images-idx3-ubyte.gz").exists():
            pytest.skip("official MNIST not available (not gated)")
        cfg = ExperimentConfig(data_dir=str(MNIST_DIR), mode="baseline", repeats=1)
        acc = run_experiment(cfg).records[0].epochs[0].accuracy
        r["detail"] = f"{acc:.2f}%"
        assert abs(acc - 82.39) <= 3.0
