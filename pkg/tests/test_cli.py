import csv
import json

import pytest

from cnnma.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main


def common(synthetic_dir, out):
    return ["--data-dir", str(synthetic_dir), "--subset", "100", "--test-subset", "50",
            "--repeats", "1", "--batch-size", "25", "--maxit", "2", "--neighborhood", "3",
            "--out", str(out)]


def test_train(synthetic_dir, tmp_path, capsys):
    assert main(["train", *common(synthetic_dir, tmp_path)]) == EXIT_OK
    assert "baseline epoch" in capsys.readouterr().out
    data = json.loads((tmp_path / "results.json").read_text())
    assert {r["method"] for r in data["records"]} == {"baseline"}


def test_anneal_writes_traces(synthetic_dir, tmp_path):
    assert main(["anneal", *common(synthetic_dir, tmp_path), "--delta", "0.01"]) == EXIT_OK
    with open(tmp_path / "traces" / "cnn_ma_r0_e1.csv") as f:
        rows = list(csv.reader(f))
    assert len(rows) == 3
    assert "delta_scale: 0.01" in (tmp_path / "config.yaml").read_text()


@pytest.mark.parametrize("param, values, dirs", [
    ("delta", "0.01,0.001", ["delta_0.01", "delta_0.001"]),
    ("neighborhood", "1,2", ["neighborhood_1", "neighborhood_2"]),
])
def test_sweep(synthetic_dir, tmp_path, param, values, dirs):
    argv = ["sweep", "--param", param, "--values", values, *common(synthetic_dir, tmp_path)]
    assert main(argv) == EXIT_OK
    assert all((tmp_path / d / "table.csv").is_file() for d in dirs)
    assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 3


def test_compare(synthetic_dir, tmp_path):
    assert main(["compare", *common(synthetic_dir, tmp_path)]) == EXIT_OK
    assert (tmp_path / "table_cnn_sa.csv").is_file()


def test_bench(tmp_path, capsys):
    argv = ["bench", "--runs", "2", "--iterations", "300", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("ma: ") and "sa: " in out
    assert json.loads((tmp_path / "bench.json").read_text())["runs"] == 2


def test_config_file(synthetic_dir, tmp_path):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(f"data_dir: {synthetic_dir}\nsubset: 50\ntest_subset: 20\nrepeats: 1\n"
                   "batch_size: 25\nanneal:\n  max_iterations: 1\n")
    assert main(["anneal", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    data = json.loads((tmp_path / "o" / "results.json").read_text())
    assert data["config"]["subset"] == 50 and data["config"]["anneal"]["max_iterations"] == 1


def test_missing_data_exit_code(tmp_path, capsys):
    assert main(["train", "--data-dir", str(tmp_path / "nope"), "--out", str(tmp_path)]) == EXIT_DATA
    assert "data error" in capsys.readouterr().err


def test_invalid_config_exit_code(synthetic_dir, tmp_path):
    assert main(["train", "--data-dir", str(synthetic_dir), "--repeats", "0"]) == EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("learning_rat: 1\n")
    assert main(["train", "--config", str(bad)]) == EXIT_CONFIG


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as e:
        main(["sweep", "--param", "temperature"])
    assert e.value.code == 2
