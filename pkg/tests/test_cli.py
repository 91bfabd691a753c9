import json

import pandas as pd
import pytest

from driftguard.main import main


@pytest.fixture
def finished_run(tiny_config_file, tmp_path):
    # Loose tolerance: the tiny grid makes the Monte Carlo comparisons noisy.
    config = tiny_config_file("synthetic_sanity", lambda_grid={"standard": [0.0], "dtr": [0.03]}, mc_tolerance=10.0)
    out = tmp_path / "run"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    return out


def test_run_writes_summary(finished_run, capsys):
    summary = pd.read_csv(finished_run / "summary.csv")
    assert len(summary) == 4
    assert set(summary["method"]) == {"standard", "dtr"}


def test_verify_bounds(finished_run, capsys):
    assert main(["verify-bounds", "--run", str(finished_run)]) == 0
    report = pd.read_csv(finished_run / "bound_verification.csv")
    assert len(report) == 4
    assert report["holds_poincare"].all()
    assert "4/4 cells satisfy" in capsys.readouterr().out


def test_verify_bounds_recompute(finished_run):
    assert main(["verify-bounds", "--run", str(finished_run), "--recompute"]) == 0
    report = pd.read_csv(finished_run / "bound_verification.csv")
    assert report["reproduced"].all()


def test_monitor(finished_run, capsys):
    model = finished_run / "checkpoints" / "dtr_true_axis_l0.03_s001.bin"
    assert main(["monitor", "--run", str(finished_run), "--model", str(model), "--blocks", "8"]) == 0
    hazard = pd.read_csv(finished_run / "monitor" / "dtr_true_axis_l0.03_s001_hazard.csv")
    assert len(hazard) == 7
    decomposition = pd.read_csv(finished_run / "monitor" / "dtr_true_axis_l0.03_s001_decomposition.csv")
    assert len(decomposition) == 7
    assert "hazard trace:" in capsys.readouterr().out


def test_invalid_config_exits_1(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"experiment": "synthetic_sanity", "lambda_grid": {"standard": [0.5]}}), encoding="utf-8")
    assert main(["run", "--config", str(path)]) == 1


def test_usage_errors_exit_1():
    assert main([]) == 1
    assert main(["verify-bounds"]) == 1


def test_unknown_run_directory_exits_1(tmp_path):
    assert main(["verify-bounds", "--run", str(tmp_path / "nowhere")]) == 1


def test_missing_dataset_exits_2(tmp_path):
    path = tmp_path / "aq.json"
    path.write_text(json.dumps({"experiment": "air_quality", "data_path": str(tmp_path / "absent.csv")}), encoding="utf-8")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 2


def test_fetch_data_describes_without_download(tmp_path, capsys):
    assert main(["fetch-data", "--dataset", "tetouan", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "not downloaded" in out
    assert "archive.ics.uci.edu" in out


def test_fetch_data_marks_local_file_unverified(tmp_path, capsys):
    (tmp_path / "Tetuan City power consumption.csv").write_bytes(b"DateTime\n")
    assert main(["fetch-data", "--dataset", "tetouan", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "checked: not verified" in out
    assert "not pinned" not in out
