import importlib.util
import json
from pathlib import Path

import pandas as pd
import pytest

SCRIPTS = Path(__file__).resolve().parents[1] / "scripts"


def load_script(name: str):
    spec = importlib.util.spec_from_file_location(f"scripts_{name}", SCRIPTS / f"{name}.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture
def plot_figures():
    return load_script("plot_figures")


def test_plots_every_table_present(tmp_path, plot_figures):
    pd.DataFrame(
        {"cell_id": ["a", "b"], "method": ["standard", "dtr"], "lambda": [0.0, 0.03], "volatility": [0.01, 0.002],
         "poincare_rhs": [0.02, 0.003], "jv_rhs": [0.05, 0.004]}
    ).to_csv(tmp_path / "fig2_scatter.csv", index=False)
    pd.DataFrame(
        {"panel": ["matched_lambda"] * 2, "label": ["dtr", "isotropic"], "metric": ["volatility"] * 2, "ratio": [0.4, 0.8]}
    ).to_csv(tmp_path / "fig3_ratios.csv", index=False)
    pd.DataFrame(
        {"cell_id": ["a"] * 3, "method": ["standard"] * 3, "lambda": [0.0] * 3, "seed": [0] * 3,
         "time": [0.0, 0.5, 1.0], "risk": [0.3, 0.35, 0.5]}
    ).to_csv(tmp_path / "fig4_risk_curves.csv", index=False)

    assert plot_figures.main([str(tmp_path), "--format", "png"]) == 0
    for stem in ("bound_scatter", "ratios", "risk_curves"):
        assert (tmp_path / "figures" / f"{stem}.png").stat().st_size > 0


def test_no_tables(tmp_path, plot_figures):
    assert plot_figures.main([str(tmp_path)]) == 1


def test_schema_export(tmp_path, monkeypatch):
    exporter = load_script("export_config_schema")
    monkeypatch.setattr(exporter, "REPO_ROOT", tmp_path)
    exporter.main()
    schema = json.loads((tmp_path / "configs" / "experiment.schema.json").read_text(encoding="utf-8"))
    assert "experiment" in schema["required"]
    assert "lambda_grid" in schema["properties"]
