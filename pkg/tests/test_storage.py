import json
import math

import pandas as pd
import pytest

from driftguard.errors import ConfigError, DataError
from driftguard.models import ExperimentConfig
from driftguard.storage import SUMMARY_COLUMNS, SUMMARY_FILE, FileRunStore, get_store, load_config, summaries_to_frame

from conftest import make_bounds, make_summary


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(broken)
    invalid = tmp_path / "invalid.json"
    invalid.write_text(json.dumps({"experiment": "tetouan", "seeds": [1, 1]}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(invalid)


def test_config_round_trip(tmp_path):
    store = FileRunStore(tmp_path)
    config = ExperimentConfig(experiment="air_quality", seeds=[3, 4], lambda_grid={"standard": [0.0], "dtr": [0.01]})
    store.write_config(config)
    assert store.read_config() == config
    assert '"lambda_grid"' in (tmp_path / "config.json").read_text(encoding="utf-8")


def test_summary_round_trip(tmp_path):
    store = FileRunStore(tmp_path)
    summaries = [
        make_summary(method="standard", lam=0.0, seed=0),
        make_summary(lam=0.03, seed=0, angle_deg=20.0, volatility=0.125),
    ]
    summaries[1] = summaries[1].model_copy(update={"bounds": make_bounds(holds_jv=False, beta_empirical=True)})
    for summary in summaries:
        store.write_bounds(summary.cell_id, summary.bounds)
    store.write_table(SUMMARY_FILE, summaries_to_frame(summaries))

    restored = store.read_summaries()
    assert restored == summaries
    assert restored[0].angle_deg is None and restored[0].checkpoint_path is None


def test_summary_columns_are_fixed():
    frame = summaries_to_frame([make_summary()])
    assert list(frame.columns) == SUMMARY_COLUMNS
    assert frame.loc[0, "holds_poincare"]


def test_tables_are_byte_stable(tmp_path):
    store = FileRunStore(tmp_path)
    frame = pd.DataFrame({"a": [0.1, 1 / 3, 0.3, 0.1 + 0.2], "b": ["w", "x", "y", "z"]})
    first = store.write_table("t1.csv", frame).read_bytes()
    second = store.write_table("nested/t2.csv", frame).read_bytes()
    assert first == second
    assert b"\r\n" not in first
    assert store.read_table("t1.csv")["a"].tolist() == [0.1, 1 / 3, 0.3, 0.1 + 0.2]


def test_json_replaces_non_finite(tmp_path):
    store = FileRunStore(tmp_path)
    store.write_json("meta.json", {"ratio": math.nan, "values": [1.0, math.inf], "nested": {"x": 2}})
    assert store.read_json("meta.json") == {"ratio": None, "values": [1.0, None], "nested": {"x": 2}}


def test_missing_run_files(tmp_path):
    store = FileRunStore(tmp_path)
    with pytest.raises(ConfigError):
        store.read_config()
    with pytest.raises(ConfigError):
        store.read_table(SUMMARY_FILE)
    with pytest.raises(ConfigError):
        store.read_json("selected_lambda.json")


def test_get_store(tmp_path):
    with pytest.raises(ConfigError):
        get_store(tmp_path / "absent", must_exist=True)
    assert get_store(tmp_path / "new").root == tmp_path / "new"
    plain = tmp_path / "file.txt"
    plain.write_text("x", encoding="utf-8")
    with pytest.raises(DataError):
        get_store(plain)
