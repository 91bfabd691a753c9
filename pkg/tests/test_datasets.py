import math

import numpy as np
import pandas as pd
import pytest
from scipy import integrate

from driftguard.errors import CountMismatchError, DataError
from driftguard.models import DEFAULT_DATA_FILES
from driftguard.services.datasets import (
    AIR_QUALITY_FEATURES,
    AIR_QUALITY_TARGET,
    TETOUAN_FEATURES,
    TETOUAN_TARGET,
    drift_offset,
    drift_speed,
    load_air_quality,
    load_series,
    load_tetouan,
    sample_synthetic,
    write_cache,
)
from driftguard.settings import get_settings

AQ_COLUMNS = [
    "Date", "Time", "CO(GT)", "PT08.S1(CO)", "NMHC(GT)", "C6H6(GT)", "PT08.S2(NMHC)", "NOx(GT)",
    "PT08.S3(NOx)", "NO2(GT)", "PT08.S4(NO2)", "PT08.S5(O3)", "T", "RH", "AH",
]
MARKED_ROWS = {5: AIR_QUALITY_TARGET, 100: "T", 3000: "PT08.S3(NOx)"}


@pytest.fixture
def air_quality_csv(tmp_path):
    stamps = pd.date_range("2004-03-10 18:00", periods=24 * 7 * 24, freq="h")
    rng = np.random.default_rng(0)
    frame = pd.DataFrame({"Date": stamps.strftime("%d/%m/%Y"), "Time": stamps.strftime("%H.%M.%S")})
    for column in AQ_COLUMNS[2:]:
        frame[column] = np.round(rng.uniform(1.0, 1500.0, len(stamps)), 1)
    for row, column in MARKED_ROWS.items():
        frame.loc[row, column] = -200
    body = frame.to_csv(sep=";", decimal=",", index=False, lineterminator="\n")
    # Two empty trailing columns per line and blank rows at the end, as in the UCI file.
    lines = [line + ";;" for line in body.splitlines()]
    lines += [";" * 16, ";" * 16]
    path = tmp_path / "AirQualityUCI.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path, len(stamps)


@pytest.fixture
def tetouan_csv(tmp_path):
    stamps = pd.date_range("2017-01-01 00:00", "2017-12-30 23:50", freq="10min")
    rng = np.random.default_rng(1)
    frame = pd.DataFrame({"DateTime": stamps.strftime("%m/%d/%Y %H:%M")})
    for column in TETOUAN_FEATURES:
        frame[column] = rng.uniform(0.0, 100.0, len(stamps))
    frame[TETOUAN_TARGET] = rng.uniform(2e4, 4e4, len(stamps))
    frame["Zone 2  Power Consumption"] = rng.uniform(1e4, 2e4, len(stamps))
    path = tmp_path / "Tetuan City power consumption.csv"
    frame.to_csv(path, index=False)
    return path


class TestDriftSchedule:
    def test_speed_at_first_bump(self):
        expected = 0.55 + 1.05 + 0.75 * math.exp(-(((0.33 - 0.76) / 0.08) ** 2))
        assert drift_speed(0.33) == pytest.approx(expected, abs=1e-15)
        assert drift_speed(0.33) == pytest.approx(1.600, abs=1e-3)

    def test_offset_starts_at_zero(self):
        assert drift_offset(0.0) == 0.0

    def test_offset_matches_quadrature(self):
        value, _ = integrate.quad(drift_speed, 0.0, 1.0, points=[0.33, 0.76], epsabs=1e-13, epsrel=1e-13)
        assert drift_offset(1.0) == pytest.approx(value, abs=1e-9)

    def test_vectorized(self):
        grid = np.linspace(0.0, 1.0, 5)
        assert drift_offset(grid).shape == (5,)
        assert np.all(np.diff(drift_offset(grid)) > 0)


class TestSyntheticSampling:
    def test_labels_and_balance(self):
        _, labels = sample_synthetic(0.0, 100_000, seed=3)
        assert set(np.unique(2 * labels - 1)) == {-1.0, 1.0}
        assert abs(labels.mean() - 0.5) <= 0.01

    def test_class_conditional_means(self):
        x, labels = sample_synthetic(0.0, 1_000_000, seed=4)
        for sign in (-1.0, 1.0):
            rows = x[2 * labels - 1 == sign]
            assert abs(rows[:, 1].mean() - 1.25 * sign) <= 4 * 0.55 / math.sqrt(rows.shape[0])
            assert abs(rows[:, 0].mean() - 1.05 * sign) <= 4 * 0.90 / math.sqrt(rows.shape[0])

    def test_drift_translates_the_same_cohort(self):
        base, labels = sample_synthetic(0.0, 50, seed=5)
        later, later_labels = sample_synthetic(0.7, 50, seed=5)
        np.testing.assert_array_equal(labels, later_labels)
        np.testing.assert_array_equal(later[:, 0], base[:, 0])
        np.testing.assert_allclose(later[:, 1] - base[:, 1], drift_offset(0.7), rtol=1e-12, atol=1e-12)

    def test_deterministic_per_seed_and_purpose(self):
        a, _ = sample_synthetic(0.2, 20, seed=1, purpose="train")
        b, _ = sample_synthetic(0.2, 20, seed=1, purpose="train")
        c, _ = sample_synthetic(0.2, 20, seed=1, purpose="validation")
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestAirQuality:
    def test_cleaning_and_splits(self, air_quality_csv):
        path, n_rows = air_quality_csv
        series = load_air_quality(path, check_counts=False)
        train, val, deploy = series.counts()
        assert train + val + deploy == n_rows - len(MARKED_ROWS)
        assert train == 12 * 7 * 24 - 2
        assert val == 4 * 7 * 24
        assert series.roles.count("deploy") == 4
        assert series.feature_names == tuple(AIR_QUALITY_FEATURES)
        assert np.all(np.diff(series.block_ids) >= 0)

    def test_training_window_is_standardized(self, air_quality_csv):
        series = load_air_quality(air_quality_csv[0], check_counts=False)
        x, y = series.rows("train")
        assert np.max(np.abs(x.mean(axis=0))) <= 1e-9
        assert np.max(np.abs(x.std(axis=0) - 1.0)) <= 1e-9
        assert abs(y.mean()) <= 1e-9
        assert series.score_offset == 0.0 and series.score_scale == 1.0

    def test_count_guard(self, air_quality_csv):
        with pytest.raises(CountMismatchError) as info:
            load_air_quality(air_quality_csv[0])
        assert info.value.expected == (1573, 580, 5191, 20)

    def test_deterministic(self, air_quality_csv):
        first = load_air_quality(air_quality_csv[0], check_counts=False)
        second = load_air_quality(air_quality_csv[0], check_counts=False)
        np.testing.assert_array_equal(first.features, second.features)
        assert first.source_sha256 == second.source_sha256

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_air_quality(tmp_path / "absent.csv")

    def test_cache_layout(self, air_quality_csv, tmp_path):
        series = load_air_quality(air_quality_csv[0], check_counts=False)
        cached = pd.read_csv(write_cache(series, tmp_path / "cache" / "cleaned.csv"))
        assert list(cached.columns) == ["block_id", "role", *AIR_QUALITY_FEATURES, AIR_QUALITY_TARGET]
        assert len(cached) == sum(series.counts())


class TestTetouan:
    def test_calendar_splits(self, tetouan_csv):
        series = load_tetouan(tetouan_csv)
        assert series.counts() == (17280, 8784, 26352)
        assert series.roles.count("deploy") == 6

    def test_target_stays_in_raw_units(self, tetouan_csv):
        series = load_tetouan(tetouan_csv)
        _, y = series.rows("train")
        assert y.mean() > 1e4
        assert series.score_offset == pytest.approx(y.mean())
        np.testing.assert_allclose(series.to_target_units(series.training_targets(y)), y, rtol=1e-12)

    def test_deploy_times_are_normalized(self, tetouan_csv):
        times = load_tetouan(tetouan_csv).deploy_times()
        assert times.shape == (6,)
        assert 0.0 < times[0] < times[-1] < 1.0


@pytest.mark.real_data
@pytest.mark.parametrize(
    "experiment, counts, blocks",
    [("air_quality", (1573, 580, 5191), 20), ("tetouan", (17280, 8784, 26352), 6)],
)
def test_published_split_counts(experiment, counts, blocks):
    path = get_settings().data_dir / DEFAULT_DATA_FILES[experiment]
    if not path.is_file():
        pytest.skip(f"{path} not present")
    series = load_series(experiment, path)
    assert series.counts() == counts
    assert series.roles.count("deploy") == blocks
