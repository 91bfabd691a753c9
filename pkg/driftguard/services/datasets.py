"""
Data sources: the synthetic drifting stream and the two UCI deployment series.

Synthetic stream: Y ~ Bernoulli(1/2), S = 2Y - 1,
    x1 ~ N(1.05 S, 0.90^2),   x2 ~ N(1.25 S + δ(t), 0.55^2),
with drift speed δ'(t) = 0.55 + 1.05 exp(-((t-0.33)/0.10)^2) + 0.75 exp(-((t-0.76)/0.08)^2)
and δ(0) = 0. Draws at time t reuse the t = 0 noise, so a fixed seed describes sample paths
X_t = X_0 + δ(t) e_2.
"""
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import special

from driftguard.errors import CountMismatchError, DataError, ShapeError
from driftguard.models import SyntheticConfig
from driftguard.utils.hashing import file_sha256
from driftguard.utils.rng import substream

Role = Literal["train", "val", "deploy"]

MISSING_MARKER = -200.0

AIR_QUALITY_TARGET = "CO(GT)"
AIR_QUALITY_FEATURES = ["PT08.S1(CO)", "PT08.S2(NMHC)", "PT08.S3(NOx)", "PT08.S4(NO2)", "PT08.S5(O3)", "T", "RH", "AH"]
AIR_QUALITY_SENSOR_COLS = (0, 1, 2, 3, 4)
AIR_QUALITY_COUNTS = (1573, 580, 5191)
AIR_QUALITY_DEPLOY_BLOCKS = 20

TETOUAN_TARGET = "Zone 1 Power Consumption"
TETOUAN_FEATURES = ["Temperature", "Humidity", "Wind Speed", "general diffuse flows", "diffuse flows"]
TETOUAN_COUNTS = (17280, 8784, 26352)
TETOUAN_DEPLOY_BLOCKS = 6

logger = logging.getLogger(__name__)


def _drift_params(config: Optional[SyntheticConfig]) -> tuple[float, list[tuple[float, float, float]]]:
    config = config or SyntheticConfig()
    return config.drift_base, [(b.amplitude, b.center, b.width) for b in config.drift_bumps]


def drift_speed(t, config: Optional[SyntheticConfig] = None):
    base, bumps = _drift_params(config)
    t = np.asarray(t, dtype=np.float64)
    speed = np.full_like(t, base)
    for amplitude, center, width in bumps:
        speed = speed + amplitude * np.exp(-(((t - center) / width) ** 2))
    return speed if speed.ndim else float(speed)


def drift_offset(t, config: Optional[SyntheticConfig] = None):
    """Closed-form δ(t) = ∫_0^t δ'(s) ds via the error function."""
    base, bumps = _drift_params(config)
    t = np.asarray(t, dtype=np.float64)
    offset = base * t
    for amplitude, center, width in bumps:
        scale = amplitude * width * math.sqrt(math.pi) / 2.0
        offset = offset + scale * (special.erf((t - center) / width) - special.erf(-center / width))
    return offset if offset.ndim else float(offset)


def sample_synthetic(
    t: float,
    n: int,
    seed: int,
    config: Optional[SyntheticConfig] = None,
    purpose: str = "sampling",
) -> tuple[np.ndarray, np.ndarray]:
    """Features n×2 and labels in {0, 1} at deployment time t."""
    if n < 1:
        raise ShapeError("n must be at least 1")
    config = config or SyntheticConfig()
    rng = substream(seed, purpose)
    labels = rng.integers(0, 2, size=n).astype(np.float64)
    signs = 2.0 * labels - 1.0
    noise = rng.standard_normal((n, 2))
    features = np.empty((n, 2))
    features[:, 0] = config.signal_mean * signs + config.signal_std * noise[:, 0]
    features[:, 1] = config.nuisance_mean * signs + config.nuisance_std * noise[:, 1]
    if t != 0.0:
        features[:, 1] += drift_offset(t, config)
    return features, labels


def synthetic_grid(config: Optional[SyntheticConfig] = None) -> np.ndarray:
    config = config or SyntheticConfig()
    return np.linspace(0.0, 1.0, config.grid_size)


@dataclass(frozen=True)
class BlockedSeries:
    """
    Standardized covariates and targets split into ordered blocks with train/val/deploy roles.

    `targets` are in reporting units. A model score f maps to those units by
    score_offset + score_scale * f; training uses (targets - score_offset) / score_scale.
    """

    name: str
    features: np.ndarray
    targets: np.ndarray
    block_ids: np.ndarray
    roles: tuple[Role, ...]
    block_time_spans: tuple[tuple[float, float], ...]
    feature_means: np.ndarray
    feature_stds: np.ndarray
    feature_names: tuple[str, ...]
    target_name: str
    score_offset: float = 0.0
    score_scale: float = 1.0
    source_sha256: Optional[str] = None
    sensor_cols: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        n = self.features.shape[0]
        if self.targets.shape != (n,) or self.block_ids.shape != (n,):
            raise ShapeError("features, targets and block_ids must share the row count")
        if n and np.any(np.diff(self.block_ids) < 0):
            raise DataError("block_ids must be nondecreasing in row order")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise DataError("series contains NaN or infinite values after cleaning")
        if np.any(self.feature_stds <= 0):
            raise DataError("every retained feature needs a positive training std")
        if len(self.roles) != len(self.block_time_spans):
            raise ShapeError("one role and one time span per block")
        if not self.score_scale > 0:
            raise DataError("score_scale must be positive")

    @property
    def n_blocks(self) -> int:
        return len(self.roles)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def blocks_with_role(self, role: Role) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r == role]

    def rows(self, role: Role) -> tuple[np.ndarray, np.ndarray]:
        mask = np.isin(self.block_ids, self.blocks_with_role(role))
        return self.features[mask], self.targets[mask]

    def block(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        mask = self.block_ids == index
        return self.features[mask], self.targets[mask]

    def counts(self) -> tuple[int, int, int]:
        return tuple(int(self.rows(role)[0].shape[0]) for role in ("train", "val", "deploy"))  # type: ignore[return-value]

    def deploy_blocks(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [self.block(i) for i in self.blocks_with_role("deploy")]

    def deploy_block_means(self) -> np.ndarray:
        return np.vstack([x.mean(axis=0) for x, _ in self.deploy_blocks()])

    def deploy_times(self) -> np.ndarray:
        """Deploy block midpoints on the deployment horizon normalized to [0, 1]."""
        spans = [self.block_time_spans[i] for i in self.blocks_with_role("deploy")]
        start, end = spans[0][0], spans[-1][1]
        return np.array([((a + b) / 2.0 - start) / (end - start) for a, b in spans])

    def training_targets(self, targets: np.ndarray) -> np.ndarray:
        return (targets - self.score_offset) / self.score_scale

    def to_target_units(self, scores: np.ndarray) -> np.ndarray:
        return self.score_offset + self.score_scale * scores


def _standardize(frame: pd.DataFrame, columns: Sequence[str], train_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    raw = frame[list(columns)].to_numpy(dtype=np.float64)
    means = raw[train_mask].mean(axis=0)
    stds = raw[train_mask].std(axis=0)
    if np.any(stds <= 0):
        raise DataError("a feature is constant on the training window")
    return (raw - means) / stds, means, stds


def _assign_blocks(timestamps: pd.Series, edges: list[pd.Timestamp]) -> np.ndarray:
    """Block index per row for half-open windows [edges[i], edges[i+1]); -1 outside."""
    values = timestamps.to_numpy()
    ids = np.searchsorted(np.array(edges, dtype="datetime64[ns]"), values, side="right") - 1
    ids[(ids < 0) | (ids >= len(edges) - 1)] = -1
    return ids


def _check_counts(name: str, series: BlockedSeries, counts: tuple[int, int, int], n_deploy_blocks: int) -> None:
    found = series.counts()
    deploy_blocks = len(series.blocks_with_role("deploy"))
    if found != counts or deploy_blocks != n_deploy_blocks:
        raise CountMismatchError(name, (*counts, n_deploy_blocks), (*found, deploy_blocks))


def _build_series(
    name: str,
    frame: pd.DataFrame,
    edges: list[pd.Timestamp],
    roles: tuple[Role, ...],
    features: Sequence[str],
    target: str,
    standardize_target: bool,
    source: Path,
    sensor_cols: tuple[int, ...] = (),
) -> BlockedSeries:
    ids = _assign_blocks(frame["timestamp"], edges)
    frame = frame.loc[ids >= 0].copy()
    ids = ids[ids >= 0]
    empty = sorted(set(range(len(roles))) - set(np.unique(ids).tolist()))
    if empty:
        raise DataError(f"{name}: blocks {empty} have no rows after cleaning")
    train_mask = ids == roles.index("train")
    x, means, stds = _standardize(frame, features, train_mask)
    y = frame[target].to_numpy(dtype=np.float64)
    y_mean, y_std = float(y[train_mask].mean()), float(y[train_mask].std())
    if standardize_target:
        y = (y - y_mean) / y_std
        offset, scale = 0.0, 1.0
    else:
        offset, scale = y_mean, y_std

    origin = edges[0]
    spans = tuple(
        ((a - origin).total_seconds() / 86400.0, (b - origin).total_seconds() / 86400.0)
        for a, b in zip(edges[:-1], edges[1:])
    )
    return BlockedSeries(
        name=name,
        features=x,
        targets=y,
        block_ids=ids.astype(np.int64),
        roles=roles,
        block_time_spans=spans,
        feature_means=means,
        feature_stds=stds,
        feature_names=tuple(features),
        target_name=target,
        score_offset=offset,
        score_scale=scale,
        source_sha256=file_sha256(source),
        sensor_cols=sensor_cols,
    )


def read_air_quality_frame(path: Path | str) -> pd.DataFrame:
    """Parse the semicolon/decimal-comma UCI file into a timestamped numeric frame."""
    source = Path(path)
    if not source.exists():
        raise DataError(f"Air Quality CSV not found at {source}")
    raw = pd.read_csv(source, sep=";", decimal=",", header=0)
    # The UCI file ships two empty trailing columns and blank trailing rows.
    raw = raw.loc[:, ~raw.columns.astype(str).str.startswith("Unnamed")]
    raw = raw.dropna(subset=["Date", "Time"])
    missing = [c for c in [AIR_QUALITY_TARGET, *AIR_QUALITY_FEATURES] if c not in raw.columns]
    if missing:
        raise DataError(f"Air Quality CSV is missing columns {missing}")
    frame = pd.DataFrame(
        {
            "timestamp": pd.to_datetime(
                raw["Date"].astype(str) + " " + raw["Time"].astype(str),
                format="%d/%m/%Y %H.%M.%S",
                errors="coerce",
            )
        }
    )
    for column in [AIR_QUALITY_TARGET, *AIR_QUALITY_FEATURES]:
        frame[column] = pd.to_numeric(raw[column], errors="coerce")
    frame = frame.dropna(subset=["timestamp"]).sort_values("timestamp", kind="stable").reset_index(drop=True)
    return frame


def load_air_quality(path: Path | str, check_counts: bool = True) -> BlockedSeries:
    frame = read_air_quality_frame(path)
    if frame.empty:
        raise DataError("Air Quality CSV has no timestamped rows")

    # Calendar windows on the raw timeline, anchored at the first valid timestamp.
    origin = frame["timestamp"].iloc[0]
    last = frame["timestamp"].iloc[-1]
    week = pd.Timedelta(days=7)
    edges = [origin, origin + 12 * week, origin + 16 * week]
    while edges[-1] <= last:
        edges.append(edges[-1] + 2 * week)
    roles: tuple[Role, ...] = ("train", "val", *(["deploy"] * (len(edges) - 3)))  # type: ignore[assignment]

    columns = [AIR_QUALITY_TARGET, *AIR_QUALITY_FEATURES]
    values = frame[columns]
    keep = values.notna().all(axis=1) & (values != MISSING_MARKER).all(axis=1)
    cleaned = frame.loc[keep].reset_index(drop=True)
    logger.info("Air Quality: kept %d of %d rows after removing the -200 marker", len(cleaned), len(frame))

    # Clip the final nominal window to the data end so midpoints reflect observed time.
    edges[-1] = min(edges[-1], last + pd.Timedelta(hours=1))
    series = _build_series(
        "air_quality",
        cleaned,
        edges,
        roles,
        AIR_QUALITY_FEATURES,
        AIR_QUALITY_TARGET,
        standardize_target=True,
        source=Path(path),
        sensor_cols=AIR_QUALITY_SENSOR_COLS,
    )
    if check_counts:
        _check_counts("air_quality", series, AIR_QUALITY_COUNTS, AIR_QUALITY_DEPLOY_BLOCKS)
    return series


def read_tetouan_frame(path: Path | str) -> pd.DataFrame:
    source = Path(path)
    if not source.exists():
        raise DataError(f"Tetouan CSV not found at {source}")
    raw = pd.read_csv(source)
    raw.columns = [" ".join(str(c).split()) for c in raw.columns]
    missing = [c for c in ["DateTime", TETOUAN_TARGET, *TETOUAN_FEATURES] if c not in raw.columns]
    if missing:
        raise DataError(f"Tetouan CSV is missing columns {missing}")
    frame = pd.DataFrame({"timestamp": pd.to_datetime(raw["DateTime"], format="%m/%d/%Y %H:%M", errors="coerce")})
    for column in [TETOUAN_TARGET, *TETOUAN_FEATURES]:
        frame[column] = pd.to_numeric(raw[column], errors="coerce")
    frame = frame.dropna().sort_values("timestamp", kind="stable").reset_index(drop=True)
    return frame


def load_tetouan(path: Path | str, check_counts: bool = True) -> BlockedSeries:
    frame = read_tetouan_frame(path)
    if frame.empty:
        raise DataError("Tetouan CSV has no timestamped rows")
    year = int(frame["timestamp"].iloc[0].year)

    def month(m: int) -> pd.Timestamp:
        # Month 13 is January of the following year.
        return pd.Timestamp(datetime(year + (m - 1) // 12, (m - 1) % 12 + 1, 1))
    edges = [month(1), month(5), month(7), *[month(m) for m in range(8, 14)]]
    roles: tuple[Role, ...] = ("train", "val", *(["deploy"] * TETOUAN_DEPLOY_BLOCKS))  # type: ignore[assignment]
    last = frame["timestamp"].iloc[-1]
    edges[-1] = min(edges[-1], last + pd.Timedelta(minutes=10))
    series = _build_series(
        "tetouan",
        frame,
        edges,
        roles,
        TETOUAN_FEATURES,
        TETOUAN_TARGET,
        standardize_target=False,
        source=Path(path),
    )
    if check_counts:
        _check_counts("tetouan", series, TETOUAN_COUNTS, TETOUAN_DEPLOY_BLOCKS)
    return series


def load_series(experiment: str, path: Path | str, check_counts: bool = True) -> BlockedSeries:
    if experiment == "air_quality":
        return load_air_quality(path, check_counts)
    if experiment == "tetouan":
        return load_tetouan(path, check_counts)
    raise DataError(f"no loader for experiment '{experiment}'")


def write_cache(series: BlockedSeries, path: Path | str) -> Path:
    """Canonical cleaned copy: block_id, role, standardized features, target."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(series.features, columns=list(series.feature_names))
    frame.insert(0, "role", [series.roles[i] for i in series.block_ids])
    frame.insert(0, "block_id", series.block_ids)
    frame[series.target_name] = series.targets
    frame.to_csv(target, index=False, float_format="%.17g", lineterminator="\n")
    return target
