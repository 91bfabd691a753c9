import json
import logging
import math
from pathlib import Path
from typing import Any, Protocol

import pandas as pd
from pydantic import ValidationError

from driftguard.errors import ConfigError, DataError
from driftguard.models import BoundReport, CellSummary, ExperimentConfig
from driftguard.services.monitoring import HazardTrace

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
SUMMARY_FILE = "summary.csv"
BOUNDS_DIR = "bounds"
HAZARD_DIR = "hazard"
CHECKPOINT_DIR = "checkpoints"

SUMMARY_COLUMNS = [
    "cell_id",
    "experiment",
    "seed",
    "method",
    "lambda",
    "angle_deg",
    "subspace",
    "val_loss",
    "val_gain",
    "deploy_risk",
    "volatility",
    "derivative_energy",
    "directional_gain",
    "terminal_risk",
    "poincare_rhs",
    "jv_rhs",
    "lowrank_rhs",
    "beta",
    "holds_poincare",
    "holds_jv",
    "holds_lowrank",
    "hazard_path",
    "checkpoint_path",
]

# Every CSV a run writes goes through these options so reruns are byte-identical.
CSV_OPTIONS = {"index": False, "float_format": "%.17g", "lineterminator": "\n"}


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    return value


def to_summary_row(summary: CellSummary) -> dict:
    bounds = summary.bounds
    return {
        "cell_id": summary.cell_id,
        "experiment": summary.experiment,
        "seed": summary.seed,
        "method": summary.method,
        "lambda": summary.lambda_,
        "angle_deg": summary.angle_deg,
        "subspace": summary.subspace,
        "val_loss": summary.val_loss,
        "val_gain": summary.val_gain,
        "deploy_risk": summary.deploy_risk,
        "volatility": summary.volatility,
        "derivative_energy": summary.derivative_energy,
        "directional_gain": summary.directional_gain,
        "terminal_risk": summary.terminal_risk,
        "poincare_rhs": bounds.poincare_rhs,
        "jv_rhs": bounds.jv_rhs,
        "lowrank_rhs": bounds.lowrank_rhs,
        "beta": bounds.beta,
        "holds_poincare": bounds.holds_poincare,
        "holds_jv": bounds.holds_jv,
        "holds_lowrank": bounds.holds_lowrank,
        "hazard_path": summary.hazard_path,
        "checkpoint_path": summary.checkpoint_path,
    }


def summaries_to_frame(summaries: list[CellSummary]) -> pd.DataFrame:
    return pd.DataFrame([to_summary_row(s) for s in summaries], columns=SUMMARY_COLUMNS)


def _optional(value: Any) -> Any:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return value


def to_summary(row: dict, bounds: BoundReport) -> CellSummary:
    """Inverse of to_summary_row; the bound report is read from its own JSON file."""
    return CellSummary(
        cell_id=row["cell_id"],
        experiment=row["experiment"],
        seed=int(row["seed"]),
        method=row["method"],
        lambda_=float(row["lambda"]),
        angle_deg=_optional(row.get("angle_deg")),
        subspace=row["subspace"],
        val_loss=float(row["val_loss"]),
        val_gain=float(row["val_gain"]),
        deploy_risk=float(row["deploy_risk"]),
        volatility=float(row["volatility"]),
        derivative_energy=float(row["derivative_energy"]),
        directional_gain=float(row["directional_gain"]),
        terminal_risk=float(row["terminal_risk"]),
        bounds=bounds,
        hazard_path=_optional(row.get("hazard_path")),
        checkpoint_path=_optional(row.get("checkpoint_path")),
    )


class RunStore(Protocol):
    @property
    def root(self) -> Path: ...
    def write_config(self, config: ExperimentConfig) -> None: ...
    def read_config(self) -> ExperimentConfig: ...
    def write_table(self, name: str, frame: pd.DataFrame) -> Path: ...
    def read_table(self, name: str) -> pd.DataFrame: ...
    def write_json(self, name: str, payload: Any) -> Path: ...
    def read_json(self, name: str) -> Any: ...
    def write_bounds(self, cell_id: str, report: BoundReport) -> Path: ...
    def read_bounds(self, cell_id: str) -> BoundReport: ...
    def write_hazard(self, cell_id: str, trace: HazardTrace) -> str: ...
    def write_checkpoint(self, cell_id: str, payload: bytes) -> str: ...
    def resolve(self, relative: str) -> Path: ...
    def read_summaries(self) -> list[CellSummary]: ...


class FileRunStore:
    """A run directory on the local file system."""

    def __init__(self, root: Path | str):
        self._root = Path(root)

    @property
    def root(self) -> Path:
        return self._root

    def _path(self, relative: str) -> Path:
        path = self._root / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def resolve(self, relative: str) -> Path:
        return self._root / relative

    def write_config(self, config: ExperimentConfig) -> None:
        payload = config.model_dump(mode="json", by_alias=True)
        self._path(CONFIG_FILE).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def read_config(self) -> ExperimentConfig:
        path = self.resolve(CONFIG_FILE)
        if not path.is_file():
            raise ConfigError(f"{self._root} is not a run directory (missing {CONFIG_FILE})")
        return load_config(path)

    def write_table(self, name: str, frame: pd.DataFrame) -> Path:
        path = self._path(name)
        frame.to_csv(path, **CSV_OPTIONS)
        return path

    def read_table(self, name: str) -> pd.DataFrame:
        path = self.resolve(name)
        if not path.is_file():
            raise ConfigError(f"run directory has no {name}")
        return pd.read_csv(path, float_precision="round_trip")

    def write_json(self, name: str, payload: Any) -> Path:
        path = self._path(name)
        path.write_text(json.dumps(_json_safe(payload), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
        return path

    def read_json(self, name: str) -> Any:
        path = self.resolve(name)
        if not path.is_file():
            raise ConfigError(f"run directory has no {name}")
        return json.loads(path.read_text(encoding="utf-8"))

    def write_bounds(self, cell_id: str, report: BoundReport) -> Path:
        return self.write_json(f"{BOUNDS_DIR}/{cell_id}.json", report.model_dump(mode="json"))

    def read_bounds(self, cell_id: str) -> BoundReport:
        return BoundReport(**self.read_json(f"{BOUNDS_DIR}/{cell_id}.json"))

    def write_hazard(self, cell_id: str, trace: HazardTrace) -> str:
        relative = f"{HAZARD_DIR}/{cell_id}.csv"
        self.write_table(relative, trace.to_frame())
        return relative

    def write_checkpoint(self, cell_id: str, payload: bytes) -> str:
        relative = f"{CHECKPOINT_DIR}/{cell_id}.bin"
        self._path(relative).write_bytes(payload)
        return relative

    def read_summaries(self) -> list[CellSummary]:
        frame = self.read_table(SUMMARY_FILE)
        frame = frame.astype(object).where(frame.notna(), None)
        return [to_summary(row, self.read_bounds(row["cell_id"])) for row in frame.to_dict(orient="records")]


def load_config(path: Path | str) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    try:
        return ExperimentConfig(**raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid experiment config {path}: {exc}") from exc


def get_store(run_dir: Path | str, must_exist: bool = False) -> RunStore:
    root = Path(run_dir)
    if must_exist and not root.is_dir():
        raise ConfigError(f"run directory {root} does not exist")
    if root.exists() and not root.is_dir():
        raise DataError(f"{root} exists and is not a directory")
    return FileRunStore(root)
