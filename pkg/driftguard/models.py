import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

LossKind = Literal["bce_logit", "mse"]
PenaltyKind = Literal["none", "isotropic", "dtr"]
Method = Literal["standard", "isotropic", "dtr"]
ExperimentKind = Literal[
    "synthetic_sanity",
    "directional_vs_isotropic",
    "misspecification",
    "air_quality",
    "tetouan",
]
SubspaceKind = Literal["target_orthogonal_sensor", "all_covariates"]

SYNTHETIC_EXPERIMENTS = ("synthetic_sanity", "directional_vs_isotropic", "misspecification")
REAL_EXPERIMENTS = ("air_quality", "tetouan")

PENALTY_FOR_METHOD: dict[str, str] = {"standard": "none", "isotropic": "isotropic", "dtr": "dtr"}

_SWEEP = [0.01, 0.03, 0.08]
_REAL_SWEEP = [3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 8e-2]

DEFAULT_LAMBDA_GRIDS: dict[str, dict[str, list[float]]] = {
    "synthetic_sanity": {"standard": [0.0], "dtr": _SWEEP},
    "directional_vs_isotropic": {"standard": [0.0], "isotropic": _SWEEP, "dtr": _SWEEP},
    "misspecification": {"standard": [0.0], "dtr": _SWEEP},
    "air_quality": {"standard": [0.0], "isotropic": _REAL_SWEEP, "dtr": _REAL_SWEEP},
    "tetouan": {"standard": [0.0], "isotropic": _REAL_SWEEP, "dtr": _REAL_SWEEP},
}

DEFAULT_DATA_FILES = {"air_quality": "AirQualityUCI.csv", "tetouan": "Tetuan City power consumption.csv"}


def _finite(name: str, value: float) -> float:
    if value is None or not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


class TrainConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    lambda_: float = Field(0.0, alias="lambda", ge=0.0, description="Penalty weight")
    penalty_kind: PenaltyKind = "none"
    loss_kind: LossKind = "bce_logit"
    epochs: int = Field(200, ge=1)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(1e-3, ge=0.0)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    seed: int = Field(0, ge=0, lt=2**64)


class TrainOverrides(BaseModel):
    """Optimizer knobs an experiment config may override; the rest is set per cell."""

    model_config = ConfigDict(extra="forbid")

    epochs: Optional[int] = Field(None, ge=1)
    batch_size: Optional[int] = Field(None, ge=1)
    learning_rate: Optional[float] = Field(None, ge=0.0)
    adam_beta1: Optional[float] = Field(None, ge=0.0, lt=1.0)
    adam_beta2: Optional[float] = Field(None, ge=0.0, lt=1.0)
    adam_eps: Optional[float] = Field(None, gt=0.0)


class DriftBump(BaseModel):
    model_config = ConfigDict(extra="forbid")

    amplitude: float
    center: float
    width: float = Field(..., gt=0.0)


class SyntheticConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_train: int = Field(2000, ge=1)
    n_val: int = Field(1000, ge=1)
    n_per_time: int = Field(512, ge=1)
    grid_size: int = Field(201, ge=2, description="Time points covering [0, 1]")
    drift_base: float = 0.55
    drift_bumps: list[DriftBump] = Field(
        default_factory=lambda: [
            DriftBump(amplitude=1.05, center=0.33, width=0.10),
            DriftBump(amplitude=0.75, center=0.76, width=0.08),
        ]
    )
    signal_mean: float = 1.05
    signal_std: float = Field(0.90, gt=0.0)
    nuisance_mean: float = 1.25
    nuisance_std: float = Field(0.55, gt=0.0)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentKind
    seeds: list[int] = Field(default_factory=list, description="Empty means the experiment default")
    lambda_grid: dict[Method, list[float]] = Field(default_factory=dict)
    hidden_dims: list[int] = Field(default_factory=list)
    train: TrainOverrides = Field(default_factory=TrainOverrides)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    data_path: Optional[str] = None
    output_dir: Optional[str] = None
    workers: Optional[int] = Field(None, ge=1)
    angles_deg: list[float] = Field(default_factory=lambda: [0.0, 20.0, 90.0])
    matched_lambda: float = Field(0.03, ge=0.0)
    subspace: Optional[SubspaceKind] = Field(None, description="DTR subspace for real data; defaults per dataset")
    ablation_subspaces: list[SubspaceKind] = Field(
        default_factory=list, description="Extra DTR subspaces trained alongside the primary one"
    )
    subspace_rank: Optional[int] = Field(None, ge=1)
    bootstrap_samples: int = Field(10_000, ge=1)
    bootstrap_seed: int = Field(0, ge=0)
    mc_tolerance: float = Field(0.05, ge=0.0)
    save_checkpoints: bool = True

    @model_validator(mode="after")
    def _apply_defaults(self) -> "ExperimentConfig":
        real = self.experiment in REAL_EXPERIMENTS
        if not self.seeds:
            self.seeds = list(range(10 if real else 20))
        if not self.lambda_grid:
            self.lambda_grid = {k: list(v) for k, v in DEFAULT_LAMBDA_GRIDS[self.experiment].items()}
        if not self.hidden_dims:
            self.hidden_dims = [64, 64] if real else [32, 32]
        if self.subspace_rank is None:
            self.subspace_rank = 2 if real else 1
        if self.subspace is None and real:
            self.subspace = "target_orthogonal_sensor" if self.experiment == "air_quality" else "all_covariates"
        if self.ablation_subspaces and not real:
            raise ValueError("subspace ablations only apply to the real-data experiments")
        self.ablation_subspaces = sorted(set(self.ablation_subspaces) - {self.subspace})

        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be unique")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        for method, grid in self.lambda_grid.items():
            if not grid:
                raise ValueError(f"lambda grid for '{method}' is empty")
            if any(lam < 0 or not math.isfinite(lam) for lam in grid):
                raise ValueError(f"lambda grid for '{method}' must hold finite non-negative values")
            if method == "standard" and any(lam != 0.0 for lam in grid):
                raise ValueError("standard training only admits lambda = 0")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims must be positive")
        if self.experiment == "misspecification" and not self.angles_deg:
            raise ValueError("misspecification needs at least one angle")
        return self

    @property
    def methods(self) -> list[str]:
        return sorted(self.lambda_grid)

    @property
    def is_real(self) -> bool:
        return self.experiment in REAL_EXPERIMENTS

    @property
    def loss_kind(self) -> str:
        return "mse" if self.is_real else "bce_logit"

    @property
    def default_epochs(self) -> int:
        return 100 if self.is_real else 200

    @property
    def dtr_subspaces(self) -> list[str]:
        if not self.is_real:
            return []
        return [self.subspace, *self.ablation_subspaces]

    def train_config(self, method: str, lambda_: float, seed: int) -> TrainConfig:
        overrides = self.train.model_dump(exclude_none=True)
        overrides.setdefault("epochs", self.default_epochs)
        return TrainConfig(
            lambda_=lambda_,
            penalty_kind=PENALTY_FOR_METHOD[method],
            loss_kind=self.loss_kind,
            seed=seed,
            **overrides,
        )


class BoundReport(BaseModel):
    """Every quantity of the bound chain for one frozen model on one deployment path."""

    horizon: float = Field(..., gt=0.0)
    volatility: float = Field(..., ge=0.0)
    derivative_energy: float = Field(..., ge=0.0)
    jv_energy: float = Field(..., ge=0.0)
    beta: float = Field(..., ge=0.0)
    beta_empirical: bool = False
    b_v: float = Field(..., ge=0.0)
    b_rho: float = Field(..., ge=0.0)
    poincare_rhs: float = Field(..., ge=0.0)
    jv_rhs: float = Field(..., ge=0.0)
    lowrank_rhs: float = Field(..., ge=0.0)
    holds_poincare: bool
    holds_jv: bool
    holds_lowrank: bool

    @field_validator(
        "volatility", "derivative_energy", "jv_energy", "beta", "b_v", "b_rho",
        "poincare_rhs", "jv_rhs", "lowrank_rhs",
    )
    @classmethod
    def _check_finite(cls, value: float, info) -> float:
        return _finite(info.field_name, value)


class CellSummary(BaseModel):
    """One (seed, method, lambda[, angle]) cell of an experiment."""

    model_config = ConfigDict(populate_by_name=True)

    cell_id: str
    experiment: ExperimentKind
    seed: int
    method: Method
    lambda_: float = Field(..., alias="lambda")
    angle_deg: Optional[float] = None
    subspace: str
    val_loss: float
    val_gain: float
    deploy_risk: float
    volatility: float
    derivative_energy: float
    directional_gain: float
    terminal_risk: float
    bounds: BoundReport
    hazard_path: Optional[str] = None
    checkpoint_path: Optional[str] = None

    @field_validator(
        "val_loss", "val_gain", "deploy_risk", "volatility", "derivative_energy",
        "directional_gain", "terminal_risk",
    )
    @classmethod
    def _check_finite(cls, value: float, info) -> float:
        return _finite(info.field_name, value)


class SelectedLambda(BaseModel):
    method: Method
    lambda_: float = Field(..., alias="lambda")
    mean_val_loss: float
    mean_val_gain: float

    model_config = ConfigDict(populate_by_name=True)


class PairedComparison(BaseModel):
    metric: str
    method_a: str
    method_b: str
    n: int
    wins: int
    mean_diff: float
    ci_low: float
    ci_high: float


class SpearmanResult(BaseModel):
    score: str
    rho: float
    n_pairs: int
    n_seeds: int
