"""
Per-cell execution: train one (seed, method, λ[, angle | subspace]) model and evaluate it on
its frozen deployment path.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from driftguard.errors import ConfigError
from driftguard.models import BoundReport, CellSummary, ExperimentConfig
from driftguard.queue import CellSpec
from driftguard.services import deployment_eval as de
from driftguard.services.datasets import (
    BlockedSeries,
    drift_offset,
    drift_speed,
    sample_synthetic,
    synthetic_grid,
)
from driftguard.services.drift_geometry import (
    DriftSubspace,
    alignment,
    all_covariates_subspace,
    identity_subspace,
    rotated_subspace,
    target_orthogonal_sensor_subspace,
    true_axis,
)
from driftguard.services.mlp import MlpModel, dump_checkpoint, forward, init_mlp
from driftguard.services.monitoring import HazardTrace, hazard_trace
from driftguard.services.objectives import loss, penalty_value, train
from driftguard.utils.rng import substream
from driftguard.utils.time import elapsed_ms, now_ms

logger = logging.getLogger(__name__)

SYNTHETIC_DRIFT_AXIS = 1


@dataclass
class ExperimentContext:
    config: ExperimentConfig
    series: Optional[BlockedSeries] = None
    subspaces: dict[str, DriftSubspace] = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.series.dim if self.series is not None else 2

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.config.hidden_dims, 1]

    @property
    def primary_subspace(self) -> DriftSubspace:
        if self.series is None:
            return true_axis(2, SYNTHETIC_DRIFT_AXIS)
        return self.subspaces[self.config.subspace]


@dataclass
class CellResult:
    spec: CellSpec
    summary: CellSummary
    checkpoint: bytes
    risk: de.RiskTrajectory
    hazard: Optional[HazardTrace] = None


def build_context(config: ExperimentConfig, series: Optional[BlockedSeries] = None) -> ExperimentContext:
    """Estimate every DTR subspace the run needs, once, before any cell trains."""
    ctx = ExperimentContext(config=config, series=series)
    if not config.is_real:
        return ctx
    if series is None:
        raise ConfigError(f"experiment '{config.experiment}' needs a loaded dataset")
    train_x, train_y = series.rows("train")
    means = series.deploy_block_means()
    for kind in config.dtr_subspaces:
        if kind == "target_orthogonal_sensor":
            subspace = target_orthogonal_sensor_subspace(
                train_x, series.training_targets(train_y), means, series.sensor_cols, config.subspace_rank
            )
        else:
            subspace = all_covariates_subspace(means, config.subspace_rank)
        if subspace.ridge_fallback:
            logger.warning("%s subspace used the ridge fallback for the target direction", kind)
        ctx.subspaces[kind] = subspace
    return ctx


def plan_cells(config: ExperimentConfig) -> list[CellSpec]:
    specs: list[CellSpec] = []
    for seed in config.seeds:
        for method in config.methods:
            for lam in config.lambda_grid[method]:
                if method == "standard":
                    specs.append(CellSpec(config.experiment, seed, method, lam, "none"))
                elif method == "isotropic":
                    specs.append(CellSpec(config.experiment, seed, method, lam, "identity"))
                elif config.experiment == "misspecification":
                    specs.extend(
                        CellSpec(config.experiment, seed, method, lam, "rotated", angle) for angle in config.angles_deg
                    )
                elif config.is_real:
                    specs.extend(CellSpec(config.experiment, seed, method, lam, kind) for kind in config.dtr_subspaces)
                else:
                    specs.append(CellSpec(config.experiment, seed, method, lam, "true_axis"))
    return specs


def cell_subspace(ctx: ExperimentContext, spec: CellSpec) -> DriftSubspace:
    if spec.method == "isotropic":
        return identity_subspace(ctx.input_dim)
    if spec.method == "standard":
        return ctx.primary_subspace
    if spec.angle_deg is not None:
        return rotated_subspace(math.radians(spec.angle_deg))
    if ctx.series is None:
        return true_axis(2, SYNTHETIC_DRIFT_AXIS)
    return ctx.subspaces[spec.subspace]


def _bound_subspace(ctx: ExperimentContext, spec: CellSpec) -> DriftSubspace:
    # B_V/B_ρ are reported against the subspace DTR penalized; baselines use the primary one.
    return cell_subspace(ctx, spec) if spec.method == "dtr" else ctx.primary_subspace


def _train_cell(ctx: ExperimentContext, spec: CellSpec, x: np.ndarray, y: np.ndarray) -> MlpModel:
    model_init = init_mlp(ctx.layer_dims, substream(spec.seed, "init"))
    config = ctx.config.train_config(spec.method, spec.lambda_, spec.seed)
    subspace = cell_subspace(ctx, spec) if spec.method == "dtr" else None
    return train(model_init, x, y, config, subspace)


def _gain(model: MlpModel, samples: np.ndarray, subspace: DriftSubspace) -> float:
    return penalty_value(model, samples, subspace)


def _summary(spec: CellSpec, subspace_label: str, **metrics) -> CellSummary:
    return CellSummary(
        cell_id=spec.cell_id,
        experiment=spec.experiment,
        seed=spec.seed,
        method=spec.method,
        lambda_=spec.lambda_,
        angle_deg=spec.angle_deg,
        subspace=subspace_label,
        **metrics,
    )


def _synthetic_deployment(ctx: ExperimentContext, model: MlpModel, seed: int) -> tuple[de.RiskTrajectory, list[np.ndarray], de.TangentPath]:
    cfg = ctx.config.synthetic
    cohort_x, cohort_y = sample_synthetic(0.0, cfg.n_per_time, seed, cfg, purpose="deployment")
    times = synthetic_grid(cfg)
    axis = true_axis(2, SYNTHETIC_DRIFT_AXIS)
    samples, path = de.translated_path(
        cohort_x, axis.basis[:, 0], drift_offset(times, cfg), drift_speed(times, cfg), times
    )
    risk = de.RiskTrajectory(times, [loss("bce_logit", forward(model, x), cohort_y) for x in samples])
    return risk, samples, path


def _mse(series: BlockedSeries, model: MlpModel, x: np.ndarray, y: np.ndarray) -> float:
    return loss("mse", series.to_target_units(forward(model, x)), y)


def _real_deployment(series: BlockedSeries, model: MlpModel) -> tuple[de.RiskTrajectory, de.TangentPath, float, float]:
    """Blockwise risk, the blockwise tangent path, pooled deployment MSE and the empirical β."""
    blocks = series.deploy_blocks()
    times = series.deploy_times()
    risk = de.RiskTrajectory(times, [_mse(series, model, x, y) for x, y in blocks])
    deploy_x, deploy_y = series.rows("deploy")
    scores = series.to_target_units(forward(model, deploy_x))
    beta = de.beta_for_loss("mse", scores, deploy_y, series.score_scale)
    path = de.blockwise_path([x for x, _ in blocks], times)
    return risk, path, loss("mse", scores, deploy_y), beta


def run_synthetic_cell(ctx: ExperimentContext, spec: CellSpec) -> CellResult:
    cfg = ctx.config.synthetic
    train_x, train_y = sample_synthetic(0.0, cfg.n_train, spec.seed, cfg, purpose="train")
    val_x, val_y = sample_synthetic(0.0, cfg.n_val, spec.seed, cfg, purpose="validation")
    model = _train_cell(ctx, spec, train_x, train_y)
    axis = true_axis(2, SYNTHETIC_DRIFT_AXIS)

    risk, samples, path = _synthetic_deployment(ctx, model, spec.seed)
    per_time_gain = [_gain(model, x, axis) for x in samples]
    bounds = de.bound_report(risk, model, path, _bound_subspace(ctx, spec), de.beta_for_loss("bce_logit"))
    summary = _summary(
        spec,
        spec.subspace,
        val_loss=loss("bce_logit", forward(model, val_x), val_y),
        val_gain=_gain(model, val_x, axis),
        deploy_risk=de.time_mean(risk),
        volatility=bounds.volatility,
        derivative_energy=bounds.derivative_energy,
        directional_gain=float(np.average(per_time_gain, weights=path.weights)),
        terminal_risk=float(risk.values[-1]),
        bounds=bounds,
    )
    return CellResult(spec=spec, summary=summary, checkpoint=dump_checkpoint(model), risk=risk)


def run_real_cell(ctx: ExperimentContext, spec: CellSpec) -> CellResult:
    series = ctx.series
    train_x, train_y = series.rows("train")
    val_x, val_y = series.rows("val")
    model = _train_cell(ctx, spec, train_x, series.training_targets(train_y))

    risk, path, deploy_mse, beta = _real_deployment(series, model)
    bounds = de.bound_report(risk, model, path, _bound_subspace(ctx, spec), beta, beta_empirical=True)
    trace = hazard_trace(model, [x for x, _ in series.deploy_blocks()])
    summary = _summary(
        spec,
        spec.subspace,
        val_loss=_mse(series, model, val_x, val_y),
        val_gain=_gain(model, val_x, ctx.primary_subspace),
        deploy_risk=deploy_mse,
        volatility=bounds.volatility,
        derivative_energy=bounds.derivative_energy,
        directional_gain=trace.mean_valid_gain(),
        terminal_risk=float(risk.values[-1]),
        bounds=bounds,
    )
    return CellResult(spec=spec, summary=summary, checkpoint=dump_checkpoint(model), risk=risk, hazard=trace)


def run_cell(ctx: ExperimentContext, spec: CellSpec) -> CellResult:
    started = now_ms()
    logger.info("Cell %s started", spec.cell_id)
    result = run_real_cell(ctx, spec) if ctx.config.is_real else run_synthetic_cell(ctx, spec)
    logger.info("Cell %s finished in %d ms", spec.cell_id, elapsed_ms(started))
    return result


def evaluate_checkpoint(ctx: ExperimentContext, model: MlpModel, spec: CellSpec) -> tuple[de.RiskTrajectory, BoundReport]:
    """Re-evaluate a stored model on the run's deployment path without retraining."""
    if ctx.config.is_real:
        risk, path, _, beta = _real_deployment(ctx.series, model)
        return risk, de.bound_report(risk, model, path, _bound_subspace(ctx, spec), beta, beta_empirical=True)
    risk, _, path = _synthetic_deployment(ctx, model, spec.seed)
    return risk, de.bound_report(risk, model, path, _bound_subspace(ctx, spec), de.beta_for_loss("bce_logit"))


RATIO_METRICS = ("derivative_energy", "volatility", "directional_gain", "terminal_risk")


def _mean_metric(summaries: list[CellSummary], metric: str) -> float:
    return float(np.mean([getattr(s, metric) for s in summaries]))


def _drift_alignment(angle_deg: Optional[float]) -> Optional[float]:
    if angle_deg is None:
        return None
    return alignment(rotated_subspace(math.radians(angle_deg)), true_axis(2, SYNTHETIC_DRIFT_AXIS).basis[:, 0])


def misspecification_report(summaries: list[CellSummary], lambda_: float) -> list[dict]:
    """
    Metric ratios at one λ for every configured angle, relative to aligned DTR (the smallest
    angle present). The standard model is reported against the same reference.
    Each DTR row also carries the alignment of its penalized direction with the true drift axis.
    """
    dtr = [s for s in summaries if s.method == "dtr" and s.lambda_ == lambda_ and s.angle_deg is not None]
    if not dtr:
        raise ConfigError(f"no misspecification cells at lambda={lambda_:g}")
    angles = sorted({s.angle_deg for s in dtr})
    reference = [s for s in dtr if s.angle_deg == angles[0]]
    base = {m: _mean_metric(reference, m) for m in RATIO_METRICS}

    groups: list[tuple[str, Optional[float], list[CellSummary]]] = [
        (f"dtr_{angle:g}deg", angle, [s for s in dtr if s.angle_deg == angle]) for angle in angles
    ]
    standard = [s for s in summaries if s.method == "standard"]
    if standard:
        groups.append(("standard", None, standard))

    rows = []
    for label, angle, members in groups:
        row = {"label": label, "angle_deg": angle, "n": len(members), "alignment": _drift_alignment(angle)}
        for metric in RATIO_METRICS:
            denom = base[metric]
            row[metric] = _mean_metric(members, metric) / denom if denom > 0 else float("nan")
        rows.append(row)
    return rows


def monitoring_blocks(ctx: ExperimentContext, model: MlpModel, seed: int, n_blocks: int = 20) -> tuple[list[np.ndarray], de.RiskTrajectory]:
    """
    Covariate blocks and their risk for the monitor. Real data uses the deployment blocks; the
    synthetic path is cut at n_blocks evenly spaced grid times.
    """
    if ctx.config.is_real:
        risk, _, _, _ = _real_deployment(ctx.series, model)
        return [x for x, _ in ctx.series.deploy_blocks()], risk
    risk, samples, _ = _synthetic_deployment(ctx, model, seed)
    picks = np.unique(np.linspace(0, len(samples) - 1, n_blocks).round().astype(int))
    return [samples[i] for i in picks], de.RiskTrajectory(risk.times[picks], risk.values[picks])
