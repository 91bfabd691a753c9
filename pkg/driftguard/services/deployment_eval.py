"""
Risk trajectories and the volatility bound chain for a frozen model.

For r on [t_0, t_n] with horizon T = t_n - t_0:

    Var_U r(U) <= T/π² ∫ r'²                         (Poincaré / Wirtinger)
               <= β² T/π² ∫ E (∇f(X_t)·Ẋ_t)²           (Jacobian velocity)
               <= 2β² T/π² (B_V + B_ρ)                  (drift-subspace split)

Trajectories are treated as their piecewise-linear interpolant: the variance and the
derivative energy are exact for that interpolant, so the first inequality holds on any grid.
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from driftguard.errors import ConfigError, NumericalError, ShapeError
from driftguard.models import BoundReport
from driftguard.services.drift_geometry import DriftSubspace
from driftguard.services.mlp import MlpModel, input_gradients

HOLD_TOL = 1e-9


@dataclass(frozen=True)
class RiskTrajectory:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if times.shape != values.shape:
            raise ShapeError("one risk value per time")
        if times.size < 2:
            raise ShapeError("a risk trajectory needs at least two points")
        if np.any(np.diff(times) <= 0):
            raise ShapeError("times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise NumericalError("risk values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def shifted(self, offset: float) -> "RiskTrajectory":
        return RiskTrajectory(self.times, self.values + offset)

    def scaled(self, factor: float) -> "RiskTrajectory":
        return RiskTrajectory(self.times, self.values * factor)


@dataclass(frozen=True)
class TangentPath:
    """
    Samples along the deployment path with their velocities and quadrature weights.

    samples[i] and velocities[i] are n_i × d; weights[i] is the time measure given to the
    Monte-Carlo mean at position i. Weights sum to the horizon.
    """

    samples: tuple[np.ndarray, ...]
    velocities: tuple[np.ndarray, ...]
    weights: np.ndarray

    def __post_init__(self) -> None:
        if len(self.samples) != len(self.velocities) or len(self.samples) != len(self.weights):
            raise ShapeError("samples, velocities and weights must be aligned in time")
        for x, v in zip(self.samples, self.velocities):
            if x.shape != v.shape or x.ndim != 2 or x.shape[0] == 0:
                raise ShapeError(f"sample batch {x.shape} and velocity batch {v.shape} are misaligned")
        if np.any(np.asarray(self.weights) < 0):
            raise ShapeError("quadrature weights must be non-negative")

    @property
    def horizon(self) -> float:
        return float(np.sum(self.weights))


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    t = np.asarray(times, dtype=np.float64)
    gaps = np.diff(t)
    weights = np.zeros_like(t)
    weights[:-1] += gaps / 2.0
    weights[1:] += gaps / 2.0
    return weights


def time_mean(traj: RiskTrajectory) -> float:
    return float(integrate.trapezoid(traj.values, traj.times) / traj.horizon)


def volatility(traj: RiskTrajectory) -> float:
    """Var_U of the interpolated trajectory for U uniform on [t_0, t_n]."""
    dev = traj.values - time_mean(traj)
    a, b = dev[:-1], dev[1:]
    gaps = np.diff(traj.times)
    second_moment = float(np.sum(gaps * (a * a + a * b + b * b)) / 3.0)
    return max(second_moment / traj.horizon, 0.0)


def derivative_energy(traj: RiskTrajectory) -> float:
    gaps = np.diff(traj.times)
    slopes = np.diff(traj.values) / gaps
    return float(np.sum(slopes * slopes * gaps))


def poincare_rhs(traj: RiskTrajectory) -> float:
    return traj.horizon / math.pi**2 * derivative_energy(traj)


def check_poincare(traj: RiskTrajectory) -> tuple[float, float, bool]:
    vol = volatility(traj)
    rhs = poincare_rhs(traj)
    return vol, rhs, bool(vol <= rhs * (1.0 + HOLD_TOL))


def _integrate(path: TangentPath, per_time: Sequence[float]) -> float:
    return float(np.dot(path.weights, np.asarray(per_time, dtype=np.float64)))


def jv_energy(model: MlpModel, path: TangentPath) -> float:
    """∫ E (∇f(X_t)·Ẋ_t)² dt, Monte-Carlo in space and the path's quadrature in time."""
    per_time = []
    for x, v in zip(path.samples, path.velocities):
        directional = np.sum(input_gradients(model, x) * v, axis=1)
        per_time.append(float(np.mean(directional**2)))
    return _integrate(path, per_time)


def lowrank_terms(model: MlpModel, path: TangentPath, subspace: DriftSubspace) -> tuple[float, float]:
    """B_V = ∫ E[‖J_f V‖_F² ‖a_t‖²] and B_ρ = ∫ E (J_f ρ_t)² for Ẋ = V a + ρ, a = Vᵀ Ẋ."""
    if subspace.dim != model.input_dim:
        raise ShapeError("subspace and model dimensions differ")
    per_v, per_rho = [], []
    for x, v in zip(path.samples, path.velocities):
        grads = input_gradients(model, x)
        coeffs, residual = subspace.project(v)
        jv_energy_v = np.sum((grads @ subspace.basis) ** 2, axis=1)
        per_v.append(float(np.mean(jv_energy_v * np.sum(coeffs**2, axis=1))))
        per_rho.append(float(np.mean(np.sum(grads * residual, axis=1) ** 2)))
    return _integrate(path, per_v), _integrate(path, per_rho)


def beta_for_loss(
    loss_kind: str,
    scores: Optional[np.ndarray] = None,
    targets: Optional[np.ndarray] = None,
    score_scale: float = 1.0,
) -> float:
    """
    Domination constant for g = h∘f. Cross-entropy has |h'| <= 1. Squared error against a
    fixed target has h' = 2·scale·(ŷ - y), so β is the empirical sup over the evaluation set.
    """
    if loss_kind == "bce_logit":
        return 1.0
    if loss_kind == "mse":
        if scores is None or targets is None:
            raise ConfigError("the squared-error β needs evaluation predictions and targets")
        residual = np.asarray(scores, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
        if residual.size == 0:
            raise ShapeError("empty evaluation set")
        return float(2.0 * score_scale * np.max(np.abs(residual)))
    raise ConfigError(f"no domination constant for loss composition '{loss_kind}'")


def bound_report(
    traj: RiskTrajectory,
    model: MlpModel,
    path: TangentPath,
    subspace: DriftSubspace,
    beta: float,
    beta_empirical: bool = False,
) -> BoundReport:
    vol, p_rhs, holds_p = check_poincare(traj)
    energy = derivative_energy(traj)
    horizon = traj.horizon
    jv = jv_energy(model, path)
    b_v, b_rho = lowrank_terms(model, path, subspace)
    jv_rhs = beta**2 * horizon / math.pi**2 * jv
    lowrank_rhs = 2.0 * beta**2 * horizon / math.pi**2 * (b_v + b_rho)
    return BoundReport(
        horizon=horizon,
        volatility=vol,
        derivative_energy=energy,
        jv_energy=jv,
        beta=beta,
        beta_empirical=beta_empirical,
        b_v=b_v,
        b_rho=b_rho,
        poincare_rhs=p_rhs,
        jv_rhs=jv_rhs,
        lowrank_rhs=lowrank_rhs,
        holds_poincare=holds_p,
        holds_jv=bool(vol <= jv_rhs * (1.0 + HOLD_TOL)),
        holds_lowrank=bool(vol <= lowrank_rhs * (1.0 + HOLD_TOL)),
    )


def chain_violations(report: BoundReport, mc_tolerance: float) -> list[str]:
    """Which links of volatility <= poincare <= jv, jv <= 2(B_V + B_ρ) fail."""
    problems = []
    if not report.holds_poincare:
        problems.append("volatility exceeds the derivative-energy bound")
    if not report.poincare_rhs <= report.jv_rhs * (1.0 + mc_tolerance):
        problems.append("derivative-energy bound exceeds the Jacobian-velocity bound")
    if not report.jv_energy <= 2.0 * (report.b_v + report.b_rho) * (1.0 + HOLD_TOL):
        problems.append("Jacobian-velocity energy exceeds 2(B_V + B_rho)")
    return problems


def translated_path(base: np.ndarray, direction: np.ndarray, offsets: np.ndarray, speeds: np.ndarray, times: np.ndarray) -> tuple[list[np.ndarray], TangentPath]:
    """Cohort translated rigidly along one direction: X_t = X_0 + δ(t)·e with Ẋ_t = δ'(t)·e."""
    e = np.asarray(direction, dtype=np.float64).reshape(1, -1)
    samples = [base + float(offset) * e for offset in offsets]
    velocities = tuple(np.broadcast_to(float(speed) * e, base.shape).copy() for speed in speeds)
    return samples, TangentPath(tuple(samples), velocities, trapezoid_weights(times))


def blockwise_path(blocks: Sequence[np.ndarray], times: np.ndarray) -> TangentPath:
    """
    One interval per consecutive block pair: later-block samples, velocity equal to the
    block-mean difference over the midpoint gap, weight equal to that gap.
    """
    t = np.asarray(times, dtype=np.float64)
    if len(blocks) != t.shape[0] or len(blocks) < 2:
        raise ShapeError("need one time per block and at least two blocks")
    means = [np.asarray(b).mean(axis=0) for b in blocks]
    samples, velocities, weights = [], [], []
    for i in range(len(blocks) - 1):
        gap = float(t[i + 1] - t[i])
        later = np.asarray(blocks[i + 1], dtype=np.float64)
        velocity = (means[i + 1] - means[i]) / gap
        samples.append(later)
        velocities.append(np.broadcast_to(velocity, later.shape).copy())
        weights.append(gap)
    return TangentPath(tuple(samples), tuple(velocities), np.asarray(weights))
