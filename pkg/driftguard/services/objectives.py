"""Losses, the directional (DTR) and isotropic Jacobian objectives, and the Adam training loop."""
import logging
from typing import Optional

import numpy as np
from scipy import special

from driftguard.errors import ConfigError, DivergenceError, NumericalError, ShapeError, SubspaceError
from driftguard.models import TrainConfig
from driftguard.services.drift_geometry import DriftSubspace, as_basis
from driftguard.services.mlp import (
    GradBundle,
    MlpModel,
    directional_penalty,
    forward,
    loss_param_gradient,
    penalty_param_gradient,
)
from driftguard.utils.rng import substream

logger = logging.getLogger(__name__)


def _check_pair(scores: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if s.shape != y.shape:
        raise ShapeError(f"scores {s.shape} and targets {y.shape} differ")
    if s.size == 0:
        raise ShapeError("loss needs a nonempty batch")
    if np.any(np.isnan(s)) or np.any(np.isnan(y)):
        raise NumericalError("loss received NaN input")
    return s, y


def pointwise_loss(kind: str, scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    s, y = _check_pair(scores, targets)
    if kind == "bce_logit":
        if np.any((y != 0.0) & (y != 1.0)):
            raise ConfigError("bce_logit targets must be 0 or 1")
        # log(1 + e^s) - s y, written so neither branch overflows.
        return np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s)))
    if kind == "mse":
        return (s - y) ** 2
    raise ConfigError(f"unknown loss kind '{kind}'")


def loss(kind: str, scores: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean(pointwise_loss(kind, scores, targets)))


def loss_score_gradient(kind: str, scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """∂(mean loss)/∂score per row."""
    s, y = _check_pair(scores, targets)
    n = s.shape[0]
    if kind == "bce_logit":
        return (special.expit(s) - y) / n
    if kind == "mse":
        return 2.0 * (s - y) / n
    raise ConfigError(f"unknown loss kind '{kind}'")


def loss_objective(model: MlpModel, batch: np.ndarray, targets: np.ndarray, kind: str) -> GradBundle:
    scores = forward(model, batch)
    bundle = loss_param_gradient(model, batch, loss_score_gradient(kind, scores, targets))
    bundle.value = loss(kind, scores, targets)
    return bundle


def _check_lambda(lam: float) -> None:
    if not lam >= 0.0:
        raise ConfigError(f"penalty weight must be non-negative, got {lam}")


def dtr_objective(
    model: MlpModel,
    batch: np.ndarray,
    targets: np.ndarray,
    subspace: "DriftSubspace | np.ndarray",
    lam: float,
    kind: str = "bce_logit",
) -> tuple[float, GradBundle]:
    """loss + λ · mean_x ‖J_f(x)V‖_F² and its exact parameter gradient."""
    _check_lambda(lam)
    basis = as_basis(subspace, model.input_dim)
    bundle = loss_objective(model, batch, targets, kind)
    if lam == 0.0:
        return bundle.value, bundle
    penalty = penalty_param_gradient(model, batch, basis)
    total = bundle + penalty.scaled(lam)
    total.value = bundle.value + lam * penalty.value
    return total.value, total.check(model)


def isotropic_objective(
    model: MlpModel,
    batch: np.ndarray,
    targets: np.ndarray,
    lam: float,
    kind: str = "bce_logit",
) -> tuple[float, GradBundle]:
    """loss + λ · mean_x ‖∇f(x)‖², computed as d coordinate-direction penalties."""
    return dtr_objective(model, batch, targets, np.eye(model.input_dim), lam, kind)


def penalty_value(model: MlpModel, batch: np.ndarray, subspace: "DriftSubspace | np.ndarray") -> float:
    return directional_penalty(model, batch, as_basis(subspace, model.input_dim))


class AdamState:
    def __init__(self, model: MlpModel, config: TrainConfig):
        self.config = config
        self.step = 0
        self.m = [np.zeros_like(p) for p in model.parameters()]
        self.v = [np.zeros_like(p) for p in model.parameters()]

    def apply(self, model: MlpModel, grads: GradBundle) -> None:
        cfg = self.config
        self.step += 1
        correction1 = 1.0 - cfg.adam_beta1**self.step
        correction2 = 1.0 - cfg.adam_beta2**self.step
        for i, (param, grad) in enumerate(zip(model.parameters(), grads.arrays())):
            self.m[i] = cfg.adam_beta1 * self.m[i] + (1.0 - cfg.adam_beta1) * grad
            self.v[i] = cfg.adam_beta2 * self.v[i] + (1.0 - cfg.adam_beta2) * grad * grad
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            # In-place so model.weights/biases keep pointing at the updated arrays.
            param -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def _penalty_basis(model: MlpModel, config: TrainConfig, subspace: Optional[DriftSubspace]) -> Optional[np.ndarray]:
    if config.penalty_kind == "none":
        return None
    if config.penalty_kind == "isotropic":
        return np.eye(model.input_dim)
    if subspace is None:
        raise SubspaceError("penalty_kind 'dtr' requires a drift subspace")
    return as_basis(subspace, model.input_dim)


def train(
    model_init: MlpModel,
    features: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
    subspace: Optional[DriftSubspace] = None,
) -> MlpModel:
    """
    Minibatch Adam on loss + λ·directional penalty. The penalty is estimated on the same
    minibatch as the loss. Minibatch order comes from the seed's shuffle stream only, so two
    configs sharing a seed visit identical batches.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise ShapeError("training data must be a nonempty n×d matrix with n targets")
    basis = _penalty_basis(model_init, config, subspace)
    lam = config.lambda_ if basis is not None else 0.0
    _check_lambda(lam)

    model = model_init.copy()
    optimizer = AdamState(model, config)
    shuffle_rng = substream(config.seed, "shuffle")
    n = x.shape[0]

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            if basis is None:
                grads = loss_objective(model, x[idx], y[idx], config.loss_kind)
                value = grads.value
            else:
                value, grads = dtr_objective(model, x[idx], y[idx], basis, lam, config.loss_kind)
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.arrays()):
                raise DivergenceError(epoch, float(value))
            epoch_total += value * idx.shape[0]
            optimizer.apply(model, grads)
        if epoch == 1 or epoch % 50 == 0 or epoch == config.epochs:
            logger.debug("epoch %d objective %.6g", epoch, epoch_total / n)

    return model
