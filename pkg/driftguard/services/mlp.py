"""
Feedforward ReLU network with exact input Jacobians.

Layers are affine maps z = a W^T + b with ReLU on every hidden layer and identity at the
scalar output. Three differentiation modes are provided:

* reverse mode through the activation pattern (`input_gradient`, parameter gradients of a loss),
* forward mode with a dual tangent carried alongside the primal batch (`jvp`),
* reverse mode applied to the dual-carrying graph (`penalty_param_gradient`), which yields the
  parameter gradient of mean_x sum_k (J_f(x) v_k)^2.

ReLU'(0) is taken as 0 in every mode, and ReLU'' is zero, so activation masks are constants
for second-order purposes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from driftguard.errors import NumericalError, ShapeError

if TYPE_CHECKING:
    from driftguard.services.drift_geometry import DriftSubspace

CHECKPOINT_MAGIC = b"DGMLP1\n"


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise ShapeError(f"layer_dims must hold at least two positive sizes, got {self.layer_dims}")
        if self.layer_dims[-1] != 1:
            raise ShapeError("output dimension must be 1")
        if len(self.weights) != self.n_layers or len(self.biases) != self.n_layers:
            raise ShapeError("one weight matrix and one bias vector per layer")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[layer + 1], self.layer_dims[layer])
            if w.shape != expected:
                raise ShapeError(f"weights[{layer}] has shape {w.shape}, expected {expected}")
            if b.shape != (expected[0],):
                raise ShapeError(f"biases[{layer}] has length {b.shape[0]}, expected {expected[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericalError(f"layer {layer} has non-finite parameters")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def is_identical(self, other: "MlpModel") -> bool:
        if self.layer_dims != other.layer_dims:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))


@dataclass
class DualBatch:
    """Primal batch plus the directional tangent pushed through the network with it."""

    primal: np.ndarray
    tangent: np.ndarray

    def __post_init__(self) -> None:
        if self.primal.shape != self.tangent.shape:
            raise ShapeError(f"primal {self.primal.shape} and tangent {self.tangent.shape} differ")


@dataclass
class GradBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    value: float = 0.0

    @classmethod
    def zeros_like(cls, model: MlpModel, value: float = 0.0) -> "GradBundle":
        return cls([np.zeros_like(w) for w in model.weights], [np.zeros_like(b) for b in model.biases], value)

    def __add__(self, other: "GradBundle") -> "GradBundle":
        return GradBundle(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
            self.value + other.value,
        )

    def scaled(self, factor: float) -> "GradBundle":
        return GradBundle(
            [factor * g for g in self.weights],
            [factor * g for g in self.biases],
            factor * self.value,
        )

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def check(self, model: MlpModel) -> "GradBundle":
        for grad, param in zip(self.arrays(), model.parameters()):
            if grad.shape != param.shape:
                raise ShapeError(f"gradient shape {grad.shape} does not match parameter shape {param.shape}")
            if not np.all(np.isfinite(grad)):
                raise NumericalError("gradient has non-finite entries")
        if not np.isfinite(self.value):
            raise NumericalError(f"objective value is {self.value}")
        return self


def init_mlp(layer_dims: Sequence[int], rng: np.random.Generator) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    dims = [int(d) for d in layer_dims]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases)


def _as_batch(model: MlpModel, x_batch: np.ndarray) -> np.ndarray:
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"expected a batch with {model.input_dim} columns, got shape {x.shape}")
    return x


def _relu_mask(z: np.ndarray) -> np.ndarray:
    return (z > 0.0).astype(np.float64)


def _forward_cache(model: MlpModel, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Activations a_0..a_{L-1} (inputs to each layer) and hidden masks m_1..m_{L-1}."""
    activations = [x]
    masks: list[np.ndarray] = []
    a = x
    for layer in range(model.n_layers - 1):
        z = a @ model.weights[layer].T + model.biases[layer]
        mask = _relu_mask(z)
        a = z * mask
        activations.append(a)
        masks.append(mask)
    return activations, masks


def forward(model: MlpModel, x_batch: np.ndarray) -> np.ndarray:
    x = _as_batch(model, x_batch)
    activations, _ = _forward_cache(model, x)
    return (activations[-1] @ model.weights[-1].T + model.biases[-1]).reshape(-1)


def _backprop_inputs(model: MlpModel, masks: list[np.ndarray], batch: int) -> np.ndarray:
    g = np.repeat(model.weights[-1], batch, axis=0)
    for layer in range(model.n_layers - 2, -1, -1):
        g = (g * masks[layer]) @ model.weights[layer]
    return g


def input_gradients(model: MlpModel, x_batch: np.ndarray) -> np.ndarray:
    """Row-wise input gradients ∇f(x), shape batch × d."""
    x = _as_batch(model, x_batch)
    _, masks = _forward_cache(model, x)
    return _backprop_inputs(model, masks, x.shape[0])


def input_gradient(model: MlpModel, x: np.ndarray) -> np.ndarray:
    point = np.asarray(x, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(point)):
        raise NumericalError("input point must be finite")
    return input_gradients(model, point.reshape(1, -1))[0]


def _dual_forward(model: MlpModel, dual: DualBatch) -> tuple[np.ndarray, np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """
    Push (primal, tangent) through the network.
    Returns primal output, output tangent, per-layer input tangents t_0..t_{L-1}, and hidden masks.
    """
    a, t = dual.primal, dual.tangent
    tangents = [t]
    masks: list[np.ndarray] = []
    for layer in range(model.n_layers - 1):
        w = model.weights[layer]
        z = a @ w.T + model.biases[layer]
        mask = _relu_mask(z)
        a = z * mask
        t = (t @ w.T) * mask
        tangents.append(t)
        masks.append(mask)
    out = (a @ model.weights[-1].T + model.biases[-1]).reshape(-1)
    out_tangent = (t @ model.weights[-1].T).reshape(-1)
    return out, out_tangent, tangents, masks


def _direction(model: MlpModel, v: np.ndarray) -> np.ndarray:
    direction = np.asarray(v, dtype=np.float64).reshape(-1)
    if direction.shape[0] != model.input_dim:
        raise ShapeError(f"direction has length {direction.shape[0]}, expected {model.input_dim}")
    if not np.all(np.isfinite(direction)):
        raise NumericalError("direction must be finite")
    return direction


def jvp(model: MlpModel, x_batch: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Directional derivatives ∇f(x)·v for every row, by forward-mode dual propagation."""
    x = _as_batch(model, x_batch)
    direction = _direction(model, v)
    _, out_tangent, _, _ = _dual_forward(model, DualBatch(x, np.broadcast_to(direction, x.shape).copy()))
    return out_tangent


def directional_penalty(model: MlpModel, x_batch: np.ndarray, basis: np.ndarray) -> float:
    """mean_x sum_k (∇f(x)·v_k)^2, i.e. the batch estimate of E‖J_f(X)V‖_F^2."""
    x = _as_batch(model, x_batch)
    total = 0.0
    for column in np.asarray(basis, dtype=np.float64).reshape(model.input_dim, -1).T:
        total += float(np.mean(jvp(model, x, column) ** 2))
    return total


def _penalty_gradient(model: MlpModel, x: np.ndarray, basis: np.ndarray) -> GradBundle:
    n = x.shape[0]
    bundle = GradBundle.zeros_like(model)
    for column in basis.T:
        dual = DualBatch(x, np.broadcast_to(column, x.shape).copy())
        _, out_tangent, tangents, masks = _dual_forward(model, dual)
        bundle.value += float(np.mean(out_tangent**2))

        # Reverse sweep over the tangent chain t_l = m_l ⊙ (t_{l-1} W_l^T); masks are constant.
        d_pre = (2.0 / n) * out_tangent.reshape(-1, 1)
        for layer in range(model.n_layers - 1, -1, -1):
            bundle.weights[layer] += d_pre.T @ tangents[layer]
            if layer > 0:
                d_pre = (d_pre @ model.weights[layer]) * masks[layer - 1]
        # The tangent never touches the biases except through masks, so their gradient is zero.
    return bundle


def penalty_param_gradient(model: MlpModel, x_batch: np.ndarray, subspace: "DriftSubspace | np.ndarray") -> GradBundle:
    from driftguard.services.drift_geometry import as_basis

    x = _as_batch(model, x_batch)
    if x.shape[0] == 0:
        raise ShapeError("penalty needs a nonempty batch")
    basis = as_basis(subspace, model.input_dim)
    return _penalty_gradient(model, x, basis).check(model)


def loss_param_gradient(model: MlpModel, x_batch: np.ndarray, d_scores: np.ndarray) -> GradBundle:
    """Backpropagate a given ∂loss/∂score vector to every parameter."""
    x = _as_batch(model, x_batch)
    activations, masks = _forward_cache(model, x)
    delta = np.asarray(d_scores, dtype=np.float64).reshape(-1, 1)
    if delta.shape[0] != x.shape[0]:
        raise ShapeError("one score gradient per row")
    bundle = GradBundle.zeros_like(model)
    for layer in range(model.n_layers - 1, -1, -1):
        bundle.weights[layer] = delta.T @ activations[layer]
        bundle.biases[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer]) * masks[layer - 1]
    return bundle


# Checkpoint format (little-endian):
#   magic b"DGMLP1\n"
#   uint32 number of dims, then uint32 per dim
#   per layer: float64 weights row-major (out × in), then float64 biases
def save_checkpoint(model: MlpModel, path: Path | str) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("wb") as handle:
        handle.write(dump_checkpoint(model))


def dump_checkpoint(model: MlpModel) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(model.layer_dims))]
    parts.append(struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims))
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes(order="C"))
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes(order="C"))
    return b"".join(parts)


def parse_checkpoint(payload: bytes) -> MlpModel:
    if not payload.startswith(CHECKPOINT_MAGIC):
        raise ShapeError("not a driftguard checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    (count,) = struct.unpack_from("<I", payload, offset)
    offset += 4
    dims = list(struct.unpack_from(f"<{count}I", payload, offset))
    offset += 4 * count
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(payload, dtype="<f8", count=fan_in * fan_out, offset=offset)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(payload, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.reshape(fan_out, fan_in).astype(np.float64))
        biases.append(b.astype(np.float64))
    if offset != len(payload):
        raise ShapeError(f"checkpoint has {len(payload) - offset} trailing bytes")
    return MlpModel(dims, weights, biases)


def load_checkpoint(path: Path | str) -> MlpModel:
    return parse_checkpoint(Path(path).read_bytes())
