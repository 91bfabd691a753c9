"""Drift subspaces: construction, estimation from covariate streams, and validation."""
import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from driftguard.errors import NoDriftError, RankDeficiencyError, ShapeError, SubspaceError

Provenance = Literal[
    "true_axis",
    "diff_pca",
    "target_orthogonal_sensor",
    "all_covariates",
    "rotated",
    "identity",
]

ORTHONORMAL_TOL = 1e-10
NO_DRIFT_TOL = 1e-12
POWER_REL_TOL = 1e-12
POWER_MAX_ITER = 10_000
RANK_REL_TOL = 1e-12
OLS_RIDGE = 1e-8

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DriftSubspace:
    basis: np.ndarray
    provenance: Provenance
    angle: Optional[float] = None
    window_meta: Optional[tuple[int, ...]] = None
    ridge_fallback: bool = False
    singular_values: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        basis = np.asarray(self.basis, dtype=np.float64)
        if basis.ndim == 1:
            basis = basis.reshape(-1, 1)
        if basis.ndim != 2:
            raise ShapeError(f"basis must be a d×k matrix, got shape {basis.shape}")
        d, k = basis.shape
        if not 1 <= k <= d:
            raise SubspaceError(f"subspace rank must satisfy 1 <= k <= d, got k={k}, d={d}")
        gram_error = np.max(np.abs(basis.T @ basis - np.eye(k)))
        if not gram_error <= ORTHONORMAL_TOL:
            raise SubspaceError(f"basis columns are not orthonormal (max |VᵀV - I| = {gram_error:.3e})")
        object.__setattr__(self, "basis", basis)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def label(self) -> str:
        if self.provenance == "rotated" and self.angle is not None:
            return f"rotated_{math.degrees(self.angle):g}deg"
        return self.provenance

    def project(self, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split rows into in-span coefficients a = Vᵀx and the residual ρ = x - Va."""
        rows = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        coeffs = rows @ self.basis
        return coeffs, rows - coeffs @ self.basis.T


def as_basis(subspace: "DriftSubspace | np.ndarray", dim: int) -> np.ndarray:
    """Accept a DriftSubspace or a raw matrix and return a validated d×k orthonormal basis."""
    if not isinstance(subspace, DriftSubspace):
        subspace = DriftSubspace(np.asarray(subspace, dtype=np.float64), "identity")
    if subspace.dim != dim:
        raise ShapeError(f"subspace lives in dimension {subspace.dim}, model input is {dim}")
    return subspace.basis


def identity_subspace(d: int) -> DriftSubspace:
    return DriftSubspace(np.eye(d), "identity")


def true_axis(d: int, index: int) -> DriftSubspace:
    if not 0 <= index < d:
        raise SubspaceError(f"axis {index} outside dimension {d}")
    basis = np.zeros((d, 1))
    basis[index, 0] = 1.0
    return DriftSubspace(basis, "true_axis")


def _fix_sign(vector: np.ndarray) -> np.ndarray:
    pivot = int(np.argmax(np.abs(vector)))
    return -vector if vector[pivot] < 0 else vector


def mean_diff_direction(mu_t: np.ndarray, mu_prev: np.ndarray) -> np.ndarray:
    diff = np.asarray(mu_t, dtype=np.float64) - np.asarray(mu_prev, dtype=np.float64)
    norm = float(np.linalg.norm(diff))
    if not norm > NO_DRIFT_TOL:
        raise NoDriftError(f"mean difference has norm {norm:.3e}; no drift direction is defined")
    return diff / norm


def _top_eigenpairs(gram: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Power iteration with deflation on a symmetric PSD matrix.
    Each iterate is also re-orthogonalized against the accepted vectors.
    """
    d = gram.shape[0]
    work = gram.copy()
    scale = float(np.trace(gram))
    values = np.zeros(k)
    vectors = np.zeros((d, k))
    # Fixed start so results do not depend on any seed.
    start = np.linspace(1.0, 2.0, d) / np.sqrt(np.arange(1, d + 1))
    for i in range(k):
        v = start - vectors[:, :i] @ (vectors[:, :i].T @ start)
        if np.linalg.norm(v) <= 1e-300:
            v = np.eye(d)[:, i]
        v = v / np.linalg.norm(v)
        value = float(v @ work @ v)
        for _ in range(POWER_MAX_ITER):
            w = work @ v
            w -= vectors[:, :i] @ (vectors[:, :i].T @ w)
            norm = float(np.linalg.norm(w))
            if norm <= 1e-300:
                value = 0.0
                break
            w /= norm
            new_value = float(w @ work @ w)
            converged = abs(new_value - value) <= POWER_REL_TOL * max(abs(new_value), 1e-300)
            moved = float(np.linalg.norm(w - v))
            v, value = w, new_value
            if converged and moved <= 1e-10:
                break
        if not value > RANK_REL_TOL * max(scale, 1e-300) or (i > 0 and not value > RANK_REL_TOL * values[0]):
            raise RankDeficiencyError(k, i)
        v = _fix_sign(v)
        values[i] = value
        vectors[:, i] = v
        work -= value * np.outer(v, v)
    return values, vectors


def diff_cloud_pca(diffs: np.ndarray, k: int, window: Optional[tuple[int, ...]] = None) -> DriftSubspace:
    """Top-k right singular vectors of the uncentered difference cloud."""
    cloud = np.asarray(diffs, dtype=np.float64)
    if cloud.ndim != 2:
        raise ShapeError(f"difference cloud must be n×d, got shape {cloud.shape}")
    n, d = cloud.shape
    if not (1 <= k <= d and n >= k):
        raise SubspaceError(f"need n >= k >= 1 and k <= d, got n={n}, k={k}, d={d}")
    if not np.all(np.isfinite(cloud)):
        raise ShapeError("difference cloud has non-finite entries")
    values, vectors = _top_eigenpairs(cloud.T @ cloud, k)
    return DriftSubspace(
        _orthonormalize(vectors),
        "diff_pca",
        window_meta=window,
        singular_values=tuple(float(np.sqrt(v)) for v in values),
    )


def _orthonormalize(vectors: np.ndarray) -> np.ndarray:
    # Modified Gram-Schmidt; the power iterates are already orthogonal to roundoff.
    basis = vectors.copy()
    for j in range(basis.shape[1]):
        for i in range(j):
            basis[:, j] -= (basis[:, i] @ basis[:, j]) * basis[:, i]
        basis[:, j] /= np.linalg.norm(basis[:, j])
        basis[:, j] = _fix_sign(basis[:, j])
    return basis


def block_mean_shifts(block_means: np.ndarray) -> np.ndarray:
    means = np.asarray(block_means, dtype=np.float64)
    if means.ndim != 2 or means.shape[0] < 2:
        raise ShapeError("need at least two block means to form shifts")
    return np.diff(means, axis=0)


def supervised_direction(train_x: np.ndarray, train_y: np.ndarray) -> tuple[np.ndarray, bool]:
    """Normalized OLS coefficient vector of y on x (intercept absorbed by centering)."""
    x = np.asarray(train_x, dtype=np.float64)
    y = np.asarray(train_y, dtype=np.float64).reshape(-1)
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    gram = xc.T @ xc
    rhs = xc.T @ yc
    ridge = False
    try:
        if np.linalg.cond(gram) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned Gram matrix")
        coef = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        logger.warning("OLS Gram matrix is singular; falling back to ridge %.0e", OLS_RIDGE)
        coef = np.linalg.solve(gram + OLS_RIDGE * np.eye(gram.shape[0]), rhs)
        ridge = True
    norm = float(np.linalg.norm(coef))
    if not norm > 0.0:
        raise NoDriftError("supervised target direction is zero")
    return coef / norm, ridge


def target_orthogonal_sensor_subspace(
    train_x: np.ndarray,
    train_y: np.ndarray,
    deploy_block_means: np.ndarray,
    sensor_cols: Sequence[int],
    k: int = 2,
) -> DriftSubspace:
    x = np.asarray(train_x, dtype=np.float64)
    means = np.asarray(deploy_block_means, dtype=np.float64)
    d = x.shape[1]
    cols = sorted({int(c) for c in sensor_cols})
    if not cols or cols[0] < 0 or cols[-1] >= d:
        raise SubspaceError(f"sensor columns {list(sensor_cols)} are not a nonempty subset of 0..{d - 1}")
    if means.ndim != 2 or means.shape[1] != d:
        raise ShapeError(f"block means must be blocks × {d}")
    if means.shape[0] < 3:
        raise SubspaceError("need at least three deployment blocks")

    u, ridge = supervised_direction(x[:, cols], train_y)
    shifts = block_mean_shifts(means[:, cols])
    projected = shifts - np.outer(shifts @ u, u)
    if not np.linalg.norm(projected) > RANK_REL_TOL * max(float(np.linalg.norm(shifts)), 1e-300):
        raise RankDeficiencyError(k, 0)

    sensor_basis = diff_cloud_pca(projected, k).basis
    # Remove the roundoff component along u and restore orthonormality.
    sensor_basis = _orthonormalize(sensor_basis - np.outer(u, u @ sensor_basis))

    basis = np.zeros((d, k))
    basis[cols, :] = sensor_basis
    return DriftSubspace(
        basis,
        "target_orthogonal_sensor",
        window_meta=tuple(range(means.shape[0])),
        ridge_fallback=ridge,
    )


def all_covariates_subspace(deploy_block_means: np.ndarray, k: int = 2) -> DriftSubspace:
    means = np.asarray(deploy_block_means, dtype=np.float64)
    pca = diff_cloud_pca(block_mean_shifts(means), k)
    return DriftSubspace(
        pca.basis,
        "all_covariates",
        window_meta=tuple(range(means.shape[0])),
        singular_values=pca.singular_values,
    )


def rotated_direction(alpha: float) -> np.ndarray:
    return np.array([math.sin(alpha), math.cos(alpha)])


def rotated_subspace(alpha: float) -> DriftSubspace:
    return DriftSubspace(rotated_direction(alpha).reshape(2, 1), "rotated", angle=float(alpha))


def alignment(subspace: DriftSubspace, direction: np.ndarray) -> float:
    """Norm of the projection of a unit direction onto the subspace (cos of the principal angle)."""
    unit = np.asarray(direction, dtype=np.float64).reshape(-1)
    return float(np.linalg.norm(subspace.basis.T @ (unit / np.linalg.norm(unit))))
