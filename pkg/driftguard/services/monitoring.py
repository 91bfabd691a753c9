"""
Hazard monitoring for frozen deployments.

Per block t >= Δ the trace records the drift speed s_t = ‖μ_t - μ_{t-Δ}‖, the unit direction
v_t, the directional gain G_t = E[(∇f(X_t)·v_t)²] over the block's samples and the hazard
h_t = s_t²·G_t. Blocks without a mean shift stay invalid (NaN), never zero-filled.
"""
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

from driftguard.errors import NoDriftError, NumericalError, ShapeError
from driftguard.models import SpearmanResult
from driftguard.services.drift_geometry import NO_DRIFT_TOL, mean_diff_direction
from driftguard.services.mlp import MlpModel, input_gradients
from driftguard.utils.rng import substream

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-10
MIN_PAIRS = 3

TRACE_COLUMNS = ["block_index", "s", "g", "h", "roll2_h", "roll3_h", "valid"]
SCORE_COLUMNS = {
    "drift_only_s2": "s2",
    "gain": "g",
    "hazard": "h",
    "roll2_hazard": "roll2_h",
    "roll3_hazard": "roll3_h",
}


@dataclass(frozen=True)
class HazardTrace:
    block_index: np.ndarray
    s: np.ndarray
    v: np.ndarray
    g: np.ndarray
    h: np.ndarray
    roll2_h: np.ndarray
    roll3_h: np.ndarray
    valid: np.ndarray
    n_blocks: int

    def __len__(self) -> int:
        return int(self.block_index.shape[0])

    @property
    def s2(self) -> np.ndarray:
        return self.s**2

    def per_block(self, column: str) -> np.ndarray:
        """A column spread over all blocks, NaN where no hazard entry exists."""
        out = np.full(self.n_blocks, np.nan)
        out[self.block_index] = getattr(self, column)
        return out

    def mean_valid_gain(self) -> float:
        if not np.any(self.valid):
            raise NoDriftError("no block has a defined drift direction")
        return float(np.mean(self.g[self.valid]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "block_index": self.block_index,
                "s": self.s,
                "g": self.g,
                "h": self.h,
                "roll2_h": self.roll2_h,
                "roll3_h": self.roll3_h,
                "valid": self.valid,
            },
            columns=TRACE_COLUMNS,
        )


@dataclass(frozen=True)
class HazardDecomposition:
    s: float
    abar: float
    rho_norm: float
    theta: float
    g_par: float
    g_perp: float
    c_overlap: float
    g_direct: float

    @property
    def g_reconstructed(self) -> float:
        cos, sin = math.cos(self.theta), math.sin(self.theta)
        return cos * cos * self.g_par + sin * sin * self.g_perp + 2.0 * sin * cos * self.c_overlap

    def as_row(self) -> dict[str, float]:
        return {
            "s": self.s,
            "abar": self.abar,
            "rho_norm": self.rho_norm,
            "theta": self.theta,
            "g_par": self.g_par,
            "g_perp": self.g_perp,
            "c_overlap": self.c_overlap,
            "g": self.g_direct,
            "g_reconstructed": self.g_reconstructed,
        }


def _directional_gain(model: MlpModel, samples: np.ndarray, direction: np.ndarray) -> float:
    return float(np.mean((input_gradients(model, samples) @ direction) ** 2))


def _trailing_mean(values: np.ndarray, valid: np.ndarray, window: int) -> np.ndarray:
    out = np.full(values.shape, np.nan)
    if np.any(valid):
        out[valid] = pd.Series(values[valid]).rolling(window, min_periods=1).mean().to_numpy()
    return out


def hazard_trace(model: MlpModel, blocks: Sequence[np.ndarray], delta: int = 1) -> HazardTrace:
    """Hazard entries for every block t >= delta of a frozen model's deployment."""
    if delta < 1:
        raise ShapeError("delta must be at least one block")
    if len(blocks) < delta + 1:
        raise ShapeError(f"need at least {delta + 1} blocks for delta={delta}")
    arrays = [np.asarray(b, dtype=np.float64) for b in blocks]
    if any(b.ndim != 2 or b.shape[0] == 0 or b.shape[1] != model.input_dim for b in arrays):
        raise ShapeError("every block must be a nonempty n×d sample matrix")
    means = [b.mean(axis=0) for b in arrays]

    indices = np.arange(delta, len(arrays))
    m, d = indices.shape[0], model.input_dim
    s = np.full(m, np.nan)
    g = np.full(m, np.nan)
    v = np.full((m, d), np.nan)
    valid = np.zeros(m, dtype=bool)
    for row, t in enumerate(indices):
        try:
            direction = mean_diff_direction(means[t], means[t - delta])
        except NoDriftError:
            logger.warning("block %d has no mean shift; hazard left undefined", t)
            continue
        s[row] = float(np.linalg.norm(means[t] - means[t - delta]))
        v[row] = direction
        g[row] = _directional_gain(model, arrays[t], direction)
        valid[row] = True

    h = s * s * g
    return HazardTrace(
        block_index=indices,
        s=s,
        v=v,
        g=g,
        h=h,
        roll2_h=_trailing_mean(h, valid, 2),
        roll3_h=_trailing_mean(h, valid, 3),
        valid=valid,
        n_blocks=len(arrays),
    )


def _orthogonal_completion(v_ref: np.ndarray) -> np.ndarray:
    d = v_ref.shape[0]
    if d == 1:
        return np.zeros(1)
    axis = np.zeros(d)
    axis[int(np.argmin(np.abs(v_ref)))] = 1.0
    u = axis - (axis @ v_ref) * v_ref
    return u / np.linalg.norm(u)


def decompose_hazard(
    model: MlpModel,
    block_samples: np.ndarray,
    v_t: np.ndarray,
    v_ref: np.ndarray,
    abar: float,
    rho: np.ndarray,
) -> HazardDecomposition:
    """
    Split the gain along v_t = cos θ·v_ref + sin θ·u_t into the reference gain G_∥, the
    orthogonal gain G_⊥ and the overlap C_t, then check the reconstruction against G_t.
    """
    v_t = np.asarray(v_t, dtype=np.float64).reshape(-1)
    v_ref = np.asarray(v_ref, dtype=np.float64).reshape(-1)
    rho = np.asarray(rho, dtype=np.float64).reshape(-1)
    if not (v_t.shape == v_ref.shape == rho.shape == (model.input_dim,)):
        raise ShapeError("v_t, v_ref and rho must all live in the model's input space")
    for name, vec in (("v_t", v_t), ("v_ref", v_ref)):
        if abs(float(np.linalg.norm(vec)) - 1.0) > IDENTITY_TOL:
            raise ShapeError(f"{name} must have unit norm")
    if abs(float(rho @ v_ref)) > IDENTITY_TOL * max(1.0, float(np.linalg.norm(rho))):
        raise ShapeError("rho must be orthogonal to v_ref")

    shift = abar * v_ref + rho
    s = float(np.linalg.norm(shift))
    if not s > NO_DRIFT_TOL:
        raise NoDriftError("decomposition needs a nonzero mean shift")
    rho_norm = float(np.linalg.norm(rho))
    if abs(s * s - (abar * abar + rho_norm * rho_norm)) > IDENTITY_TOL * max(1.0, s * s):
        raise NumericalError("speed does not split into aligned and residual parts")
    if np.linalg.norm(v_t - shift / s) > 1e-8:
        raise ShapeError("v_t is not the direction of abar·v_ref + rho")

    theta = math.atan2(rho_norm, abar)
    u_t = rho / rho_norm if rho_norm > NO_DRIFT_TOL else _orthogonal_completion(v_ref)

    grads = input_gradients(model, np.asarray(block_samples, dtype=np.float64))
    along_ref = grads @ v_ref
    along_u = grads @ u_t
    result = HazardDecomposition(
        s=s,
        abar=float(abar),
        rho_norm=rho_norm,
        theta=theta,
        g_par=float(np.mean(along_ref**2)),
        g_perp=float(np.mean(along_u**2)),
        c_overlap=float(np.mean(along_ref * along_u)),
        g_direct=float(np.mean((grads @ v_t) ** 2)),
    )
    gap = abs(result.g_reconstructed - result.g_direct)
    if gap > IDENTITY_TOL * max(1.0, result.g_direct):
        raise NumericalError(f"gain reconstruction is off by {gap:.3e}")
    return result


def decompose_from_shift(
    model: MlpModel, block_samples: np.ndarray, shift: np.ndarray, v_ref: np.ndarray
) -> HazardDecomposition:
    """Decomposition for a raw block mean shift Δμ = ā·v_ref + ρ̄."""
    shift = np.asarray(shift, dtype=np.float64).reshape(-1)
    v_ref = np.asarray(v_ref, dtype=np.float64).reshape(-1)
    v_ref = v_ref / np.linalg.norm(v_ref)
    abar = float(shift @ v_ref)
    rho = shift - abar * v_ref
    v_t = mean_diff_direction(shift, np.zeros_like(shift))
    return decompose_hazard(model, block_samples, v_t, v_ref, abar, rho)


def decomposition_table(
    model: MlpModel, blocks: Sequence[np.ndarray], v_ref: np.ndarray, delta: int = 1
) -> pd.DataFrame:
    rows = []
    for t in range(delta, len(blocks)):
        shift = np.asarray(blocks[t]).mean(axis=0) - np.asarray(blocks[t - delta]).mean(axis=0)
        try:
            parts = decompose_from_shift(model, blocks[t], shift, v_ref)
        except NoDriftError:
            continue
        rows.append({"block_index": t, **parts.as_row()})
    return pd.DataFrame(rows, columns=["block_index", "s", "abar", "rho_norm", "theta", "g_par", "g_perp", "c_overlap", "g", "g_reconstructed"])


def _movement_pairs(score: np.ndarray, risks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    score = np.asarray(score, dtype=np.float64).reshape(-1)
    risks = np.asarray(risks, dtype=np.float64).reshape(-1)
    if score.shape != risks.shape:
        raise ShapeError("score and risk arrays must be aligned per block")
    movement = np.diff(risks) ** 2
    head = score[:-1]
    keep = np.isfinite(head) & np.isfinite(movement)
    return head[keep], movement[keep]


def _spearman(a: np.ndarray, b: np.ndarray) -> float:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        logger.warning("constant input to a rank correlation; returning NaN")
        return float("nan")
    return float(stats.spearmanr(a, b).statistic)


def spearman_vs_risk_movement(score: np.ndarray, risks: np.ndarray) -> float:
    """Rank correlation of score_t with (r_{t+1} - r_t)² over the valid transitions."""
    a, b = _movement_pairs(score, risks)
    if a.shape[0] < MIN_PAIRS:
        raise ShapeError(f"need at least {MIN_PAIRS} valid pairs, got {a.shape[0]}")
    return _spearman(a, b)


def _pooled_ranks(per_seed: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for score, risks in per_seed:
        a, b = _movement_pairs(score, risks)
        if a.shape[0] == 0:
            continue
        xs.append(stats.rankdata(a) / a.shape[0])
        ys.append(stats.rankdata(b) / b.shape[0])
    if not xs:
        return np.empty(0), np.empty(0)
    return np.concatenate(xs), np.concatenate(ys)


def aggregate_spearman(name: str, per_seed: Sequence[tuple[np.ndarray, np.ndarray]]) -> SpearmanResult:
    """Per-seed ranks normalized by the seed's pair count, pooled into one Spearman estimate."""
    x, y = _pooled_ranks(per_seed)
    if x.shape[0] < MIN_PAIRS:
        raise ShapeError(f"need at least {MIN_PAIRS} pooled pairs, got {x.shape[0]}")
    return SpearmanResult(score=name, rho=_spearman(x, y), n_pairs=int(x.shape[0]), n_seeds=len(per_seed))


def spearman_ablation(traces: Sequence[HazardTrace], risks: Sequence[np.ndarray]) -> list[SpearmanResult]:
    """Cross-seed correlations of s², G, h and the rolling hazards with next-block risk movement."""
    if len(traces) != len(risks):
        raise ShapeError("one risk trajectory per hazard trace")
    results = []
    for name, column in SCORE_COLUMNS.items():
        per_seed = [(trace.per_block(column), r) for trace, r in zip(traces, risks)]
        results.append(aggregate_spearman(name, per_seed))
    return results


def bootstrap_spearman_difference(
    per_seed_a: Sequence[tuple[np.ndarray, np.ndarray]],
    per_seed_b: Sequence[tuple[np.ndarray, np.ndarray]],
    n_boot: int = 10_000,
    seed: int = 0,
    level: float = 0.95,
) -> tuple[float, float, float]:
    """Difference rho_a - rho_b with a seed-resampling percentile interval."""
    if len(per_seed_a) != len(per_seed_b) or not per_seed_a:
        raise ShapeError("both scores need the same nonempty set of seeds")
    point = aggregate_spearman("a", per_seed_a).rho - aggregate_spearman("b", per_seed_b).rho
    rng = substream(seed, "bootstrap", 1)
    n = len(per_seed_a)
    diffs = np.full(n_boot, np.nan)
    for i in range(n_boot):
        pick = rng.integers(0, n, size=n)
        xa, ya = _pooled_ranks([per_seed_a[j] for j in pick])
        xb, yb = _pooled_ranks([per_seed_b[j] for j in pick])
        if xa.shape[0] < MIN_PAIRS or xb.shape[0] < MIN_PAIRS:
            continue
        diffs[i] = _spearman(xa, ya) - _spearman(xb, yb)
    finite = diffs[np.isfinite(diffs)]
    if finite.size == 0:
        return point, float("nan"), float("nan")
    tail = (1.0 - level) / 2.0 * 100.0
    low, high = np.percentile(finite, [tail, 100.0 - tail])
    return point, float(low), float(high)
