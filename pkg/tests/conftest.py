import json
from pathlib import Path

import numpy as np
import pytest

from driftguard.models import BoundReport, CellSummary
from driftguard.services.mlp import MlpModel, init_mlp
from driftguard.settings import reload_settings
from driftguard.utils.rng import substream


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    monkeypatch.setenv("DRIFTGUARD_RUNS_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("DRIFTGUARD_WORKERS", "1")
    reload_settings()
    yield
    reload_settings()


def random_model(dims, seed: int, bias_scale: float = 0.1) -> MlpModel:
    model = init_mlp(dims, substream(seed, "init"))
    rng = np.random.default_rng(seed + 1000)
    for b in model.biases:
        b += bias_scale * rng.standard_normal(b.shape)
    return model


def linear_model(w, b: float = 0.0) -> MlpModel:
    w = np.asarray(w, dtype=np.float64).reshape(1, -1)
    return MlpModel([w.shape[1], 1], [w], [np.array([b])])


def orthonormal(d: int, k: int, seed: int) -> np.ndarray:
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, k)))
    return q


def make_bounds(**overrides) -> BoundReport:
    values = dict(
        horizon=1.0,
        volatility=1e-3,
        derivative_energy=2e-2,
        jv_energy=5e-2,
        beta=1.0,
        b_v=3e-2,
        b_rho=1e-2,
        poincare_rhs=2e-3,
        jv_rhs=5e-3,
        lowrank_rhs=8e-3,
        holds_poincare=True,
        holds_jv=True,
        holds_lowrank=True,
    )
    values.update(overrides)
    return BoundReport(**values)


def make_summary(method="dtr", lam=0.03, seed=0, val_loss=0.5, val_gain=1.0, **metrics) -> CellSummary:
    values = dict(
        deploy_risk=0.4,
        volatility=1e-3,
        derivative_energy=2e-2,
        directional_gain=0.3,
        terminal_risk=0.5,
    )
    values.update(metrics)
    subspace = {"standard": "none", "isotropic": "identity"}.get(method, "true_axis")
    return CellSummary(
        cell_id=f"{method}_{subspace}_l{lam:g}_s{seed:03d}",
        experiment="directional_vs_isotropic",
        seed=seed,
        method=method,
        lambda_=lam,
        subspace=subspace,
        val_loss=val_loss,
        val_gain=val_gain,
        bounds=make_bounds(),
        **values,
    )


TINY_SYNTHETIC = {
    "hidden_dims": [6],
    "train": {"epochs": 2, "batch_size": 32},
    "synthetic": {"n_train": 96, "n_val": 48, "n_per_time": 32, "grid_size": 11},
    "bootstrap_samples": 50,
}


@pytest.fixture
def tiny_config_file(tmp_path):
    def write(experiment: str = "directional_vs_isotropic", **fields) -> Path:
        payload = {"experiment": experiment, "seeds": [0, 1], **TINY_SYNTHETIC, **fields}
        path = tmp_path / f"{experiment}.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    return write
