import math

import numpy as np
import pytest

from conftest import linear_model, random_model
from driftguard.errors import NoDriftError, ShapeError
from driftguard.services.monitoring import (
    TRACE_COLUMNS,
    aggregate_spearman,
    bootstrap_spearman_difference,
    decompose_from_shift,
    decompose_hazard,
    decomposition_table,
    hazard_trace,
    spearman_ablation,
    spearman_vs_risk_movement,
)


def drifting_blocks(n_blocks: int, d: int = 3, seed: int = 0, n: int = 25) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    drift = np.cumsum(rng.standard_normal((n_blocks, d)), axis=0)
    return [drift[i] + rng.standard_normal((n, d)) for i in range(n_blocks)]


class TestHazardTrace:
    def test_identical_means_are_invalid(self):
        block = np.random.default_rng(0).standard_normal((10, 2))
        trace = hazard_trace(random_model([2, 4, 1], seed=0), [block, block.copy(), block[::-1].copy()])
        assert not trace.valid.any()
        assert np.all(np.isnan(trace.h))
        with pytest.raises(NoDriftError):
            trace.mean_valid_gain()

    def test_linear_model_closed_form(self):
        w = np.array([1.0, -2.0, 0.5])
        blocks = drifting_blocks(6)
        trace = hazard_trace(linear_model(w), blocks)
        for row, t in enumerate(trace.block_index):
            shift = blocks[t].mean(axis=0) - blocks[t - 1].mean(axis=0)
            s = np.linalg.norm(shift)
            expected = s**2 * float(w @ (shift / s)) ** 2
            assert trace.h[row] == pytest.approx(expected, rel=1e-12)

    def test_product_identity(self):
        trace = hazard_trace(random_model([3, 6, 1], seed=2), drifting_blocks(8, seed=2))
        np.testing.assert_array_equal(trace.h, trace.s**2 * trace.g)
        assert np.all(trace.s >= 0) and np.all(trace.g >= 0)

    def test_twenty_blocks_give_nineteen_entries(self):
        trace = hazard_trace(random_model([3, 4, 1], seed=1), drifting_blocks(20))
        assert len(trace) == 19
        assert list(trace.to_frame().columns) == TRACE_COLUMNS
        assert np.isnan(trace.per_block("h")[0])

    def test_sign_of_drift_direction_is_irrelevant(self):
        model = linear_model([0.3, 0.9, -0.4])
        blocks = drifting_blocks(5, seed=4)
        forward = hazard_trace(model, blocks)
        mirrored = hazard_trace(model, [-b for b in blocks])
        np.testing.assert_allclose(mirrored.h, forward.h, rtol=1e-12)

    def test_rolling_means_skip_invalid_blocks(self):
        blocks = drifting_blocks(5, seed=6)
        blocks[3] = blocks[2].copy()
        trace = hazard_trace(random_model([3, 5, 1], seed=6), blocks)
        h = trace.h
        assert list(trace.valid) == [True, True, False, True]
        assert np.isnan(trace.roll2_h[2])
        assert trace.roll2_h[0] == h[0]
        assert trace.roll2_h[3] == pytest.approx((h[1] + h[3]) / 2.0, rel=1e-14)
        assert trace.roll3_h[3] == pytest.approx((h[0] + h[1] + h[3]) / 3.0, rel=1e-14)

    def test_needs_two_blocks(self):
        with pytest.raises(ShapeError):
            hazard_trace(random_model([3, 4, 1], seed=0), drifting_blocks(1))


class TestDecomposition:
    def test_aligned_drift(self):
        model = random_model([3, 6, 1], seed=3)
        samples = np.random.default_rng(3).standard_normal((40, 3))
        v = np.array([0.0, 0.6, 0.8])
        parts = decompose_hazard(model, samples, v, v, abar=1.5, rho=np.zeros(3))
        assert parts.theta == 0.0
        assert parts.g_direct == pytest.approx(parts.g_par, rel=1e-12)

    def test_orthogonal_drift(self):
        model = random_model([3, 6, 1], seed=4)
        samples = np.random.default_rng(4).standard_normal((40, 3))
        v_ref = np.array([1.0, 0.0, 0.0])
        rho = np.array([0.0, 0.0, 2.0])
        parts = decompose_hazard(model, samples, np.array([0.0, 0.0, 1.0]), v_ref, abar=0.0, rho=rho)
        assert parts.theta == pytest.approx(math.pi / 2)
        assert parts.g_direct == pytest.approx(parts.g_perp, rel=1e-12)

    def test_identities_on_random_instances(self):
        rng = np.random.default_rng(99)
        for i in range(100):
            d = int(rng.integers(2, 7))
            model = random_model([d, 5, 4, 1], seed=i)
            samples = rng.standard_normal((30, d))
            v_ref = rng.standard_normal(d)
            v_ref /= np.linalg.norm(v_ref)
            parts = decompose_from_shift(model, samples, rng.standard_normal(d), v_ref)
            assert abs(parts.s**2 - (parts.abar**2 + parts.rho_norm**2)) <= 1e-10 * max(1.0, parts.s**2)
            assert abs(parts.g_reconstructed - parts.g_direct) <= 1e-10 * max(1.0, parts.g_direct)

    def test_rejects_non_unit_reference(self):
        model = random_model([2, 3, 1], seed=0)
        with pytest.raises(ShapeError):
            decompose_hazard(model, np.ones((3, 2)), np.array([1.0, 0.0]), np.array([2.0, 0.0]), 1.0, np.zeros(2))

    def test_rejects_residual_along_reference(self):
        model = random_model([2, 3, 1], seed=0)
        with pytest.raises(ShapeError):
            decompose_hazard(model, np.ones((3, 2)), np.array([1.0, 0.0]), np.array([1.0, 0.0]), 0.5, np.array([0.5, 0.0]))

    def test_table_has_one_row_per_shifted_block(self):
        blocks = drifting_blocks(6, seed=7)
        table = decomposition_table(random_model([3, 5, 1], seed=7), blocks, np.array([0.0, 1.0, 0.0]))
        assert list(table["block_index"]) == [1, 2, 3, 4, 5]
        np.testing.assert_allclose(table["g"], table["g_reconstructed"], rtol=1e-10, atol=1e-12)


class TestSpearman:
    risks = np.array([0.0, 1.0, 3.0, 6.0, 10.0])

    def test_monotone_score(self):
        assert spearman_vs_risk_movement(np.array([1.0, 2.0, 3.0, 4.0, 99.0]), self.risks) == pytest.approx(1.0)

    def test_reversed_score(self):
        assert spearman_vs_risk_movement(np.array([4.0, 3.0, 2.0, 1.0, 0.0]), self.risks) == pytest.approx(-1.0)

    def test_invalid_entries_are_dropped(self):
        score = np.array([np.nan, 2.0, 3.0, 4.0, 0.0])
        assert spearman_vs_risk_movement(score, self.risks) == pytest.approx(1.0)

    def test_too_few_pairs(self):
        with pytest.raises(ShapeError):
            spearman_vs_risk_movement(np.array([np.nan, np.nan, 1.0, 2.0, 3.0]), self.risks)

    def test_pooled_across_seeds(self):
        per_seed = [(np.array([1.0, 2.0, 3.0, 4.0, 0.0]), self.risks), (np.array([5.0, 6.0, 7.0, 8.0, 0.0]), 2 * self.risks)]
        result = aggregate_spearman("hazard", per_seed)
        assert result.rho == pytest.approx(1.0)
        assert (result.n_pairs, result.n_seeds) == (8, 2)

    def test_ablation_reports_every_score(self):
        model = random_model([3, 5, 1], seed=1)
        traces, risks = [], []
        for seed in range(3):
            blocks = drifting_blocks(8, seed=seed)
            traces.append(hazard_trace(model, blocks))
            risks.append(np.random.default_rng(seed).uniform(0, 1, 8))
        names = [r.score for r in spearman_ablation(traces, risks)]
        assert names == ["drift_only_s2", "gain", "hazard", "roll2_hazard", "roll3_hazard"]

    def test_bootstrap_of_identical_scores(self):
        rng = np.random.default_rng(5)
        per_seed = [(rng.uniform(size=6), rng.uniform(size=6)) for _ in range(4)]
        point, low, high = bootstrap_spearman_difference(per_seed, per_seed, n_boot=200, seed=3)
        assert point == 0.0
        assert low == 0.0 and high == 0.0
