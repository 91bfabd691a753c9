import math

import numpy as np
import pytest

from conftest import orthonormal
from driftguard.errors import NoDriftError, RankDeficiencyError, SubspaceError
from driftguard.services.drift_geometry import (
    DriftSubspace,
    all_covariates_subspace,
    alignment,
    diff_cloud_pca,
    mean_diff_direction,
    rotated_direction,
    rotated_subspace,
    target_orthogonal_sensor_subspace,
)


def planted_cloud(seed: int, n: int = 40):
    directions = orthonormal(5, 2, seed)
    left, _ = np.linalg.qr(np.random.default_rng(seed + 1).standard_normal((n, 2)))
    return left @ np.diag([3.0, 1.0]) @ directions.T, directions


class TestMeanDiff:
    def test_normalizes(self):
        np.testing.assert_allclose(mean_diff_direction(np.array([4.0, 6.0]), np.array([1.0, 2.0])), [0.6, 0.8])

    def test_no_drift(self):
        with pytest.raises(NoDriftError):
            mean_diff_direction(np.ones(3), np.ones(3))

    def test_unit_norm(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            v = mean_diff_direction(rng.standard_normal(6), rng.standard_normal(6))
            assert abs(np.linalg.norm(v) - 1.0) <= 1e-12


class TestDiffCloudPca:
    def test_single_axis_with_sign_rule(self):
        cloud = np.outer([1.0, -2.0, 0.5, -3.0], [0.0, 1.0, 0.0])
        basis = diff_cloud_pca(cloud, 1).basis
        np.testing.assert_allclose(basis[:, 0], [0.0, 1.0, 0.0], atol=1e-12)

    def test_recovers_planted_directions(self):
        cloud, directions = planted_cloud(seed=3)
        subspace = diff_cloud_pca(cloud, 2)
        for i in range(2):
            cosine = abs(float(subspace.basis[:, i] @ directions[:, i]))
            assert math.acos(min(cosine, 1.0)) <= 1e-6
        np.testing.assert_allclose(subspace.singular_values, [3.0, 1.0], rtol=1e-9)

    def test_projection_is_a_fixed_point(self):
        cloud, _ = planted_cloud(seed=5)
        first = diff_cloud_pca(cloud, 2).basis
        second = diff_cloud_pca(cloud @ first @ first.T, 2).basis
        np.testing.assert_allclose(second, first, atol=1e-10)

    def test_row_permutation_invariance(self):
        cloud, _ = planted_cloud(seed=8)
        perm = np.random.default_rng(8).permutation(cloud.shape[0])
        np.testing.assert_allclose(diff_cloud_pca(cloud[perm], 2).basis, diff_cloud_pca(cloud, 2).basis, atol=1e-10)

    def test_rank_deficiency_names_attained_rank(self):
        cloud = np.outer(np.arange(1.0, 6.0), [1.0, 1.0, 0.0])
        with pytest.raises(RankDeficiencyError) as info:
            diff_cloud_pca(cloud, 2)
        assert info.value.attained_rank == 1

    def test_orthonormal_output(self):
        rng = np.random.default_rng(11)
        basis = diff_cloud_pca(rng.standard_normal((50, 6)), 3).basis
        assert np.max(np.abs(basis.T @ basis - np.eye(3))) <= 1e-10


class TestTargetOrthogonalSensor:
    def setup_method(self):
        rng = np.random.default_rng(21)
        self.train_x = rng.standard_normal((200, 8))
        u = rng.standard_normal(5)
        self.u = u / np.linalg.norm(u)
        self.train_y = self.train_x[:, :5] @ self.u + 0.7
        w = rng.standard_normal(5)
        w -= (w @ self.u) * self.u
        self.w = w / np.linalg.norm(w)
        self.weather_drift = rng.standard_normal((6, 3))

    def block_means(self, shift: np.ndarray) -> np.ndarray:
        steps = np.array([1.0, 0.5, 2.0, 1.5, 0.8])[:, None] * shift
        sensor = np.vstack([np.zeros(5), np.cumsum(steps, axis=0)])
        return np.hstack([sensor, self.weather_drift])

    def test_recovers_orthogonal_component(self):
        subspace = target_orthogonal_sensor_subspace(
            self.train_x, self.train_y, self.block_means(self.u + self.w), range(5), k=1
        )
        column = subspace.basis[:, 0]
        assert abs(float(column[:5] @ self.u)) <= 1e-10
        assert abs(abs(float(column[:5] @ self.w)) - 1.0) <= 1e-10
        np.testing.assert_array_equal(column[5:], 0.0)
        assert not subspace.ridge_fallback

    def test_rank_two_is_orthogonal_to_target(self):
        rng = np.random.default_rng(4)
        means = np.hstack([np.cumsum(rng.standard_normal((6, 5)), axis=0), self.weather_drift])
        subspace = target_orthogonal_sensor_subspace(self.train_x, self.train_y, means, range(5), k=2)
        assert np.max(np.abs(self.u @ subspace.basis[:5])) <= 1e-10
        np.testing.assert_array_equal(subspace.basis[5:], 0.0)

    def test_target_aligned_drift_has_no_subspace(self):
        with pytest.raises(RankDeficiencyError):
            target_orthogonal_sensor_subspace(self.train_x, self.train_y, self.block_means(self.u), range(5), k=1)

    def test_needs_three_blocks(self):
        with pytest.raises(SubspaceError):
            target_orthogonal_sensor_subspace(self.train_x, self.train_y, np.zeros((2, 8)), range(5))

    def test_all_covariates_spans_every_coordinate(self):
        means = np.cumsum(np.random.default_rng(2).standard_normal((7, 4)), axis=0)
        subspace = all_covariates_subspace(means, k=2)
        assert subspace.provenance == "all_covariates"
        assert subspace.rank == 2


class TestRotation:
    def test_zero_angle_is_drift_axis(self):
        np.testing.assert_array_equal(rotated_direction(0.0), [0.0, 1.0])

    def test_right_angle_is_orthogonal(self):
        np.testing.assert_allclose(rotated_direction(math.pi / 2), [1.0, 0.0], atol=1e-16)

    def test_alignment_is_cosine(self):
        subspace = rotated_subspace(math.radians(20.0))
        assert alignment(subspace, np.array([0.0, 1.0])) == pytest.approx(0.9397, abs=1e-4)
        assert subspace.label == "rotated_20deg"

    def test_non_orthonormal_basis_is_rejected(self):
        with pytest.raises(SubspaceError):
            DriftSubspace(np.array([[1.0, 1.0], [0.0, 1.0]]), "identity")
