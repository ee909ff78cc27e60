import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from mfuq.dimreduce import standardize
from mfuq.errors import UsageError
from mfuq.features import (TrainingSet, assemble_training_set, build_feature_space, rank_features,
                           select_diverse_subset, selection_space)
from mfuq.inputs import ScalarDistribution, assemble_samples


def _reduced(rng, n=500, d=6):
    return standardize(rng.normal(size=(n, d)), [f"c{j}" for j in range(d)])


def _pearson_order(x, y):
    r = np.array([abs(np.corrcoef(x[:, j], y)[0, 1]) for j in range(x.shape[1])])
    return np.argsort(-r, kind="stable")


class TestRankFeatures:
    def test_perfect_correlation_scores_n(self, rng):
        red = _reduced(rng)
        rk = rank_features(red, red.data[:, 3])
        assert rk.scores[3] == pytest.approx(500, rel=1e-12)
        assert rk.order[0] == 3

    def test_independent_noise_bound(self, rng):
        n = 10**4
        red = _reduced(rng, n=n, d=10)
        rk = rank_features(red, rng.normal(size=n))
        assert np.all(rk.scores <= 4 * np.sqrt(n))

    def test_matches_brute_force_pearson(self, rng):
        x = rng.normal(size=(2000, 5))
        y = 2 * x[:, 1] + 0.1 * x[:, 2] + 0.01 * rng.normal(size=2000)
        rk = rank_features(standardize(x), y)
        assert list(rk.order[:2]) == [1, 2]
        np.testing.assert_array_equal(rk.order, _pearson_order(x, y))
        np.testing.assert_allclose(rk.scores / 2000, [abs(np.corrcoef(x[:, j], y)[0, 1]) for j in range(5)],
                                   rtol=1e-10)

    @given(st.floats(1e-3, 1e3), st.integers(0, 1000))
    def test_invariant_under_positive_rescaling(self, scale, seed):
        r = np.random.default_rng(seed)
        red = _reduced(r, n=200, d=4)
        y = red.data @ np.array([1.0, -0.5, 0.25, 0.1]) + r.normal(size=200)
        a = rank_features(red, y).order
        b = rank_features(red, scale * y).order
        np.testing.assert_array_equal(a, b)

    def test_ties_and_constant_columns(self):
        base = np.random.default_rng(0).normal(size=100)
        x = np.column_stack([np.ones(100), base, base, -base])
        rk = rank_features(standardize(x), base)
        assert list(rk.order) == [1, 2, 3, 0]
        assert not rk.eligible[0]

    def test_length_mismatch(self, rng):
        with pytest.raises(UsageError):
            rank_features(_reduced(rng), np.zeros(3))


class TestFeatureSpace:
    def setup_method(self):
        r = np.random.default_rng(3)
        self.red = _reduced(r, n=300, d=7)
        self.y = self.red.data @ np.linspace(1, 0.1, 7) + 0.1 * r.normal(size=300) + 10.0
        self.rk = rank_features(self.red, self.y)

    def test_widths(self):
        fs0 = build_feature_space(self.rk, self.red, self.y, 0, 5)
        assert fs0.z_matrix.shape == (300, 1)
        np.testing.assert_array_equal(fs0.z_matrix[:, 0], self.y)  # raw units
        fs = build_feature_space(self.rk, self.red, self.y, 2, 5)
        assert fs.z_matrix.shape[1] == 3 and fs.gamma_plus.shape[1] == 5
        assert len(set(fs.selected_cols)) == 5

    def test_nesting(self):
        for k in range(5):
            a = build_feature_space(self.rk, self.red, self.y, k, 5).z_matrix
            b = build_feature_space(self.rk, self.red, self.y, k + 1, 5).z_matrix
            np.testing.assert_array_equal(a, b[:, : k + 1])

    def test_errors(self):
        with pytest.raises(UsageError):
            build_feature_space(self.rk, self.red, self.y, 3, 2)
        with pytest.raises(UsageError):
            build_feature_space(self.rk, self.red, self.y, 2, 8)

    def test_selection_space_without_features(self):
        fs = build_feature_space(self.rk, self.red, self.y, 0, 0)
        s = selection_space(fs)
        assert s.shape == (300, 1)
        assert abs(s.mean()) < 1e-12 and s.std() == pytest.approx(1.0)


def _exhaustive_best(points, k):
    best = 0.0
    for combo in itertools.combinations(range(len(points)), k):
        best = max(best, pdist(points[list(combo)]).min())
    return best


class TestDiverseSubset:
    def test_all_points(self, rng):
        pts = rng.uniform(size=(12, 2))
        assert sorted(select_diverse_subset(pts, 12)) == list(range(12))

    def test_three_points(self):
        pts = np.array([[0.0], [0.1], [1.0]])
        idx = select_diverse_subset(pts, 2)
        assert idx[0] in (0, 1) and idx[1] == 2
        chosen = pts[idx]
        assert pdist(chosen).min() >= 0.9
        assert _exhaustive_best(pts, 2) == pytest.approx(1.0)
        assert pdist(chosen).min() >= 0.5 * _exhaustive_best(pts, 2)

    @pytest.mark.parametrize("seed", range(3))
    def test_half_of_exhaustive_optimum(self, seed):
        pts = np.random.default_rng(seed).uniform(size=(20, 2))
        idx = select_diverse_subset(pts, 5)
        assert pdist(pts[idx]).min() >= 0.5 * _exhaustive_best(pts, 5)

    def test_hundred_points_against_covering_bound(self, rng):
        # any 10 points with pairwise distance t need disjoint t/2-balls; the greedy
        # value d also covers every point within d, so the optimum is at most 2 d
        pts = rng.uniform(size=(100, 2))
        idx = select_diverse_subset(pts, 10)
        d = pdist(pts[idx]).min()
        rest = np.min(np.linalg.norm(pts[:, None] - pts[idx][None], axis=-1), axis=1)
        assert rest.max() <= d + 1e-12

    def test_prefix_and_monotone(self, rng):
        pts = rng.normal(size=(200, 3))
        big = select_diverse_subset(pts, 40)
        prev = np.inf
        for k in range(2, 41):
            small = select_diverse_subset(pts, k)
            np.testing.assert_array_equal(small, big[:k])
            cur = pdist(pts[small]).min()
            assert cur <= prev + 1e-15
            prev = cur

    def test_starts_near_median(self, rng):
        pts = rng.normal(size=(51, 2))
        first = select_diverse_subset(pts, 1)[0]
        d = np.sum((pts - np.median(pts, axis=0)) ** 2, axis=1)
        assert first == np.argmin(d)

    def test_too_many(self):
        with pytest.raises(UsageError):
            select_diverse_subset(np.zeros((3, 1)), 4)


class TestTrainingSet:
    def _fs(self, n, seed=0):
        X = assemble_samples([ScalarDistribution.uniform(f"x{i}", 0, 1) for i in range(4)], n, seed)
        red = standardize(X.data)
        y = X.data.sum(1)
        rk = rank_features(red, y)
        return X, build_feature_space(rk, red, y, 2, 4), y

    def test_single_row(self):
        X, fs, y = self._fs(5)
        ts = assemble_training_set(X, fs, [0], [7.0], max_fraction=None)
        np.testing.assert_array_equal(ts.X, X.data[:1])
        np.testing.assert_array_equal(ts.Z_LF, fs.z_matrix[:1])
        assert ts.Y_HF.tolist() == [7.0]

    @pytest.mark.parametrize("n, n_train", [(10_000, 150), (7000, 50)])
    def test_sizes(self, n, n_train):
        X, fs, y = self._fs(n)
        idx = select_diverse_subset(selection_space(fs), n_train)
        ts = assemble_training_set(X, fs, idx, y[idx])
        assert ts.n_train == n_train and ts.X.shape == (n_train, 4)

    def test_errors(self):
        X, fs, y = self._fs(100)
        with pytest.raises(UsageError):
            assemble_training_set(X, fs, [1, 2], [1.0])
        with pytest.raises(UsageError):
            assemble_training_set(X, fs, [1, 1], [1.0, 1.0])
        with pytest.raises(UsageError):
            assemble_training_set(X, fs, [100], [1.0])
        with pytest.raises(UsageError):
            assemble_training_set(X, fs, list(range(11)), np.zeros(11))

    def test_round_trip(self, tmp_path):
        X, fs, y = self._fs(200)
        idx = select_diverse_subset(selection_space(fs), 10)
        ts = assemble_training_set(X, fs, idx, y[idx])
        ts.save(tmp_path / "t")
        back = TrainingSet.load(tmp_path / "t")
        for a in ("X", "Z_LF", "Y_HF", "selection_indices"):
            np.testing.assert_array_equal(getattr(back, a), getattr(ts, a))
        assert back.feature_manifest["n_gamma_plus"] == 4
