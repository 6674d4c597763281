import numpy as np
import pytest

from evokit.shaping import (
    ZSCORE_EPS,
    centered_rank,
    fitness_features,
    improvement_flags,
    zscore,
)


class TestZscore:
    def test_matches_formula(self):
        f = np.array([3.0, 1.0, 2.0, 6.0])
        want = (f - f.mean()) / (f.std() + ZSCORE_EPS)
        assert np.array_equal(zscore(f), want)

    def test_standardized(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            z = zscore(rng.normal(size=int(rng.integers(2, 40))))
            assert abs(z.mean()) < 1e-12
            assert z.std() == pytest.approx(1.0, abs=1e-6)

    def test_constant_input_all_zeros(self):
        assert np.array_equal(zscore([2.0, 2.0, 2.0]), np.zeros(3))

    def test_too_small(self):
        with pytest.raises(ValueError):
            zscore([1.0])


class TestCenteredRank:
    def test_endpoints(self):
        r = centered_rank([5.0, 1.0, 3.0])
        assert np.array_equal(r, [0.5, -0.5, 0.0])

    def test_best_is_negative_half(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            f = rng.normal(size=int(rng.integers(2, 30)))
            r = centered_rank(f)
            assert r[np.argmin(f)] == -0.5
            assert r[np.argmax(f)] == 0.5
            assert abs(r.sum()) < 1e-12

    def test_ties_break_by_index(self):
        assert np.array_equal(centered_rank([1.0, 1.0, 2.0]), [-0.5, 0.0, 0.5])

    def test_too_small(self):
        with pytest.raises(ValueError):
            centered_rank([1.0])


class TestImprovementFlags:
    def test_strict_comparison(self):
        flags = improvement_flags([1.0, 2.0, 3.0], 2.0)
        assert np.array_equal(flags, [1.0, 0.0, 0.0])

    def test_infinite_best_marks_all(self):
        assert np.array_equal(improvement_flags([5.0, -5.0], np.inf), [1.0, 1.0])


class TestFitnessFeatures:
    def test_column_order(self):
        f = np.array([4.0, 1.0, 2.0])
        feats = fitness_features(f, 3.0)
        assert feats.shape == (3, 3)
        assert np.array_equal(feats[:, 0], zscore(f))
        assert np.array_equal(feats[:, 1], centered_rank(f))
        assert np.array_equal(feats[:, 2], improvement_flags(f, 3.0))
