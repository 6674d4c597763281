import math

import numpy as np
import pytest

from evokit.core import Population, init_state
from evokit.des import DEFAULT_BETA, DesConfig, des_step, des_weights


def softmax(logits):
    shifted = np.asarray(logits) - np.max(logits)
    e = np.exp(shifted)
    return e / e.sum()


class TestDesWeights:
    def test_two_member_oracle(self):
        # N=2: centered ranks are -0.5 and +0.5, logits -20*sigmoid(+-6.25)
        w = des_weights(2, 12.5)
        lo = -20.0 / (1.0 + math.exp(6.25))
        hi = -20.0 / (1.0 + math.exp(-6.25))
        z = math.exp(lo) + math.exp(hi)
        assert w[0] == pytest.approx(math.exp(lo) / z, rel=1e-12)
        assert w[1] == pytest.approx(math.exp(hi) / z, rel=1e-12)
        assert w[1] < 3e-9

    def test_equivalent_softmax_forms(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 65))
            beta = float(rng.uniform(0, 50))
            ranks = np.arange(n) / (n - 1) - 0.5
            sig = 1.0 / (1.0 + np.exp(-beta * ranks))
            a = softmax(-20.0 * sig)
            b = softmax(20.0 * (1.0 - sig))
            w = des_weights(n, beta)
            assert np.max(np.abs(a - w)) <= 1e-12
            assert np.max(np.abs(b - w)) <= 1e-12

    def test_monotone_decreasing(self):
        for n in (2, 5, 16, 64):
            w = des_weights(n, 12.5)
            assert np.all(np.diff(w) < 0)

    def test_simplex(self):
        w = des_weights(16)
        assert np.all(w >= 0)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_zero_beta_uniform(self):
        w = des_weights(7, 0.0)
        assert np.allclose(w, 1 / 7, atol=1e-15)

    def test_small_popsize_rejected(self):
        with pytest.raises(ValueError):
            des_weights(1)

    def test_default_beta(self):
        assert DEFAULT_BETA == 12.5
        assert np.array_equal(des_weights(8), des_weights(8, 12.5))


class TestDesStep:
    def test_full_mean_replacement(self):
        rng = np.random.default_rng(1)
        state = init_state(3, rng.normal(size=3), np.full(3, 0.5))
        x = rng.normal(size=(8, 3))
        f = rng.normal(size=8)
        new = des_step(state, Population(x, f))
        order = np.argsort(f)
        want = des_weights(8) @ x[order]
        assert np.array_equal(new.mean, want)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        state = init_state(2, [0.0, 0.0], [1.0, 1.0])
        x = rng.normal(size=(6, 2))
        f = rng.normal(size=6)
        a = des_step(state, Population(x, f))
        b = des_step(state, Population(x, f + 1234.5))
        assert np.array_equal(a.mean, b.mean)
        assert np.array_equal(a.sigma, b.sigma)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        state = init_state(2, [0.0, 0.0], [1.0, 1.0])
        x = rng.normal(size=(9, 2))
        f = rng.normal(size=9)
        base = des_step(state, Population(x, f))
        for _ in range(10):
            perm = rng.permutation(9)
            other = des_step(state, Population(x[perm], f[perm]))
            assert np.array_equal(base.mean, other.mean)
            assert np.array_equal(base.sigma, other.sigma)

    def test_counter_and_best_tracking(self):
        rng = np.random.default_rng(4)
        state = init_state(1, [0.0], [1.0])
        for gen in range(3):
            pop = Population(rng.normal(size=(4, 1)), rng.normal(size=4))
            prev_best = state.best_fitness
            state = des_step(state, pop)
            assert state.gen_counter == gen + 1
            assert state.best_fitness == min(prev_best, pop.fitness.min())

    def test_sphere_convergence(self):
        rng = np.random.default_rng(5)
        state = init_state(3, [2.0, -1.5, 1.0], np.full(3, 1.0))
        for _ in range(80):
            x = state.mean + state.sigma * rng.standard_normal((16, 3))
            state = des_step(state, Population(x, (x**2).sum(axis=1)))
        assert (state.mean**2).sum() < 1e-2

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DesConfig(beta=-1.0)
