import json
import math
from dataclasses import replace

import numpy as np
import pytest

from evokit.core import ContractViolation, Population, init_state, sort_population
from evokit.les import (
    DEFAULT_GAMMAS,
    DEFAULT_TIMESCALES,
    LesConfig,
    attention_weights,
    flatten_params,
    les_tell,
    les_tell_trace,
    load_checkpoint,
    lrate_mlp,
    param_count,
    random_params,
    save_checkpoint,
    timestamp_embedding,
    unflatten_params,
    update_paths,
    zero_params,
)
from evokit.shaping import fitness_features


def reference_attention(params, tokens, scale):
    """Straight-line re-derivation with explicit loops, no shared code."""
    n = len(tokens)
    d_k = len(params.b_q)
    q = [[sum(tokens[i][f] * params.w_q[f][a] for f in range(3)) + params.b_q[a] for a in range(d_k)] for i in range(n)]
    k = [[sum(tokens[i][f] * params.w_k[f][a] for f in range(3)) + params.b_k[a] for a in range(d_k)] for i in range(n)]
    v = [sum(tokens[i][f] * params.w_v[f][0] for f in range(3)) + params.b_v[0] for i in range(n)]
    scores = [[sum(q[i][a] * k[j][a] for a in range(d_k)) / scale for j in range(n)] for i in range(n)]
    pooled = []
    for i in range(n):
        mx = max(scores[i])
        es = [math.exp(s - mx) for s in scores[i]]
        tot = sum(es)
        pooled.append(sum(es[j] / tot * v[j] for j in range(n)))
    mx = max(pooled)
    ew = [math.exp(p - mx) for p in pooled]
    tot = sum(ew)
    return np.array([e / tot for e in ew])


def reference_lrates(params, pc_row, ps_row, embed):
    hidden = len(params.b_mlp)
    x = list(pc_row) + list(ps_row) + list(embed)
    h = []
    for a in range(hidden):
        acc = sum(x[i] * params.w_mlp[i][a] for i in range(len(x))) + params.b_mlp[a]
        h.append(max(0.0, acc))
    lm = sum(h[a] * params.w_head_m[a] for a in range(hidden)) + params.b_head_m[0]
    ls = sum(h[a] * params.w_head_s[a] for a in range(hidden)) + params.b_head_s[0]
    sig = lambda t: 1.0 / (1.0 + math.exp(-t))
    return sig(lm), sig(ls)


class TestParams:
    def test_param_count_default(self):
        assert param_count() == 246

    def test_param_count_matches_shapes(self):
        for cfg in (LesConfig(), LesConfig(d_k=4, hidden=16), LesConfig(d_k=1, hidden=1)):
            total = len(flatten_params(zero_params(cfg)))
            assert param_count(cfg) == total

    def test_flatten_round_trip_exact(self):
        rng = np.random.default_rng(0)
        flat = rng.normal(size=param_count())
        back = flatten_params(unflatten_params(flat))
        assert np.array_equal(flat, back)

    def test_unflatten_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            unflatten_params(np.zeros(245))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LesConfig(attention_scale="bogus")
        with pytest.raises(ValueError):
            LesConfig(d_k=0)


class TestAttentionWeights:
    def test_simplex(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            params = random_params(rng)
            w = attention_weights(params, rng.normal(size=(int(rng.integers(2, 12)), 3)))
            assert np.all(w > 0)
            assert w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_zero_params_uniform(self):
        w = attention_weights(zero_params(), np.random.default_rng(0).normal(size=(7, 3)))
        assert np.allclose(w, 1 / 7, atol=1e-15)

    def test_matches_reference(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            params = random_params(rng, scale=0.5)
            n = int(rng.integers(2, 9))
            tokens = rng.normal(size=(n, 3))
            got = attention_weights(params, tokens, "sqrt_dk")
            want = reference_attention(params, tokens, math.sqrt(8))
            assert np.max(np.abs(got - want)) < 1e-10

    def test_scale_modes_differ(self):
        rng = np.random.default_rng(2)
        params = random_params(rng)
        tokens = rng.normal(size=(4, 3))
        a = attention_weights(params, tokens, "sqrt_dk")
        b = attention_weights(params, tokens, "sqrt_n")
        assert not np.allclose(a, b)
        ref = reference_attention(params, tokens, math.sqrt(4))
        assert np.max(np.abs(b - ref)) < 1e-10

    def test_permutation_equivariant(self):
        rng = np.random.default_rng(4)
        params = random_params(rng)
        tokens = rng.normal(size=(6, 3))
        w = attention_weights(params, tokens)
        perm = rng.permutation(6)
        assert np.allclose(attention_weights(params, tokens[perm]), w[perm], atol=1e-14)

    def test_rejects_nonfinite_params(self):
        params = zero_params()
        bad = replace(params, w_q=np.full_like(params.w_q, np.nan))
        with pytest.raises(ContractViolation):
            attention_weights(bad, np.zeros((3, 3)))

    def test_rejects_tiny_population(self):
        with pytest.raises(ValueError):
            attention_weights(zero_params(), np.zeros((1, 3)))

    def test_unknown_scale_mode(self):
        with pytest.raises(ValueError):
            attention_weights(zero_params(), np.zeros((3, 3)), "bogus")


class TestTimestampEmbedding:
    def test_grid_size_and_values(self):
        e = timestamp_embedding(0)
        assert e.shape == (13,)
        assert np.allclose(e, np.tanh(-1.0))

    def test_zero_at_matching_gamma(self):
        e = timestamp_embedding(50)
        assert e[DEFAULT_GAMMAS.index(50)] == 0.0

    def test_saturates_late(self):
        assert np.all(timestamp_embedding(10**6) > 0.999)


class TestUpdatePaths:
    def test_ema_example(self):
        out = update_paths(np.array([[1.0, 1.0, 1.0]]), np.array([2.0]))
        assert np.allclose(out, [[1.1, 1.5, 1.9]], atol=1e-15)

    def test_literal_variant_example(self):
        out = update_paths(np.array([[1.0, 1.0, 1.0]]), np.array([2.0]), literal=True)
        assert np.allclose(out, [[1.0, 1.0, 1.0]], atol=1e-15)

    def test_zero_path_absorbs_scaled_delta(self):
        out = update_paths(np.zeros((2, 3)), np.array([1.0, -2.0]))
        want = np.outer([1.0, -2.0], DEFAULT_TIMESCALES)
        assert np.allclose(out, want, atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            update_paths(np.zeros((2, 3)), np.zeros(3))
        with pytest.raises(ValueError):
            update_paths(np.zeros((2, 2)), np.zeros(2))


class TestLrateMlp:
    def test_zero_params_give_half(self):
        am, asig = lrate_mlp(zero_params(), np.zeros(3), np.zeros(3), np.zeros(13))
        assert am == 0.5 and asig == 0.5

    def test_range_and_shapes(self):
        rng = np.random.default_rng(8)
        params = random_params(rng)
        am, asig = lrate_mlp(params, rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=13))
        assert am.shape == (5,) and asig.shape == (5,)
        assert np.all((am > 0) & (am < 1))
        assert np.all((asig > 0) & (asig < 1))

    def test_single_row_matches_matrix(self):
        rng = np.random.default_rng(12)
        params = random_params(rng)
        pc = rng.normal(size=(4, 3))
        ps = rng.normal(size=(4, 3))
        embed = rng.normal(size=13)
        am, asig = lrate_mlp(params, pc, ps, embed)
        am1, asig1 = lrate_mlp(params, pc[2], ps[2], embed)
        assert am1 == pytest.approx(am[2], abs=1e-12)
        assert asig1 == pytest.approx(asig[2], abs=1e-12)

    def test_matches_reference(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            params = random_params(rng, scale=0.5)
            pc = rng.normal(size=3)
            ps = rng.normal(size=3)
            embed = rng.normal(size=13)
            am, asig = lrate_mlp(params, pc, ps, embed)
            ram, rasig = reference_lrates(params, pc, ps, embed)
            assert abs(am - ram) < 1e-10
            assert abs(asig - rasig) < 1e-10


class TestLesTell:
    def test_zero_params_reduce_to_uniform_half_rate(self):
        rng = np.random.default_rng(3)
        state = init_state(2, [1.0, -1.0], [0.5, 2.0])
        x = rng.normal(size=(6, 2))
        f = rng.normal(size=6)
        new = les_tell(state, Population(x, f), zero_params())
        w = np.full(6, 1 / 6)
        want_mean = 0.5 * state.mean + 0.5 * (w @ x)
        want_sigma = 0.5 * state.sigma + 0.5 * np.sqrt(w @ (x - state.mean) ** 2 + 1e-10)
        assert np.allclose(new.mean, want_mean, atol=1e-14)
        assert np.allclose(new.sigma, want_sigma, atol=1e-14)
        assert new.gen_counter == 1
        assert new.best_fitness == f.min()

    def test_permutation_bit_identical(self):
        rng = np.random.default_rng(17)
        params = random_params(rng)
        state = init_state(3, rng.normal(size=3), np.full(3, 0.7))
        x = rng.normal(size=(8, 3))
        f = rng.normal(size=8)
        base = les_tell(state, Population(x, f), params)
        for _ in range(10):
            perm = rng.permutation(8)
            other = les_tell(state, Population(x[perm], f[perm]), params)
            assert np.array_equal(base.mean, other.mean)
            assert np.array_equal(base.sigma, other.sigma)
            assert np.array_equal(base.path_c, other.path_c)
            assert np.array_equal(base.path_sigma, other.path_sigma)

    def test_paths_update_from_weighted_steps(self):
        rng = np.random.default_rng(6)
        params = random_params(rng)
        state = init_state(2, [0.0, 0.0], [2.0, 0.5])
        x = rng.normal(size=(5, 2))
        f = rng.normal(size=5)
        new, w, _, _ = les_tell_trace(state, Population(x, f), params)
        xs = sort_population(Population(x, f)).candidates
        diff = w @ (xs - state.mean)
        noise = w @ ((xs - state.mean) / state.sigma)
        assert np.allclose(new.path_c, np.outer(diff, DEFAULT_TIMESCALES), atol=1e-12)
        assert np.allclose(new.path_sigma, np.outer(noise, DEFAULT_TIMESCALES), atol=1e-12)

    def test_embedding_uses_pre_update_counter(self):
        # a parameter vector whose rates depend only on the embedding
        cfg = LesConfig()
        params = zero_params(cfg)
        w_mlp = np.zeros((cfg.mlp_in, cfg.hidden))
        w_mlp[6 + DEFAULT_GAMMAS.index(50), 0] = 1.0  # first embed feature into unit 0
        params = replace(params, w_mlp=w_mlp, w_head_m=np.eye(cfg.hidden)[0] * 4.0)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 2))
        f = rng.normal(size=4)
        state = replace(init_state(2, [0.0, 0.0], [1.0, 1.0]), gen_counter=50)
        _, _, alpha_m, _ = les_tell_trace(state, Population(x, f), params, cfg)
        # at t = 50 = gamma the embedding entry is 0, relu(0) = 0, sigmoid(0) = 0.5
        assert np.allclose(alpha_m, 0.5)
        state51 = replace(state, gen_counter=51)
        _, _, alpha_m51, _ = les_tell_trace(state51, Population(x, f), params, cfg)
        assert not np.allclose(alpha_m51, 0.5)

    def test_trace_returns_rank_ordered_weights(self):
        rng = np.random.default_rng(14)
        params = random_params(rng)
        state = init_state(2, [0.0, 0.0], [1.0, 1.0])
        x = rng.normal(size=(6, 2))
        f = rng.normal(size=6)
        _, w, am, asig = les_tell_trace(state, Population(x, f), params)
        feats = fitness_features(np.sort(f), state.best_fitness)
        assert np.allclose(w, attention_weights(params, feats), atol=1e-14)
        assert am.shape == (2,) and asig.shape == (2,)

    def test_sigma_floor_guard(self):
        # zero sigma must not divide by zero in the noise path
        state = replace(init_state(2, [0.0, 0.0], [1.0, 1.0]), sigma=np.array([0.0, 1.0]))
        rng = np.random.default_rng(1)
        new = les_tell(state, Population(rng.normal(size=(4, 2)), rng.normal(size=4)), zero_params())
        assert np.all(np.isfinite(new.path_sigma))


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(33)
        cfg = LesConfig(d_k=4, hidden=5, attention_scale="sqrt_n", literal_appendix_path=True)
        params = random_params(rng, cfg)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, params, cfg, extra={"note": 1})
        loaded, loaded_cfg, extra = load_checkpoint(path)
        assert np.array_equal(flatten_params(loaded), flatten_params(params))
        assert loaded_cfg.d_k == 4 and loaded_cfg.hidden == 5
        assert loaded_cfg.attention_scale == "sqrt_n"
        assert loaded_cfg.literal_appendix_path is True
        assert extra == {"note": 1}

    def test_version_check(self, tmp_path):
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, zero_params())
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError):
            load_checkpoint(path)
