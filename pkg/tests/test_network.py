"""Tests for the U-shaped architecture: construction identities, parameter
bookkeeping, and end-to-end joint equivariance."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from tensorcloud.layers import GroupElement, act_on_points, group_act
from tensorcloud.network import (
    NetworkConfig,
    centralize,
    expected_param_count,
    forward,
    init_params,
    invariant_head,
    short_circuit_mask,
    sum_pool,
)
from tensorcloud.tensor_algebra import random_orthogonal, random_permutation


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b)))


def centered_cloud(rng, n):
    return centralize(rng.uniform(-1.0, 1.0, size=(3, n)))


class TestCentralize:
    def test_two_points(self):
        x = np.array([[1.0, 3.0], [0.0, 0.0], [0.0, 0.0]])
        assert_allclose(centralize(x), [[-1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        x = centralize(rng.standard_normal((3, 7)))
        assert_allclose(centralize(x), x, atol=1e-12)

    def test_translation_invariant(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 5))
        t = rng.standard_normal((3, 1))
        assert_allclose(centralize(x + t), centralize(x), atol=1e-12)

    def test_column_sums_vanish(self):
        rng = np.random.default_rng(2)
        x = centralize(rng.standard_normal((3, 9)))
        assert np.max(np.abs(x.sum(axis=1))) <= 1e-12


class TestForwardConstruction:
    def test_single_ascent_reproduces_coordinates(self):
        cfg = NetworkConfig(max_order=1, channels=1)
        params = init_params(cfg)
        params["asc1.alpha1"] = np.ones(1)
        params["asc1.alpha2"] = np.zeros(1)
        params["asc1.gamma"] = np.eye(1)
        rng = np.random.default_rng(3)
        x = centered_cloud(rng, 6)
        out = forward(x, cfg, params)
        assert_allclose(out[:, 0, :], x.T)

    def test_rejects_uncentered_cloud(self):
        cfg = NetworkConfig(max_order=1, channels=1)
        with pytest.raises(ValueError):
            forward(np.ones((3, 4)), cfg, init_params(cfg))

    def test_rejects_single_point_with_knn(self):
        cfg = NetworkConfig(max_order=2, channels=1, k_nn=1, seed=4)
        with pytest.raises(ValueError):
            forward(np.zeros((3, 1)), cfg, init_params(cfg))

    def test_short_circuit_routes_skip_block(self):
        # with the mask at the only descent, the output is the stored order-0
        # field, which is identically one
        cfg = NetworkConfig(max_order=2, channels=3, seed=5)
        params = init_params(cfg)
        params["desc2.gamma"] = short_circuit_mask(cfg, 0).gamma
        rng = np.random.default_rng(6)
        out = forward(centered_cloud(rng, 5), cfg, params)
        assert_allclose(out, np.ones((5, 3)))

    def test_short_circuit_every_level_returns_start_field(self):
        # presets at both K=4 descents route the stored order-0 start field
        # (identically one) straight to the output
        cfg = NetworkConfig(max_order=4, channels=2, seed=8)
        params = init_params(cfg)
        params["desc4.gamma"] = short_circuit_mask(cfg, 2).gamma
        params["desc2.gamma"] = short_circuit_mask(cfg, 0).gamma
        rng = np.random.default_rng(9)
        out = forward(centered_cloud(rng, 6), cfg, params)
        assert_allclose(out, np.ones((6, 2)))

    def test_short_circuit_parity_checks(self):
        cfg = NetworkConfig(max_order=4, channels=2)
        with pytest.raises(ValueError):
            short_circuit_mask(cfg, 1)  # parity mismatch
        with pytest.raises(ValueError):
            short_circuit_mask(cfg, 4)  # no descent at the top level
        mask = short_circuit_mask(cfg, 2)
        assert_allclose(mask.gamma[2:, :], np.eye(2))
        assert_allclose(mask.gamma[:2, :], 0.0)


class TestSumPoolAndHead:
    def test_pool_ones(self):
        assert_allclose(sum_pool(np.ones((5, 2))), [5.0, 5.0])

    def test_pool_permutation_invariant(self):
        rng = np.random.default_rng(7)
        v = rng.standard_normal((6, 3))
        g = GroupElement(np.eye(3), random_permutation(rng, 6))
        # reordering a float sum can move the last ulp, nothing more
        assert_allclose(sum_pool(group_act(v, g)), sum_pool(v), rtol=1e-13, atol=1e-13)

    def test_pool_matches_loop(self):
        rng = np.random.default_rng(8)
        v = rng.standard_normal((4, 3))
        expected = [sum(v[j, c] for j in range(4)) for c in range(3)]
        assert_allclose(sum_pool(v), expected, atol=1e-12)

    def test_pool_rejects_higher_order(self):
        with pytest.raises(ValueError):
            sum_pool(np.zeros((4, 2, 3)))

    def test_zero_head(self):
        cfg = NetworkConfig(max_order=2, channels=3, head_widths=(4,))
        params = init_params(cfg)
        params["head0.w"] = np.zeros((3, 4))
        assert_allclose(invariant_head(np.array([1.0, 2.0, 3.0]), cfg, params), np.zeros(4))

    def test_identity_head_passthrough(self):
        cfg = NetworkConfig(max_order=2, channels=3, head_widths=(3,))
        params = init_params(cfg)
        params["head0.w"] = np.eye(3)
        pooled = np.array([0.5, -1.0, 2.0])
        assert_allclose(invariant_head(pooled, cfg, params), pooled)

    def test_hidden_relu_head(self):
        cfg = NetworkConfig(max_order=2, channels=1, head_widths=(2, 1))
        params = init_params(cfg)
        params["head0.w"] = np.array([[1.0, -1.0]])
        params["head0.b"] = np.zeros(2)
        params["head1.w"] = np.array([[1.0], [1.0]])
        params["head1.b"] = np.array([0.25])
        out = invariant_head(np.array([3.0]), cfg, params)
        assert_allclose(out, [3.25])  # relu kills the negative unit


class TestParamBookkeeping:
    @pytest.mark.parametrize(
        "cfg",
        [
            NetworkConfig(max_order=1, channels=1),
            NetworkConfig(max_order=2, channels=3, head_widths=(8, 4)),
            NetworkConfig(max_order=3, channels=2, k_nn=2, use_relu=True),
            NetworkConfig(max_order=4, channels=2, k_nn=1, use_relu=True, use_t2mix=True),
            NetworkConfig(max_order=6, channels=4, use_t2mix=True, head_widths=(5,)),
        ],
    )
    def test_count_formula_matches_vector(self, cfg):
        params = init_params(cfg)
        assert params.to_vector().size == expected_param_count(cfg)

    def test_vector_round_trip(self):
        cfg = NetworkConfig(max_order=3, channels=2, k_nn=1, use_relu=True, seed=9)
        params = init_params(cfg)
        vec = params.to_vector()
        rebuilt = params.from_vector(vec)
        for name, value in params.items():
            assert np.array_equal(rebuilt[name], value)
        with pytest.raises(ValueError):
            params.from_vector(vec[:-1])

    def test_init_deterministic(self):
        cfg = NetworkConfig(max_order=2, channels=2, seed=11)
        assert np.array_equal(init_params(cfg).to_vector(), init_params(cfg).to_vector())

    def test_init_seed_changes_values(self):
        cfg = NetworkConfig(max_order=2, channels=2, seed=11)
        assert not np.array_equal(
            init_params(cfg).to_vector(), init_params(cfg, seed=12).to_vector()
        )


class TestEndToEndEquivariance:
    def test_even_order_invariance(self):
        rng = np.random.default_rng(12)
        for trial in range(10):
            n = int(rng.integers(3, 8))
            cfg = NetworkConfig(
                max_order=2,
                channels=3,
                k_nn=min(2, n - 1),
                use_relu=True,
                use_t2mix=True,
                seed=trial,
            )
            params = init_params(cfg)
            x = centered_cloud(rng, n)
            g = GroupElement(random_orthogonal(rng), random_permutation(rng, n))
            out = forward(x, cfg, params)
            out_t = forward(act_on_points(x, g), cfg, params)
            # invariant features: rows permute, values match
            assert rel_err(out_t, group_act(out, GroupElement(np.eye(3), g.permutation))) < 1e-7

    def test_odd_order_equivariance(self):
        rng = np.random.default_rng(13)
        for trial in range(10):
            n = int(rng.integers(3, 8))
            cfg = NetworkConfig(
                max_order=3, channels=2, k_nn=min(2, n - 1), use_relu=True, seed=100 + trial
            )
            params = init_params(cfg)
            x = centered_cloud(rng, n)
            g = GroupElement(random_orthogonal(rng), random_permutation(rng, n))
            lhs = forward(act_on_points(x, g), cfg, params)
            rhs = group_act(forward(x, cfg, params), g)
            assert rel_err(lhs, rhs) < 1e-7

    def test_pooled_output_fully_invariant(self):
        rng = np.random.default_rng(14)
        cfg = NetworkConfig(max_order=4, channels=2, use_relu=True, use_t2mix=True, seed=15)
        params = init_params(cfg)
        x_raw = rng.uniform(-1.0, 1.0, size=(3, 6))
        g = GroupElement(random_orthogonal(rng), random_permutation(rng, 6))
        t = rng.standard_normal((3, 1))
        pooled = sum_pool(forward(centralize(x_raw), cfg, params))
        moved = act_on_points(x_raw, g) + t
        pooled_t = sum_pool(forward(centralize(moved), cfg, params))
        assert rel_err(pooled_t, pooled) < 1e-7
