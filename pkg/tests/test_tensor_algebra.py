"""Tests for the dense tensor primitives.

Every derived expectation is computed by an explicit brute-force oracle
(nested loops over multi-indices, base-3 big-endian flat layout) that never
touches the vectorized implementations.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from tensorcloud.tensor_algebra import (
    all_pairings,
    check_rotation,
    compose_permutations,
    contract,
    frobenius_inner,
    from_flat,
    inverse_permutation,
    lambda_sigma,
    random_orthogonal,
    random_permutation,
    random_rotation,
    rotate,
    tensor_order,
    tensor_product,
    to_flat,
)


def brute_tensor_product(t, s):
    k, l = t.ndim, s.ndim
    out = np.zeros((3,) * (k + l))
    for i in np.ndindex(*t.shape):
        for j in np.ndindex(*s.shape):
            out[i + j] = t[i] * s[j]
    return out


def brute_contract(t, a, b):
    k = t.ndim
    out = np.zeros((3,) * (k - 2))
    for idx in np.ndindex(*out.shape):
        total = 0.0
        for m in range(3):
            full = list(idx)
            full.insert(a - 1, m)
            full.insert(b - 1, m)
            total += t[tuple(full)]
        out[idx] = total
    return out


def brute_rotate(t, r):
    k = t.ndim
    out = np.zeros_like(t)
    for i_idx in np.ndindex(*t.shape):
        total = 0.0
        for j_idx in np.ndindex(*t.shape):
            coeff = 1.0
            for m in range(k):
                coeff *= r[i_idx[m], j_idx[m]]
            total += coeff * t[j_idx]
        out[i_idx] = total
    return out


def flat_index(idx):
    pos = 0
    for i in idx:
        pos = pos * 3 + i
    return pos


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b)))


class TestTensorProduct:
    def test_rank_one_outer(self):
        out = tensor_product(np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
        expected = np.zeros((3, 3))
        expected[0, 1] = 1.0
        assert_allclose(out, expected)

    def test_scalar_scaling(self):
        out = tensor_product(np.array(2.0), np.array([1.0, 2.0, 3.0]))
        assert_allclose(out, [2.0, 4.0, 6.0])

    def test_matches_brute_force_and_flat_layout(self):
        rng = np.random.default_rng(0)
        t = rng.standard_normal((3, 3))
        s = rng.standard_normal(3)
        out = tensor_product(t, s)
        assert_allclose(out, brute_tensor_product(t, s), atol=1e-15)
        flat = to_flat(out)
        for i in np.ndindex(3, 3):
            for j in range(3):
                assert flat[flat_index(i + (j,))] == t[i] * s[j]

    def test_equivariance(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            k, l = int(rng.integers(0, 4)), int(rng.integers(0, 4))
            t = rng.standard_normal((3,) * k)
            s = rng.standard_normal((3,) * l)
            r = random_orthogonal(rng)
            lhs = rotate(tensor_product(t, s), r)
            rhs = tensor_product(rotate(t, r), rotate(s, r))
            assert rel_err(lhs, rhs) < 1e-10


class TestContract:
    def test_trace_of_identity(self):
        assert contract(np.eye(3), 1, 2) == pytest.approx(3.0)

    def test_rank_one_inner_products(self):
        x = np.array([1.0, 0.0, 0.0])
        y = np.array([0.0, 2.0, 0.0])
        t = tensor_product(tensor_product(x, y), tensor_product(x, y))
        first = contract(t, 1, 3)
        assert contract(first, 1, 2) == pytest.approx(4.0)

    @pytest.mark.parametrize("a,b", [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)])
    def test_matches_brute_force_order4(self, a, b):
        rng = np.random.default_rng(a * 10 + b)
        t = rng.standard_normal((3, 3, 3, 3))
        assert_allclose(contract(t, a, b), brute_contract(t, a, b), atol=1e-14)

    def test_all_orders_up_to_four(self):
        rng = np.random.default_rng(7)
        for k in (2, 3, 4):
            t = rng.standard_normal((3,) * k)
            for a in range(1, k + 1):
                for b in range(a + 1, k + 1):
                    assert_allclose(contract(t, a, b), brute_contract(t, a, b), atol=1e-14)

    def test_rejects_bad_pairs(self):
        t = np.zeros((3, 3))
        with pytest.raises(ValueError):
            contract(t, 2, 2)
        with pytest.raises(ValueError):
            contract(t, 1, 3)

    def test_equivariance_orthogonal_only(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            k = int(rng.integers(2, 5))
            t = rng.standard_normal((3,) * k)
            r = random_orthogonal(rng)
            a = int(rng.integers(1, k))
            b = int(rng.integers(a + 1, k + 1))
            lhs = contract(rotate(t, r), a, b)
            rhs = rotate(contract(t, a, b), r)
            assert rel_err(lhs, rhs) < 1e-10

    def test_non_orthogonal_witness(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal((3, 3)) + 2.0 * np.eye(3)  # invertible, not orthogonal
        assert np.max(np.abs(m.T @ m - np.eye(3))) > 1e-3
        t = rng.standard_normal((3, 3))
        lhs = contract(rotate(t, m), 1, 2)
        rhs = rotate(contract(t, 1, 2), m)  # order 0: action is trivial
        assert rel_err(lhs, rhs) > 1e-3


class TestRotate:
    def test_identity(self):
        rng = np.random.default_rng(4)
        for k in range(5):
            t = rng.standard_normal((3,) * k)
            assert_allclose(rotate(t, np.eye(3)), t)

    def test_quarter_turn_projector(self):
        r = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])  # 90 deg about z
        t = np.diag([1.0, 0.0, 0.0])
        assert_allclose(rotate(t, r), np.diag([0.0, 1.0, 0.0]), atol=1e-15)
        assert_allclose(rotate(t, r), r @ t @ r.T, atol=1e-15)

    def test_matches_brute_force_order3(self):
        rng = np.random.default_rng(5)
        t = rng.standard_normal((3, 3, 3))
        r = random_orthogonal(rng)
        assert_allclose(rotate(t, r), brute_rotate(t, r), atol=1e-13)

    def test_is_an_action(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            k = int(rng.integers(0, 5))
            t = rng.standard_normal((3,) * k)
            r1, r2 = random_orthogonal(rng), random_orthogonal(rng)
            assert rel_err(rotate(rotate(t, r1), r2), rotate(t, r2 @ r1)) < 1e-10


class TestFrobeniusInner:
    def test_vector(self):
        v = np.array([1.0, 2.0, 3.0])
        assert frobenius_inner(v, v) == pytest.approx(14.0)

    def test_identity(self):
        assert frobenius_inner(np.eye(3), np.eye(3)) == pytest.approx(3.0)

    def test_rejects_mismatched_orders(self):
        with pytest.raises(ValueError):
            frobenius_inner(np.zeros(3), np.zeros((3, 3)))

    def test_rotation_invariance(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            k = int(rng.integers(0, 4))
            t = rng.standard_normal((3,) * k)
            s = rng.standard_normal((3,) * k)
            r = random_orthogonal(rng)
            assert frobenius_inner(rotate(t, r), rotate(s, r)) == pytest.approx(
                frobenius_inner(t, s), abs=1e-12, rel=1e-12
            )


class TestLambdaSigma:
    def test_single_pair(self):
        v = np.array([1.0, 2.0, 0.0])
        w = np.array([3.0, 0.0, 1.0])
        assert lambda_sigma(tensor_product(v, w), [(1, 2)]) == pytest.approx(3.0)

    def test_orthonormal_pairings(self):
        x = np.array([1.0, 0.0, 0.0])
        y = np.array([0.0, 1.0, 0.0])
        t = tensor_product(tensor_product(x, x), tensor_product(y, y))
        assert lambda_sigma(t, [(1, 2), (3, 4)]) == pytest.approx(1.0)
        assert lambda_sigma(t, [(1, 3), (2, 4)]) == pytest.approx(0.0)

    def test_rank_one_order6_all_pairings(self):
        rng = np.random.default_rng(9)
        vecs = [rng.standard_normal(3) for _ in range(6)]
        t = vecs[0]
        for v in vecs[1:]:
            t = tensor_product(t, v)
        pairings = all_pairings(6)
        assert len(pairings) == 15
        for pairing in pairings:
            expected = 1.0
            for a, b in pairing:
                expected *= float(vecs[a - 1] @ vecs[b - 1])
            assert lambda_sigma(t, pairing) == pytest.approx(expected, abs=1e-12, rel=1e-12)

    def test_rejects_odd_order(self):
        with pytest.raises(ValueError):
            lambda_sigma(np.zeros((3, 3, 3)), [(1, 2)])

    def test_rejects_incomplete_pairing(self):
        with pytest.raises(ValueError):
            lambda_sigma(np.zeros((3, 3, 3, 3)), [(1, 2)])


class TestSampling:
    def test_orthogonal_within_tolerance(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            q = random_orthogonal(rng)
            check_rotation(q)
            assert np.max(np.abs(q.T @ q - np.eye(3))) <= 1e-12

    def test_haar_mean_is_small(self):
        rng = np.random.default_rng(11)
        total = np.zeros((3, 3))
        for _ in range(10_000):
            total += random_orthogonal(rng)
        assert np.max(np.abs(total / 10_000)) <= 0.05

    def test_deterministic_under_seed(self):
        q1 = random_orthogonal(np.random.default_rng(12))
        q2 = random_orthogonal(np.random.default_rng(12))
        assert np.array_equal(q1, q2)

    def test_covers_both_components(self):
        rng = np.random.default_rng(13)
        dets = [np.linalg.det(random_orthogonal(rng)) for _ in range(200)]
        assert any(d < 0 for d in dets) and any(d > 0 for d in dets)

    def test_rotation_has_positive_det(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            assert np.linalg.det(random_rotation(rng)) == pytest.approx(1.0, abs=1e-10)

    def test_permutation_helpers(self):
        rng = np.random.default_rng(15)
        sigma = random_permutation(rng, 7)
        assert sorted(sigma) == list(range(7))
        assert np.array_equal(sigma[inverse_permutation(sigma)], np.arange(7))
        tau = random_permutation(rng, 7)
        composed = compose_permutations(tau, sigma)
        for i in range(7):
            assert composed[i] == tau[sigma[i]]


class TestLayoutRoundTrip:
    @given(st.integers(min_value=0, max_value=4), st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_flat_round_trip(self, order, seed):
        t = np.random.default_rng(seed).standard_normal((3,) * order)
        assert np.array_equal(from_flat(to_flat(t), order), t)

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_rank_one_lambda_matches_product(self, seed):
        rng = np.random.default_rng(seed)
        vecs = [rng.standard_normal(3) for _ in range(4)]
        t = tensor_product(tensor_product(vecs[0], vecs[1]), tensor_product(vecs[2], vecs[3]))
        for pairing in all_pairings(4):
            expected = 1.0
            for a, b in pairing:
                expected *= float(vecs[a - 1] @ vecs[b - 1])
            assert lambda_sigma(t, pairing) == pytest.approx(expected, abs=1e-10, rel=1e-10)

    def test_order_checks(self):
        with pytest.raises(ValueError):
            tensor_order(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            from_flat(np.zeros(5), 1)
