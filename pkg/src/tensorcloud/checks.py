"""Randomized verification suites behind the CLI check subcommands.

Each suite runs a batch of seeded trials of one identity family, returns a
small report dict, and raises :class:`VerificationError` naming the
offending seed and the error magnitude on the first failure.  The
acceptance tests run these same suites at the full budgets.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .layers import (
    AscendParams,
    DescendParams,
    GroupElement,
    LinearParams,
    T2MixParams,
    VNReLUParams,
    act_on_points,
    ascend,
    channel_linear,
    descend,
    group_act,
    knn_graph,
    pair_indices,
    random_field,
    t2_mix,
    vn_relu,
)
from .network import NetworkConfig, centralize, forward, init_params, sum_pool
from .oracles import construct_p2_params, lambda_cov, power_sums, q_from_power_sums
from .tensor_algebra import (
    contract,
    random_orthogonal,
    random_permutation,
    rotate,
    tensor_product,
)

__all__ = [
    "VerificationError",
    "check_primitives",
    "check_layers",
    "check_network",
    "check_gradients",
    "verify_q",
    "check_constructive_p2",
]


class VerificationError(RuntimeError):
    """A randomized identity check failed; the message carries seed and size."""


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b))))


def _fail(name: str, seed: int, err: float, tol: float):
    raise VerificationError(f"{name}: seed {seed}: relative error {err:.3e} exceeds {tol:.1e}")


def check_primitives(trials: int = 1000, seed: int = 0, tol: float = 1e-10, max_order: int = 4):
    """Tensor-product and contraction equivariance on random inputs."""
    worst = 0.0
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        r = random_orthogonal(rng)
        k = int(rng.integers(0, max_order + 1))
        l = int(rng.integers(0, max_order + 1))
        a = rng.standard_normal((3,) * k)
        b = rng.standard_normal((3,) * l)
        err = _rel(rotate(tensor_product(a, b), r), tensor_product(rotate(a, r), rotate(b, r)))
        worst = max(worst, err)
        if err > tol:
            _fail("tensor-product equivariance", seed + t, err, tol)
        kc = int(rng.integers(2, max_order + 1))
        c = rng.standard_normal((3,) * kc)
        ia = int(rng.integers(1, kc))
        ib = int(rng.integers(ia + 1, kc + 1))
        err = _rel(contract(rotate(c, r), ia, ib), rotate(contract(c, ia, ib), r))
        worst = max(worst, err)
        if err > tol:
            _fail("contraction equivariance", seed + t, err, tol)
    return {"trials": trials, "max_rel_err": worst, "tol": tol}


def _random_group(rng, n):
    return GroupElement(random_orthogonal(rng), random_permutation(rng, n))


def check_layers(trials: int = 100, seed: int = 0, tol: float = 1e-8):
    """Joint equivariance of every layer with random parameters."""
    worst = 0.0
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        n = int(rng.integers(2, 8))
        c = int(rng.integers(1, 4))
        k = int(rng.integers(0, 3))
        g = _random_group(rng, n)
        x = rng.standard_normal((3, n))
        v = random_field(rng, n, c, k)
        vg = group_act(v, g)
        xg = act_on_points(x, g)

        p_asc = AscendParams(rng.standard_normal(c), rng.standard_normal(c), rng.standard_normal(c))
        k_nn = int(rng.integers(1, n))
        p_lin = LinearParams(rng.standard_normal((c, 2)))
        p_relu = VNReLUParams(rng.standard_normal((c, c)))
        checks = [
            ("ascend", ascend(vg, xg, p_asc, knn_graph(vg, k_nn)),
             group_act(ascend(v, x, p_asc, knn_graph(v, k_nn)), g)),
            ("channel_linear", channel_linear(vg, p_lin), group_act(channel_linear(v, p_lin), g)),
            ("vn_relu", vn_relu(vg, p_relu), group_act(vn_relu(v, p_relu), g)),
        ]
        kd = int(rng.integers(2, 5))
        vd = random_field(rng, n, c, kd)
        p_desc = DescendParams(rng.standard_normal((c, len(pair_indices(kd)))))
        checks.append(("descend", descend(group_act(vd, g), p_desc), group_act(descend(vd, p_desc), g)))
        v2 = random_field(rng, n, c, 2)
        p_t2 = T2MixParams(rng.standard_normal(c), rng.standard_normal(c), rng.standard_normal(c))
        checks.append(("t2_mix", t2_mix(group_act(v2, g), p_t2), group_act(t2_mix(v2, p_t2), g)))
        for name, lhs, rhs in checks:
            err = _rel(lhs, rhs)
            worst = max(worst, err)
            if err > tol:
                _fail(f"{name} equivariance", seed + t, err, tol)
    return {"trials": trials, "max_rel_err": worst, "tol": tol}


def check_network(
    trials: int = 100,
    seed: int = 0,
    tol: float = 1e-7,
    max_order_cap: int = 4,
    channels_cap: int = 4,
    n_cap: int = 8,
):
    """End-to-end invariance (even K) and equivariance (odd K) with all
    extras enabled."""
    worst = 0.0
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        k = int(rng.integers(1, max_order_cap + 1))
        c = int(rng.integers(1, channels_cap + 1))
        n = int(rng.integers(3, n_cap + 1))
        cfg = NetworkConfig(
            max_order=k,
            channels=c,
            k_nn=int(rng.integers(1, min(3, n - 1) + 1)),
            use_relu=True,
            use_t2mix=True,
            seed=seed + t,
        )
        params = init_params(cfg)
        x = centralize(rng.uniform(-1.0, 1.0, size=(3, n)))
        g = _random_group(rng, n)
        out = forward(x, cfg, params)
        out_g = forward(act_on_points(x, g), cfg, params)
        expected = group_act(out, g)  # order 0: rotation part is trivial
        err = _rel(out_g, expected)
        worst = max(worst, err)
        if err > tol:
            kind = "invariance" if cfg.output_order == 0 else "equivariance"
            _fail(f"network {kind} (K={k}, C={c}, n={n})", seed + t, err, tol)
    return {"trials": trials, "max_rel_err": worst, "tol": tol}


# readout weights are scaled down so the objective is ~1e-3: central
# differences then keep the last-ulp cancellation noise of zero-gradient
# coordinates well under the 1e-8 relative-error floor
_READOUT_SCALE = 1e-3


def _layer_cases(rng, n, c):
    """(name, flat theta, f(theta) -> scalar, tape builder) per layer."""
    x = rng.standard_normal((3, n))
    v0 = random_field(rng, n, c, 1)
    v2 = random_field(rng, n, c, 2)
    v3 = random_field(rng, n, c, 3)
    w_out1 = _READOUT_SCALE * rng.standard_normal(v0.shape[:2] + (3, 3))
    w_out0 = _READOUT_SCALE * rng.standard_normal(v3.shape[:2] + (3,))
    w_same2 = _READOUT_SCALE * rng.standard_normal(v2.shape)
    w_mix = _READOUT_SCALE * rng.standard_normal((n, 2, 3, 3))
    neighbors = knn_graph(v0, min(2, n - 1))

    def asc_f(theta):
        p = AscendParams(theta[:c], theta[c : 2 * c], theta[2 * c :])
        return float(np.sum(ascend(v0, x, p, neighbors) * w_out1))

    def asc_tape(theta):
        leaves = [ad.leaf(theta[:c]), ad.leaf(theta[c : 2 * c]), ad.leaf(theta[2 * c :])]
        out = ascend(v0, x, AscendParams(*leaves), neighbors)
        ad.backward(ad.dot_all(out, w_out1))
        return np.concatenate([leaf.grad for leaf in leaves])

    n_pairs = len(pair_indices(3))

    def desc_f(theta):
        return float(np.sum(descend(v3, DescendParams(theta.reshape(c, n_pairs))) * w_out0))

    def desc_tape(theta):
        leaf = ad.leaf(theta.reshape(c, n_pairs))
        ad.backward(ad.dot_all(descend(v3, DescendParams(leaf)), w_out0))
        return leaf.grad.reshape(-1)

    def lin_f(theta):
        return float(np.sum(channel_linear(v2, LinearParams(theta.reshape(c, 2))) * w_mix))

    def lin_tape(theta):
        leaf = ad.leaf(theta.reshape(c, 2))
        ad.backward(ad.dot_all(channel_linear(v2, LinearParams(leaf)), w_mix))
        return leaf.grad.reshape(-1)

    def t2_f(theta):
        p = T2MixParams(theta[:c], theta[c : 2 * c], theta[2 * c :])
        return float(np.sum(t2_mix(v2, p) * w_same2))

    def t2_tape(theta):
        leaves = [ad.leaf(theta[:c]), ad.leaf(theta[c : 2 * c]), ad.leaf(theta[2 * c :])]
        ad.backward(ad.dot_all(t2_mix(v2, T2MixParams(*leaves)), w_same2))
        return np.concatenate([leaf.grad for leaf in leaves])

    # a single channel makes the projected branch algebraically zero (the
    # direction is always parallel to the value), where central differences
    # measure only roundoff; use >= 2 channels for the gated layer
    cr = max(c, 2)
    v2r = random_field(rng, n, cr, 2)
    w_same2r = _READOUT_SCALE * rng.standard_normal(v2r.shape)

    def relu_f(theta):
        return float(np.sum(vn_relu(v2r, VNReLUParams(theta.reshape(cr, cr))) * w_same2r))

    def relu_tape(theta):
        leaf = ad.leaf(theta.reshape(cr, cr))
        ad.backward(ad.dot_all(vn_relu(v2r, VNReLUParams(leaf)), w_same2r))
        return leaf.grad.reshape(-1)

    return [
        ("ascend", rng.standard_normal(3 * c), asc_f, asc_tape),
        ("descend", rng.standard_normal(c * n_pairs), desc_f, desc_tape),
        ("channel_linear", rng.standard_normal(c * 2), lin_f, lin_tape),
        ("t2_mix", rng.standard_normal(3 * c), t2_f, t2_tape),
        ("vn_relu", rng.standard_normal(cr * cr), relu_f, relu_tape),
    ]


def check_gradients(
    configs: int = 20, seed: int = 0, tol: float = 1e-4, eps: float = 1e-5, min_margin: float = 1e-3
):
    """Per-layer and full-network analytic gradients vs central differences.

    Central differences are only meaningful away from the ReLU-style gating
    boundaries and KNN rank ties, so draws whose smallest gate margin falls
    below ``min_margin`` are resampled (deterministically) before checking.
    """
    worst = 0.0
    for t in range(configs):
        for attempt in range(64):
            rng = np.random.default_rng((seed + t) * 1009 + attempt)
            n = int(rng.integers(2, 6))
            c = int(rng.integers(1, 3))
            cases = _layer_cases(rng, n, c)
            with ad.trace_gate_margins() as margins:
                for _, theta, f, _ in cases:
                    f(theta)
            if min(margins, default=np.inf) >= min_margin:
                break
        else:
            raise VerificationError(f"no margin-safe layer draw for config {t}")
        for name, theta, f, tape in cases:
            err = ad.finite_diff_check(f, theta, tape(theta), eps=eps)
            worst = max(worst, err)
            if err > tol:
                _fail(f"{name} gradient", seed + t, err, tol)

        for attempt in range(64):
            net_rng = np.random.default_rng((seed + t) * 1013 + attempt)
            k_net = int(net_rng.integers(1, 4))
            n_net = int(net_rng.integers(2, 6))
            c_net = int(net_rng.integers(2, 4))  # >= 2: see the gated-layer note above
            cfg = NetworkConfig(
                max_order=k_net,
                channels=c_net,
                k_nn=int(net_rng.integers(0, 2)) if n_net > 2 else 0,
                use_relu=bool(net_rng.integers(0, 2)),
                use_t2mix=bool(net_rng.integers(0, 2)),
                head_widths=(2, 1) if k_net % 2 == 0 else (),
                seed=(seed + t) * 1013 + attempt,
            )
            params = init_params(cfg)
            x = centralize(net_rng.uniform(-1.0, 1.0, size=(3, n_net)))
            out_weight = _READOUT_SCALE * net_rng.standard_normal(
                (n_net, c_net) + (3,) * cfg.output_order
            )

            def net_scalar(theta_vec, as_tape):
                from .training import model_logits

                p = params.from_vector(theta_vec)
                order = None
                if as_tape:
                    p, order = p.as_vars()
                if cfg.output_order == 0:
                    out = model_logits(x, cfg, p)
                    scalar = ad.einsum("m,m->", out, np.full(1, _READOUT_SCALE))
                else:
                    scalar = ad.dot_all(forward(x, cfg, p), out_weight)
                if not as_tape:
                    return float(ad.value_of(scalar))
                ad.backward(scalar)
                return params.grad_vector(order)

            theta0 = params.to_vector()
            with ad.trace_gate_margins() as margins:
                net_scalar(theta0, as_tape=False)
            if min(margins, default=np.inf) >= min_margin:
                break
        else:
            raise VerificationError(f"no margin-safe network draw for config {t}")
        analytic = net_scalar(theta0, as_tape=True)
        err = ad.finite_diff_check(lambda tv: net_scalar(tv, as_tape=False), theta0, analytic, eps=eps)
        worst = max(worst, err)
        if err > tol:
            _fail(f"network gradient (K={cfg.max_order})", seed + t, err, tol)
    return {"configs": configs, "max_rel_err": worst, "tol": tol}


def verify_q(trials: int = 1000, seed: int = 0, tol: float = 1e-8):
    """Round trip: power sums -> continuous inverse vs the direct spectrum.

    One trial in five is built near-degenerate (two eigenvalues within
    1e-6) by blending a cloud with its isotropized spectrum.
    """
    worst = 0.0
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        n = int(rng.integers(2, 24))
        x = rng.uniform(-1.0, 1.0, size=(3, n))
        if t % 5 == 0 and n >= 4:
            # a pair within 1e-6, third eigenvalue well separated: rounding
            # the power sums to doubles already moves the implied roots by
            # ulp / ((l1-l2)(l1-l3)), so the conditioning must stay within
            # what 1e-8 can absorb
            top = rng.uniform(1.2, 2.0)
            lam = np.array(
                [top, top - 1e-6 * rng.uniform(0.5, 1.0), rng.uniform(0.2, top - 0.5)]
            )
            x = _cloud_with_spectrum(rng, lam, n)
        direct = np.asarray(lambda_cov(x))
        via = np.asarray(q_from_power_sums(power_sums(x)))
        err = float(np.max(np.abs(via - direct)) / max(1.0, float(np.max(np.abs(direct)))))
        worst = max(worst, err)
        if err > tol:
            _fail("power-sum inversion", seed + t, err, tol)
    return {"trials": trials, "max_rel_err": worst, "tol": tol}


def _cloud_with_spectrum(rng, lams, n):
    basis = random_orthogonal(rng)
    y = centralize(rng.standard_normal((3, n)))
    c = y @ y.T
    w, v = np.linalg.eigh(c)
    y = v @ np.diag(1.0 / np.sqrt(w)) @ v.T @ y
    return basis @ np.diag(np.sqrt(np.asarray(lams, dtype=float))) @ y


def check_constructive_p2(clouds: int = 100, seed: int = 0, tol: float = 1e-10):
    """The constructive parameter set reproduces the degree-2 invariant
    with no training."""
    cfg = NetworkConfig(max_order=2, channels=2)
    params = construct_p2_params(cfg)
    worst = 0.0
    for t in range(clouds):
        rng = np.random.default_rng(seed + t)
        n = int(rng.integers(2, 17))
        x = centralize(rng.uniform(-1.0, 1.0, size=(3, n)))
        pooled = float(sum_pool(forward(x, cfg, params))[0])
        target = power_sums(x).s1
        err = abs(pooled - target) / max(1.0, abs(target))
        worst = max(worst, err)
        if err > tol:
            _fail("constructive p2", seed + t, err, tol)
    return {"clouds": clouds, "max_rel_err": worst, "tol": tol}
