"""Ground-truth invariant descriptors of a point cloud.

The covariance spectrum is recovered two independent ways: directly from
the covariance matrix, and through the degree-2/4/6 power sums followed by
the continuous inverse map (Newton's identities down to a cubic solved in
closed trigonometric form).  Round-tripping the two is the oracle for the
expressibility experiments.  A constructive parameter set realizing the
degree-2 invariant exactly in a (K=2, C) network is provided as well.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .network import NetworkConfig, ParamSet, centralize, init_params

__all__ = [
    "PowerSums",
    "EigenTriple",
    "InvalidPowerSumsError",
    "covariance",
    "power_sums",
    "q_from_power_sums",
    "lambda_cov",
    "construct_p2_params",
]


class PowerSums(NamedTuple):
    """Traces of the first three powers of the covariance matrix."""

    s1: float
    s2: float
    s3: float


class EigenTriple(NamedTuple):
    """Covariance eigenvalues sorted descending, clamped at zero."""

    lam1: float
    lam2: float
    lam3: float


class InvalidPowerSumsError(ValueError):
    """The power sums are not consistent with three real nonnegative roots."""


def covariance(x: np.ndarray) -> np.ndarray:
    """Unnormalized covariance of a (3, n) cloud, symmetrized against roundoff."""
    xc = centralize(x)
    a = xc @ xc.T
    return (a + a.T) / 2.0


def _rational_matrix(a: np.ndarray) -> list[list[Fraction]]:
    return [[Fraction(float(a[i, j])) for j in range(3)] for i in range(3)]


def power_sums(x: np.ndarray) -> PowerSums:
    """Traces of the covariance matrix and of its square and cube.

    The traces are accumulated in exact rational arithmetic from the
    matrix entries and rounded once: the spectrum inversion divides by
    eigenvalue gaps, so every spare ulp here matters near-degeneracy.
    """
    f = _rational_matrix(covariance(x))
    s1 = sum(f[i][i] for i in range(3))
    s2 = sum(f[i][j] * f[j][i] for i in range(3) for j in range(3))
    s3 = sum(f[i][j] * f[j][k] * f[k][i] for i in range(3) for j in range(3) for k in range(3))
    return PowerSums(float(s1), float(s2), float(s3))


def _cubic_roots_descending(e1: float, e2: float, e3: float) -> np.ndarray:
    """Real roots of t^3 - e1 t^2 + e2 t - e3, descending.

    The depressed-cubic coefficients are combined in exact rational
    arithmetic (the inputs are exact doubles) and rounded once: the naive
    float evaluation loses tens of ulps to cancellation, which a
    near-double root amplifies by 1/gap.  Assumes the discriminant is
    nonnegative up to roundoff; the acos argument is clamped to [-1, 1] so
    root collisions stay finite.
    """
    f1, f2, f3 = Fraction(e1), Fraction(e2), Fraction(e3)
    p = float(f2 - f1 * f1 / 3)
    q = float(Fraction(-2, 27) * f1**3 + f1 * f2 / 3 - f3)
    s = math.sqrt(max(-p, 0.0) / 3.0)
    if s == 0.0:
        return np.full(3, e1 / 3.0)
    arg = min(1.0, max(-1.0, -q / (2.0 * s**3)))
    phi = math.acos(arg) / 3.0
    roots = [2.0 * s * math.cos(phi - 2.0 * math.pi * k / 3.0) + e1 / 3.0 for k in range(3)]
    return np.sort(np.asarray(roots))[::-1]


def q_from_power_sums(s: PowerSums) -> EigenTriple:
    """Invert the power sums to the sorted nonnegative eigenvalue triple.

    Newton's identities give the elementary symmetric polynomials, whose
    cubic is solved trigonometrically.  Raises
    :class:`InvalidPowerSumsError` when no real nonnegative triple exists
    within a 1e-8 relative slack.
    """
    s1, s2, s3 = float(s[0]), float(s[1]), float(s[2])
    f1, f2, f3 = Fraction(s1), Fraction(s2), Fraction(s3)
    e1 = s1
    e2 = float((f1 * f1 - f2) / 2)  # Newton's identities, combined exactly
    e3 = float((f1**3 - 3 * f1 * f2 + 2 * f3) / 6)
    scale = max(1.0, abs(s1), math.sqrt(abs(s2)))
    p = e2 - e1 * e1 / 3.0
    if p > 1e-8 * scale * scale:
        raise InvalidPowerSumsError(f"power sums {s} imply complex roots (p={p:.3e})")
    roots = _cubic_roots_descending(e1, e2, e3)
    if roots[2] < -1e-8 * scale:
        raise InvalidPowerSumsError(f"power sums {s} imply a negative root ({roots[2]:.3e})")
    return EigenTriple(*np.maximum(roots, 0.0))


def lambda_cov(x: np.ndarray) -> EigenTriple:
    """Eigenvalues of the covariance matrix, descending, clamped at zero.

    Uses the closed-form characteristic polynomial of the symmetric 3x3,
    solved by the same trigonometric cubic as the power-sum inverse.
    """
    f = _rational_matrix(covariance(x))
    t1 = sum(f[i][i] for i in range(3))
    t2 = sum(f[i][j] * f[j][i] for i in range(3) for j in range(3))
    det = (
        f[0][0] * (f[1][1] * f[2][2] - f[1][2] * f[2][1])
        - f[0][1] * (f[1][0] * f[2][2] - f[1][2] * f[2][0])
        + f[0][2] * (f[1][0] * f[2][1] - f[1][1] * f[2][0])
    )
    roots = _cubic_roots_descending(float(t1), float((t1 * t1 - t2) / 2), float(det))
    return EigenTriple(*np.maximum(roots, 0.0))


def construct_p2_params(cfg: NetworkConfig) -> ParamSet:
    """Parameters making every channel of the K=2 network output the squared
    point norm, so the pooled first channel is the total squared spread.

    Ascents copy the coordinates (alpha1=1, alpha2=0, gamma=I), the single
    descent pair takes the per-point trace, and the final mix keeps only
    the descended block of the concatenation.
    """
    if cfg.max_order != 2:
        raise ValueError("the constructive parameter set needs max_order == 2")
    if cfg.k_nn > 0 or cfg.use_relu or cfg.use_t2mix:
        raise ValueError("the constructive parameter set needs all extras disabled")
    if cfg.head_widths:
        raise ValueError("the constructive parameter set drives the bare network (no head)")
    c = cfg.channels
    params = init_params(cfg)
    eye = np.eye(c)
    for k in (1, 2):
        params[f"asc{k}.alpha1"] = np.ones(c)
        params[f"asc{k}.alpha2"] = np.zeros(c)
        params[f"asc{k}.gamma"] = eye
    params["desc2.beta"] = np.ones((c, 1))  # the lone pair (1,2): per-entry trace
    gamma_bar = np.zeros((2 * c, c))
    gamma_bar[:c, :] = eye  # keep the descended block, drop the order-0 skip
    params["desc2.gamma"] = gamma_bar
    return params
