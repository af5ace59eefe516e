"""Dense order-k tensors over R^3 and the primitive equivariant operations.

An order-k tensor is stored as a float64 numpy array of shape ``(3,)*k``
(order 0 is a 0-d array).  The flat layout is base-3 big-endian: multi-index
``(i1, ..., ik)`` maps to flat position ``sum_j ij * 3**(k-1-j)``, i.e. the
leftmost index is most significant.  This is exactly numpy's C-order ravel,
and every brute-force oracle in the test suite uses the same convention.

Index arguments to :func:`contract` and the pairings consumed by
:func:`lambda_sigma` are 1-based, matching the usual mathematical notation
for the contraction ``C_{a,b}``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "tensor_order",
    "from_flat",
    "to_flat",
    "tensor_product",
    "contract",
    "rotate",
    "frobenius_inner",
    "lambda_sigma",
    "all_pairings",
    "check_rotation",
    "random_orthogonal",
    "random_rotation",
    "random_permutation",
    "inverse_permutation",
    "compose_permutations",
]


def tensor_order(t: np.ndarray) -> int:
    """Order k of a dense tensor, i.e. its number of length-3 axes."""
    t = np.asarray(t)
    if any(d != 3 for d in t.shape):
        raise ValueError(f"not an order-k tensor over R^3: shape {t.shape}")
    return t.ndim


def from_flat(values, order: int) -> np.ndarray:
    """Reshape a flat base-3 big-endian vector of length 3**order."""
    values = np.asarray(values, dtype=float)
    if values.size != 3**order:
        raise ValueError(f"expected {3**order} values for order {order}, got {values.size}")
    return values.reshape((3,) * order)


def to_flat(t: np.ndarray) -> np.ndarray:
    """Flatten to the base-3 big-endian layout (C-order ravel)."""
    return np.asarray(t, dtype=float).reshape(-1)


def tensor_product(t: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Tensor product of an order-k and an order-l tensor (order k+l).

    ``out[i1..ik, j1..jl] = t[i1..ik] * s[j1..jl]``.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    tensor_order(t), tensor_order(s)
    return np.multiply.outer(t, s)


def contract(t: np.ndarray, a: int, b: int) -> np.ndarray:
    """Contraction C_{a,b}: sum over tied 1-based index positions a < b.

    Maps order k to order k-2; the remaining indices keep their original
    relative order.  For k=2 this is the trace.
    """
    t = np.asarray(t, dtype=float)
    k = tensor_order(t)
    if k < 2:
        raise ValueError(f"contraction needs order >= 2, got {k}")
    if not (1 <= a < b <= k):
        raise ValueError(f"invalid contraction pair ({a},{b}) for order {k}")
    return np.trace(t, axis1=a - 1, axis2=b - 1)


def rotate(t: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Apply the Kronecker-power action of a 3x3 matrix along every mode.

    Implemented as k successive mode products; the 3**k x 3**k Kronecker
    matrix is never materialized.  Orthogonality of ``r`` is not checked
    here: the product action is defined for any square matrix (contraction
    equivariance, however, holds only for orthogonal ones).
    """
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    k = tensor_order(t)
    for axis in range(k):
        t = np.moveaxis(np.tensordot(t, r, axes=([axis], [1])), -1, axis)
    return t


def frobenius_inner(t: np.ndarray, s: np.ndarray) -> float:
    """Sum of elementwise products of two tensors of equal order."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if t.shape != s.shape:
        raise ValueError(f"order mismatch: {t.shape} vs {s.shape}")
    return float(np.sum(t * s))


def lambda_sigma(t: np.ndarray, pairs) -> float:
    """Invariant linear functional given by a full pairing of indices.

    ``pairs`` is a list of k/2 disjoint 1-based pairs covering {1,...,k};
    the contractions are applied in sequence, renumbering the surviving
    indices after each step.  On a rank-one tensor x1 (x) ... (x) xk the
    result is the product of <xa, xb> over the pairs.
    """
    t = np.asarray(t, dtype=float)
    k = tensor_order(t)
    if k % 2 != 0:
        raise ValueError(f"pairing functional needs even order, got {k}")
    seen = sorted(i for pair in pairs for i in pair)
    if seen != list(range(1, k + 1)):
        raise ValueError(f"pairs {pairs} do not partition 1..{k}")
    labels = list(range(1, k + 1))  # surviving original index labels
    for a, b in pairs:
        t = contract(t, labels.index(a) + 1, labels.index(b) + 1)
        labels.remove(a)
        labels.remove(b)
    return float(t)


def all_pairings(k: int) -> list[list[tuple[int, int]]]:
    """All perfect pairings of {1,...,k} (k even), each pair sorted a < b."""
    if k % 2 != 0:
        raise ValueError(f"pairings need even k, got {k}")

    def rec(remaining: tuple[int, ...]):
        if not remaining:
            yield []
            return
        a = remaining[0]
        for i in range(1, len(remaining)):
            b = remaining[i]
            rest = remaining[1:i] + remaining[i + 1 :]
            for tail in rec(rest):
                yield [(a, b)] + tail

    return list(rec(tuple(range(1, k + 1))))


def check_rotation(r: np.ndarray, tol: float = 1e-12) -> None:
    """Raise unless r is orthogonal with det +-1 within tol."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {r.shape}")
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol:
        raise ValueError("matrix is not orthogonal")
    if min(abs(np.linalg.det(r) - 1.0), abs(np.linalg.det(r) + 1.0)) > tol:
        raise ValueError("determinant is not +-1")


def random_orthogonal(rng: np.random.Generator) -> np.ndarray:
    """Haar sample from O(3).

    QR-decomposes a standard Gaussian 3x3 matrix, de-biases Q by the signs
    of the R-factor diagonal, then flips the sign of one column with
    probability 1/2 so both determinant components are covered.
    """
    while True:
        g = rng.standard_normal((3, 3))
        q, r = np.linalg.qr(g)
        d = np.diagonal(r)
        if np.any(d == 0.0):  # measure-zero singular draw
            continue
        q = q * np.sign(d)
        if rng.random() < 0.5:
            q[:, int(rng.integers(3))] *= -1.0
        return q


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar sample from SO(3) (determinant +1)."""
    q = random_orthogonal(rng)
    if np.linalg.det(q) < 0.0:
        q[:, 0] *= -1.0
    return q


def random_permutation(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform permutation of {0,...,n-1} as an int array, i -> sigma[i]."""
    return rng.permutation(n)


def inverse_permutation(sigma: np.ndarray) -> np.ndarray:
    inv = np.empty_like(sigma)
    inv[sigma] = np.arange(len(sigma))
    return inv


def compose_permutations(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """(outer o inner)(i) = outer[inner[i]]: apply inner first."""
    return outer[inner]
