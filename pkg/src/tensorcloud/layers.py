"""Jointly equivariant layers on tensor fields.

A tensor field is an array of shape ``(n, C, 3, ..., 3)`` with k trailing
length-3 axes: n points, C channels, one order-k tensor per point and
channel.  A point cloud is a ``(3, n)`` array.  The joint group action
rotates every entry along all tensor axes and permutes the point axis.

Layer functions accept plain ndarrays or autodiff :class:`~tensorcloud.autodiff.Var`
nodes interchangeably; with plain inputs they evaluate to plain outputs.
Each layer is equivariant for every parameter setting.  The i != j sum in
the ascending layer is computed as (global sum) - (own term).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from . import autodiff as ad
from .tensor_algebra import inverse_permutation

__all__ = [
    "GroupElement",
    "AscendParams",
    "DescendParams",
    "LinearParams",
    "T2MixParams",
    "VNReLUParams",
    "field_order",
    "ones_field",
    "random_field",
    "pair_indices",
    "rotate_field",
    "group_act",
    "act_on_points",
    "ascend",
    "descend",
    "channel_linear",
    "t2_mix",
    "vn_relu",
    "knn_graph",
]

_I3 = np.eye(3)


@dataclass
class GroupElement:
    """A joint transformation: 3x3 orthogonal matrix + permutation of [0, n)."""

    rotation: np.ndarray
    permutation: np.ndarray


@dataclass
class AscendParams:
    """Per-channel weights of the ascending layer; alpha3 only with a KNN graph."""

    alpha1: Any
    alpha2: Any
    alpha3: Any = None


@dataclass
class DescendParams:
    """beta[c, p]: weight of contraction pair p (lexicographic) for channel c."""

    beta: Any


@dataclass
class LinearParams:
    """gamma[c, c']: channel-mixing matrix, C in-channels by C' out-channels."""

    gamma: Any


@dataclass
class T2MixParams:
    """Per-channel weights of the three equivariant self-maps on order-2 fields."""

    identity_w: Any
    transpose_w: Any
    trace_w: Any


@dataclass
class VNReLUParams:
    """w[c, c']: channel mix producing the per-point gating direction."""

    w: Any


def field_order(v) -> int:
    return ad.value_of(v).ndim - 2


def ones_field(n: int, channels: int) -> np.ndarray:
    return np.ones((n, channels))


def random_field(rng: np.random.Generator, n: int, channels: int, order: int) -> np.ndarray:
    return rng.standard_normal((n, channels) + (3,) * order)


def pair_indices(k: int) -> list[tuple[int, int]]:
    """All 1-based pairs (a, b) with a < b <= k, lexicographic."""
    return [(a, b) for a in range(1, k + 1) for b in range(a + 1, k + 1)]


def rotate_field(v: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Apply the Kronecker-power action of r along every tensor axis."""
    v = np.asarray(v, dtype=float)
    for axis in range(2, v.ndim):
        v = np.moveaxis(np.tensordot(v, r, axes=([axis], [1])), -1, axis)
    return v


def group_act(v: np.ndarray, g: GroupElement) -> np.ndarray:
    """Joint action on a field: output entry (j, c) is the rotated entry
    (sigma^{-1}(j), c) of the input."""
    v = np.asarray(v, dtype=float)
    sigma = np.asarray(g.permutation)
    if len(sigma) != v.shape[0]:
        raise ValueError(f"permutation length {len(sigma)} != point count {v.shape[0]}")
    return rotate_field(v, g.rotation)[inverse_permutation(sigma)]


def act_on_points(x: np.ndarray, g: GroupElement) -> np.ndarray:
    """Joint action on a (3, n) point cloud: column j becomes R x_{sigma^{-1}(j)}."""
    x = np.asarray(x, dtype=float)
    return (np.asarray(g.rotation, dtype=float) @ x)[:, inverse_permutation(np.asarray(g.permutation))]


def _adjacency(neighbors: np.ndarray, n: int) -> np.ndarray:
    neighbors = np.asarray(neighbors)
    if neighbors.ndim != 2 or neighbors.shape[0] != n:
        raise ValueError(f"neighbor table must be (n, k_nn), got {neighbors.shape}")
    if neighbors.size and (neighbors.min() < 0 or neighbors.max() >= n):
        raise ValueError("neighbor index out of range")
    adj = np.zeros((n, n))
    rows = np.repeat(np.arange(n), neighbors.shape[1])
    adj[rows, neighbors.reshape(-1)] = 1.0
    return adj


def ascend(v, x, params: AscendParams, neighbors: Optional[np.ndarray] = None):
    """Order k -> k+1: prepend a point-coordinate factor by tensor product.

    out_{jc} = alpha1_c (x_j (x) v_{jc}) + alpha2_c sum_{i != j} x_i (x) v_{ic}
    [+ alpha3_c sum_{i ~ j} x_i (x) v_{ic}], the new index first.
    """
    n = ad.value_of(v).shape[0]
    if ad.value_of(x).shape != (3, n):
        raise ValueError(f"point cloud shape {ad.value_of(x).shape} does not match n={n}")
    if (params.alpha3 is None) != (neighbors is None):
        raise ValueError("alpha3 and the neighbor table must be supplied together")
    own = ad.point_outer(x, v)
    excl = ad.sub(ad.broadcast_points(ad.sum_points(own), n), own)
    out = ad.add(
        ad.channel_scale(params.alpha1, own),
        ad.channel_scale(params.alpha2, excl),
    )
    if params.alpha3 is not None:
        nb = ad.point_mix(_adjacency(neighbors, n), own)
        out = ad.add(out, ad.channel_scale(params.alpha3, nb))
    return out


def descend(v, params: DescendParams):
    """Order k -> k-2: per-channel weighted sum of all pairwise contractions."""
    k = field_order(v)
    if k < 2:
        raise ValueError(f"descending layer needs order >= 2, got {k}")
    pairs = pair_indices(k)
    n_pairs = len(pairs)
    if ad.value_of(params.beta).shape[1] != n_pairs:
        raise ValueError(
            f"beta has {ad.value_of(params.beta).shape[1]} pair weights, order {k} needs {n_pairs}"
        )
    out = None
    for p, (a, b) in enumerate(pairs):
        term = ad.channel_scale(ad.column(params.beta, p), ad.trace_pair(v, a, b))
        out = term if out is None else ad.add(out, term)
    return out


def channel_linear(v, params: LinearParams):
    """Mix channels: out_{jc'} = sum_c gamma_{cc'} v_{jc}."""
    gamma = params.gamma
    if ad.value_of(gamma).shape[0] != ad.value_of(v).shape[1]:
        raise ValueError(
            f"gamma expects {ad.value_of(gamma).shape[0]} channels, field has {ad.value_of(v).shape[1]}"
        )
    return ad.channel_mix(gamma, v)


def t2_mix(v, params: T2MixParams):
    """Per-channel combination of the order-2 equivariant self-maps
    V, V^T and trace(V) I."""
    if field_order(v) != 2:
        raise ValueError(f"t2_mix needs an order-2 field, got order {field_order(v)}")
    kept = ad.channel_scale(params.identity_w, v)
    swapped = ad.channel_scale(params.transpose_w, ad.swap_last2(v))
    tr = ad.trace_pair(v, 1, 2)
    traced = ad.einsum("c,jc,ab->jcab", params.trace_w, tr, _I3)
    return ad.add(ad.add(kept, swapped), traced)


def vn_relu(v, params: VNReLUParams):
    """Half-space gated activation with a channel-mixed learned direction.

    Per point and channel: with direction d = sum_{c'} w_{cc'} v_{jc'},
    keep v if <v, d>_F >= 0, else remove the component of v along d.
    Entries whose direction has Frobenius norm below 1e-12 pass through.
    Reduces to the usual vector-neuron ReLU on order-1 fields.
    """
    d = ad.channel_mix(ad.transpose2(params.w), v)
    dot = ad.frob_channels(v, d)
    nsq = ad.frob_channels(d, d)
    ad.record_gate_margin(np.abs(ad.value_of(dot)))
    project = ((ad.value_of(dot) < 0.0) & (ad.value_of(nsq) >= 1e-24)).astype(float)
    # guarded denominator keeps the pass-through entries off the division path
    denom = ad.add(ad.mul(nsq, project), ad.constant(1.0 - project))
    coef = ad.mul(ad.mul(dot, project), ad.reciprocal(denom))
    return ad.sub(v, ad.point_scale(coef, d))


def knn_graph(v, k_nn: int) -> np.ndarray:
    """Indices of the k_nn nearest points in feature space, per point.

    The distance is the Frobenius distance over all channels; self is
    excluded; ties break toward the smaller point index.  Returns an
    (n, k_nn) int array.  Not differentiated: the graph is a constant of
    the forward pass.
    """
    flat = ad.value_of(v).reshape(ad.value_of(v).shape[0], -1)
    n = flat.shape[0]
    if not 1 <= k_nn <= n - 1:
        raise ValueError(f"k_nn={k_nn} out of range for n={n}")
    out = np.empty((n, k_nn), dtype=int)
    idx = np.arange(n)
    for j in range(n):
        diff = flat - flat[j]
        d2 = np.sum(diff * diff, axis=1)
        d2[j] = np.inf
        ranked = np.lexsort((idx, d2))
        out[j] = ranked[:k_nn]
        if k_nn < n - 1:  # gap to the first excluded neighbor gates the graph
            ad.record_gate_margin(np.array([d2[ranked[k_nn]] - d2[ranked[k_nn - 1]]]))
    return out
