"""The U-shaped tensor-field network and its parameter set.

The forward pass starts from an all-ones order-0 field, ascends through
orders 1..K with channel mixing after each ascent, then descends two
orders at a time, concatenating the stored same-order ascent field onto
the descended one (channel order: [descended block; skip block]) before
the next channel mix.  The output order is K mod 2, so even K yields
rotation-invariant per-point features and odd K rotation-equivariant
ones.  Optional gated activations and order-2 self-map mixes run right
after every channel mix on both paths.

Parameters live in a :class:`ParamSet`, an ordered name -> array mapping
with an exact flat-vector round trip; the ordering is fixed by the
construction sequence so flattening is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from . import autodiff as ad
from .layers import (
    AscendParams,
    DescendParams,
    LinearParams,
    T2MixParams,
    VNReLUParams,
    ascend,
    channel_linear,
    descend,
    field_order,
    knn_graph,
    ones_field,
    pair_indices,
    t2_mix,
    vn_relu,
)

__all__ = [
    "NetworkConfig",
    "ParamSet",
    "param_shapes",
    "expected_param_count",
    "init_params",
    "centralize",
    "forward",
    "sum_pool",
    "invariant_head",
    "short_circuit_mask",
]


@dataclass(frozen=True)
class NetworkConfig:
    """Hyper-parameters defining one network in the (K, C) family."""

    max_order: int
    channels: int
    k_nn: int = 0
    use_relu: bool = False
    use_t2mix: bool = False
    head_widths: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.max_order < 1:
            raise ValueError("max_order must be >= 1")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.k_nn < 0:
            raise ValueError("k_nn must be >= 0")

    @property
    def output_order(self) -> int:
        return self.max_order % 2

    def descent_levels(self) -> list[int]:
        """Input orders of the descending levels: K, K-2, ..., output+2."""
        return list(range(self.max_order, self.output_order, -2))


class ParamSet:
    """Ordered mapping of parameter names to float64 arrays."""

    def __init__(self, entries: dict[str, np.ndarray]):
        self._entries = {k: np.asarray(v, dtype=float) for k, v in entries.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self._entries:
            raise KeyError(f"unknown parameter {name!r}")
        value = np.asarray(value, dtype=float)
        if value.shape != self._entries[name].shape:
            raise ValueError(f"shape mismatch for {name!r}")
        self._entries[name] = value

    def get(self, name: str, default=None):
        return self._entries.get(name, default)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    @property
    def size(self) -> int:
        return sum(v.size for v in self._entries.values())

    def to_vector(self) -> np.ndarray:
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([v.reshape(-1) for v in self._entries.values()])

    def from_vector(self, vec: np.ndarray) -> "ParamSet":
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.size:
            raise ValueError(f"vector has {vec.size} entries, parameter set has {self.size}")
        out, pos = {}, 0
        for name, v in self._entries.items():
            out[name] = vec[pos : pos + v.size].reshape(v.shape).copy()
            pos += v.size
        return ParamSet(out)

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self._entries.items()})

    def as_vars(self) -> tuple[dict[str, ad.Var], list[ad.Var]]:
        """Fresh leaf Vars for one tape, plus the flat-order leaf list."""
        leaves = {name: ad.leaf(v) for name, v in self._entries.items()}
        return leaves, list(leaves.values())

    def grad_vector(self, leaves: list[ad.Var]) -> np.ndarray:
        """Flatten leaf gradients in parameter order; absent adjoints are 0."""
        parts = []
        for v in leaves:
            parts.append((np.zeros_like(v.value) if v.grad is None else v.grad).reshape(-1))
        return np.concatenate(parts) if parts else np.zeros(0)


def param_shapes(cfg: NetworkConfig) -> list[tuple[str, tuple[int, ...], float]]:
    """(name, shape, init scale) triples in flattening order.

    Init scale is 1/sqrt(fan-in) with fan-in the number of summed terms
    feeding one output entry: the channel count for mixing matrices, the
    pair count for contraction weights, the number of enabled coordinate
    terms for ascent weights, and 3 for the order-2 self-map weights.
    """
    c = cfg.channels
    n_alpha = 3 if cfg.k_nn > 0 else 2
    s_alpha = 1.0 / np.sqrt(n_alpha)
    s_mix = 1.0 / np.sqrt(c)
    shapes: list[tuple[str, tuple[int, ...], float]] = []

    def extras(prefix: str, order: int) -> None:
        if cfg.use_relu:
            shapes.append((f"{prefix}.relu_w", (c, c), s_mix))
        if cfg.use_t2mix and order == 2:
            for part in ("t2_identity", "t2_transpose", "t2_trace"):
                shapes.append((f"{prefix}.{part}", (c,), 1.0 / np.sqrt(3.0)))

    for k in range(1, cfg.max_order + 1):
        shapes.append((f"asc{k}.alpha1", (c,), s_alpha))
        shapes.append((f"asc{k}.alpha2", (c,), s_alpha))
        if cfg.k_nn > 0:
            shapes.append((f"asc{k}.alpha3", (c,), s_alpha))
        shapes.append((f"asc{k}.gamma", (c, c), s_mix))
        extras(f"asc{k}", k)
    for k in cfg.descent_levels():
        n_pairs = len(pair_indices(k))
        shapes.append((f"desc{k}.beta", (c, n_pairs), 1.0 / np.sqrt(n_pairs)))
        shapes.append((f"desc{k}.gamma", (2 * c, c), 1.0 / np.sqrt(2 * c)))
        extras(f"desc{k}", k - 2)
    in_dim = c
    for i, width in enumerate(cfg.head_widths):
        shapes.append((f"head{i}.w", (in_dim, width), 1.0 / np.sqrt(in_dim)))
        shapes.append((f"head{i}.b", (width,), 0.0))
        in_dim = width
    return shapes


def expected_param_count(cfg: NetworkConfig) -> int:
    """Closed-form size of the flat parameter vector."""
    c = cfg.channels
    n_alpha = 3 if cfg.k_nn > 0 else 2
    relu = c * c if cfg.use_relu else 0
    count = cfg.max_order * (n_alpha * c + c * c + relu)
    if cfg.use_t2mix and cfg.max_order >= 2:
        count += 3 * c  # ascent level 2
    for k in cfg.descent_levels():
        count += c * (k * (k - 1) // 2) + 2 * c * c + relu
        if cfg.use_t2mix and k - 2 == 2:
            count += 3 * c
    in_dim = c
    for width in cfg.head_widths:
        count += in_dim * width + width
        in_dim = width
    return count


def init_params(cfg: NetworkConfig, seed: int | None = None) -> ParamSet:
    """Deterministic uniform [-s, s] initialization, biases zero."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    entries = {}
    for name, shape, scale in param_shapes(cfg):
        entries[name] = rng.uniform(-scale, scale, size=shape) if scale > 0 else np.zeros(shape)
    return ParamSet(entries)


def centralize(x: np.ndarray) -> np.ndarray:
    """Shift a (3, n) cloud so its columns sum to zero."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != 3:
        raise ValueError(f"expected a (3, n) point cloud, got shape {x.shape}")
    return x - x.mean(axis=1, keepdims=True)


def _apply_extras(v, params: Mapping, prefix: str, cfg: NetworkConfig):
    if cfg.use_relu:
        v = vn_relu(v, VNReLUParams(params[f"{prefix}.relu_w"]))
    if cfg.use_t2mix and field_order(v) == 2:
        v = t2_mix(
            v,
            T2MixParams(
                params[f"{prefix}.t2_identity"],
                params[f"{prefix}.t2_transpose"],
                params[f"{prefix}.t2_trace"],
            ),
        )
    return v


def forward(x, cfg: NetworkConfig, params: Mapping):
    """Run the network on a centralized (3, n) cloud.

    Returns the order-(K mod 2) output field with C channels.  Accepts
    plain arrays or Var leaves for both x and the parameters.
    """
    xv = ad.value_of(x)
    if xv.ndim != 2 or xv.shape[0] != 3:
        raise ValueError(f"expected a (3, n) point cloud, got shape {xv.shape}")
    n = xv.shape[1]
    if np.max(np.abs(xv.sum(axis=1))) > 1e-9:
        raise ValueError("point cloud must be centralized before forward()")
    if cfg.k_nn > 0:
        if n < 2:
            raise ValueError("k_nn > 0 needs at least 2 points")
        if cfg.k_nn > n - 1:
            raise ValueError(f"k_nn={cfg.k_nn} out of range for n={n}")

    stored = {0: ones_field(n, cfg.channels)}
    cur = stored[0]
    for k in range(1, cfg.max_order + 1):
        # the first graph comes from the coordinates: the order-0 start field
        # is constant, so its pairwise distances carry no information and
        # index tie-breaking there would not commute with permutations
        knn_feats = xv.T[:, None, :] if k == 1 else cur
        neighbors = knn_graph(knn_feats, cfg.k_nn) if cfg.k_nn > 0 else None
        alpha3 = params.get(f"asc{k}.alpha3") if cfg.k_nn > 0 else None
        cur = ascend(
            cur,
            x,
            AscendParams(params[f"asc{k}.alpha1"], params[f"asc{k}.alpha2"], alpha3),
            neighbors,
        )
        cur = channel_linear(cur, LinearParams(params[f"asc{k}.gamma"]))
        cur = _apply_extras(cur, params, f"asc{k}", cfg)
        stored[k] = cur
    for k in cfg.descent_levels():
        down = descend(cur, DescendParams(params[f"desc{k}.beta"]))
        cur = ad.concat(down, stored[k - 2], axis=1)
        cur = channel_linear(cur, LinearParams(params[f"desc{k}.gamma"]))
        cur = _apply_extras(cur, params, f"desc{k}", cfg)
    return cur


def sum_pool(v):
    """Sum an order-0 field over points: (n, C) -> (C,)."""
    if field_order(v) != 0:
        raise ValueError(f"sum_pool needs an order-0 field, got order {field_order(v)}")
    return ad.einsum("jc,j->c", v, np.ones(ad.value_of(v).shape[0]))


def invariant_head(pooled, cfg: NetworkConfig, params: Mapping):
    """Fully connected layers on pooled invariants, scalar ReLU between,
    final layer linear."""
    if not cfg.head_widths:
        raise ValueError("config has no head layers")
    h = pooled
    for i in range(len(cfg.head_widths)):
        w, b = params[f"head{i}.w"], params[f"head{i}.b"]
        if ad.value_of(w).shape[0] != ad.value_of(h).shape[0]:
            raise ValueError(f"head layer {i} expects {ad.value_of(w).shape[0]} inputs")
        h = ad.add(ad.einsum("io,i->o", w, h), b)
        if i < len(cfg.head_widths) - 1:
            h = ad.relu(h)
    return h


def short_circuit_mask(cfg: NetworkConfig, level: int) -> LinearParams:
    """0/1 channel-mix preset for the descent that outputs order `level`:
    zeros the descended block and passes the stored skip block through."""
    if not 0 <= level <= cfg.max_order - 2:
        raise ValueError(f"level {level} has no descent in a K={cfg.max_order} network")
    if (cfg.max_order - level) % 2 != 0:
        raise ValueError(f"level {level} has the wrong parity for K={cfg.max_order}")
    c = cfg.channels
    gamma = np.zeros((2 * c, c))
    gamma[c:, :] = np.eye(c)
    return LinearParams(gamma)
