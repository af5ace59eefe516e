"""Jointly rotation- and permutation-equivariant tensor networks for point clouds."""

from .network import NetworkConfig, ParamSet, centralize, forward, init_params, sum_pool
from .oracles import lambda_cov, power_sums, q_from_power_sums

__version__ = "0.1.0"

__all__ = [
    "NetworkConfig",
    "ParamSet",
    "centralize",
    "forward",
    "init_params",
    "sum_pool",
    "lambda_cov",
    "power_sums",
    "q_from_power_sums",
    "__version__",
]
