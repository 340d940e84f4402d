"""GPU-count and memory-footprint estimates for sparsified models.

Weight storage only: dense bytes are params * bytes_per_param; sparsifying
the MLP share at sparsity s removes mlp_params * s parameters. GPU counts
are the ceiling of bytes over per-GPU HBM capacity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class FootprintQuery:
    params: float
    mlp_params: float
    sparsity: float
    bytes_per_param: float = 4.0
    hbm_bytes: float = 96e9

    def __post_init__(self):
        if self.params <= 0 or self.bytes_per_param <= 0 or self.hbm_bytes <= 0:
            raise ValueError("params, bytes_per_param, and hbm_bytes must be positive")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError(f"sparsity must be in [0, 1], got {self.sparsity}")
        if not 0.0 <= self.mlp_params <= self.params:
            raise ValueError("mlp_params must be in [0, params]")

    @classmethod
    def from_fraction(cls, params: float, mlp_fraction: float, sparsity: float,
                      bytes_per_param: float = 4.0, hbm_bytes: float = 96e9):
        if not 0.0 <= mlp_fraction <= 1.0:
            raise ValueError(f"mlp_fraction must be in [0, 1], got {mlp_fraction}")
        return cls(params=params, mlp_params=params * mlp_fraction,
                   sparsity=sparsity, bytes_per_param=bytes_per_param,
                   hbm_bytes=hbm_bytes)


@dataclass(frozen=True)
class FootprintResult:
    dense_bytes: float
    sparse_bytes: float
    dense_gpus: int
    sparse_gpus: int
    reduction: float

    def to_dict(self) -> dict:
        return {
            "dense_bytes": self.dense_bytes,
            "sparse_bytes": self.sparse_bytes,
            "dense_gpus": self.dense_gpus,
            "sparse_gpus": self.sparse_gpus,
            "reduction": self.reduction,
        }


def gpu_requirements(q: FootprintQuery) -> FootprintResult:
    dense_bytes = q.params * q.bytes_per_param
    sparse_bytes = (q.params - q.mlp_params * q.sparsity) * q.bytes_per_param
    dense_gpus = math.ceil(dense_bytes / q.hbm_bytes)
    sparse_gpus = max(1, math.ceil(sparse_bytes / q.hbm_bytes))
    return FootprintResult(
        dense_bytes=dense_bytes,
        sparse_bytes=sparse_bytes,
        dense_gpus=dense_gpus,
        sparse_gpus=sparse_gpus,
        reduction=dense_gpus / sparse_gpus,
    )
