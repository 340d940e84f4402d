"""Block-sparse linear algebra and prune-and-grow sparse training toolkit."""

__version__ = "0.1.0"

from .bcsc import (
    BlockMask,
    BlockSparseMatrix,
    FormatError,
    block_sparsity,
    deserialize,
    expand_mask,
    from_dense,
    serialize,
    to_dense,
)
from .kernels import bspmm, bspmm_fused, bspmm_rt, flops, gelu, relu, sigmoid, silu
from .footprint import FootprintQuery, FootprintResult, gpu_requirements
from .mlp import MaskedMatrix, MlpActivations, SparseMlp, mlp_backward, mlp_forward
from .pruner import (
    PruneReport,
    SparsitySchedule,
    apply_mask,
    block_norms,
    generate_masks,
    prune_s,
    target_sparsity,
)
from .trainer import (
    DivergenceError,
    TrainConfig,
    TrainLog,
    distill_loss,
    sgd_step,
    train,
)

__all__ = [
    "BlockMask",
    "BlockSparseMatrix",
    "DivergenceError",
    "FootprintQuery",
    "FootprintResult",
    "FormatError",
    "MaskedMatrix",
    "MlpActivations",
    "PruneReport",
    "SparseMlp",
    "SparsitySchedule",
    "TrainConfig",
    "TrainLog",
    "apply_mask",
    "block_norms",
    "block_sparsity",
    "bspmm",
    "bspmm_fused",
    "bspmm_rt",
    "deserialize",
    "distill_loss",
    "expand_mask",
    "flops",
    "from_dense",
    "gelu",
    "generate_masks",
    "gpu_requirements",
    "mlp_backward",
    "mlp_forward",
    "prune_s",
    "relu",
    "serialize",
    "sgd_step",
    "sigmoid",
    "silu",
    "target_sparsity",
    "to_dense",
    "train",
]
