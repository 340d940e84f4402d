"""Gated MLP with block-sparse weights: Y = (SiLU(X Wg) * (X Wu)) Wd.

Each of the three projections (gate, up, down) keeps a dense float32 master
matrix, a block mask, and a BCSC cache of the masked weights. Forward and
backward both run through the BCSC caches, so pruned blocks are skipped in
compute while weight gradients stay dense: the prune-and-grow step needs
gradient norms for blocks that are currently inactive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bcsc
from .bcsc import BlockMask, BlockSparseMatrix
from .kernels import bspmm, bspmm_rt, sigmoid


@dataclass
class MaskedMatrix:
    """Dense master weights plus the mask and BCSC cache derived from them."""

    dense: np.ndarray
    mask: BlockMask
    cache: BlockSparseMatrix

    @classmethod
    def dense_init(cls, dense: np.ndarray, b: int) -> "MaskedMatrix":
        dense = np.ascontiguousarray(dense, dtype=np.float32)
        gr = -(-dense.shape[0] // b)
        gc = -(-dense.shape[1] // b)
        mask = BlockMask.all_active(gr, gc)
        return cls(dense=dense, mask=mask, cache=bcsc.from_dense(dense, b, mask))

    @property
    def block(self) -> int:
        return self.cache.block

    def rebuild_cache(self) -> None:
        """Resync the BCSC cache with the dense master under the current mask."""
        self.cache = bcsc.from_dense(self.dense, self.block, self.mask)

    def achieved_sparsity(self) -> float:
        return self.mask.block_sparsity()


@dataclass
class SparseMlp:
    """Three masked projections sharing one block size.

    gate: e x h (feeds SiLU), up: e x h, down: h x e.
    """

    gate: MaskedMatrix
    up: MaskedMatrix
    down: MaskedMatrix

    @classmethod
    def create(cls, e: int, h: int, b: int, rng: np.random.Generator) -> "SparseMlp":
        # half-scale down projection keeps the gated product tame at init
        def init(rows, cols, gain):
            scale = gain * np.sqrt(1.0 / rows)
            w = (rng.standard_normal((rows, cols)) * scale).astype(np.float32)
            return MaskedMatrix.dense_init(w, b)

        return cls(gate=init(e, h, 1.0), up=init(e, h, 1.0), down=init(h, e, 0.5))

    @property
    def embed_dim(self) -> int:
        return self.gate.dense.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.gate.dense.shape[1]

    @property
    def block(self) -> int:
        return self.gate.block

    def matrices(self) -> tuple[MaskedMatrix, MaskedMatrix, MaskedMatrix]:
        return self.gate, self.up, self.down

    def achieved_sparsity(self) -> float:
        """Block sparsity aggregated over the three projections."""
        active = sum(m.mask.n_active for m in self.matrices())
        total = sum(m.mask.kept.size for m in self.matrices())
        return 1.0 - active / total


@dataclass
class MlpActivations:
    """Tensors saved by the forward pass for reuse in backward."""

    x: np.ndarray       # input, M x e
    gate_pre: np.ndarray  # X Wg, M x h (pre-activation)
    up_out: np.ndarray    # X Wu, M x h
    gated: np.ndarray     # SiLU(gate_pre) * up_out, M x h


def mlp_forward(x: np.ndarray, mlp: SparseMlp) -> tuple[np.ndarray, MlpActivations]:
    """Run the gated MLP; returns the output and saved activations."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 2:
        raise ValueError(f"X must be 2-D (flatten batch/sequence first), got ndim={x.ndim}")
    if x.shape[1] != mlp.embed_dim:
        raise ValueError(
            f"X feature dim {x.shape[1]} != embedding dim {mlp.embed_dim}"
        )
    a = bspmm(x, mlp.gate.cache)
    b = bspmm(x, mlp.up.cache)
    g = (a * sigmoid(a)) * b
    y = bspmm(g, mlp.down.cache)
    return y, MlpActivations(x=x, gate_pre=a, up_out=b, gated=g)


def mlp_backward(
    dy: np.ndarray, acts: MlpActivations, mlp: SparseMlp
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of the gated MLP at the saved activations.

    Returns (dX, dWgate, dWup, dWdown). Weight gradients are dense over the
    full grid; the masked weights themselves are treated as the function's
    parameters (no straight-through relaxation).
    """
    if acts is None:
        raise ValueError("missing saved activations: run mlp_forward first")
    dy = np.ascontiguousarray(dy, dtype=np.float32)
    if dy.shape != (acts.x.shape[0], mlp.embed_dim):
        raise ValueError(f"dY shape {dy.shape} does not match forward output")

    sig = sigmoid(acts.gate_pre)
    s = acts.gate_pre * sig

    dg = bspmm_rt(dy, mlp.down.cache)
    d_down = acts.gated.T @ dy
    db = dg * s
    da = (dg * acts.up_out) * (sig * (1.0 + acts.gate_pre * (1.0 - sig)))
    d_gate = acts.x.T @ da
    d_up = acts.x.T @ db
    dx = bspmm_rt(da, mlp.gate.cache) + bspmm_rt(db, mlp.up.cache)
    return dx, np.ascontiguousarray(d_gate), np.ascontiguousarray(d_up), d_down
