"""Blocked prune-and-grow: sparsity schedule, norm pruning, gradient regrowth.

Mask generation is a pure function of the dense weights and the most recent
dense gradient. Blocks with the largest weight Frobenius norms are kept;
blocks selected by gradient norm but not by weight norm are regrown with
zero-initialized values so later optimizer steps can repopulate them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bcsc
from .bcsc import BlockMask, BlockSparseMatrix, expand_mask

REPORT_CSV_HEADER = "iter,s_target,kept,regrown,regrown_ratio,s_achieved"


@dataclass(frozen=True)
class SparsitySchedule:
    """Cubic ramp from initial_sparsity to max_sparsity over total_iters.

    The target at iteration i eases in with the cube of the remaining
    fraction of the ramp; decay_iters shortens the ramp so the maximum is
    reached decay_iters before the end of training. step_size is the
    interval (in iterations) between mask regenerations.
    """

    initial_sparsity: float = 0.0
    max_sparsity: float = 0.0
    total_iters: int = 1
    decay_iters: int = 0
    step_size: int = 1

    def __post_init__(self):
        if not 0.0 <= self.initial_sparsity < 1.0:
            raise ValueError(f"initial_sparsity must be in [0, 1), got {self.initial_sparsity}")
        if not 0.0 <= self.max_sparsity <= 1.0:
            raise ValueError(f"max_sparsity must be in [0, 1], got {self.max_sparsity}")
        if self.initial_sparsity > self.max_sparsity:
            raise ValueError("initial_sparsity must not exceed max_sparsity")
        if self.decay_iters < 0 or self.decay_iters >= self.total_iters:
            raise ValueError("decay_iters must satisfy 0 <= decay_iters < total_iters")
        if self.step_size < 1:
            raise ValueError(f"step_size must be >= 1, got {self.step_size}")

    def target(self, i: int) -> float:
        return target_sparsity(i, self)


def target_sparsity(i: int, sched: SparsitySchedule) -> float:
    """Target sparsity at iteration i.

    Evaluated as s_init * f^3 + s_max * (1 - f^3) with f the remaining ramp
    fraction; algebraically identical to the usual cubic-ramp form but hits
    both endpoints exactly in floating point. Clamped to max_sparsity once
    the ramp (total_iters - decay_iters) is complete.
    """
    if i < 0 or i > sched.total_iters:
        raise ValueError(f"iteration {i} outside [0, {sched.total_iters}]")
    ramp = sched.total_iters - sched.decay_iters
    if i >= ramp:
        return sched.max_sparsity
    f = (1.0 - i / ramp) ** 3
    return sched.initial_sparsity * f + sched.max_sparsity * (1.0 - f)


@dataclass(frozen=True)
class PruneReport:
    """Bookkeeping for one mask generation on one weight matrix."""

    iteration: int
    s_target: float
    kept: int
    regrown: int
    regrown_ratio: float
    s_achieved: float

    def csv_row(self) -> str:
        return (
            f"{self.iteration},{self.s_target:.10g},{self.kept},{self.regrown},"
            f"{self.regrown_ratio:.10g},{self.s_achieved:.10g}"
        )


def block_norms(dense: np.ndarray, b: int) -> np.ndarray:
    """Frobenius norm of each b x b block (boundary blocks zero-padded)."""
    dense = np.asarray(dense)
    if dense.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={dense.ndim}")
    if b < 1:
        raise ValueError(f"block size must be >= 1, got {b}")
    padded = bcsc._pad_to_grid(dense.astype(np.float64, copy=False), b)
    gr, gc = padded.shape[0] // b, padded.shape[1] // b
    blocks = padded.reshape(gr, b, gc, b)
    return np.sqrt(np.einsum("gihj,gihj->gh", blocks, blocks))


def prune_s(norms: np.ndarray, s: float) -> np.ndarray:
    """Keep the round((1-s) * total) blocks with the largest norms.

    Rounding is half-up. Ties are broken toward ascending (block column,
    block row), which makes the selection fully deterministic.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {s}")
    gr, gc = norms.shape
    total = gr * gc
    k = int(np.floor((1.0 - s) * total + 0.5))
    keep = np.zeros((gr, gc), dtype=bool)
    if k == 0:
        return keep
    if k >= total:
        keep[:] = True
        return keep
    flat_rows, flat_cols = np.indices((gr, gc))
    order = np.lexsort((
        flat_rows.ravel(),
        flat_cols.ravel(),
        -norms.astype(np.float64).ravel(),
    ))
    keep.ravel()[order[:k]] = True
    return keep


def generate_masks(
    w_dense: np.ndarray,
    g_dense: np.ndarray,
    b: int,
    s: float,
    iteration: int = 0,
) -> tuple[BlockMask, PruneReport]:
    """Prune by weight norms, regrow by gradient norms (set difference)."""
    w_dense = np.asarray(w_dense)
    g_dense = np.asarray(g_dense)
    if w_dense.shape != g_dense.shape:
        raise ValueError(
            f"weight shape {w_dense.shape} != gradient shape {g_dense.shape}"
        )
    kept = prune_s(block_norms(w_dense, b), s)
    grad_sel = prune_s(block_norms(g_dense, b), s)
    regrown = grad_sel & ~kept
    mask = BlockMask(kept=kept, regrown=regrown)
    total = kept.size
    n_kept = int(np.count_nonzero(kept))
    n_regrown = int(np.count_nonzero(regrown))
    report = PruneReport(
        iteration=iteration,
        s_target=s,
        kept=n_kept,
        regrown=n_regrown,
        regrown_ratio=n_regrown / total,
        s_achieved=1.0 - (n_kept + n_regrown) / total,
    )
    return mask, report


def apply_mask(
    w_dense: np.ndarray,
    mask: BlockMask,
    b: int,
    zero_regrown: bool = True,
) -> tuple[np.ndarray, BlockSparseMatrix]:
    """Apply a block mask to the dense master and rebuild the BCSC cache.

    Inactive blocks are zeroed in the returned dense matrix. With
    ``zero_regrown`` (the default, used when a freshly generated mask is
    first applied) regrown blocks are zeroed too, so they enter the sparse
    matrix as explicit zero blocks. Re-applications between mask refreshes
    pass ``zero_regrown=False`` so optimizer updates accumulated in regrown
    blocks survive.
    """
    w_dense = np.asarray(w_dense, dtype=np.float32)
    gr = -(-w_dense.shape[0] // b)
    gc = -(-w_dense.shape[1] // b)
    if (mask.grid_rows, mask.grid_cols) != (gr, gc):
        raise ValueError(
            f"mask grid {mask.grid_rows}x{mask.grid_cols} does not match "
            f"matrix grid {gr}x{gc} for block size {b}"
        )
    survives = mask.kept if zero_regrown else mask.active
    rows, cols = w_dense.shape
    masked = w_dense * expand_mask(survives, b, rows, cols)
    return masked, bcsc.from_dense(masked, b, mask)
