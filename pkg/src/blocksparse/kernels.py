"""Block-sparse matrix multiply (dense X times BCSC W) with fused activations.

The compute loop walks stored blocks one block column at a time: for each
stored block it loads the matching b-wide panel of X, multiplies into a
contiguous per-column accumulator, and writes the finished column back.
Absent blocks are skipped outright, never multiplied by zero. Accumulation
within a block column follows ascending block row index, so results are
bitwise reproducible call to call.
"""

from __future__ import annotations

import numpy as np

from .bcsc import BlockSparseMatrix, _grid_dim

# tanh-based gelu; the constant pair below is the standard cubic correction
_GELU_C = np.float32(np.sqrt(2.0 / np.pi))
_GELU_A = np.float32(0.044715)

NONLINEARITIES = ("none", "relu", "gelu", "silu")


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x * x * x)))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


_APPLY = {
    "none": None,
    "relu": relu,
    "gelu": gelu,
    "silu": silu,
}


def apply_nonlinearity(x: np.ndarray, f: str) -> np.ndarray:
    if f not in _APPLY:
        raise ValueError(f"unknown nonlinearity {f!r}, expected one of {NONLINEARITIES}")
    fn = _APPLY[f]
    return x if fn is None else fn(x)


def _check_lhs(x: np.ndarray, w: BlockSparseMatrix, expected_cols: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"X must be 2-D, got ndim={x.ndim}")
    if x.shape[1] != expected_cols:
        raise ValueError(
            f"dimension mismatch: X has {x.shape[1]} columns, W expects {expected_cols}"
        )
    return np.ascontiguousarray(x, dtype=np.float32)


def _padded_lhs(x: np.ndarray, b: int) -> np.ndarray:
    k = x.shape[1]
    gk = _grid_dim(k, b)
    if gk * b == k:
        return x
    padded = np.zeros((x.shape[0], gk * b), dtype=np.float32)
    padded[:, :k] = x
    return padded


def bspmm(x: np.ndarray, w: BlockSparseMatrix, blk_m: int | None = None) -> np.ndarray:
    """Compute X @ W for dense X (M x K) and block-sparse W (K x N).

    ``blk_m`` tiles the rows of X; each (row tile, block column) output
    partition is computed independently with a fixed accumulation order.
    The default (None) uses a single row tile spanning all of M, which is
    fastest on CPU where the BLAS backend already tiles internally.
    """
    x = _check_lhs(x, w, w.rows)
    m = x.shape[0]
    b = w.block
    xp = _padded_lhs(x, b)
    gc = w.grid_cols
    y = np.zeros((m, gc * b), dtype=np.float32)
    if blk_m is None or blk_m >= m:
        blk_m = m
    elif blk_m < 1:
        raise ValueError(f"blk_m must be >= 1, got {blk_m}")

    col_ptr, row_idx, vals = w.col_ptr, w.block_row_idx, w.values
    tmp = np.empty((blk_m, b), dtype=np.float32)
    acc = np.empty((blk_m, b), dtype=np.float32)
    for r0 in range(0, m, blk_m):
        r1 = min(r0 + blk_m, m)
        t = tmp[: r1 - r0]
        a = acc[: r1 - r0]
        for j in range(gc):
            lo, hi = col_ptr[j], col_ptr[j + 1]
            if lo == hi:
                continue
            a[:] = 0.0
            for k in range(lo, hi):
                r = row_idx[k]
                np.matmul(xp[r0:r1, r * b:(r + 1) * b], vals[k], out=t)
                a += t
            y[r0:r1, j * b:(j + 1) * b] = a
    if gc * b != w.cols:
        y = np.ascontiguousarray(y[:, :w.cols])
    return y


def bspmm_fused(x: np.ndarray, w: BlockSparseMatrix, f: str = "none",
                blk_m: int | None = None) -> np.ndarray:
    """bspmm followed by an elementwise nonlinearity applied in-place.

    The result equals ``apply_nonlinearity(bspmm(x, w), f)`` exactly; no
    intermediate copy of the product is materialized.
    """
    if f not in _APPLY:
        raise ValueError(f"unknown nonlinearity {f!r}, expected one of {NONLINEARITIES}")
    y = bspmm(x, w, blk_m=blk_m)
    fn = _APPLY[f]
    if fn is not None:
        y[...] = fn(y)
    return y


def bspmm_rt(x: np.ndarray, w: BlockSparseMatrix) -> np.ndarray:
    """Compute X @ W.T for dense X (M x N) and block-sparse W (K x N).

    Used by the MLP backward pass, where upstream gradients are pushed back
    through a stored (untransposed) weight matrix. Walks block columns in
    ascending order, so each output block row accumulates contributions in
    a fixed order.
    """
    x = _check_lhs(x, w, w.cols)
    m = x.shape[0]
    b = w.block
    xp = _padded_lhs(x, b)
    gk = w.grid_rows
    y = np.zeros((m, gk * b), dtype=np.float32)
    col_ptr, row_idx, vals = w.col_ptr, w.block_row_idx, w.values
    tmp = np.empty((m, b), dtype=np.float32)
    for j in range(w.grid_cols):
        lo, hi = col_ptr[j], col_ptr[j + 1]
        if lo == hi:
            continue
        panel = xp[:, j * b:(j + 1) * b]
        for k in range(lo, hi):
            r = row_idx[k]
            np.matmul(panel, vals[k].T, out=tmp)
            y[:, r * b:(r + 1) * b] += tmp
    if gk * b != w.rows:
        y = np.ascontiguousarray(y[:, :w.rows])
    return y


def flops(m: int, n: int, k: int, nnzb: int, b: int) -> tuple[int, int]:
    """FLOP counts (dense, sparse) for an M x K by K x N product.

    Dense counts the full 2*M*N*K multiply-adds; sparse counts only the
    stored blocks: 2 * M * nnzb * b^2.
    """
    return 2 * m * n * k, 2 * m * nnzb * b * b
