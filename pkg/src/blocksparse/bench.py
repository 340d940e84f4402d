"""Microbenchmark harness for the block-sparse kernel.

Each sweep point builds a seeded random block-sparse matrix at the requested
block sparsity (uniformly placed active blocks), times the kernel, and
compares against the same kernel running on a full grid of identical tiling
(the dense baseline). Medians of repeated trials after one warmup run are
reported in nanoseconds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, asdict

import numpy as np
import psutil

from . import bcsc
from .bcsc import BlockSparseMatrix
from .kernels import bspmm, flops

BENCH_CSV_FIELDS = (
    "M", "N", "K", "b", "sparsity", "trials", "sparse_ns", "dense_ns",
    "speedup", "dense_flops", "sparse_flops", "bytes_moved",
)


@dataclass(frozen=True)
class BenchRecord:
    M: int
    N: int
    K: int
    b: int
    sparsity: float
    trials: int
    sparse_ns: int
    dense_ns: int
    speedup: float
    dense_flops: int
    sparse_flops: int
    bytes_moved: int

    def csv_row(self) -> str:
        d = asdict(self)
        d["sparsity"] = f"{self.sparsity:.6g}"
        d["speedup"] = f"{self.speedup:.6g}"
        return ",".join(str(d[f]) for f in BENCH_CSV_FIELDS)


def random_bcsc(
    k: int, n: int, b: int, sparsity: float, rng: np.random.Generator
) -> BlockSparseMatrix:
    """Uniform random placement of round((1-s) * total) active blocks."""
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {sparsity}")
    gr, gc = -(-k // b), -(-n // b)
    total = gr * gc
    nnzb = int(np.floor((1.0 - sparsity) * total + 0.5))
    flat = rng.choice(total, size=nnzb, replace=False)
    flat.sort()  # column-major flat index: sorted gives per-column sorted rows
    cols = flat // gr
    rows = flat % gr
    col_ptr = np.zeros(gc + 1, dtype=np.int64)
    np.add.at(col_ptr, cols + 1, 1)
    col_ptr = np.cumsum(col_ptr)
    values = rng.standard_normal((nnzb, b, b)).astype(np.float32)
    w = BlockSparseMatrix(
        rows=k, cols=n, block=b,
        col_ptr=col_ptr, block_row_idx=rows.astype(np.uint32), values=values,
    )
    _zero_padding(w)
    return w


def _zero_padding(w: BlockSparseMatrix) -> None:
    b = w.block
    pad_r = w.grid_rows * b - w.rows
    pad_c = w.grid_cols * b - w.cols
    if pad_r:
        last = w.grid_rows - 1
        w.values[w.block_row_idx == last, b - pad_r:, :] = 0.0
    if pad_c:
        lo, hi = w.col_ptr[-2], w.col_ptr[-1]
        w.values[lo:hi, :, b - pad_c:] = 0.0


def estimate_bytes(m: int, n: int, k: int, nnzb: int, b: int) -> int:
    """Data-movement model: per stored block one M x b panel of X plus the
    block itself is read; Y is written once; index arrays read once."""
    gc = -(-n // b)
    x_reads = nnzb * m * b * 4
    w_reads = nnzb * b * b * 4
    y_writes = m * n * 4
    idx = (gc + 1) * 8 + nnzb * 4
    return x_reads + w_reads + y_writes + idx


def check_memory(m: int, n: int, k: int, b: int) -> None:
    """Reject sweep points whose working set cannot fit in available RAM."""
    gr, gc = -(-k // b), -(-n // b)
    need = 4 * (m * k + m * n + gr * gc * b * b) * 2  # x, y, full-grid values, 2x slack
    avail = psutil.virtual_memory().available
    if need > avail:
        raise MemoryError(
            f"benchmark point M={m} N={n} K={k} b={b} needs ~{need / 1e9:.1f} GB, "
            f"only {avail / 1e9:.1f} GB available"
        )


def time_median_ns(fn, trials: int, warmup: int = 1) -> int:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(trials):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return int(np.median(samples))


def bench_point(
    m: int, n: int, k: int, b: int, sparsity: float,
    trials: int, rng: np.random.Generator, dense_ns: int | None = None,
) -> BenchRecord:
    """Benchmark one sweep point; reuses a precomputed dense baseline if given."""
    check_memory(m, n, k, b)
    x = rng.standard_normal((m, k)).astype(np.float32)
    w = random_bcsc(k, n, b, sparsity, rng)
    sparse_ns = time_median_ns(lambda: bspmm(x, w), trials)
    if dense_ns is None:
        w_full = random_bcsc(k, n, b, 0.0, rng)
        dense_ns = time_median_ns(lambda: bspmm(x, w_full), trials)
    dense_fl, sparse_fl = flops(m, n, k, w.nnzb, b)
    return BenchRecord(
        M=m, N=n, K=k, b=b, sparsity=sparsity, trials=trials,
        sparse_ns=sparse_ns, dense_ns=dense_ns,
        speedup=dense_ns / sparse_ns,
        dense_flops=dense_fl, sparse_flops=sparse_fl,
        bytes_moved=estimate_bytes(m, n, k, w.nnzb, b),
    )


def run_sweep(
    sizes: list[int], block_sizes: list[int], sparsities: list[float],
    trials: int, seed: int,
) -> list[BenchRecord]:
    """Full cartesian sweep; sizes are square (M = N = K).

    The dense baseline is timed once per (size, block) pair and shared by
    every sparsity at that shape.
    """
    if not sizes or not block_sizes or not sparsities:
        raise ValueError("sizes, block sizes, and sparsities must be nonempty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    records = []
    for size in sizes:
        for b in block_sizes:
            check_memory(size, size, size, b)
            rng = np.random.default_rng(np.random.SeedSequence([seed, size, b]))
            x = rng.standard_normal((size, size)).astype(np.float32)
            w_full = random_bcsc(size, size, b, 0.0, rng)
            dense_ns = time_median_ns(lambda: bspmm(x, w_full), trials)
            del w_full
            for s in sparsities:
                w = random_bcsc(size, size, b, s, rng)
                sparse_ns = time_median_ns(lambda: bspmm(x, w), trials)
                dense_fl, sparse_fl = flops(size, size, size, w.nnzb, b)
                records.append(BenchRecord(
                    M=size, N=size, K=size, b=b, sparsity=s, trials=trials,
                    sparse_ns=sparse_ns, dense_ns=dense_ns,
                    speedup=dense_ns / sparse_ns,
                    dense_flops=dense_fl, sparse_flops=sparse_fl,
                    bytes_moved=estimate_bytes(size, size, size, w.nnzb, b),
                ))
    return records


def write_csv(records: list[BenchRecord], path, metadata: dict | None = None) -> None:
    with open(path, "w") as fh:
        for key, val in (metadata or {}).items():
            fh.write(f"# {key}={val}\n")
        fh.write(",".join(BENCH_CSV_FIELDS) + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")
