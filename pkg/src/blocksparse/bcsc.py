"""Blocked compressed-sparse-column (BCSC) weight matrices.

A BCSC matrix partitions a rows x cols matrix into a grid of b x b blocks
and stores only the nonzero (or mask-selected) blocks, CSC-style: one
offset per block column into a flat list of (block row index, dense b x b
values) pairs. Boundary blocks are zero-padded so every stored block is a
full b x b tile and kernels never branch on edges.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"BCSC"
FORMAT_VERSION = 1
# magic, version u32, rows u64, cols u64, block u32, nnzb u64
_HEADER = struct.Struct("<4sIQQIQ")

DENSE_MAGIC = b"DNSE"
# magic, rows u32, cols u32, reserved u32 (pads the header to 16 bytes)
_DENSE_HEADER = struct.Struct("<4sIII")


class FormatError(ValueError):
    """Raised when a serialized matrix stream is malformed."""


def _grid_dim(n: int, b: int) -> int:
    return -(-n // b)


@dataclass(frozen=True)
class BlockSparseMatrix:
    """Immutable block-sparse matrix in BCSC layout.

    Attributes:
        rows, cols: logical (unpadded) dense dimensions.
        block: square block edge b.
        col_ptr: int64 array of length grid_cols + 1; block-column offsets
            into ``block_row_idx`` / ``values``.
        block_row_idx: uint32 array of length nnzb; strictly increasing
            within each block column.
        values: float32 array of shape (nnzb, b, b), block-major, row-major
            inside each block.
    """

    rows: int
    cols: int
    block: int
    col_ptr: np.ndarray
    block_row_idx: np.ndarray
    values: np.ndarray

    @property
    def grid_rows(self) -> int:
        return _grid_dim(self.rows, self.block)

    @property
    def grid_cols(self) -> int:
        return _grid_dim(self.cols, self.block)

    @property
    def nnzb(self) -> int:
        return int(self.block_row_idx.shape[0])

    def to_dense(self) -> np.ndarray:
        return to_dense(self)

    def block_sparsity(self) -> float:
        return block_sparsity(self)

    def validate(self) -> None:
        """Check structural invariants; raises ValueError on violation."""
        gr, gc, b = self.grid_rows, self.grid_cols, self.block
        if b < 1:
            raise ValueError("block size must be >= 1")
        if self.col_ptr.shape != (gc + 1,):
            raise ValueError(f"col_ptr length {self.col_ptr.shape[0]} != grid_cols+1 ({gc + 1})")
        if self.col_ptr[0] != 0 or self.col_ptr[-1] != self.nnzb:
            raise ValueError("col_ptr must start at 0 and end at nnzb")
        if np.any(np.diff(self.col_ptr) < 0):
            raise ValueError("col_ptr must be nondecreasing")
        if self.values.shape != (self.nnzb, b, b):
            raise ValueError(f"values shape {self.values.shape} != (nnzb, b, b)")
        if self.nnzb and self.block_row_idx.max() >= gr:
            raise ValueError("block row index out of range")
        for j in range(gc):
            col = self.block_row_idx[self.col_ptr[j]:self.col_ptr[j + 1]]
            if col.size > 1 and np.any(np.diff(col.astype(np.int64)) <= 0):
                raise ValueError(f"block rows in column {j} not strictly increasing")
        self._validate_padding()

    def _validate_padding(self) -> None:
        b = self.block
        pad_r = self.grid_rows * b - self.rows
        pad_c = self.grid_cols * b - self.cols
        if pad_r == 0 and pad_c == 0:
            return
        last_r = self.grid_rows - 1
        for j in range(self.grid_cols):
            for k in range(self.col_ptr[j], self.col_ptr[j + 1]):
                blk = self.values[k]
                if pad_r and self.block_row_idx[k] == last_r and np.any(blk[b - pad_r:, :]):
                    raise ValueError("nonzero values in row padding region")
                if pad_c and j == self.grid_cols - 1 and np.any(blk[:, b - pad_c:]):
                    raise ValueError("nonzero values in column padding region")


@dataclass(frozen=True)
class BlockMask:
    """Boolean block grid with kept/regrown provenance.

    ``kept`` marks blocks surviving weight-norm pruning, ``regrown`` blocks
    reinstated from the gradient criterion. The two sets are disjoint; a
    block is active if it is in either.
    """

    kept: np.ndarray
    regrown: np.ndarray

    def __post_init__(self):
        if self.kept.shape != self.regrown.shape:
            raise ValueError("kept and regrown grids must have the same shape")
        if self.kept.ndim != 2:
            raise ValueError("mask grids must be 2-D")
        if np.any(self.kept & self.regrown):
            raise ValueError("kept and regrown must be disjoint")

    @property
    def grid_rows(self) -> int:
        return self.kept.shape[0]

    @property
    def grid_cols(self) -> int:
        return self.kept.shape[1]

    @property
    def active(self) -> np.ndarray:
        return self.kept | self.regrown

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))

    def block_sparsity(self) -> float:
        return 1.0 - self.n_active / (self.grid_rows * self.grid_cols)

    @classmethod
    def all_active(cls, grid_rows: int, grid_cols: int) -> "BlockMask":
        return cls(
            kept=np.ones((grid_rows, grid_cols), dtype=bool),
            regrown=np.zeros((grid_rows, grid_cols), dtype=bool),
        )


def expand_mask(grid: np.ndarray, b: int, rows: int, cols: int) -> np.ndarray:
    """Broadcast a boolean block grid onto element coordinates (rows x cols)."""
    full = np.repeat(np.repeat(grid, b, axis=0), b, axis=1)
    return full[:rows, :cols]


def _pad_to_grid(dense: np.ndarray, b: int) -> np.ndarray:
    rows, cols = dense.shape
    gr, gc = _grid_dim(rows, b), _grid_dim(cols, b)
    if gr * b == rows and gc * b == cols:
        return dense
    padded = np.zeros((gr * b, gc * b), dtype=dense.dtype)
    padded[:rows, :cols] = dense
    return padded


def from_dense(dense: np.ndarray, b: int, mask: BlockMask | None = None) -> BlockSparseMatrix:
    """Convert a dense matrix to BCSC.

    Without a mask, every block containing a nonzero entry is stored. With a
    mask, exactly the active blocks are stored (values taken verbatim from
    ``dense``, including zeros) and all others dropped.
    """
    dense = np.asarray(dense)
    if dense.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={dense.ndim}")
    rows, cols = dense.shape
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix dimensions must be positive, got {dense.shape}")
    if b < 1:
        raise ValueError(f"block size must be >= 1, got {b}")
    gr, gc = _grid_dim(rows, b), _grid_dim(cols, b)
    if mask is not None and (mask.grid_rows, mask.grid_cols) != (gr, gc):
        raise ValueError(
            f"mask grid {mask.grid_rows}x{mask.grid_cols} does not match "
            f"matrix grid {gr}x{gc} for block size {b}"
        )

    padded = _pad_to_grid(dense.astype(np.float32, copy=False), b)
    # (gr, gc, b, b) view of the block grid
    blocks = padded.reshape(gr, b, gc, b).transpose(0, 2, 1, 3)
    if mask is not None:
        store = mask.active
    else:
        store = blocks.reshape(gr, gc, b * b).any(axis=2)

    col_ptr = np.zeros(gc + 1, dtype=np.int64)
    col_ptr[1:] = np.cumsum(store.sum(axis=0))
    # column-major walk keeps block rows sorted within each column
    rr, cc = np.nonzero(store.T)  # rr = block col, cc = block row
    block_row_idx = cc.astype(np.uint32)
    values = np.ascontiguousarray(blocks[cc, rr], dtype=np.float32)
    return BlockSparseMatrix(
        rows=rows, cols=cols, block=b,
        col_ptr=col_ptr, block_row_idx=block_row_idx, values=values,
    )


def to_dense(w: BlockSparseMatrix) -> np.ndarray:
    """Expand to the logical (unpadded) dense matrix; absent blocks are zero."""
    b = w.block
    out = np.zeros((w.grid_rows * b, w.grid_cols * b), dtype=np.float32)
    for j in range(w.grid_cols):
        for k in range(w.col_ptr[j], w.col_ptr[j + 1]):
            r = w.block_row_idx[k]
            out[r * b:(r + 1) * b, j * b:(j + 1) * b] = w.values[k]
    return np.ascontiguousarray(out[:w.rows, :w.cols])


def block_sparsity(w: BlockSparseMatrix) -> float:
    """Fraction of grid blocks that are not stored, in [0, 1]."""
    return 1.0 - w.nnzb / (w.grid_rows * w.grid_cols)


def serialize(w: BlockSparseMatrix) -> bytes:
    """Encode to the little-endian BCSC byte format (bit-exact round trip)."""
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, w.rows, w.cols, w.block, w.nnzb)
    return b"".join((
        header,
        w.col_ptr.astype("<u8").tobytes(),
        w.block_row_idx.astype("<u4").tobytes(),
        w.values.astype("<f4").tobytes(),
    ))


def deserialize(data: bytes) -> BlockSparseMatrix:
    """Decode the BCSC byte format; validates all structural invariants."""
    if len(data) < _HEADER.size:
        raise FormatError("truncated stream: incomplete header")
    magic, version, rows, cols, block, nnzb = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if block < 1 or rows < 1 or cols < 1:
        raise FormatError("invalid header dimensions")
    gc = _grid_dim(cols, block)
    n_ptr = gc + 1
    expected = _HEADER.size + n_ptr * 8 + nnzb * 4 + nnzb * block * block * 4
    if len(data) < expected:
        raise FormatError(f"truncated stream: expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise FormatError(f"trailing data: expected {expected} bytes, got {len(data)}")

    off = _HEADER.size
    col_ptr = np.frombuffer(data, dtype="<u8", count=n_ptr, offset=off).astype(np.int64)
    off += n_ptr * 8
    block_row_idx = np.frombuffer(data, dtype="<u4", count=nnzb, offset=off).astype(np.uint32)
    off += nnzb * 4
    values = np.frombuffer(data, dtype="<f4", count=nnzb * block * block, offset=off)
    values = values.astype(np.float32).reshape(nnzb, block, block)

    w = BlockSparseMatrix(
        rows=rows, cols=cols, block=block,
        col_ptr=col_ptr, block_row_idx=block_row_idx, values=values,
    )
    try:
        w.validate()
    except ValueError as exc:
        raise FormatError(f"invariant violation after load: {exc}") from exc
    return w


def save(w: BlockSparseMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(w))


def load(path) -> BlockSparseMatrix:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def write_dense_file(dense: np.ndarray, path) -> None:
    """Write a dense f32 matrix in the raw little-endian interchange format."""
    dense = np.asarray(dense, dtype=np.float32)
    if dense.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    rows, cols = dense.shape
    with open(path, "wb") as fh:
        fh.write(_DENSE_HEADER.pack(DENSE_MAGIC, rows, cols, 0))
        fh.write(np.ascontiguousarray(dense).astype("<f4").tobytes())


def read_dense_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _DENSE_HEADER.size:
        raise FormatError("truncated stream: incomplete dense header")
    magic, rows, cols, _ = _DENSE_HEADER.unpack_from(data)
    if magic != DENSE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DENSE_MAGIC!r}")
    expected = _DENSE_HEADER.size + rows * cols * 4
    if len(data) != expected:
        raise FormatError(f"dense payload size mismatch: expected {expected} bytes, got {len(data)}")
    vals = np.frombuffer(data, dtype="<f4", offset=_DENSE_HEADER.size)
    return vals.astype(np.float32).reshape(rows, cols)
