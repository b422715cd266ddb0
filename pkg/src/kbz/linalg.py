"""Dense matrix storage, contiguous block partitions and block spectral estimates."""

from __future__ import annotations

from dataclasses import dataclass, field
from os import PathLike
from typing import Literal

import numpy as np

Axis = Literal["rows", "columns"]

# Blocks lighter than this get zero sampling probability.
_WEIGHT_FLOOR = 1e-300
_START_RNG_SEED = 20240101


class DenseMatrix:
    """Row-major real matrix with cached squared row/column norms.

    The wrapped array is copied on construction and marked read-only so a
    single instance can be shared across concurrent solver runs.
    """

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr
        self.row_sq_norms = np.einsum("ij,ij->i", arr, arr)
        self.col_sq_norms = np.einsum("ij,ij->j", arr, arr)
        self.frob_sq = float(self.row_sq_norms.sum())
        self.row_sq_norms.setflags(write=False)
        self.col_sq_norms.setflags(write=False)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def block(self, rng: range, axis: Axis) -> np.ndarray:
        """Submatrix view ``A[I, :]`` or ``A[:, J]`` for a contiguous range."""
        sl = slice(rng.start, rng.stop)
        return self.data[sl, :] if axis == "rows" else self.data[:, sl]

    def __repr__(self) -> str:
        return f"DenseMatrix({self.rows}x{self.cols}, frob_sq={self.frob_sq:.6g})"


@dataclass(frozen=True)
class Partition:
    axis: Axis
    blocks: tuple[range, ...]
    block_frob_sq: np.ndarray
    cumulative: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.blocks)

    @property
    def extent(self) -> int:
        return self.blocks[-1].stop


def uniform_blocks(extent: int, tau: int) -> tuple[range, ...]:
    """Contiguous ranges ``[0, tau), [tau, 2 tau), ...`` with the remainder last."""
    if extent < 1:
        raise ValueError(f"extent must be >= 1, got {extent}")
    if tau < 1 or tau > extent:
        raise ValueError(f"tau must lie in [1, {extent}], got {tau}")
    return tuple(range(s, min(s + tau, extent)) for s in range(0, extent, tau))


def partition_uniform(matrix: DenseMatrix, tau: int, axis: Axis) -> Partition:
    """Split rows or columns into contiguous blocks of size ``tau``.

    Every block except possibly the last holds exactly ``tau`` indices; the
    last one holds the remainder. Blocks are weighted by their squared
    Frobenius norm for sampling.

    Parameters
    ----------
    matrix : DenseMatrix
    tau : int
        Block size, ``1 <= tau <= extent``.
    axis : {"rows", "columns"}

    Raises
    ------
    ValueError
        If ``tau`` is out of range or ``axis`` is unknown.
    """
    if axis == "rows":
        norms = matrix.row_sq_norms
    elif axis == "columns":
        norms = matrix.col_sq_norms
    else:
        raise ValueError(f"axis must be 'rows' or 'columns', got {axis!r}")
    blocks = uniform_blocks(len(norms), tau)
    weights = np.array([norms[b.start:b.stop].sum() for b in blocks])
    weights[weights < _WEIGHT_FLOOR] = 0.0
    total = weights.sum()
    cumulative = np.cumsum(weights) / total if total > 0 else np.zeros_like(weights)
    weights.setflags(write=False)
    cumulative.setflags(write=False)
    return Partition(axis, blocks, weights, cumulative)


def sample_block(partition: Partition, rng: np.random.Generator) -> int:
    """Draw a block index with probability proportional to its Frobenius weight.

    Consumes exactly one uniform variate from ``rng``.
    """
    cum = partition.cumulative
    if cum.size == 0 or cum[-1] <= 0:
        raise RuntimeError("partition has no block with positive weight")
    u = rng.random()
    idx = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return min(idx, cum.size - 1)


def sigma_max_sq(block: np.ndarray, rtol: float = 1e-10, max_iter: int = 1000) -> float:
    """Largest squared singular value of ``block`` by power iteration on its Gram operator."""
    p, q = block.shape
    # iterate on the smaller Gram matrix
    gram = block.T @ block if q <= p else block @ block.T
    d = gram.shape[0]
    if not np.any(gram):
        return 0.0
    # fixed generic start: structured starts (all-ones etc.) can be orthogonal
    # to the top eigenvector of structured blocks
    v = np.random.default_rng(_START_RNG_SEED).standard_normal(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam_new = float(v @ (gram @ v))
        if abs(lam_new - lam) <= rtol * lam_new:
            return lam_new
        lam = lam_new
    return lam


def block_sigma_max_sq(matrix: DenseMatrix, block: range, axis: Axis) -> float:
    if len(block) == 0:
        raise ValueError("empty block")
    return sigma_max_sq(matrix.block(block, axis))


def _sigma_min_nonzero_sq(block: np.ndarray) -> float:
    s = np.linalg.svd(block, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0.0
    s = s[s >= 1e-12 * s[0]]
    return float(s[-1] ** 2)


@dataclass(frozen=True)
class BlockSpectralBounds:
    beta_max_rows: float
    beta_max_cols: float
    beta_min_rows: float

    @property
    def beta_max(self) -> float:
        return max(self.beta_max_rows, self.beta_max_cols)


def compute_spectral_bounds(
    matrix: DenseMatrix,
    row_partition: Partition,
    col_partition: Partition,
    with_min: bool = True,
) -> BlockSpectralBounds:
    """Block ratios ``sigma^2 / ||block||_F^2`` maximised (and minimised) over blocks.

    Zero blocks are ignored. ``beta_min_rows`` uses the smallest nonzero
    singular value (cutoff ``1e-12 * sigma_max``) and is computed with a
    dense SVD since it is only needed by theory checks; ``with_min=False``
    skips it and reports ``nan``.
    """
    for part, ext in ((row_partition, matrix.rows), (col_partition, matrix.cols)):
        if part.extent != ext:
            raise ValueError(f"{part.axis} partition covers {part.extent} indices, matrix has {ext}")

    def ratios(part: Partition):
        out_max, out_min = [], []
        for blk, fro in zip(part.blocks, part.block_frob_sq):
            if fro <= 0:
                continue
            sub = matrix.block(blk, part.axis)
            out_max.append(sigma_max_sq(sub) / fro)
            if with_min and part.axis == "rows":
                out_min.append(_sigma_min_nonzero_sq(sub) / fro)
        return out_max, out_min

    rmax, rmin = ratios(row_partition)
    cmax, _ = ratios(col_partition)
    return BlockSpectralBounds(
        beta_max_rows=max(rmax, default=0.0),
        beta_max_cols=max(cmax, default=0.0),
        beta_min_rows=min(rmin, default=0.0) if with_min else float("nan"),
    )


def save_matrix(path: str | PathLike, matrix) -> None:
    """Write ``rows cols`` then one space-separated row per line."""
    arr = matrix.data if isinstance(matrix, DenseMatrix) else np.atleast_2d(np.asarray(matrix, float))
    with open(path, "w") as fh:
        fh.write(f"{arr.shape[0]} {arr.shape[1]}\n")
        for row in arr:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


def load_matrix(path: str | PathLike) -> DenseMatrix:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: first line must be 'rows cols'")
        m, n = (int(t) for t in header)
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != m or any(len(r) != n for r in rows):
        raise ValueError(f"{path}: expected {m} rows of {n} values")
    return DenseMatrix(np.array(rows, dtype=np.float64).reshape(m, n))
