"""Tall-skinny matrix product fused with the reshape into the next layout.

``tsmm_reshape`` computes ``Y = X V`` block by block and writes every block
straight to its column-major position in the reshaped output, so the product
is never materialized in its own n x k shape.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numba
import numpy as np

from .counters import RunCounters
from .errors import ShapeError
from .tensor import PaddedMatrix
from .tsqr import default_workers, worker_ranges

ROW_BLOCK = 512
_FAST = {"reassoc", "contract"}


@numba.njit(cache=True, nogil=True, fastmath=_FAST)
def _axpy_add(acc, v, x):
    for i in range(acc.shape[0]):
        acc[i] += v * x[i]


@numba.njit(cache=True, nogil=True)
def _tsmm_rows(X, ldx, n, r0, r1, V, Y, ldy, n_hat, acc):
    m, k = V.shape
    b = r0
    while b < r1:
        rows = min(acc.shape[0], r1 - b)
        a = acc[:rows]
        for c in range(k):
            for i in range(rows):
                a[i] = 0.0
            for j in range(m):
                _axpy_add(a, V[j, c], X[j * ldx + b : j * ldx + b + rows])
            # entry (b + i, c) of X V has column-major index c*n + b + i
            lin = c * n + b
            col = lin // n_hat
            row = lin - col * n_hat
            i = 0
            while i < rows:
                run = min(rows - i, n_hat - row)
                o = col * ldy + row
                for t in range(run):
                    Y[o + t] = a[i + t]
                i += run
                row = 0
                col += 1
        b += rows


def _as_padded(X) -> PaddedMatrix:
    if isinstance(X, PaddedMatrix):
        return X
    return PaddedMatrix.from_array(X)


def tsmm_reshape(X, V, out_shape, workers: int | None = None,
                 counters: RunCounters | None = None) -> PaddedMatrix:
    """``reshape(X @ V, out_shape)`` in column-major order, into a new padded matrix."""
    X = _as_padded(X)
    V = np.ascontiguousarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] != X.cols:
        raise ShapeError(f"cannot multiply {X.rows}x{X.cols} by {V.shape}")
    n, m = X.rows, X.cols
    k = V.shape[1]
    n_hat, m_hat = (int(s) for s in out_shape)
    if n_hat * m_hat != n * k:
        raise ShapeError(f"output shape {out_shape} does not hold {n}x{k} entries")
    Y = PaddedMatrix.zeros(n_hat, m_hat)
    ranges = worker_ranges(n, workers or default_workers())

    def run(r):
        acc = np.empty(min(ROW_BLOCK, max(r[1] - r[0], 1)))
        _tsmm_rows(X.buffer, X.stride, n, r[0], r[1], V, Y.buffer, Y.stride, n_hat, acc)

    if len(ranges) == 1:
        run(ranges[0])
    else:
        # workers write disjoint output addresses
        with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
            list(pool.map(run, ranges))
    if counters is not None:
        counters.add(flops=2 * n * m * k, nbytes=8 * n * (m + k))
    return Y


def transpose_reorder(W, split: int | None = None, out_rows: int | None = None,
                      counters: RunCounters | None = None) -> PaddedMatrix:
    """Transpose the column-major content of ``W`` viewed as ``split x (N/split)``.

    The result holds the transposed content laid out as ``out_rows x (N/out_rows)``.
    Defaults give the plain matrix transpose of ``W``.
    """
    W = _as_padded(W)
    N = W.rows * W.cols
    split = W.rows if split is None else int(split)
    if split < 1 or N % split:
        raise ShapeError(f"cannot split {N} entries into {split} rows")
    out_rows = N // split if out_rows is None else int(out_rows)
    if out_rows < 1 or N % out_rows:
        raise ShapeError(f"cannot lay out {N} entries in {out_rows} rows")
    A = W.flat().reshape(split, N // split, order="F")
    out = PaddedMatrix.zeros(out_rows, N // out_rows)
    out.array[...] = A.T.reshape(out_rows, N // out_rows, order="F")
    if counters is not None:
        counters.add(nbytes=16 * N)
    return out
