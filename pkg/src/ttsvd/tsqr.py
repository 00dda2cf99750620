"""Q-less, rank-preserving Householder TSQR for tall-skinny padded matrices.

The building block reduces a stacked ``[M; R]`` (``M`` is ``n_b x m``, ``R``
upper triangular) to a new triangular factor without forming ``Q``. Each
reflector uses ``n_b + 1`` rows. Breakdown for zero columns is avoided by
adding the smallest normalized double twice, so no branch on ``||u||`` is
needed and the scaled reflector always satisfies ``||v||^2 = 2``.

Rows are split into contiguous worker ranges; each worker runs a flat-tree
reduction over cache-sized blocks and the coordinator combines the worker
factors in ascending order.
"""
from __future__ import annotations

import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .counters import RunCounters
from .errors import DimensionError, DimensionMismatch
from .tensor import PaddedMatrix, padded_stride

EPS_FP = sys.float_info.min
L2_BUDGET = 256 * 1024
COLUMN_BLOCK = 8
DEBUG = bool(os.environ.get("TTSVD_DEBUG"))


def default_workers() -> int:
    env = os.environ.get("TTSVD_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def default_block_rows(m: int, budget: int = L2_BUDGET) -> int:
    """Largest multiple of 8 with ``(n_b + m) * m * 8 <= budget``, clamped to [16, 4096]."""
    nb = budget // (8 * m) - m
    nb -= nb % 8
    return int(min(max(nb, 16), 4096))


@dataclass(frozen=True)
class BlockParams:
    n_b: int | None = None
    eps_fp: float = EPS_FP
    l2_budget: int = L2_BUDGET

    def __post_init__(self):
        if self.n_b is not None and self.n_b < 1:
            raise ValueError("n_b must be positive")
        if not 0.0 < self.eps_fp <= 2.0**-1021:
            raise ValueError("eps_fp must lie in (0, 2^-1021]")

    def block_rows(self, m: int) -> int:
        return self.n_b if self.n_b is not None else default_block_rows(m, self.l2_budget)


# --------------------------------------------------------------------------
# compiled kernels

_FAST = {"reassoc", "contract"}

# Scratch matrices are flat column-major buffers with explicit leading
# dimensions: W holds the stacked [block; R] (ldw rows), U the unscaled
# reflectors u (ldu rows, one column each), beta the scalings v = beta * u.


# Kernels slice the flat buffers before looping: indexing a slice with a
# range variable lets LLVM drop the negative-index wraparound and vectorize.


@numba.njit(cache=True, nogil=True, fastmath=_FAST)
def _dot(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


@numba.njit(cache=True, nogil=True)
def _copy(dst, src):
    # explicit loop; numba's slice assignment is far slower
    for i in range(src.shape[0]):
        dst[i] = src[i]


@numba.njit(cache=True, nogil=True)
def _fill(dst, value):
    for i in range(dst.shape[0]):
        dst[i] = value


@numba.njit(cache=True, nogil=True, fastmath=_FAST)
def _apply(W, ldw, U, ldu, beta, nb, j, k):
    # W[j:j+nb+1, k] -= (v^T w) v
    n = nb + 1
    u = U[j * ldu : j * ldu + n]
    w = W[k * ldw + j : k * ldw + j + n]
    b = beta[j]
    g = b * (b * _dot(u, w))
    for i in range(n):
        w[i] -= g * u[i]


@numba.njit(cache=True, nogil=True, fastmath=_FAST)
def _apply4(W, ldw, U, ldu, beta, nb, j, k):
    # four columns per pass so u is loaded once per row
    n = nb + 1
    u = U[j * ldu : j * ldu + n]
    o = k * ldw + j
    w0 = W[o : o + n]
    w1 = W[o + ldw : o + ldw + n]
    w2 = W[o + 2 * ldw : o + 2 * ldw + n]
    w3 = W[o + 3 * ldw : o + 3 * ldw + n]
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    s3 = 0.0
    for i in range(n):
        ui = u[i]
        s0 += ui * w0[i]
        s1 += ui * w1[i]
        s2 += ui * w2[i]
        s3 += ui * w3[i]
    b = beta[j]
    g0 = b * (b * s0)
    g1 = b * (b * s1)
    g2 = b * (b * s2)
    g3 = b * (b * s3)
    for i in range(n):
        ui = u[i]
        w0[i] -= g0 * ui
        w1[i] -= g1 * ui
        w2[i] -= g2 * ui
        w3[i] -= g3 * ui


@numba.njit(cache=True, nogil=True)
def _apply_range(W, ldw, U, ldu, beta, nb, j, k0, k1):
    k = k0
    while k + 4 <= k1:
        _apply4(W, ldw, U, ldu, beta, nb, j, k)
        k += 4
    while k < k1:
        _apply(W, ldw, U, ldu, beta, nb, j, k)
        k += 1


@numba.njit(cache=True, nogil=True)
def _house(W, ldw, U, ldu, beta, vnorm2, nb, j, eps, debug):
    n = nb + 1
    w = W[j * ldw + j : j * ldw + j + n]
    u = U[j * ldu : j * ldu + n]
    t = _dot(w, w) + eps
    alpha = np.sqrt(t + eps)
    u1 = w[0]
    if u1 > 0.0:
        alpha = -alpha
    t = t - alpha * u1
    _copy(u, w)
    u[0] = u1 - alpha
    beta[j] = 1.0 / np.sqrt(t)
    if debug:
        vnorm2[j] = beta[j] * beta[j] * _dot(u, u)
    # finished entries of this column move below the block
    oc = j * ldw
    for i in range(j):
        W[oc + nb + i] = W[oc + i]
    W[oc + nb + j] = alpha


@numba.njit(cache=True, nogil=True)
def _factor_columns(W, ldw, U, ldu, beta, vnorm2, nb, c0, c1, eps, debug):
    # left-looking panels of COLUMN_BLOCK columns: the panel stays in cache
    # while earlier reflectors stream past it
    for p0 in range(c0, c1, 8):
        p1 = min(p0 + 8, c1)
        for j in range(c0, p0):
            _apply_range(W, ldw, U, ldu, beta, nb, j, p0, p1)
        for j in range(p0, p1):
            _house(W, ldw, U, ldu, beta, vnorm2, nb, j, eps, debug)
            _apply_range(W, ldw, U, ldu, beta, nb, j, j + 1, p1)


@numba.njit(cache=True, nogil=True)
def _reduce_into(X, ldx, r0, rows, R, W, ldw, U, ldu, beta, vnorm2, eps, debug):
    """R <- triangular factor of [X[r0:r0+rows, :]; R]; X is a flat column-major buffer."""
    m = R.shape[0]
    nb = max(rows, m)
    for j in range(m):
        ox = j * ldx + r0
        ow = j * ldw
        _copy(W[ow : ow + rows], X[ox : ox + rows])
        _fill(W[ow + rows : ow + nb], 0.0)
        for i in range(m):
            W[ow + nb + i] = R[i, j]
    _factor_columns(W, ldw, U, ldu, beta, vnorm2, nb, 0, m, eps, debug)
    for j in range(m):
        for i in range(m):
            R[i, j] = W[j * ldw + nb + i] if i <= j else 0.0
    return nb


@numba.njit(cache=True, nogil=True)
def _flat_tree(X, ldx, r0, r1, nb, R, W, ldw, U, ldu, beta, vnorm2, eps, debug):
    """Reduce rows [r0, r1) of X into R block by block; returns executed FMAs."""
    m = R.shape[0]
    fmas = 0
    b = r0
    while b < r1:
        rows = min(nb, r1 - b)
        nbe = _reduce_into(X, ldx, b, rows, R, W, ldw, U, ldu, beta, vnorm2, eps, debug)
        fmas += m * m * (nbe + 1)
        b += rows
    return fmas


class _Scratch:
    """Per-worker buffers for block reductions with up to ``nb`` rows."""

    def __init__(self, nb: int, m: int):
        nbe = max(nb, m)
        self.ldw = padded_stride(nbe + m)
        self.ldu = padded_stride(nbe + 1)
        self.W = np.zeros(self.ldw * m)
        self.U = np.zeros(self.ldu * m)
        self.beta = np.zeros(m)
        self.vnorm2 = np.zeros(m)

    @property
    def nbytes(self) -> int:
        return self.W.nbytes + self.U.nbytes + self.beta.nbytes + self.vnorm2.nbytes

    def reduce(self, X, ldx, r0, rows, R, eps, debug):
        return _reduce_into(X, ldx, r0, rows, R, self.W, self.ldw, self.U, self.ldu,
                            self.beta, self.vnorm2, eps, debug)

    def flat_tree(self, X, ldx, r0, r1, nb, R, eps, debug):
        return _flat_tree(X, ldx, r0, r1, nb, R, self.W, self.ldw, self.U, self.ldu,
                          self.beta, self.vnorm2, eps, debug)


def _scratch_bytes(nb: int, m: int) -> int:
    nbe = max(nb, m)
    return 8 * ((padded_stride(nbe + m) + padded_stride(nbe + 1)) * m + 2 * m) + 8 * m * m


def _flat_operand(X) -> tuple[np.ndarray, int, int, int]:
    """``(buffer, leading_dim, rows, cols)`` of a column-major matrix operand."""
    if isinstance(X, PaddedMatrix):
        return X.buffer, X.stride, X.rows, X.cols
    A = np.asarray(X, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {A.shape}")
    n, m = A.shape
    return np.asfortranarray(A).reshape(-1, order="F"), max(n, 1), n, m


# --------------------------------------------------------------------------
# public operations


def _check_triangular(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DimensionMismatch(f"triangular factor must be square, got {R.shape}")
    return R


def reduce_block(M, R, params: BlockParams | None = None, *, return_reflector_norms=False):
    """Triangular factor of the stacked ``[M; R]``; ``M`` and ``R`` are not modified.

    With ``return_reflector_norms`` the squared norms of the scaled Householder
    vectors are returned as well (they are 2 up to rounding).
    """
    params = params or BlockParams()
    buf, ld, rows, cols = _flat_operand(M)
    R = _check_triangular(R)
    m = R.shape[0]
    if cols != m:
        raise DimensionMismatch(f"block has {cols} columns, factor has {m}")
    out = np.array(R, order="F")
    scratch = _Scratch(rows, m)
    scratch.reduce(buf, ld, 0, rows, out, params.eps_fp, return_reflector_norms or DEBUG)
    if DEBUG:
        _assert_reflectors(scratch.vnorm2)
    if return_reflector_norms:
        return out, scratch.vnorm2.copy()
    return out


def _assert_reflectors(vnorm2):
    if not np.all(np.abs(vnorm2 - 2.0) <= 1e-12):
        raise AssertionError(f"invalid Householder reflector norms {vnorm2}")


def reduce_block_flops(n_b: int, m: int) -> int:
    """Flops executed by one block reduction (2 per FMA)."""
    return 2 * m * m * (max(n_b, m) + 1)


def combine_factors(parts, params: BlockParams | None = None, counters: RunCounters | None = None):
    """Fold triangular factors left to right: ``Rbar^T Rbar = sum R_i^T R_i``."""
    parts = [_check_triangular(p) for p in parts]
    if not parts:
        raise DimensionMismatch("no factors to combine")
    m = parts[0].shape[0]
    if any(p.shape[0] != m for p in parts):
        raise DimensionMismatch("factors have different sizes")
    if len(parts) == 1:
        return parts[0]
    params = params or BlockParams()
    acc = np.array(parts[0], order="F")
    scratch = _Scratch(m, m)
    for p in parts[1:]:
        scratch.reduce(np.asfortranarray(p).reshape(-1, order="F"), m, 0, m, acc, params.eps_fp, DEBUG)
        if counters is not None:
            counters.add(flops=reduce_block_flops(m, m))
    return acc


def worker_ranges(n: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(workers, n)) if n > 0 else 1
    base, extra = divmod(n, workers)
    out, start = [], 0
    for w in range(workers):
        stop = start + base + (1 if w < extra else 0)
        out.append((start, stop))
        start = stop
    return out


def tsqr(X, params: BlockParams | None = None, workers: int | None = None,
         counters: RunCounters | None = None, *, allow_wide: bool = False):
    """Q-less QR of a tall-skinny matrix; returns ``R`` with ``R^T R = X^T X``.

    ``X`` may be a :class:`PaddedMatrix` or a 2D array; it is read once.
    ``allow_wide`` accepts ``n < m`` (used for local slabs of a distributed
    matrix, where only the global row count must exceed ``m``).
    """
    buf, ld, n, m = _flat_operand(X)
    if m < 1:
        raise DimensionError("matrix has no columns")
    if n < m and not allow_wide:
        raise DimensionError(f"tsqr needs n >= m, got {n} x {m}")
    params = params or BlockParams()
    nb = params.block_rows(m)
    ranges = worker_ranges(n, workers or default_workers())
    eps = params.eps_fp

    def run(r):
        R = np.zeros((m, m), order="F")
        scratch = _Scratch(nb, m)
        fmas = scratch.flat_tree(buf, ld, r[0], r[1], nb, R, eps, DEBUG)
        if DEBUG:
            _assert_reflectors(scratch.vnorm2)
        return R, fmas

    if len(ranges) == 1:
        results = [run(ranges[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
            results = list(pool.map(run, ranges))
    if counters is not None:
        counters.add(flops=2 * sum(f for _, f in results), nbytes=8 * n * m)
        counters.note_scratch(len(ranges) * _scratch_bytes(nb, m))
    return combine_factors([R for R, _ in results], params, counters)


def tsqr_scratch_bytes(m: int, workers: int, params: BlockParams | None = None) -> int:
    params = params or BlockParams()
    return workers * _scratch_bytes(params.block_rows(m), m)
