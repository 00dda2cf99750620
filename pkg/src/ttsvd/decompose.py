"""TT-SVD drivers: reference, TSQR-based, thick-bounds, two-sided and distributed."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .counters import RunCounters, maybe_phase
from .errors import DegenerateDimension, PartitionMismatch
from .small_dense import (
    UNBOUNDED,
    TruncationSpec,
    derive_delta,
    jacobi_svd,
    numerical_rank,
    select_rank,
    small_svd,
)
from .tensor import DenseTensor, PaddedMatrix, reshape_copy, reshape_view
from .train import TensorTrain
from .tsmm import transpose_reorder, tsmm_reshape
from .tsqr import combine_factors, default_workers, tsqr


@dataclass(frozen=True)
class ThickBoundsParams:
    """Selection of the trailing dimensions merged in the first step.

    ``r_tilde`` is either a constant or a sequence ``r~_0..r~_d`` indexed by
    split position; ``None`` uses ``min(r_max, rank cap of the split)``.
    """

    m_min: int = 16
    f1_min: float = 0.5
    r_tilde: int | tuple | None = None

    def __post_init__(self):
        if self.m_min < 1:
            raise ValueError("m_min must be >= 1")
        if not 0.0 < self.f1_min <= 1.0:
            raise ValueError("f1_min must lie in (0, 1]")
        if isinstance(self.r_tilde, list):
            object.__setattr__(self, "r_tilde", tuple(self.r_tilde))

    def estimated_rank(self, split: int, dims, r_max: int) -> float:
        if self.r_tilde is None:
            return min(r_max, math.prod(dims[:split]), math.prod(dims[split:]))
        if isinstance(self.r_tilde, tuple):
            return self.r_tilde[split]
        return self.r_tilde


def choose_combined_dims(shape, params: ThickBoundsParams, r_max: int = UNBOUNDED) -> tuple[int, int]:
    """Smallest ``k`` whose trailing product ``m`` satisfies ``m >= max(m_min, r~/f1_min)``."""
    dims = tuple(int(n) for n in shape)
    d = len(dims)
    if d < 2:
        raise DegenerateDimension(f"need at least two dimensions, got {dims}")
    for k in range(1, d):
        m = math.prod(dims[d - k :])
        r_est = params.estimated_rank(d - k, dims, r_max)
        if m >= max(params.m_min, r_est / params.f1_min):
            return k, m
    return d - 1, math.prod(dims[1:])


# --------------------------------------------------------------------------
# shared pieces


class _Truncation:
    """Rank rule of one run; ``delta`` is fixed by the first singular values seen."""

    def __init__(self, spec: TruncationSpec, d: int):
        self.r_max = spec.r_max
        self.eps = spec.eps
        self.d = d
        self.delta = spec.delta

    def ensure_delta(self, sigma) -> None:
        if self.delta is None:
            self.delta = derive_delta(np.linalg.norm(sigma), self.eps, self.d)

    def rank(self, sigma, rows: int, cols: int, truncate: bool = True) -> int:
        r = select_rank(sigma, self.delta, self.r_max) if truncate else len(sigma)
        r = min(r, numerical_rank(sigma, rows, cols), rows, cols)
        return max(r, 1)


def _as_tensor(X) -> DenseTensor:
    if isinstance(X, DenseTensor):
        return X
    return DenseTensor.from_array(X)


def _check_d(dims) -> int:
    if len(dims) < 2:
        raise DegenerateDimension(f"need at least two dimensions, got {dims}")
    return len(dims)


def _svd_of_factor(R, rows: int):
    # a matrix with fewer rows than columns has only `rows` nonzero rows in R
    return small_svd(R[:rows] if rows < R.shape[0] else R)


def _qr_svd(W, workers, counters):
    with maybe_phase(counters, "tsqr"):
        R = tsqr(W, workers=workers, counters=counters, allow_wide=True)
    with maybe_phase(counters, "small-svd"):
        s = _svd_of_factor(R, W.rows)
    return R, s


def _core_from_vt(V, r_left, n, r_right):
    return np.asfortranarray(V.T.reshape(r_left, n, r_right, order="F"))


def _right_sweep(W: PaddedMatrix, dims, r, trunc: _Truncation, workers, counters):
    """Steps for modes ``len(dims)..2`` on ``W`` holding ``(n_1..n_p, r)``; returns all p cores."""
    cores = []
    for i in range(len(dims) - 1, 0, -1):
        if counters is not None:
            counters.begin_step(i + 1)
        _, s = _qr_svd(W, workers, counters)
        trunc.ensure_delta(s.sigma)
        r_new = trunc.rank(s.sigma, W.rows, W.cols)
        if counters is not None:
            counters.set_rank(r_new)
        V = s.V[:, :r_new]
        cores.append(_core_from_vt(V, r_new, dims[i], r))
        with maybe_phase(counters, "tsmm"):
            Y = tsmm_reshape(W, V, (W.rows // dims[i - 1], dims[i - 1] * r_new), workers, counters)
        # the work array shrinks by f = r_new / (n_i r)
        assert Y.rows * Y.cols * dims[i] * r == W.rows * W.cols * r_new
        W, r = Y, r_new
    cores.append(np.asfortranarray(W.flat().reshape(1, dims[0], r, order="F")))
    return cores[::-1]


# --------------------------------------------------------------------------
# reference


def tt_svd_reference(X, spec: TruncationSpec, counters: RunCounters | None = None) -> TensorTrain:
    """Plain TT-SVD with a one-sided Jacobi SVD of every tall matricization."""
    A = X.to_array() if isinstance(X, DenseTensor) else np.asarray(X, dtype=np.float64)
    dims = A.shape
    d = _check_d(dims)
    trunc = _Truncation(spec, d)
    if trunc.delta is None:
        trunc.delta = derive_delta(np.linalg.norm(A), spec.eps, d)
    W = A.reshape(-1, dims[-1], order="F")
    r = 1
    cores = []
    for i in range(d - 1, 0, -1):
        if counters is not None:
            counters.begin_step(i + 1)
        with maybe_phase(counters, "svd"):
            _, sigma, V, US = jacobi_svd(W)
        r_new = trunc.rank(sigma, *W.shape)
        if counters is not None:
            counters.set_rank(r_new)
        cores.append(_core_from_vt(V[:, :r_new], r_new, dims[i], r))
        with maybe_phase(counters, "update"):
            W = US[:, :r_new].reshape(-1, dims[i - 1] * r_new, order="F")
        r = r_new
    cores.append(np.asfortranarray(W.reshape(1, dims[0], r, order="F")))
    return TensorTrain(cores[::-1])


# --------------------------------------------------------------------------
# optimized


def tt_svd_tsqr(X, spec: TruncationSpec, workers: int | None = None,
                counters: RunCounters | None = None) -> TensorTrain:
    """TT-SVD with Q-less TSQR, a small SVD per step and the fused TSMM update."""
    X = _as_tensor(X)
    dims = X.dims
    d = _check_d(dims)
    workers = workers or default_workers()
    W = _leading_matrix(X, d - 1, counters)
    cores = _right_sweep(W, dims, 1, _Truncation(spec, d), workers, counters)
    return TensorTrain(cores)


def _leading_matrix(X: DenseTensor, split: int, counters) -> PaddedMatrix:
    """``(n_1..n_split) x rest`` matricization; a view when the layout allows it."""
    if X.split == split or math.prod(X.dims[min(split, X.split) : max(split, X.split)]) == 1:
        return reshape_view(X, split)
    with maybe_phase(counters, "reorder"):
        W = reshape_copy(X, split)
        if counters is not None:
            counters.add(nbytes=16 * X.size)
    return W


def _small_sweep(B: PaddedMatrix, G: PaddedMatrix, dims, trunc, workers):
    """Right-to-left steps over ``dims[2:]`` of the small tensor ``B``.

    ``G`` is contracted with the same right singular vectors. Returns the
    cores for ``dims[2:]`` (left to right), the contracted ``G`` holding
    ``(dims[0], dims[1], r)`` and that rank ``r``.
    """
    cores = []
    r = 1
    for i in range(len(dims) - 1, 1, -1):
        _, s = _qr_svd(B, workers, None)
        r_new = trunc.rank(s.sigma, B.rows, B.cols)
        V = s.V[:, :r_new]
        cores.append(_core_from_vt(V, r_new, dims[i], r))
        shape = (B.rows // dims[i - 1], dims[i - 1] * r_new)
        B = tsmm_reshape(B, V, shape, workers)
        G = tsmm_reshape(G, V, shape, workers)
        r = r_new
    return cores[::-1], G, r


def _thick_first_step(X: DenseTensor, k: int, trunc: _Truncation, workers, counters, out_cols_mode=True):
    """First step on the ``(nbar/m) x m`` matricization with the last ``k`` modes merged.

    Returns the cores of the last ``k`` modes, the next work matrix holding
    ``(n_1..n_p, r)`` with ``p = d - k`` and the rank ``r`` of split ``p``.
    With ``out_cols_mode`` the work matrix is laid out for a right step on
    mode ``p``, otherwise as ``(n_1..n_p) x r``.
    """
    dims = X.dims
    d = len(dims)
    p = d - k
    m = math.prod(dims[p:])
    if counters is not None:
        counters.begin_step(d)
    Wx = _leading_matrix(X, p, counters)
    R, s = _qr_svd(Wx, workers, counters)
    trunc.ensure_delta(s.sigma)
    r = trunc.rank(s.sigma, Wx.rows, m)
    Vr = s.V[:, :r]
    with maybe_phase(counters, "small-svd"):
        # B = Sigma_r V_r^T as a tensor (r, n_{p+1}, ..., n_d), split before its last mode
        small = (r, *dims[p:])
        B = Vr.T * s.sigma[:r, None]
        Bm = PaddedMatrix.from_array(B.reshape(-1, dims[-1], order="F"))
        Gm = PaddedMatrix.from_array(Vr.T.reshape(-1, dims[-1], order="F"))
        right, G, r_right = _small_sweep(Bm, Gm, small, trunc, workers)
        # M = V_r V_r^T K^T with K the orthonormal chain of the recovered cores
        M = Vr @ G.flat().reshape(r, -1, order="F")
        Z = R @ M
        Rz = tsqr(Z, workers=1, allow_wide=True)
        sz = _svd_of_factor(Rz, Z.shape[0])
        r2 = trunc.rank(sz.sigma, Wx.rows, Z.shape[1], truncate=False)
        r2 = min(r2, r)
        V2 = sz.V[:, :r2]
        core = _core_from_vt(V2, r2, dims[p], r_right)
        Mfinal = M @ V2
    if counters is not None:
        counters.set_rank(r2)
    if out_cols_mode and p > 1:
        shape = (Wx.rows // dims[p - 1], dims[p - 1] * r2)
    else:
        shape = (Wx.rows, r2)
    with maybe_phase(counters, "tsmm"):
        W = tsmm_reshape(Wx, Mfinal, shape, workers, counters)
    return [core] + right, W, r2


def tt_svd_thick_bounds(X, spec: TruncationSpec, params: ThickBoundsParams | None = None,
                        workers: int | None = None, counters: RunCounters | None = None) -> TensorTrain:
    """TT-SVD whose first step merges the trailing dimensions chosen by :func:`choose_combined_dims`."""
    X = _as_tensor(X)
    dims = X.dims
    d = _check_d(dims)
    params = params or ThickBoundsParams()
    k, _ = choose_combined_dims(dims, params, spec.r_max)
    if k == 1:
        return tt_svd_tsqr(X, spec, workers, counters)
    workers = workers or default_workers()
    trunc = _Truncation(spec, d)
    right, W, r = _thick_first_step(X, k, trunc, workers, counters)
    left = _right_sweep(W, dims[: d - k], r, trunc, workers, counters)
    return TensorTrain(left + right)


# --------------------------------------------------------------------------
# two-sided


def tt_svd_two_sided(X, spec: TruncationSpec, params: ThickBoundsParams | None = None,
                     workers: int | None = None, counters: RunCounters | None = None) -> TensorTrain:
    """Cores alternately from the right and the left end, meeting in the middle.

    Right steps build cores from ``V^T`` (right-orthonormal), left steps from
    ``V`` on the transposed matricization (left-orthonormal). With ``params``
    the first right step merges trailing dimensions as in the thick-bounds variant.
    """
    X = _as_tensor(X)
    dims = X.dims
    d = _check_d(dims)
    workers = workers or default_workers()
    trunc = _Truncation(spec, d)
    left_cores, right_cores = [], []

    k = 1
    if params is not None:
        k, _ = choose_combined_dims(dims, params, spec.r_max)
    if k > 1:
        right_cores, Wbar, r_right = _thick_first_step(X, k, trunc, workers, counters, out_cols_mode=False)
        a, b = 0, d - k
        last = "R"
    else:
        Wbar = _leading_matrix(X, d - 1, counters)
        a, b = 0, d
        r_right = 1
        last = None
    r_left = 1
    step = 0
    # Wbar holds the current work tensor; after a right step in the order
    # (r_left, n_a..n_{b-1}, r_right), after a left step as (n_a..n_{b-1}, r_right, r_left)
    while b - a > 1:
        side = "L" if last == "R" else "R"
        step += 1
        inner = math.prod(dims[a + 1 : b - 1]) if b - a > 2 else 1
        if counters is not None:
            counters.begin_step(b if side == "R" else a + 1)
        if side == "R":
            if last is None:
                W = Wbar
            else:
                rows = r_left * dims[a] * inner
                with maybe_phase(counters, "reorder"):
                    W = transpose_reorder(Wbar, split=Wbar.rows * Wbar.cols // r_left,
                                          out_rows=rows, counters=counters)
            _, s = _qr_svd(W, workers, counters)
            trunc.ensure_delta(s.sigma)
            r_new = trunc.rank(s.sigma, W.rows, W.cols)
            V = s.V[:, :r_new]
            right_cores.insert(0, _core_from_vt(V, r_new, dims[b - 1], r_right))
            with maybe_phase(counters, "tsmm"):
                Wbar = tsmm_reshape(W, V, (W.rows, r_new), workers, counters)
            r_right = r_new
            b -= 1
        else:
            rest = inner * dims[b - 1] * r_right
            with maybe_phase(counters, "reorder"):
                W = transpose_reorder(Wbar, split=r_left * dims[a], out_rows=rest, counters=counters)
            _, s = _qr_svd(W, workers, counters)
            trunc.ensure_delta(s.sigma)
            r_new = trunc.rank(s.sigma, W.rows, W.cols)
            V = s.V[:, :r_new]
            left_cores.append(np.asfortranarray(V.reshape(r_left, dims[a], r_new, order="F")))
            with maybe_phase(counters, "tsmm"):
                Wbar = tsmm_reshape(W, V, (W.rows, r_new), workers, counters)
            r_left = r_new
            a += 1
        if counters is not None:
            counters.set_rank(r_new)
        last = side

    n = dims[a]
    content = Wbar.flat()
    if last == "L":
        middle = content.reshape(n * r_right, r_left, order="F").T
    else:
        middle = content
    middle = np.asfortranarray(middle.reshape(r_left, n, r_right, order="F"))
    return TensorTrain(left_cores + [middle] + right_cores)


# --------------------------------------------------------------------------
# distributed


def split_leading(X, parts: int) -> list[DenseTensor]:
    """Slabs of ``X`` along its first mode, as equal as possible."""
    A = X.to_array() if isinstance(X, DenseTensor) else np.asarray(X, dtype=np.float64)
    n1 = A.shape[0]
    if not 1 <= parts <= n1:
        raise PartitionMismatch(f"cannot split leading extent {n1} into {parts} partitions")
    bounds = np.linspace(0, n1, parts + 1).round().astype(int)
    return [DenseTensor.from_array(A[bounds[i] : bounds[i + 1]]) for i in range(parts)]


def concat_leading(parts) -> DenseTensor:
    arrays = [p.to_array() if isinstance(p, DenseTensor) else np.asarray(p) for p in parts]
    return DenseTensor.from_array(np.concatenate(arrays, axis=0))


class _Partition:
    """In-process stand-in for one rank of a distributed run."""

    def __init__(self, index: int, slab: DenseTensor, workers: int):
        self.index = index
        self.dims = slab.dims
        self.workers = workers
        self.W = reshape_view(slab, len(slab.dims) - 1)
        self.cores = []
        self.svd = None

    def local_factor(self):
        c = RunCounters()
        R = tsqr(self.W, workers=self.workers, counters=c, allow_wide=True)
        return R, c.flops, c.bytes

    def small_svd(self, R, rows):
        # duplicated on every partition; identical input gives identical output
        self.svd = _svd_of_factor(R, rows)
        return self.svd

    def update(self, r_new, i, r):
        V = self.svd.V[:, :r_new]
        n_i, n_prev = self.dims[i], self.dims[i - 1]
        self.cores.append(_core_from_vt(V, r_new, n_i, r))
        c = RunCounters()
        self.W = tsmm_reshape(self.W, V, (self.W.rows // n_prev, n_prev * r_new), self.workers, c)
        return c.flops, c.bytes

    def first_core(self, r):
        return np.asfortranarray(self.W.flat().reshape(1, self.dims[0], r, order="F"))


def run_distributed(partitions, spec: TruncationSpec, workers: int | None = None,
                    counters: RunCounters | None = None) -> list[TensorTrain]:
    """Per-partition tensor trains of a TT-SVD distributed along the first mode.

    Partition ``k`` returns the train of its slab: its own slice of the first
    core followed by the shared cores, which every partition computes
    redundantly from the globally combined triangular factor.
    """
    slabs = [_as_tensor(p) for p in partitions]
    if not slabs:
        raise PartitionMismatch("no partitions")
    trailing = slabs[0].dims[1:]
    if any(s.dims[1:] != trailing for s in slabs):
        raise PartitionMismatch("partitions differ in their trailing shape")
    dims = (sum(s.dims[0] for s in slabs), *trailing)
    d = _check_d(dims)
    P = len(slabs)
    total = workers or default_workers()
    per = max(1, total // P)
    parts = [_Partition(i, s, per) for i, s in enumerate(slabs)]
    trunc = _Truncation(spec, d)
    rows = math.prod(dims[:-1])
    r = 1
    with ThreadPoolExecutor(max_workers=P) as pool:
        for i in range(d - 1, 0, -1):
            if counters is not None:
                counters.begin_step(i + 1)
            with maybe_phase(counters, "tsqr"):
                local = list(pool.map(lambda q: q.local_factor(), parts))
                R = combine_factors([x[0] for x in local], counters=counters)
                if counters is not None:
                    counters.add(flops=sum(x[1] for x in local), nbytes=sum(x[2] for x in local))
            with maybe_phase(counters, "small-svd"):
                svds = list(pool.map(lambda q: q.small_svd(R, rows), parts))
            sigma = svds[0].sigma
            trunc.ensure_delta(sigma)
            cols = dims[i] * r
            r_new = trunc.rank(sigma, rows, cols)
            if counters is not None:
                counters.set_rank(r_new)
            with maybe_phase(counters, "tsmm"):
                tallies = list(pool.map(lambda q: q.update(r_new, i, r), parts))
                if counters is not None:
                    counters.add(flops=sum(t[0] for t in tallies), nbytes=sum(t[1] for t in tallies))
            rows = rows // dims[i - 1]
            r = r_new
    return [TensorTrain([q.first_core(r)] + q.cores[::-1]) for q in parts]


def tt_svd_distributed(partitions, spec: TruncationSpec, workers: int | None = None,
                       counters: RunCounters | None = None) -> TensorTrain:
    """Distributed TT-SVD over slabs of the first mode; gathers the first core."""
    local = run_distributed(partitions, spec, workers, counters)
    first = np.concatenate([tt.cores[0] for tt in local], axis=1)
    return TensorTrain([first] + local[0].cores[1:])
