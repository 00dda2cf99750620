"""Small dense SVD via one-sided Jacobi, rank selection and the global tolerance.

The same Jacobi routine serves the m x m triangular factors of the optimized
path and the tall matricizations of the reference path.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConvergenceError, DegenerateDimension

EPS_MACH = np.finfo(np.float64).eps
MAX_SWEEPS = 30
UNBOUNDED = sys.maxsize


@dataclass(frozen=True)
class SmallSVD:
    U_bar: np.ndarray
    sigma: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class TruncationSpec:
    """``r_max`` (``math.inf`` or ``None`` for uncapped), tolerance ``eps`` and
    optionally a precomputed ``delta``; drivers derive ``delta`` otherwise."""

    r_max: int = UNBOUNDED
    eps: float = 0.0
    delta: float | None = None

    def __post_init__(self):
        r = self.r_max
        if r is None or (isinstance(r, float) and math.isinf(r)):
            r = UNBOUNDED
        r = int(r)
        if r < 1:
            raise ValueError(f"r_max must be >= 1, got {self.r_max}")
        object.__setattr__(self, "r_max", r)
        if not self.eps >= 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        if self.delta is not None and not self.delta >= 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")

    @property
    def capped(self) -> bool:
        return self.r_max != UNBOUNDED

    def with_delta(self, delta: float) -> TruncationSpec:
        return TruncationSpec(self.r_max, self.eps, float(delta))


@numba.njit(cache=True, nogil=True)
def _jacobi_sweeps(A, V, tol, small, max_sweeps):
    # Hestenes rotations on the columns of A (in place), accumulated in V.
    # Columns with norm below ``small`` sit at the rounding floor and are not
    # rotated; their residual direction is noise. Returns the number of sweeps
    # used, or -1 without convergence.
    n, m = A.shape
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(m - 1):
            for q in range(p + 1, m):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(n):
                    ap = A[i, p]
                    aq = A[i, q]
                    alpha += ap * ap
                    beta += aq * aq
                    gamma += ap * aq
                na = math.sqrt(alpha)
                nb = math.sqrt(beta)
                if gamma == 0.0 or na <= small or nb <= small or abs(gamma) <= tol * na * nb:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = 1.0 / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                if zeta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for i in range(n):
                    ap = A[i, p]
                    aq = A[i, q]
                    A[i, p] = c * ap - s * aq
                    A[i, q] = s * ap + c * aq
                for i in range(m):
                    vp = V[i, p]
                    vq = V[i, q]
                    V[i, p] = c * vp - s * vq
                    V[i, q] = s * vp + c * vq
        if not rotated:
            return sweep + 1
    return -1


def _complete_columns(U: np.ndarray, keep: int) -> np.ndarray:
    """Replace columns ``keep:`` of the orthonormal-prefix ``U`` by an orthonormal completion."""
    n, k = U.shape
    if keep >= k:
        return U
    rng = np.random.default_rng(0)
    fill = np.hstack([U[:, :keep], rng.standard_normal((n, k - keep))])
    Q, _ = np.linalg.qr(fill)
    out = U.copy()
    out[:, keep:] = Q[:, keep:]
    return out


def _tall_jacobi(A: np.ndarray, max_sweeps: int):
    n, m = A.shape
    work = np.array(A, dtype=np.float64, order="F")
    V = np.eye(m, order="F")
    # rounding in the Gram entries grows like sqrt(n) for long columns
    tol = max(1e2, math.sqrt(n)) * EPS_MACH
    small = EPS_MACH * np.linalg.norm(work)
    if m > 1 and _jacobi_sweeps(work, V, tol, small, max_sweeps) < 0:
        raise ConvergenceError(f"one-sided Jacobi did not converge in {max_sweeps} sweeps")
    sigma = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    V = V[:, order]
    return work, sigma, V


def jacobi_svd(A, max_sweeps: int = MAX_SWEEPS):
    """Thin SVD ``A = U diag(sigma) V^T`` with ``k = min(n, m)`` singular values.

    Returns ``(U, sigma, V, US)`` where ``US = U diag(sigma)`` is formed without
    dividing by small singular values.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("expected a matrix")
    if not np.all(np.isfinite(A)):
        raise ConvergenceError("input contains non-finite entries")
    amax = np.max(np.abs(A)) if A.size else 0.0
    # entries this small cannot move any singular value at double precision,
    # but their squares are subnormal and slow every sweep down
    A = np.where(np.abs(A) < EPS_MACH * EPS_MACH * amax, 0.0, A)
    n, m = A.shape
    if n >= m:
        US, sigma, V = _tall_jacobi(A, max_sweeps)
        U = _normalize(US, sigma)
    else:
        VS, sigma, U = _tall_jacobi(A.T, max_sweeps)
        V = _normalize(VS, sigma)
        U = np.ascontiguousarray(U)
        US = U * sigma
    return U, sigma, V, US


def _normalize(XS: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    k = sigma.shape[0]
    floor = sigma[0] * max(XS.shape) * EPS_MACH if k else 0.0
    keep = int(np.count_nonzero(sigma > floor)) if sigma.size and sigma[0] > 0 else 0
    U = np.zeros_like(XS)
    U[:, :keep] = XS[:, :keep] / sigma[:keep]
    return _complete_columns(U, keep)


def small_svd(R) -> SmallSVD:
    """SVD of a small factor, ``R = U_bar diag(sigma) V^T``.

    ``R`` is square, or the leading ``k < m`` rows of a triangular factor of a
    matrix with only ``k`` rows; then ``U_bar`` is ``k x k`` and ``V`` is ``m x k``.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] > R.shape[1]:
        raise ValueError(f"expected a square or wide factor, got {R.shape}")
    if R.shape[1] > 4096:
        raise ValueError("small_svd handles factors up to 4096 x 4096")
    U, sigma, V, _ = jacobi_svd(R)
    return SmallSVD(U, sigma, V)


def select_rank(sigma, delta: float, r_max: int) -> int:
    """``min(r_max, r_delta)`` with ``r_delta`` the shortest prefix whose tail has
    squared sum ``<= delta^2``; at least 1."""
    s = np.asarray(sigma, dtype=np.float64)
    sq = s * s
    # tail[j] = sum_{l >= j} sigma_l^2, with tail[len] = 0
    tail = np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]])
    r_delta = int(np.argmax(tail <= delta * delta))
    return max(1, min(int(r_max), r_delta))


def derive_delta(norm_source: float, eps: float, d: int) -> float:
    """``eps / sqrt(d - 1) * norm_source``."""
    if d < 2:
        raise DegenerateDimension(f"need at least two dimensions, got d={d}")
    return eps / math.sqrt(d - 1) * float(norm_source)


def numerical_rank(sigma, rows: int, cols: int) -> int:
    """Count of singular values above ``sigma_1 * max(rows, cols) * eps_mach``."""
    s = np.asarray(sigma)
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.count_nonzero(s > s[0] * max(rows, cols) * EPS_MACH))
