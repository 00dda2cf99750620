"""Tensor-train container, reconstruction, error and orthonormality checks, file I/O."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .tensor import DenseTensor


class TensorTrain:
    """Chain of 3D cores ``(r_{j-1}, n_j, r_j)`` with ``r_0 = r_d = 1``."""

    def __init__(self, cores):
        cores = [np.asfortranarray(np.asarray(c, dtype=np.float64)) for c in cores]
        if not cores:
            raise ShapeMismatch("a tensor train needs at least one core")
        for j, c in enumerate(cores):
            if c.ndim != 3 or min(c.shape) < 1:
                raise ShapeMismatch(f"core {j} has invalid shape {c.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ShapeMismatch("boundary ranks must be 1")
        for j in range(len(cores) - 1):
            if cores[j].shape[2] != cores[j + 1].shape[0]:
                raise ShapeMismatch(
                    f"rank mismatch between cores {j} and {j + 1}: "
                    f"{cores[j].shape[2]} != {cores[j + 1].shape[0]}"
                )
        self.cores = cores

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return (1,) + tuple(c.shape[2] for c in self.cores)

    def __len__(self):
        return self.d

    def __getitem__(self, j):
        return self.cores[j]

    def __repr__(self):
        return f"TensorTrain(dims={self.dims}, ranks={self.ranks})"


def tt_reconstruct(tt: TensorTrain) -> DenseTensor:
    """Dense tensor from left-to-right contraction of the cores."""
    out = DenseTensor.zeros(tt.dims)
    M = tt.cores[0].reshape(tt.dims[0], -1, order="F")
    for core in tt.cores[1:]:
        r, n, r2 = core.shape
        M = (M @ core.reshape(r, n * r2, order="F")).reshape(-1, r2, order="F")
    out.matrix[...] = M.reshape(out.matrix.shape, order="F")
    return out


def _as_array(X) -> np.ndarray:
    if isinstance(X, DenseTensor):
        return X.to_array()
    return np.asarray(X, dtype=np.float64)


def tt_error(X, tt: TensorTrain) -> float:
    """Relative Frobenius error ``||X - tt|| / ||X||``."""
    A = _as_array(X)
    if A.shape != tt.dims:
        raise ShapeMismatch(f"tensor shape {A.shape} differs from train dims {tt.dims}")
    B = tt_reconstruct(tt).to_array()
    norm = np.linalg.norm(A)
    diff = np.linalg.norm(A - B)
    if norm == 0:
        return 0.0 if diff == 0 else float("inf")
    return float(diff / norm)


def check_orthonormality(tt: TensorTrain, excluded: int) -> float:
    """Max Gram deviation over all cores but ``excluded``.

    Cores left of ``excluded`` are checked as left-orthonormal (``(r n) x r'``
    columns), cores right of it as right-orthonormal (``r x (n r')`` rows).
    """
    if not 0 <= excluded < tt.d:
        raise ShapeMismatch(f"core index {excluded} out of range for d={tt.d}")
    worst = 0.0
    for j, c in enumerate(tt.cores):
        r, n, r2 = c.shape
        if j < excluded:
            G = c.reshape(r * n, r2, order="F")
            dev = np.linalg.norm(G.T @ G - np.eye(r2))
        elif j > excluded:
            G = c.reshape(r, n * r2, order="F")
            dev = np.linalg.norm(G @ G.T - np.eye(r))
        else:
            continue
        worst = max(worst, float(dev))
    return worst


def save_tt(tt: TensorTrain, path) -> None:
    """int64 header ``(d, r_0..r_d, n_1..n_d)`` then the cores, column-major little-endian doubles."""
    header = np.array([tt.d, *tt.ranks, *tt.dims], dtype="<i8")
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        for c in tt.cores:
            fh.write(c.ravel(order="F").astype("<f8").tobytes())


def load_tt(path) -> TensorTrain:
    raw = Path(path).read_bytes()
    d = int(np.frombuffer(raw, dtype="<i8", count=1)[0])
    header = np.frombuffer(raw, dtype="<i8", count=1 + (d + 1) + d)
    ranks = [int(v) for v in header[1 : d + 2]]
    dims = [int(v) for v in header[d + 2 :]]
    offset = header.nbytes
    cores = []
    for j in range(d):
        shape = (ranks[j], dims[j], ranks[j + 1])
        count = int(np.prod(shape))
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        cores.append(data.reshape(shape, order="F").copy(order="F"))
        offset += 8 * count
    if offset != len(raw):
        raise ShapeMismatch(f"trailing data in {path}")
    return TensorTrain(cores)
