"""Dense tensor and padded tall-skinny matrix storage.

All matrices are column-major. Column strides are padded to an odd multiple
of 64 elements so that neighbouring columns never map to the same cache sets
when extents are powers of two.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AllocationError, LayoutError

PAD_QUANTUM = 64
MAX_ELEMENTS = 2**40
_DTYPE = np.dtype("<f8")


def _default_budget() -> int:
    env = os.environ.get("TTSVD_MEMORY_BUDGET")
    if env:
        return int(float(env))
    try:
        phys = os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        phys = 8 * 2**30
    return int(0.75 * phys)


#: Upper bound in bytes for a single buffer allocation.
memory_budget = _default_budget()


def padded_stride(n_rows: int) -> int:
    """Smallest ``s >= n_rows`` with ``s == 64 * (2*l + 1)``."""
    if n_rows < 1:
        raise ValueError(f"n_rows must be positive, got {n_rows}")
    blocks = -(-n_rows // PAD_QUANTUM)
    if blocks % 2 == 0:
        blocks += 1
    return blocks * PAD_QUANTUM


def is_padded(stride: int) -> bool:
    return stride % PAD_QUANTUM == 0 and (stride // PAD_QUANTUM) % 2 == 1


def allocate(n_elements: int) -> np.ndarray:
    """Zero-filled double buffer, checked against the index range and budget."""
    if n_elements > MAX_ELEMENTS:
        raise AllocationError(f"{n_elements} elements exceed the supported range 2^40")
    nbytes = n_elements * _DTYPE.itemsize
    if nbytes > memory_budget:
        raise AllocationError(
            f"buffer of {nbytes / 2**30:.2f} GiB exceeds memory budget "
            f"{memory_budget / 2**30:.2f} GiB"
        )
    return np.zeros(n_elements, dtype=np.float64)


def _product(dims) -> int:
    return math.prod(int(n) for n in dims)


def check_dims(dims) -> tuple[int, ...]:
    dims = tuple(int(n) for n in dims)
    if len(dims) < 1:
        raise ValueError("a tensor needs at least one dimension")
    if any(n < 1 for n in dims):
        raise ValueError(f"all extents must be positive, got {dims}")
    if _product(dims) > MAX_ELEMENTS:
        raise AllocationError(f"shape {dims} exceeds the supported range 2^40")
    return dims


@dataclass
class PaddedMatrix:
    """Column-major ``rows x cols`` matrix; element (i, j) at ``j*stride + i``."""

    rows: int
    cols: int
    stride: int
    buffer: np.ndarray

    def __post_init__(self):
        if self.stride < self.rows:
            raise LayoutError(f"stride {self.stride} < rows {self.rows}")
        if not is_padded(self.stride):
            raise LayoutError(f"stride {self.stride} is not an odd multiple of {PAD_QUANTUM}")
        if self.buffer.size < self.stride * (self.cols - 1) + self.rows:
            raise LayoutError("buffer too small for the requested shape")

    @classmethod
    def zeros(cls, rows: int, cols: int) -> PaddedMatrix:
        stride = padded_stride(rows)
        return cls(rows, cols, stride, allocate(stride * cols))

    @classmethod
    def from_array(cls, a) -> PaddedMatrix:
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("expected a 2D array")
        out = cls.zeros(*a.shape)
        out.array[...] = a
        return out

    @property
    def array(self) -> np.ndarray:
        """Strided ndarray view of the logical entries (shares memory)."""
        full = self.buffer[: self.stride * self.cols].reshape(self.cols, self.stride)
        return full[:, : self.rows].T

    def copy(self) -> PaddedMatrix:
        return PaddedMatrix(self.rows, self.cols, self.stride, self.buffer.copy())

    def flat(self) -> np.ndarray:
        """Logical entries in column-major order (copy)."""
        return self.array.ravel(order="F")


def _default_split(dims) -> int:
    return max(len(dims) - 1, 1)


class DenseTensor:
    """d-dimensional double tensor in Fortran order with a padded column stride.

    The buffer holds the ``(n_1...n_s) x (n_{s+1}...n_d)`` matricization as a
    padded column-major matrix, where ``s = split`` defaults to ``d - 1``;
    padding slots are zero. The logical content never depends on ``split``.
    """

    def __init__(self, dims, buffer: np.ndarray, leading_stride: int, split: int | None = None):
        self.dims = check_dims(dims)
        self.split = _default_split(self.dims) if split is None else int(split)
        if not 1 <= self.split <= max(len(self.dims) - 1, 1):
            raise LayoutError(f"invalid split {self.split} for {self.dims}")
        self.buffer = buffer
        self.leading_stride = int(leading_stride)
        rows, cols = self._natural_split()
        if self.leading_stride < rows or not is_padded(self.leading_stride):
            raise LayoutError(f"invalid leading stride {self.leading_stride} for {self.dims}")
        if buffer.size < self.leading_stride * cols:
            raise LayoutError("buffer too small for tensor")

    def _natural_split(self) -> tuple[int, int]:
        if len(self.dims) == 1:
            # a single padded column rather than one padded column per element
            return self.dims[0], 1
        return _product(self.dims[: self.split]), _product(self.dims[self.split :])

    @classmethod
    def zeros(cls, dims, split: int | None = None) -> DenseTensor:
        dims = check_dims(dims)
        split = _default_split(dims) if split is None else int(split)
        if len(dims) == 1:
            rows, cols = dims[0], 1
        else:
            rows, cols = _product(dims[:split]), _product(dims[split:])
        stride = padded_stride(rows)
        return cls(dims, allocate(stride * cols), stride, split)

    @classmethod
    def from_array(cls, a, split: int | None = None) -> DenseTensor:
        a = np.asarray(a, dtype=np.float64)
        t = cls.zeros(a.shape, split)
        t.matrix[...] = a.reshape(t.matrix.shape, order="F")
        return t

    def with_split(self, split: int) -> DenseTensor:
        """Same content with the padding placed after mode ``split`` (a copy unless unchanged)."""
        if split == self.split:
            return self
        out = DenseTensor.zeros(self.dims, split)
        out.matrix[...] = self.flat().reshape(out.matrix.shape, order="F")
        return out

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return _product(self.dims)

    @property
    def rows(self) -> int:
        return self._natural_split()[0]

    @property
    def cols(self) -> int:
        return self._natural_split()[1]

    @property
    def matrix(self) -> np.ndarray:
        """Writable view of the natural leading matricization."""
        rows, cols = self._natural_split()
        full = self.buffer[: self.leading_stride * cols].reshape(cols, self.leading_stride)
        return full[:, :rows].T

    def to_array(self) -> np.ndarray:
        return self.matrix.reshape(self.dims, order="F")

    def flat(self) -> np.ndarray:
        return self.matrix.ravel(order="F")

    def __repr__(self):
        return f"DenseTensor(dims={self.dims}, split={self.split}, leading_stride={self.leading_stride})"


def reshape_view(t: DenseTensor, split_after: int) -> PaddedMatrix:
    """Zero-copy ``(n_1...n_s) x (n_{s+1}...n_d)`` matricization of ``t``.

    Only splits that coincide with the padded split of ``t`` (up to unit
    extents) are viewable. Other splits raise :class:`LayoutError`; use
    :func:`reshape_copy` for those.
    """
    d = t.d
    if not 1 <= split_after < max(d, 2):
        raise ValueError(f"split_after must be in [1, {d - 1}], got {split_after}")
    if d == 1:
        raise ValueError("a 1-dimensional tensor has no matricization to split")
    lo, hi = sorted((split_after, t.split))
    if _product(t.dims[lo:hi]) != 1:
        raise LayoutError(
            f"split after mode {split_after} of {t.dims} is not a view of the layout split at {t.split}"
        )
    return PaddedMatrix(t.rows, t.cols, t.leading_stride, t.buffer)


def reshape_copy(t: DenseTensor, split_after: int) -> PaddedMatrix:
    """Copying fallback for :func:`reshape_view`."""
    rows = _product(t.dims[:split_after])
    cols = t.size // rows
    out = PaddedMatrix.zeros(rows, cols)
    out.array[...] = t.flat().reshape(rows, cols, order="F")
    return out


def frobenius_norm(t: DenseTensor) -> float:
    return float(np.linalg.norm(t.matrix))


def random_tensor(dims, seed: int, split: int | None = None) -> DenseTensor:
    """Tensor with i.i.d. uniform [0, 1) entries, reproducible from ``seed``.

    Entries are drawn in column-major order, so the content does not depend on ``split``.
    """
    t = DenseTensor.zeros(dims, split)
    rng = np.random.default_rng(seed)
    m = t.matrix
    for j in range(m.shape[1]):
        # columns of the padded buffer are contiguous
        rng.random(out=m[:, j])
    return t


def dump_tensor(t: DenseTensor, path) -> None:
    """Raw little-endian dump: int64 header ``(d, dims..., split, stride)`` then the padded buffer."""
    header = np.array([t.d, *t.dims, t.split, t.leading_stride], dtype="<i8")
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(t.buffer[: t.leading_stride * t.cols].astype("<f8", copy=False).tobytes())


def load_tensor(path) -> DenseTensor:
    raw = Path(path).read_bytes()
    d = int(np.frombuffer(raw, dtype="<i8", count=1)[0])
    header = np.frombuffer(raw, dtype="<i8", count=d + 3)
    dims = tuple(int(n) for n in header[1 : d + 1])
    split = int(header[d + 1])
    stride = int(header[d + 2])
    cols = _product(dims[split:]) if d > 1 else 1
    data = np.frombuffer(raw, dtype="<f8", offset=8 * (d + 3), count=stride * cols)
    buf = allocate(stride * cols)
    buf[:] = data
    return DenseTensor(dims, buf, stride, split)
