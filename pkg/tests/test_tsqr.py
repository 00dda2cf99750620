import numpy as np
import pytest
from conftest import gram_residual
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ttsvd.counters import RunCounters
from ttsvd.errors import DimensionError, DimensionMismatch
from ttsvd.small_dense import small_svd
from ttsvd.tensor import PaddedMatrix
from ttsvd.tsqr import (
    BlockParams,
    combine_factors,
    default_block_rows,
    reduce_block,
    reduce_block_flops,
    tsqr,
    tsqr_scratch_bytes,
)


def test_reduce_block_hand_example():
    R = reduce_block(np.array([[3.0], [4.0]]), np.zeros((1, 1)))
    assert R[0, 0] == pytest.approx(-5.0, abs=1e-15)


def test_reduce_block_zero_block_keeps_factor():
    R = reduce_block(np.zeros((7, 1)), np.array([[2.0]]))
    assert R[0, 0] == 2.0


def test_reduce_block_gram_oracle(rng):
    M = rng.standard_normal((8, 3))
    R0 = np.triu(rng.standard_normal((3, 3)))
    R = reduce_block(M, R0)
    G = M.T @ M + R0.T @ R0
    assert np.linalg.norm(R.T @ R - G) / np.linalg.norm(G) <= 1e-13
    assert np.allclose(np.tril(R, -1), 0)


def test_reduce_block_inputs_untouched(rng):
    M = np.asfortranarray(rng.standard_normal((16, 4)))
    R0 = np.triu(rng.standard_normal((4, 4)))
    M0, R00 = M.copy(), R0.copy()
    reduce_block(M, R0)
    np.testing.assert_array_equal(M, M0)
    np.testing.assert_array_equal(R0, R00)


@pytest.mark.parametrize("scale", [1e-150, 1e-20, 1.0, 1e20, 1e150])
def test_reflector_norms_are_two(rng, scale):
    M = rng.standard_normal((32, 6)) * scale
    _, vn = reduce_block(M, np.zeros((6, 6)), return_reflector_norms=True)
    assert np.all(np.abs(vn - 2.0) <= 1e-12)


def test_reduce_block_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        reduce_block(np.zeros((4, 2)), np.zeros((3, 3)))


def test_identity_embedded():
    X = np.zeros((100, 4))
    X[:4] = np.eye(4)
    R = tsqr(X)
    np.testing.assert_allclose(np.abs(np.diag(R)), 1.0, atol=1e-15)
    assert np.abs(R - np.diag(np.diag(R))).max() <= 1e-15


def test_tall_random_gram(rng):
    X = rng.standard_normal((10**5, 8))
    assert gram_residual(tsqr(X), X) <= 1e-12


def test_duplicated_column_rank(rng):
    X = rng.standard_normal((10**4, 5))
    X[:, 3] = X[:, 1]
    R = tsqr(X)
    assert np.all(np.isfinite(R))
    s = small_svd(R).sigma
    assert s[4] / s[0] <= 1e-14


@pytest.mark.parametrize("shape", [(50, 3), (1000, 7), (129, 16)])
def test_zero_matrix_and_zero_columns(shape, rng):
    Z = np.zeros(shape)
    R = tsqr(Z)
    # only the break-down guard sqrt(eps_fp) survives on the diagonal
    assert np.all(np.abs(R) <= 1e-150)
    X = rng.standard_normal(shape)
    X[:, 0] = 0
    X[:, -1] = 0
    R = tsqr(X)
    assert np.all(np.isfinite(R)) and gram_residual(R, X) <= 1e-13


def test_combine_examples(rng):
    R = combine_factors([np.eye(2), np.eye(2)])
    np.testing.assert_allclose(R.T @ R, 2 * np.eye(2), atol=1e-15)
    single = np.triu(rng.standard_normal((3, 3)))
    assert combine_factors([single]) is not None
    np.testing.assert_array_equal(combine_factors([single]), single)
    parts = [np.triu(rng.standard_normal((4, 4))) for _ in range(4)]
    R = combine_factors(parts)
    G = sum(p.T @ p for p in parts)
    assert np.linalg.norm(R.T @ R - G) / np.linalg.norm(G) <= 1e-13


def test_combine_rejects_mixed_sizes():
    with pytest.raises(DimensionMismatch):
        combine_factors([np.eye(2), np.eye(3)])


@pytest.mark.parametrize("workers", [1, 2, 3, 7])
def test_workers_and_short_blocks(workers, rng):
    # row counts that leave short final blocks per worker
    X = rng.standard_normal((1237, 5))
    R = tsqr(X, BlockParams(n_b=64), workers=workers)
    assert gram_residual(R, X) <= 1e-13


def test_deterministic_bitwise(rng):
    X = rng.standard_normal((5000, 6))
    for w in (1, 3):
        np.testing.assert_array_equal(tsqr(X, workers=w), tsqr(X, workers=w))


def test_padded_input_matches_dense(rng):
    X = rng.standard_normal((300, 5))
    np.testing.assert_array_equal(tsqr(PaddedMatrix.from_array(X), workers=1), tsqr(X, workers=1))


def test_wide_rejected_unless_allowed(rng):
    X = rng.standard_normal((3, 5))
    with pytest.raises(DimensionError):
        tsqr(X)
    R = tsqr(X, allow_wide=True)
    assert gram_residual(R, X) <= 1e-13


def test_block_rows_default():
    for m in (1, 4, 16, 64, 200):
        nb = default_block_rows(m)
        assert nb % 8 == 0 and 16 <= nb <= 4096
        if 16 < nb < 4096:
            assert (nb + m) * m * 8 <= 256 * 1024 < (nb + 8 + m) * m * 8


def test_block_flop_count(rng):
    n_b, m = 64, 5
    c = RunCounters()
    tsqr(rng.standard_normal((n_b, m)), BlockParams(n_b=n_b), workers=1, counters=c)
    assert c.flops == reduce_block_flops(n_b, m) == 2 * m * m * (n_b + 1)
    assert c.bytes == 8 * n_b * m


def test_scratch_independent_of_rows(rng):
    peaks = []
    for n in (10**3, 10**5):
        c = RunCounters()
        tsqr(rng.standard_normal((n, 4)), workers=2, counters=c)
        peaks.append(c.peak_scratch_bytes)
    assert peaks[0] == peaks[1] == tsqr_scratch_bytes(4, 2)


_finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(st.integers(1, 12).flatmap(
    lambda m: arrays(np.float64, st.tuples(st.integers(m, 400), st.just(m)), elements=_finite)),
    st.integers(1, 4))
def test_gram_preservation_property(X, workers):
    R = tsqr(X, BlockParams(n_b=32), workers=workers)
    assert np.all(np.isfinite(R))
    G = X.T @ X
    n = X.shape[0]
    assert np.linalg.norm(R.T @ R - G) <= 10 * n * np.finfo(float).eps * max(np.linalg.norm(G), 1e-300)


@given(st.integers(2, 10), st.integers(0, 2**32 - 1), st.sampled_from([1e-120, 1e-8, 1.0, 1e8, 1e120]))
def test_gram_preservation_adversarial(m, seed, scale):
    r = np.random.default_rng(seed)
    X = r.standard_normal((300, m)) * scale
    X[:, r.integers(m)] = 0
    X[:, r.integers(m)] = X[:, r.integers(m)]
    R = tsqr(X, workers=2)
    assert np.all(np.isfinite(R))
    Rs, G = R / scale, (X / scale).T @ (X / scale)
    # the absolute term covers the break-down guard when every column vanishes
    assert np.linalg.norm(Rs.T @ Rs - G) <= 10 * 300 * np.finfo(float).eps * np.linalg.norm(G) + 1e-30
