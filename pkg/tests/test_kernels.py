import numpy as np
import pytest
import scipy.sparse as sp

from doslab import kernels


def test_backend_flag_consistent():
    assert kernels.BACKEND in ("numba", "numpy")
    assert kernels.USE_NUMBA == (kernels.BACKEND == "numba")


@pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not installed")
def test_chebyshev_paths_agree(rng):
    n = 60
    A = sp.random(n, n, density=0.1, random_state=3, format="csr")
    A = (A + A.T).tocsr()
    X = rng.normal(size=(n, 5))
    coeffs = rng.normal(size=(3, 12))
    a = kernels._chebyshev_block_numpy(A, X, 0.3, 0.1, coeffs)
    b = kernels._chebyshev_block_numba(A, X, 0.3, 0.1, coeffs)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_chebyshev_block_against_polynomial(rng):
    n = 8
    M = rng.normal(size=(n, n))
    M = 0.1 * (M + M.T)
    A = sp.csr_matrix(M)
    X = rng.normal(size=(n, 2))
    c = np.array([[0.5, -0.25, 0.125]])
    T0 = X
    T1 = M @ X
    T2 = 2 * M @ T1 - T0
    expected = c[0, 0] * T0 + c[0, 1] * T1 + c[0, 2] * T2
    np.testing.assert_allclose(kernels.chebyshev_block(A, X, 1.0, 0.0, c)[0], expected, atol=1e-13)


def test_counter_streams_deterministic_and_order_free():
    c = np.arange(100)
    a = kernels.counter_uniform(5, 1, c)
    b = kernels.counter_uniform(5, 1, c[::-1])[::-1]
    np.testing.assert_array_equal(a, b)
    assert np.all((a >= 0) & (a < 1))
    assert not np.array_equal(a, kernels.counter_uniform(6, 1, c))
    assert not np.array_equal(a, kernels.counter_uniform(5, 2, c))


@pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not installed")
def test_counter_paths_identical():
    c = kernels._as_counters(np.arange(-50, 50).reshape(50, 2))
    np.testing.assert_array_equal(kernels._counter_uniform_numpy(3, 4, c), kernels._counter_uniform_numba(3, 4, c))


def test_counter_signs_balanced():
    s = kernels.counter_signs(0, 0, np.arange(20000))
    assert set(np.unique(s)) == {-1.0, 1.0}
    assert abs(s.mean()) < 0.03
