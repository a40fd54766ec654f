"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba kernels are used when numba imports cleanly and the environment
variable ``DOSLAB_DISABLE_NUMBA`` is unset (or ``0``).  Both paths are always
importable under their private names so tests and the benchmark can compare
them directly.

Kernels
-------
chebyshev_block
    Three-term Chebyshev recurrence ``T_k(A') X`` for a CSR matrix ``A`` with
    affine rescaling ``A' = alpha*A + beta*I``, accumulated against several
    coefficient sets at once.
counter_uniform / counter_signs
    Counter-based random streams: values depend only on ``(seed, stream,
    counter)`` through a splitmix64 finalizer, never on evaluation order.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly by the backend switch
    import numba
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    numba = None
    NUMBA_AVAILABLE = False


def _env_disabled() -> bool:
    return os.environ.get("DOSLAB_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = NUMBA_AVAILABLE and not _env_disabled()
BACKEND = "numba" if USE_NUMBA else "numpy"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


# ---------------------------------------------------------------------------
# Chebyshev recurrence
# ---------------------------------------------------------------------------

def _chebyshev_block_numpy(matrix, X, alpha, beta, coeffs):
    """Return ``out[j] = sum_k coeffs[j, k] T_k(alpha*A + beta*I) X``.

    ``matrix`` is a scipy CSR matrix, ``X`` has shape ``(N, m)`` and
    ``coeffs`` shape ``(n_sets, K)``.
    """
    n_sets, order = coeffs.shape
    out = np.empty((n_sets,) + X.shape)
    prev = np.array(X, dtype=float, copy=True)
    for j in range(n_sets):
        out[j] = coeffs[j, 0] * prev
    if order == 1:
        return out
    cur = matrix @ prev
    cur *= alpha
    cur += beta * prev
    for j in range(n_sets):
        out[j] += coeffs[j, 1] * cur
    for k in range(2, order):
        nxt = matrix @ cur
        nxt *= 2.0 * alpha
        nxt += (2.0 * beta) * cur
        nxt -= prev
        for j in range(n_sets):
            c = coeffs[j, k]
            if c != 0.0:
                out[j] += c * nxt
        prev, cur = cur, nxt
    return out


if NUMBA_AVAILABLE:

    @njit(cache=True, fastmath=False)
    def _csr_affine(indptr, indices, data, alpha, beta, x, out):
        n, m = x.shape
        for i in range(n):
            for c in range(m):
                out[i, c] = beta * x[i, c]
            for p in range(indptr[i], indptr[i + 1]):
                a = alpha * data[p]
                jcol = indices[p]
                for c in range(m):
                    out[i, c] += a * x[jcol, c]

    @njit(cache=True, fastmath=False)
    def _cheb_step(indptr, indices, data, alpha, beta, cur, prev, nxt):
        # nxt = 2*(alpha*A + beta) cur - prev
        n, m = cur.shape
        ta = 2.0 * alpha
        tb = 2.0 * beta
        for i in range(n):
            for c in range(m):
                nxt[i, c] = tb * cur[i, c] - prev[i, c]
            for p in range(indptr[i], indptr[i + 1]):
                a = ta * data[p]
                jcol = indices[p]
                for c in range(m):
                    nxt[i, c] += a * cur[jcol, c]

    @njit(cache=True, fastmath=False)
    def _accumulate(out, coeffs, k, vec):
        n_sets = coeffs.shape[0]
        n, m = vec.shape
        for j in range(n_sets):
            ck = coeffs[j, k]
            if ck != 0.0:
                for i in range(n):
                    for c in range(m):
                        out[j, i, c] += ck * vec[i, c]

    @njit(cache=True, fastmath=False)
    def _cheb_loop(indptr, indices, data, X, alpha, beta, coeffs):
        n_sets, order = coeffs.shape
        n, m = X.shape
        out = np.zeros((n_sets, n, m))
        prev = X.copy()
        _accumulate(out, coeffs, 0, prev)
        if order == 1:
            return out
        cur = np.empty_like(prev)
        _csr_affine(indptr, indices, data, alpha, beta, prev, cur)
        _accumulate(out, coeffs, 1, cur)
        nxt = np.empty_like(prev)
        for k in range(2, order):
            _cheb_step(indptr, indices, data, alpha, beta, cur, prev, nxt)
            _accumulate(out, coeffs, k, nxt)
            prev, cur, nxt = cur, nxt, prev
        return out

    def _chebyshev_block_numba(matrix, X, alpha, beta, coeffs):
        X = np.ascontiguousarray(X, dtype=np.float64)
        coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
        return _cheb_loop(
            matrix.indptr.astype(np.int64),
            matrix.indices.astype(np.int64),
            matrix.data.astype(np.float64),
            X,
            float(alpha),
            float(beta),
            coeffs,
        )

else:  # pragma: no cover
    _chebyshev_block_numba = None


def chebyshev_block(matrix, X, alpha, beta, coeffs):
    """Dispatch to the active backend; ``X`` may be 1-D or 2-D."""
    X = np.asarray(X, dtype=float)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    fn = _chebyshev_block_numba if USE_NUMBA else _chebyshev_block_numpy
    out = fn(matrix, X, alpha, beta, coeffs)
    if squeeze:
        out = out[:, :, 0]
    return out


# ---------------------------------------------------------------------------
# Counter-based random streams (splitmix64)
# ---------------------------------------------------------------------------

def _mix_numpy(z):
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


def _hash_numpy(seed, stream, counters):
    # keys are folded in one word at a time so every coordinate changes the state
    with np.errstate(over="ignore"):
        state = _mix_numpy(np.full(counters.shape[0], np.uint64(seed) * _GOLDEN + np.uint64(stream)))
        for col in range(counters.shape[1]):
            state = _mix_numpy(state + _GOLDEN + counters[:, col].astype(np.uint64))
    return state


def _counter_uniform_numpy(seed, stream, counters):
    bits = _hash_numpy(seed, stream, counters)
    return (bits >> np.uint64(11)).astype(np.float64) * _INV53


if NUMBA_AVAILABLE:

    @njit(cache=True)
    def _mix_scalar(z):
        z ^= z >> np.uint64(30)
        z *= np.uint64(0xBF58476D1CE4E5B9)
        z ^= z >> np.uint64(27)
        z *= np.uint64(0x94D049BB133111EB)
        z ^= z >> np.uint64(31)
        return z

    @njit(cache=True)
    def _counter_uniform_kernel(seed, stream, counters, out):
        golden = np.uint64(0x9E3779B97F4A7C15)
        base = _mix_scalar(seed * golden + stream)
        n, k = counters.shape
        for i in range(n):
            state = base
            for col in range(k):
                state = _mix_scalar(state + golden + counters[i, col])
            out[i] = np.float64(state >> np.uint64(11)) * (1.0 / 9007199254740992.0)

    def _counter_uniform_numba(seed, stream, counters):
        out = np.empty(counters.shape[0])
        _counter_uniform_kernel(np.uint64(seed), np.uint64(stream), counters.astype(np.uint64), out)
        return out

else:  # pragma: no cover
    _counter_uniform_numba = None


def _as_counters(counters):
    arr = np.asarray(counters)
    if arr.ndim == 1:
        arr = arr[:, None]
    # negative integer keys (cell indices) are mapped two's-complement style
    return arr.astype(np.int64).view(np.uint64) if arr.dtype.kind == "i" else arr.astype(np.uint64)


def counter_uniform(seed: int, stream: int, counters) -> np.ndarray:
    """Uniform[0, 1) values keyed by ``(seed, stream, counter row)``.

    ``counters`` is an integer array of shape ``(n,)`` or ``(n, k)``; each
    row is one key.  Results are independent of batching and ordering.
    """
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative integers")
    keys = np.ascontiguousarray(_as_counters(counters))
    fn = _counter_uniform_numba if USE_NUMBA else _counter_uniform_numpy
    return fn(int(seed), int(stream), keys)


def counter_signs(seed: int, stream: int, counters) -> np.ndarray:
    """Rademacher (+1/-1) values from the same counter-based stream."""
    u = counter_uniform(seed, stream, counters)
    return np.where(u < 0.5, -1.0, 1.0)


def set_num_threads(n: int | None = None) -> None:
    """Apply ``DOSLAB_NUM_THREADS`` (or ``n``) to numba's thread pool."""
    if n is None:
        raw = os.environ.get("DOSLAB_NUM_THREADS")
        if not raw:
            return
        n = int(raw)
    if NUMBA_AVAILABLE and n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
