"""Eigenvalues, singular values and trace-ideal functionals on truncations.

Windowed eigenvalue counts use matrix inertia: for a sparse symmetric ``A``
the number of eigenvalues below ``sigma`` equals the number of negative
pivots of an ``LDL^T`` factorization of ``A - sigma I``.  The factorization
is SuperLU with a symmetric fill-reducing ordering and diagonal pivoting
only, so ``P (A - sigma) P^T = L D L^T`` up to scaling and Sylvester's law
applies to ``diag(U)``.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .closedform import ball_volume, sphere_area
from .lattice import Grid, SparseOperator, assemble_hamiltonian, build_grid

__all__ = [
    "DEFAULT_DENSE_CAP",
    "DenseCapError",
    "count_below",
    "inertia_count",
    "dirichlet_eigenvalues",
    "count_in_interval",
    "SingularValueList",
    "singular_values",
    "weak_quasinorm",
    "PartialSumTrace",
    "dixmier_partial_sums",
    "richardson_log",
    "discrete_laplacian_symbol",
    "connes_operator",
    "smooth_bump",
    "connes_check",
    "resolvent_weight_singular_values",
    "cwikel_quasinorm",
    "CwikelRow",
    "CwikelTable",
    "cwikel_table",
    "free_operator_family",
    "partial_sums_json",
]

DEFAULT_DENSE_CAP = 5000


class DenseCapError(ValueError):
    """A dense decomposition was requested above the configured size cap."""


def _check_cap(n: int, dense_cap: int, what: str) -> None:
    if n > dense_cap:
        raise DenseCapError(
            f"{what} needs a dense {n}x{n} decomposition, above dense_cap={dense_cap}; "
            "use a windowed/inertia path or raise dense_cap explicitly"
        )


# ---------------------------------------------------------------------------
# Eigenvalues and inertia
# ---------------------------------------------------------------------------

def _as_matrix(op) -> sp.csc_matrix:
    if isinstance(op, SparseOperator):
        return op.matrix.tocsc()
    return sp.csc_matrix(op)


def count_below(matrix, sigma: float) -> int:
    """Number of eigenvalues of the symmetric ``matrix`` strictly below ``sigma``."""
    A = _as_matrix(matrix)
    n = A.shape[0]
    shifted = (A - sigma * sp.identity(n, format="csc")).tocsc()
    for attempt in range(4):
        try:
            lu = spla.splu(
                shifted,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError:
            # exactly singular: sigma is an eigenvalue; move just below it
            delta = 1e-12 * max(1.0, abs(sigma)) * 10**attempt
            shifted = (A - (sigma - delta) * sp.identity(n, format="csc")).tocsc()
            continue
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise RuntimeError("LU factorization pivoted off the diagonal; inertia unavailable")
        d = lu.U.diagonal()
        return int(np.count_nonzero(d < 0))
    raise RuntimeError(f"could not factor A - {sigma} I")


def inertia_count(op, interval: tuple[float, float]) -> int:
    """Eigenvalues in the half-open interval ``[a, b)`` via two inertia counts."""
    a, b = interval
    if not b > a:
        return 0
    if isinstance(op, SparseOperator):
        lo, hi = op.spectral_enclosure
        if b <= lo or a > hi:
            return 0
    return count_below(op, b) - count_below(op, a)


def dirichlet_eigenvalues(
    op: SparseOperator,
    window: tuple[float, float] | None = None,
    dense_cap: int = DEFAULT_DENSE_CAP,
) -> np.ndarray:
    """Sorted eigenvalues (with multiplicity), all or those in ``[a, b)``.

    Without a window the dense path is used and ``dense_cap`` applies.  With
    a window, large operators use shift-invert Lanczos with the exact target
    count taken from inertia.
    """
    n = op.dim_matrix
    if window is not None:
        a, b = window
        lo, hi = op.spectral_enclosure
        if not b > a or b <= lo or a > hi:
            return np.empty(0)
    if n <= dense_cap:
        eigs = sla.eigvalsh(op.matrix.toarray())
        if window is None:
            return eigs
        return eigs[(eigs >= window[0]) & (eigs < window[1])]
    if window is None:
        _check_cap(n, dense_cap, "dirichlet_eigenvalues without a window")
    a, b = window
    k = inertia_count(op, (a, b))
    if k == 0:
        return np.empty(0)
    if k >= n - 1:
        _check_cap(n, dense_cap, "a window holding the whole spectrum")
    mid = 0.5 * (a + b)
    want = k
    for _ in range(6):
        kk = min(n - 2, want + max(4, want // 4))
        vals = spla.eigsh(op.matrix.tocsc(), k=kk, sigma=mid, which="LM", return_eigenvectors=False)
        vals = np.sort(vals[(vals >= a) & (vals < b)])
        if vals.size == k:
            return vals
        want = 2 * kk
    raise RuntimeError(f"shift-invert Lanczos found {vals.size} of {k} eigenvalues in [{a}, {b})")


def dirichlet_eigenpairs(op: SparseOperator, window: tuple[float, float], dense_cap: int = DEFAULT_DENSE_CAP):
    """Eigenpairs with eigenvalue in ``[a, b)``; columns are orthonormal."""
    a, b = window
    n = op.dim_matrix
    if n <= dense_cap:
        w, U = sla.eigh(op.matrix.toarray())
        keep = (w >= a) & (w < b)
        return w[keep], U[:, keep]
    k = inertia_count(op, (a, b))
    if k == 0:
        return np.empty(0), np.empty((n, 0))
    mid = 0.5 * (a + b)
    want = k
    for _ in range(6):
        kk = min(n - 2, want + max(4, want // 4))
        w, U = spla.eigsh(op.matrix.tocsc(), k=kk, sigma=mid, which="LM")
        keep = (w >= a) & (w < b)
        if np.count_nonzero(keep) == k:
            order = np.argsort(w[keep])
            return w[keep][order], U[:, keep][:, order]
        want = 2 * kk
    raise RuntimeError(f"could not resolve the {k} eigenpairs in [{a}, {b})")


def count_in_interval(eigs, interval: tuple[float, float]) -> int:
    """Eigenvalues of the sorted list ``eigs`` in ``[a, b)``."""
    a, b = interval
    if not b > a:
        return 0
    eigs = np.asarray(eigs, dtype=float)
    return int(np.searchsorted(eigs, b, side="left") - np.searchsorted(eigs, a, side="left"))


# ---------------------------------------------------------------------------
# Singular values and weak quasinorms
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SingularValueList:
    values: np.ndarray
    source_dim: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("singular values must be a 1-D sequence")
        if np.any(vals < 0):
            raise ValueError("singular values must be non-negative")
        if np.any(np.diff(vals) > 0):
            raise ValueError("singular values must be non-increasing")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size

    @classmethod
    def from_unsorted(cls, values, source_dim: int | None = None) -> "SingularValueList":
        vals = np.sort(np.abs(np.asarray(values, dtype=float)))[::-1]
        return cls(vals, vals.size if source_dim is None else source_dim)

    def scaled(self, alpha: float) -> "SingularValueList":
        if alpha < 0:
            raise ValueError("scale must be non-negative")
        return SingularValueList(alpha * self.values, self.source_dim)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "mu"])
            for k, mu in enumerate(self.values):
                w.writerow([k, repr(float(mu))])


def singular_values(matrix, dense_cap: int = DEFAULT_DENSE_CAP) -> SingularValueList:
    """All singular values of a dense matrix, non-increasing."""
    A = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
    if A.ndim != 2:
        raise ValueError("singular_values needs a 2-D matrix")
    _check_cap(max(A.shape), dense_cap, "singular_values")
    if A.size == 0:
        return SingularValueList(np.empty(0), 0)
    mu = sla.svdvals(A)
    return SingularValueList(np.clip(np.sort(mu)[::-1], 0.0, None), max(A.shape))


def weak_quasinorm(sv, p: float) -> tuple[float, int]:
    """``sup_k (k+1)^{1/p} mu(k)`` and the maximizing index (``(0.0, -1)`` if empty)."""
    if p <= 0:
        raise ValueError("weak_quasinorm needs p > 0")
    mu = sv.values if isinstance(sv, SingularValueList) else np.asarray(sv, dtype=float)
    if mu.size == 0:
        return 0.0, -1
    scaled = np.arange(1, mu.size + 1, dtype=float) ** (1.0 / p) * mu
    k = int(np.argmax(scaled))
    return float(scaled[k]), k


# ---------------------------------------------------------------------------
# Dixmier partial sums
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PartialSumTrace:
    N_grid: np.ndarray
    sums: np.ndarray
    limit_estimate: float
    trend: dict
    truncated: bool = False

    def to_dict(self) -> dict:
        return {
            "N_grid": [int(n) for n in self.N_grid],
            "sums": [float(v) for v in self.sums],
            "limit_estimate": self.limit_estimate,
            "trend": self.trend,
            "truncated": self.truncated,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N", "partial_sum"])
            for n, v in zip(self.N_grid, self.sums):
                w.writerow([int(n), repr(float(v))])


def richardson_log(N1: int, S1: float, N2: int, S2: float) -> float:
    """Two-point extrapolation of ``S = c + b / log(2+N)`` to ``N -> inf``."""
    x1 = 1.0 / math.log(2.0 + N1)
    x2 = 1.0 / math.log(2.0 + N2)
    if x1 == x2:
        return float(S2)
    return float((S2 * x1 - S1 * x2) / (x1 - x2))


def dixmier_partial_sums(sv, N_grid: Iterable[int]) -> PartialSumTrace:
    """``sum_{k<=N} mu(k) / log(2+N)`` on ``N_grid`` plus an extrapolated limit.

    ``limit_estimate`` is the two-point fit in ``1/log(2+N)`` through the
    first and last grid entries.  Grid entries beyond the available singular
    values are dropped and ``truncated`` is set.
    """
    mu = sv.values if isinstance(sv, SingularValueList) else np.asarray(sv, dtype=float)
    grid = np.unique(np.asarray(list(N_grid), dtype=np.int64))
    if grid.size and grid[0] < 0:
        raise ValueError("N_grid entries must be non-negative")
    keep = grid < mu.size
    truncated = bool(np.any(~keep))
    if truncated:
        warnings.warn("N_grid exceeds the available singular values; truncated", RuntimeWarning, stacklevel=2)
    grid = grid[keep]
    csum = np.cumsum(mu)
    sums = csum[grid] / np.log(2.0 + grid) if grid.size else np.empty(0)
    if grid.size >= 2:
        limit = richardson_log(int(grid[0]), sums[0], int(grid[-1]), sums[-1])
        pairwise = [richardson_log(int(a), sa, int(b), sb) for a, b, sa, sb in zip(grid[:-1], grid[1:], sums[:-1], sums[1:])]
    elif grid.size == 1:
        limit = float(sums[0])
        pairwise = []
    else:
        limit = float("nan")
        pairwise = []
    diffs = np.diff(sums)
    trend = {
        "non_decreasing": bool(np.all(diffs >= 0)),
        "non_increasing": bool(np.all(diffs <= 0)),
        "pairwise_extrapolants": [float(v) for v in pairwise],
    }
    return PartialSumTrace(grid, sums, float(limit), trend, truncated)


# ---------------------------------------------------------------------------
# Connes' trace formula on the torus
# ---------------------------------------------------------------------------

def discrete_laplacian_symbol(grid: Grid) -> np.ndarray:
    """``sum_i (4/h^2) sin^2(k_i h / 2)`` on the FFT frequency grid, shape ``grid.shape``."""
    h = grid.spacing
    k = 2 * np.pi * np.fft.fftfreq(grid.n, d=h)
    lam1 = (4.0 / h**2) * np.sin(k * h / 2.0) ** 2
    total = np.zeros(grid.shape)
    for a in range(grid.dim):
        shape = [1] * grid.dim
        shape[a] = grid.n
        total = total + lam1.reshape(shape)
    return total


def connes_operator(f, grid: Grid, dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Dense matrix of ``M_f (1 - Laplacian)^{-d/2}`` on a periodic grid.

    ``(1 - Laplacian)^{-d/2}`` is circulant, so column ``j`` is the inverse
    FFT of the multiplier shifted to point ``j``.
    """
    if grid.boundary != "periodic":
        raise ValueError("connes_operator needs a periodic grid (the multiplier lives on the torus)")
    _check_cap(grid.size, dense_cap, "connes_operator")
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.size,):
        raise ValueError("f must be sampled on the grid")
    mult = (1.0 + discrete_laplacian_symbol(grid)) ** (-grid.dim / 2.0)
    kernel = np.real(np.fft.ifftn(mult))  # P[i, j] = kernel[(k_i - k_j) mod n]
    ic = grid.integer_coords
    diff = (ic[:, None, :] - ic[None, :, :]) % grid.n
    P = kernel[tuple(diff[..., a] for a in range(grid.dim))]
    return f[:, None] * P


def smooth_bump(grid: Grid, radius: float, center=None) -> np.ndarray:
    """``exp(-1/(1-|x|^2/r^2))`` inside the ball, normalized to unit lattice integral."""
    x = grid.coords - (0.0 if center is None else np.asarray(center, dtype=float))
    r2 = np.sum(x**2, axis=1) / radius**2
    inside = r2 < 1.0
    f = np.zeros(grid.size)
    f[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    total = f.sum() * grid.volume_element
    if total <= 0:
        raise ValueError("bump has no support on the grid")
    return f / total


@dataclass(frozen=True, eq=False)
class ConnesResult:
    grid: Grid
    radius: float
    integral: float
    target: float
    n_trust: int
    partial: PartialSumTrace
    singular: SingularValueList

    @property
    def relative_error(self) -> float:
        return abs(self.partial.limit_estimate - self.target) / abs(self.target)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "radius": self.radius,
            "integral": self.integral,
            "target": self.target,
            "n_trust": self.n_trust,
            "partial_sums": self.partial.to_dict(),
            "relative_error": self.relative_error,
        }


def connes_trust_index(grid: Grid, support_volume: float, kappa: float = 1.0) -> int:
    """Last index in the Weyl regime below the lattice cutoff.

    Phase-space count of ``|xi| <= kappa/h`` over the support of ``f``:
    ``|supp f| omega_d kappa^d / (d (2 pi)^d h^d)``.
    """
    d = grid.dim
    return int(support_volume * sphere_area(d) * kappa**d / (d * (2 * np.pi) ** d * grid.spacing**d))


def connes_check(
    n: int = 64,
    half_width: float = 4.0,
    radius: float = 3.8,
    dim: int = 2,
    points: int = 8,
    dense_cap: int = DEFAULT_DENSE_CAP,
) -> ConnesResult:
    """Dixmier partial sums of ``M_f (1-Laplacian)^{-d/2}`` for a normalized bump.

    The torus has ``n`` points per axis over ``[-L, L)``.  ``N_grid`` is
    geometric over the decade ending at the Weyl-regime index.
    """
    if n % 2:
        raise ValueError("n must be even so that L/h is an integer")
    grid = build_grid(dim, half_width, 2.0 * half_width / n, "periodic")
    f = smooth_bump(grid, radius)
    integral = float(f.sum() * grid.volume_element)
    A = connes_operator(f, grid, dense_cap=dense_cap)
    sv = singular_values(A, dense_cap=dense_cap)
    n_trust = min(connes_trust_index(grid, ball_volume(dim, radius)), len(sv) - 1)
    lo = max(1, n_trust // 10)
    N_grid = np.unique(np.rint(np.geomspace(lo, n_trust, points)).astype(int))
    partial = dixmier_partial_sums(sv, N_grid)
    target = sphere_area(dim) / (dim * (2 * np.pi) ** dim) * integral
    return ConnesResult(grid, radius, integral, target, n_trust, partial, sv)


# ---------------------------------------------------------------------------
# Cwikel estimates
# ---------------------------------------------------------------------------

def _japanese(grid: Grid) -> np.ndarray:
    return np.sqrt(1.0 + grid.radius**2)


def resolvent_weight_singular_values(
    op: SparseOperator, p: int = 1, z: complex = 1j, dense_cap: int = DEFAULT_DENSE_CAP
) -> SingularValueList:
    """Singular values of ``(H+z)^{-p} M_{<x>}^{-p}`` via the eigendecomposition of ``H``.

    ``|H+z|^{-p} = ((H+a)^2+b^2)^{-p/2}`` for ``z = a+ib``, so the values are
    those of the real matrix ``D U diag(g)`` with ``D = <x>^{-p}``.
    """
    z = complex(z)
    if z.imag == 0:
        raise ValueError("the shift z must have a nonzero imaginary part")
    n = op.dim_matrix
    _check_cap(n, dense_cap, "resolvent_weight_singular_values")
    lam, U = sla.eigh(op.matrix.toarray())
    g = ((lam + z.real) ** 2 + z.imag**2) ** (-p / 2.0)
    D = _japanese(op.grid) ** (-float(p))
    B = (D[:, None] * U) * g[None, :]
    mu = sla.svdvals(B)
    return SingularValueList(np.clip(np.sort(mu)[::-1], 0.0, None), n)


@dataclass(frozen=True)
class QuasinormBracket:
    value: float
    upper: float
    evaluations: int


def _count_above_factory(op: SparseOperator, p: int, z: complex) -> tuple[Callable[[float], int], float]:
    # #{mu > tau} = #neg(S^p - D^2/tau^2), S = (H+a)^2 + b^2, D = <x>^{-p}
    H = op.matrix.tocsc()
    n = H.shape[0]
    eye = sp.identity(n, format="csc")
    Ha = H + z.real * eye
    S = (Ha @ Ha + (z.imag**2) * eye).tocsc()
    Sp = S
    for _ in range(p - 1):
        Sp = (Sp @ S).tocsc()
    D2 = _japanese(op.grid) ** (-2.0 * p)

    def count_above(tau: float) -> int:
        M = (Sp - sp.diags(D2 / tau**2)).tocsc()
        lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise RuntimeError("LU factorization pivoted off the diagonal; inertia unavailable")
        return int(np.count_nonzero(lu.U.diagonal() < 0))

    tau_max = float(abs(z.imag) ** (-p) * D2.max() ** 0.5)
    return count_above, tau_max


def cwikel_quasinorm(
    op: SparseOperator,
    p: int = 1,
    z: complex = 1j,
    order: float | None = None,
    ratio: float = 1.05,
    refine_ratio: float = 1.002,
) -> QuasinormBracket:
    """Weak quasinorm of ``(H+z)^{-p} <x>^{-p}`` from inertia counts alone.

    ``n(tau) = #{mu > tau}`` on a geometric grid gives the bracket
    ``max n(tau_j)^{1/q} tau_j <= sup_k (k+1)^{1/q} mu_k <= max n(tau_j)^{1/q} tau_{j-1}``;
    intervals that could still hold the supremum are refined.
    """
    z = complex(z)
    if z.imag == 0:
        raise ValueError("the shift z must have a nonzero imaginary part")
    q = op.grid.dim / p if order is None else order
    count_above, tau_max = _count_above_factory(op, p, z)
    N = op.dim_matrix
    cache: dict[float, int] = {}

    def n_of(t):
        if t not in cache:
            cache[t] = count_above(t)
        return cache[t]

    taus = [tau_max * (1 + 1e-9)]
    counts = [n_of(taus[0])]
    lower = 0.0
    tau = taus[0]
    while True:
        tau /= ratio
        c = n_of(tau)
        taus.append(tau)
        counts.append(c)
        lower = max(lower, c ** (1.0 / q) * tau)
        if N ** (1.0 / q) * tau < lower or c >= N:
            break

    def bracket(ts, cs):
        lo = max(c ** (1.0 / q) * t for t, c in zip(ts, cs))
        hi = max(cs[j] ** (1.0 / q) * ts[j - 1] for j in range(1, len(ts)))
        tail = N ** (1.0 / q) * ts[-1]
        return lo, max(hi, tail if cs[-1] < N else 0.0)

    lo, hi = bracket(taus, counts)
    # refine every coarse interval whose upper bound could beat the lower bound
    fine_t = list(taus)
    for j in range(1, len(taus)):
        if counts[j] ** (1.0 / q) * taus[j - 1] >= lo:
            t = taus[j - 1]
            while t / refine_ratio > taus[j]:
                t /= refine_ratio
                fine_t.append(t)
    fine_t = sorted(set(fine_t), reverse=True)
    fine_c = [n_of(t) for t in fine_t]
    lo, hi = bracket(fine_t, fine_c)
    return QuasinormBracket(float(lo), float(hi), len(cache))


@dataclass(frozen=True)
class CwikelRow:
    half_width: float
    size: int
    quasinorm: float
    upper: float
    argmax: int
    method: str


@dataclass(frozen=True, eq=False)
class CwikelTable:
    rows: list
    p: int
    order: float
    z: complex

    @property
    def growth_ratios(self) -> list[float]:
        return [b.quasinorm / a.quasinorm for a, b in zip(self.rows[:-1], self.rows[1:])]

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "order": self.order,
            "z": [self.z.real, self.z.imag],
            "rows": [r.__dict__ for r in self.rows],
            "growth_ratios": self.growth_ratios,
        }


def cwikel_table(
    op_builder: Callable[[float], SparseOperator] | Sequence[SparseOperator],
    half_widths: Sequence[float] | None = None,
    p: int = 1,
    d: int | None = None,
    z: complex = 1j,
    dense_cap: int = DEFAULT_DENSE_CAP,
    method: str = "auto",
) -> CwikelTable:
    """``L -> ||(H+z)^{-p} <x>^{-p}||_{d/p, inf}`` over a family of truncations.

    ``method`` is ``"dense"`` (exact singular values), ``"inertia"`` (sparse
    bracket) or ``"auto"`` (dense up to ``dense_cap``).
    """
    z = complex(z)
    if z.imag == 0:
        raise ValueError("the shift z must have a nonzero imaginary part")
    if callable(op_builder):
        if half_widths is None:
            raise ValueError("half_widths required with an operator builder")
        ops = [op_builder(L) for L in half_widths]
    else:
        ops = list(op_builder)
    rows = []
    order = None
    for op in ops:
        dim = op.grid.dim if d is None else d
        q = dim / p
        order = q
        use_dense = method == "dense" or (method == "auto" and op.dim_matrix <= dense_cap)
        if use_dense:
            sv = resolvent_weight_singular_values(op, p=p, z=z, dense_cap=max(dense_cap, op.dim_matrix) if method == "dense" else dense_cap)
            val, k = weak_quasinorm(sv, q)
            rows.append(CwikelRow(op.grid.half_width, op.dim_matrix, val, val, k, "dense"))
        else:
            br = cwikel_quasinorm(op, p=p, z=z, order=q)
            rows.append(CwikelRow(op.grid.half_width, op.dim_matrix, br.value, br.upper, -1, "inertia"))
    return CwikelTable(rows, p, float(order if order is not None else 0.0), z)


def free_operator_family(dim: int, spacing: float, potential=None) -> Callable[[float], SparseOperator]:
    from .lattice import ZeroPotential

    pot = ZeroPotential() if potential is None else potential

    def build(L: float) -> SparseOperator:
        return assemble_hamiltonian(build_grid(dim, L, spacing, "dirichlet"), pot)

    return build


def partial_sums_json(trace: PartialSumTrace) -> str:
    return json.dumps(trace.to_dict(), sort_keys=True)
