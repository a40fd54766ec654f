"""Heat semigroup ``exp(-sH)`` on lattice truncations.

The propagator is a Chebyshev expansion on the spectral enclosure
``[lo, hi]``.  With ``lambda = c + w t`` the coefficients are exact:

    exp(-s lambda) = exp(-s lo) [ive(0, sw) + 2 sum_k (-1)^k ive(k, sw) T_k(t)]

where ``ive`` is the exponentially scaled modified Bessel function, so no
quadrature enters.  Kernel diagonals are reported in continuum units, i.e.
the matrix diagonal divided by ``h^d``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from scipy.special import ive

from .kernels import chebyshev_block, counter_signs
from .lattice import Grid, SparseOperator

__all__ = [
    "MAX_ORDER",
    "DEFAULT_COLUMN_BUDGET",
    "HeatPropagator",
    "build_propagator",
    "apply_heat",
    "apply_heat_many",
    "DiagonalField",
    "heat_diagonal",
    "heat_diagonals",
    "TraceEstimate",
    "weighted_heat_trace",
    "s_min",
    "boundary_layer",
    "bulk_radius",
    "color_period",
]

MAX_ORDER = 20000
DEFAULT_COLUMN_BUDGET = 4096
_BLOCK = 64


def s_min(h: float) -> float:
    """Smallest ``s`` at which lattice heat data are compared with the continuum."""
    return 10.0 * h * h


def boundary_layer(s: float) -> float:
    """Distance from the box boundary excluded from bulk statistics."""
    return 6.0 * math.sqrt(s)


def bulk_radius(grid: Grid, s: float) -> float:
    """Radius of the largest origin-centred ball clear of the boundary layer."""
    return grid.half_width - boundary_layer(s)


def color_period(s: float, h: float, rho: float = 1e-2) -> int:
    """Lattice period ``p`` with ``exp(-(p h)^2 / 4s) <= rho``.

    Same-colour points are then far enough apart that the off-diagonal
    kernel between them is at most a fraction ``rho`` of the diagonal.
    """
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    return max(1, int(math.ceil(math.sqrt(4.0 * s * math.log(1.0 / rho)) / h)))


# ---------------------------------------------------------------------------
# Propagator
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HeatPropagator:
    op: SparseOperator
    s: float
    coeffs: np.ndarray
    tol: float
    enclosure: tuple[float, float]
    max_error: float

    @property
    def order(self) -> int:
        return int(self.coeffs.size)

    @property
    def affine(self) -> tuple[float, float]:
        """``(alpha, beta)`` with ``t = alpha lambda + beta`` mapping the enclosure to [-1, 1]."""
        lo, hi = self.enclosure
        w = 0.5 * (hi - lo)
        c = 0.5 * (hi + lo)
        return 1.0 / w, -c / w

    def scalar(self, lam) -> np.ndarray:
        """The approximant evaluated at energies ``lam``."""
        alpha, beta = self.affine
        return npcheb.chebval(alpha * np.asarray(lam, dtype=float) + beta, self.coeffs)

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "tol": self.tol,
            "order": self.order,
            "enclosure": list(self.enclosure),
            "certified_error": self.max_error,
        }


def _bessel_coeffs(s: float, lo: float, w: float, n: int) -> np.ndarray:
    k = np.arange(n)
    a = 2.0 * (-1.0) ** k * ive(k, s * w)
    a[0] *= 0.5
    return math.exp(-s * lo) * a


def build_propagator(op: SparseOperator, s: float, tol: float = 1e-10) -> HeatPropagator:
    """Chebyshev propagator for ``exp(-sH)`` certified to ``tol`` on the enclosure.

    The order is the first at which the coefficient tail falls below
    ``tol/10``; the scalar error is then checked at ``10*order`` points.
    """
    if not s >= 0:
        raise ValueError("s must be non-negative")
    if not tol > 0:
        raise ValueError("tol must be positive")
    lo, hi = (float(v) for v in op.spectral_enclosure)
    if hi <= lo:
        hi = lo + 1.0
    if s == 0:
        return HeatPropagator(op, 0.0, np.array([1.0]), tol, (lo, hi), 0.0)
    w = 0.5 * (hi - lo)
    z = s * w
    # Bessel coefficients are negligible well beyond k ~ z; search up to a safe bound
    n_try = int(min(MAX_ORDER + 1, z + 40.0 * math.sqrt(z + 1.0) + 60))
    a = _bessel_coeffs(s, lo, w, n_try)
    tail = np.cumsum(np.abs(a)[::-1])[::-1]
    ok = np.flatnonzero(tail <= tol / 10.0)
    if ok.size == 0 or ok[0] > MAX_ORDER:
        need = float(tail[min(MAX_ORDER, tail.size - 1)]) * 10.0
        raise ValueError(
            f"Chebyshev order would exceed {MAX_ORDER} for s*(hi-lo)={s * (hi - lo):.4g}; "
            f"use tol >= {need:.3g} or a smaller s / coarser enclosure"
        )
    order = max(1, int(ok[0]))
    coeffs = a[:order]
    t = np.cos(np.pi * (np.arange(10 * order) + 0.5) / (10 * order))
    t = np.concatenate([t, [-1.0, 1.0]])
    err = float(np.max(np.abs(npcheb.chebval(t, coeffs) - np.exp(-s * (lo + w * (t + 1.0))))))
    if err > tol:
        raise ValueError(f"certification failed: sampled error {err:.3g} > tol {tol:.3g}")
    return HeatPropagator(op, float(s), coeffs, float(tol), (lo, hi), err)


def _check_vec(prop: HeatPropagator, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != prop.op.dim_matrix:
        raise ValueError(f"vector length {v.shape[0]} != operator dimension {prop.op.dim_matrix}")
    return v


def apply_heat(prop: HeatPropagator, v) -> np.ndarray:
    """``exp(-sH) v`` for a vector or a column block."""
    v = _check_vec(prop, v)
    if prop.s == 0:
        return v.copy()
    alpha, beta = prop.affine
    return chebyshev_block(prop.op.matrix, v, alpha, beta, prop.coeffs)[0]


def _coeff_matrix(props: Sequence[HeatPropagator]) -> np.ndarray:
    order = max(p.order for p in props)
    C = np.zeros((len(props), order))
    for j, p in enumerate(props):
        C[j, : p.order] = p.coeffs
    return C


def apply_heat_many(props: Sequence[HeatPropagator], v) -> np.ndarray:
    """``exp(-s_j H) v`` for several propagators sharing one recurrence.

    All propagators must wrap the same operator and enclosure.  Returns an
    array with a leading axis over ``props``.
    """
    props = list(props)
    if not props:
        raise ValueError("no propagators given")
    op = props[0].op
    enc = props[0].enclosure
    for p in props[1:]:
        if p.op is not op or p.enclosure != enc:
            raise ValueError("propagators must share operator and enclosure")
    v = _check_vec(props[0], v)
    alpha, beta = props[0].affine
    return chebyshev_block(op.matrix, v, alpha, beta, _coeff_matrix(props))


# ---------------------------------------------------------------------------
# Kernel diagonals
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiagonalField:
    """Per-point estimates of the continuum kernel diagonal ``K_s(x, x)``.

    ``indices`` are flat grid indices of the points carried; ``samples``
    holds per-probe estimates in stochastic mode (shape ``(probes, n)``).
    """

    grid: Grid
    indices: np.ndarray
    values: np.ndarray
    mode: str
    s: float
    tol: float
    stderr: np.ndarray | None = None
    probe_count: int = 0
    seed: int | None = None
    period: int | None = None
    samples: np.ndarray | None = None

    @property
    def coords(self) -> np.ndarray:
        return self.grid.coords[self.indices]

    def bulk_mask(self, margin: float | None = None) -> np.ndarray:
        """Points at sup-distance more than ``margin`` (default ``6 sqrt(s)``) from the boundary."""
        margin = boundary_layer(self.s) if margin is None else margin
        return np.max(np.abs(self.coords), axis=1) < self.grid.half_width - margin

    def provenance(self) -> dict:
        return {
            "mode": self.mode,
            "s": self.s,
            "tol": self.tol,
            "probes": self.probe_count,
            "seed": self.seed,
            "color_period": self.period,
            "points": int(self.indices.size),
            "grid": self.grid.to_dict(),
        }

    def write_csv(self, path) -> None:
        x = self.coords
        err = self.stderr if self.stderr is not None else np.zeros_like(self.values)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{a + 1}" for a in range(self.grid.dim)] + ["value", "stderr"])
            for row, v, e in zip(x, self.values, err):
                w.writerow([repr(float(c)) for c in row] + [repr(float(v)), repr(float(e))])


def _resolve_points(grid: Grid, points) -> np.ndarray:
    if points is None:
        return np.arange(grid.size)
    idx = np.asarray(points)
    if idx.dtype == bool:
        if idx.shape != (grid.size,):
            raise ValueError("boolean point mask must cover the grid")
        return np.flatnonzero(idx)
    idx = np.unique(idx.astype(np.int64))
    if idx.size and (idx[0] < 0 or idx[-1] >= grid.size):
        raise ValueError("point index out of range")
    return idx


def heat_diagonals(
    props: Sequence[HeatPropagator],
    mode: str = "exact",
    probes: int = 2,
    seed: int = 0,
    points=None,
    period: int | None = None,
    rho: float = 1e-2,
    column_budget: int = DEFAULT_COLUMN_BUDGET,
    dense_cap: int = 5000,
    block: int = _BLOCK,
) -> list[DiagonalField]:
    """Kernel diagonals for several ``s`` from one shared Chebyshev recurrence.

    mode ``"exact"`` applies the propagator to unit vectors at ``points``
    (all points by default) and needs ``len(points) <= column_budget`` or
    ``N <= dense_cap``.  mode ``"stochastic"`` uses ``probes`` Rademacher
    fields from the counter stream ``(seed, probe)``; with colour period
    ``p`` each field is split into ``p^d`` columns by lattice index mod
    ``p``, and the estimate at ``x`` is ``z(x) (exp(-sH) z_c)(x)`` for the
    colour ``c`` of ``x``.  ``period=None`` picks :func:`color_period` for
    the largest ``s`` with threshold ``rho``; ``period=1`` is plain
    Hutchinson probing.
    """
    props = list(props)
    if not props:
        raise ValueError("no propagators given")
    op = props[0].op
    grid = op.grid
    N = op.dim_matrix
    hd = grid.volume_element
    idx = _resolve_points(grid, points)
    s_list = [p.s for p in props]
    smax = max(s_list)

    def run(X):
        if smax == 0:
            return np.repeat(X[None], len(props), axis=0)
        return apply_heat_many(props, X)

    if mode == "exact":
        if idx.size > column_budget and N > dense_cap:
            raise ValueError(
                f"exact diagonal needs {idx.size} propagator columns, above column_budget={column_budget}; "
                "pass a point subset or use mode='stochastic'"
            )
        diag = np.empty((len(props), idx.size))
        for start in range(0, idx.size, block):
            cols = idx[start : start + block]
            X = np.zeros((N, cols.size))
            X[cols, np.arange(cols.size)] = 1.0
            Y = run(X)
            diag[:, start : start + cols.size] = Y[:, cols, np.arange(cols.size)]
        return [
            DiagonalField(grid, idx, diag[j] / hd, "exact", p.s, p.tol, np.zeros(idx.size))
            for j, p in enumerate(props)
        ]

    if mode != "stochastic":
        raise ValueError(f"unknown mode {mode!r}; expected 'exact' or 'stochastic'")
    if probes < 2:
        raise ValueError("stochastic mode needs at least 2 probes for a variance estimate")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    p = color_period(smax, grid.spacing, rho) if period is None else int(period)
    if p < 1:
        raise ValueError("colour period must be >= 1")
    icoords = grid.integer_coords
    color = np.zeros(N, dtype=np.int64)
    for a in range(grid.dim):
        color = color * p + np.mod(icoords[:, a], p)
    # colours actually present, so empty columns are skipped
    present = np.unique(color)
    samples = np.zeros((len(props), probes, N))
    jobs = [(r, c) for r in range(probes) for c in present]
    signs = {}
    for start in range(0, len(jobs), block):
        chunk = jobs[start : start + block]
        X = np.zeros((N, len(chunk)))
        for i, (r, c) in enumerate(chunk):
            if r not in signs:
                signs[r] = counter_signs(seed, r, icoords)
            m = color == c
            X[m, i] = signs[r][m]
        Y = run(X)
        for i, (r, c) in enumerate(chunk):
            m = color == c
            samples[:, r, m] += X[m, i][None, :] * Y[:, m, i]
    out = []
    for j, prop in enumerate(props):
        smp = samples[j][:, idx] / hd
        mean = smp.mean(axis=0)
        se = smp.std(axis=0, ddof=1) / math.sqrt(probes)
        out.append(DiagonalField(grid, idx, mean, "stochastic", prop.s, prop.tol, se, probes, seed, p, smp))
    return out


def heat_diagonal(prop: HeatPropagator, mode: str = "exact", probes: int = 2, seed: int = 0, **kwargs) -> DiagonalField:
    """Kernel diagonal for a single propagator; see :func:`heat_diagonals`."""
    return heat_diagonals([prop], mode=mode, probes=probes, seed=seed, **kwargs)[0]


# ---------------------------------------------------------------------------
# Weighted traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceEstimate:
    value: float
    stderr: float
    s: float
    mode: str
    probes: int
    seed: int | None
    tol: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _weights_on(field_: DiagonalField, w) -> np.ndarray:
    grid = field_.grid
    if callable(w):
        full = np.asarray(w(grid.coords), dtype=float)
    else:
        full = np.asarray(w, dtype=float)
        if full.ndim == 0:
            full = np.full(grid.size, float(full))
    if full.shape != (grid.size,):
        raise ValueError("weight must be sampled on the operator grid")
    outside = np.ones(grid.size, dtype=bool)
    outside[field_.indices] = False
    if np.any(full[outside] != 0):
        raise ValueError("weight is nonzero at points where the diagonal was not computed")
    return full[field_.indices]


def weighted_heat_trace(source, w, **diag_kwargs) -> TraceEstimate:
    """``h^d sum_x w(x) K_s(x, x)``, approximating ``int w(x) K_s(x, x) dx``.

    ``source`` is a :class:`DiagonalField` or a :class:`HeatPropagator`
    (in which case the diagonal is computed with ``diag_kwargs``).  ``w``
    is a grid array, a scalar or a callable on coordinates.  The stochastic
    standard error comes from the spread of per-probe traces.
    """
    if isinstance(source, HeatPropagator):
        if "points" not in diag_kwargs and not callable(w) and np.ndim(w) == 1:
            diag_kwargs["points"] = np.flatnonzero(np.asarray(w) != 0)
        source = heat_diagonal(source, **diag_kwargs)
    f = source
    weights = _weights_on(f, w)
    hd = f.grid.volume_element
    value = hd * float(np.dot(weights, f.values))
    if f.mode == "stochastic" and f.samples is not None:
        per_probe = hd * (f.samples @ weights)
        se = float(per_probe.std(ddof=1) / math.sqrt(per_probe.size))
    else:
        se = 0.0
    return TraceEstimate(value, se, f.s, f.mode, f.probe_count, f.seed, f.tol)
