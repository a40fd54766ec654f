"""Density-of-states routes and the theorem-level experiments built on them.

Three numeric routes estimate the Laplace transform ``int exp(-s lambda) dnu``:

eigencount
    Dirichlet eigenvalue counts per bin (matrix inertia), Laplace transform
    by the midpoint rule, then a least-squares polynomial in ``1/L`` over a
    family of boxes to remove the surface and corner terms.
ball average
    ``|B_R|^{-1} int_{B_R} K_s(x, x) dx`` on bulk balls, fitted as
    ``a + b/R`` over the admissible radii.
residue
    ``(r - d) Tr(exp(-sH) <x>^{-r})`` on the bulk ball, fitted on the
    weighted volumes ``(r - d) sum <x>^{-r-k}`` (k = 0, 1, 2) of the same
    ball and read off at ``r = d``; in infinite volume this reduces to the
    straight-line fit in ``r - d``.

Quadrature used by :func:`abelian_check` (``d`` = 2 or 3):

* angular: :func:`closedform.sphere_quadrature` with ``n_angle`` nodes
  (64 by default).
* left side ``int_{B_R} F``: Gauss-Legendre, 8 nodes per radial panel of
  width at most 0.5.
* right side ``int <t>^{-dr} F``: the same panels on ``[0, rho_c]`` with
  ``rho_c = 400``, then the trapezoid rule in ``u = log(rho)`` with step
  0.01 on ``[log rho_c, log rho_c + 60/(d(r-1))]``, where the integrand has
  decayed by ``exp(-60)``.  Sampling stops at ``rho = 1e100``; the rest of
  the tail, whose weight is ``exp(-d(r-1)u)``, is closed analytically with
  the last sampled shell value.
* extrapolation: right side linear least squares in ``r - 1`` over
  ``r_grid``; left side at the largest ``R``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .closedform import (
    RadialLimitError,
    asymptotic_limit_potential,
    ball_volume,
    homogeneous_integrated_dos,
    homogeneous_laplace,
    sphere_area,
    sphere_quadrature,
)
from .heat import (
    DiagonalField,
    HeatPropagator,
    boundary_layer,
    build_propagator,
    bulk_radius,
    heat_diagonals,
    s_min,
)
from .lattice import (
    ConstantPotential,
    HalfSpacePotential,
    HomogeneousPotential,
    PotentialSpec,
    SparseOperator,
    ZeroPotential,
    assemble_hamiltonian,
    build_grid,
)
from .spectral import DEFAULT_DENSE_CAP, count_below, dirichlet_eigenpairs

__all__ = [
    "C_WIN",
    "DOSHistogram",
    "trusted_window",
    "eigencount_dos",
    "integrated_dos",
    "IntegratedDOSFit",
    "extrapolated_integrated_dos",
    "fit_inverse_L",
    "projection_dos",
    "LaplaceCurve",
    "laplace_of_histogram",
    "laplace_bins",
    "eigencount_laplace_route",
    "BallAverage",
    "ball_average_route",
    "ResidueFit",
    "fit_residue",
    "default_r_grid",
    "residue_route",
    "AbelianReport",
    "abelian_check",
    "RouteConfig",
    "closed_form_laplace",
    "closed_form_integrated_dos",
    "admissible_s_grid",
    "bulk_diagonals",
    "compare_methods",
    "StabilityReport",
    "stability_experiment",
]

C_WIN = 1.0
"""Trusted window ends at ``C_WIN / h^2``: the lattice dispersion
``(4/h^2) sin^2(kh/2)`` is within ~10% of ``k^2`` there."""


# ---------------------------------------------------------------------------
# Eigencount histograms
# ---------------------------------------------------------------------------

def trusted_window(op: SparseOperator, c_win: float = C_WIN) -> tuple[float, float]:
    lo = float(np.min(op.potential)) if op.potential.size else 0.0
    return lo - 1e-12, c_win / op.grid.spacing**2


@dataclass(frozen=True, eq=False)
class DOSHistogram:
    """Per-bin ``nu``-mass; bins are ``[a, b)`` except the last, which is closed."""

    bin_edges: np.ndarray
    density: np.ndarray
    volume: float
    window: tuple[float, float]
    method: str
    counts: np.ndarray | None = None
    flagged: np.ndarray | None = None

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.density))

    def integrated(self, t) -> np.ndarray | float:
        """``nu((-inf, t])`` from whole bins at or below ``t`` (``t`` an edge for exact values)."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        cum = np.concatenate([[0.0], np.cumsum(self.density)])
        k = np.searchsorted(self.bin_edges, t_arr, side="right") - 1
        k = np.clip(k, 0, self.density.size)
        out = cum[k]
        return float(out[0]) if np.ndim(t) == 0 else out

    def shifted(self, c: float) -> "DOSHistogram":
        lo, hi = self.window
        return DOSHistogram(self.bin_edges + c, self.density.copy(), self.volume, (lo + c, hi + c), self.method, self.counts, self.flagged)

    def to_dict(self) -> dict:
        return {
            "bin_edges": [float(e) for e in self.bin_edges],
            "density": [float(v) for v in self.density],
            "volume": self.volume,
            "window": list(self.window),
            "method": self.method,
        }

    def write_csv(self, path) -> None:
        counts = self.counts if self.counts is not None else np.full(self.density.size, -1)
        flagged = self.flagged if self.flagged is not None else np.zeros(self.density.size, dtype=bool)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count", "mass", "flagged"])
            for a, b, c, m, f in zip(self.bin_edges[:-1], self.bin_edges[1:], counts, self.density, flagged):
                w.writerow([repr(float(a)), repr(float(b)), int(c), repr(float(m)), int(bool(f))])


def _edge_counts(op: SparseOperator, edges: np.ndarray) -> np.ndarray:
    lo, hi = op.spectral_enclosure
    N = op.dim_matrix
    out = np.empty(edges.size, dtype=np.int64)
    for i, e in enumerate(edges):
        if e <= lo:
            out[i] = 0
        elif e > hi:
            out[i] = N
        else:
            out[i] = count_below(op, float(e))
    return out


def eigencount_dos(op: SparseOperator, bins, c_win: float = C_WIN, volume: float | None = None) -> DOSHistogram:
    """``N_L(bin) / (2L)^d`` per bin from inertia counts at the bin edges.

    ``bins`` is an edge array or a bin width (edges then run from just below
    ``min V`` to the top of the trusted window).  Bins reaching outside the
    window are flagged, not dropped.
    """
    if op.grid.boundary != "dirichlet":
        raise ValueError("eigencount_dos needs a Dirichlet grid")
    window = trusted_window(op, c_win)
    if np.ndim(bins) == 0:
        width = float(bins)
        if width <= 0:
            raise ValueError("bin width must be positive")
        start = math.floor(window[0] / width) * width
        n = int(math.ceil((window[1] - start) / width - 1e-9))
        edges = start + width * np.arange(n + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    below = _edge_counts(op, edges[:-1])
    # last bin is closed: eigenvalues exactly at the top edge belong to it
    top = _edge_counts(op, np.array([np.nextafter(edges[-1], np.inf)]))
    cum = np.concatenate([below, top])
    counts = np.diff(cum)
    vol = op.grid.box_volume if volume is None else float(volume)
    flagged = (edges[:-1] < window[0]) | (edges[1:] > window[1] + 1e-9)
    return DOSHistogram(edges, counts / vol, vol, window, "eigencount", counts, flagged)


def integrated_dos(op: SparseOperator, lambdas, volume: float | None = None) -> np.ndarray:
    """``#{lambda_j <= lambda} / (2L)^d`` at each ``lambda`` (inertia counts)."""
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    counts = _edge_counts(op, np.nextafter(lam, np.inf))
    vol = op.grid.box_volume if volume is None else float(volume)
    return counts / vol


def fit_inverse_L(half_widths, values, degree: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least-squares ``v(L) = a + b/L (+ c/L^2 ...)`` per column.

    Returns ``(a, b, rms residual)``.
    """
    L = np.asarray(half_widths, dtype=float)
    V = np.asarray(values, dtype=float)
    squeeze = V.ndim == 1
    if squeeze:
        V = V[:, None]
    if L.size < degree + 1:
        raise ValueError(f"a degree-{degree} fit in 1/L needs at least {degree + 1} boxes")
    A = np.stack([L ** (-k) for k in range(degree + 1)], axis=1)
    coef, *_ = np.linalg.lstsq(A, V, rcond=None)
    resid = np.sqrt(np.mean((A @ coef - V) ** 2, axis=0))
    a, b = coef[0], coef[1]
    if squeeze:
        return a[0], b[0], resid[0]
    return a, b, resid


@dataclass(frozen=True, eq=False)
class IntegratedDOSFit:
    lambdas: np.ndarray
    half_widths: np.ndarray
    raw: np.ndarray
    estimate: np.ndarray
    slope: np.ndarray
    residual: np.ndarray

    def to_dict(self) -> dict:
        return {
            "lambdas": self.lambdas.tolist(),
            "half_widths": self.half_widths.tolist(),
            "raw_at_largest_L": self.raw[-1].tolist(),
            "estimate": self.estimate.tolist(),
            "slope": self.slope.tolist(),
            "residual": self.residual.tolist(),
        }


def box_family(half_width: float, spacing: float, L_min: float | None = None, step: float | None = None) -> np.ndarray:
    """Half-widths from ``L_min`` (default ``L/2``) to ``L`` in steps of ``2h`` by default."""
    L_min = 0.5 * half_width if L_min is None else L_min
    step = 2.0 * spacing if step is None else step
    n = int(round((half_width - L_min) / step))
    Ls = half_width - step * np.arange(n + 1)[::-1]
    return np.round(Ls / spacing) * spacing


def extrapolated_integrated_dos(
    potential,
    dim: int,
    spacing: float,
    half_width: float,
    lambdas,
    L_min: float | None = None,
    step: float | None = None,
) -> IntegratedDOSFit:
    """Integrated DOS with the ``1/L`` boundary term fitted out over a box family.

    Dirichlet counts are low by a surface term proportional to ``1/L``; a
    single box at desk scale is off by ~10% at ``lambda = 1``.  Many boxes
    average out the lattice-count fluctuations that spoil two-point fits.
    """
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    Ls = box_family(half_width, spacing, L_min, step)
    raw = np.empty((Ls.size, lam.size))
    for i, L in enumerate(Ls):
        op = assemble_hamiltonian(build_grid(dim, float(L), spacing, "dirichlet"), potential)
        raw[i] = integrated_dos(op, lam)
    a, b, res = fit_inverse_L(Ls, raw)
    return IntegratedDOSFit(lam, Ls, raw, np.atleast_1d(a), np.atleast_1d(b), np.atleast_1d(res))


@dataclass(frozen=True, eq=False)
class ProjectionDOS:
    interval: tuple[float, float]
    R_grid: np.ndarray
    values: np.ndarray
    flagged: np.ndarray
    eigen_count: int

    def to_dict(self) -> dict:
        return {
            "interval": list(self.interval),
            "R_grid": self.R_grid.tolist(),
            "values": self.values.tolist(),
            "flagged": self.flagged.tolist(),
            "eigen_count": self.eigen_count,
        }


def projection_dos(op: SparseOperator, interval: tuple[float, float], R_grid, dense_cap: int = DEFAULT_DENSE_CAP) -> ProjectionDOS:
    """``sum_{lambda_j in I} ||chi_B psi_j||^2 h^d / |B(0, R)|`` per radius.

    Eigenvectors are normalized in l^2, so ``h^d`` is already absorbed into
    ``psi_j`` and the sum is ``Tr(chi_B P_I chi_B) h^d / |B|`` in continuum
    units.  Radii within ``6 sqrt(1/width)`` of the boundary are flagged.
    """
    R = np.atleast_1d(np.asarray(R_grid, dtype=float))
    a, b = interval
    w, U = dirichlet_eigenpairs(op, (a, b), dense_cap=dense_cap)
    weight = np.sum(U**2, axis=1) if U.size else np.zeros(op.dim_matrix)
    r = op.grid.radius
    vals = np.array([float(np.sum(weight[r < Rk])) / ball_volume(op.grid.dim, Rk) for Rk in R])
    width = max(b - a, 1e-12)
    flagged = R > op.grid.half_width - 6.0 * math.sqrt(1.0 / width)
    return ProjectionDOS((a, b), R, vals, flagged, int(w.size))


# ---------------------------------------------------------------------------
# Laplace curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LaplaceCurve:
    s_grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    method: str
    tail_bound: np.ndarray | None = None
    flagged: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def at(self, s: float) -> float:
        i = np.flatnonzero(np.isclose(self.s_grid, s, rtol=0, atol=1e-12))
        if i.size == 0:
            raise KeyError(f"s={s} not on the curve's grid")
        return float(self.values[i[0]])

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "s_grid": self.s_grid.tolist(),
            "values": self.values.tolist(),
            "stderr": self.stderr.tolist(),
        }
        if self.tail_bound is not None:
            out["tail_bound"] = self.tail_bound.tolist()
        if self.flagged is not None:
            out["flagged"] = [bool(f) for f in self.flagged]
        if self.diagnostics:
            out["diagnostics"] = self.diagnostics
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "value", "stderr"])
            for s, v, e in zip(self.s_grid, self.values, self.stderr):
                w.writerow([repr(float(s)), repr(float(v)), repr(float(e))])


def laplace_of_histogram(hist: DOSHistogram, s_grid) -> LaplaceCurve:
    """Midpoint rule ``sum exp(-s mid) mass``.

    The tail bound is ``exp(-s lambda_max)`` times the free integrated DOS
    density scale, reported relative to the value; points where it exceeds
    10% are flagged.
    """
    s = np.atleast_1d(np.asarray(s_grid, dtype=float))
    vals = np.exp(-np.outer(s, hist.midpoints)) @ hist.density
    lam_max = hist.bin_edges[-1]
    # mass above lam_max weighted by exp(-s lambda) is at most exp(-s lam_max) times the mass
    # beyond; with the Weyl growth of nu that mass contributes <= exp(-s lam_max)(1 + 1/(s lam_max))
    tail = np.exp(-s * lam_max) * max(hist.total_mass, 1e-300) * (1.0 + 1.0 / np.maximum(s * lam_max, 1e-300))
    rel = tail / np.maximum(np.abs(vals), 1e-300)
    return LaplaceCurve(s, vals, np.zeros_like(vals), "eigencount", rel, rel > 0.1)


def laplace_bins(window: tuple[float, float], s_max: float, fine: float | None = None, coarse: float = 0.125) -> np.ndarray:
    """Bin edges for Laplace transforms up to ``s_max``.

    The midpoint rule misplaces an eigenvalue by up to half a bin, a
    relative error ``~ s * width / 2`` in its Laplace weight; at desk-scale
    box sizes the lowest eigenvalues are too few for this to average out.
    Bins are ``fine = 0.04 / s_max`` wide below ``8 / s_max`` (where the
    weights ``exp(-s lambda)`` live) and ``coarse`` above.
    """
    lo, hi = window
    fine = 0.04 / s_max if fine is None else fine
    split = min(hi, max(lo, 0.0) + 8.0 / s_max)
    start = math.floor(lo / fine) * fine
    a = start + fine * np.arange(int(math.ceil((split - start) / fine - 1e-9)) + 1)
    if a[-1] >= hi:
        return a
    n = int(math.ceil((hi - a[-1]) / coarse - 1e-9))
    b = a[-1] + coarse * np.arange(1, n + 1)
    return np.concatenate([a, b])


def eigencount_laplace_route(
    potential,
    dim: int,
    spacing: float,
    half_widths: Sequence[float],
    s_grid,
    bin_width: float | None = None,
    c_win: float = C_WIN,
    degree: int = 1,
) -> LaplaceCurve:
    """Eigencount Laplace curve per box, fitted as a polynomial in ``1/L``.

    The Dirichlet heat trace of a cube carries a surface term ``~1/L`` and
    edge/corner terms down to ``1/L^d``.  The default linear fit removes the
    surface term; the corner term left over is ``~ s/(4 L^2)`` relative,
    under 1% for ``L >= 10, s <= 2`` in d=2.  ``bin_width=None`` uses
    :func:`laplace_bins`.
    """
    s = np.atleast_1d(np.asarray(s_grid, dtype=float))
    Ls = np.asarray(sorted(half_widths), dtype=float)
    per_L = []
    tails = []
    for L in Ls:
        op = assemble_hamiltonian(build_grid(dim, float(L), spacing, "dirichlet"), potential)
        bins = laplace_bins(trusted_window(op, c_win), float(np.max(s))) if bin_width is None else bin_width
        hist = eigencount_dos(op, bins, c_win=c_win)
        curve = laplace_of_histogram(hist, s)
        per_L.append(curve.values)
        tails.append(curve.tail_bound)
    per_L = np.array(per_L)
    deg = min(degree, Ls.size - 1)
    if deg >= 1:
        a, b, res = fit_inverse_L(Ls, per_L, deg)
    else:
        a, b, res = per_L[0], np.zeros_like(s), np.zeros_like(s)
    tail = np.max(np.array(tails), axis=0)
    diag = {
        "half_widths": Ls.tolist(),
        "per_box": per_L.tolist(),
        "slope_1_over_L": np.atleast_1d(b).tolist(),
        "bin_width": bin_width,
        "c_win": c_win,
        "degree": deg,
    }
    return LaplaceCurve(s, np.atleast_1d(a), np.atleast_1d(res), "eigencount", tail, tail > 0.1, diag)


# ---------------------------------------------------------------------------
# Ball averages
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BallAverage:
    s: float
    R_grid: np.ndarray
    averages: np.ndarray
    stderr: np.ndarray
    value: float
    value_stderr: float
    used: np.ndarray
    extrapolation: str = "inverse_R"
    slope: float = 0.0

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "R_grid": self.R_grid.tolist(),
            "averages": self.averages.tolist(),
            "stderr": self.stderr.tolist(),
            "value": self.value,
            "value_stderr": self.value_stderr,
            "used": self.used.tolist(),
            "extrapolation": self.extrapolation,
            "slope": self.slope,
        }


def default_R_grid(grid, s: float, count: int = 8) -> np.ndarray:
    Rb = bulk_radius(grid, s)
    if Rb <= 0:
        return np.empty(0)
    return np.linspace(0.5 * Rb, Rb, count)


def _ball_weights(f: DiagonalField, R: float, lattice_volume: bool) -> tuple[np.ndarray, float]:
    inside = f.grid.radius[f.indices] < R
    vol = inside.sum() * f.grid.volume_element if lattice_volume else ball_volume(f.grid.dim, R)
    return inside.astype(float), vol


def covered_radius(f: DiagonalField) -> float:
    """Largest ``R`` such that every grid point with ``|x| < R`` carries a value."""
    missing = np.ones(f.grid.size, dtype=bool)
    missing[f.indices] = False
    if not missing.any():
        return float("inf")
    return float(np.min(f.grid.radius[missing]))


def ball_average_route(
    source,
    R_grid=None,
    extrapolation: str = "inverse_R",
    n_largest: int = 3,
    lattice_volume: bool = False,
    **diag_kwargs,
) -> BallAverage:
    """``|B_R|^{-1} h^d sum_{|x|<R} K_s(x, x)`` over bulk radii, extrapolated in ``R``.

    ``extrapolation="inverse_R"`` fits ``a + b/R`` over all admissible radii
    and reports ``a``: interfaces through the origin (half-space and other
    homogeneous potentials) shift ball averages by a term ``~1/R``.
    ``"average"`` reports the mean over the ``n_largest`` admissible radii.
    Radii beyond ``L - 6 sqrt(s)`` or beyond the computed points are
    inadmissible.  ``source`` is a :class:`DiagonalField` or a
    :class:`HeatPropagator`.
    """
    if extrapolation not in ("inverse_R", "average"):
        raise ValueError("extrapolation must be 'inverse_R' or 'average'")
    if isinstance(source, HeatPropagator):
        source = heat_diagonals([source], **diag_kwargs)[0]
    f = source
    Rb = min(bulk_radius(f.grid, f.s), covered_radius(f))
    R = default_R_grid(f.grid, f.s) if R_grid is None else np.atleast_1d(np.asarray(R_grid, dtype=float))
    R = R[R <= Rb + 1e-12] if R_grid is None else R
    adm = (R > 0) & (R <= Rb + 1e-12)
    if not np.any(adm):
        need = max(float(np.max(R)) if R.size else 1.0, 1.0) + boundary_layer(f.s)
        raise ValueError(
            f"no admissible radius: bulk radius at s={f.s} is L - 6 sqrt(s) = {bulk_radius(f.grid, f.s):.3g}; "
            f"use L >= {need:.3g} or smaller s (s_min(h) = {s_min(f.grid.spacing):.3g})"
        )
    hd = f.grid.volume_element
    idx_adm = np.flatnonzero(adm)
    avgs = np.full(R.size, np.nan)
    errs = np.full(R.size, np.nan)
    probes = np.zeros((idx_adm.size, 0 if f.samples is None else f.samples.shape[0]))
    for k, i in enumerate(idx_adm):
        w, vol = _ball_weights(f, R[i], lattice_volume)
        avgs[i] = hd * float(w @ f.values) / vol
        if f.samples is not None:
            probes[k] = hd * (f.samples @ w) / vol
            errs[i] = probes[k].std(ddof=1) / math.sqrt(probes.shape[1])
        else:
            errs[i] = 0.0
    used = np.zeros(R.size, dtype=bool)
    if extrapolation == "inverse_R" and idx_adm.size >= 3:
        used[idx_adm] = True
        A = np.stack([np.ones(idx_adm.size), 1.0 / R[idx_adm]], axis=1)
        pinv = np.linalg.pinv(A)
        coef = pinv @ avgs[idx_adm]
        value, slope = float(coef[0]), float(coef[1])
        pp = pinv[0] @ probes if probes.shape[1] else None
        kind = "inverse_R"
    else:
        sel = idx_adm[-n_largest:]
        used[sel] = True
        value, slope = float(np.mean(avgs[sel])), 0.0
        pp = probes[-len(sel):].mean(axis=0) if probes.shape[1] else None
        kind = "average"
    verr = float(pp.std(ddof=1) / math.sqrt(pp.size)) if pp is not None else 0.0
    return BallAverage(f.s, R, avgs, errs, value, verr, used, kind, slope)


# ---------------------------------------------------------------------------
# Residue route
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ResidueFit:
    """Weighted-trace residue data and its extrapolation to ``r = d``.

    ``scaled`` is ``(r-d) Tr(exp(-sH) <x>^{-r})``.  The fit writes it as a
    combination of basis columns whose first column tends to 1 as ``r -> d``
    in infinite volume; ``limit`` is that column's coefficient.  With the
    default basis ``(1, r-d)`` this is the intercept of the straight line
    through ``(r-d, scaled)``.  ``E = limit / d`` and the Laplace estimate
    is ``d E / omega_d``.
    """

    s: float
    d: int
    r_grid: np.ndarray
    scaled: np.ndarray
    basis: np.ndarray
    basis_names: tuple
    coefficients: np.ndarray
    limit: float
    fit_residual: float
    linear_limit: float
    L_adequacy: bool
    half_width: float | None = None

    @property
    def normalization(self) -> np.ndarray:
        return self.basis[:, 0]

    @property
    def corrected(self) -> np.ndarray:
        return self.scaled / self.basis[:, 0]

    @property
    def E(self) -> float:
        return self.limit / self.d

    @property
    def laplace(self) -> float:
        return self.d * self.E / sphere_area(self.d)

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "d": self.d,
            "r_grid": self.r_grid.tolist(),
            "scaled": self.scaled.tolist(),
            "basis": {n: self.basis[:, k].tolist() for k, n in enumerate(self.basis_names)},
            "coefficients": self.coefficients.tolist(),
            "limit": self.limit,
            "fit_residual": self.fit_residual,
            "linear_limit": self.linear_limit,
            "E": self.E,
            "laplace": self.laplace,
            "L_adequacy": self.L_adequacy,
            "half_width": self.half_width,
        }


def _linear_intercept(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    A = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return float(coef[0]), float(coef[1]), resid


def adequacy(r_grid, d: int, half_width: float) -> bool:
    """``(r - d) log(L) >= 2`` for every ``r`` (unit length scale)."""
    r = np.asarray(r_grid, dtype=float)
    return bool(half_width > 1 and np.all((r - d) * math.log(half_width) >= 2.0 - 1e-12))


def fit_residue(
    r_grid,
    scaled,
    d: int,
    s: float = float("nan"),
    basis=None,
    basis_names: Sequence[str] | None = None,
    half_width: float | None = None,
) -> ResidueFit:
    """Least-squares fit of ``scaled`` on ``basis`` columns; ``limit`` is the first coefficient.

    ``basis=None`` uses ``(1, r-d)``: for ``T(r) = c/(r-d) + b`` the scaled
    values are ``c + b (r-d)`` and the limit is ``c`` exactly.
    """
    r = np.asarray(r_grid, dtype=float)
    y = np.asarray(scaled, dtype=float)
    if r.ndim != 1 or r.size < 2 or r.shape != y.shape:
        raise ValueError("need at least two (r, scaled) pairs")
    if np.any(r <= d):
        raise ValueError("every r must exceed d")
    order = np.argsort(r)[::-1]
    r, y = r[order], y[order]
    x = r - d
    if basis is None:
        B = np.stack([np.ones_like(x), x], axis=1)
        names = ("one", "r_minus_d")
    else:
        B = np.asarray(basis, dtype=float)[order]
        names = tuple(basis_names) if basis_names is not None else tuple(f"b{k}" for k in range(B.shape[1]))
    if B.shape[0] < B.shape[1]:
        raise ValueError(f"{B.shape[1]} basis columns need at least as many r values")
    coef, *_ = np.linalg.lstsq(B, y, rcond=None)
    resid = float(np.sqrt(np.mean((B @ coef - y) ** 2)))
    linear, _, _ = _linear_intercept(x, y)
    ok = adequacy(r, d, half_width) if half_width is not None else True
    return ResidueFit(float(s), d, r, y, B, names, coef, float(coef[0]), resid, linear, ok, half_width)


def default_r_grid(d: int, half_width: float, points: int = 5, spread: float = 1.0) -> np.ndarray:
    """``r - d`` from the adequacy floor ``2/log L`` up to ``(1 + spread)`` times it, decreasing."""
    if half_width <= 1:
        raise ValueError("residue route needs L > 1")
    x0 = 2.0 / math.log(half_width) * (1 + 1e-9)
    return d + np.linspace(x0 * (1 + spread), x0, points)


def residue_basis(radii: np.ndarray, r_grid, d: int, h: float, terms: int = 3) -> np.ndarray:
    """Columns ``(r-d) h^d sum <x>^{-r-k} / omega_d`` for ``k < terms``.

    A field whose shell integral behaves like ``rho^{d-1}(A omega_d + C/rho +
    D/rho^2 + ...)`` has weighted trace ``A col_0 + C' col_1 + D' col_2 + ...``
    to the same order; ``col_0`` is the finite-volume normalization (exactly
    1 in infinite volume as ``r -> d``) and the others vanish there like
    ``r - d``.  Interfaces through the origin contribute the ``1/rho`` term.
    """
    jap = np.sqrt(1.0 + np.asarray(radii, dtype=float) ** 2)
    r = np.asarray(r_grid, dtype=float)
    hd = h**d
    out = np.empty((r.size, terms))
    for i, rr in enumerate(r):
        for k in range(terms):
            out[i, k] = (rr - d) * hd * float(np.sum(jap ** (-rr - k))) / sphere_area(d)
    return out


def residue_route(source, s: float | None = None, r_grid=None, terms: int = 3, **diag_kwargs) -> ResidueFit:
    """Residue-route fit for a heat diagonal (or a propagator to compute one from).

    The weighted traces are taken over the bulk ball ``|x| < L - 6 sqrt(s)``
    and fitted on :func:`residue_basis` with ``terms`` columns (``terms=0``
    gives the plain straight-line fit).  Rejects ``r_grid`` violating
    ``(r - d) log L >= 2`` and names the smallest box that would admit it.
    """
    if isinstance(source, HeatPropagator):
        f = heat_diagonals([source], **diag_kwargs)[0]
    elif isinstance(source, SparseOperator):
        if s is None:
            raise ValueError("s required when passing an operator")
        f = heat_diagonals([build_propagator(source, s)], **diag_kwargs)[0]
    else:
        f = source
    grid = f.grid
    d = grid.dim
    L = grid.half_width
    r = default_r_grid(d, L) if r_grid is None else np.sort(np.asarray(r_grid, dtype=float))[::-1]
    if np.any(r <= d):
        raise ValueError("every r must exceed d")
    if not adequacy(r, d, L):
        r_min = float(np.min(r))
        raise ValueError(
            f"(r-d) log L >= 2 fails for r={r_min:.4g} at L={L:g}; "
            f"need L >= {math.exp(2.0 / (r_min - d)):.4g} or r >= {d + 2.0 / math.log(L) if L > 1 else float('inf'):.4g}"
        )
    Rb = min(bulk_radius(grid, f.s), covered_radius(f))
    if Rb <= 0:
        raise ValueError(f"no bulk region at s={f.s}: L - 6 sqrt(s) = {bulk_radius(grid, f.s):.3g}")
    rad = grid.radius[f.indices]
    inside = rad < Rb
    jap = np.sqrt(1.0 + rad[inside] ** 2)
    hd = grid.volume_element
    vals = f.values[inside]
    scaled = np.array([(rr - d) * hd * float(jap ** (-rr) @ vals) for rr in r])
    if terms <= 0:
        return fit_residue(r, scaled, d, s=f.s, half_width=L)
    B = residue_basis(rad[inside], r, d, grid.spacing, terms)
    names = tuple(f"<x>^-(r+{k})" for k in range(terms))
    return fit_residue(r, scaled, d, s=f.s, basis=B, basis_names=names, half_width=L)


# ---------------------------------------------------------------------------
# Abelian comparator
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AbelianReport:
    d: int
    R_grid: np.ndarray
    left: np.ndarray
    r_grid: np.ndarray
    right: np.ndarray
    left_limit: float
    right_limit: float
    scale: float

    @property
    def discrepancy(self) -> float:
        """``|left - right|`` relative to ``sup |F|`` (absolute when F vanishes)."""
        diff = abs(self.left_limit - self.right_limit)
        return diff / self.scale if self.scale > 0 else diff

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "R_grid": self.R_grid.tolist(),
            "left": self.left.tolist(),
            "r_grid": self.r_grid.tolist(),
            "right": self.right.tolist(),
            "left_limit": self.left_limit,
            "right_limit": self.right_limit,
            "sup_abs_F": self.scale,
            "discrepancy": self.discrepancy,
        }


def _gl_panels(a: float, b: float, width: float = 0.5, n: int = 8) -> tuple[np.ndarray, np.ndarray]:
    m = max(1, int(math.ceil((b - a) / width)))
    x, w = np.polynomial.legendre.leggauss(n)
    edges = np.linspace(a, b, m + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _shell_integral(F: Callable, quad, rho: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """``int_{S^{d-1}} F(rho xi) dxi`` for each radius."""
    out = np.empty(rho.size)
    for start in range(0, rho.size, chunk):
        rr = rho[start : start + chunk]
        pts = rr[:, None, None] * quad.nodes[None, :, :]
        vals = np.asarray(F(pts.reshape(-1, quad.dim)), dtype=float).reshape(rr.size, -1)
        out[start : start + chunk] = vals @ quad.weights
    return out


_U_CAP = math.log(1e100)


def abelian_check(
    F: Callable[[np.ndarray], np.ndarray],
    d: int = 2,
    r_grid=None,
    R_grid=None,
    n_angle: int = 64,
    rho_c: float = 400.0,
) -> AbelianReport:
    """Ball averages of ``F`` against ``(r-1)/|B_1| int <t>^{-dr} F dt``.

    See the module docstring for the quadrature grids.
    """
    r = np.asarray([1.02, 1.04, 1.06, 1.08, 1.1] if r_grid is None else r_grid, dtype=float)
    R = np.asarray([100.0, 200.0, 400.0] if R_grid is None else R_grid, dtype=float)
    if np.any(r <= 1):
        raise ValueError("abelian_check needs r > 1")
    quad = sphere_quadrature(d, n_angle) if d > 1 else sphere_quadrature(1)
    b1 = ball_volume(d, 1.0)
    Rmax = float(np.max(R))
    nodes, weights = _gl_panels(0.0, max(Rmax, rho_c))
    shell = _shell_integral(F, quad, nodes)
    base = nodes ** (d - 1) * shell * weights
    left = np.array([float(np.sum(base[nodes < Rk])) / ball_volume(d, Rk) for Rk in R])
    # sup|F| is sampled on the quadrature points themselves
    pts_sup = 0.0
    for start in range(0, nodes.size, 4096):
        rr = nodes[start : start + 4096]
        vals = np.asarray(F((rr[:, None, None] * quad.nodes[None]).reshape(-1, d)), dtype=float)
        pts_sup = max(pts_sup, float(np.max(np.abs(vals))) if vals.size else 0.0)
    inner = nodes < rho_c
    right = np.empty(r.size)
    for i, rr in enumerate(r):
        w_in = (1.0 + nodes[inner] ** 2) ** (-d * rr / 2.0)
        part = float(np.sum(base[inner] * w_in))
        u0 = math.log(rho_c)
        u1 = min(u0 + 60.0 / (d * (rr - 1.0)), _U_CAP)
        u = np.arange(u0, u1 + 0.005, 0.01)
        rho = np.exp(u)
        tail_shell = _shell_integral(F, quad, rho)
        # rho^d <rho>^{-dr} in log space; (1 + rho^2) overflows long before u1
        log_w = d * u - 0.5 * d * rr * np.logaddexp(0.0, 2.0 * u)
        tail = float(np.trapezoid(np.exp(log_w) * tail_shell, u))
        if u1 < u0 + 60.0 / (d * (rr - 1.0)):
            # beyond the cap the weight is exp(-d(r-1)u); close with the last shell value
            tail += float(np.exp(log_w[-1]) * tail_shell[-1] / (d * (rr - 1.0)))
        right[i] = (rr - 1.0) * (part + tail) / b1
    right_limit, _, _ = _linear_intercept(r - 1.0, right)
    return AbelianReport(d, R, left, r, right, float(left[np.argmax(R)]), right_limit, pts_sup)


# ---------------------------------------------------------------------------
# Route comparison
# ---------------------------------------------------------------------------

@dataclass
class RouteConfig:
    """Inputs shared by all routes of one comparison."""

    dim: int = 2
    spacing: float = 0.25
    half_width: float = 20.0
    potential: PotentialSpec = field(default_factory=ZeroPotential)
    s_grid: tuple = (1.0, 2.0)
    eigencount_half_widths: tuple | None = None
    bin_width: float | None = None
    c_win: float = C_WIN
    heat_tol: float = 1e-10
    probes: int = 2
    seed: int = 0
    rho: float = 1e-2
    r_grid: tuple | None = None
    R_grid: tuple | None = None
    tolerance: float = 0.05
    closed_form_tolerance: float = 0.05

    def eigencount_boxes(self) -> list[float]:
        if self.eigencount_half_widths is not None:
            return [float(L) for L in self.eigencount_half_widths]
        h = self.spacing
        return [h * round(f * self.half_width / h) for f in (0.5, 0.75, 1.0)]


def _radially_constant(spec: PotentialSpec) -> bool:
    return isinstance(spec, (ZeroPotential, ConstantPotential, HalfSpacePotential, HomogeneousPotential))


def closed_form_laplace(spec: PotentialSpec, dim: int, s_grid, n_quad: int = 256) -> tuple[np.ndarray | None, str]:
    """Closed-form Laplace curve, via the radial limit for non-homogeneous specs.

    Returns ``(None, reason)`` when no closed form applies.
    """
    quad = sphere_quadrature(dim, n_quad)
    s = np.atleast_1d(np.asarray(s_grid, dtype=float))
    if _radially_constant(spec):
        return np.atleast_1d(homogeneous_laplace(spec, quad, dim, s)), "homogeneous"
    if dim not in (2, 3):
        return None, "radial limit tabulation needs d in {2, 3}"
    try:
        limit = asymptotic_limit_potential(spec, dim=dim)
    except RadialLimitError as exc:
        return None, f"no radial limit: {exc}"
    return np.atleast_1d(homogeneous_laplace(limit, quad, dim, s)), "asymptotic"


def closed_form_integrated_dos(spec: PotentialSpec, dim: int, lambdas, n_quad: int = 256) -> np.ndarray | None:
    """Closed-form ``nu((-inf, lambda])``, via the radial limit when needed; ``None`` if none applies."""
    quad = sphere_quadrature(dim, n_quad)
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if _radially_constant(spec):
        return np.atleast_1d(homogeneous_integrated_dos(spec, quad, lam))
    if dim not in (2, 3):
        return None
    try:
        limit = asymptotic_limit_potential(spec, dim=dim)
    except RadialLimitError:
        return None
    return np.atleast_1d(homogeneous_integrated_dos(limit, quad, lam))


def admissible_s_grid(s_grid, spacing: float, half_width: float, c_win: float = C_WIN) -> tuple[np.ndarray, list[dict]]:
    """Keep the ``s`` values inside the trusted window, report the others.

    An ``s`` is admissible when ``s >= s_min(h)``, the eigencount tail bound
    ``exp(-s c_win/h^2)`` is under 1% and a bulk ball survives the boundary
    layer.  Raises ``ValueError`` when nothing is left.
    """
    kept, excluded = [], []
    smin = s_min(spacing)
    top = c_win / spacing**2
    for s in np.asarray(s_grid, dtype=float):
        if s < smin:
            excluded.append({"s": float(s), "reason": f"below s_min(h) = {smin:.6g}"})
        elif math.exp(-s * top) > 0.01:
            excluded.append({"s": float(s), "reason": "eigencount tail bound above 1%"})
        elif half_width - boundary_layer(float(s)) <= 0:
            excluded.append({"s": float(s), "reason": "boundary layer covers the box"})
        else:
            kept.append(float(s))
    if not kept:
        raise ValueError("no admissible s in the requested grid: " + "; ".join(f"s={e['s']:g}: {e['reason']}" for e in excluded))
    return np.asarray(kept), excluded


def bulk_diagonals(
    op: SparseOperator,
    s_grid,
    heat_tol: float = 1e-10,
    probes: int = 2,
    seed: int = 0,
    rho: float = 1e-2,
    exact_limit: int = 4096,
) -> tuple[list, list[DiagonalField]]:
    """Heat-kernel diagonals on the bulk ball of the smallest ``s``.

    Exact columns when at most ``exact_limit`` points are needed, coloured
    probes otherwise.
    """
    s_grid = np.atleast_1d(np.asarray(s_grid, dtype=float))
    grid = op.grid
    props = [build_propagator(op, float(s), heat_tol) for s in s_grid]
    Rb = bulk_radius(grid, float(np.min(s_grid)))
    points = np.flatnonzero(grid.radius < max(Rb, 0.0))
    if points.size == 0:
        raise ValueError(f"no bulk points at s={float(np.min(s_grid)):g} on L={grid.half_width:g}")
    if points.size <= exact_limit:
        fields = heat_diagonals(props, mode="exact", points=points)
    else:
        fields = heat_diagonals(props, mode="stochastic", probes=probes, seed=seed, rho=rho, points=points)
    return props, fields


def compare_methods(config: RouteConfig) -> dict:
    """Eigencount, ball-average and residue Laplace estimates per ``s`` plus closed form.

    Pairwise relative deviations are ``|a - b| / |b|`` with ``b`` the
    closed form when present, else the eigencount value.
    """
    cfg = config
    s_grid, excluded = admissible_s_grid(cfg.s_grid, cfg.spacing, cfg.half_width, cfg.c_win)
    smin = s_min(cfg.spacing)
    eig = eigencount_laplace_route(cfg.potential, cfg.dim, cfg.spacing, cfg.eigencount_boxes(), s_grid, cfg.bin_width, cfg.c_win)
    grid = build_grid(cfg.dim, cfg.half_width, cfg.spacing, "dirichlet")
    op = assemble_hamiltonian(grid, cfg.potential)
    props, fields = bulk_diagonals(op, s_grid, cfg.heat_tol, cfg.probes, cfg.seed, cfg.rho)
    closed, closed_kind = closed_form_laplace(cfg.potential, cfg.dim, s_grid)
    rows = []
    passed = True
    for j, s in enumerate(s_grid):
        ball = ball_average_route(fields[j], R_grid=cfg.R_grid)
        res = residue_route(fields[j], r_grid=cfg.r_grid)
        vals = {"eigencount": float(eig.values[j]), "ball_average": ball.value, "residue": res.laplace}
        if closed is not None:
            vals["closed_form"] = float(closed[j])
        names = ["eigencount", "ball_average", "residue"]
        pairs = {}
        for a in range(3):
            for b in range(a + 1, 3):
                x, y = vals[names[a]], vals[names[b]]
                pairs[f"{names[a]}~{names[b]}"] = abs(x - y) / abs(y)
        vs_closed = {}
        if closed is not None:
            for n in names:
                vs_closed[n] = abs(vals[n] - vals["closed_form"]) / abs(vals["closed_form"])
        ok = max(pairs.values()) <= cfg.tolerance and res.L_adequacy
        if vs_closed:
            ok = ok and max(vs_closed.values()) <= cfg.closed_form_tolerance
        passed &= ok
        rows.append(
            {
                "s": float(s),
                "values": vals,
                "pairwise": pairs,
                "vs_closed_form": vs_closed,
                "pass": bool(ok),
                "ball_average": ball.to_dict(),
                "residue": res.to_dict(),
            }
        )
    return {
        "s_grid": s_grid.tolist(),
        "s_excluded": excluded,
        "s_min": smin,
        "closed_form": closed_kind if closed is not None else None,
        "eigencount": eig.to_dict(),
        "heat": [f.provenance() for f in fields],
        "propagators": [p.to_dict() for p in props],
        "rows": rows,
        "pass": bool(passed),
    }


# ---------------------------------------------------------------------------
# Stability under localized perturbations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StabilityReport:
    half_widths: np.ndarray
    s_grid: np.ndarray
    base: np.ndarray
    perturbed: np.ndarray
    rel_diff: np.ndarray
    diff_stderr: np.ndarray

    @property
    def monotone(self) -> list[bool]:
        return [bool(np.all(np.diff(self.rel_diff[:, j]) < 0)) for j in range(self.s_grid.size)]

    def passes(self, tolerance: float = 0.01) -> bool:
        return bool(np.all(self.rel_diff[-1] <= tolerance) and all(self.monotone))

    def to_dict(self, tolerance: float = 0.01) -> dict:
        return {
            "half_widths": self.half_widths.tolist(),
            "s_grid": self.s_grid.tolist(),
            "base": self.base.tolist(),
            "perturbed": self.perturbed.tolist(),
            "rel_diff": self.rel_diff.tolist(),
            "diff_stderr": self.diff_stderr.tolist(),
            "monotone": self.monotone,
            "tolerance": tolerance,
            "pass": self.passes(tolerance),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["L", "s", "base", "perturbed", "rel_diff", "diff_stderr"])
            for i, L in enumerate(self.half_widths):
                for j, s in enumerate(self.s_grid):
                    w.writerow([repr(float(L)), repr(float(s)), repr(float(self.base[i, j])), repr(float(self.perturbed[i, j])), repr(float(self.rel_diff[i, j])), repr(float(self.diff_stderr[i, j]))])


def stability_experiment(
    potential: PotentialSpec,
    perturbation: PotentialSpec,
    dim: int = 2,
    spacing: float = 0.25,
    half_widths: Sequence[float] = (10.0, 20.0, 40.0),
    s_grid=(1.0, 2.0),
    probes: int = 64,
    seed: int = 0,
    heat_tol: float = 1e-10,
) -> StabilityReport:
    """Ball-average Laplace values for ``V`` and ``V + V0`` on growing boxes.

    Both operators see the same Rademacher probes (plain, uncoloured), so
    the noise in the difference comes only from the localized operator
    ``exp(-s(H+V0)) - exp(-sH)``.  The ball is the largest bulk ball.
    """
    s = np.asarray(s_grid, dtype=float)
    Ls = np.asarray(half_widths, dtype=float)
    base = np.empty((Ls.size, s.size))
    pert = np.empty_like(base)
    rel = np.empty_like(base)
    err = np.empty_like(base)
    for i, L in enumerate(Ls):
        grid = build_grid(dim, float(L), spacing, "dirichlet")
        fields = []
        for spec in (potential, potential + perturbation):
            op = assemble_hamiltonian(grid, spec)
            props = [build_propagator(op, float(x), heat_tol) for x in s]
            fields.append(heat_diagonals(props, mode="stochastic", probes=probes, seed=seed, period=1))
        for j, sj in enumerate(s):
            Rb = bulk_radius(grid, sj)
            if Rb <= 0:
                raise ValueError(f"L={L:g} leaves no bulk ball at s={sj:g}")
            f0, f1 = fields[0][j], fields[1][j]
            w = (grid.radius[f0.indices] < Rb).astype(float)
            vol = ball_volume(dim, Rb)
            hd = grid.volume_element
            p0 = hd * (f0.samples @ w) / vol
            p1 = hd * (f1.samples @ w) / vol
            base[i, j] = p0.mean()
            pert[i, j] = p1.mean()
            dd = p1 - p0
            rel[i, j] = abs(dd.mean()) / abs(base[i, j])
            err[i, j] = dd.std(ddof=1) / math.sqrt(dd.size) / abs(base[i, j])
    return StabilityReport(Ls, s, base, pert, rel, err)
