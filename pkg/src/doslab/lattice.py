"""Cubic lattice truncations, potential descriptions and the discrete Hamiltonian.

Points of a grid are enumerated lexicographically in their integer
coordinates, first axis slowest (numpy C order of ``meshgrid(..., indexing="ij")``).

Dirichlet grids hold the interior points ``x = h*k`` with ``|x_i| < L``;
periodic grids hold ``2L/h`` points per axis starting at ``-L``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels

__all__ = [
    "Grid",
    "build_grid",
    "PotentialSpec",
    "ZeroPotential",
    "ConstantPotential",
    "HalfSpacePotential",
    "HomogeneousPotential",
    "PeriodicPotential",
    "BumpPotential",
    "RandomPotential",
    "SumPotential",
    "potential_from_dict",
    "potential_from_json",
    "sample_potential",
    "SparseOperator",
    "assemble_hamiltonian",
    "MAX_DIM",
]

MAX_DIM = 3
_RATIO_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    dim: int
    half_width: float
    spacing: float
    boundary: str = "dirichlet"

    @property
    def cells(self) -> int:
        """``L/h`` as an integer."""
        return int(round(self.half_width / self.spacing))

    @property
    def n(self) -> int:
        """Points per axis."""
        m = 2 * self.cells
        return m - 1 if self.boundary == "dirichlet" else m

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def volume_element(self) -> float:
        return self.spacing**self.dim

    @property
    def box_volume(self) -> float:
        return (2.0 * self.half_width) ** self.dim

    @cached_property
    def integer_axis(self) -> np.ndarray:
        m = self.cells
        if self.boundary == "dirichlet":
            return np.arange(-(m - 1), m, dtype=np.int64)
        return np.arange(-m, m, dtype=np.int64)

    @cached_property
    def axis(self) -> np.ndarray:
        return self.spacing * self.integer_axis.astype(float)

    @cached_property
    def integer_coords(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.integer_axis] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    @cached_property
    def coords(self) -> np.ndarray:
        """Point coordinates, shape ``(size, dim)``."""
        return self.spacing * self.integer_coords.astype(float)

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(np.sum(self.coords**2, axis=1))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "half_width": self.half_width,
            "spacing": self.spacing,
            "boundary": self.boundary,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Grid":
        return build_grid(
            int(data["dim"]),
            float(data["half_width"]),
            float(data["spacing"]),
            data.get("boundary", "dirichlet"),
        )


def build_grid(dim: int, half_width: float, spacing: float, boundary: str = "dirichlet") -> Grid:
    """Validate parameters and return a :class:`Grid`.

    Raises ``ValueError`` when ``half_width/spacing`` is not a positive
    integer, when ``dim`` is outside ``1..3`` or the boundary flag is unknown.
    """
    if int(dim) != dim or dim < 1:
        raise ValueError(f"dim must be a positive integer, got {dim!r}")
    if dim > MAX_DIM:
        raise ValueError(f"dim={dim} rejected: grids above {MAX_DIM} dimensions exceed the memory guard")
    if boundary not in ("dirichlet", "periodic"):
        raise ValueError(f"boundary must be 'dirichlet' or 'periodic', got {boundary!r}")
    if not (half_width > 0 and spacing > 0):
        raise ValueError("half_width and spacing must be positive")
    ratio = half_width / spacing
    m = round(ratio)
    if m < 1 or abs(ratio - m) > _RATIO_TOL * max(1.0, ratio):
        raise ValueError(
            f"half_width/spacing = {half_width}/{spacing} = {ratio:.12g} is not a positive integer"
        )
    grid = Grid(int(dim), float(half_width), float(spacing), boundary)
    if grid.n < 1:
        raise ValueError("grid has no interior points")
    if boundary == "periodic" and grid.n < 3:
        raise ValueError("periodic grids need at least 3 points per axis")
    return grid


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------

class PotentialSpec:
    """Base class of the declarative potential descriptions.

    Subclasses evaluate on arbitrary coordinate arrays of shape ``(n, d)``
    and serialize to a JSON object carrying a ``"kind"`` discriminator.
    """

    kind: str = ""
    dim: int | None = None  # None means "any dimension"

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def check_dim(self, dim: int) -> None:
        if self.dim is not None and self.dim != dim:
            raise ValueError(f"{self.kind} potential is defined for d={self.dim}, grid has d={dim}")

    def __add__(self, other: "PotentialSpec") -> "SumPotential":
        return SumPotential((self, other))


@dataclass(frozen=True)
class ZeroPotential(PotentialSpec):
    kind = "zero"

    def evaluate(self, points):
        return np.zeros(np.asarray(points).shape[0])

    def to_dict(self):
        return {"kind": "zero"}


@dataclass(frozen=True)
class ConstantPotential(PotentialSpec):
    value: float
    kind = "constant"

    def evaluate(self, points):
        return np.full(np.asarray(points).shape[0], float(self.value))

    def to_dict(self):
        return {"kind": "constant", "c": self.value}


@dataclass(frozen=True)
class HalfSpacePotential(PotentialSpec):
    """``a`` on ``{sign * x_axis > 0}``, ``0`` on the other side.

    ``axis`` is 1-based.  Points on the hyperplane get ``a/2``: lattice
    points do sit on it, and the midpoint keeps the reflection symmetry.
    """

    level: float
    axis: int = 1
    sign: int = 1
    kind = "half_space"

    def __post_init__(self):
        if self.axis < 1:
            raise ValueError("half_space axis is 1-based")
        if self.sign not in (1, -1):
            raise ValueError("half_space sign must be +1 or -1")

    def check_dim(self, dim):
        if self.axis > dim:
            raise ValueError(f"half_space axis {self.axis} exceeds d={dim}")

    def evaluate(self, points):
        pts = np.asarray(points, dtype=float)
        t = self.sign * pts[:, self.axis - 1]
        return np.where(t > 0, float(self.level), np.where(t < 0, 0.0, 0.5 * self.level))

    def angular_values(self) -> tuple[float, float]:
        """The two values taken on the sphere (each on half of it)."""
        return 0.0, float(self.level)

    def to_dict(self):
        return {"kind": "half_space", "a": self.level, "axis": self.axis, "sign": self.sign}


@dataclass(frozen=True)
class HomogeneousPotential(PotentialSpec):
    """Positively homogeneous potential given by an angular table.

    d=2: ``values[j]`` at angle ``2*pi*j/m``, nearest-angle lookup.
    d=3: ``values[i, j]`` at polar angle ``pi*i/(n_theta-1)`` and azimuth
    ``2*pi*j/n_phi``, bilinear interpolation (periodic in azimuth).
    The origin takes the angular mean.
    """

    values: tuple
    dim: int = 2
    kind = "homogeneous"

    def __post_init__(self):
        table = np.asarray(self.values, dtype=float)
        if self.dim == 2:
            if table.ndim != 1 or table.size < 1:
                raise ValueError("d=2 angular table must be a non-empty 1-D array")
        elif self.dim == 3:
            if table.ndim != 2 or table.shape[0] < 2 or table.shape[1] < 1:
                raise ValueError("d=3 angular table must have shape (n_theta >= 2, n_phi >= 1)")
        else:
            raise ValueError("homogeneous potentials need d in {2, 3}")
        if not np.all(np.isfinite(table)):
            raise ValueError("angular table must be finite")
        # store as nested tuples so the dataclass stays hashable
        object.__setattr__(self, "values", _freeze(table))

    @property
    def table(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @classmethod
    def from_function(cls, func: Callable[[np.ndarray], np.ndarray], dim: int = 2, resolution: int = 720):
        """Tabulate ``func`` (acting on unit vectors ``(n, d)``) on the table nodes."""
        if dim == 2:
            theta = 2 * np.pi * np.arange(resolution) / resolution
            nodes = np.stack([np.cos(theta), np.sin(theta)], axis=1)
            return cls(tuple(np.asarray(func(nodes), dtype=float)), 2)
        n_theta = max(2, resolution // 2 + 1)
        n_phi = resolution
        th = np.pi * np.arange(n_theta) / (n_theta - 1)
        ph = 2 * np.pi * np.arange(n_phi) / n_phi
        T, P = np.meshgrid(th, ph, indexing="ij")
        nodes = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
        vals = np.asarray(func(nodes), dtype=float).reshape(n_theta, n_phi)
        return cls(_freeze(vals), 3)

    def angular_mean(self) -> float:
        table = self.table
        if self.dim == 2:
            return float(table.mean())
        n_theta = table.shape[0]
        th = np.pi * np.arange(n_theta) / (n_theta - 1)
        w = np.sin(th)
        if n_theta > 1:
            # trapezoid in theta with sin weights, uniform in phi
            w = w * (np.pi / (n_theta - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
        row = table.mean(axis=1)
        return float(np.sum(w * row) / np.sum(w)) if np.sum(w) > 0 else float(row.mean())

    def angular(self, directions: np.ndarray) -> np.ndarray:
        """Table lookup for unit (or any nonzero) direction vectors."""
        pts = np.asarray(directions, dtype=float)
        table = self.table
        if self.dim == 2:
            m = table.size
            theta = np.arctan2(pts[:, 1], pts[:, 0])
            idx = np.rint(theta * (m / (2 * np.pi))).astype(np.int64) % m
            return table[idx]
        n_theta, n_phi = table.shape
        rho = np.hypot(pts[:, 0], pts[:, 1])
        theta = np.arctan2(rho, pts[:, 2])
        phi = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi)
        ti = theta * ((n_theta - 1) / np.pi)
        i0 = np.clip(np.floor(ti).astype(np.int64), 0, n_theta - 2)
        ft = ti - i0
        pj = phi * (n_phi / (2 * np.pi))
        j0 = np.floor(pj).astype(np.int64) % n_phi
        fp = pj - np.floor(pj)
        j1 = (j0 + 1) % n_phi
        return (
            (1 - ft) * (1 - fp) * table[i0, j0]
            + (1 - ft) * fp * table[i0, j1]
            + ft * (1 - fp) * table[i0 + 1, j0]
            + ft * fp * table[i0 + 1, j1]
        )

    def evaluate(self, points):
        pts = np.asarray(points, dtype=float)
        out = np.empty(pts.shape[0])
        origin = ~np.any(pts != 0.0, axis=1)
        out[origin] = self.angular_mean()
        if np.any(~origin):
            out[~origin] = self.angular(pts[~origin])
        return out

    def to_dict(self):
        return {"kind": "homogeneous", "dim": self.dim, "angular": _thaw(self.values)}


@dataclass(frozen=True)
class PeriodicPotential(PotentialSpec):
    """Piecewise-constant periodic potential.

    ``samples`` has one axis per dimension; sample ``i`` along axis ``a``
    covers ``[i, i+1) * cell[a] / m_a`` modulo ``cell[a]``.
    """

    cell: tuple
    samples: tuple
    kind = "periodic"

    def __post_init__(self):
        cell = tuple(float(c) for c in np.atleast_1d(self.cell))
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != len(cell) or any(c <= 0 for c in cell) or arr.size == 0:
            raise ValueError("periodic potential needs one positive cell length per samples axis")
        object.__setattr__(self, "cell", cell)
        object.__setattr__(self, "samples", _freeze(arr))

    @property
    def dim(self):
        return len(self.cell)

    def evaluate(self, points):
        pts = np.asarray(points, dtype=float)
        arr = np.asarray(self.samples, dtype=float)
        idx = []
        for a, c in enumerate(self.cell):
            frac = np.mod(pts[:, a], c) / c
            idx.append(np.minimum((frac * arr.shape[a]).astype(np.int64), arr.shape[a] - 1))
        return arr[tuple(idx)]

    def to_dict(self):
        return {"kind": "periodic", "cell": list(self.cell), "samples": _thaw(self.samples)}


@dataclass(frozen=True)
class BumpPotential(PotentialSpec):
    """Localized bump: ``A exp(-|x-c|^2/r^2)`` or ``A * 1{|x-c| < r}``."""

    amplitude: float
    radius: float
    center: tuple = ()
    profile: str = "gaussian"
    kind = "bump"

    def __post_init__(self):
        if self.profile not in ("gaussian", "indicator"):
            raise ValueError("bump profile must be 'gaussian' or 'indicator'")
        if self.radius <= 0:
            raise ValueError("bump radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def check_dim(self, dim):
        if self.center and len(self.center) != dim:
            raise ValueError(f"bump center has {len(self.center)} coordinates, grid has d={dim}")

    def evaluate(self, points):
        pts = np.asarray(points, dtype=float)
        c = np.asarray(self.center) if self.center else np.zeros(pts.shape[1])
        r2 = np.sum((pts - c) ** 2, axis=1) / self.radius**2
        if self.profile == "gaussian":
            return self.amplitude * np.exp(-r2)
        return np.where(r2 < 1.0, float(self.amplitude), 0.0)

    def to_dict(self):
        return {
            "kind": "bump",
            "amplitude": self.amplitude,
            "radius": self.radius,
            "center": list(self.center),
            "profile": self.profile,
        }


@dataclass(frozen=True)
class RandomPotential(PotentialSpec):
    """I.i.d. uniform[-amplitude, amplitude] values, constant on cubes of side ``cell``.

    The value on the cube with integer index ``k`` is drawn from the
    counter-based stream keyed by ``(seed, k)`` so it does not depend on the
    grid or on evaluation order.
    """

    seed: int
    amplitude: float
    cell: float = 1.0
    kind = "random"

    def __post_init__(self):
        if self.cell <= 0:
            raise ValueError("random potential cell must be positive")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("random potential seed must be a non-negative integer")

    def evaluate(self, points):
        pts = np.asarray(points, dtype=float)
        cells = np.floor(pts / self.cell).astype(np.int64)
        u = kernels.counter_uniform(int(self.seed), 0, cells)
        return self.amplitude * (2.0 * u - 1.0)

    def to_dict(self):
        return {"kind": "random", "seed": self.seed, "amplitude": self.amplitude, "cell": self.cell}


@dataclass(frozen=True)
class SumPotential(PotentialSpec):
    terms: tuple = field(default_factory=tuple)
    kind = "sum"

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    def check_dim(self, dim):
        for t in self.terms:
            t.check_dim(dim)

    def evaluate(self, points):
        pts = np.asarray(points, dtype=float)
        out = np.zeros(pts.shape[0])
        for t in self.terms:
            out = out + t.evaluate(pts)
        return out

    def to_dict(self):
        return {"kind": "sum", "terms": [t.to_dict() for t in self.terms]}


def _freeze(arr) -> tuple:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim <= 1:
        return tuple(float(v) for v in np.atleast_1d(arr))
    return tuple(_freeze(row) for row in arr)


def _thaw(values):
    if isinstance(values, tuple):
        return [_thaw(v) for v in values]
    return values


def potential_from_dict(data: dict) -> PotentialSpec:
    """Inverse of ``PotentialSpec.to_dict``; raises ``ValueError`` on bad input."""
    if not isinstance(data, dict) or "kind" not in data:
        raise ValueError("potential must be a JSON object with a 'kind' field")
    kind = data["kind"]
    try:
        if kind == "zero":
            return ZeroPotential()
        if kind == "constant":
            return ConstantPotential(float(data["c"]))
        if kind == "half_space":
            return HalfSpacePotential(float(data["a"]), int(data.get("axis", 1)), int(data.get("sign", 1)))
        if kind == "homogeneous":
            return HomogeneousPotential(_freeze(np.asarray(data["angular"], dtype=float)), int(data.get("dim", 2)))
        if kind == "periodic":
            return PeriodicPotential(tuple(data["cell"]), _freeze(np.asarray(data["samples"], dtype=float)))
        if kind == "bump":
            return BumpPotential(
                float(data["amplitude"]),
                float(data["radius"]),
                tuple(data.get("center", ())),
                data.get("profile", "gaussian"),
            )
        if kind == "random":
            return RandomPotential(int(data["seed"]), float(data["amplitude"]), float(data.get("cell", 1.0)))
        if kind == "sum":
            return SumPotential(tuple(potential_from_dict(t) for t in data["terms"]))
    except KeyError as exc:
        raise ValueError(f"potential kind {kind!r} is missing field {exc.args[0]!r}") from None
    raise ValueError(f"unknown potential kind {kind!r}")


def potential_from_json(text: str) -> PotentialSpec:
    return potential_from_dict(json.loads(text))


def sample_potential(spec: PotentialSpec, grid: Grid) -> np.ndarray:
    """Evaluate ``spec`` at the grid points (lexicographic order)."""
    spec.check_dim(grid.dim)
    values = np.asarray(spec.evaluate(grid.coords), dtype=float)
    if values.shape != (grid.size,):
        raise ValueError("potential evaluation returned the wrong shape")
    if not np.all(np.isfinite(values)):
        raise ValueError("sampled potential is not finite")
    return values


# ---------------------------------------------------------------------------
# Hamiltonian
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Discretized ``H = -Laplacian + V`` on a grid.

    ``matrix`` is CSR, exactly symmetric; ``spectral_enclosure`` is the
    Gershgorin interval ``[min V, 4d/h^2 + max V]``.
    """

    matrix: sp.csr_matrix
    grid: Grid
    potential: np.ndarray
    spectral_enclosure: tuple[float, float]

    @property
    def dim_matrix(self) -> int:
        return self.matrix.shape[0]

    @property
    def spacing_scale(self) -> float:
        return self.grid.volume_element

    @property
    def potential_sup(self) -> float:
        return float(np.max(np.abs(self.potential))) if self.potential.size else 0.0

    def shifted(self, c: float) -> "SparseOperator":
        """``H + c I`` (potential shifted by ``c``)."""
        return assemble_hamiltonian(self.grid, self.potential + c)

    def gershgorin_discs(self) -> tuple[np.ndarray, np.ndarray]:
        A = self.matrix
        diag = A.diagonal()
        absrow = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
        return diag, absrow


def _second_difference(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    main = np.full(n, 2.0 / h**2)
    off = np.full(n - 1, -1.0 / h**2)
    T = sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="lil")
    if periodic:
        T[0, n - 1] += -1.0 / h**2
        T[n - 1, 0] += -1.0 / h**2
    return T.tocsr()


def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Finite-difference ``-Laplacian`` with the grid's boundary condition."""
    T = _second_difference(grid.n, grid.spacing, grid.boundary == "periodic")
    eye = sp.identity(grid.n, format="csr")
    total = None
    for a in range(grid.dim):
        factors = [eye] * grid.dim
        factors[a] = T
        term = factors[0]
        for f in factors[1:]:
            term = sp.kron(term, f, format="csr")
        total = term if total is None else total + term
    return total.tocsr()


def assemble_hamiltonian(grid: Grid, potential) -> SparseOperator:
    """Assemble the (2d+1)-point ``-Laplacian`` plus the diagonal potential.

    ``potential`` is either a sampled field of length ``grid.size`` or a
    :class:`PotentialSpec` (sampled on the fly).
    """
    if isinstance(potential, PotentialSpec):
        potential = sample_potential(potential, grid)
    V = np.asarray(potential, dtype=float)
    if V.shape != (grid.size,):
        raise ValueError(f"potential has shape {V.shape}, grid {grid} needs ({grid.size},)")
    lap = laplacian_matrix(grid)
    diag = lap.diagonal() + V
    A = lap.tolil()
    A.setdiag(diag)
    A = A.tocsr()
    A.sort_indices()
    lo = float(V.min())
    hi = float(4.0 * grid.dim / grid.spacing**2 + V.max())
    return SparseOperator(A, grid, V.copy(), (lo, hi))


def gershgorin_contained(op: SparseOperator) -> bool:
    diag, rad = op.gershgorin_discs()
    lo, hi = op.spectral_enclosure
    scale = max(1.0, abs(lo), abs(hi))
    return bool(np.all(diag - rad >= lo - 1e-12 * scale) and np.all(diag + rad <= hi + 1e-12 * scale))


def load_potential(path) -> PotentialSpec:
    with open(path) as fh:
        return potential_from_dict(json.load(fh))


def _iter_terms(spec: PotentialSpec) -> Sequence[PotentialSpec]:
    if isinstance(spec, SumPotential):
        out: list[PotentialSpec] = []
        for t in spec.terms:
            out.extend(_iter_terms(t))
        return out
    return [spec]


def constant_value(spec: PotentialSpec) -> float | None:
    """Return ``c`` when ``spec`` is (a sum of) zero/constant terms, else ``None``."""
    total = 0.0
    for t in _iter_terms(spec):
        if isinstance(t, ZeroPotential):
            continue
        if isinstance(t, ConstantPotential):
            total += t.value
            continue
        return None
    return total
