"""Command-line front end: declarative experiment configs, presets, JSON/CSV reports.

Usage
-----
::

    dos run config.json [--seed N] [--out DIR]
    dos preset NAME [--emit-config] [--seed N] [--out DIR]
    dos compare [--dim D] [--spacing H] [--half-width L] [--potential JSON|FILE]
                [--s S ...] [--tolerance T] [--seed N] [--out DIR]

Exit codes: 0 when every enabled tolerance check passes, 1 on a tolerance
failure, 2 on a usage or configuration error.  ``DOSLAB_NUM_THREADS`` caps
the numba thread pool; ``DOSLAB_DISABLE_NUMBA=1`` selects the numpy kernels.

Every run writes ``report.json`` plus one CSV per curve into the output
directory.  CSV columns per curve type:

=====================  ==================================================
file                   columns
=====================  ==================================================
``laplace_<route>``    s, value, stderr
``compare``            s, eigencount, ball_average, residue, closed_form
``integrated_dos``     lambda, estimate, raw_at_largest_L, closed_form
``histogram``          bin_lo, bin_hi, count, mass, flagged
``projection``         R, value, flagged
``stability``          L, s, base, perturbed, rel_diff, diff_stderr
``partial_sums``       N, partial_sum
``singular_values``    k, mu
``cwikel``             L, size, quasinorm, upper, argmax, method
``abelian``            function, side, x, value
=====================  ==================================================

Floats are written with ``repr`` so identical configs give byte-identical
CSVs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import re
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .dos import (
    C_WIN,
    RouteConfig,
    ball_average_route,
    bulk_diagonals,
    admissible_s_grid,
    closed_form_integrated_dos,
    closed_form_laplace,
    compare_methods,
    eigencount_dos,
    eigencount_laplace_route,
    extrapolated_integrated_dos,
    projection_dos,
    residue_route,
    stability_experiment,
    abelian_check,
    trusted_window,
)
from .kernels import BACKEND, set_num_threads
from .lattice import (
    BumpPotential,
    HalfSpacePotential,
    HomogeneousPotential,
    PotentialSpec,
    ZeroPotential,
    assemble_hamiltonian,
    build_grid,
    potential_from_dict,
)
from .spectral import connes_check, cwikel_table, free_operator_family

__all__ = [
    "METHODS",
    "PRESETS",
    "ConfigError",
    "ExperimentConfig",
    "preset",
    "run",
    "main",
]

METHODS = (
    "eigencount",
    "projection",
    "heat_ball",
    "residue",
    "closedform",
    "compare",
    "stability",
    "connes",
    "cwikel",
    "abelian",
)

# methods that may draw random probes and therefore need a seed
STOCHASTIC = ("compare", "heat_ball", "residue", "stability")

TOLERANCE_KEYS = {
    "eigencount": ("closed_form", "integrated_dos"),
    "projection": ("closed_form",),
    "heat_ball": ("closed_form",),
    "residue": ("closed_form",),
    "closedform": (),
    "compare": ("pairwise", "closed_form", "integrated_dos"),
    "stability": ("stability",),
    "connes": ("connes",),
    "cwikel": ("growth",),
    "abelian": ("abelian",),
}

ABELIAN_FUNCTIONS = {
    "one": lambda t: np.ones(t.shape[0]),
    "gaussian": lambda t: np.exp(-np.sum(t * t, axis=1)),
    "lorentzian": lambda t: 1.0 / (1.0 + np.sum(t * t, axis=1)),
    "cos": lambda t: np.cos(t[:, 0]),
}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

def _floats(x, key: str) -> tuple | None:
    if x is None:
        return None
    if not isinstance(x, (list, tuple)) or not x:
        raise ConfigError(f"'{key}' must be a non-empty list of numbers", key)
    try:
        out = tuple(float(v) for v in x)
    except (TypeError, ValueError):
        raise ConfigError(f"'{key}' must contain only numbers", key) from None
    if not all(math.isfinite(v) for v in out):
        raise ConfigError(f"'{key}' must contain finite numbers", key)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one run.

    ``grid`` holds ``dim``, ``half_width``, ``spacing`` and ``boundary``.
    ``tolerances`` enables checks by name; the admissible names depend on
    ``method`` (see ``TOLERANCE_KEYS``).  ``params`` carries method-specific
    settings such as the Connes bump radius or the Cwikel exponent.
    """

    method: str
    name: str = "experiment"
    grid: dict = field(default_factory=lambda: {"dim": 2, "half_width": 20.0, "spacing": 0.25, "boundary": "dirichlet"})
    potential: PotentialSpec = field(default_factory=ZeroPotential)
    perturbation: PotentialSpec | None = None
    s_grid: tuple | None = None
    r_grid: tuple | None = None
    R_grid: tuple | None = None
    bins: dict | None = None
    lambdas: tuple | None = None
    half_widths: tuple | None = None
    tolerances: dict = field(default_factory=dict)
    seed: int | None = None
    probes: int = 2
    params: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}", "method")
        g = self.grid
        for k in ("dim", "half_width", "spacing"):
            if k not in g:
                raise ConfigError(f"grid is missing '{k}'", "grid")
        if g.get("boundary", "dirichlet") not in ("dirichlet", "periodic"):
            raise ConfigError("grid boundary must be 'dirichlet' or 'periodic'", "boundary")
        try:
            build_grid(int(g["dim"]), float(g["half_width"]), float(g["spacing"]), g.get("boundary", "dirichlet"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid grid: {exc}", "grid") from None
        allowed = TOLERANCE_KEYS[self.method]
        for k, v in self.tolerances.items():
            if k not in allowed:
                raise ConfigError(
                    f"tolerance {k!r} does not apply to method {self.method!r} (allowed: {', '.join(allowed) or 'none'})",
                    k,
                )
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0 or not math.isfinite(v):
                raise ConfigError(f"tolerance {k!r} must be a positive number", k)
        if self.method in STOCHASTIC and self.seed is None:
            raise ConfigError(f"method {self.method!r} may use random probes; 'seed' is required", "seed")
        if self.seed is not None and (not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0):
            raise ConfigError("'seed' must be a non-negative integer", "seed")
        if not isinstance(self.probes, int) or self.probes < 1:
            raise ConfigError("'probes' must be a positive integer", "probes")
        if self.s_grid is not None and any(s <= 0 for s in self.s_grid):
            raise ConfigError("'s_grid' entries must be positive", "s_grid")
        if self.method == "stability" and self.perturbation is None:
            raise ConfigError("method 'stability' needs a 'perturbation' potential", "perturbation")
        if self.method in ("compare", "heat_ball", "residue", "stability") and not self.s_grid:
            raise ConfigError(f"method {self.method!r} needs 's_grid'", "s_grid")
        if self.bins is not None:
            if not isinstance(self.bins, dict) or not set(self.bins) <= {"width", "edges", "c_win"}:
                raise ConfigError("'bins' must be an object with 'width' or 'edges' (and optional 'c_win')", "bins")

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, PotentialSpec):
                v = v.to_dict()
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        canonical = json.dumps(_jsonable(self.to_dict()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for k in data:
            if k not in known:
                raise ConfigError(f"unknown config field {k!r}", k)
        if "method" not in data:
            raise ConfigError("config is missing 'method'")
        kw = dict(data)
        for key in ("potential", "perturbation"):
            if kw.get(key) is not None:
                try:
                    kw[key] = potential_from_dict(kw[key])
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"invalid {key}: {exc}", key) from None
        for key in ("s_grid", "r_grid", "R_grid", "lambdas", "half_widths"):
            kw[key] = _floats(kw.get(key), key)
        grid = dict(kw.get("grid", cls.__dataclass_fields__["grid"].default_factory()))
        try:
            grid = {
                "dim": int(grid["dim"]),
                "half_width": float(grid["half_width"]),
                "spacing": float(grid["spacing"]),
                "boundary": str(grid.get("boundary", "dirichlet")),
            }
        except KeyError as exc:
            raise ConfigError(f"grid is missing {exc.args[0]!r}", "grid") from None
        except (TypeError, ValueError):
            raise ConfigError("grid entries must be numbers", "grid") from None
        kw["grid"] = grid
        for key in ("tolerances", "params", "output"):
            if key in kw and not isinstance(kw[key], dict):
                raise ConfigError(f"'{key}' must be a JSON object", key)
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        """Parse and validate; errors carry ``source:line`` when locatable."""
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}", line=exc.lineno) from None
        try:
            return cls.from_dict(data)
        except ConfigError as exc:
            line = _locate(text, exc.key) if exc.key else None
            where = f"{source}:{line}" if line else source
            raise ConfigError(f"{where}: {exc}", exc.key, line) from None

    # -- derived -----------------------------------------------------------

    def build_grid(self):
        g = self.grid
        return build_grid(g["dim"], g["half_width"], g["spacing"], g.get("boundary", "dirichlet"))

    @property
    def dim(self) -> int:
        return int(self.grid["dim"])

    @property
    def spacing(self) -> float:
        return float(self.grid["spacing"])

    @property
    def half_width(self) -> float:
        return float(self.grid["half_width"])


def _locate(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, PotentialSpec):
        return x.to_dict()
    if hasattr(x, "to_dict"):
        return _jsonable(x.to_dict())
    return x


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _asymptotic_potential() -> PotentialSpec:
    # the localized part shifts ball averages by int(dK)/|B_R|; it is kept small
    # enough that this stays below the route tolerance at L = 20
    theta = 2 * np.pi * np.arange(360) / 360
    table = tuple(float(v) for v in 1.0 + np.cos(theta))
    return HomogeneousPotential(table, 2) + BumpPotential(1.0, 0.5, (0.0, 0.0))


def _grid(dim, L, h, boundary="dirichlet") -> dict:
    return {"dim": dim, "half_width": float(L), "spacing": float(h), "boundary": boundary}


def _presets() -> dict:
    return {
        "example1-free": ExperimentConfig(
            method="compare",
            name="example1-free",
            grid=_grid(2, 20, 0.25),
            potential=ZeroPotential(),
            s_grid=(0.5, 1.0, 2.0),
            lambdas=(1.0, 2.0, 4.0),
            tolerances={"pairwise": 0.05, "closed_form": 0.05, "integrated_dos": 0.03},
            seed=0,
        ),
        "thm-homogeneous": ExperimentConfig(
            method="compare",
            name="thm-homogeneous",
            grid=_grid(2, 20, 0.25),
            potential=HalfSpacePotential(2.0),
            s_grid=(1.0, 2.0),
            lambdas=(1.0, 3.0),
            tolerances={"pairwise": 0.05, "closed_form": 0.05, "integrated_dos": 0.05},
            seed=0,
        ),
        "thm-stability": ExperimentConfig(
            method="stability",
            name="thm-stability",
            grid=_grid(2, 40, 0.25),
            potential=HalfSpacePotential(2.0),
            perturbation=BumpPotential(5.0, 2.0, (0.0, 0.0)),
            s_grid=(1.0, 2.0),
            half_widths=(10.0, 20.0, 40.0),
            tolerances={"stability": 0.01},
            seed=0,
            probes=128,
        ),
        "asymptotic-homogeneous": ExperimentConfig(
            method="compare",
            name="asymptotic-homogeneous",
            grid=_grid(2, 20, 0.25),
            potential=_asymptotic_potential(),
            s_grid=(1.0, 2.0),
            tolerances={"pairwise": 0.05, "closed_form": 0.05},
            seed=0,
        ),
        "connes-check": ExperimentConfig(
            method="connes",
            name="connes-check",
            grid=_grid(2, 4, 0.125, "periodic"),
            params={"radius": 3.8, "points": 8},
            tolerances={"connes": 0.10},
        ),
        "cwikel-check": ExperimentConfig(
            method="cwikel",
            name="cwikel-check",
            grid=_grid(2, 24, 0.5),
            half_widths=(6.0, 12.0, 24.0),
            params={"p": 1, "z": [0.0, 1.0], "method": "auto"},
            tolerances={"growth": 0.15},
        ),
        "abelian-check": ExperimentConfig(
            method="abelian",
            name="abelian-check",
            grid=_grid(2, 1, 0.5),
            params={"functions": ["one", "gaussian", "lorentzian"]},
            tolerances={"abelian": 0.02},
        ),
    }


_ALIASES = {"homogeneous-halfspace": "thm-homogeneous"}
PRESETS = tuple(_presets()) + tuple(_ALIASES)


def preset(name: str) -> ExperimentConfig:
    """Fully specified config for a named experiment; ``KeyError`` lists the names."""
    table = _presets()
    key = _ALIASES.get(name, name)
    if key not in table:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    cfg = table[key]
    return replace(cfg, name=name) if key != name else cfg


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------

@dataclass
class _Outcome:
    per_route: dict = field(default_factory=dict)
    comparisons: list = field(default_factory=list)
    csv: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def check(self, name: str, value: float, tolerance: float | None, **extra) -> None:
        entry = {"check": name, "value": float(value), "tolerance": tolerance, **extra}
        entry["pass"] = bool(tolerance is None or value <= tolerance)
        self.comparisons.append(entry)

    def gate(self, name: str, ok: bool, **extra) -> None:
        self.comparisons.append({"check": name, "value": float(bool(ok)), "tolerance": None, "gate": True, "pass": bool(ok), **extra})

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.comparisons)


def _rows(header, rows):
    return [list(header)] + [list(r) for r in rows]


def _f(x) -> str:
    return repr(float(x))


def _curve(route: str, s, values, stderr=None, diagnostics=None) -> dict:
    s = np.asarray(s, dtype=float)
    values = np.asarray(values, dtype=float)
    stderr = np.zeros_like(values) if stderr is None else np.asarray(stderr, dtype=float)
    return {
        "curve": {"s_grid": s.tolist(), "values": values.tolist(), "stderr": stderr.tolist()},
        "diagnostics": diagnostics or {},
    }


def _laplace_csv(s, values, stderr=None):
    stderr = np.zeros(len(values)) if stderr is None else stderr
    return _rows(["s", "value", "stderr"], [[_f(a), _f(b), _f(c)] for a, b, c in zip(s, values, stderr)])


def _integrated_check(cfg: ExperimentConfig, out: _Outcome) -> None:
    fit = extrapolated_integrated_dos(cfg.potential, cfg.dim, cfg.spacing, cfg.half_width, cfg.lambdas)
    closed = closed_form_integrated_dos(cfg.potential, cfg.dim, cfg.lambdas)
    out.per_route["integrated_dos"] = {"curve": fit.to_dict(), "diagnostics": {"closed_form": None if closed is None else closed.tolist()}}
    rows = []
    for k, lam in enumerate(fit.lambdas):
        ref = float("nan") if closed is None else float(closed[k])
        rows.append([_f(lam), _f(fit.estimate[k]), _f(fit.raw[-1, k]), _f(ref)])
        if closed is not None and ref > 0:
            rel = abs(fit.estimate[k] - ref) / ref
            out.check(f"integrated_dos(lambda={lam:g})", rel, cfg.tolerances.get("integrated_dos"))
    out.csv["integrated_dos"] = _rows(["lambda", "estimate", "raw_at_largest_L", "closed_form"], rows)


def _run_compare(cfg: ExperimentConfig, out: _Outcome) -> None:
    tol = cfg.tolerances
    rc = RouteConfig(
        dim=cfg.dim,
        spacing=cfg.spacing,
        half_width=cfg.half_width,
        potential=cfg.potential,
        s_grid=cfg.s_grid,
        eigencount_half_widths=cfg.half_widths,
        bin_width=(cfg.bins or {}).get("width"),
        c_win=(cfg.bins or {}).get("c_win", C_WIN),
        probes=cfg.probes,
        seed=cfg.seed,
        rho=float(cfg.params.get("rho", 1e-2)),
        r_grid=cfg.r_grid,
        R_grid=cfg.R_grid,
        tolerance=tol.get("pairwise", math.inf),
        closed_form_tolerance=tol.get("closed_form", math.inf),
    )
    rep = compare_methods(rc)
    s = rep["s_grid"]
    routes = ("eigencount", "ball_average", "residue")
    diag = {
        "eigencount": rep["eigencount"],
        "ball_average": [r["ball_average"] for r in rep["rows"]],
        "residue": [r["residue"] for r in rep["rows"]],
    }
    for name in routes:
        vals = [r["values"][name] for r in rep["rows"]]
        err = rep["eigencount"]["stderr"] if name == "eigencount" else None
        out.per_route[name] = _curve(name, s, vals, err, diag[name])
        out.csv[f"laplace_{name}"] = _laplace_csv(s, vals, err)
    if rep["closed_form"] is not None:
        vals = [r["values"]["closed_form"] for r in rep["rows"]]
        out.per_route["closed_form"] = _curve("closed_form", s, vals, None, {"kind": rep["closed_form"]})
    out.diagnostics.update({"s_excluded": rep["s_excluded"], "s_min": rep["s_min"], "heat": rep["heat"], "propagators": rep["propagators"]})
    table = []
    for r in rep["rows"]:
        v = r["values"]
        table.append([_f(r["s"])] + [_f(v[n]) for n in routes] + [_f(v.get("closed_form", float("nan")))])
        for pair, dev in r["pairwise"].items():
            out.check(f"pairwise {pair} (s={r['s']:g})", dev, tol.get("pairwise"))
        for n, dev in r["vs_closed_form"].items():
            out.check(f"{n} vs closed_form (s={r['s']:g})", dev, tol.get("closed_form"))
        out.gate(f"residue adequacy (s={r['s']:g})", r["residue"]["L_adequacy"])
    out.csv["compare"] = _rows(["s", *routes, "closed_form"], table)
    if cfg.lambdas:
        _integrated_check(cfg, out)


def _closed_vs(route: str, cfg: ExperimentConfig, s, vals, out: _Outcome) -> None:
    closed, kind = closed_form_laplace(cfg.potential, cfg.dim, s)
    if closed is None:
        out.diagnostics["closed_form"] = kind
        return
    out.per_route["closed_form"] = _curve("closed_form", s, closed, None, {"kind": kind})
    for sj, v, c in zip(s, vals, closed):
        out.check(f"{route} vs closed_form (s={sj:g})", abs(v - c) / abs(c), cfg.tolerances.get("closed_form"))


def _heat_fields(cfg: ExperimentConfig):
    s, excluded = admissible_s_grid(cfg.s_grid, cfg.spacing, cfg.half_width)
    op = assemble_hamiltonian(cfg.build_grid(), cfg.potential)
    props, fields_ = bulk_diagonals(op, s, probes=cfg.probes, seed=cfg.seed, rho=float(cfg.params.get("rho", 1e-2)))
    return s, excluded, props, fields_


def _run_heat_ball(cfg: ExperimentConfig, out: _Outcome) -> None:
    s, excluded, props, fields_ = _heat_fields(cfg)
    balls = [ball_average_route(f, R_grid=cfg.R_grid) for f in fields_]
    vals = [b.value for b in balls]
    out.per_route["heat_ball"] = _curve("heat_ball", s, vals, None, {"balls": [b.to_dict() for b in balls], "heat": [f.provenance() for f in fields_]})
    out.diagnostics["s_excluded"] = excluded
    out.csv["laplace_heat_ball"] = _laplace_csv(s, vals)
    _closed_vs("heat_ball", cfg, s, vals, out)


def _run_residue(cfg: ExperimentConfig, out: _Outcome) -> None:
    s, excluded, props, fields_ = _heat_fields(cfg)
    fits = [residue_route(f, r_grid=cfg.r_grid) for f in fields_]
    vals = [r.laplace for r in fits]
    out.per_route["residue"] = _curve("residue", s, vals, None, {"fits": [r.to_dict() for r in fits], "heat": [f.provenance() for f in fields_]})
    out.diagnostics["s_excluded"] = excluded
    out.csv["laplace_residue"] = _laplace_csv(s, vals)
    _closed_vs("residue", cfg, s, vals, out)


def _histogram_bins(cfg: ExperimentConfig, op):
    bins = cfg.bins or {}
    c_win = float(bins.get("c_win", C_WIN))
    if "edges" in bins:
        return np.asarray(bins["edges"], dtype=float), c_win
    lo, hi = trusted_window(op, c_win)
    width = float(bins.get("width", 0.125))
    return np.arange(lo, hi + width, width), c_win


def _run_eigencount(cfg: ExperimentConfig, out: _Outcome) -> None:
    op = assemble_hamiltonian(cfg.build_grid(), cfg.potential)
    edges, c_win = _histogram_bins(cfg, op)
    hist = eigencount_dos(op, edges, c_win)
    out.diagnostics["histogram"] = {k: v for k, v in hist.to_dict().items() if k not in ("bin_edges", "density", "counts", "flagged")}
    out.csv["histogram"] = _rows(
        ["bin_lo", "bin_hi", "count", "mass", "flagged"],
        [[_f(a), _f(b), int(c), _f(m), int(bool(fl))] for a, b, c, m, fl in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts, hist.density, hist.flagged)],
    )
    if cfg.s_grid:
        boxes = list(cfg.half_widths) if cfg.half_widths else RouteConfig(half_width=cfg.half_width, spacing=cfg.spacing).eigencount_boxes()
        curve = eigencount_laplace_route(cfg.potential, cfg.dim, cfg.spacing, boxes, cfg.s_grid, (cfg.bins or {}).get("width"), c_win)
        out.per_route["eigencount"] = {"curve": {"s_grid": curve.s_grid.tolist(), "values": curve.values.tolist(), "stderr": curve.stderr.tolist()}, "diagnostics": curve.to_dict()}
        out.csv["laplace_eigencount"] = _laplace_csv(curve.s_grid, curve.values, curve.stderr)
        _closed_vs("eigencount", cfg, curve.s_grid, curve.values, out)
    if cfg.lambdas:
        _integrated_check(cfg, out)


def _run_projection(cfg: ExperimentConfig, out: _Outcome) -> None:
    if "interval" not in cfg.params:
        raise ConfigError("method 'projection' needs params.interval = [a, b]", "params")
    a, b = (float(v) for v in cfg.params["interval"])
    op = assemble_hamiltonian(cfg.build_grid(), cfg.potential)
    R = cfg.R_grid or tuple(np.linspace(0.25, 1.0, 4) * cfg.half_width)
    proj = projection_dos(op, (a, b), R)
    out.per_route["projection"] = {"curve": {"R_grid": proj.R_grid.tolist(), "values": proj.values.tolist()}, "diagnostics": proj.to_dict()}
    out.csv["projection"] = _rows(["R", "value", "flagged"], [[_f(r), _f(v), int(bool(fl))] for r, v, fl in zip(proj.R_grid, proj.values, proj.flagged)])
    closed = closed_form_integrated_dos(cfg.potential, cfg.dim, [a, b])
    if closed is not None:
        ref = float(closed[1] - closed[0])
        if ref > 0:
            out.check("projection vs closed_form", abs(proj.values[-1] - ref) / ref, cfg.tolerances.get("closed_form"))


def _run_closedform(cfg: ExperimentConfig, out: _Outcome) -> None:
    if not cfg.s_grid and not cfg.lambdas:
        raise ConfigError("method 'closedform' needs 's_grid' or 'lambdas'", "s_grid")
    if cfg.s_grid:
        closed, kind = closed_form_laplace(cfg.potential, cfg.dim, cfg.s_grid)
        if closed is None:
            out.gate("closed form available", False, reason=kind)
        else:
            out.per_route["closed_form"] = _curve("closed_form", cfg.s_grid, closed, None, {"kind": kind})
            out.csv["laplace_closed_form"] = _laplace_csv(cfg.s_grid, closed)
    if cfg.lambdas:
        closed = closed_form_integrated_dos(cfg.potential, cfg.dim, cfg.lambdas)
        if closed is not None:
            out.per_route["closed_form_integrated"] = {"curve": {"lambdas": list(cfg.lambdas), "values": closed.tolist()}, "diagnostics": {}}
            out.csv["integrated_dos"] = _rows(["lambda", "estimate", "raw_at_largest_L", "closed_form"], [[_f(l), "nan", "nan", _f(c)] for l, c in zip(cfg.lambdas, closed)])


def _run_stability(cfg: ExperimentConfig, out: _Outcome) -> None:
    Ls = cfg.half_widths or (cfg.half_width,)
    rep = stability_experiment(cfg.potential, cfg.perturbation, cfg.dim, cfg.spacing, Ls, cfg.s_grid, probes=cfg.probes, seed=cfg.seed)
    tol = cfg.tolerances.get("stability")
    out.per_route["heat_ball"] = {"curve": {"half_widths": rep.half_widths.tolist(), "s_grid": rep.s_grid.tolist(), "base": rep.base.tolist(), "perturbed": rep.perturbed.tolist()}, "diagnostics": rep.to_dict(tol or 0.01)}
    out.csv["stability"] = _rows(
        ["L", "s", "base", "perturbed", "rel_diff", "diff_stderr"],
        [[_f(L), _f(s), _f(rep.base[i, j]), _f(rep.perturbed[i, j]), _f(rep.rel_diff[i, j]), _f(rep.diff_stderr[i, j])] for i, L in enumerate(rep.half_widths) for j, s in enumerate(rep.s_grid)],
    )
    for j, s in enumerate(rep.s_grid):
        out.check(f"stability rel_diff at L={rep.half_widths[-1]:g} (s={s:g})", rep.rel_diff[-1, j], tol, stderr=float(rep.diff_stderr[-1, j]))
        out.gate(f"stability monotone in L (s={s:g})", rep.monotone[j])


def _run_connes(cfg: ExperimentConfig, out: _Outcome) -> None:
    grid = cfg.build_grid()
    if grid.boundary != "periodic":
        raise ConfigError("method 'connes' needs a periodic grid", "boundary")
    res = connes_check(grid.n, grid.half_width, float(cfg.params.get("radius", 3.8)), grid.dim, int(cfg.params.get("points", 8)))
    out.per_route["connes"] = {"curve": res.partial.to_dict(), "diagnostics": res.to_dict()}
    out.csv["partial_sums"] = _rows(["N", "partial_sum"], [[int(n), _f(v)] for n, v in zip(res.partial.N_grid, res.partial.sums)])
    out.csv["singular_values"] = _rows(["k", "mu"], [[k, _f(v)] for k, v in enumerate(res.singular.values)])
    out.check("connes limit vs integral", res.relative_error, cfg.tolerances.get("connes"))
    trend = res.partial.trend
    mono = bool(trend.get("non_decreasing") or trend.get("non_increasing"))
    out.gate("connes partial sums monotone", mono)


def _run_cwikel(cfg: ExperimentConfig, out: _Outcome) -> None:
    p = int(cfg.params.get("p", 1))
    zr = cfg.params.get("z", [0.0, 1.0])
    z = complex(float(zr[0]), float(zr[1]))
    Ls = cfg.half_widths or (cfg.half_width,)
    table = cwikel_table(free_operator_family(cfg.dim, cfg.spacing, cfg.potential), Ls, p=p, d=cfg.dim, z=z, method=str(cfg.params.get("method", "auto")))
    out.per_route["cwikel"] = {"curve": {"half_widths": list(Ls), "quasinorm": [r.quasinorm for r in table.rows]}, "diagnostics": table.to_dict()}
    out.csv["cwikel"] = _rows(
        ["L", "size", "quasinorm", "upper", "argmax", "method"],
        [[_f(r.half_width), int(r.size), _f(r.quasinorm), _f(r.upper), int(r.argmax), r.method] for r in table.rows],
    )
    for (a, b), g in zip(zip(Ls[:-1], Ls[1:]), table.growth_ratios):
        out.check(f"cwikel growth L={a:g}->{b:g}", g - 1.0, cfg.tolerances.get("growth"), ratio=g)


def _run_abelian(cfg: ExperimentConfig, out: _Outcome) -> None:
    names = cfg.params.get("functions", ["one", "gaussian", "lorentzian"])
    rows = []
    reports = {}
    for name in names:
        if name not in ABELIAN_FUNCTIONS:
            raise ConfigError(f"unknown abelian function {name!r}; available: {', '.join(ABELIAN_FUNCTIONS)}", "functions")
        rep = abelian_check(ABELIAN_FUNCTIONS[name], cfg.dim, cfg.r_grid, cfg.R_grid)
        reports[name] = rep.to_dict()
        rows += [[name, "left", _f(R), _f(v)] for R, v in zip(rep.R_grid, rep.left)]
        rows += [[name, "right", _f(r), _f(v)] for r, v in zip(rep.r_grid, rep.right)]
        out.check(f"abelian {name}", rep.discrepancy, cfg.tolerances.get("abelian"))
    out.per_route["abelian"] = {"curve": {n: [r["left_limit"], r["right_limit"]] for n, r in reports.items()}, "diagnostics": reports}
    out.csv["abelian"] = _rows(["function", "side", "x", "value"], rows)


_RUNNERS = {
    "compare": _run_compare,
    "eigencount": _run_eigencount,
    "projection": _run_projection,
    "heat_ball": _run_heat_ball,
    "residue": _run_residue,
    "closedform": _run_closedform,
    "stability": _run_stability,
    "connes": _run_connes,
    "cwikel": _run_cwikel,
    "abelian": _run_abelian,
}


def execute(cfg: ExperimentConfig) -> dict:
    """Run ``cfg`` in memory; returns the report with ``csv`` tables attached."""
    out = _Outcome()
    _RUNNERS[cfg.method](cfg, out)
    report = {
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "version": __version__,
        "versions": {"numpy": np.__version__, "scipy": _scipy_version()},
        "backend": BACKEND,
        "method": cfg.method,
        "per_route": out.per_route,
        "comparisons": out.comparisons,
        "diagnostics": out.diagnostics,
        "pass": out.passed,
    }
    report = _jsonable(report)
    report["csv"] = out.csv
    return report


def _scipy_version() -> str:
    import scipy

    return scipy.__version__


def write_report(report: dict, out_dir) -> list[Path]:
    """Write ``report.json`` and the CSV tables; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    tables = report.get("csv", {})
    body = {k: v for k, v in report.items() if k != "csv"}
    body["files"] = sorted(f"{name}.csv" for name in tables)
    for name in sorted(tables):
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(tables[name])
        written.append(path)
    path = out_dir / "report.json"
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written


def run(cfg: ExperimentConfig, out_dir=None) -> tuple[int, dict]:
    """Execute, write the report files and return ``(exit_status, report)``."""
    report = execute(cfg)
    target = out_dir or cfg.output.get("dir") or os.path.join("dos-output", cfg.name)
    write_report(report, target)
    return (0 if report["pass"] else 1), report


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dos", description="Density-of-states experiments on lattice Schrodinger operators.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run an experiment config (JSON)")
    r.add_argument("config", help="path to the config file")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--out", help="output directory (default: config output.dir or dos-output/<name>)")

    p = sub.add_parser("preset", help="run or print a named preset")
    p.add_argument("name", help="preset name: " + ", ".join(PRESETS))
    p.add_argument("--emit-config", action="store_true", help="print the config JSON and exit")
    p.add_argument("--seed", type=int, help="override the preset seed")
    p.add_argument("--out", help="output directory")

    c = sub.add_parser("compare", help="compare the three numeric routes and the closed form")
    c.add_argument("--dim", type=int, default=2)
    c.add_argument("--spacing", type=float, default=0.25)
    c.add_argument("--half-width", type=float, default=20.0)
    c.add_argument("--potential", default='{"kind": "zero"}', help="potential JSON or a path to a JSON file")
    c.add_argument("--s", type=float, nargs="+", default=[1.0, 2.0], help="Laplace variables")
    c.add_argument("--tolerance", type=float, default=0.05, help="pairwise and closed-form tolerance")
    c.add_argument("--probes", type=int, default=2)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--name", default="compare")
    c.add_argument("--out", help="output directory")
    return ap


def _with_seed(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    return cfg if seed is None else replace(cfg, seed=seed)


def _load_potential(arg: str) -> dict:
    text = Path(arg).read_text() if os.path.exists(arg) else arg
    return json.loads(text)


def main(argv=None) -> int:
    set_num_threads()
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
            cfg = _with_seed(ExperimentConfig.from_json(text, args.config), args.seed)
        elif args.command == "preset":
            try:
                cfg = _with_seed(preset(args.name), args.seed)
            except KeyError as exc:
                raise ConfigError(exc.args[0]) from None
            if args.emit_config:
                sys.stdout.write(cfg.to_json())
                return 0
        else:
            try:
                pot = _load_potential(args.potential)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot parse --potential: {exc}") from None
            cfg = ExperimentConfig.from_dict(
                {
                    "method": "compare",
                    "name": args.name,
                    "grid": {"dim": args.dim, "half_width": args.half_width, "spacing": args.spacing, "boundary": "dirichlet"},
                    "potential": pot,
                    "s_grid": args.s,
                    "tolerances": {"pairwise": args.tolerance, "closed_form": args.tolerance},
                    "probes": args.probes,
                    "seed": args.seed,
                }
            )
        status, report = run(cfg, args.out)
    except ConfigError as exc:
        print(f"dos: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"dos: error: {exc}", file=sys.stderr)
        return 2
    for c in report["comparisons"]:
        mark = "PASS" if c["pass"] else "FAIL"
        tol = "" if c["tolerance"] is None else f" (tolerance {c['tolerance']:g})"
        print(f"{mark}  {c['check']}: {c['value']:.6g}{tol}")
    print("PASS" if status == 0 else "FAIL")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
