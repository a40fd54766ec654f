"""Analytic oracles: sphere area, free and shifted DOS, homogeneous-potential DOS.

All integrated-DOS values are per unit volume, ``nu((-inf, t])``; Laplace
values are ``int exp(-s lambda) dnu(lambda)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gamma

from .lattice import HalfSpacePotential, HomogeneousPotential, PotentialSpec

__all__ = [
    "sphere_area",
    "ball_volume",
    "SphereQuadrature",
    "sphere_quadrature",
    "free_integrated_dos",
    "free_laplace",
    "homogeneous_integrated_dos",
    "homogeneous_laplace",
    "asymptotic_limit_potential",
    "RadialLimitError",
]


def sphere_area(d: int) -> float:
    """``omega_d = 2 pi^{d/2} / Gamma(d/2)``, the area of ``S^{d-1}``."""
    if d < 1:
        raise ValueError("sphere_area needs d >= 1")
    return float(2.0 * np.pi ** (d / 2.0) / gamma(d / 2.0))


def ball_volume(d: int, R: float = 1.0) -> float:
    return sphere_area(d) * R**d / d


@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    dim: int
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))

    def average(self, values) -> float:
        return self.integrate(values) / float(np.sum(self.weights))


def sphere_quadrature(d: int, n: int = 256) -> SphereQuadrature:
    """Product rules on ``S^{d-1}``.

    d=1: the two points +-1.  d=2: ``n`` uniform angles offset by half a
    step (trapezoid; with ``n % 4 == 0`` the coordinate half-planes are
    straddled symmetrically).  d=3: ``n`` Gauss-Legendre nodes in
    ``cos(theta)`` times ``2n`` uniform azimuths.
    """
    if d == 1:
        return SphereQuadrature(1, np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]))
    if d == 2:
        theta = 2 * np.pi * (np.arange(n) + 0.5) / n
        nodes = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return SphereQuadrature(2, nodes, np.full(n, 2 * np.pi / n))
    if d == 3:
        z, wz = np.polynomial.legendre.leggauss(n)
        m = 2 * n
        phi = 2 * np.pi * (np.arange(m) + 0.5) / m
        Z, P = np.meshgrid(z, phi, indexing="ij")
        rho = np.sqrt(1 - Z**2)
        nodes = np.stack([rho * np.cos(P), rho * np.sin(P), Z], axis=-1).reshape(-1, 3)
        weights = (wz[:, None] * np.full(m, 2 * np.pi / m)[None, :]).ravel()
        return SphereQuadrature(3, nodes, weights)
    raise ValueError("sphere_quadrature supports d in {1, 2, 3}")


def free_integrated_dos(d: int, t, c: float = 0.0):
    """``omega_d / (d (2 pi)^d) * (t - c)_+^{d/2}``."""
    x = np.maximum(np.asarray(t, dtype=float) - c, 0.0)
    out = sphere_area(d) / (d * (2 * np.pi) ** d) * x ** (d / 2.0)
    return float(out) if np.ndim(out) == 0 else out


def free_laplace(d: int, s, c: float = 0.0):
    """``(4 pi s)^{-d/2} exp(-s c)``."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("free_laplace needs s > 0")
    out = (4 * np.pi * s) ** (-d / 2.0) * np.exp(-s * c)
    return float(out) if np.ndim(out) == 0 else out


def _angular_values(angular, quad: SphereQuadrature) -> np.ndarray:
    if isinstance(angular, HomogeneousPotential):
        return angular.angular(quad.nodes)
    if isinstance(angular, PotentialSpec):
        return angular.evaluate(quad.nodes)
    if callable(angular):
        return np.asarray(angular(quad.nodes), dtype=float)
    return np.broadcast_to(np.asarray(angular, dtype=float), (quad.nodes.shape[0],))


def homogeneous_integrated_dos(angular, quad: SphereQuadrature, t):
    """``(1/(d (2 pi)^d)) int_{S^{d-1}} (t - V(xi))_+^{d/2} dxi``.

    ``angular`` is a homogeneous potential, any potential spec (evaluated on
    the unit sphere), a callable on unit vectors, or a constant.  A
    half-space potential takes the exact two-value path.
    """
    d = quad.dim
    if isinstance(angular, HalfSpacePotential):
        lo, hi = angular.angular_values()
        return 0.5 * (free_integrated_dos(d, t, lo) + free_integrated_dos(d, t, hi))
    vals = _angular_values(angular, quad)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    pos = np.maximum(t_arr[:, None] - vals[None, :], 0.0) ** (d / 2.0)
    out = pos @ quad.weights / (d * (2 * np.pi) ** d)
    return float(out[0]) if np.ndim(t) == 0 else out


def homogeneous_laplace(angular, quad: SphereQuadrature, d: int | None, s):
    """``(4 pi s)^{-d/2} (1/omega_d) int_{S^{d-1}} exp(-s V(xi)) dxi``."""
    d = quad.dim if d is None else d
    if d != quad.dim:
        raise ValueError("quadrature dimension does not match d")
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr <= 0):
        raise ValueError("homogeneous_laplace needs s > 0")
    if isinstance(angular, HalfSpacePotential):
        lo, hi = angular.angular_values()
        out = 0.5 * ((4 * np.pi * s_arr) ** (-d / 2.0)) * (np.exp(-s_arr * lo) + np.exp(-s_arr * hi))
    else:
        vals = _angular_values(angular, quad)
        avg = np.exp(-s_arr[:, None] * vals[None, :]) @ quad.weights / sphere_area(d)
        out = (4 * np.pi * s_arr) ** (-d / 2.0) * avg
    return float(out[0]) if np.ndim(s) == 0 else out


class RadialLimitError(ValueError):
    """Raised when ``V(R xi)`` does not settle as ``R`` doubles."""


def asymptotic_limit_potential(
    spec: PotentialSpec | Callable[[np.ndarray], np.ndarray],
    dim: int = 2,
    tolerance: float = 1e-6,
    resolution: int = 360,
    r0: float = 8.0,
    max_doublings: int = 40,
) -> HomogeneousPotential:
    """Tabulate ``V_h(xi) = lim_R V(R xi)`` on the homogeneous-table nodes.

    Each node is evaluated at ``R = r0 * 2^k`` until successive values differ
    by less than ``tolerance`` twice in a row; a node that never settles raises
    :class:`RadialLimitError` naming it.
    """
    evaluate = spec.evaluate if isinstance(spec, PotentialSpec) else spec
    if dim == 2:
        theta = 2 * np.pi * np.arange(resolution) / resolution
        nodes = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        shape = (resolution,)
    elif dim == 3:
        n_theta = max(2, resolution // 2 + 1)
        th = np.pi * np.arange(n_theta) / (n_theta - 1)
        ph = 2 * np.pi * np.arange(resolution) / resolution
        T, P = np.meshgrid(th, ph, indexing="ij")
        nodes = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
        shape = (n_theta, resolution)
    else:
        raise ValueError("asymptotic_limit_potential supports d in {2, 3}")

    R = r0
    prev = np.asarray(evaluate(R * nodes), dtype=float)
    settled = np.zeros(prev.shape[0], dtype=bool)
    streak = np.zeros(prev.shape[0], dtype=np.int64)
    limit = prev.copy()
    for _ in range(max_doublings):
        R *= 2.0
        cur = np.asarray(evaluate(R * nodes), dtype=float)
        # two quiet doublings in a row, so a chance near-repeat of an oscillation is not accepted
        streak = np.where(np.abs(cur - prev) < tolerance, streak + 1, 0)
        newly = (~settled) & (streak >= 2)
        limit[newly] = cur[newly]
        settled |= newly
        if settled.all():
            break
        prev = cur
    if not settled.all():
        bad = int(np.flatnonzero(~settled)[0])
        raise RadialLimitError(
            f"no radial limit at node {bad} (direction {np.round(nodes[bad], 6).tolist()}): "
            f"values still move by >= {tolerance} after {max_doublings} doublings of R"
        )
    return HomogeneousPotential(tuple(map(tuple, limit.reshape(shape))) if dim == 3 else tuple(limit), dim)
