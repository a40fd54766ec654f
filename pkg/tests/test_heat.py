import math

import numpy as np
import pytest
import scipy.linalg as sla

from doslab.heat import (
    MAX_ORDER,
    apply_heat,
    apply_heat_many,
    boundary_layer,
    build_propagator,
    bulk_radius,
    color_period,
    heat_diagonal,
    heat_diagonals,
    s_min,
    weighted_heat_trace,
)
from doslab.lattice import ConstantPotential, HalfSpacePotential, RandomPotential, ZeroPotential, assemble_hamiltonian, build_grid


FOUR_PI_INV = 1.0 / (4.0 * math.pi)


def test_policy_helpers():
    assert s_min(0.25) == pytest.approx(0.625)
    assert boundary_layer(4.0) == pytest.approx(12.0)
    assert bulk_radius(build_grid(2, 16, 0.25), 1.0) == pytest.approx(10.0)
    assert color_period(1.0, 0.25) >= 1


def test_low_order_for_smooth_target():
    op = assemble_hamiltonian(build_grid(1, 2, 0.5), ZeroPotential())
    prop = build_propagator(op, 0.05)
    assert prop.order <= 20


def test_scalar_certification():
    op = assemble_hamiltonian(build_grid(2, 3, 0.25), RandomPotential(1, 2.0))
    prop = build_propagator(op, 1.0, tol=1e-10)
    lo, hi = prop.enclosure
    lam = np.linspace(lo, hi, 20001)
    assert np.max(np.abs(prop.scalar(lam) - np.exp(-prop.s * lam))) <= 1e-10
    assert prop.max_error <= 1e-10


def test_order_cap_rejected():
    op = assemble_hamiltonian(build_grid(1, 200, 0.001), ZeroPotential())
    with pytest.raises(ValueError, match="tol"):
        build_propagator(op, 1e3, tol=1e-14)
    assert MAX_ORDER > 0


def test_dense_oracle_random_potential():
    grid = build_grid(1, 100.0, 1.0, "periodic")
    assert grid.size == 200
    op = assemble_hamiltonian(grid, RandomPotential(42, 1.0))
    prop = build_propagator(op, 1.0, tol=1e-12)
    v = np.random.default_rng(0).normal(size=grid.size)
    ref = sla.expm(-1.0 * op.matrix.toarray()) @ v
    out = apply_heat(prop, v)
    assert np.linalg.norm(out - ref) / np.linalg.norm(ref) <= 1e-8


def test_eigenvector_is_scaled():
    op = assemble_hamiltonian(build_grid(1, 4, 0.5), RandomPotential(3, 1.0, 0.5))
    w, U = np.linalg.eigh(op.matrix.toarray())
    prop = build_propagator(op, 0.7, tol=1e-12)
    out = apply_heat(prop, U[:, 3])
    np.testing.assert_allclose(out, math.exp(-0.7 * w[3]) * U[:, 3], atol=1e-11)


def test_zero_time_is_identity():
    op = assemble_hamiltonian(build_grid(1, 4, 0.5), ZeroPotential())
    prop = build_propagator(op, 0.0)
    v = np.arange(op.dim_matrix, dtype=float)
    np.testing.assert_array_equal(apply_heat(prop, v), v)


def test_apply_many_matches_single():
    op = assemble_hamiltonian(build_grid(2, 2, 0.25), RandomPotential(8, 1.0))
    props = [build_propagator(op, s) for s in (0.5, 1.0, 2.0)]
    v = np.random.default_rng(1).normal(size=op.dim_matrix)
    many = apply_heat_many(props, v)
    for j, p in enumerate(props):
        np.testing.assert_allclose(many[j], apply_heat(p, v), atol=1e-12)


def test_dimension_mismatch_rejected():
    op = assemble_hamiltonian(build_grid(1, 4, 0.5), ZeroPotential())
    with pytest.raises(ValueError):
        apply_heat(build_propagator(op, 1.0), np.ones(3))


def test_free_bulk_diagonal():
    grid = build_grid(2, 16, 0.25)
    op = assemble_hamiltonian(grid, ZeroPotential())
    prop = build_propagator(op, 1.0)
    pts = np.flatnonzero(grid.radius < 2.0)
    f = heat_diagonal(prop, "exact", points=pts)
    np.testing.assert_allclose(f.values, FOUR_PI_INV, rtol=0.01)
    # spatially constant in the bulk
    assert np.ptp(f.values) / f.values.mean() < 1e-6


def test_constant_potential_scales_diagonal():
    grid = build_grid(2, 4, 0.25)
    pts = np.flatnonzero(grid.radius < 1.0)
    f0 = heat_diagonal(build_propagator(assemble_hamiltonian(grid, ZeroPotential()), 1.0), points=pts)
    f1 = heat_diagonal(build_propagator(assemble_hamiltonian(grid, ConstantPotential(0.8)), 1.0), points=pts)
    np.testing.assert_allclose(f1.values, f0.values * math.exp(-0.8), rtol=1e-8)


def test_exact_diagonal_matches_dense():
    grid = build_grid(2, 2, 0.25)
    op = assemble_hamiltonian(grid, RandomPotential(6, 1.0, 0.5))
    f = heat_diagonal(build_propagator(op, 0.5, tol=1e-12))
    dense = np.diag(sla.expm(-0.5 * op.matrix.toarray())) / grid.volume_element
    np.testing.assert_allclose(f.values, dense, rtol=1e-9)


def test_stochastic_agrees_with_exact():
    grid = build_grid(2, 3, 0.25)
    op = assemble_hamiltonian(grid, HalfSpacePotential(2.0) + RandomPotential(2, 0.5, 0.5))
    prop = build_propagator(op, 0.5)
    exact = heat_diagonal(prop, "exact")
    stoch = heat_diagonal(prop, "stochastic", probes=64, seed=3, period=2)
    z = np.abs(stoch.values - exact.values) / np.maximum(stoch.stderr, 1e-300)
    assert np.mean(z <= 3.0) > 0.97
    assert stoch.provenance()["seed"] == 3


def test_stochastic_reproducible_and_needs_two_probes():
    grid = build_grid(2, 2, 0.25)
    prop = build_propagator(assemble_hamiltonian(grid, ZeroPotential()), 0.5)
    a = heat_diagonal(prop, "stochastic", probes=4, seed=9)
    b = heat_diagonal(prop, "stochastic", probes=4, seed=9)
    np.testing.assert_array_equal(a.values, b.values)
    with pytest.raises(ValueError, match="2 probes"):
        heat_diagonal(prop, "stochastic", probes=1)


def test_diagonal_csv(tmp_path):
    grid = build_grid(1, 2, 1)
    f = heat_diagonal(build_propagator(assemble_hamiltonian(grid, ZeroPotential()), 0.5))
    path = tmp_path / "diag.csv"
    f.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x1,value,stderr"
    assert len(lines) == 1 + grid.size


def test_weighted_trace_ball_indicator():
    grid = build_grid(2, 12, 0.25)
    prop = build_propagator(assemble_hamiltonian(grid, ZeroPotential()), 1.0)
    R = 3.0
    w = (grid.radius < R).astype(float)
    tr = weighted_heat_trace(prop, w)
    lattice_ball = grid.volume_element * w.sum()
    assert tr.value == pytest.approx(lattice_ball * FOUR_PI_INV, rel=0.01)
    assert tr.value == pytest.approx(math.pi * R**2 * FOUR_PI_INV, rel=0.03)


def test_weighted_trace_zero_weight():
    grid = build_grid(2, 2, 0.5)
    prop = build_propagator(assemble_hamiltonian(grid, ZeroPotential()), 1.0)
    f = heat_diagonal(prop)
    assert weighted_heat_trace(f, 0.0).value == 0.0
