import json

import numpy as np
import pytest
import scipy.linalg as sla

from doslab.lattice import (
    BumpPotential,
    ConstantPotential,
    HalfSpacePotential,
    HomogeneousPotential,
    PeriodicPotential,
    RandomPotential,
    ZeroPotential,
    Grid,
    assemble_hamiltonian,
    build_grid,
    gershgorin_contained,
    potential_from_dict,
    potential_from_json,
    sample_potential,
)


# -- grids -------------------------------------------------------------------

def test_grid_1d_point_count():
    g = build_grid(1, 4, 1, "dirichlet")
    assert g.shape == (7,)
    np.testing.assert_array_equal(g.axis, np.arange(-3.0, 4.0))


def test_grid_2d_point_count():
    g = build_grid(2, 8, 0.5, "dirichlet")
    assert g.shape == (31, 31)
    assert g.size == 961


def test_grid_periodic_count():
    g = build_grid(2, 4, 0.5, "periodic")
    assert g.shape == (16, 16)


def test_grid_non_integral_ratio_rejected():
    with pytest.raises(ValueError, match="integer"):
        build_grid(2, 8, 0.3)


def test_grid_dim_guard():
    with pytest.raises(ValueError):
        build_grid(4, 2, 1)


def test_grid_interior_strict():
    g = build_grid(2, 3, 0.5)
    assert np.all(np.abs(g.coords) < 3)


def test_grid_dict_round_trip():
    g = build_grid(3, 2, 0.5, "periodic")
    assert Grid.from_dict(g.to_dict()) == g


# -- potentials --------------------------------------------------------------

def test_zero_and_constant_fields(small_grid_2d):
    assert np.all(sample_potential(ZeroPotential(), small_grid_2d) == 0.0)
    assert np.all(sample_potential(ConstantPotential(3.5), small_grid_2d) == 3.5)


def test_half_space_values():
    V = HalfSpacePotential(2.0, axis=1, sign=1)
    vals = V.evaluate(np.array([[1.0, 1.0], [-1.0, 1.0], [0.0, 5.0]]))
    np.testing.assert_array_equal(vals, [2.0, 0.0, 1.0])


def test_half_space_sign_and_axis():
    V = HalfSpacePotential(3.0, axis=2, sign=-1)
    np.testing.assert_array_equal(V.evaluate(np.array([[5.0, -1.0], [5.0, 1.0]])), [3.0, 0.0])


def test_homogeneous_scale_invariance():
    V = HomogeneousPotential.from_function(lambda xi: 1.0 + xi[:, 0] ** 2, 2)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 2))
    for t in (0.5, 2.0, 17.0):
        np.testing.assert_array_equal(V.evaluate(t * x), V.evaluate(x))


def test_homogeneous_table_validation():
    with pytest.raises(ValueError):
        HomogeneousPotential((), 2)


def test_bump_gaussian_profile():
    V = BumpPotential(5.0, 2.0, (0.0, 0.0))
    vals = V.evaluate(np.array([[0.0, 0.0], [2.0, 0.0]]))
    np.testing.assert_allclose(vals, [5.0, 5.0 * np.exp(-1.0)])


def test_random_potential_is_grid_independent():
    V = RandomPotential(3, 1.0, 1.0)
    a = sample_potential(V, build_grid(2, 4, 0.5))
    b = sample_potential(V, build_grid(2, 4, 0.25))
    g1, g2 = build_grid(2, 4, 0.5), build_grid(2, 4, 0.25)
    # the coarse points are a subset of the fine points
    fine = {tuple(np.round(x, 6)): v for x, v in zip(g2.coords, b)}
    for x, v in zip(g1.coords, a):
        assert fine[tuple(np.round(x, 6))] == v
    assert np.all(np.abs(a) <= 1.0)


@pytest.mark.parametrize(
    "spec",
    [
        ZeroPotential(),
        ConstantPotential(1.25),
        HalfSpacePotential(2.0, 2, -1),
        HomogeneousPotential((0.0, 1.0, 2.0, 1.0), 2),
        PeriodicPotential((1.0, 2.0), ((0.0, 1.0), (2.0, 3.0))),
        BumpPotential(5.0, 2.0, (1.0, -1.0), "indicator"),
        RandomPotential(11, 0.5, 2.0),
        HalfSpacePotential(2.0) + BumpPotential(1.0, 1.0),
    ],
)
def test_potential_json_round_trip(spec):
    text = spec.to_json(sort_keys=True)
    back = potential_from_json(text)
    assert back == spec
    assert back.to_json(sort_keys=True) == text


def test_potential_schema_accepts_serialized_specs():
    jsonschema = pytest.importorskip("jsonschema")
    from importlib.resources import files

    schema = json.loads(files("doslab").joinpath("schemas/potential.schema.json").read_text())
    specs = [
        ZeroPotential(),
        HalfSpacePotential(2.0),
        HomogeneousPotential((0.0, 1.0), 2),
        HalfSpacePotential(2.0) + BumpPotential(5.0, 2.0, (0.0, 0.0)),
        RandomPotential(1, 1.0),
    ]
    for spec in specs:
        jsonschema.validate(spec.to_dict(), schema)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"kind": "half_space"}, schema)


def test_potential_from_dict_errors():
    with pytest.raises(ValueError, match="kind"):
        potential_from_dict({"a": 1})
    with pytest.raises(ValueError, match="unknown"):
        potential_from_dict({"kind": "nope"})
    with pytest.raises(ValueError, match="missing"):
        potential_from_dict({"kind": "half_space"})


# -- operators ---------------------------------------------------------------

def test_free_1d_spectrum():
    # three interior points: eigenvalues 2 - 2 cos(j pi / 4)
    op = assemble_hamiltonian(build_grid(1, 2, 1), ZeroPotential())
    eigs = sla.eigvalsh(op.matrix.toarray())
    np.testing.assert_allclose(eigs, [2 - np.sqrt(2), 2, 2 + np.sqrt(2)], atol=1e-12)


def test_free_2d_stencil():
    g = build_grid(2, 4, 1)
    op = assemble_hamiltonian(g, ZeroPotential())
    A = op.matrix.toarray()
    assert np.all(np.diag(A) == 4.0)
    interior = np.all(np.abs(g.integer_coords) < g.cells - 1, axis=1)
    np.testing.assert_array_equal(A.sum(axis=1)[interior], 0.0)
    off = A - np.diag(np.diag(A))
    assert set(np.unique(off)) <= {0.0, -1.0}


def test_operator_symmetric_and_enclosed(rng):
    g = build_grid(2, 3, 0.5)
    op = assemble_hamiltonian(g, RandomPotential(5, 2.0, 0.5) + HalfSpacePotential(1.0))
    A = op.matrix
    assert (A != A.T).nnz == 0
    assert gershgorin_contained(op)
    eigs = sla.eigvalsh(A.toarray())
    lo, hi = op.spectral_enclosure
    assert lo <= eigs.min() and eigs.max() <= hi


def test_constant_shift_exact():
    g = build_grid(1, 5, 0.5)
    e0 = sla.eigvalsh(assemble_hamiltonian(g, ZeroPotential()).matrix.toarray())
    e1 = sla.eigvalsh(assemble_hamiltonian(g, ConstantPotential(1.5)).matrix.toarray())
    np.testing.assert_allclose(e1, e0 + 1.5, atol=1e-12)


def test_mismatched_potential_array_rejected():
    with pytest.raises(ValueError):
        assemble_hamiltonian(build_grid(2, 2, 0.5), np.zeros(5))
