import math

import numpy as np
import pytest
import scipy.linalg as sla

from doslab.lattice import ConstantPotential, RandomPotential, ZeroPotential, assemble_hamiltonian, build_grid
from doslab.spectral import (
    DenseCapError,
    SingularValueList,
    connes_operator,
    count_below,
    count_in_interval,
    cwikel_quasinorm,
    cwikel_table,
    dirichlet_eigenvalues,
    discrete_laplacian_symbol,
    dixmier_partial_sums,
    free_operator_family,
    inertia_count,
    resolvent_weight_singular_values,
    richardson_log,
    singular_values,
    weak_quasinorm,
)


def free_1d():
    return assemble_hamiltonian(build_grid(1, 2, 1), ZeroPotential())


# -- eigenvalues -------------------------------------------------------------

def test_dirichlet_eigenvalues_free_1d():
    np.testing.assert_allclose(dirichlet_eigenvalues(free_1d()), [0.58579, 2.0, 3.41421], atol=1e-5)
    np.testing.assert_allclose(dirichlet_eigenvalues(free_1d()), [2 - math.sqrt(2), 2, 2 + math.sqrt(2)], atol=1e-12)


def test_window_outside_enclosure_is_empty():
    assert dirichlet_eigenvalues(free_1d(), (10.0, 20.0)).size == 0
    assert dirichlet_eigenvalues(free_1d(), (-5.0, -1.0)).size == 0


def test_shift_covariance():
    g = build_grid(2, 2, 0.5)
    e0 = dirichlet_eigenvalues(assemble_hamiltonian(g, RandomPotential(2, 1.0, 0.5)))
    op = assemble_hamiltonian(g, RandomPotential(2, 1.0, 0.5))
    e1 = dirichlet_eigenvalues(op.shifted(0.75))
    np.testing.assert_allclose(e1, e0 + 0.75, atol=1e-11)


def test_dense_cap_guard():
    op = assemble_hamiltonian(build_grid(2, 4, 0.25), ZeroPotential())
    with pytest.raises(DenseCapError, match="dense_cap"):
        dirichlet_eigenvalues(op, dense_cap=100)


def test_windowed_sparse_path_matches_dense():
    op = assemble_hamiltonian(build_grid(2, 4, 0.25), RandomPotential(4, 1.0, 0.5))
    dense = dirichlet_eigenvalues(op)
    window = (1.0, 3.0)
    sparse = dirichlet_eigenvalues(op, window, dense_cap=100)
    ref = dense[(dense >= 1.0) & (dense < 3.0)]
    np.testing.assert_allclose(sparse, ref, atol=1e-9)


def test_inertia_counts_match_dense():
    op = assemble_hamiltonian(build_grid(2, 3, 0.5), RandomPotential(9, 2.0, 0.5))
    eigs = sla.eigvalsh(op.matrix.toarray())
    for sigma in (-1.0, 0.3, 2.0, 7.5, 30.0):
        assert count_below(op, sigma) == int(np.sum(eigs < sigma))
    assert inertia_count(op, (0.3, 7.5)) == int(np.sum((eigs >= 0.3) & (eigs < 7.5)))


def test_count_below_at_exact_eigenvalue():
    # 2 is an eigenvalue of the 3-point chain; strictly below counts one
    assert count_below(free_1d(), 2.0) == 1


def test_count_in_interval_examples():
    assert count_in_interval([1, 2, 2, 3], (2, 3)) == 2
    assert count_in_interval([1, 2, 3], (2, 2)) == 0
    assert count_in_interval([1, 2, 3], (0, 10)) == 3


# -- singular values ---------------------------------------------------------

def test_singular_values_examples():
    np.testing.assert_allclose(singular_values(np.eye(5)).values, np.ones(5))
    np.testing.assert_allclose(singular_values(np.diag([3.0, -4.0])).values, [4.0, 3.0])
    u = np.array([1.0, 2.0, 2.0])
    v = np.array([3.0, 4.0])
    sv = singular_values(np.outer(u, v)).values
    assert sv[0] == pytest.approx(15.0)
    np.testing.assert_allclose(sv[1:], 0.0, atol=1e-12)


def test_singular_value_list_invariants():
    with pytest.raises(ValueError):
        SingularValueList(np.array([1.0, 2.0]), 2)
    with pytest.raises(ValueError):
        SingularValueList(np.array([1.0, -1.0]), 2)
    sv = SingularValueList.from_unsorted([0.5, -3.0, 1.0])
    np.testing.assert_array_equal(sv.values, [3.0, 1.0, 0.5])


def test_singular_values_cap():
    with pytest.raises(DenseCapError):
        singular_values(np.eye(20), dense_cap=10)


def test_singular_values_csv(tmp_path):
    sv = SingularValueList.from_unsorted([2.0, 1.0])
    path = tmp_path / "sv.csv"
    sv.write_csv(path)
    assert path.read_text() == "k,mu\n0,2.0\n1,1.0\n"


def test_weak_quasinorm_examples():
    k = np.arange(1000)
    assert weak_quasinorm(1.0 / (k + 1), 1)[0] == pytest.approx(1.0)
    assert weak_quasinorm((k + 1.0) ** -0.5, 2)[0] == pytest.approx(1.0)
    assert weak_quasinorm(np.array([2.0, 1.0]), 1)[0] == pytest.approx(2.0)
    assert weak_quasinorm(np.array([]), 1) == (0.0, -1)


# -- Dixmier partial sums ----------------------------------------------------

def test_harmonic_partial_sums_tend_to_one():
    mu = 1.0 / np.arange(1, 200001)
    tr = dixmier_partial_sums(mu, [10, 100, 1000, 10000, 100000])
    assert tr.limit_estimate == pytest.approx(1.0, abs=0.02)
    assert tr.trend["non_decreasing"] or tr.trend["non_increasing"]


def test_summable_partial_sums_tend_to_zero():
    mu = 2.0 ** -np.arange(60)
    tr = dixmier_partial_sums(mu, [10, 20, 40])
    assert np.all(np.diff(tr.sums) < 0)
    assert tr.sums[-1] < 0.6


def test_partial_sums_truncation_flag():
    with pytest.warns(RuntimeWarning, match="truncated"):
        tr = dixmier_partial_sums(np.ones(5), [2, 4, 10])
    assert tr.truncated
    assert list(tr.N_grid) == [2, 4]


def test_richardson_log_exact_on_model():
    c, b = 0.3, 2.0
    S = lambda N: c + b / math.log(2 + N)
    assert richardson_log(10, S(10), 1000, S(1000)) == pytest.approx(c, rel=1e-12)


# -- Connes operator ---------------------------------------------------------

def test_connes_operator_zero():
    g = build_grid(2, 2, 0.5, "periodic")
    A = connes_operator(np.zeros(g.size), g)
    assert np.all(A == 0)


def test_connes_operator_constant_is_diagonal_symbol():
    g = build_grid(2, 2, 0.5, "periodic")
    A = connes_operator(np.ones(g.size), g)
    lam = discrete_laplacian_symbol(g).ravel()
    expected = np.sort((1.0 + lam) ** (-1.0))[::-1]
    np.testing.assert_allclose(singular_values(A).values, expected, atol=1e-12)


def test_connes_operator_needs_torus():
    with pytest.raises(ValueError, match="periodic"):
        connes_operator(np.ones(9), build_grid(2, 2, 1.0))


# -- Cwikel ------------------------------------------------------------------

def test_cwikel_rejects_real_shift():
    with pytest.raises(ValueError, match="imaginary"):
        cwikel_table(free_operator_family(2, 0.5), [2.0], z=1.0)


def test_cwikel_inertia_bracket_contains_dense_value():
    op = free_operator_family(2, 0.5)(3.0)
    dense, _ = weak_quasinorm(resolvent_weight_singular_values(op, 1, 1j), 2.0)
    br = cwikel_quasinorm(op, 1, 1j)
    assert br.value <= dense * (1 + 1e-9)
    assert dense <= br.upper * (1 + 1e-9)
    assert br.upper / br.value < 1.01


def test_cwikel_table_bounded_small():
    table = cwikel_table(free_operator_family(2, 0.5), [3.0, 6.0], p=1, d=2)
    assert all(r < 1.15 for r in table.growth_ratios)
    t2 = cwikel_table(free_operator_family(2, 0.5), [3.0, 6.0], p=2, d=2)
    assert all(0.05 < r.quasinorm < 5 for r in t2.rows)


def test_cwikel_zero_operator():
    from doslab.spectral import weak_quasinorm

    assert weak_quasinorm(singular_values(np.zeros((4, 4))), 2.0)[0] == 0.0
