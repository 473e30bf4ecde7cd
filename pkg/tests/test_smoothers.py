import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from flexamg.smoothers import (SmootherSpec, ZeroDiagonalError, apply_smoother,
                               compute_l1_diagonal, smoother_error_operator)
from flexamg.sparse import BlockPartition, as_csr

from conftest import dense_smoother, poisson


def laplace1d(n):
    return as_csr(sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]))


SPECS = [
    SmootherSpec("GSF", "l1", "lex"),
    SmootherSpec("GSB", "l1", "lex"),
    SmootherSpec("GSS", "l1", "lex"),
    SmootherSpec("Jacobi", "l1", "lex"),
    SmootherSpec("GSF", "l1", "CF"),
    SmootherSpec("GSB", "weighted", "CF", omega_i=1.1, omega_o=0.9),
    SmootherSpec("GSF", "weighted", "lex", omega_i=0.7, omega_o=1.3),
    SmootherSpec("Jacobi", "weighted", "lex", omega=0.8),
    SmootherSpec("Jacobi", "weighted", "CF", omega=0.6),
    SmootherSpec("Jacobi", "l1", "CF"),
]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.kind}-{s.variant}-{s.ordering}")
@pytest.mark.parametrize("blocks", [1, 3, 8])
def test_smoother_matches_dense_oracle(spec, blocks):
    A = poisson(3, (0.3, 1.0, 0.6))
    n = A.shape[0]
    g = np.random.default_rng(blocks)
    x, b = g.standard_normal(n), g.standard_normal(n)
    marks = (g.random(n) < 0.4).astype(np.int64)
    part = BlockPartition.uniform(n, blocks)
    got = apply_smoother(A, x, b, spec, part, compute_l1_diagonal(A, part), cf_marks=marks)
    np.testing.assert_allclose(got, dense_smoother(A, x, b, spec, part, marks), rtol=1e-12, atol=1e-12)


def test_hand_computed_forward_gauss_seidel():
    A = laplace1d(3)
    part = BlockPartition.uniform(3, 1)
    x = apply_smoother(A, np.zeros(3), np.ones(3), SmootherSpec("GSF", "weighted", "lex"), part)
    np.testing.assert_allclose(x, [0.5, 0.75, 0.875])


def test_l1_diagonal_counts_only_off_block_entries():
    A = laplace1d(4)
    np.testing.assert_array_equal(compute_l1_diagonal(A, BlockPartition.uniform(4, 1)), 0)
    np.testing.assert_array_equal(compute_l1_diagonal(A, BlockPartition.uniform(4, 2)), [0, 1, 1, 0])
    np.testing.assert_array_equal(compute_l1_diagonal(A, BlockPartition.uniform(4, 4)), [1, 2, 2, 1])


def test_jacobi_error_operator_eigenvalues():
    T = smoother_error_operator(laplace1d(3), SmootherSpec("Jacobi", "weighted", "lex"),
                                BlockPartition.uniform(3, 1))
    lam = np.sort(np.linalg.eigvals(T).real)
    np.testing.assert_allclose(lam, [-np.sqrt(0.5), 0.0, np.sqrt(0.5)], atol=1e-14)


def test_zero_diagonal_is_reported():
    A = as_csr(np.array([[1.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ZeroDiagonalError) as exc:
        apply_smoother(A, np.zeros(2), np.ones(2), SmootherSpec("GSF", "weighted"), BlockPartition.uniform(2, 1))
    assert exc.value.row == 1


def test_l1_requires_diagonal():
    A = laplace1d(3)
    with pytest.raises(ValueError):
        apply_smoother(A, np.zeros(3), np.ones(3), SmootherSpec(), BlockPartition.uniform(3, 1))


@given(st.sampled_from(SPECS), st.integers(1, 8), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_exact_solution_is_a_fixed_point(spec, blocks, seed):
    A = poisson(3, (1.0, 0.2, 0.05))
    g = np.random.default_rng(seed)
    xs = g.standard_normal(27)
    part = BlockPartition.uniform(27, blocks)
    marks = (g.random(27) < 0.5).astype(np.int64)
    out = apply_smoother(A, xs, A @ xs, spec, part, compute_l1_diagonal(A, part), cf_marks=marks)
    np.testing.assert_allclose(out, xs, atol=1e-12)


@pytest.mark.parametrize("kind", ["GSF", "GSB", "Jacobi", "GSS"])
@pytest.mark.parametrize("blocks", [1, 4, 27])
def test_l1_smoothers_converge_on_spd(kind, blocks):
    A = poisson(3, (1e-3, 1.0, 1.0))
    part = BlockPartition.uniform(27, blocks)
    T = smoother_error_operator(A, SmootherSpec(kind, "l1", "lex"), part, compute_l1_diagonal(A, part))
    assert np.max(np.abs(np.linalg.eigvals(T))) < 1.0


def test_spec_json_roundtrip():
    s = SmootherSpec("GSB", "weighted", "CF", omega_i=1.1, omega_o=0.9)
    assert SmootherSpec.from_json(s.to_json()) == s
    assert s.sweeps == 1 and SmootherSpec("GSS").sweeps == 2


@pytest.mark.parametrize("field,value", [("kind", "SOR"), ("variant", "cheby"), ("ordering", "rcm")])
def test_spec_validation(field, value):
    with pytest.raises(ValueError):
        SmootherSpec(**{field: value})
