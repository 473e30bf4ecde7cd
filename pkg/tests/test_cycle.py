import math

import numpy as np
import pytest
import scipy.sparse as sp

from flexamg.cycle import (DEFAULT_POST, DEFAULT_PRE, ApproximateSpectralRadius, CoarseCorrection,
                           FlexProgram, ProgramError, Relax, Restrict, StdVSolve,
                           assemble_iteration_matrix, convergence_rate, cycle_work_units,
                           execute_cycle, iteration_eigenvalues, power_iteration, remap_program,
                           run_solver, spectral_radius, standard_v_cycle, validate_program,
                           vcycle_program)
from flexamg.cycle_io import DslError, format_program, parse_program, program_to_dot
from flexamg.hierarchy import build_hierarchy
from flexamg.smoothers import SmootherSpec, smoother_error_operator
from flexamg.sparse import BlockPartition, as_csr

from conftest import dense_smoother, poisson

JAC = SmootherSpec("Jacobi", "weighted", "lex", omega=0.7)
GSF_W = SmootherSpec("GSF", "weighted", "CF", omega_i=1.2, omega_o=0.9)


def dense_operator(fn, n):
    return np.column_stack([fn(np.eye(n)[:, j]) for j in range(n)])


def two_grid(pre=DEFAULT_PRE, post=DEFAULT_POST, alpha=1.0):
    return FlexProgram((Relax(1, pre), Restrict(1), StdVSolve(0), CoarseCorrection(1, alpha),
                        Relax(1, post)), 1, 0)


# ---------------------------------------------------------------- validation

@pytest.mark.parametrize("instrs,l_top,l_std,index", [
    ((Restrict(2), StdVSolve(1)), 2, 1, 2),                                  # never corrected back
    ((Relax(1, JAC), StdVSolve(2)), 2, 1, 0),                                # relax on wrong level
    ((Restrict(2), CoarseCorrection(2), StdVSolve(2)), 2, 1, 1),             # cgc before vsolve
    ((CoarseCorrection(2),), 2, 1, 0),                                       # unbalanced
    ((Restrict(2), StdVSolve(1), StdVSolve(1), CoarseCorrection(2)), 2, 1, 2),
    ((Restrict(2), Relax(1, JAC), CoarseCorrection(2)), 2, 1, 1),            # relax on std level
    ((Restrict(2), Restrict(1), StdVSolve(0), CoarseCorrection(1), CoarseCorrection(2)), 2, 1, 1),
    ((Relax(2, JAC),), 2, 2, 0),                                             # relax on std level
    ((), 2, 2, 0),                                                           # std level never solved
    ((Restrict(2), StdVSolve(1), CoarseCorrection(2, math.inf)), 2, 1, 2),
])
def test_validate_reports_index(instrs, l_top, l_std, index):
    with pytest.raises(ProgramError) as exc:
        validate_program(FlexProgram(instrs, l_top, l_std))
    assert exc.value.index == index


def test_validate_depth_cap():
    prog = FlexProgram((Relax(1, JAC),) * 10 + (Restrict(1), StdVSolve(0), CoarseCorrection(1)), 1, 0)
    validate_program(prog)
    with pytest.raises(ProgramError):
        validate_program(prog, depth_cap=5)


@pytest.mark.parametrize("L,l_std", [(0, 0), (1, 0), (5, 0), (5, 3), (7, 7)])
def test_vcycle_program_is_valid(L, l_std):
    validate_program(vcycle_program(L, l_std))


def test_remap_shifts_levels():
    prog = vcycle_program(4, 2)
    out = remap_program(prog, 6)
    assert (out.l_top, out.l_std) == (6, 4)
    assert [i.level for i in out.instrs] == [i.level + 2 for i in prog.instrs]


def test_remap_collapses_excursion_below_level_zero():
    prog = vcycle_program(4, 0)
    out = validate_program(remap_program(prog, 2))
    assert (out.l_top, out.l_std) == (2, 0)
    assert sum(isinstance(i, StdVSolve) for i in out.instrs) == 1
    assert sum(isinstance(i, Restrict) for i in out.instrs) == 2


def test_remap_to_single_level_is_direct_solve():
    out = validate_program(remap_program(vcycle_program(4, 1), 0))
    assert out.instrs == (StdVSolve(0),)


# ---------------------------------------------------------------- execution

def test_vcycle_program_matches_recursive_v_cycle(hier_aniso6, rng):
    H = hier_aniso6
    prog = vcycle_program(H.L)
    n = H[H.L].nrows
    x, b = rng.standard_normal(n), rng.standard_normal(n)
    for _ in range(3):
        y1 = execute_cycle(prog, H, x, b)
        y2 = standard_v_cycle(H, H.L, x, b)
        np.testing.assert_array_equal(y1, y2)
        x = y1


@pytest.mark.parametrize("pre,post,alpha", [
    (DEFAULT_PRE, DEFAULT_POST, 1.0),
    (JAC, GSF_W, 0.8),
    (SmootherSpec("GSS", "l1", "CF"), SmootherSpec("Jacobi", "l1", "CF"), 1.3),
])
def test_two_grid_matches_dense_oracle(hier_27, pre, post, alpha):
    H = hier_27
    assert H.L == 1
    fine = H[1]
    n = fine.nrows
    Ad = fine.A.toarray()
    P = fine.P.toarray()
    Ac = P.T @ Ad @ P
    zero = np.zeros(n)
    S_pre = dense_operator(lambda e: dense_smoother(fine.A, e, zero, pre, fine.partition, fine.cf_marks), n)
    S_post = dense_operator(lambda e: dense_smoother(fine.A, e, zero, post, fine.partition, fine.cf_marks), n)
    K = np.eye(n) - alpha * P @ np.linalg.solve(Ac, P.T @ Ad)
    E = assemble_iteration_matrix(two_grid(pre, post, alpha), H)
    np.testing.assert_allclose(E, S_post @ K @ S_pre, atol=1e-10)


def test_relax_only_program_equals_smoother_product(hier_27):
    H = hier_27
    fine = H[1]
    prog = FlexProgram((Relax(1, JAC), Relax(1, GSF_W), Restrict(1), StdVSolve(0),
                        CoarseCorrection(1, 0.0)), 1, 0)
    T1 = smoother_error_operator(fine.A, JAC, fine.partition, fine.l1, fine.cf_marks)
    T2 = smoother_error_operator(fine.A, GSF_W, fine.partition, fine.l1, fine.cf_marks)
    np.testing.assert_allclose(assemble_iteration_matrix(prog, H), T2 @ T1, atol=1e-13)


def test_single_level_program_is_exact():
    H = build_hierarchy(poisson(2))
    prog = validate_program(vcycle_program(3), H)
    E = assemble_iteration_matrix(prog, H)
    np.testing.assert_allclose(E, 0.0, atol=1e-13)


def test_fixed_point(hier_aniso6, rng):
    H = hier_aniso6
    n = H[H.L].nrows
    xs = rng.standard_normal(n)
    b = H[H.L].A @ xs
    prog = FlexProgram((Relax(H.L, GSF_W), Restrict(H.L), Relax(H.L - 1, JAC), Restrict(H.L - 1),
                        StdVSolve(H.L - 2), CoarseCorrection(H.L - 1, 1.4), CoarseCorrection(H.L, 0.6),
                        Relax(H.L, SmootherSpec("GSS", "l1", "CF"))), H.L, H.L - 2)
    np.testing.assert_allclose(execute_cycle(prog, H, xs, b), xs, atol=1e-10 * (1 + np.linalg.norm(xs)))


def test_cycle_is_affine(hier_iso8, rng):
    H = hier_iso8
    prog = vcycle_program(H.L)
    n = H[H.L].nrows
    x1, x2, b1, b2 = (rng.standard_normal(n) for _ in range(4))
    lhs = execute_cycle(prog, H, 2 * x1 - x2, 2 * b1 - b2)
    rhs = 2 * execute_cycle(prog, H, x1, b1) - execute_cycle(prog, H, x2, b2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11)


def test_execute_does_not_mutate_input(hier_27):
    x = np.ones(27)
    execute_cycle(vcycle_program(1), hier_27, x, np.zeros(27))
    np.testing.assert_array_equal(x, 1.0)


def test_v_cycle_spectrum_is_real(hier_27):
    E = assemble_iteration_matrix(vcycle_program(1), hier_27)
    assert np.max(np.abs(iteration_eigenvalues(E).imag)) <= 1e-8


def test_v_cycle_reduces_error_on_isotropic_poisson(hier_iso8):
    H = hier_iso8
    A = H[H.L].A
    g = np.random.default_rng(5)
    for _ in range(50):
        e = g.standard_normal(A.shape[0])
        out = standard_v_cycle(H, H.L, e, np.zeros_like(e))
        assert np.linalg.norm(out) < np.linalg.norm(e)


def test_v_cycle_spectral_radius_on_thousand_unknowns():
    H = build_hierarchy(poisson(10))
    assert H[H.L].nrows == 1000
    E = np.column_stack([standard_v_cycle(H, H.L, np.eye(1000)[:, j], np.zeros(1000))
                         for j in range(1000)])
    rho = spectral_radius(E)
    x0 = np.random.default_rng(1).standard_normal(1000)
    stats = run_solver(vcycle_program(H.L), H, np.zeros(1000), x0, tol=1e-12, max_iter=200)
    # asymptotic residual ratio; the averaged rate also includes the fast first cycles
    measured = stats.history[-1] / stats.history[-2]
    assert rho < 1.0
    assert rho < measured + 0.05


# ---------------------------------------------------------------- work units

TABLE_NNZ = [14, 80, 662, 5005, 53102, 448855, 2249704, 6571085, 13169320, 6940000]


def test_work_units_v11():
    assert cycle_work_units(vcycle_program(9), TABLE_NNZ) == pytest.approx(8.5, abs=0.05)


def test_work_units_flexible_profile():
    gsf, gsb = DEFAULT_PRE, DEFAULT_POST
    prog = FlexProgram((Relax(9, gsf), Relax(9, gsf), Restrict(9), Restrict(8), Relax(7, gsf),
                        Restrict(7), StdVSolve(6), CoarseCorrection(7), Relax(7, gsb),
                        CoarseCorrection(8), CoarseCorrection(9), Relax(9, gsb), Relax(9, gsb)), 9, 6)
    validate_program(prog)
    assert cycle_work_units(prog, TABLE_NNZ) == pytest.approx(6.7, abs=0.05)


def test_work_units_without_smoothing_is_zero():
    prog = FlexProgram((Restrict(1), StdVSolve(0), CoarseCorrection(1)), 1, 0)
    assert cycle_work_units(prog, [1, 9]) == 0.0
    # an embedded V-cycle from level 2 smooths twice on levels 2 and 1
    prog = FlexProgram((Restrict(3), StdVSolve(2), CoarseCorrection(3)), 3, 2)
    assert cycle_work_units(prog, [1, 1, 4, 9]) == pytest.approx(2 * (4 + 1) / 9)


def test_work_units_count_gss_twice():
    p1 = FlexProgram((Relax(1, SmootherSpec("GSS")), Restrict(1), StdVSolve(0), CoarseCorrection(1)), 1, 0)
    assert cycle_work_units(p1, [3, 10]) == 2.0


def test_work_units_are_additive(hier_aniso6):
    H = hier_aniso6
    L = H.L
    a = (Relax(L, JAC), Relax(L, SmootherSpec("GSS")))
    tail = (Restrict(L), StdVSolve(L - 1), CoarseCorrection(L))
    mid = (Relax(L, GSF_W),)
    w = lambda ins: cycle_work_units(FlexProgram(ins + tail, L, L - 1), H)
    assert w(a + mid) == pytest.approx(w(a) + w(mid) - w(()))


def test_transfer_costs_add_work(hier_aniso6):
    prog = vcycle_program(hier_aniso6.L)
    assert cycle_work_units(prog, hier_aniso6, transfer_costs=True) > cycle_work_units(prog, hier_aniso6)
    with pytest.raises(ValueError):
        cycle_work_units(prog, hier_aniso6.level_nnz(), transfer_costs=True)


# ---------------------------------------------------------------- spectral radius

@pytest.mark.parametrize("E,expected", [
    (np.diag([0.5, -0.9]), 0.9),
    (np.zeros((4, 4)), 0.0),
    (np.array([[0.0, 0.8], [-0.8, 0.0]]), 0.8),   # complex pair
    (np.diag([0.7, -0.7, 0.1]), 0.7),             # +- pair
])
def test_spectral_radius_examples(E, expected):
    assert spectral_radius(E) == pytest.approx(expected, abs=1e-7)


def test_spectral_radius_of_jacobi_error_operator():
    A = as_csr(sp.diags([-np.ones(2), 2 * np.ones(3), -np.ones(2)], [-1, 0, 1]))
    T = smoother_error_operator(A, SmootherSpec("Jacobi", "weighted", "lex"), BlockPartition.uniform(3, 1))
    assert spectral_radius(T) == pytest.approx(math.cos(math.pi / 4), abs=1e-6)


def test_spectral_radius_matches_eig_on_random_matrices():
    g = np.random.default_rng(3)
    for _ in range(10):
        E = g.standard_normal((30, 30)) / 10
        ref = np.max(np.abs(np.linalg.eigvals(E)))
        assert spectral_radius(E) == pytest.approx(ref, rel=1e-5)


def test_power_iteration_flags_non_convergence():
    E = np.diag(1.0 - 1e-3 * np.arange(50))
    res = power_iteration(E, max_iter=5)
    assert not res.converged
    with pytest.warns(ApproximateSpectralRadius):
        spectral_radius(E, max_iter=5)


# ---------------------------------------------------------------- run_solver

def test_rho_formula():
    assert convergence_rate(1.0, 1e-8, 8) == pytest.approx(0.1, rel=1e-15)
    assert convergence_rate(3.0, 3.0, 0) == 0.0


def test_run_solver_reports_rate(hier_aniso6, rng):
    H = hier_aniso6
    n = H[H.L].nrows
    prog = vcycle_program(H.L)
    st = run_solver(prog, H, np.zeros(n), rng.uniform(-1, 1, n), tol=1e-8)
    assert st.converged and not st.diverged
    assert st.history[-1] <= 1e-8 < st.history[-2]
    assert st.rho == pytest.approx((st.history[-1] / st.history[0]) ** (1 / st.N))
    assert st.wu_total == pytest.approx(st.N * cycle_work_units(prog, H))


def test_run_solver_relative_mode(hier_iso8, rng):
    H = hier_iso8
    n = H[H.L].nrows
    st = run_solver(vcycle_program(H.L), H, rng.standard_normal(n), np.zeros(n), tol=1e-6, mode="relative")
    assert st.converged and st.history[-1] <= 1e-6 * st.history[0]
    with pytest.raises(ValueError):
        run_solver(vcycle_program(H.L), H, np.zeros(n), np.zeros(n), mode="both")


def test_run_solver_already_converged(hier_27):
    st = run_solver(vcycle_program(1), hier_27, np.zeros(27), np.zeros(27))
    assert (st.N, st.rho, st.wu_total, st.converged) == (0, 0.0, 0.0, True)


def test_run_solver_flags_divergence(hier_iso8):
    H = hier_iso8
    L = H.L
    wild = SmootherSpec("Jacobi", "weighted", "lex", omega=1.9)
    prog = FlexProgram((Relax(L, wild),) * 6 + (Restrict(L), StdVSolve(L - 1), CoarseCorrection(L, 0.0)),
                       L, L - 1)
    n = H[L].nrows
    x0 = np.random.default_rng(0).uniform(-1, 1, n)
    st = run_solver(prog, H, np.zeros(n), x0, max_iter=100)
    assert st.diverged and not st.converged
    assert st.fitness_rho == 10.0


# ---------------------------------------------------------------- text and graph formats

def test_dsl_roundtrip(hier_aniso6):
    prog = FlexProgram((Relax(4, GSF_W), Relax(4, JAC), Restrict(4), Relax(3, SmootherSpec("GSS", "l1", "CF")),
                        Restrict(3), StdVSolve(2), CoarseCorrection(3, 0.1 + 0.2),
                        CoarseCorrection(4, 1.85)), 4, 2)
    text = format_program(prog)
    assert parse_program(text) == prog
    assert format_program(parse_program(text)) == text


def test_dsl_without_header_infers_levels():
    prog = parse_program("relax L3 gsf l1 lex\nrestrict L3\nvsolve L2\ncgc L3\n")
    assert (prog.l_top, prog.l_std) == (3, 2)
    validate_program(prog)


@pytest.mark.parametrize("text,lineno", [
    ("relax L3 gsf l1\n", 1),
    ("# l_top=1 l_std=0\nrestrict 3\n", 2),
    ("restrict L1\nvsolve L0\ncgc L1 beta=2\n", 3),
    ("relax L1 jacobi weighted lex w=abc\n", 1),
    ("smooth L1\n", 1),
    ("relax L1 gsf l1 zigzag\n", 1),
])
def test_dsl_errors_name_line(text, lineno):
    with pytest.raises(DslError) as exc:
        parse_program(text)
    assert exc.value.lineno == lineno


def test_dot_traces_v_shape():
    dot = program_to_dot(vcycle_program(3))
    assert dot.startswith('digraph "cycle"')
    assert dot.count("->") == len(vcycle_program(3).instrs)
    assert dot.count("invtriangle") == 3 and dot.count("shape=triangle") == 3
    assert "doublecircle" in dot
