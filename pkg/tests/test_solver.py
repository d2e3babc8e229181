"""Solver oracles: hand LPs, duality, QP closed forms, exact MILP, MPS.

Random-instance checks compare the built-in solvers against independent
references: explicit enumeration for MILPs, the SciPy HiGHS backend for
LPs, and KKT / closed-form solutions for QPs.
"""

import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from h2mg.solver import (ProgramBuilder, SolveOptions, SolveStatus,
                         StandardFormProgram, read_mps, solve_lp, solve_milp,
                         solve_qp, write_mps)

BUILTIN = SolveOptions(backend="builtin")
SCIPY = SolveOptions(backend="scipy")


def _prog(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None, lb=None, ub=None,
          is_binary=None, q=None, c0=0.0):
    c = np.asarray(c, dtype=float)
    n = len(c)
    a_ub = np.zeros((0, n)) if a_ub is None else np.asarray(a_ub, dtype=float)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    a_eq = np.zeros((0, n)) if a_eq is None else np.asarray(a_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    return StandardFormProgram(
        c=c, a_ub=sp.csr_matrix(a_ub), b_ub=b_ub, a_eq=sp.csr_matrix(a_eq),
        b_eq=b_eq,
        lb=np.zeros(n) if lb is None else np.asarray(lb, dtype=float),
        ub=np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float),
        is_binary=np.zeros(n, dtype=bool) if is_binary is None
        else np.asarray(is_binary, dtype=bool),
        q=None if q is None else np.asarray(q, dtype=float), c0=c0)


def _random_feasible_lp(rng, n=8, m_ub=5, m_eq=2):
    """Random LP with a known feasible point (so it is never infeasible)."""
    x0 = rng.uniform(0.2, 2.0, n)
    a_ub = rng.normal(size=(m_ub, n))
    b_ub = a_ub @ x0 + rng.uniform(0.1, 2.0, m_ub)
    a_eq = rng.normal(size=(m_eq, n))
    b_eq = a_eq @ x0
    c = rng.normal(size=n)
    ub = x0 + rng.uniform(0.5, 4.0, n)  # finite box keeps it bounded
    return _prog(c, a_ub, b_ub, a_eq, b_eq, lb=np.zeros(n), ub=ub)


# ---------------------------------------------------------------- LP basics

def test_lp_hand_solution_vertex():
    # max x+y s.t. x+2y<=4, 3x+y<=6, x,y>=0  -> (1.6, 1.2), value 2.8
    prog = _prog([-1.0, -1.0], a_ub=[[1, 2], [3, 1]], b_ub=[4, 6])
    for opts in (BUILTIN, SCIPY):
        sol = solve_lp(prog, opts)
        assert sol.status is SolveStatus.OPTIMAL
        assert sol.objective == pytest.approx(-2.8, abs=1e-9)
        assert np.allclose(sol.x, [1.6, 1.2], atol=1e-8)


def test_lp_equality_and_shifted_bounds():
    # min 2x+3y s.t. x+y=10, 1<=x<=4, 0<=y -> x=4, y=6
    prog = _prog([2.0, 3.0], a_eq=[[1, 1]], b_eq=[10], lb=[1, 0], ub=[4, np.inf])
    sol = solve_lp(prog, BUILTIN)
    assert sol.status is SolveStatus.OPTIMAL
    assert np.allclose(sol.x, [4.0, 6.0], atol=1e-9)
    assert sol.objective == pytest.approx(26.0, abs=1e-9)


def test_lp_negative_lower_bounds():
    prog = _prog([1.0], lb=[-5.0], ub=[7.0])
    sol = solve_lp(prog, BUILTIN)
    assert sol.x[0] == pytest.approx(-5.0)


def test_lp_infeasible_detected():
    prog = _prog([1.0, 1.0], a_eq=[[1, 1]], b_eq=[5], a_ub=[[1, 1]], b_ub=[2])
    for opts in (BUILTIN, SCIPY):
        assert solve_lp(prog, opts).status is SolveStatus.INFEASIBLE


def test_lp_unbounded_detected():
    prog = _prog([-1.0, 0.0])
    for opts in (BUILTIN, SCIPY):
        assert solve_lp(prog, opts).status is SolveStatus.UNBOUNDED


def test_lp_objective_constant_included():
    prog = _prog([1.0], lb=[2.0], ub=[3.0], c0=7.5)
    assert solve_lp(prog, BUILTIN).objective == pytest.approx(9.5)


def test_lp_builtin_matches_scipy_on_random_instances():
    rng = np.random.default_rng(20240811)
    for _ in range(40):
        prog = _random_feasible_lp(rng)
        a = solve_lp(prog, BUILTIN)
        b = solve_lp(prog, SCIPY)
        assert a.status is SolveStatus.OPTIMAL
        assert b.status is SolveStatus.OPTIMAL
        assert a.objective == pytest.approx(b.objective, abs=1e-7, rel=1e-7)


def test_lp_duality_identity_builtin():
    """obj == b_eq'y_eq + b_ub'y_ub + lb'mu_lo + ub'mu_up at the optimum."""
    rng = np.random.default_rng(7)
    for _ in range(25):
        prog = _random_feasible_lp(rng)
        sol = solve_lp(prog, BUILTIN)
        assert sol.status is SolveStatus.OPTIMAL
        d = sol.duals
        dual_obj = float(prog.b_eq @ d["eq"] + prog.b_ub @ d["ub"]
                         + prog.lb @ d["lower"] + prog.ub @ d["upper"])
        assert abs(sol.objective - prog.c0 - dual_obj) <= 1e-6 * (1 + abs(sol.objective))


def test_lp_deterministic_repeat():
    rng = np.random.default_rng(123)
    prog = _random_feasible_lp(rng)
    s1 = solve_lp(prog, BUILTIN)
    s2 = solve_lp(prog, BUILTIN)
    assert s1.x.tobytes() == s2.x.tobytes()
    assert s1.objective == s2.objective


def test_lp_auto_backend_routes_by_size():
    prog = _random_feasible_lp(np.random.default_rng(5))
    small = solve_lp(prog, SolveOptions(backend="auto", builtin_size_limit=10**6))
    large = solve_lp(prog, SolveOptions(backend="auto", builtin_size_limit=1))
    assert small.objective == pytest.approx(large.objective, abs=1e-7)


def test_lp_rejects_free_variables():
    prog = _prog([1.0], lb=[-np.inf])
    with pytest.raises(ValueError):
        solve_lp(prog, BUILTIN)


# ---------------------------------------------------------------------- QP

def test_qp_separable_closed_form():
    # min sum (x_j - a_j)^2 over a box: solution is clip(a, lb, ub)
    a = np.array([-1.0, 0.4, 2.5, 9.0])
    lb = np.zeros(4)
    ub = np.array([5.0, 5.0, 5.0, 5.0])
    prog = _prog(c=-2.0 * a, q=np.ones(4), lb=lb, ub=ub, c0=float(a @ a))
    sol = solve_qp(prog)
    assert sol.status is SolveStatus.OPTIMAL
    assert np.allclose(sol.x, np.clip(a, lb, ub), atol=1e-7)
    expected_obj = float(np.sum((np.clip(a, lb, ub) - a) ** 2))
    assert sol.objective == pytest.approx(expected_obj, abs=1e-7)


def test_qp_equality_constrained_matches_kkt_oracle():
    rng = np.random.default_rng(99)
    for _ in range(20):
        n, m = 6, 2
        qd = rng.uniform(0.5, 3.0, n)
        c = rng.normal(size=n)
        a_eq = rng.normal(size=(m, n))
        x_feas = rng.uniform(-1.0, 1.0, n)
        b_eq = a_eq @ x_feas
        # KKT: [2Q A'; A 0][x; nu] = [-c; b]  (interior solution, wide box)
        kkt = np.zeros((n + m, n + m))
        kkt[:n, :n] = np.diag(2.0 * qd)
        kkt[:n, n:] = a_eq.T
        kkt[n:, :n] = a_eq
        x_star = np.linalg.solve(kkt, np.concatenate([-c, b_eq]))[:n]
        bound = np.max(np.abs(x_star)) + 5.0
        prog = _prog(c, a_eq=a_eq, b_eq=b_eq, lb=-bound * np.ones(n),
                     ub=bound * np.ones(n), q=qd)
        sol = solve_qp(prog)
        assert sol.status is SolveStatus.OPTIMAL
        assert np.allclose(sol.x, x_star, atol=5e-6)


def test_qp_on_pure_lp_agrees_with_simplex():
    rng = np.random.default_rng(31)
    for _ in range(15):
        prog = _random_feasible_lp(rng, n=6, m_ub=4, m_eq=1)
        lp = solve_lp(prog, BUILTIN)
        qp = solve_qp(prog)
        assert qp.status is SolveStatus.OPTIMAL
        assert qp.objective == pytest.approx(lp.objective, abs=1e-6, rel=1e-6)


def test_qp_warm_start_shape_check_and_speed():
    rng = np.random.default_rng(11)
    prog = _random_feasible_lp(rng, n=6, m_ub=4, m_eq=1)
    cold = solve_qp(prog)
    k = prog.a_eq.shape[0] + prog.a_ub.shape[0] + prog.n_vars
    warm = solve_qp(prog, SolveOptions(qp_warm=(cold.x, np.zeros(k))))
    assert warm.objective == pytest.approx(cold.objective, abs=1e-6)
    with pytest.raises(ValueError):
        solve_qp(prog, SolveOptions(qp_warm=(np.zeros(2), np.zeros(1))))


def test_qp_rejects_concave_diagonal():
    prog = _prog([0.0], q=[-1.0], ub=[1.0])
    with pytest.raises(ValueError):
        solve_qp(prog)


# -------------------------------------------------------------------- MILP

def _random_small_milp(rng, n_bin=6, n_cont=8):
    n = n_bin + n_cont
    is_bin = np.zeros(n, dtype=bool)
    is_bin[:n_bin] = True
    lb = np.zeros(n)
    ub = np.concatenate([np.ones(n_bin), rng.uniform(1.0, 5.0, n_cont)])
    x0 = rng.uniform(0.0, 1.0, n) * ub
    m_ub = rng.integers(2, 6)
    a_ub = rng.normal(size=(m_ub, n))
    b_ub = a_ub @ x0 + rng.uniform(0.05, 1.5, m_ub)
    c = rng.normal(size=n)
    return _prog(c, a_ub, b_ub, lb=lb, ub=ub, is_binary=is_bin)


def _enumerate_milp(prog, opts):
    """Independent oracle: brute force over all binary assignments."""
    bin_idx = np.flatnonzero(prog.is_binary)
    best = np.inf
    for bits in itertools.product([0.0, 1.0], repeat=len(bin_idx)):
        lb = prog.lb.copy()
        ub = prog.ub.copy()
        lb[bin_idx] = bits
        ub[bin_idx] = bits
        fixed = StandardFormProgram(
            c=prog.c, a_ub=prog.a_ub, b_ub=prog.b_ub, a_eq=prog.a_eq,
            b_eq=prog.b_eq, lb=lb, ub=ub,
            is_binary=np.zeros_like(prog.is_binary), q=None, c0=prog.c0)
        sol = solve_lp(fixed, opts)
        if sol.status is SolveStatus.OPTIMAL and sol.objective < best:
            best = sol.objective
    return best


def test_milp_knapsack_hand_instance():
    # max 10a+13b+7c, 3a+4b+2c <= 6  ->  a=0, b=1, c=1 (value 20)
    prog = _prog([-10.0, -13.0, -7.0], a_ub=[[3, 4, 2]], b_ub=[6],
                 ub=np.ones(3), is_binary=[True] * 3)
    for opts in (BUILTIN, SCIPY):
        sol = solve_milp(prog, opts)
        assert sol.status is SolveStatus.OPTIMAL
        assert sol.objective == pytest.approx(-20.0, abs=1e-9)
        assert np.allclose(np.round(sol.x), [0, 1, 1])


def test_milp_matches_enumeration_random():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        prog = _random_small_milp(rng)
        oracle = _enumerate_milp(prog, BUILTIN)
        sol = solve_milp(prog, BUILTIN)
        if np.isinf(oracle):
            assert sol.status is SolveStatus.INFEASIBLE
        else:
            assert sol.status is SolveStatus.OPTIMAL
            assert sol.objective == pytest.approx(oracle, abs=1e-6)
            frac = np.abs(sol.x[prog.is_binary]
                          - np.round(sol.x[prog.is_binary]))
            assert np.max(frac, initial=0.0) <= 1e-6


def test_milp_node_limit_reports_limit_status():
    rng = np.random.default_rng(555)
    prog = _random_small_milp(rng, n_bin=10, n_cont=4)
    sol = solve_milp(prog, SolveOptions(backend="builtin", node_limit=2))
    assert sol.status in (SolveStatus.LIMIT, SolveStatus.OPTIMAL,
                          SolveStatus.INFEASIBLE)
    if sol.status is SolveStatus.LIMIT and sol.x is not None:
        assert np.isfinite(sol.gap)


def test_milp_rejects_quadratic():
    prog = _prog([1.0], q=[1.0], ub=[1.0], is_binary=[True])
    with pytest.raises(ValueError):
        solve_milp(prog)


def test_milp_pure_lp_passthrough():
    prog = _prog([2.0, 3.0], a_eq=[[1, 1]], b_eq=[10], lb=[1, 0], ub=[4, np.inf])
    sol = solve_milp(prog, BUILTIN)
    assert sol.objective == pytest.approx(26.0, abs=1e-9)


def test_milp_deterministic_repeat():
    rng = np.random.default_rng(77)
    prog = _random_small_milp(rng)
    s1 = solve_milp(prog, BUILTIN)
    s2 = solve_milp(prog, BUILTIN)
    assert s1.node_count == s2.node_count
    if s1.x is not None:
        assert s1.x.tobytes() == s2.x.tobytes()


# -------------------------------------------------------------------- MPS

def test_mps_roundtrip_preserves_program():
    rng = np.random.default_rng(42)
    prog = _random_small_milp(rng, n_bin=4, n_cont=5)
    text = write_mps(prog, name="RT")
    back = read_mps(text)
    assert back.n_vars == prog.n_vars
    assert np.array_equal(back.is_binary, prog.is_binary)
    assert np.allclose(back.c, prog.c, rtol=1e-9, atol=1e-12)
    assert np.allclose(back.a_ub.toarray(), prog.a_ub.toarray(), rtol=1e-9, atol=1e-12)
    assert np.allclose(back.b_ub, prog.b_ub, rtol=1e-9, atol=1e-12)
    assert np.allclose(back.lb, prog.lb) and np.allclose(
        back.ub[~back.is_binary], prog.ub[~prog.is_binary])
    a = solve_milp(prog, BUILTIN)
    b = solve_milp(back, BUILTIN)
    assert b.objective == pytest.approx(a.objective, abs=1e-8)


def test_mps_fixed_format_and_markers():
    builder = ProgramBuilder()
    x = builder.add_var("x", ub=4.0, cost=1.0)
    z = builder.add_var("z", binary=True, cost=-2.0)
    builder.add_le({x: 1.0, z: 3.0}, 5.0)
    builder.add_eq({x: 1.0, z: 1.0}, 2.0)
    builder.c0 = 1.25
    text = write_mps(builder.build())
    lines = text.splitlines()
    assert lines[0].startswith("NAME")
    assert "ROWS" in lines and "COLUMNS" in lines and "ENDATA" == lines[-1]
    assert any("'INTORG'" in ln for ln in lines)
    assert any("'INTEND'" in ln for ln in lines)
    assert any(ln.startswith(" BV ") for ln in lines)
    # objective constant lands on the COST row of the RHS section, negated
    assert any("COST" in ln and "-1.25" in ln for ln in lines[lines.index("RHS"):])
    back = read_mps(text)
    assert back.c0 == pytest.approx(1.25)


def test_mps_rejects_quadratic():
    prog = _prog([1.0], q=[1.0], ub=[1.0])
    with pytest.raises(ValueError):
        write_mps(prog)


# ---------------------------------------------------------------- builder

def test_program_builder_assembles_counts():
    b = ProgramBuilder()
    i = b.add_var("a", ub=2.0, cost=1.0)
    j = b.add_var("z", binary=True)
    b.add_le({i: 1.0, j: 1.0}, 2.0)
    b.add_ge({i: 1.0}, 0.5)        # stored as negated <=
    b.add_eq({i: 2.0, j: -1.0}, 1.0)
    prog = b.build()
    assert prog.n_vars == 2 and prog.n_binary == 1
    assert prog.a_ub.shape == (2, 2) and prog.a_eq.shape == (1, 2)
    assert prog.b_ub[1] == -0.5 and prog.a_ub[1, 0] == -1.0
    prog.validate()


def test_program_validate_catches_defects():
    with pytest.raises(ValueError):
        _prog([1.0], lb=[2.0], ub=[1.0]).validate()     # lb > ub
    bad = _prog([1.0, 1.0], is_binary=[True, False], ub=[3.0, 1.0])
    with pytest.raises(ValueError):
        bad.validate()                                  # binary bound > 1
