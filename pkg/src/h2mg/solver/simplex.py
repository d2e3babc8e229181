"""Linear programming: built-in two-phase dense simplex plus SciPy backend.

``solve_lp`` routes by ``options.backend``:

* ``builtin`` -- the dense two-phase simplex below (deterministic,
  Dantzig pricing with a Bland's-rule anti-cycling fallback, duals from
  the final basis).  Intended for small and medium programs; memory grows
  with rows x columns.
* ``scipy`` -- ``scipy.optimize.linprog(method="highs")`` for large
  programs; sparse data is passed through unchanged.
* ``auto`` -- builtin when standardized rows + columns stay within
  ``options.builtin_size_limit``, else scipy.

Both paths fill the same :class:`Solution` contract, including the dual
multiplier convention documented there.
"""

from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .kernels import simplex_pivot_loop
from .program import Solution, SolveOptions, SolveStatus, StandardFormProgram

_STATUS_FROM_SCIPY = {
    0: SolveStatus.OPTIMAL,
    1: SolveStatus.LIMIT,
    2: SolveStatus.INFEASIBLE,
    3: SolveStatus.UNBOUNDED,
    4: SolveStatus.LIMIT,
}


def _standardize(prog: StandardFormProgram):
    """Convert to equality standard form with nonnegative shifted variables.

    Returns a dict with the dense standardized system and the bookkeeping
    needed to map solutions and duals back:

    * variables: u = x - lb >= 0 (all lb finite by contract);
    * rows: equalities, general <= rows, then finite upper-bound rows
      u_j <= ub_j - lb_j;
    * right-hand sides made nonnegative by row negation (tracked in
      ``flip``), slack columns for <= rows, minus-slack plus artificial
      for >= rows (negated <=), artificial for equalities.
    """
    n = prog.n_vars
    lb, ub = prog.lb, prog.ub
    a_eq = prog.a_eq.toarray() if sp.issparse(prog.a_eq) else np.asarray(prog.a_eq)
    a_ub = prog.a_ub.toarray() if sp.issparse(prog.a_ub) else np.asarray(prog.a_ub)
    beq = prog.b_eq - a_eq @ lb
    bub = prog.b_ub - a_ub @ lb

    fin = np.flatnonzero(np.isfinite(ub))
    n_bnd = len(fin)
    a_bnd = np.zeros((n_bnd, n))
    a_bnd[np.arange(n_bnd), fin] = 1.0
    b_bnd = (ub - lb)[fin]

    rows = np.vstack([a_eq, a_ub, a_bnd]) if n else np.zeros((0, 0))
    rhs = np.concatenate([beq, bub, b_bnd])
    kind = np.array(["eq"] * len(beq) + ["le"] * (len(bub) + n_bnd), dtype="<U2")
    flip = np.ones(len(rhs))
    neg = rhs < 0
    rows[neg] *= -1.0
    rhs[neg] *= -1.0
    flip[neg] = -1.0
    # negated <= becomes >=; negated equalities stay equalities
    ge = neg & (kind == "le")
    kind = kind.copy()
    kind[ge] = "ge"

    m = len(rhs)
    slack_cols = []
    art_rows = []
    for i in range(m):
        if kind[i] == "le":
            slack_cols.append((i, 1.0))
        elif kind[i] == "ge":
            slack_cols.append((i, -1.0))
            art_rows.append(i)
        else:
            art_rows.append(i)
    n_slack = len(slack_cols)
    n_art = len(art_rows)
    a_std = np.zeros((m, n + n_slack + n_art))
    a_std[:, :n] = rows
    for j, (i, sgn) in enumerate(slack_cols):
        a_std[i, n + j] = sgn
    for j, i in enumerate(art_rows):
        a_std[i, n + n_slack + j] = 1.0

    # initial basis: slack for plain <= rows, artificial elsewhere
    basis = np.empty(m, dtype=np.int64)
    slack_of_row = {i: n + j for j, (i, sgn) in enumerate(slack_cols) if sgn > 0}
    art_of_row = {i: n + n_slack + j for j, i in enumerate(art_rows)}
    for i in range(m):
        basis[i] = slack_of_row.get(i, art_of_row.get(i, -1))

    return {
        "a": a_std, "b": rhs, "basis": basis, "n": n,
        "n_slack": n_slack, "n_art": n_art, "flip": flip,
        "kind": kind, "n_eq": len(beq), "n_ub": len(bub), "fin_ub": fin,
    }


def _build_tableau(a: np.ndarray, b: np.ndarray, obj: np.ndarray,
                   basis: np.ndarray) -> np.ndarray:
    """Dense tableau [A | b; reduced costs | -objective], priced out."""
    m, w = a.shape
    tab = np.zeros((m + 1, w + 1))
    tab[:m, :w] = a
    tab[:m, w] = b
    tab[m, :w] = obj
    for r in range(m):
        cb = obj[basis[r]]
        if cb != 0.0:
            tab[m] -= cb * tab[r]
    return tab


def _solve_builtin(prog: StandardFormProgram, options: SolveOptions) -> Solution:
    t0 = time.perf_counter()
    std = _standardize(prog)
    a, b, basis = std["a"], std["b"], std["basis"]
    m, w = a.shape
    n, n_slack, n_art = std["n"], std["n_slack"], std["n_art"]
    bland_after = options.bland_after or 4 * (m + w)
    tol = options.opt_tol

    # ---- phase 1: drive artificial variables to zero
    if n_art:
        obj1 = np.zeros(w)
        obj1[n + n_slack:] = 1.0
        tab = _build_tableau(a, b, obj1, basis)
        status, piv1 = simplex_pivot_loop(tab, basis, w, tol, bland_after,
                                          options.max_pivots)
        if status == 2:
            return Solution(SolveStatus.LIMIT, iterations=piv1,
                            wall_time_s=time.perf_counter() - t0,
                            message="phase-1 pivot budget exhausted")
        phase1_obj = -tab[m, w]
        if phase1_obj > 1e-7:
            return Solution(SolveStatus.INFEASIBLE, iterations=piv1,
                            wall_time_s=time.perf_counter() - t0,
                            message=f"phase-1 objective {phase1_obj:.3e}")
        # pivot basic artificials out where possible, drop redundant rows
        drop_rows = []
        for r in range(m):
            if basis[r] >= n + n_slack:
                entering = -1
                for j in range(n + n_slack):
                    if abs(tab[r, j]) > 1e-9:
                        entering = j
                        break
                if entering < 0:
                    drop_rows.append(r)
                    continue
                piv = tab[r, entering]
                tab[r] /= piv
                for rr in range(m + 1):
                    if rr != r and tab[rr, entering] != 0.0:
                        tab[rr] -= tab[rr, entering] * tab[r]
                basis[r] = entering
        if drop_rows:
            keep = np.array([r for r in range(m) if r not in set(drop_rows)])
            tab = np.vstack([tab[keep], tab[m:]])
            basis = basis[keep]
            m = len(keep)
        a_kept = tab[:m, :w].copy()
        b_kept = tab[:m, w].copy()
    else:
        piv1 = 0
        a_kept, b_kept = a, b

    # ---- phase 2: original objective over the feasible basis
    obj2 = np.zeros(w)
    obj2[:n] = prog.c
    tab = _build_tableau(a_kept, b_kept, obj2, basis)
    status, piv2 = simplex_pivot_loop(tab, basis, n + n_slack, tol,
                                      bland_after, options.max_pivots)
    wall = time.perf_counter() - t0
    iters = piv1 + piv2
    if status == 1:
        return Solution(SolveStatus.UNBOUNDED, iterations=iters, wall_time_s=wall,
                        message="unbounded in phase 2")
    if status == 2:
        return Solution(SolveStatus.LIMIT, iterations=iters, wall_time_s=wall,
                        message="phase-2 pivot budget exhausted")

    # ---- recover primal solution
    u = np.zeros(w)
    mm = tab.shape[0] - 1
    for r in range(mm):
        u[basis[r]] = tab[r, w]
    x = prog.lb + u[:n]

    # ---- duals from the final basis of the original standardized system
    duals = _extract_duals(prog, std, basis, mm, a, obj2)
    objective = prog.objective_value(x)
    return Solution(SolveStatus.OPTIMAL, objective=objective, x=x, duals=duals,
                    iterations=iters, wall_time_s=wall)


def _extract_duals(prog, std, basis, m_final, a_std, obj2):
    """Row and bound multipliers satisfying the documented dual identity.

    y solves B' y = c_B on the final basis.  Rows negated during
    standardization flip their multiplier sign; bound rows become upper
    multipliers; lower multipliers are the structural reduced costs.
    """
    # Basis columns refer to the (possibly row-reduced) system; rebuild the
    # multiplier on the original row set by solving with the kept rows only.
    # Rows were only ever dropped when redundant, in which case their
    # multiplier is zero.
    n, n_eq, n_ub = std["n"], std["n_eq"], std["n_ub"]
    fin_ub, flip = std["fin_ub"], std["flip"]
    m_all = a_std.shape[0]
    if m_final == m_all:
        bmat = a_std[:, basis]
        cb = obj2[basis]
        try:
            y = np.linalg.solve(bmat.T, cb)
        except np.linalg.LinAlgError:
            y, *_ = np.linalg.lstsq(bmat.T, cb, rcond=None)
    else:
        # redundant rows dropped in phase 1: lstsq over all rows gives a
        # consistent multiplier with zeros spread over dependent rows
        bmat = a_std[:, basis]
        cb = obj2[basis]
        y, *_ = np.linalg.lstsq(bmat.T, cb, rcond=None)
    y = y * flip

    y_eq = y[:n_eq]
    y_ub = y[n_eq:n_eq + n_ub]
    mu_up = np.zeros(n)
    mu_up[fin_ub] = y[n_eq + n_ub:]
    a_eq = prog.a_eq.toarray() if sp.issparse(prog.a_eq) else np.asarray(prog.a_eq)
    a_ub = prog.a_ub.toarray() if sp.issparse(prog.a_ub) else np.asarray(prog.a_ub)
    mu_lo = prog.c - a_eq.T @ y_eq - a_ub.T @ y_ub - mu_up
    # complementary slackness: zero out multipliers of slack lower bounds
    return {"eq": y_eq, "ub": y_ub, "lower": mu_lo, "upper": mu_up}


def _solve_scipy(prog: StandardFormProgram, options: SolveOptions) -> Solution:
    t0 = time.perf_counter()
    bounds = np.column_stack([prog.lb, prog.ub])
    res = linprog(
        prog.c,
        A_ub=prog.a_ub if prog.a_ub.shape[0] else None,
        b_ub=prog.b_ub if prog.a_ub.shape[0] else None,
        A_eq=prog.a_eq if prog.a_eq.shape[0] else None,
        b_eq=prog.b_eq if prog.a_eq.shape[0] else None,
        bounds=bounds, method="highs",
        options={"presolve": True})
    wall = time.perf_counter() - t0
    status = _STATUS_FROM_SCIPY.get(res.status, SolveStatus.LIMIT)
    if status is not SolveStatus.OPTIMAL:
        return Solution(status, wall_time_s=wall, message=str(res.message))
    duals = {
        "eq": np.asarray(res.eqlin.marginals) if prog.a_eq.shape[0] else np.zeros(0),
        "ub": np.asarray(res.ineqlin.marginals) if prog.a_ub.shape[0] else np.zeros(0),
        "lower": np.asarray(res.lower.marginals),
        "upper": np.asarray(res.upper.marginals),
    }
    x = np.asarray(res.x, dtype=float)
    return Solution(SolveStatus.OPTIMAL, objective=prog.objective_value(x), x=x,
                    duals=duals, iterations=int(getattr(res, "nit", 0) or 0),
                    wall_time_s=wall)


def solve_lp(prog: StandardFormProgram, options: SolveOptions | None = None) -> Solution:
    """Solve the continuous relaxation of ``prog`` as a pure LP.

    The binary mask and any quadratic terms are ignored here (callers
    wanting them handled go through ``solve_milp`` / ``solve_qp``).
    """
    options = options or SolveOptions()
    prog.validate()
    backend = options.backend
    if backend == "auto":
        size = (prog.n_vars + prog.a_ub.shape[0] + prog.a_eq.shape[0]
                + int(np.count_nonzero(np.isfinite(prog.ub))))
        backend = "builtin" if size <= options.builtin_size_limit else "scipy"
    if backend == "builtin":
        return _solve_builtin(prog, options)
    if backend == "scipy":
        return _solve_scipy(prog, options)
    raise ValueError(f"unknown LP backend {options.backend!r}")
