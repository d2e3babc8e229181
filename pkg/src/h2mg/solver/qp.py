"""Convex QP with diagonal quadratic objective via operator splitting.

The program

    minimize c' x + sum_j q_j x_j^2 + c0
    subject to a_eq x == b_eq, a_ub x <= b_ub, lb <= x <= ub

is rewritten in box form  l <= M x <= u  with M stacking the equality
rows (l == u), the inequality rows (l == -inf) and an identity block for
the variable bounds, then solved by ADMM (the OSQP splitting): the matrix
``diag(2q + sigma) + M' R M`` is inverted once and the iterations are
matrix-vector products plus a box projection.  Equality rows get a
stiffer penalty, rows are max-norm equilibrated, and an optional
active-set polish step solves the KKT system of the detected active
constraints to sharpen the iterate to solver precision.

Warm starting: pass ``options.qp_warm = (x0, y0)`` from a previous solve
of a similarly-sized program (the receding-horizon controller does this);
shapes must match.
"""

from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp

from .kernels import admm_qp_loop
from .program import Solution, SolveOptions, SolveStatus, StandardFormProgram

#: ADMM penalty parameters
_SIGMA = 1e-6
_RHO_BASE = 0.1
_RHO_EQ_FACTOR = 1e3
_CHECK_EVERY = 25


def _box_form(prog: StandardFormProgram):
    """Stack constraints as l <= M x <= u with row equilibration."""
    n = prog.n_vars
    a_eq = prog.a_eq.toarray() if sp.issparse(prog.a_eq) else np.asarray(prog.a_eq)
    a_ub = prog.a_ub.toarray() if sp.issparse(prog.a_ub) else np.asarray(prog.a_ub)
    m_mat = np.vstack([a_eq, a_ub, np.eye(n)])
    l = np.concatenate([prog.b_eq, np.full(len(prog.b_ub), -np.inf), prog.lb])
    u = np.concatenate([prog.b_eq, prog.b_ub, prog.ub])
    is_eq = np.concatenate([np.ones(len(prog.b_eq), dtype=bool),
                            np.zeros(len(prog.b_ub) + n, dtype=bool)])
    # max-norm row scaling (keeps l <= Mx <= u equivalent, improves rho)
    scale = np.maximum(np.max(np.abs(m_mat), axis=1), 1e-12)
    m_mat = m_mat / scale[:, None]
    with np.errstate(invalid="ignore"):
        l = l / scale
        u = u / scale
    return m_mat, l, u, is_eq, scale


def solve_qp(prog: StandardFormProgram, options: SolveOptions | None = None) -> Solution:
    """Solve the continuous program with its diagonal quadratic objective.

    Binaries are treated as continuous in [lb, ub]; integrality is the
    branch-and-bound layer's job.  Pure LPs (q == 0) are accepted: the
    splitting still converges and the polish step recovers vertex-quality
    solutions, which keeps this an independent cross-check of the simplex
    path.  Returns OPTIMAL on residual convergence, LIMIT with the best
    iterate otherwise.
    """
    options = options or SolveOptions()
    prog.validate()
    t0 = time.perf_counter()
    n = prog.n_vars
    q = prog.q if prog.q is not None else np.zeros(n)
    pd = 2.0 * np.asarray(q, dtype=float)
    if np.any(pd < 0):
        raise ValueError("quadratic diagonal must be non-negative (convexity)")
    cvec = np.asarray(prog.c, dtype=float)

    m_mat, l, u, is_eq, scale = _box_form(prog)
    k = m_mat.shape[0]
    rho = np.where(is_eq, _RHO_BASE * _RHO_EQ_FACTOR, _RHO_BASE)

    if options.qp_warm is not None:
        x0, y0 = options.qp_warm
        x = np.array(x0, dtype=float, copy=True)
        y = np.array(y0, dtype=float, copy=True)
        if len(x) != n or len(y) != k:
            raise ValueError("warm start shapes do not match the program")
    else:
        x = np.zeros(n)
        y = np.zeros(k)
    z = np.clip(m_mat @ x, l, u)

    eps = max(options.qp_eps, 1e-12)
    # ADMM with adaptive penalty: when the primal and dual residuals fall
    # out of balance, rescale rho toward their geometric mean and
    # refactorize.  The dual variable is kept; only the operator changes.
    h_inv = np.linalg.inv(np.diag(pd + _SIGMA) + (m_mat.T * rho) @ m_mat)
    status_code, iters, r_prim, r_dual = 1, 0, np.inf, np.inf
    remaining = options.qp_max_iter
    while remaining > 0:
        chunk = min(1000, remaining)
        status_code, it, r_prim, r_dual = admm_qp_loop(
            h_inv, pd, cvec, m_mat, l, u, rho, _SIGMA, x, z, y,
            chunk, eps, 0.0, _CHECK_EVERY)
        iters += int(it)
        remaining -= max(int(it), 1)
        if status_code == 0:
            break
        ratio = r_prim / max(r_dual, 1e-16)
        if ratio > 10.0 or ratio < 0.1:
            factor = float(np.clip(np.sqrt(ratio), 0.03, 30.0))
            rho = rho * factor
            h_inv = np.linalg.inv(np.diag(pd + _SIGMA)
                                  + (m_mat.T * rho) @ m_mat)

    if options.qp_polish:
        x_p, y_p = _polish(pd, cvec, m_mat, l, u, x, y, prog, options)
        if x_p is not None:
            x, y = x_p, y_p
            status_code = 0

    converged = status_code == 0
    # final feasibility audit in the original row space
    viol = _violation(prog, x)
    if converged and viol > 1e-6:
        converged = False
    status = SolveStatus.OPTIMAL if converged else SolveStatus.LIMIT
    return Solution(status, objective=prog.objective_value(x), x=x,
                    iterations=int(iters), wall_time_s=time.perf_counter() - t0,
                    message="" if converged else
                    f"residuals r_prim={r_prim:.2e} r_dual={r_dual:.2e} viol={viol:.2e}",
                    qp_state=(x.copy(), y.copy()))


def _violation(prog: StandardFormProgram, x: np.ndarray) -> float:
    v = 0.0
    if prog.a_eq.shape[0]:
        v = max(v, float(np.max(np.abs(prog.a_eq @ x - prog.b_eq))))
    if prog.a_ub.shape[0]:
        v = max(v, float(np.max(np.maximum(prog.a_ub @ x - prog.b_ub, 0.0))))
    v = max(v, float(np.max(np.maximum(prog.lb - x, 0.0), initial=0.0)))
    fin = np.isfinite(prog.ub)
    if np.any(fin):
        v = max(v, float(np.max(np.maximum(x[fin] - prog.ub[fin], 0.0))))
    return v


def _solve_active_kkt(pd, cvec, m_act, b_act, n):
    """Equality-constrained QP step with one iterative-refinement round."""
    na = m_act.shape[0]
    delta = 1e-9
    kkt = np.zeros((n + na, n + na))
    kkt[:n, :n] = np.diag(pd + delta)
    kkt[:n, n:] = m_act.T
    kkt[n:, :n] = m_act
    kkt[n:, n:] = -delta * np.eye(na)
    rhs = np.concatenate([-cvec, b_act])
    try:
        sol = np.linalg.solve(kkt, rhs)
        kkt0 = kkt.copy()
        kkt0[:n, :n] = np.diag(pd)
        kkt0[n:, n:] = 0.0
        sol = sol + np.linalg.solve(kkt, rhs - kkt0 @ sol)
    except np.linalg.LinAlgError:
        return None, None
    if not np.all(np.isfinite(sol)):
        return None, None
    return sol[:n], sol[n:]


def _polish(pd, cvec, m_mat, l, u, x, y, prog, options):
    """Single-shot active-set sharpening of the ADMM iterate.

    Pins the rows the (tightly converged) iterate holds at a bound,
    solves the reduced KKT system, and accepts the candidate only when
    it satisfies the full KKT conditions of the original program:
    feasible, stationary by construction, complementary, multiplier
    signs correct and magnitudes sane.  For a convex QP those conditions
    certify a global optimum, so acceptance needs no reference to the
    unpolished iterate; any doubt (rank-deficient active set, wrong
    signs, exploding multipliers) falls back to the ADMM solution.
    """
    k, n = m_mat.shape
    mx = m_mat @ x
    act_tol = 1e-7 * (1.0 + np.maximum(np.abs(l), 1.0))
    eq_rows = np.isfinite(l) & np.isfinite(u) & (l == u)
    lower_act = np.isfinite(l) & ~eq_rows & (np.abs(mx - l) < act_tol)
    upper_act = np.isfinite(u) & ~eq_rows & (np.abs(mx - u) < act_tol)
    active = lower_act | upper_act | eq_rows
    if not np.any(active):
        return None, None
    b_act = np.where(upper_act, u, l)
    b_act = np.where(eq_rows, l, b_act)
    x_new, nu = _solve_active_kkt(pd, cvec, m_mat[active], b_act[active], n)
    if x_new is None:
        return None, None
    if float(np.max(np.abs(nu), initial=0.0)) > 1e8 * (1.0 + float(np.max(np.abs(cvec)))):
        return None, None          # dependent active rows: multipliers split
    nu_full = np.zeros(k)
    nu_full[active] = nu
    sign_tol = 1e-6 * (1.0 + float(np.max(np.abs(nu), initial=0.0)))
    if np.any(lower_act & (nu_full > sign_tol)):
        return None, None
    if np.any(upper_act & (nu_full < -sign_tol)):
        return None, None
    if _violation(prog, x_new) > 1e-8:
        return None, None
    return x_new, nu_full
