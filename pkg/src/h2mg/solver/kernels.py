"""Hot numerical kernels: simplex pivoting and ADMM iterations.

These loops dominate solver runtime and are compiled with numba when
available; see :mod:`h2mg._accel` for the backend switch.  They are
written in nopython-compatible, row-vectorized NumPy so the pure-NumPy
fallback executes the identical source at C speed per row operation.
"""

from __future__ import annotations

import numpy as np

from .._accel import jit

_BIG = np.int64(1 << 60)


@jit
def simplex_pivot_loop(tab, basis, n_enterable, tol, bland_after, max_pivots):
    """Run primal simplex pivots on a dense tableau until optimal.

    Parameters
    ----------
    tab : (m+1, w+1) float64 array
        Rows 0..m-1 are constraint rows with the right-hand side in the
        last column; row m holds the reduced costs.  Modified in place.
    basis : (m,) int64 array
        Basic column index per row, modified in place.
    n_enterable : int
        Columns [0, n_enterable) may enter the basis (bars artificial
        columns in phase 2).
    tol : float
        Reduced-cost and pivot threshold.
    bland_after : int
        Pivot count after which Dantzig pricing switches to Bland's rule
        (anti-cycling guard).
    max_pivots : int
        Pivot budget.

    Returns
    -------
    status : int
        0 optimal, 1 unbounded, 2 pivot budget exhausted.
    pivots : int
    """
    m = tab.shape[0] - 1
    rhs_col = tab.shape[1] - 1
    pivots = 0
    while pivots < max_pivots:
        red = tab[m, :n_enterable]
        if pivots < bland_after:
            enter = int(np.argmin(red))
            if red[enter] >= -tol:
                return 0, pivots
        else:
            neg = np.where(red < -tol)[0]
            if len(neg) == 0:
                return 0, pivots
            enter = int(neg[0])

        if m == 0:
            return 1, pivots
        col = tab[:m, enter]
        rhs = tab[:m, rhs_col]
        ratios = np.where(col > tol, rhs / np.where(col > tol, col, 1.0), np.inf)
        best = np.min(ratios)
        if best == np.inf:
            return 1, pivots
        # ties resolved toward the smallest basis index (anti-cycling)
        tied = ratios <= best + 1e-12
        cand_basis = np.where(tied, basis, _BIG)
        leave = int(np.argmin(cand_basis))

        piv_row = tab[leave] / tab[leave, enter]
        tab[leave] = piv_row
        factors = tab[:, enter].copy()
        for r in range(m + 1):
            f = factors[r]
            if r != leave and f != 0.0:
                tab[r] -= f * piv_row
        basis[leave] = enter
        pivots += 1
    return 2, pivots


@jit
def admm_qp_loop(h_inv, pd, cvec, m_mat, l, u, rho, sigma,
                 x, z, y, max_iter, eps_abs, eps_rel, check_every):
    """Operator-splitting iterations for the box-form QP

        minimize 0.5 x' diag(pd) x + cvec' x   s.t.  l <= m_mat x <= u.

    ``h_inv`` is the pre-computed inverse of
    ``diag(pd + sigma) + m_mat' diag(rho) m_mat``.  ``x``, ``z`` and ``y``
    carry the (warm-started) iterates and are updated in place.

    Returns ``(status, iters, r_prim, r_dual)``: status 0 when both
    residual norms met their tolerances, 2 on budget exhaustion.
    """
    r_prim = np.inf
    r_dual = np.inf
    it = 0
    while it < max_iter:
        rhs = sigma * x - cvec + m_mat.T @ (rho * z - y)
        x_new = h_inv @ rhs
        mx = m_mat @ x_new
        z_new = np.minimum(np.maximum(mx + y / rho, l), u)
        y += rho * (mx - z_new)
        x[:] = x_new
        z[:] = z_new
        it += 1

        if it % check_every == 0 or it == max_iter:
            my = m_mat.T @ y
            r_prim = np.max(np.abs(mx - z))
            r_dual = np.max(np.abs(pd * x + cvec + my))
            eps_p = eps_abs + eps_rel * max(np.max(np.abs(mx)), np.max(np.abs(z)))
            eps_d = eps_abs + eps_rel * max(np.max(np.abs(pd * x)),
                                            max(np.max(np.abs(cvec)),
                                                np.max(np.abs(my))))
            if r_prim <= eps_p and r_dual <= eps_d:
                return 0, it, r_prim, r_dual
    return 2, it, r_prim, r_dual
