"""Exact branch-and-bound over binary variables.

Minimization with LP-relaxation bounds.  Deterministic search order:
best-bound node selection with FIFO tie-breaking, branching on the most
fractional binary (ties to the lowest variable index), down-branch pushed
before the up-branch.  When a node relaxation comes back integral, the
binaries are fixed to their rounded values and the LP is re-solved once,
so incumbents are exact vertex solutions of the fixed-assignment LP --
identical to what explicit enumeration would produce.

``options.backend`` follows :func:`h2mg.solver.simplex.solve_lp` for the
node LPs; ``backend="scipy"`` instead delegates the whole MILP to
``scipy.optimize.milp`` (HiGHS), which is exact and handles programs far
beyond the dense built-in envelope.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import replace

import numpy as np
import scipy.sparse as sp
from scipy import optimize

from .program import Solution, SolveOptions, SolveStatus, StandardFormProgram
from .simplex import solve_lp, _STATUS_FROM_SCIPY


def _most_fractional(x: np.ndarray, bin_idx: np.ndarray, int_tol: float) -> int:
    """Index (into the program) of the most fractional binary, or -1."""
    frac = np.abs(x[bin_idx] - np.round(x[bin_idx]))
    k = -1
    best = int_tol
    for pos, f in enumerate(frac):
        if f > best + 1e-15:
            best = f
            k = pos
    return int(bin_idx[k]) if k >= 0 else -1


def solve_milp(prog: StandardFormProgram, options: SolveOptions | None = None) -> Solution:
    """Exact minimization of a mixed-binary standard-form program.

    Quadratic objectives are rejected: the reference programs that need
    integrality are linear, and bound-based pruning here relies on LP
    relaxations.
    """
    options = options or SolveOptions()
    prog.validate()
    if prog.has_quadratic:
        raise ValueError("solve_milp handles linear objectives only")
    if prog.n_binary == 0:
        return solve_lp(prog, options)
    if options.backend == "scipy":
        return _solve_scipy_milp(prog, options)

    t0 = time.perf_counter()
    lp_options = replace(options, backend="builtin" if options.backend == "auto"
                         else options.backend)
    bin_idx = np.flatnonzero(prog.is_binary)

    root = solve_lp(prog.relaxed(), lp_options)
    if root.status in (SolveStatus.INFEASIBLE, SolveStatus.UNBOUNDED):
        return Solution(root.status, node_count=1,
                        wall_time_s=time.perf_counter() - t0,
                        message=f"root relaxation {root.status.value}")
    if root.status is not SolveStatus.OPTIMAL:
        return Solution(SolveStatus.LIMIT, node_count=1,
                        wall_time_s=time.perf_counter() - t0,
                        message="root relaxation hit a limit")

    incumbent: Solution | None = None
    incumbent_obj = np.inf
    counter = 0
    heap: list = [(root.objective, counter, prog.lb.copy(), prog.ub.copy(), root)]
    nodes = 1
    status = SolveStatus.OPTIMAL

    while heap:
        bound, _, lb, ub, rel = heapq.heappop(heap)
        if bound >= incumbent_obj - options.opt_tol:
            continue
        if options.node_limit is not None and nodes >= options.node_limit:
            status = SolveStatus.LIMIT
            break
        if (options.time_limit_s is not None
                and time.perf_counter() - t0 > options.time_limit_s):
            status = SolveStatus.LIMIT
            break

        j = _most_fractional(rel.x, bin_idx, options.int_tol)
        if j < 0:
            # integral relaxation: fix binaries, re-solve for the exact vertex
            fixed_lb, fixed_ub = lb.copy(), ub.copy()
            rounded = np.round(rel.x[bin_idx])
            fixed_lb[bin_idx] = rounded
            fixed_ub[bin_idx] = rounded
            node_prog = replace(prog.relaxed(), lb=fixed_lb, ub=fixed_ub)
            fixed = solve_lp(node_prog, lp_options)
            nodes += 1
            if fixed.status is SolveStatus.OPTIMAL and fixed.objective < incumbent_obj:
                incumbent = fixed
                incumbent_obj = fixed.objective
            continue

        for branch_val in (0.0, 1.0):
            child_lb, child_ub = lb.copy(), ub.copy()
            child_lb[j] = branch_val
            child_ub[j] = branch_val
            node_prog = replace(prog.relaxed(), lb=child_lb, ub=child_ub)
            child = solve_lp(node_prog, lp_options)
            nodes += 1
            if child.status is SolveStatus.OPTIMAL:
                if child.objective < incumbent_obj - options.opt_tol:
                    counter += 1
                    heapq.heappush(heap, (child.objective, counter,
                                          child_lb, child_ub, child))
            elif child.status is not SolveStatus.INFEASIBLE:
                status = SolveStatus.LIMIT

    wall = time.perf_counter() - t0
    best_open = min((h[0] for h in heap), default=incumbent_obj)
    gap = max(0.0, incumbent_obj - min(best_open, incumbent_obj))
    if incumbent is None:
        final = SolveStatus.INFEASIBLE if status is SolveStatus.OPTIMAL else status
        return Solution(final, node_count=nodes, wall_time_s=wall,
                        message="no integral solution found")
    return Solution(status, objective=incumbent_obj, x=incumbent.x,
                    node_count=nodes, gap=gap, wall_time_s=wall,
                    iterations=incumbent.iterations)


def _solve_scipy_milp(prog: StandardFormProgram, options: SolveOptions) -> Solution:
    t0 = time.perf_counter()
    constraints = []
    if prog.a_ub.shape[0]:
        constraints.append(optimize.LinearConstraint(
            prog.a_ub, -np.inf * np.ones(len(prog.b_ub)), prog.b_ub))
    if prog.a_eq.shape[0]:
        constraints.append(optimize.LinearConstraint(prog.a_eq, prog.b_eq, prog.b_eq))
    res = optimize.milp(
        c=prog.c,
        constraints=constraints,
        integrality=prog.is_binary.astype(int),
        bounds=optimize.Bounds(prog.lb, prog.ub),
        options={"mip_rel_gap": 0.0,
                 **({"time_limit": options.time_limit_s}
                    if options.time_limit_s else {})})
    wall = time.perf_counter() - t0
    status = _STATUS_FROM_SCIPY.get(res.status, SolveStatus.LIMIT)
    if res.status == 1 and res.x is not None:
        status = SolveStatus.LIMIT
    if res.x is None:
        return Solution(status if status is not SolveStatus.OPTIMAL
                        else SolveStatus.INFEASIBLE,
                        wall_time_s=wall, message=str(res.message))
    x = np.asarray(res.x, dtype=float)
    return Solution(status, objective=prog.objective_value(x), x=x,
                    node_count=int(getattr(res, "mip_node_count", 0) or 0),
                    gap=float(getattr(res, "mip_gap", 0.0) or 0.0),
                    wall_time_s=wall, message=str(res.message))
