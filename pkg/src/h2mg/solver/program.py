"""Standard-form mathematical programs and solver result types.

A :class:`StandardFormProgram` is

    minimize    c' x + sum_j q_j x_j^2 + c0
    subject to  a_eq x == b_eq
                a_ub x <= b_ub
                lb <= x <= ub
                x_j binary for j with is_binary[j]

with sparse constraint rows, an optional diagonal quadratic objective and
binary-only integrality.  All variables must be bounded below (finite
``lb``); upper bounds may be infinite.  Binary variables must have their
bounds inside [0, 1].

:class:`ProgramBuilder` offers an incremental construction API used by the
horizon builders; solvers consume the built program.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    LIMIT = "limit"


@dataclass
class SolveOptions:
    """Numerical and resource options shared by the LP/QP/MILP solvers."""

    feas_tol: float = 1e-9          # [-] constraint feasibility tolerance
    opt_tol: float = 1e-9           # [-] reduced-cost / pruning tolerance
    int_tol: float = 1e-6           # [-] integrality tolerance for binaries
    max_pivots: int = 200000        # simplex pivot budget per LP
    bland_after: int | None = None  # switch to Bland's rule after this many
                                    # pivots (default 4 * (rows + cols))
    node_limit: int | None = None   # branch-and-bound node budget
    time_limit_s: float | None = None
    backend: str = "auto"           # auto | builtin | scipy
    builtin_size_limit: int = 3000  # auto routes to scipy above rows+cols
    qp_max_iter: int = 50000        # ADMM iteration budget
    qp_eps: float = 1e-8            # ADMM absolute residual target
    qp_polish: bool = True          # active-set polish after ADMM
    qp_warm: tuple | None = None    # (x0, y0) warm start for ADMM


@dataclass
class Solution:
    """Solver result: status, optimal point and diagnostics.

    ``duals`` is populated for LP solves only: a dict with keys "eq",
    "ub" (row multipliers), "lower", "upper" (bound multipliers), signed
    so that for a minimization

        obj == b_eq' y_eq + b_ub' y_ub + lb' mu_lo + ub' mu_up

    at an optimal basis (terms with infinite bounds have zero multiplier).
    """

    status: SolveStatus
    objective: float = np.nan
    x: np.ndarray | None = None
    duals: dict | None = None
    node_count: int = 0
    iterations: int = 0
    gap: float = np.nan
    wall_time_s: float = 0.0
    message: str = ""
    qp_state: tuple | None = None   # final ADMM (x, y) for warm starting


@dataclass
class StandardFormProgram:
    c: np.ndarray
    a_ub: sp.csr_matrix
    b_ub: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    is_binary: np.ndarray
    q: np.ndarray | None = None
    c0: float = 0.0
    names: list[str] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_binary(self) -> int:
        return int(np.count_nonzero(self.is_binary))

    @property
    def has_quadratic(self) -> bool:
        return self.q is not None and bool(np.any(self.q != 0.0))

    def validate(self) -> None:
        """Raise ValueError on structural defects."""
        n = self.n_vars
        if not (len(self.lb) == len(self.ub) == len(self.is_binary) == n):
            raise ValueError("variable array lengths disagree")
        if self.q is not None and len(self.q) != n:
            raise ValueError("quadratic diagonal length disagrees")
        if self.a_ub.shape != (len(self.b_ub), n):
            raise ValueError("a_ub shape disagrees with b_ub / n_vars")
        if self.a_eq.shape != (len(self.b_eq), n):
            raise ValueError("a_eq shape disagrees with b_eq / n_vars")
        if np.any(~np.isfinite(self.lb)):
            raise ValueError("all variables must have finite lower bounds")
        if np.any(self.ub < self.lb):
            raise ValueError("ub < lb for some variable")
        if np.any(~np.isfinite(self.c)):
            raise ValueError("non-finite objective coefficients")
        bin_idx = np.flatnonzero(self.is_binary)
        if len(bin_idx):
            if np.any(self.lb[bin_idx] < -1e-12) or np.any(self.ub[bin_idx] > 1 + 1e-12):
                raise ValueError("binary variables must have bounds within [0, 1]")

    def relaxed(self) -> "StandardFormProgram":
        """Continuous relaxation: same program with the binary mask cleared."""
        return StandardFormProgram(
            c=self.c, a_ub=self.a_ub, b_ub=self.b_ub, a_eq=self.a_eq,
            b_eq=self.b_eq, lb=self.lb.copy(), ub=self.ub.copy(),
            is_binary=np.zeros_like(self.is_binary), q=self.q, c0=self.c0,
            names=self.names)

    def objective_value(self, x: np.ndarray) -> float:
        val = float(self.c @ x) + self.c0
        if self.q is not None:
            val += float(self.q @ (x * x))
        return val


class ProgramBuilder:
    """Incremental construction of a :class:`StandardFormProgram`."""

    def __init__(self):
        self._c: list[float] = []
        self._q: list[float] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._bin: list[bool] = []
        self._names: list[str] = []
        self._eq_rows: list[dict[int, float]] = []
        self._eq_rhs: list[float] = []
        self._ub_rows: list[dict[int, float]] = []
        self._ub_rhs: list[float] = []
        self.c0: float = 0.0

    @property
    def n_vars(self) -> int:
        return len(self._c)

    @property
    def n_eq(self) -> int:
        return len(self._eq_rhs)

    @property
    def n_ub(self) -> int:
        return len(self._ub_rhs)

    def add_var(self, name: str, lb: float = 0.0, ub: float = np.inf,
                cost: float = 0.0, quad: float = 0.0, binary: bool = False) -> int:
        if binary and not np.isfinite(ub):
            ub = 1.0
        if binary and (lb < 0 or ub > 1):
            raise ValueError(f"binary variable {name} with bounds outside [0, 1]")
        if not np.isfinite(lb):
            raise ValueError(f"variable {name} needs a finite lower bound")
        self._names.append(name)
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._c.append(float(cost))
        self._q.append(float(quad))
        self._bin.append(bool(binary))
        return len(self._c) - 1

    def add_cost(self, idx: int, cost: float = 0.0, quad: float = 0.0) -> None:
        self._c[idx] += float(cost)
        self._q[idx] += float(quad)

    def add_eq(self, coeffs: dict[int, float], rhs: float) -> int:
        self._eq_rows.append(dict(coeffs))
        self._eq_rhs.append(float(rhs))
        return len(self._eq_rhs) - 1

    def add_le(self, coeffs: dict[int, float], rhs: float) -> int:
        self._ub_rows.append(dict(coeffs))
        self._ub_rhs.append(float(rhs))
        return len(self._ub_rhs) - 1

    def add_ge(self, coeffs: dict[int, float], rhs: float) -> int:
        return self.add_le({k: -v for k, v in coeffs.items()}, -rhs)

    @staticmethod
    def _rows_to_csr(rows: list[dict[int, float]], n: int) -> sp.csr_matrix:
        data, ri, ci = [], [], []
        for r, row in enumerate(rows):
            for j, v in row.items():
                if v != 0.0:
                    ri.append(r)
                    ci.append(j)
                    data.append(float(v))
        return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))

    def build(self) -> StandardFormProgram:
        n = self.n_vars
        q = np.asarray(self._q, dtype=float)
        prog = StandardFormProgram(
            c=np.asarray(self._c, dtype=float),
            a_ub=self._rows_to_csr(self._ub_rows, n),
            b_ub=np.asarray(self._ub_rhs, dtype=float),
            a_eq=self._rows_to_csr(self._eq_rows, n),
            b_eq=np.asarray(self._eq_rhs, dtype=float),
            lb=np.asarray(self._lb, dtype=float),
            ub=np.asarray(self._ub, dtype=float),
            is_binary=np.asarray(self._bin, dtype=bool),
            q=q if np.any(q != 0.0) else None,
            c0=self.c0,
            names=list(self._names))
        prog.validate()
        return prog
