"""Standard-form LP/QP/MILP solvers used across the package.

Public surface:

* :class:`StandardFormProgram`, :class:`ProgramBuilder` -- program model;
* :func:`solve_lp` -- two-phase dense simplex or SciPy HiGHS backend;
* :func:`solve_qp` -- ADMM with active-set polish (diagonal quadratics);
* :func:`solve_milp` -- exact branch and bound on binary variables;
* :func:`write_mps` / :func:`read_mps` -- fixed-format MPS round trip.
"""

from .bnb import solve_milp
from .mps import read_mps, write_mps
from .program import (ProgramBuilder, Solution, SolveOptions, SolveStatus,
                      StandardFormProgram)
from .qp import solve_qp
from .simplex import solve_lp

__all__ = [
    "ProgramBuilder", "Solution", "SolveOptions", "SolveStatus",
    "StandardFormProgram", "solve_lp", "solve_qp", "solve_milp",
    "write_mps", "read_mps",
]
