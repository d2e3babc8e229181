"""Fixed-format MPS export (and a paired reader for round trips).

The writer emits the classic eight-character fixed-field MPS layout with
deterministic generated names (``Xnnnnnnn`` for columns, ``Ennnnnnn`` /
``Lnnnnnnn`` for rows, objective ``COST``).  Binary variables are wrapped
in ``INTORG``/``INTEND`` markers and additionally given ``BV`` bound
records.  A constant objective offset is encoded as a negated RHS entry
on the objective row, the usual MPS convention.

``read_mps`` parses exactly this dialect back into a
:class:`StandardFormProgram`; it is a verification aid for the exporter,
not a general MPS reader.  Numeric fields use 12-character ``%.10G``
values, so round trips are exact to ~1e-10 relative.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .program import StandardFormProgram


def _num(v: float) -> str:
    return f"{v:.10G}"


def write_mps(prog: StandardFormProgram, name: str = "H2MG") -> str:
    """Serialize a linear program (no quadratic terms) to MPS text."""
    prog.validate()
    if prog.has_quadratic:
        raise ValueError("MPS export supports linear objectives only")
    n = prog.n_vars
    n_ub = prog.a_ub.shape[0]
    n_eq = prog.a_eq.shape[0]
    col_names = [f"X{j + 1:07d}" for j in range(n)]
    ub_names = [f"L{i + 1:07d}" for i in range(n_ub)]
    eq_names = [f"E{i + 1:07d}" for i in range(n_eq)]

    lines = [f"NAME          {name}"]
    lines.append("ROWS")
    lines.append(" N  COST")
    for nm in ub_names:
        lines.append(f" L  {nm}")
    for nm in eq_names:
        lines.append(f" E  {nm}")

    a_ub = sp.csc_matrix(prog.a_ub)
    a_eq = sp.csc_matrix(prog.a_eq)

    def entry(col: str, row: str, val: float) -> str:
        return f"    {col:<8}  {row:<8}  {_num(val):<12}"

    lines.append("COLUMNS")
    marker = 0
    in_int = False
    for j in range(n):
        want_int = bool(prog.is_binary[j])
        if want_int != in_int:
            marker += 1
            tag = "'INTORG'" if want_int else "'INTEND'"
            lines.append(f"    M{marker:07d}  'MARKER'                 {tag}")
            in_int = want_int
        if prog.c[j] != 0.0:
            lines.append(entry(col_names[j], "COST", prog.c[j]))
        sl = slice(a_ub.indptr[j], a_ub.indptr[j + 1])
        for i, v in zip(a_ub.indices[sl], a_ub.data[sl]):
            lines.append(entry(col_names[j], ub_names[i], v))
        sl = slice(a_eq.indptr[j], a_eq.indptr[j + 1])
        for i, v in zip(a_eq.indices[sl], a_eq.data[sl]):
            lines.append(entry(col_names[j], eq_names[i], v))
    if in_int:
        marker += 1
        lines.append(f"    M{marker:07d}  'MARKER'                 'INTEND'")

    lines.append("RHS")
    if prog.c0 != 0.0:
        lines.append(entry("RHS", "COST", -prog.c0))
    for i, v in enumerate(prog.b_ub):
        if v != 0.0:
            lines.append(entry("RHS", ub_names[i], v))
    for i, v in enumerate(prog.b_eq):
        if v != 0.0:
            lines.append(entry("RHS", eq_names[i], v))

    lines.append("BOUNDS")
    for j in range(n):
        if prog.is_binary[j]:
            lines.append(f" BV {'BND':<8}  {col_names[j]:<8}")
            continue
        lo, hi = prog.lb[j], prog.ub[j]
        if lo != 0.0:
            lines.append(f" LO {'BND':<8}  {col_names[j]:<8}  {_num(lo):<12}")
        if np.isfinite(hi):
            lines.append(f" UP {'BND':<8}  {col_names[j]:<8}  {_num(hi):<12}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def read_mps(text: str) -> StandardFormProgram:
    """Parse MPS text produced by :func:`write_mps`."""
    section = None
    row_kind: dict[str, str] = {}
    row_order: dict[str, int] = {}
    cols: dict[str, dict[str, float]] = {}
    col_order: list[str] = []
    integer_cols: set[str] = set()
    rhs: dict[str, float] = {}
    bounds: dict[str, list] = {}
    in_int = False

    for raw in text.splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        head = raw[:14].strip().upper()
        if not raw.startswith(" ") and head.split()[0] in (
                "NAME", "ROWS", "COLUMNS", "RHS", "BOUNDS", "RANGES", "ENDATA"):
            section = head.split()[0]
            continue
        fields = raw.split()
        if section == "ROWS":
            kind, nm = fields[0].upper(), fields[1]
            row_kind[nm] = kind
            if kind in ("L", "E", "G"):
                row_order[nm] = len(row_order)
        elif section == "COLUMNS":
            if len(fields) >= 3 and fields[1] == "'MARKER'":
                in_int = fields[2] == "'INTORG'"
                continue
            cname = fields[0]
            if cname not in cols:
                cols[cname] = {}
                col_order.append(cname)
                if in_int:
                    integer_cols.add(cname)
            for rname, val in zip(fields[1::2], fields[2::2]):
                cols[cname][rname] = float(val)
        elif section == "RHS":
            for rname, val in zip(fields[1::2], fields[2::2]):
                rhs[rname] = float(val)
        elif section == "BOUNDS":
            btype, cname = fields[0].upper(), fields[2]
            val = float(fields[3]) if len(fields) > 3 else None
            bounds.setdefault(cname, []).append((btype, val))

    n = len(col_order)
    c = np.zeros(n)
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    is_bin = np.zeros(n, dtype=bool)
    ub_rows = [nm for nm, k in row_kind.items() if k == "L"]
    eq_rows = [nm for nm, k in row_kind.items() if k == "E"]
    if any(k == "G" for k in row_kind.values()):
        raise ValueError("G rows are never produced by write_mps")
    ub_index = {nm: i for i, nm in enumerate(ub_rows)}
    eq_index = {nm: i for i, nm in enumerate(eq_rows)}
    a_ub = sp.lil_matrix((len(ub_rows), n))
    a_eq = sp.lil_matrix((len(eq_rows), n))
    obj_row = next(nm for nm, k in row_kind.items() if k == "N")

    for j, cname in enumerate(col_order):
        for rname, val in cols[cname].items():
            if rname == obj_row:
                c[j] = val
            elif rname in ub_index:
                a_ub[ub_index[rname], j] = val
            elif rname in eq_index:
                a_eq[eq_index[rname], j] = val
            else:
                raise ValueError(f"unknown row {rname}")
        for btype, val in bounds.get(cname, []):
            if btype == "BV":
                is_bin[j] = True
                lb[j], ub[j] = 0.0, 1.0
            elif btype == "LO":
                lb[j] = val
            elif btype == "UP":
                ub[j] = val
            else:
                raise ValueError(f"unsupported bound type {btype}")

    b_ub = np.array([rhs.get(nm, 0.0) for nm in ub_rows])
    b_eq = np.array([rhs.get(nm, 0.0) for nm in eq_rows])
    prog = StandardFormProgram(
        c=c, a_ub=sp.csr_matrix(a_ub), b_ub=b_ub, a_eq=sp.csr_matrix(a_eq),
        b_eq=b_eq, lb=lb, ub=ub, is_binary=is_bin,
        c0=-rhs.get(obj_row, 0.0), names=list(col_order))
    prog.validate()
    return prog
