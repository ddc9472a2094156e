"""Exact-rational linear feasibility via a dense phase-1 simplex.

Systems are boxed (every variable carries finite rational bounds) and rows
relate a linear form to a rational right-hand side with <=, >= or ==.  The
solver either returns an exact satisfying assignment or reports infeasibility
with no tolerance in either direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Tuple

from .metric import rat

LE, GE, EQ = "<=", ">=", "=="


class MalformedSystemError(ValueError):
    pass


@dataclass
class LinearSystem:
    variables: List[Tuple[str, Fraction, Fraction]] = field(default_factory=list)
    rows: List[Tuple[Dict[str, Fraction], str, Fraction]] = field(default_factory=list)

    def var(self, name: str, lo, hi) -> str:
        self.variables.append((name, rat(lo), rat(hi)))
        return name

    def add(self, coefs: Dict[str, Fraction], rel: str, rhs) -> None:
        if rel not in (LE, GE, EQ):
            raise MalformedSystemError(f"unknown relation {rel!r}")
        self.rows.append(({k: rat(v) for k, v in coefs.items()}, rel, rat(rhs)))

    def le(self, coefs, rhs):
        self.add(coefs, LE, rhs)

    def ge(self, coefs, rhs):
        self.add(coefs, GE, rhs)

    def eq(self, coefs, rhs):
        self.add(coefs, EQ, rhs)


@dataclass(frozen=True)
class Feasible:
    assignment: Dict[str, Fraction]


@dataclass(frozen=True)
class Infeasible:
    pass


def solve_feasibility(system: LinearSystem):
    """Phase-1 simplex with Bland's pivoting; exact in both directions."""
    names = [name for name, _, _ in system.variables]
    index = {}
    lows = {}
    widths = {}
    for name, lo, hi in system.variables:
        if name in index:
            raise MalformedSystemError(f"duplicate variable {name!r}")
        if lo > hi:
            raise MalformedSystemError(f"variable {name!r} has lower bound above upper bound")
        index[name] = len(index)
        lows[name] = lo
        widths[name] = hi - lo
    for coefs, _, _ in system.rows:
        for name in coefs:
            if name not in index:
                raise MalformedSystemError(f"row references undeclared variable {name!r}")

    # Shift every variable to start at zero; widths become upper-bound rows.
    nvars = len(names)
    work_rows = []  # (dense coefs, rel, rhs) with rhs already shifted
    for coefs, rel, rhs in system.rows:
        dense = [Fraction(0)] * nvars
        shift = Fraction(0)
        for name, c in coefs.items():
            dense[index[name]] += c
            shift += c * lows[name]
        work_rows.append((dense, rel, rhs - shift))
    for name in names:
        w = widths[name]
        dense = [Fraction(0)] * nvars
        dense[index[name]] = Fraction(1)
        work_rows.append((dense, LE, w))

    # Constant rows (no variable support) decide themselves.
    pruned = []
    for dense, rel, rhs in work_rows:
        if all(c == 0 for c in dense):
            ok = (rel == LE and rhs >= 0) or (rel == GE and rhs <= 0) or (rel == EQ and rhs == 0)
            if not ok:
                return Infeasible()
        else:
            pruned.append((dense, rel, rhs))

    nrows = len(pruned)
    if nrows == 0:
        return Feasible({name: lows[name] for name in names})

    # Equality form: append one slack per inequality, flip rows to rhs >= 0,
    # then add artificials wherever no slack can seed the basis.
    ncols = nvars + nrows  # upper bound on slack count: one per row
    tab = []
    rhs_col = []
    basis = []
    slack_at = nvars
    art_cols = []
    for dense, rel, rhs in pruned:
        row = list(dense) + [Fraction(0)] * nrows
        if rel == LE:
            row[slack_at] = Fraction(1)
        elif rel == GE:
            row[slack_at] = Fraction(-1)
        slack = slack_at if rel != EQ else -1
        slack_at += 1
        if rhs < 0:
            row = [-c for c in row]
            rhs = -rhs
        tab.append(row)
        rhs_col.append(rhs)
        if slack >= 0 and row[slack] == 1:
            basis.append(slack)
        else:
            basis.append(-1)  # placeholder: artificial to be appended

    for r in range(nrows):
        if basis[r] == -1:
            col = ncols + len(art_cols)
            art_cols.append(col)
            for rr in range(nrows):
                tab[rr].append(Fraction(1) if rr == r else Fraction(0))
            basis[r] = col
    total_cols = ncols + len(art_cols)
    art_set = set(art_cols)

    # Phase-1 objective: drive the artificial sum to zero.
    red = [Fraction(0)] * total_cols
    value = Fraction(0)
    for r in range(nrows):
        if basis[r] in art_set:
            for c in range(total_cols):
                red[c] += tab[r][c]
            value += rhs_col[r]
    for c in art_cols:
        red[c] -= 1

    while True:
        enter = -1
        for c in range(total_cols):
            if red[c] > 0:
                enter = c
                break
        if enter < 0:
            break
        leave = -1
        best = None
        for r in range(nrows):
            a = tab[r][enter]
            if a > 0:
                ratio = rhs_col[r] / a
                if best is None or ratio < best or (ratio == best and basis[r] < basis[leave]):
                    best = ratio
                    leave = r
        if leave < 0:
            # The artificial objective is bounded below by zero, so an
            # unbounded improving ray cannot occur in a well-formed system.
            raise MalformedSystemError("phase-1 ray: system is not fully boxed")
        piv = tab[leave][enter]
        if piv != 1:
            inv = Fraction(1) / piv
            tab[leave] = [c * inv for c in tab[leave]]
            rhs_col[leave] *= inv
        prow = tab[leave]
        prhs = rhs_col[leave]
        for r in range(nrows):
            if r != leave:
                factor = tab[r][enter]
                if factor != 0:
                    tab[r] = [a - factor * b for a, b in zip(tab[r], prow)]
                    rhs_col[r] -= factor * prhs
        factor = red[enter]
        if factor != 0:
            red = [a - factor * b for a, b in zip(red, prow)]
            value -= factor * prhs
        basis[leave] = enter

    if value != 0:
        return Infeasible()
    assignment = {name: lows[name] for name in names}
    for r in range(nrows):
        if basis[r] < nvars:
            assignment[names[basis[r]]] = lows[names[basis[r]]] + rhs_col[r]
    return Feasible(assignment)


def check_assignment(system: LinearSystem, assignment: Dict[str, Fraction]) -> list:
    """Exact re-substitution; returns violation descriptions (empty iff valid)."""
    bad = []
    for name, lo, hi in system.variables:
        x = assignment[name]
        if not (lo <= x <= hi):
            bad.append(f"{name}={x} outside [{lo},{hi}]")
    for idx, (coefs, rel, rhs) in enumerate(system.rows):
        total = sum((c * assignment[name] for name, c in coefs.items()), Fraction(0))
        ok = (rel == LE and total <= rhs) or (rel == GE and total >= rhs) or (rel == EQ and total == rhs)
        if not ok:
            bad.append(f"row {idx}: {total} !{rel} {rhs}")
    return bad
