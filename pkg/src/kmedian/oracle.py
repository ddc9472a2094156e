"""Brute-force optima and certificate checks used as ground truth in tests."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .metric import (
    FacilityRef,
    MetricInstance,
    ParamSet,
    distance_to_set,
    extended_distance,
    make_params,
    rat,
    regular,
)

#: Refuse k-subset enumeration beyond this many candidate sets.
KMEDIAN_ENUM_CAP = 200_000
#: Refuse UFL subset enumeration beyond this many subsets.
UFL_ENUM_CAP = 2 ** 20


class EnumerationCapError(RuntimeError):
    """Raised instead of silently running an oversized brute-force scan."""


@dataclass(frozen=True)
class OracleResult:
    value: Fraction
    witness: frozenset
    enumerated: int


def _as_refs(S: Iterable) -> list:
    refs = []
    for item in S:
        refs.append(item if isinstance(item, FacilityRef) else regular(int(item)))
    return refs


def cost(inst: MetricInstance, S: Iterable, params: Optional[ParamSet] = None) -> Fraction:
    """Connection cost: every client pays its nearest open facility."""
    refs = _as_refs(S)
    if not refs:
        raise ValueError("cost of an empty facility set is undefined")
    if params is None:
        params = ParamSet(f=Fraction(0), epsilon=Fraction(1, 8), eta=Fraction(1, 2 ** 24), u={})
    total = Fraction(0)
    for j in inst.clients:
        total += distance_to_set(inst, params, j, refs)
    return total


def ufl_cost(inst: MetricInstance, S: Iterable, f, params: Optional[ParamSet] = None) -> Fraction:
    refs = _as_refs(S)
    return cost(inst, refs, params) + rat(f) * len(refs)


def _binom(m: int, k: int) -> int:
    out = 1
    for i in range(k):
        out = out * (m - i) // (i + 1)
    return out


def brute_force_kmedian(inst: MetricInstance, k: int) -> OracleResult:
    """Exact opt_k by scanning every k-subset of facilities (cap-guarded)."""
    if not (1 <= k <= inst.m):
        raise ValueError(f"k must lie in [1, {inst.m}]")
    count = _binom(inst.m, k)
    if count > KMEDIAN_ENUM_CAP:
        raise EnumerationCapError(f"C({inst.m},{k}) = {count} exceeds cap {KMEDIAN_ENUM_CAP}")
    best = None
    best_set = None
    enumerated = 0
    facs = list(inst.facilities)
    for combo in itertools.combinations(facs, k):
        enumerated += 1
        total = Fraction(0)
        for j in inst.clients:
            row = inst.dist[j]
            total += min(row[i] for i in combo)
        if best is None or total < best:
            best = total
            best_set = combo
    return OracleResult(value=best, witness=frozenset(best_set), enumerated=enumerated)


def brute_force_ufl(inst: MetricInstance, f) -> OracleResult:
    """Exact UFL optimum over nonempty facility subsets (cap-guarded)."""
    price = rat(f)
    if 2 ** inst.m > UFL_ENUM_CAP:
        raise EnumerationCapError(f"2^{inst.m} exceeds cap {UFL_ENUM_CAP}")
    best = None
    best_set = None
    enumerated = 0
    facs = list(inst.facilities)
    for r in range(1, inst.m + 1):
        for combo in itertools.combinations(facs, r):
            enumerated += 1
            total = price * r
            for j in inst.clients:
                row = inst.dist[j]
                total += min(row[i] for i in combo)
            if best is None or total < best:
                best = total
                best_set = combo
    return OracleResult(value=best, witness=frozenset(best_set), enumerated=enumerated)


@dataclass(frozen=True)
class CertificateReport:
    """Outcome of checking a dual certificate against the exact UFL optimum.

    dual_feasible: alpha/2 fits the UFL dual at price f for every facility.
    payment_balanced: sum(alpha) equals connection cost plus 2f per open
    facility (exact identity for the uniform-growth greedy).
    lmp_bound: cost(S) <= factor * (exact UFL optimum - f*|S|).
    """

    dual_feasible: bool
    worst_dual_slack: Fraction
    payment_lhs: Fraction
    payment_rhs: Fraction
    payment_balanced: bool
    solution_cost: Fraction
    ufl_optimum: Fraction
    open_count: int
    factor: Fraction
    lmp_bound: bool

    @property
    def ok(self) -> bool:
        return self.dual_feasible and self.payment_balanced and self.lmp_bound


def verify_lmp_certificate(
    inst: MetricInstance,
    f,
    S: Iterable,
    alpha: Mapping[int, Fraction],
    factor,
    params: Optional[ParamSet] = None,
) -> CertificateReport:
    price = rat(f)
    fac = rat(factor)
    refs = _as_refs(S)
    if params is None:
        params = ParamSet(f=price, epsilon=Fraction(1, 8), eta=Fraction(1, 2 ** 24), u={})
    worst = None
    for i in inst.facilities:
        paid = Fraction(0)
        for j in inst.clients:
            over = rat(alpha[j]) / 2 - inst.dist[i][j]
            if over > 0:
                paid += over
        slack = price - paid
        if worst is None or slack < worst:
            worst = slack
    solution_cost = cost(inst, refs, params)
    payment_lhs = sum((rat(alpha[j]) for j in inst.clients), Fraction(0))
    payment_rhs = solution_cost + 2 * price * len(refs)
    ufl_opt = brute_force_ufl(inst, price).value
    bound_rhs = fac * (ufl_opt - price * len(refs))
    return CertificateReport(
        dual_feasible=(worst is not None and worst >= 0) or inst.m == 0,
        worst_dual_slack=worst if worst is not None else price,
        payment_lhs=payment_lhs,
        payment_rhs=payment_rhs,
        payment_balanced=(payment_lhs == payment_rhs),
        solution_cost=solution_cost,
        ufl_optimum=ufl_opt,
        open_count=len(refs),
        factor=fac,
        lmp_bound=(solution_cost <= bound_rhs),
    )
