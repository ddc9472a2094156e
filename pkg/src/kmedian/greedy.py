"""Uniform dual-growth greedy for facility location (the factor-2 baseline).

Clients grow budgets alpha at unit speed.  A facility opens once the active
bids above connection cost plus the savings offered to already-connected
clients cover the doubled price fhat; a client retires once its budget
reaches its distance to the open set.  The run emits a replayable event log.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Set, Tuple

from .metric import (
    INF,
    FacilityRef,
    MetricInstance,
    ParamSet,
    distance_to_set,
    rat,
    regular,
)

OPEN, CONNECT = "open", "connect"


@dataclass
class DualState:
    """Snapshot (alpha, S, A, theta) of a dual-growth execution."""

    alpha: Dict[int, Fraction]
    S: List[FacilityRef]
    A: Set[int]
    theta: Fraction
    instance: Optional[MetricInstance] = None

    def open_bases(self) -> Set[int]:
        return {ref.base for ref in self.S if not ref.is_free}

    def inactive(self, inst: MetricInstance) -> List[int]:
        return [j for j in inst.clients if j not in self.A]


def initial_state(inst: MetricInstance, theta=Fraction(0)) -> DualState:
    t = rat(theta)
    return DualState(
        alpha={j: t for j in inst.clients},
        S=[],
        A=set(inst.clients),
        theta=t,
        instance=inst,
    )


@dataclass(frozen=True)
class GreedyEvent:
    theta: Fraction
    kind: str  # OPEN or CONNECT
    subject: int  # facility point id for OPEN, client id for CONNECT


@dataclass
class GreedyOutcome:
    S_star: List[FacilityRef]
    alpha_star: Dict[int, Fraction]
    events: List[GreedyEvent]


def _set_distances(inst: MetricInstance, params: ParamSet, state: DualState) -> Dict[int, object]:
    return {j: distance_to_set(inst, params, j, state.S) for j in inst.clients}


def facility_payment(
    inst: MetricInstance,
    params: ParamSet,
    state: DualState,
    i: int,
    dset: Dict[int, object],
) -> Fraction:
    """Current bids toward facility i: active surplus plus frozen savings."""
    total = Fraction(0)
    for j in state.A:
        over = state.alpha[j] - inst.dist[i][j]
        if over > 0:
            total += over
    for j in inst.clients:
        if j not in state.A:
            dj = dset[j]
            if dj is not INF:
                save = dj - inst.dist[j][i]
                if save > 0:
                    total += save
    return total


def next_event(state: DualState, inst: MetricInstance, params: ParamSet) -> Tuple[Fraction, Tuple[str, int]]:
    """Earliest theta' >= theta at which a facility gets paid or a client retires.

    Facility payment grows piecewise linearly in theta', so the threshold is
    solved exactly; ties prefer facility openings, then the lowest index.
    """
    if not state.A:
        raise RuntimeError("next_event on a finished run")
    fhat = params.fhat
    dset = _set_distances(inst, params, state)
    opened = state.open_bases()
    best: Optional[Tuple[Fraction, int, int]] = None  # (theta', kind rank, subject)

    for i in inst.facilities:
        if i in opened:
            continue
        frozen = Fraction(0)
        for j in inst.clients:
            if j not in state.A:
                dj = dset[j]
                if dj is not INF:
                    save = dj - inst.dist[j][i]
                    if save > 0:
                        frozen += save
        need = fhat - frozen
        active_d = sorted(inst.dist[i][j] for j in state.A)
        # payment at current theta
        now = sum((state.theta - d for d in active_d if d < state.theta), Fraction(0))
        if now >= need:
            cand = state.theta
        else:
            cand = None
            prefix = Fraction(0)
            for t, d in enumerate(active_d, start=1):
                prefix += d
                theta_t = (need + prefix) / t
                upper = active_d[t] if t < len(active_d) else None
                if theta_t >= d and (upper is None or theta_t <= upper):
                    cand = max(theta_t, state.theta)
                    break
            if cand is None:
                continue  # not payable with the current budgets alone
        key = (cand, 0, i)
        if best is None or key < best:
            best = key

    for j in sorted(state.A):
        dj = dset[j]
        if dj is INF:
            continue
        key = (dj if dj > state.theta else state.theta, 1, j)
        if best is None or key < best:
            best = key

    if best is None:
        raise RuntimeError("no reachable event; facility payments cannot stall forever")
    theta_next, rank, subject = best
    return theta_next, (OPEN if rank == 0 else CONNECT, subject)


def run_greedy(inst: MetricInstance, f) -> GreedyOutcome:
    """Full run from theta = 0; deterministic under the fixed tie order."""
    params = ParamSet(f=rat(f), epsilon=Fraction(1, 8), eta=Fraction(1, 2 ** 24), u={})
    state = initial_state(inst)
    events: List[GreedyEvent] = []
    while state.A:
        theta_next, (kind, subject) = next_event(state, inst, params)
        for j in state.A:
            state.alpha[j] = theta_next
        state.theta = theta_next
        if kind == OPEN:
            state.S.append(regular(subject))
            events.append(GreedyEvent(theta_next, OPEN, subject))
            dset = _set_distances(inst, params, state)
            for j in sorted(state.A):
                if state.alpha[j] >= dset[j]:
                    state.A.discard(j)
                    events.append(GreedyEvent(theta_next, CONNECT, j))
        else:
            state.A.discard(subject)
            events.append(GreedyEvent(theta_next, CONNECT, subject))
    return GreedyOutcome(S_star=list(state.S), alpha_star=dict(state.alpha), events=events)


@dataclass
class AuditReport:
    ok: bool
    violations: List[str] = field(default_factory=list)


def _check_point(
    inst: MetricInstance,
    params: ParamSet,
    state: DualState,
    label: str,
    violations: List[str],
) -> None:
    fhat = params.fhat
    dset = _set_distances(inst, params, state)
    for j in state.A:
        if not (state.alpha[j] <= dset[j]):
            violations.append(f"{label}: active client {j} has alpha {state.alpha[j]} > d(j,S) {dset[j]}")
    for i in inst.facilities:
        paid = facility_payment(inst, params, state, i, dset)
        if paid > fhat:
            violations.append(f"{label}: facility {i} overbid {paid} > {fhat}")


def audit_no_overbid(events: List[GreedyEvent], inst: MetricInstance, params: ParamSet) -> AuditReport:
    """Replay an event log and check the two growth invariants at every
    atomic step: no facility is overbid, and no active client's budget
    exceeds its distance to the open set.

    Events sharing a time value form one atomic step (an opening retires
    its close clients instantly); the invariants are checked just before
    and just after each step, never between its constituent events.
    """
    state = initial_state(inst)
    violations: List[str] = []
    _check_point(inst, params, state, "start", violations)
    pos = 0
    while pos < len(events):
        theta = events[pos].theta
        if theta < state.theta:
            violations.append(f"event order broken at theta={theta}")
        group = []
        while pos < len(events) and events[pos].theta == theta:
            group.append(events[pos])
            pos += 1
        for j in state.A:
            state.alpha[j] = theta
        state.theta = theta
        names = ",".join(f"{ev.kind} {ev.subject}" for ev in group)
        _check_point(inst, params, state, f"before [{names}] at {theta}", violations)
        for ev in group:
            if ev.kind == OPEN:
                if ev.subject in state.open_bases():
                    violations.append(f"facility {ev.subject} opened twice")
                state.S.append(regular(ev.subject))
            elif ev.kind == CONNECT:
                if ev.subject not in state.A:
                    violations.append(f"client {ev.subject} retired twice")
                state.A.discard(ev.subject)
            else:
                violations.append(f"unknown event kind {ev.kind!r}")
        _check_point(inst, params, state, f"after [{names}] at {theta}", violations)
    return AuditReport(ok=not violations, violations=violations)
