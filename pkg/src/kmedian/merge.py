"""Walk between facility budgets until exactly k facilities open.

The phase solver's output count is controlled by the facility price f and
by the offsets u of free facility copies.  Neither knob moves the count
continuously, so instead of tuning a single run we maintain a pair of
solutions whose regular-open counts straddle k, with parameter vectors
differing in one coordinate by at most eta and traces agreeing on a
common prefix of phases.  Each round either finds an exact-k completion
or hands the pair back with a longer common prefix, editing one phase's
opening sequence step by step (insert a free copy at offset 0, delete
conflicting openings one at a time, re-maximize, materialize the regular
copy) and repairing count jumps by binary search over the offset of a
single free copy.  The final solution opens exactly k regular facilities
plus at most three free copies per phase.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as _dc_replace
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .logadaptive import (
    Bids,
    ExecutionTrace,
    Opening,
    PhaseSequence,
    audit_trace,
    complete_sequence,
    phase_schedule,
    phase_theta,
    verify_bids,
    _complete,
)
from .metric import (
    INF,
    FacilityRef,
    MetricInstance,
    ParamSet,
    extended_distance,
    free_copy,
    make_params,
    regular,
)
from .oracle import cost

__all__ = [
    "FacilityCost",
    "FreeOffset",
    "WalkSolution",
    "SolutionPair",
    "ExactK",
    "Advance",
    "SamePhase",
    "HandOff",
    "PseudoSolution",
    "initialize_sandwich",
    "equalize_parameters",
    "grow_common_prefix",
    "remove_extra_facilities",
    "run_pseudo_approx",
]


# ---------------------------------------------------------------------------
# walk state types


@dataclass(frozen=True)
class FacilityCost:
    """Marker: the pair's difference parameter is the facility price f."""


@dataclass(frozen=True)
class FreeOffset:
    """Marker: the difference parameter is the offset of one free copy."""

    copy: int


DiffParam = Union[FacilityCost, FreeOffset]


@dataclass(frozen=True)
class WalkSolution:
    """A completed run together with the given phases that produced it."""

    params: ParamSet
    given: Tuple[PhaseSequence, ...]
    trace: ExecutionTrace
    count: int
    S_star: Tuple[FacilityRef, ...]
    alpha_star: Dict[int, Fraction]


@dataclass(frozen=True)
class SolutionPair:
    """Two solutions sandwiching k, one difference parameter apart."""

    left: WalkSolution
    right: WalkSolution
    phase: int
    diff_param: DiffParam

    def side_below(self, k: int) -> WalkSolution:
        return self.left if self.left.count < k else self.right

    def side_above(self, k: int) -> WalkSolution:
        return self.left if self.left.count > k else self.right


@dataclass(frozen=True)
class PseudoSolution:
    """Final output: exactly k regular facilities plus free copies."""

    open_set: Tuple[FacilityRef, ...]
    k_regular: int
    free_count: int
    cost: Fraction
    certificate: Dict[int, Fraction]
    params: ParamSet
    trace: Optional[ExecutionTrace]
    padded: Tuple[FacilityRef, ...] = ()
    decision_log: Tuple[str, ...] = ()


@dataclass(frozen=True)
class ExactK:
    solution: PseudoSolution


@dataclass(frozen=True)
class Advance:
    pair: SolutionPair


@dataclass(frozen=True)
class SamePhase:
    pair: SolutionPair


@dataclass(frozen=True)
class HandOff:
    """Two same-parameter solutions for the removal step.

    ``i_star`` is the regular opening present in ``before`` but deleted
    from ``after``; ``suffix`` is after's tail of regular openings not
    present in before.
    """

    before: WalkSolution
    after: WalkSolution
    phase: int
    i_star: Optional[Opening]
    suffix: Tuple[Opening, ...]


class WalkError(RuntimeError):
    """An invariant the walk relies on failed; carries a state dump."""


# ---------------------------------------------------------------------------
# completion plumbing


class _Completer:
    """Memoized CompleteSolution over (params, given phases)."""

    def __init__(self, inst: MetricInstance):
        self.inst = inst
        self.cache: Dict[tuple, WalkSolution] = {}
        self.calls = 0

    @staticmethod
    def _opening_key(opening: Opening) -> tuple:
        bids = opening.bids
        return (
            opening.ref.base,
            opening.ref.copy,
            None if bids is None else tuple(sorted(bids.items())),
        )

    def _key(self, params: ParamSet, given: Sequence[PhaseSequence]) -> tuple:
        return (
            params.f,
            tuple(sorted(params.u.items())),
            tuple(
                (seq.phase, tuple(self._opening_key(o) for o in seq.openings))
                for seq in given
            ),
        )

    def complete(
        self, params: ParamSet, given: Sequence[PhaseSequence]
    ) -> WalkSolution:
        key = self._key(params, given)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        self.calls += 1
        trace, outcome = _complete(self.inst, params, list(given))
        sol = WalkSolution(
            params=params,
            given=tuple(given),
            trace=trace,
            count=trace.regular_count(),
            S_star=tuple(outcome.S_star),
            alpha_star=dict(outcome.alpha_star),
        )
        self.cache[key] = sol
        return sol


def _first_diff_phase(a: ExecutionTrace, b: ExecutionTrace) -> Optional[int]:
    """1-based index of the first phase whose opening refs differ."""
    top = max(a.final_phase, b.final_phase)
    for p in range(1, top + 1):
        ra = a.phases[p - 1].refs() if p <= a.final_phase else []
        rb = b.phases[p - 1].refs() if p <= b.final_phase else []
        if ra != rb:
            return p
    return None


def _straddle(x: int, y: int, k: int) -> bool:
    return (x < k < y) or (y < k < x)


def _index_of(seq: Sequence[Opening], target: Opening) -> int:
    for i, o in enumerate(seq):
        if o is target:
            return i
    raise WalkError("an opening scheduled for deletion is no longer present")


def _phase_openings(trace: ExecutionTrace, phase: int) -> List[Opening]:
    """Openings of the given phase; empty when the trace ends earlier."""
    if phase <= trace.final_phase:
        return list(trace.phases[phase - 1].openings)
    return []


# ---------------------------------------------------------------------------
# walk context: instance-wide bookkeeping shared by the operations


class _Walk:
    def __init__(self, inst: MetricInstance, k: int, epsilon, eta=None):
        if k < 1:
            raise ValueError("k must be positive")
        if k > inst.m:
            raise ValueError(f"k={k} exceeds the {inst.m} available facilities")
        # The price search probes f down to 1/n^2.  A client within
        # distance < 1 of some facility then overbids that facility at the
        # very first threshold (tau >= theta = 1 > fhat), no facility can
        # ever open, and the phase loop creeps to the guard.  Unit
        # client-facility separation rules that out.
        for base in inst.facilities:
            for j in inst.clients:
                if inst.d(base, j) < 1:
                    raise WalkError(
                        f"client {j} is within distance <1 of facility "
                        f"{base}; the price search needs unit separation"
                    )
        self.inst = inst
        self.k = k
        base = make_params(Fraction(1), epsilon, inst.n, eta=eta)
        self.epsilon = base.epsilon
        self.eta = base.eta
        self.M = max(inst.max_distance(), Fraction(1))
        self.u_disabled = 10 * self.M
        self.completer = _Completer(inst)
        self.next_copy = 0

    def fresh_copy(self, base: int) -> FacilityRef:
        ref = free_copy(base, self.next_copy)
        self.next_copy += 1
        return ref

    def params(self, f, u: Dict[int, Fraction]) -> ParamSet:
        return make_params(f, self.epsilon, self.inst.n, eta=self.eta, u=u)

    def solve(self, params: ParamSet, given: Sequence[PhaseSequence]) -> WalkSolution:
        return self.completer.complete(params, given)


# ---------------------------------------------------------------------------
# finalization and padding


def _finalize(
    inst: MetricInstance,
    k: int,
    sol: WalkSolution,
    *,
    audit: bool = True,
) -> PseudoSolution:
    open_set = list(sol.S_star)
    regular_open = [r for r in open_set if not r.is_free]
    padded: List[FacilityRef] = []
    if len(regular_open) < k:
        have = {r.base for r in regular_open}
        for base in inst.facilities:
            if len(regular_open) + len(padded) >= k:
                break
            if base not in have:
                padded.append(regular(base))
        if len(regular_open) + len(padded) < k:
            raise WalkError("cannot pad to k regular facilities")
    elif len(regular_open) > k:
        raise WalkError(
            f"finalize called with {len(regular_open)} > k={k} regular facilities"
        )
    open_set.extend(padded)
    total = cost(inst, open_set, sol.params)
    if audit:
        report = audit_trace(inst, sol.params, sol.trace, sol.params.eta)
        if not report.ok:
            raise WalkError("final audit failed: " + "; ".join(report.violations[:5]))
    return PseudoSolution(
        open_set=tuple(open_set),
        k_regular=len(regular_open) + len(padded),
        free_count=sum(1 for r in open_set if r.is_free),
        cost=total,
        certificate=dict(sol.alpha_star),
        params=sol.params,
        trace=sol.trace,
        padded=tuple(padded),
    )


# ---------------------------------------------------------------------------
# initialization: binary search on the facility price


def initialize_sandwich(
    inst: MetricInstance, k: int, epsilon, eta=None, walk: Optional[_Walk] = None
) -> Union[ExactK, SolutionPair]:
    """Find f values whose run counts straddle k, or an exact-k run.

    Searches f over [1/n^2, 4nM].  The low end opens as many facilities
    as the instance supports; if that is still at most k the run is
    already essentially optimal and is returned padded up to k.  The
    high end always opens exactly one facility.
    """
    w = walk if walk is not None else _Walk(inst, k, epsilon, eta)
    f_lo = Fraction(1, inst.n * inst.n)
    f_hi = 4 * inst.n * w.M
    sol_lo = w.solve(w.params(f_lo, {}), [])
    if sol_lo.count <= w.k:
        return ExactK(_finalize(inst, w.k, sol_lo))
    sol_hi = w.solve(w.params(f_hi, {}), [])
    if sol_hi.count == w.k:
        return ExactK(_finalize(inst, w.k, sol_hi))
    if sol_hi.count > w.k:
        raise WalkError(
            f"high-price run opened {sol_hi.count} > k={w.k} facilities"
        )
    while f_hi - f_lo > w.eta:
        mid = (f_lo + f_hi) / 2
        sol_mid = w.solve(w.params(mid, {}), [])
        if sol_mid.count == w.k:
            return ExactK(_finalize(inst, w.k, sol_mid))
        if sol_mid.count > w.k:
            f_lo, sol_lo = mid, sol_mid
        else:
            f_hi, sol_hi = mid, sol_mid
    phase = _first_diff_phase(sol_lo.trace, sol_hi.trace)
    if phase is None:
        raise WalkError("price gap closed with identical traces but unequal counts")
    return SolutionPair(
        left=sol_lo, right=sol_hi, phase=phase, diff_param=FacilityCost()
    )


# ---------------------------------------------------------------------------
# parameter equalization


def _diff_orientation(
    pair: SolutionPair,
) -> Tuple[WalkSolution, WalkSolution]:
    """(target, source): transfer source's prefix to target's parameters.

    For a price difference the target is the larger f; for an offset
    difference the target is the smaller u, so that bid repair only ever
    clips bids downward.
    """
    a, b = pair.left, pair.right
    if isinstance(pair.diff_param, FacilityCost):
        return (a, b) if a.params.f > b.params.f else (b, a)
    c = pair.diff_param.copy
    ua = a.params.u.get(c, Fraction(0))
    ub = b.params.u.get(c, Fraction(0))
    return (a, b) if ua < ub else (b, a)


def _repair_opening(
    inst: MetricInstance, params: ParamSet, phase: int, opening: Opening
) -> Opening:
    """Clip an opening's recorded bids to the caps under new parameters.

    Bids are capped at (1-delta) times the client's distance to the
    recorded superset; clients whose cap falls to the threshold or below
    leave the active set and are dropped from the bid vector.
    """
    if opening.ref.is_free:
        return opening
    theta = phase_theta(phase, params.epsilon)
    delta = params.delta
    refs = sorted(opening.superset)
    kept: Dict[int, Fraction] = {}
    for j, tau in opening.bids.items():
        dSj = INF
        for r in refs:
            d = extended_distance(inst, params, r, j)
            if dSj is INF or d < dSj:
                dSj = d
        if dSj is INF:
            kept[j] = tau
            continue
        cap = (1 - delta) * dSj
        if theta < cap:
            kept[j] = min(tau, cap)
    return Opening(ref=opening.ref, bids=Bids(kept), superset=opening.superset)


def _repair_prefix(
    inst: MetricInstance, params: ParamSet, phases: Sequence[PhaseSequence]
) -> List[PhaseSequence]:
    return [
        PhaseSequence(
            phase=seq.phase,
            openings=[_repair_opening(inst, params, seq.phase, o) for o in seq.openings],
        )
        for seq in phases
    ]


def _audit_repaired_prefix(
    inst: MetricInstance, params: ParamSet, phases: Sequence[PhaseSequence]
) -> None:
    """Check every repaired regular opening's recorded bids; raise on failure."""
    problems: List[str] = []
    for seq in phases:
        theta = phase_theta(seq.phase, params.epsilon)
        for opening in seq.openings:
            if opening.ref.is_free:
                continue
            problems.extend(
                f"phase {seq.phase} facility {opening.ref.base}: {msg}"
                for msg in verify_bids(
                    inst,
                    params,
                    sorted(opening.superset),
                    theta,
                    opening.ref,
                    opening.bids,
                    params.eta,
                )
            )
    if problems:
        raise WalkError(
            "repaired prefix failed the bid audit: " + "; ".join(problems[:5])
        )


def equalize_parameters(
    inst: MetricInstance, pair: SolutionPair, k: int, walk: _Walk
) -> Union[ExactK, Advance, SamePhase]:
    """Recomplete the source prefix under the target parameters.

    The repaired prefix through the first differing phase is completed
    with the target parameter vector; depending on which side of k the
    result lands, the pair either advances to the next phase or becomes
    a same-parameter pair ready for sequence surgery.
    """
    p = pair.phase
    target, source = _diff_orientation(pair)
    prefix = _repair_prefix(inst, target.params, source.trace.phases[:p])
    _audit_repaired_prefix(inst, target.params, prefix)
    bridged = walk.solve(target.params, prefix)
    if bridged.count == k:
        return ExactK(_finalize(inst, k, bridged))
    if _straddle(bridged.count, source.count, k):
        nxt = _first_diff_phase(bridged.trace, source.trace)
        if nxt is None:
            raise WalkError("advance pair has identical traces but unequal counts")
        if nxt <= p:
            raise WalkError(f"equalize failed to extend the prefix past phase {p}")
        return Advance(
            SolutionPair(
                left=bridged, right=source, phase=nxt, diff_param=pair.diff_param
            )
        )
    if not _straddle(bridged.count, target.count, k):
        raise WalkError(
            f"bridged count {bridged.count} straddles neither side "
            f"(target {target.count}, source {source.count}, k={k})"
        )
    nxt = _first_diff_phase(target.trace, bridged.trace)
    if nxt is None or nxt != p:
        raise WalkError(f"same-parameter pair differs at phase {nxt}, expected {p}")
    return SamePhase(
        SolutionPair(left=target, right=bridged, phase=p, diff_param=pair.diff_param)
    )


# ---------------------------------------------------------------------------
# binary search over one free copy's offset


def _u_search(
    walk: _Walk,
    k: int,
    given: Sequence[PhaseSequence],
    base_u: Dict[int, Fraction],
    f,
    copy_id: int,
) -> Union[ExactK, SolutionPair]:
    """Search u(copy) in [0, 10M] for exact k or an eta-gap straddle.

    Both endpoint counts are recomputed rather than inferred from the
    sequences the endpoints are meant to imitate; a free-for-regular
    swap shifts the count by one, and the trichotomy absorbs it.
    """
    inst = walk.inst

    def at(u_val: Fraction) -> WalkSolution:
        u = dict(base_u)
        u[copy_id] = u_val
        return walk.solve(walk.params(f, u), given)

    lo_u, hi_u = Fraction(0), walk.u_disabled
    lo = at(lo_u)
    if lo.count == k:
        return ExactK(_finalize(inst, k, lo))
    hi = at(hi_u)
    if hi.count == k:
        return ExactK(_finalize(inst, k, hi))
    if not _straddle(lo.count, hi.count, k):
        raise WalkError(
            f"offset search endpoints do not straddle: {lo.count}, {hi.count}, k={k}"
        )
    while hi_u - lo_u > walk.eta:
        mid_u = (lo_u + hi_u) / 2
        mid = at(mid_u)
        if mid.count == k:
            return ExactK(_finalize(inst, k, mid))
        if (mid.count < k) == (lo.count < k):
            lo_u, lo = mid_u, mid
        else:
            hi_u, hi = mid_u, mid
    phase = _first_diff_phase(lo.trace, hi.trace)
    if phase is None:
        raise WalkError("offset gap closed with identical traces but unequal counts")
    return SolutionPair(
        left=lo, right=hi, phase=phase, diff_param=FreeOffset(copy_id)
    )


# ---------------------------------------------------------------------------
# growing the common prefix within one phase


def _free_opening(ref: FacilityRef) -> Opening:
    return Opening(ref=ref, bids=None, superset=frozenset())


def grow_common_prefix(
    inst: MetricInstance, pair: SolutionPair, k: int, walk: _Walk
) -> Union[ExactK, Advance, HandOff]:
    """Morph the right phase-p sequence until the left's is its prefix.

    Each atomic update (insert free copy at offset 0, delete one
    conflicting opening and re-maximize, materialize the regular copy)
    is followed by a full completion and count.  The first update that
    crosses k decides the outcome: an insert crossing resolves by
    offset search, a delete crossing hands off to the removal step, and
    a materialization can never cross.  If no update crosses, the final
    right sequence extends the left one and is handed off whole.
    """
    p = pair.phase
    left, right = pair.left, pair.right
    if left.params.f != right.params.f or left.params.u != right.params.u:
        raise WalkError("grow_common_prefix needs a same-parameter pair")
    prefix = list(right.trace.phases[: p - 1])
    target_seq = _phase_openings(left.trace, p)
    cur = right
    u_now = dict(right.params.u)
    f_now = right.params.f

    def completed(seq: List[Opening]) -> WalkSolution:
        given = prefix + [PhaseSequence(phase=p, openings=seq)]
        return walk.solve(walk.params(f_now, u_now), given)

    guard = 0
    while True:
        guard += 1
        if guard > 4 * (len(target_seq) + 4):
            raise WalkError("prefix growth failed to make progress")
        cur_seq = _phase_openings(cur.trace, p)
        cur_refs = [o.ref for o in cur_seq]
        tgt_refs = [o.ref for o in target_seq]
        if cur_refs[: len(tgt_refs)] == tgt_refs:
            break
        q = 0
        while q < min(len(cur_refs), len(tgt_refs)) and cur_refs[q] == tgt_refs[q]:
            q += 1
        target_open = target_seq[q]
        if target_open.ref.is_free:
            raise WalkError("differing suffix contains a free facility")
        doomed = cur_seq[q:]
        for o in doomed:
            if o.ref.is_free:
                raise WalkError("differing suffix contains a free facility")

        # insert the free stand-in for the next target opening
        tilde = walk.fresh_copy(target_open.ref.base)
        u_now[tilde.copy] = Fraction(0)
        seq = cur_seq + [_free_opening(tilde)]
        nxt = completed(seq)
        if nxt.count == k:
            return ExactK(_finalize(inst, k, nxt))
        if _straddle(cur.count, nxt.count, k):
            given = prefix + [PhaseSequence(phase=p, openings=seq)]
            got = _u_search(walk, k, given, u_now, f_now, tilde.copy)
            if isinstance(got, ExactK):
                return got
            return Advance(got)
        cur = nxt

        # delete the conflicting openings one at a time
        for victim in doomed:
            seq = _phase_openings(cur.trace, p)
            at = _index_of(seq, victim)
            shorter = seq[:at] + seq[at + 1 :]
            refilled = complete_sequence(
                inst,
                walk.params(f_now, u_now),
                prefix,
                PhaseSequence(phase=p, openings=shorter),
                audit=False,
            )
            appended = tuple(refilled.openings[len(shorter) :])
            nxt = completed(list(refilled.openings))
            if nxt.count == k:
                return ExactK(_finalize(inst, k, nxt))
            if _straddle(cur.count, nxt.count, k):
                return HandOff(
                    before=cur, after=nxt, phase=p, i_star=victim, suffix=appended
                )
            cur = nxt

        # materialize the regular copy, reusing the left's recorded opening
        seq = _phase_openings(cur.trace, p)
        at = next((i for i, o in enumerate(seq) if o.ref == tilde), -1)
        if at < 0:
            raise WalkError("inserted free copy vanished before materialization")
        seq[at] = target_open
        nxt = completed(seq)
        if nxt.count == k:
            return ExactK(_finalize(inst, k, nxt))
        if _straddle(cur.count, nxt.count, k):
            raise WalkError(
                "materializing a zero-offset free copy changed the count side"
            )
        cur = nxt

    extras = tuple(_phase_openings(cur.trace, p)[len(target_seq) :])
    return HandOff(
        before=left, after=cur, phase=p, i_star=None, suffix=extras
    )


# ---------------------------------------------------------------------------
# removing extra facilities


def remove_extra_facilities(
    inst: MetricInstance, handoff: HandOff, k: int, walk: _Walk
) -> Union[ExactK, Advance]:
    """Walk from the after-sequence back to the before-sequence.

    A free stand-in for the deleted opening (if any) is appended first;
    then the extra suffix is removed one opening at a time with no
    re-maximization.  The first consecutive pair of completions that
    straddles k pins down one free copy whose offset is binary-searched.
    """
    p = handoff.phase
    after = handoff.after
    u_now = dict(after.params.u)
    f_now = after.params.f
    prefix = list(after.trace.phases[: p - 1])

    def completed(seq: List[Opening]) -> WalkSolution:
        given = prefix + [PhaseSequence(phase=p, openings=seq)]
        return walk.solve(walk.params(f_now, u_now), given)

    base_seq = _phase_openings(after.trace, p)
    if handoff.i_star is not None:
        tilde = walk.fresh_copy(handoff.i_star.ref.base)
        u_now[tilde.copy] = Fraction(0)
        h0_seq = base_seq + [_free_opening(tilde)]
        h0 = completed(h0_seq)
        if h0.count == k:
            return ExactK(_finalize(inst, k, h0))
        if _straddle(after.count, h0.count, k):
            given = prefix + [PhaseSequence(phase=p, openings=h0_seq)]
            got = _u_search(walk, k, given, u_now, f_now, tilde.copy)
            if isinstance(got, ExactK):
                return got
            return Advance(got)
    else:
        h0_seq = base_seq
        h0 = completed(h0_seq)
        if h0.count == k:
            return ExactK(_finalize(inst, k, h0))

    prev_seq, prev = h0_seq, h0
    for victim in handoff.suffix:
        at = _index_of(prev_seq, victim)
        nxt_seq = prev_seq[:at] + prev_seq[at + 1 :]
        nxt = completed(nxt_seq)
        if nxt.count == k:
            return ExactK(_finalize(inst, k, nxt))
        if _straddle(prev.count, nxt.count, k):
            tilde = walk.fresh_copy(victim.ref.base)
            u_now[tilde.copy] = Fraction(0)
            bridged = nxt_seq + [_free_opening(tilde)]
            given = prefix + [PhaseSequence(phase=p, openings=bridged)]
            got = _u_search(walk, k, given, u_now, f_now, tilde.copy)
            if isinstance(got, ExactK):
                return got
            return Advance(got)
        prev_seq, prev = nxt_seq, nxt
    raise WalkError(
        "removal walk exhausted the suffix without crossing k "
        f"(before {handoff.before.count}, after {handoff.after.count}, "
        f"final {prev.count}, k={k})"
    )


# ---------------------------------------------------------------------------
# top-level driver


def run_pseudo_approx(
    inst: MetricInstance, k: int, epsilon, eta=None
) -> PseudoSolution:
    """Produce k regular facilities plus a few free copies, audited.

    Runs the full walk: price search, then per-phase rounds of
    equalization, prefix growth and extra-facility removal until some
    completion opens exactly k regular facilities.
    """
    walk = _Walk(inst, k, epsilon, eta)
    log: List[str] = []

    def done(solution: PseudoSolution) -> PseudoSolution:
        return _dc_replace(solution, decision_log=tuple(log))

    state = initialize_sandwich(inst, k, epsilon, eta, walk=walk)
    if isinstance(state, ExactK):
        log.append("price search: exact k")
        return done(state.solution)
    pair = state
    log.append(
        f"price search: pair at phase {pair.phase} "
        f"counts ({pair.left.count}, {pair.right.count})"
    )
    budget = len(phase_schedule(walk.M, walk.epsilon)) + 64
    rounds = 0
    while True:
        rounds += 1
        if rounds > budget:
            raise WalkError(
                f"phase budget exhausted after {rounds} rounds at phase {pair.phase}; "
                f"counts ({pair.left.count}, {pair.right.count})"
            )
        p = pair.phase
        step = equalize_parameters(inst, pair, k, walk)
        if isinstance(step, ExactK):
            log.append(f"phase {p}: equalize hit exact k")
            return done(step.solution)
        if isinstance(step, Advance):
            pair = step.pair
            log.append(f"phase {p}: equalize advanced to phase {pair.phase}")
            continue
        log.append(f"phase {p}: equalize produced a same-parameter pair")
        grown = grow_common_prefix(inst, step.pair, k, walk)
        if isinstance(grown, ExactK):
            log.append(f"phase {p}: prefix growth hit exact k")
            return done(grown.solution)
        if isinstance(grown, Advance):
            pair = grown.pair
            log.append(f"phase {p}: prefix growth advanced to phase {pair.phase}")
            continue
        log.append(
            f"phase {p}: prefix growth handed off "
            f"{len(grown.suffix)} extra opening(s)"
        )
        removed = remove_extra_facilities(inst, grown, k, walk)
        if isinstance(removed, ExactK):
            log.append(f"phase {p}: removal hit exact k")
            return done(removed.solution)
        pair = removed.pair
        log.append(f"phase {p}: removal advanced to phase {pair.phase}")
