"""Phase-based facility opening with boosted bids and auditable traces.

The solver grows a time threshold theta through phases 1, 1+eps^2,
(1+eps^2)^2, ... instead of continuously.  Within a phase, stage 1
repeatedly opens any facility whose clients can pay for it with bids
drawn from a small box above their current dual values; stage 2 caps
dual values at (1-delta)*d(j,S) and retires clients that reach the cap.
Every opening is recorded together with the bid vector and the open set
it was validated against, so a run can be re-verified, extended, edited
and re-completed without trusting the producer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

from .greedy import DualState
from .lp import GE, LE, Feasible, LinearSystem, solve_feasibility
from .metric import (
    INF,
    FacilityRef,
    MetricInstance,
    ParamSet,
    extended_distance,
    rat,
    rat_str,
    regular,
)

__all__ = [
    "Bids",
    "Opening",
    "PhaseSequence",
    "ExecutionTrace",
    "Openable",
    "NotOpenable",
    "TraceError",
    "phase_theta",
    "phase_schedule",
    "payment_ceiling",
    "is_openable",
    "run_log_adaptive",
    "complete_solution",
    "complete_sequence",
    "audit_trace",
    "AuditOutcome",
]

# Guard for the internal phase loop: generous multiple of the expected
# schedule so a logic error surfaces as an exception, not a hang.
PHASE_GUARD_FACTOR = 64


class TraceError(RuntimeError):
    """Raised when a supplied trace fails its pre-completion audit."""


# ---------------------------------------------------------------------------
# trace data model


class Bids(Mapping[int, Fraction]):
    """Bid vector tau over the active clients at an opening."""

    __slots__ = ("_tau",)

    def __init__(self, tau: Mapping[int, Fraction]):
        self._tau = {int(j): rat(v) for j, v in tau.items()}

    def __getitem__(self, j: int) -> Fraction:
        return self._tau[j]

    def __iter__(self):
        return iter(sorted(self._tau))

    def __len__(self) -> int:
        return len(self._tau)

    def __eq__(self, other) -> bool:
        return isinstance(other, Bids) and self._tau == other._tau

    def __repr__(self) -> str:
        inner = ", ".join(f"{j}: {v}" for j, v in sorted(self._tau.items()))
        return f"Bids({{{inner}}})"

    def to_json_dict(self) -> Dict[str, str]:
        return {str(j): rat_str(v) for j, v in sorted(self._tau.items())}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, str]) -> "Bids":
        return cls({int(j): rat(v) for j, v in data.items()})


@dataclass(frozen=True)
class Opening:
    """One facility opened in a phase.

    ``bids`` is None exactly for free facilities; ``superset`` is the
    absolute open set the opening was validated against (it contains the
    facilities open at validation time and survives later edits of the
    sequence unchanged).
    """

    ref: FacilityRef
    bids: Optional[Bids]
    superset: frozenset

    def __post_init__(self):
        if self.ref.is_free and self.bids is not None:
            raise ValueError("free openings carry no bids")
        if not self.ref.is_free and self.bids is None:
            raise ValueError("regular openings must carry bids")

    def to_json_dict(self) -> dict:
        return {
            "facility": _ref_to_json(self.ref),
            "kind": "free" if self.ref.is_free else "regular",
            "tau": None if self.bids is None else self.bids.to_json_dict(),
            "superset": sorted(
                (_ref_to_json(r) for r in self.superset),
                key=lambda d: (d["base"], d.get("copy", -1)),
            ),
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "Opening":
        bids = None if data.get("tau") is None else Bids.from_json_dict(data["tau"])
        return cls(
            ref=_ref_from_json(data["facility"]),
            bids=bids,
            superset=frozenset(_ref_from_json(r) for r in data["superset"]),
        )


def _ref_to_json(ref: FacilityRef) -> dict:
    if ref.is_free:
        return {"base": ref.base, "copy": ref.copy}
    return {"base": ref.base}


def _ref_from_json(data: Mapping) -> FacilityRef:
    if "copy" in data and data["copy"] != -1:
        return FacilityRef(base=int(data["base"]), copy=int(data["copy"]))
    return regular(int(data["base"]))


@dataclass
class PhaseSequence:
    """Ordered openings of one phase; empty sequences are legal."""

    phase: int
    openings: List[Opening] = field(default_factory=list)

    def refs(self) -> List[FacilityRef]:
        return [o.ref for o in self.openings]

    def free_count(self) -> int:
        return sum(1 for o in self.openings if o.ref.is_free)

    def to_json_dict(self) -> dict:
        return {
            "phase": self.phase,
            "openings": [o.to_json_dict() for o in self.openings],
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "PhaseSequence":
        return cls(
            phase=int(data["phase"]),
            openings=[Opening.from_json_dict(o) for o in data["openings"]],
        )


@dataclass
class ExecutionTrace:
    """Dense list of phase sequences plus the parameters they ran under."""

    phases: List[PhaseSequence]
    params: ParamSet

    def __post_init__(self):
        for idx, seq in enumerate(self.phases, start=1):
            if seq.phase != idx:
                raise ValueError(f"phase list not dense at index {idx}")

    @property
    def final_phase(self) -> int:
        return len(self.phases)

    def all_refs(self) -> List[FacilityRef]:
        return [ref for seq in self.phases for ref in seq.refs()]

    def regular_count(self) -> int:
        return sum(1 for r in self.all_refs() if not r.is_free)

    def free_count(self) -> int:
        return sum(1 for r in self.all_refs() if r.is_free)

    def to_json_dict(self) -> dict:
        return {
            "final_phase": self.final_phase,
            "phases": [seq.to_json_dict() for seq in self.phases],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, data: Mapping, params: ParamSet) -> "ExecutionTrace":
        phases = [PhaseSequence.from_json_dict(p) for p in data["phases"]]
        return cls(phases=phases, params=params)

    @classmethod
    def from_json(cls, text: str, params: ParamSet) -> "ExecutionTrace":
        return cls.from_json_dict(json.loads(text), params)


# ---------------------------------------------------------------------------
# phase arithmetic


def phase_theta(phase: int, epsilon: Fraction) -> Fraction:
    """Threshold value of the given 1-indexed phase."""
    if phase < 1:
        raise ValueError("phases are 1-indexed")
    return (1 + rat(epsilon) ** 2) ** (phase - 1)


def phase_schedule(Mmax, epsilon) -> List[Fraction]:
    """Thresholds [1, 1+eps^2, ...] up to the first value >= 6*Mmax."""
    Mmax = rat(Mmax)
    if Mmax < 1:
        raise ValueError("Mmax must be at least 1")
    growth = 1 + rat(epsilon) ** 2
    out = [Fraction(1)]
    while out[-1] < 6 * Mmax:
        out.append(out[-1] * growth)
    return out


# ---------------------------------------------------------------------------
# openability


@dataclass(frozen=True)
class Openable:
    bids: Bids


@dataclass(frozen=True)
class NotOpenable:
    pass


def _dset(inst: MetricInstance, params: ParamSet, S: Sequence[FacilityRef], x):
    best = INF
    for ref in S:
        d = extended_distance(inst, params, ref, x)
        if d < best:
            best = d
    return best


def payment_ceiling(
    inst: MetricInstance,
    params: ParamSet,
    S: Sequence[FacilityRef],
    theta: Fraction,
    i: FacilityRef,
) -> Fraction:
    """Largest total payment facility i could collect at threshold theta.

    Every client contributes [min((1+eps^2)*theta, (1-delta)*d(j,S)) -
    (1-delta)*d(i,j)]^+ whether it is active (bid box) or retired
    (frozen savings); the two cases meet at the cap, so one formula
    covers both.  The value is nondecreasing in theta for fixed S, which
    is what makes phase skipping and endpoint audits exact.
    """
    eps = params.epsilon
    delta = params.delta
    boost = (1 + eps * eps) * theta
    total = Fraction(0)
    for j in inst.clients:
        dS = _dset(inst, params, S, j)
        cap = boost if dS is INF else min(boost, (1 - delta) * dS)
        gain = cap - (1 - delta) * extended_distance(inst, params, i, j)
        if gain > 0:
            total += gain
    return total


def _active_set(inst, params, S, theta) -> Set[int]:
    """Clients still below their retirement cap at threshold theta."""
    delta = params.delta
    out = set()
    for j in inst.clients:
        dS = _dset(inst, params, S, j)
        if dS is INF or theta < (1 - delta) * dS:
            out.add(j)
    return out


def openability_system(
    inst: MetricInstance,
    params: ParamSet,
    S: Sequence[FacilityRef],
    theta: Fraction,
    i: FacilityRef,
    eta: Fraction,
) -> Tuple[LinearSystem, List[int], Set[int]]:
    """Feasibility system for opening i at (theta, S).

    Returns (system, in_ball, active).  Variables are the bids of active
    clients within eps*theta of i; all other bids are pinned at theta.
    The payment row asks for at least fhat - n*eta; one capped-sum row
    per (candidate facility, boosted client) pair bounds the damage any
    single facility could claim.  Rows that already hold at the box
    maximum are omitted: every left side is nondecreasing in the bids,
    so such rows can never bind.
    """
    eps = params.epsilon
    delta = params.delta
    fhat = params.fhat
    theta = rat(theta)
    boost = (1 + eps * eps) * theta
    n = inst.n

    dS = {j: _dset(inst, params, S, j) for j in inst.clients}
    active = {j for j in inst.clients if dS[j] is INF or theta < (1 - delta) * dS[j]}
    inactive = [j for j in inst.clients if j not in active]

    d_i = {j: extended_distance(inst, params, i, j) for j in inst.clients}
    in_ball = sorted(j for j in active if d_i[j] <= eps * theta)
    out_ball = [j for j in active if d_i[j] > eps * theta]

    ub: Dict[int, Fraction] = {}
    for j in in_ball:
        cap = boost if dS[j] is INF else min(boost, (1 - delta) * dS[j])
        ub[j] = cap

    sys = LinearSystem()
    for j in in_ball:
        sys.var(f"tau_{j}", theta, ub[j])

    # Payment row.  In-ball terms are linear outright: tau_j >= theta >
    # (1-delta)*eps*theta >= (1-delta)*d(i,j).
    pay_const = Fraction(0)
    for j in out_ball:
        gain = theta - (1 - delta) * d_i[j]
        if gain > 0:
            pay_const += gain
    for j in inactive:
        gain = dS[j] - d_i[j]
        if gain > 0:
            pay_const += (1 - delta) * gain
    coefs = {f"tau_{j}": Fraction(1) for j in in_ball}
    rhs = fhat - n * rat(eta) - pay_const + sum((1 - delta) * d_i[j] for j in in_ball)
    if coefs:
        sys.add(coefs, GE, rhs)
    elif rhs > 0:
        # No bid variables and constants fall short: encode the
        # contradiction so the solver reports infeasibility.
        sys.add({}, GE, rhs)

    # Capped-payment rows.  For candidate i0 the active part
    # sum_j [tau_j - d(i0,j)]^+ is shared by all rows of i0; the retired
    # part depends on the boosted client k through tau_k only.
    candidates = [regular(b) for b in inst.facilities]
    aux_count = 0
    for i0 in candidates:
        d0 = {j: extended_distance(inst, params, i0, j) for j in inst.clients}

        # Active-part bookkeeping at box maximum, splitting constants,
        # linear terms and genuinely two-sided terms.
        act_const = Fraction(0)
        act_max = Fraction(0)
        lin_terms: List[Tuple[str, Fraction]] = []  # (var, offset) with tau - off >= 0 always
        hinge_terms: List[Tuple[int, Fraction]] = []  # (client, offset), needs aux var
        for j in out_ball:
            gain = theta - d0[j]
            if gain > 0:
                act_const += gain
                act_max += gain
        for j in in_ball:
            off = d0[j]
            if ub[j] <= off:
                continue
            act_max += ub[j] - off
            if theta >= off:
                lin_terms.append((f"tau_{j}", off))
            else:
                hinge_terms.append((j, off))

        # Retired-part maxima per boosted client k.
        def retired_profile(tau_k_value: Fraction, k_ref_d0: Fraction) -> Fraction:
            total = Fraction(0)
            for j in inactive:
                gain = tau_k_value - 2 * d0[j] - k_ref_d0
                if gain > 0:
                    total += gain
            return total

        worst_const_retired = Fraction(0)
        for k in out_ball:
            val = retired_profile(theta, d0[k])
            if val > worst_const_retired:
                worst_const_retired = val

        rows: List[Optional[int]] = []
        if out_ball and act_max + worst_const_retired > fhat:
            rows.append(None)
        for k in in_ball:
            if act_max + retired_profile(ub[k], d0[k]) > fhat:
                rows.append(k)

        if not rows:
            continue

        # Shared aux variables for the two-sided active terms of i0.
        t_names: Dict[int, str] = {}
        for j, off in hinge_terms:
            name = f"t_{aux_count}"
            aux_count += 1
            t_names[j] = name
            sys.var(name, Fraction(0), ub[j] - off)
            sys.add({name: Fraction(1), f"tau_{j}": Fraction(-1)}, GE, -off)

        for k in rows:
            row: Dict[str, Fraction] = {}
            row_const = act_const
            for var, off in lin_terms:
                row[var] = row.get(var, Fraction(0)) + 1
                row_const -= off
            for j, _off in hinge_terms:
                row[t_names[j]] = row.get(t_names[j], Fraction(0)) + 1
            if k is None:
                row_const += worst_const_retired
            else:
                # Boosted client k in the ball: each retired client j
                # adds [tau_k - 2d(j,i0) - d(k,i0)]^+, linear when theta
                # already clears the offset, an aux variable otherwise.
                d_k_i0 = d0[k]
                for j in inactive:
                    off = 2 * d0[j] + d_k_i0
                    if ub[k] <= off:
                        continue
                    if theta >= off:
                        row[f"tau_{k}"] = row.get(f"tau_{k}", Fraction(0)) + 1
                        row_const -= off
                    else:
                        name = f"s_{aux_count}"
                        aux_count += 1
                        sys.var(name, Fraction(0), ub[k] - off)
                        sys.add({name: Fraction(1), f"tau_{k}": Fraction(-1)}, GE, -off)
                        row[name] = row.get(name, Fraction(0)) + 1
            if row:
                sys.add(row, LE, fhat - row_const)
            elif row_const > fhat:
                sys.add({}, LE, fhat - row_const)

    return sys, in_ball, active


def is_openable(state: DualState, i: FacilityRef, params: ParamSet, eta=Fraction(0)):
    """Decide whether i can be paid for at the state's threshold.

    Builds the bid-box feasibility system and delegates to the exact
    solver; on success the witness bids are returned with out-of-ball
    actives pinned at theta.
    """
    inst = state.instance
    sys, in_ball, active = openability_system(
        inst, params, state.S, state.theta, i, rat(eta)
    )
    verdict = solve_feasibility(sys)
    if not isinstance(verdict, Feasible):
        return NotOpenable()
    tau = {j: state.theta for j in active}
    for j in in_ball:
        tau[j] = verdict.assignment[f"tau_{j}"]
    return Openable(Bids(tau))


# ---------------------------------------------------------------------------
# bid verification (no solver): check a recorded bid vector against the
# four openability conditions at an explicit (theta, open set) pair.


def verify_bids(
    inst: MetricInstance,
    params: ParamSet,
    S_prime: Sequence[FacilityRef],
    theta: Fraction,
    i: FacilityRef,
    bids: Bids,
    eta: Fraction,
) -> List[str]:
    """Return human-readable complaints; empty list means the bids pass."""
    eps = params.epsilon
    delta = params.delta
    fhat = params.fhat
    n = inst.n
    problems: List[str] = []

    dS = {j: _dset(inst, params, S_prime, j) for j in inst.clients}
    active = {j for j in inst.clients if dS[j] is INF or theta < (1 - delta) * dS[j]}
    retired = [j for j in inst.clients if j not in active]
    if set(bids) != active:
        problems.append(
            f"bid keys {sorted(bids)} differ from active set {sorted(active)}"
        )
        return problems

    d_i = {j: extended_distance(inst, params, i, j) for j in inst.clients}
    boost = (1 + eps * eps) * theta
    for j in sorted(active):
        tau = bids[j]
        if d_i[j] > eps * theta:
            if tau != theta:
                problems.append(f"out-of-ball client {j} bids {tau} != theta {theta}")
        else:
            cap = boost if dS[j] is INF else min(boost, (1 - delta) * dS[j])
            if not (theta <= tau <= cap):
                problems.append(f"in-ball client {j} bid {tau} outside [{theta}, {cap}]")

    payment = Fraction(0)
    for j in active:
        gain = bids[j] - (1 - delta) * d_i[j]
        if gain > 0:
            payment += gain
    for j in retired:
        gain = dS[j] - d_i[j]
        if gain > 0:
            payment += (1 - delta) * gain
    if payment < fhat - n * rat(eta):
        problems.append(f"payment {payment} below {fhat} - n*eta")

    for base in inst.facilities:
        i0 = regular(base)
        d0 = {j: extended_distance(inst, params, i0, j) for j in inst.clients}
        act_part = Fraction(0)
        for j in active:
            gain = bids[j] - d0[j]
            if gain > 0:
                act_part += gain
        for k in active:
            ret_part = Fraction(0)
            for j in retired:
                gain = bids[k] - 2 * d0[j] - d0[k]
                if gain > 0:
                    ret_part += gain
            if act_part + ret_part > fhat:
                problems.append(
                    f"capped-payment row violated at facility {base}, client {k}"
                )
                break
    return problems


# ---------------------------------------------------------------------------
# replay / execution engine


class _Engine:
    """Shared machinery for running, completing and replaying traces."""

    def __init__(self, inst: MetricInstance, params: ParamSet):
        self.inst = inst
        self.params = params
        self.eps = params.epsilon
        self.delta = params.delta
        self.fhat = params.fhat
        self.growth = 1 + self.eps * self.eps
        self.phase = 1
        self.theta = Fraction(1)
        self.S: List[FacilityRef] = []
        self.open_regular: Set[int] = set()
        self.A: Set[int] = set(inst.clients)
        self.dS: Dict[int, object] = {j: INF for j in inst.clients}
        self.alpha_star: Dict[int, Fraction] = {}
        self.phase_openings: Dict[int, List[Opening]] = {}
        self.events: List = []
        self.done_phase = 1
        self._rows: Dict[FacilityRef, List[Fraction]] = {}
        schedule_len = len(phase_schedule(max(self.inst.max_distance(), 1), self.eps))
        self.max_phase = PHASE_GUARD_FACTOR * schedule_len

    # -- geometry helpers

    def row(self, ref: FacilityRef) -> List[Fraction]:
        cached = self._rows.get(ref)
        if cached is None:
            cached = [
                extended_distance(self.inst, self.params, ref, j)
                for j in self.inst.clients
            ]
            self._rows[ref] = cached
        return cached

    def cap(self, j: int):
        d = self.dS[j]
        return INF if d is INF else (1 - self.delta) * d

    def ceiling(self, ref: FacilityRef, theta: Fraction) -> Fraction:
        """payment_ceiling against the engine's current open set."""
        boost = (1 + self.eps * self.eps) * theta
        one_minus = 1 - self.delta
        r = self.row(ref)
        total = Fraction(0)
        for j in self.inst.clients:
            c = self.cap(j)
            top = boost if c is INF else min(boost, c)
            gain = top - one_minus * r[j]
            if gain > 0:
                total += gain
        return total

    def state_view(self) -> DualState:
        return DualState(
            alpha={j: self.theta for j in self.A},
            S=list(self.S),
            A=set(self.A),
            theta=self.theta,
            instance=self.inst,
        )

    # -- state transitions

    def apply_opening(self, opening: Opening) -> None:
        ref = opening.ref
        if not ref.is_free:
            if ref.base in self.open_regular:
                raise TraceError(f"facility {ref.base} opened twice")
            self.open_regular.add(ref.base)
        self.S.append(ref)
        r = self.row(ref)
        for j in self.inst.clients:
            cur = self.dS[j]
            if cur is INF or r[j] < cur:
                self.dS[j] = r[j]
        self.phase_openings.setdefault(self.phase, []).append(opening)
        self.events.append((self.theta, "open", ref))
        bids = opening.bids
        for j in sorted(self.A):
            value = bids[j] if bids is not None and j in bids else self.theta
            c = self.cap(j)
            if c is not INF and value >= c:
                self.A.remove(j)
                self.alpha_star[j] = value
                self.events.append((self.theta, "connect", j))
        if not self.A:
            self.done_phase = self.phase

    def advance_phase(self) -> None:
        """Run stage 2 at the current threshold, then step the phase."""
        bound = self.growth * self.theta
        for j in sorted(self.A):
            c = self.cap(j)
            if c is not INF and c <= bound:
                self.A.remove(j)
                self.alpha_star[j] = c
                self.events.append((self.theta, "connect", j))
        if not self.A and self.done_phase < self.phase:
            self.done_phase = self.phase
        self.phase += 1
        self.theta = self.theta * self.growth
        if self.phase > self.max_phase:
            raise RuntimeError(
                f"phase guard tripped at {self.phase}; state: |S|={len(self.S)}"
            )

    def goto_phase(self, target: int) -> None:
        if target < self.phase:
            raise TraceError(f"cannot rewind from phase {self.phase} to {target}")
        while self.phase < target:
            self.advance_phase()

    # -- stage-1 scanning

    def unopened_bases(self) -> List[int]:
        return [b for b in self.inst.facilities if b not in self.open_regular]

    def scan_open_once(self) -> bool:
        for base in self.unopened_bases():
            ref = regular(base)
            if self.ceiling(ref, self.theta) < self.fhat:
                continue
            verdict = is_openable(self.state_view(), ref, self.params, Fraction(0))
            if isinstance(verdict, Openable):
                self.apply_opening(
                    Opening(ref=ref, bids=verdict.bids, superset=frozenset(self.S))
                )
                return True
        return False

    def crossing_phase(self, ref: FacilityRef) -> Optional[int]:
        """First phase > current whose ceiling reaches fhat, None if never."""
        frozen = Fraction(0)
        unbounded = False
        one_minus = 1 - self.delta
        r = self.row(ref)
        for j in self.inst.clients:
            c = self.cap(j)
            if c is INF:
                unbounded = True
            else:
                gain = c - one_minus * r[j]
                if gain > 0:
                    frozen += gain
        if not unbounded and frozen < self.fhat:
            return None
        lo = self.phase + 1
        hi = lo
        step = 1
        while True:
            theta_hi = self.growth ** (hi - 1)
            if self.ceiling(ref, theta_hi) >= self.fhat:
                break
            step *= 2
            hi += step
            if hi > self.max_phase:
                return None
        while lo < hi:
            mid = (lo + hi) // 2
            if self.ceiling(ref, self.growth ** (mid - 1)) >= self.fhat:
                hi = mid
            else:
                lo = mid + 1
        return lo

    def run_to_completion(self) -> None:
        while True:
            while self.scan_open_once():
                pass
            if not self.A:
                if self.done_phase < self.phase and self.phase_openings.get(self.phase):
                    self.done_phase = self.phase
                return
            blocked = any(
                self.ceiling(regular(b), self.theta) >= self.fhat
                for b in self.unopened_bases()
            )
            if blocked:
                # Some facility clears the payment filter but the bid
                # system is infeasible; creep one phase and retry.
                self.advance_phase()
                continue
            targets = [
                p
                for p in (self.crossing_phase(regular(b)) for b in self.unopened_bases())
                if p is not None
            ]
            if targets:
                target = min(targets)
                while self.phase < target and self.A:
                    self.advance_phase()
            else:
                while self.A:
                    self.advance_phase()

    # -- trace assembly

    def final_phase(self) -> int:
        last_open = max(self.phase_openings, default=1)
        return max(self.done_phase, last_open)

    def to_trace(self) -> ExecutionTrace:
        L = self.final_phase()
        phases = [
            PhaseSequence(phase=p, openings=list(self.phase_openings.get(p, [])))
            for p in range(1, L + 1)
        ]
        return ExecutionTrace(phases=phases, params=self.params)

    def outcome(self) -> "GreedyOutcomeShape":
        from .greedy import CONNECT, OPEN, GreedyEvent, GreedyOutcome

        events = []
        for theta, kind, subject in self.events:
            if kind == "open":
                events.append(GreedyEvent(theta=theta, kind=OPEN, subject=subject.base))
            else:
                events.append(GreedyEvent(theta=theta, kind=CONNECT, subject=subject))
        return GreedyOutcome(
            S_star=list(self.S), alpha_star=dict(self.alpha_star), events=events
        )


GreedyOutcomeShape = "GreedyOutcome"


def _replay_prefix(engine: _Engine, phases: Sequence[PhaseSequence]) -> None:
    for seq in phases:
        engine.goto_phase(seq.phase)
        for opening in seq.openings:
            engine.apply_opening(opening)


def _complete(
    inst: MetricInstance, params: ParamSet, prefix: Sequence[PhaseSequence]
):
    engine = _Engine(inst, params)
    _replay_prefix(engine, prefix)
    engine.run_to_completion()
    return engine.to_trace(), engine.outcome()


def run_log_adaptive(inst: MetricInstance, f, epsilon, eta=None):
    """Run the phase algorithm from scratch; returns (trace, outcome)."""
    from .metric import make_params

    params = make_params(f, epsilon, inst.n, eta=eta)
    return _complete(inst, params, [])


def complete_solution(
    inst: MetricInstance,
    params: ParamSet,
    partial: Optional[ExecutionTrace],
    audit: bool = True,
) -> ExecutionTrace:
    """Extend a partial trace to a full solution under (f, u).

    The given phases are replayed verbatim; stage 1 is then resumed at
    the last given phase and the run continues until every client is
    retired.  Appended openings are always regular.
    """
    phases = list(partial.phases) if partial is not None else []
    if audit and phases:
        report = audit_trace(
            inst,
            params,
            ExecutionTrace(phases=phases, params=params),
            params.eta,
            prefix_only=True,
        )
        if not report.ok:
            raise TraceError("; ".join(report.violations))
    trace, _ = _complete(inst, params, phases)
    return trace


def complete_sequence(
    inst: MetricInstance,
    params: ParamSet,
    prefix_phases: Sequence[PhaseSequence],
    partial: PhaseSequence,
    audit: bool = True,
) -> PhaseSequence:
    """Make one phase's sequence maximal without advancing further."""
    if audit and prefix_phases:
        report = audit_trace(
            inst,
            params,
            ExecutionTrace(phases=list(prefix_phases), params=params),
            params.eta,
            prefix_only=True,
        )
        if not report.ok:
            raise TraceError("; ".join(report.violations))
    engine = _Engine(inst, params)
    _replay_prefix(engine, prefix_phases)
    engine.goto_phase(partial.phase)
    for opening in partial.openings:
        engine.apply_opening(opening)
    while engine.scan_open_once():
        pass
    return PhaseSequence(
        phase=partial.phase,
        openings=list(engine.phase_openings.get(partial.phase, [])),
    )


# ---------------------------------------------------------------------------
# trace audit


@dataclass(frozen=True)
class AuditOutcome:
    """Result of replaying a trace with every invariant rechecked."""

    ok: bool
    violations: Tuple[str, ...]
    checks: Mapping[str, int]

    def summary(self) -> str:
        counts = ", ".join(f"{k}={v}" for k, v in sorted(self.checks.items()))
        if self.ok:
            return f"audit ok ({counts})"
        return f"audit FAILED: {len(self.violations)} violation(s); {counts}"


def _overbid_violations(engine: _Engine, label: str) -> List[str]:
    """Payment of any closed regular facility must stay below fhat.

    Active clients are counted at the running threshold, retired ones
    at their discounted connection distance.
    """
    inst, params = engine.inst, engine.params
    out: List[str] = []
    for base in inst.facilities:
        if base in engine.open_regular:
            continue
        ref = regular(base)
        r = engine.row(ref)
        total = Fraction(0)
        for j in inst.clients:
            if j in engine.A:
                gain = engine.theta - r[j]
            else:
                c = engine.cap(j)
                gain = (c - r[j]) if c is not INF else None
            if gain is not None and gain > 0:
                total += gain
        if total > params.fhat:
            out.append(f"{label}: facility {base} accumulates {total} > fhat")
    return out


def _surrogate_violations(engine: _Engine, eta: Fraction, label: str) -> List[str]:
    """Retired duals must pay for connections plus all regular openings."""
    inst = engine.inst
    lhs = Fraction(0)
    rhs = len(engine.open_regular) * (engine.fhat - inst.n * eta)
    for j in inst.clients:
        if j in engine.A:
            continue
        lhs += engine.alpha_star[j]
        d = engine.dS[j]
        if d is INF:
            return [f"{label}: client {j} retired while unserved"]
        rhs += (1 - engine.delta) * d
    if lhs < rhs:
        return [f"{label}: retired duals {lhs} below required {rhs}"]
    return []


def _maximality_violations(engine: _Engine, label: str) -> List[str]:
    out: List[str] = []
    for base in engine.unopened_bases():
        ref = regular(base)
        if engine.ceiling(ref, engine.theta) < engine.fhat:
            continue
        verdict = is_openable(engine.state_view(), ref, engine.params, Fraction(0))
        if isinstance(verdict, Openable):
            out.append(f"{label}: facility {base} is openable but was not opened")
    return out


def audit_trace(
    inst: MetricInstance,
    params: ParamSet,
    trace: ExecutionTrace,
    eta=None,
    *,
    prefix_only: bool = False,
    ufl_bound=None,
) -> AuditOutcome:
    """Replay a trace and verify it step by step.

    Checks, in replay order:
      recorded    every recorded opening carries a superset of the replay
                  state and a bid vector satisfying the four opening
                  conditions at its own (threshold, superset) pair;
      overbid     no closed regular facility is ever owed more than fhat
                  (checked at range tops, which dominate by monotonicity);
      maximality  at the end of every phase no regular facility is
                  0-openable (skipped for the last phase of a prefix);
      free-count  at most three free copies open per phase;
      surrogate   retired duals cover discounted connections plus
                  (fhat - n*eta) per regular opening;
      complete    every client is retired by the end (full traces only);
      dual        final duals never overpay any facility at radius two;
      bound       total connection cost is within 2/(1-delta) of the
                  oracle gap (full traces only, needs ufl_bound or a
                  feasible brute-force run).
    """
    slack = params.eta if eta is None else rat(eta)
    violations: List[str] = []
    checks: Dict[str, int] = {
        "recorded": 0,
        "overbid": 0,
        "maximality": 0,
        "free-count": 0,
        "surrogate": 0,
    }
    engine = _Engine(inst, params)
    L = trace.final_phase
    try:
        for seq in trace.phases:
            engine.goto_phase(seq.phase)
            label = f"phase {seq.phase}"
            if seq.openings:
                violations += _overbid_violations(engine, f"{label} arrival")
                checks["overbid"] += 1
            frees = 0
            for idx, opening in enumerate(seq.openings):
                where = f"{label} opening {idx}"
                if opening.ref.is_free:
                    frees += 1
                else:
                    checks["recorded"] += 1
                    have = set(engine.S)
                    if not have <= set(opening.superset):
                        violations.append(
                            f"{where}: recorded superset omits open facilities"
                        )
                    violations += [
                        f"{where}: {msg}"
                        for msg in verify_bids(
                            inst,
                            params,
                            sorted(opening.superset),
                            engine.theta,
                            opening.ref,
                            opening.bids,
                            slack,
                        )
                    ]
                engine.apply_opening(opening)
                violations += _overbid_violations(engine, where)
                checks["overbid"] += 1
                violations += _surrogate_violations(engine, slack, where)
                checks["surrogate"] += 1
            checks["free-count"] += 1
            if frees > 3:
                violations.append(f"{label}: {frees} free openings exceed limit 3")
            if not (prefix_only and seq.phase == L):
                violations += _maximality_violations(engine, label)
                checks["maximality"] += 1
    except TraceError as exc:
        violations.append(f"replay failed: {exc}")
        return AuditOutcome(False, tuple(violations), dict(checks))

    if not prefix_only:
        engine.advance_phase()
        if engine.A:
            violations.append(
                f"clients {sorted(engine.A)} still active after final phase"
            )
        else:
            violations += _overbid_violations(engine, "final")
            checks["overbid"] += 1
            violations += _surrogate_violations(engine, slack, "final")
            checks["surrogate"] += 1
            for base in inst.facilities:
                ref = regular(base)
                r = engine.row(ref)
                total = Fraction(0)
                for j in inst.clients:
                    gain = engine.alpha_star[j] - 2 * r[j]
                    if gain > 0:
                        total += gain
                if total > params.fhat:
                    violations.append(
                        f"final duals overpay facility {base}: {total} > fhat"
                    )
            if ufl_bound is None:
                from .oracle import brute_force_ufl

                ufl_bound = brute_force_ufl(inst, params.f).value
            ufl_bound = rat(ufl_bound)
            cost = Fraction(0)
            unserved = False
            for j in inst.clients:
                d = engine.dS[j]
                if d is INF:
                    unserved = True
                else:
                    cost += d
            if unserved:
                violations.append("some client has no open facility")
            else:
                n_reg = len(engine.open_regular)
                allowed = (
                    2
                    / (1 - params.delta)
                    * (ufl_bound - (params.f - slack * inst.n) * n_reg)
                )
                if cost > allowed:
                    violations.append(
                        f"connection cost {cost} exceeds bound {allowed}"
                    )
    return AuditOutcome(not violations, tuple(violations), dict(checks))
