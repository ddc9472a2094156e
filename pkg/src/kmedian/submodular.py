"""Center selection as constrained maximization over ball candidates.

A guessed family of balls contributes one stand-in center each; the real
decision is which in-ball facility (if any) to open instead.  A partition
matroid (one pick per ball) constrains the choice, and a savings objective
scores a pick set X by how much it lowers the cost of serving every cluster
from its own center or a stand-in.  The objective is monotone submodular, so
a deterministic exchange greedy recovers at least half the optimal savings.
Extraction then swaps every stand-in for a real in-ball center and returns
exactly k centers.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from .metric import MetricInstance


class InfeasibleContextError(ValueError):
    """Fewer closure candidates than closures requested."""


class ExtractionError(RuntimeError):
    """Final center extraction found a cardinality or coverage defect."""


# ---------------------------------------------------------------------------
# partition matroid over per-ball candidate copies


@dataclass(frozen=True)
class PartitionMatroid:
    """Ground elements tagged with a part id; rank one per part.

    Elements are copies: the same facility appearing in two balls yields two
    ground elements with distinct ids.  A set is independent iff it uses at
    most one element from each part.
    """

    ground: Tuple[Tuple[int, int], ...]  # (element id, part id)

    def __post_init__(self):
        ids = [e for e, _ in self.ground]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate element ids in matroid ground set")

    def part_of(self, element: int) -> int:
        for e, p in self.ground:
            if e == element:
                return p
        raise KeyError(f"element {element} not in ground set")

    def parts(self) -> Dict[int, Tuple[int, ...]]:
        out: Dict[int, List[int]] = {}
        for e, p in self.ground:
            out.setdefault(p, []).append(e)
        return {p: tuple(sorted(es)) for p, es in out.items()}

    def is_independent(self, X: Iterable[int]) -> bool:
        lookup = {e: p for e, p in self.ground}
        seen = set()
        for e in set(X):
            if e not in lookup:
                return False
            p = lookup[e]
            if p in seen:
                return False
            seen.add(p)
        return True


def matroid_from_balls(ball_facilities: Sequence[Sequence[int]]):
    """Build the one-pick-per-ball matroid.

    `ball_facilities[b]` lists the real facilities inside ball b.  Returns
    (matroid, element_facility) where element_facility[e] is the facility a
    ground element stands for.
    """
    ground: List[Tuple[int, int]] = []
    element_facility: List[int] = []
    eid = 0
    for b, facs in enumerate(ball_facilities):
        for i in sorted(facs):
            ground.append((eid, b))
            element_facility.append(i)
            eid += 1
    return PartitionMatroid(ground=tuple(ground)), tuple(element_facility)


# ---------------------------------------------------------------------------
# evaluation context


@dataclass(frozen=True, eq=False)
class SubmodularContext:
    """Everything the objective needs, immutable while evaluating.

    Clusters partition the clients by their assigned center (stand-ins
    included).  `R0` holds centers whose whole clusters must be re-served by
    the picks; `P1` holds centers eligible for closure with core-based
    accounting, of which exactly `r1_size` will be closed.  `cores[c]` is the
    tightly-served subset of cluster c used by the closure rule.
    """

    inst: MetricInstance
    k: int
    clusters: Dict[int, Tuple[int, ...]]
    mu: Dict[int, int]
    Lambda: Tuple[int, ...]
    R0: FrozenSet[int]
    P1: Tuple[int, ...]
    r1_size: int
    cores: Dict[int, FrozenSet[int]]
    matroid: PartitionMatroid
    element_facility: Tuple[int, ...]
    ball_facilities: Tuple[Tuple[int, ...], ...]
    memo: Dict = field(default_factory=dict, compare=False, repr=False)

    def facilities_of(self, X: Iterable[int]) -> Tuple[int, ...]:
        return tuple(sorted({self.element_facility[e] for e in X}))

    @property
    def D0(self) -> FrozenSet[int]:
        key = ("D0",)
        if key not in self.memo:
            members = set()
            for c in self.R0:
                members.update(self.clusters.get(c, ()))
            self.memo[key] = frozenset(members)
        return self.memo[key]


def validate_context(ctx: SubmodularContext) -> List[str]:
    """Structural checks; returns human-readable violations."""
    bad = []
    seen: Dict[int, int] = {}
    for c, members in ctx.clusters.items():
        for p in members:
            if p in seen:
                bad.append(f"client {p} in clusters of both {seen[p]} and {c}")
            seen[p] = c
            if ctx.mu.get(p) != c:
                bad.append(f"assignment of client {p} disagrees with cluster {c}")
    for p in ctx.inst.clients:
        if p not in seen:
            bad.append(f"client {p} missing from every cluster")
    for c in ctx.P1:
        if c in ctx.R0:
            bad.append(f"closure candidate {c} also marked for unconditional removal")
        if not ctx.cores.get(c, frozenset()) <= set(ctx.clusters.get(c, ())):
            bad.append(f"core of {c} leaves its cluster")
    if len(ctx.ball_facilities) != len(ctx.Lambda):
        bad.append("one stand-in required per ball")
    return bad


def _dmin(inst: MetricInstance, p: int, ids: Iterable[int]) -> Fraction:
    best: Optional[Fraction] = None
    row = inst.dist[p]
    for i in ids:
        v = row[i]
        if best is None or v < best:
            best = v
    if best is None:
        raise ValueError("distance to an empty center set")
    return best


def _is_hit(ctx: SubmodularContext, c: int, xfacs: Tuple[int, ...]) -> bool:
    # a pick hits cluster c when some core client sits strictly closer to a
    # pick than to its own center
    if not xfacs:
        return False
    row_c = ctx.inst.dist
    for p in ctx.cores.get(c, frozenset()):
        if _dmin(ctx.inst, p, xfacs) < row_c[p][c]:
            return True
    return False


# ---------------------------------------------------------------------------
# objective pieces


def closedcost(ctx: SubmodularContext, c: int, X: Iterable[int]) -> Fraction:
    """Cost of cluster c if c is closed, given picked elements X.

    Hit branch: every member goes to its best among c, the picks and the
    stand-ins.  Unhit branch: the core moves together to one best single
    target among picks and stand-ins; non-core members choose freely.
    """
    xfacs = ctx.facilities_of(X)
    members = ctx.clusters.get(c, ())
    core = ctx.cores.get(c, frozenset())
    pool = (c,) + xfacs + ctx.Lambda
    if _is_hit(ctx, c, xfacs):
        return sum((_dmin(ctx.inst, p, pool) for p in members), Fraction(0))
    targets = xfacs + ctx.Lambda
    if not targets:
        raise ValueError("no target available for an unhit closed cluster")
    core_best: Optional[Fraction] = None
    for t in targets:
        total = sum((ctx.inst.dist[p][t] for p in core), Fraction(0))
        if core_best is None or total < core_best:
            core_best = total
    rest = sum((_dmin(ctx.inst, p, pool) for p in members if p not in core), Fraction(0))
    return core_best + rest


def cost_inc(ctx: SubmodularContext, c: int, X: Iterable[int]) -> Fraction:
    """Extra cost of closing c versus keeping it open, given picks X.

    Zero when the picks hit the core; otherwise the cheapest single-target
    relocation of the core.  Never negative.  Memoized per (c, pick set).
    """
    key = ("inc", c, frozenset(X))
    if key in ctx.memo:
        return ctx.memo[key]
    xfacs = ctx.facilities_of(X)
    if _is_hit(ctx, c, xfacs):
        val = Fraction(0)
    else:
        targets = xfacs + ctx.Lambda
        if not targets:
            raise ValueError("no target available for an unhit closed cluster")
        core = ctx.cores.get(c, frozenset())
        base_pool = (c,) + ctx.Lambda
        best: Optional[Fraction] = None
        for t in targets:
            total = sum(
                (ctx.inst.dist[p][t] - _dmin(ctx.inst, p, base_pool) for p in core),
                Fraction(0),
            )
            if best is None or total < best:
                best = total
        val = best
    ctx.memo[key] = val
    return val


def eval_g(ctx: SubmodularContext, X: Iterable[int]) -> Tuple[Fraction, Tuple[int, ...]]:
    """Total serving cost under picks X with the best closure choice.

    Three parts: clients outside the unconditionally-removed clusters pay
    their best among own center, picks and stand-ins; removed clusters pay
    picks/stand-ins only; and the `r1_size` cheapest closure penalties are
    charged.  Returns (value, chosen closure centers).
    """
    if len(ctx.P1) < ctx.r1_size:
        raise InfeasibleContextError(
            f"{len(ctx.P1)} closure candidates but {ctx.r1_size} closures required"
        )
    Xset = frozenset(X)
    gkey = ("g", Xset)
    if gkey in ctx.memo:
        return ctx.memo[gkey]
    xfacs = ctx.facilities_of(Xset)
    d0 = ctx.D0
    total = Fraction(0)
    for p in ctx.inst.clients:
        if p in d0:
            total += _dmin(ctx.inst, p, xfacs + ctx.Lambda)
        else:
            total += _dmin(ctx.inst, p, (ctx.mu[p],) + xfacs + ctx.Lambda)
    ranked = sorted(ctx.P1, key=lambda c: (cost_inc(ctx, c, Xset), c))
    chosen = tuple(sorted(ranked[: ctx.r1_size]))
    total += sum((cost_inc(ctx, c, Xset) for c in chosen), Fraction(0))
    out = (total, chosen)
    ctx.memo[gkey] = out
    return out


def eval_f(ctx: SubmodularContext, X: Iterable[int]) -> Fraction:
    """Savings of picks X over picking nothing; zero at the empty set."""
    return eval_g(ctx, ())[0] - eval_g(ctx, X)[0]


# ---------------------------------------------------------------------------
# maximization


def maximize_f(ctx: SubmodularContext, matroid: Optional[PartitionMatroid] = None) -> Tuple[int, ...]:
    """Deterministic exchange greedy under the one-per-part constraint.

    Repeatedly adds the feasible element with the largest marginal saving,
    breaking ties by (part id, element id), until the pick set is maximal.
    For a monotone submodular objective this is a 1/2 approximation.
    """
    if matroid is None:
        matroid = ctx.matroid
    order = sorted(matroid.ground, key=lambda ep: (ep[1], ep[0]))
    picked: List[int] = []
    used_parts = set()
    current = eval_g(ctx, ())[0]
    while True:
        best_gain: Optional[Fraction] = None
        best_elem: Optional[Tuple[int, int]] = None
        for e, p in order:
            if p in used_parts:
                continue
            val = eval_g(ctx, picked + [e])[0]
            gain = current - val
            if best_gain is None or gain > best_gain:
                best_gain = gain
                best_elem = (e, p)
        if best_elem is None:
            break
        picked.append(best_elem[0])
        used_parts.add(best_elem[1])
        current = current - best_gain
    return tuple(sorted(picked))


# ---------------------------------------------------------------------------
# final extraction


def extract_k_centers(
    ctx: SubmodularContext,
    X: Iterable[int],
    R_prime_1: Iterable[int],
    working_solution: Iterable[int],
) -> Tuple[int, ...]:
    """Turn picks into exactly k real centers.

    Starts from the working solution (real survivors plus stand-ins), drops
    the unconditional removals and the chosen closures, then replaces each
    stand-in by the pick inside its ball, or by the lowest-index in-ball
    facility when no pick landed there.
    """
    work = list(working_solution)
    for c in sorted(ctx.R0) + sorted(set(R_prime_1)):
        if c not in work:
            raise ExtractionError(f"removal stage: center {c} absent from working solution")
        work.remove(c)
    if len(work) != ctx.k:
        raise ExtractionError(
            f"removal stage miscounted: {len(work)} centers left, expected k={ctx.k}"
        )
    pick_by_part: Dict[int, int] = {}
    part_lookup = {e: p for e, p in ctx.matroid.ground}
    for e in set(X):
        part = part_lookup[e]
        if part in pick_by_part:
            raise ExtractionError(f"replacement stage: two picks in ball {part}")
        pick_by_part[part] = ctx.element_facility[e]
    for b, dummy in enumerate(ctx.Lambda):
        if dummy not in work:
            raise ExtractionError(f"replacement stage: stand-in for ball {b} already gone")
        if b in pick_by_part:
            repl = pick_by_part[b]
        else:
            in_ball = ctx.ball_facilities[b]
            if not in_ball:
                raise ExtractionError(f"replacement stage: ball {b} contains no facility")
            repl = min(in_ball)
        work[work.index(dummy)] = repl
    dummy_set = set(ctx.Lambda)
    if any(c in dummy_set for c in work):
        raise ExtractionError("replacement stage: a stand-in survived extraction")
    if len(work) != ctx.k:
        raise ExtractionError(
            f"replacement stage miscounted: {len(work)} centers, expected k={ctx.k}"
        )
    return tuple(sorted(work))
