"""Pipeline for well-separated instances, plus the top-level combiner.

The chain: swap-local search gives a constant-factor starting solution;
clients sampled proportionally to their serving cost nominate ball guesses;
each ball contributes a stand-in center pinned at its boundary; randomized
rounds guess which overpriced centers to drop; a bounded recursion guesses
proxy removals for the cheap ones together with reassignment targets; a
final powerset guess marks clusters to remove outright.  Every surviving
guess combination becomes a constrained-maximization job (see submodular)
whose output is an exactly-k candidate; the cheapest candidate wins.

All theory-sized enumerations are capped; hitting a cap degrades the run to
best-effort and flags the result.  Guess lists can be injected to test each
downstream stage under a known-correct prefix.
"""

import itertools
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from .metric import MetricInstance, rat, rat_str
from .oracle import cost
from .submodular import (
    ExtractionError,
    InfeasibleContextError,
    SubmodularContext,
    eval_g,
    extract_k_centers,
    matroid_from_balls,
    maximize_f,
)

Ball = Tuple[int, Fraction]  # (leader client, radius)


class CapExceededError(RuntimeError):
    """An enumeration would outgrow its configured cap."""

    def __init__(self, message: str, estimate: int, partial: Optional[list] = None):
        super().__init__(message)
        self.estimate = estimate
        self.partial = partial


@dataclass(frozen=True)
class SearchCaps:
    """Desk-scale limits for every guess enumeration."""

    sample_size: int = 4
    ball_families: int = 64
    exprem_outer: int = 12
    cheaprem_calls: int = 2048
    r0_subsets: int = 32
    candidates: int = 256
    restarts: int = 1

    def to_dict(self) -> Dict[str, int]:
        return {
            "sample_size": self.sample_size,
            "ball_families": self.ball_families,
            "exprem_outer": self.exprem_outer,
            "cheaprem_calls": self.cheaprem_calls,
            "r0_subsets": self.r0_subsets,
            "candidates": self.candidates,
            "restarts": self.restarts,
        }

    @staticmethod
    def from_dict(doc: Dict[str, int]) -> "SearchCaps":
        known = SearchCaps().to_dict()
        bad = sorted(set(doc) - set(known))
        if bad:
            raise ValueError(f"unknown cap names: {', '.join(bad)}")
        known.update({key: int(value) for key, value in doc.items()})
        return SearchCaps(**known)


# ---------------------------------------------------------------------------
# context types


@dataclass(frozen=True, eq=False)
class StableContext:
    """One fully-guessed pipeline state, ready for the maximization stage."""

    S: Tuple[int, ...]
    W: Tuple[int, ...]
    balls: Tuple[Ball, ...]
    Lambda: Tuple[int, ...]
    Q: FrozenSet[int]
    U_tilde: Tuple[int, ...]
    U_next: Dict[int, int]
    mu_tilde: Dict[int, int]
    R0: FrozenSet[int]
    sizes: Tuple[int, int, int]


def validate_stable_context(inst_ext: MetricInstance, ctx: StableContext) -> List[str]:
    """Check the stand-in rows and the disjointness of guessed sets."""
    bad = []
    if len(ctx.balls) != len(ctx.Lambda):
        bad.append("one stand-in center required per ball")
        return bad
    original = inst_ext.n + inst_ext.m - len(ctx.Lambda)
    for b, (leader, radius) in enumerate(ctx.balls):
        delta = ctx.Lambda[b]
        if inst_ext.d(delta, leader) != radius:
            bad.append(f"stand-in {b}: distance to leader is not the radius")
        for p in range(original):
            want = radius + inst_ext.d(leader, p)
            if p == leader:
                want = radius
            if inst_ext.d(delta, p) != want:
                bad.append(f"stand-in {b}: wrong distance to point {p}")
    sset = set(ctx.S)
    if ctx.Q & set(ctx.U_tilde):
        bad.append("expensive and cheap removals overlap")
    for name, group in (("Q", ctx.Q), ("U_tilde", set(ctx.U_tilde)), ("R0", ctx.R0)):
        if not group <= sset:
            bad.append(f"{name} leaves the working solution")
    return bad


@dataclass(frozen=True)
class ClusterView:
    """Per-center summary of an assignment: members, cost, tight core."""

    center: int
    members: Tuple[int, ...]
    cost: Fraction
    core: FrozenSet[int]
    concentrated: bool


def cluster_views(
    inst: MetricInstance,
    assignment: Dict[int, int],
    epsilon,
    cost_S: Fraction,
    r_size: int,
) -> Dict[int, ClusterView]:
    """Group clients by assigned center and mark the tightly-served cores.

    A client is in the core when its distance to the center is at most
    eps * cost_S / (r_size * cluster size); a cluster is concentrated when
    at least a (1 - eps) fraction sits in the core.  With r_size = 0 the
    core rule is vacuous and cores are empty.
    """
    eps = rat(epsilon)
    groups: Dict[int, List[int]] = {}
    for p, c in assignment.items():
        groups.setdefault(c, []).append(p)
    out: Dict[int, ClusterView] = {}
    for c, members in groups.items():
        members.sort()
        total = sum((inst.d(p, c) for p in members), Fraction(0))
        if r_size > 0 and members:
            limit = eps * cost_S / (r_size * len(members))
            core = frozenset(p for p in members if inst.d(p, c) <= limit)
        else:
            core = frozenset()
        concentrated = len(core) >= (1 - eps) * len(members)
        out[c] = ClusterView(
            center=c,
            members=tuple(members),
            cost=total,
            core=core,
            concentrated=concentrated,
        )
    return out


@dataclass(frozen=True)
class StableSolution:
    """An exactly-k candidate with provenance of the guess that produced it."""

    centers: Tuple[int, ...]
    cost: Fraction
    k: int
    partial_search: bool
    winner: Dict
    evaluated: int
    source: str = "stable"

    def to_json_dict(self) -> Dict:
        return {
            "centers": list(self.centers),
            "cost": rat_str(self.cost),
            "k": self.k,
            "partial_search": self.partial_search,
            "winner": self.winner,
            "candidates_evaluated": self.evaluated,
            "source": self.source,
        }


@dataclass(frozen=True)
class OracleGuesses:
    """Injected stage outputs; any None falls back to real enumeration."""

    S: Optional[Tuple[int, ...]] = None
    W: Optional[Tuple[int, ...]] = None
    ball_families: Optional[Tuple[Tuple[Ball, ...], ...]] = None
    Q_list: Optional[Tuple[FrozenSet[int], ...]] = None
    sizes_list: Optional[Tuple[Tuple[int, int, int], ...]] = None
    U_list: Optional[Tuple[Tuple[FrozenSet[int], Dict[int, int]], ...]] = None
    R0_list: Optional[Tuple[FrozenSet[int], ...]] = None


# ---------------------------------------------------------------------------
# stage 1: swap-local search


def local_search(inst: MetricInstance, k: int, epsilon, mode: str = "strict") -> Tuple[int, ...]:
    """Single-swap descent from the first k facilities.

    mode "strict" accepts any cost decrease; mode "threshold" accepts only
    swaps cutting cost by a relative eps/(5k).  Best-improving swap first,
    ties by (outgoing, incoming) index.
    """
    if not (1 <= k <= inst.m):
        raise ValueError(f"k must lie in [1, {inst.m}]")
    if mode not in ("strict", "threshold"):
        raise ValueError(f"unknown improvement mode: {mode!r}")
    eps = rat(epsilon)
    current = sorted(list(inst.facilities)[:k])
    cur_cost = cost(inst, current)
    while True:
        best = None  # (new_cost, out, in, new_set)
        cset = set(current)
        for out in current:
            for inc in inst.facilities:
                if inc in cset:
                    continue
                trial = sorted(cset - {out} | {inc})
                val = cost(inst, trial)
                if best is None or (val, out, inc) < (best[0], best[1], best[2]):
                    best = (val, out, inc, trial)
        if best is None:
            break
        accept = best[0] < cur_cost if mode == "strict" else best[0] <= (1 - eps / (5 * k)) * cur_cost
        if not accept:
            break
        current = best[3]
        cur_cost = best[0]
    return tuple(current)


def no_improving_swap(inst: MetricInstance, S: Sequence[int], epsilon, mode: str = "strict") -> bool:
    """Re-scan every single swap; True iff none passes the acceptance test."""
    eps = rat(epsilon)
    base = cost(inst, S)
    sset = set(S)
    for out in S:
        for inc in inst.facilities:
            if inc in sset:
                continue
            val = cost(inst, sorted(sset - {out} | {inc}))
            ok = val < base if mode == "strict" else val <= (1 - eps / (5 * len(S))) * base
            if ok:
                return False
    return True


# ---------------------------------------------------------------------------
# stage 2: cost-proportional client sampling


def _weighted_draw(rng: random.Random, weights: List[Fraction]) -> int:
    # exact proportional draw: scale to a common denominator, then randrange
    denom = 1
    for w in weights:
        denom = denom * w.denominator // math.gcd(denom, w.denominator)
    ints = [int(w * denom) for w in weights]
    total = sum(ints)
    if total <= 0:
        raise ValueError("cannot draw from an all-zero weight vector")
    t = rng.randrange(total)
    acc = 0
    for idx, w in enumerate(ints):
        acc += w
        if t < acc:
            return idx
    raise AssertionError("draw walked past the cumulative total")


def default_sample_size(n: int, epsilon, cap: Optional[int] = None) -> int:
    """Theory count 5*(ln n / eps^5)*ln(5/eps^2), capped."""
    eps = float(rat(epsilon))
    raw = 5.0 * (math.log(max(n, 1)) / eps**5) * math.log(5.0 / eps**2)
    value = max(0, math.ceil(raw))
    if cap is not None:
        value = min(value, cap)
    return value


def d_sample(
    inst: MetricInstance,
    S: Sequence[int],
    s: Optional[int] = None,
    seed=0,
    epsilon=None,
    cap: Optional[int] = None,
) -> Tuple[int, ...]:
    """s independent client draws, each proportional to its serving cost.

    Zero-cost clients are never drawn; a zero-cost solution yields the empty
    sample.  Deterministic per seed.
    """
    weights = [min(inst.d(p, c) for c in S) for p in inst.clients]
    total = sum(weights, Fraction(0))
    if total == 0:
        return ()
    if s is None:
        if epsilon is None:
            raise ValueError("need epsilon to derive the default sample size")
        s = default_sample_size(inst.n, epsilon, cap)
    rng = random.Random(repr(("kmedian-dsample", seed)))
    return tuple(_weighted_draw(rng, weights) for _ in range(s))


# ---------------------------------------------------------------------------
# stage 3: ball guessing and stand-in centers


def _radius_grid(S_p: Fraction, epsilon) -> List[Fraction]:
    # geometric grid with ratio (1 + eps^3), starting at the first power
    # >= eps^3 * S_p, long enough to cover a 1/eps^6 span
    eps = rat(epsilon)
    if S_p <= 0:
        return []
    step = 1 + eps**3
    span = 1 / eps**6
    count = 1
    power = step
    while power < span:
        power *= step
        count += 1
    low = eps**3 * S_p
    value = Fraction(1)
    if value >= low:
        while value >= low:
            value /= step
        value *= step
    else:
        while value < low:
            value *= step
    grid = []
    for _ in range(count):
        grid.append(value)
        value *= step
    return grid


def ball_guesses(
    W: Sequence[int],
    S_costs: Dict[int, Fraction],
    epsilon,
    cap: Optional[int] = None,
) -> List[Tuple[Ball, ...]]:
    """Every (leader subset, per-leader radius) combination, empty family first.

    Radii run on a geometric grid around each leader's serving cost.  The
    family count is the product of (1 + grid size) over distinct leaders;
    exceeding the cap refuses with that estimate.
    """
    leaders = sorted(set(W))
    grids = {p: _radius_grid(rat(S_costs[p]), epsilon) for p in leaders}
    estimate = 1
    for p in leaders:
        estimate *= 1 + len(grids[p])
    if cap is not None and estimate > cap:
        raise CapExceededError(
            f"{estimate} ball families exceed the cap of {cap}", estimate=estimate
        )
    options = [[None] + [(p, r) for r in grids[p]] for p in leaders]
    families: List[Tuple[Ball, ...]] = []
    for combo in itertools.product(*options):
        families.append(tuple(ball for ball in combo if ball is not None))
    return families


def make_dummy_centers(inst: MetricInstance, balls: Sequence[Ball]):
    """Append one stand-in facility per ball.

    The stand-in for (leader, radius) sits exactly radius from its leader
    and radius + d(leader, p) from every other point; two stand-ins are
    radius + radius' + d(leader, leader') apart.  The extension is again a
    metric.  Returns (extended instance, stand-in ids).
    """
    size = inst.n + inst.m
    extra = len(balls)
    table = [[Fraction(0)] * (size + extra) for _ in range(size + extra)]
    for a in range(size):
        for b in range(size):
            table[a][b] = inst.dist[a][b]
    for b, (leader, radius) in enumerate(balls):
        rho = rat(radius)
        row = size + b
        for p in range(size):
            v = rho + inst.d(leader, p)
            table[row][p] = v
            table[p][row] = v
        for b2 in range(b):
            leader2, radius2 = balls[b2]
            v = rho + rat(radius2) + inst.d(leader, leader2)
            table[row][size + b2] = v
            table[size + b2][row] = v
    ext = MetricInstance(
        n=inst.n,
        m=inst.m + extra,
        dist=tuple(tuple(r) for r in table),
        label=inst.label + f"+{extra}standins" if extra else inst.label,
    )
    return ext, tuple(range(size, size + extra))


def facilities_in_ball(inst: MetricInstance, ball: Ball) -> Tuple[int, ...]:
    leader, radius = ball
    rho = rat(radius)
    return tuple(i for i in inst.facilities if inst.d(leader, i) <= rho)


# ---------------------------------------------------------------------------
# stage 4: randomized removal of overpriced centers


def _closest_center(inst: MetricInstance, p: int, centers: Sequence[int]) -> int:
    best = None
    best_d = None
    for c in centers:
        v = inst.d(p, c)
        if best is None or v < best_d or (v == best_d and c < best):
            best, best_d = c, v
    return best


def _assign(inst: MetricInstance, centers: Sequence[int]) -> Dict[int, int]:
    ordered = sorted(centers)
    return {p: _closest_center(inst, p, ordered) for p in inst.clients}


def exp_rem(
    inst: MetricInstance,
    S: Sequence[int],
    Lambda: Sequence[int],
    s0_bound: int,
    epsilon,
    seed=0,
    cap: Optional[int] = None,
) -> List[FrozenSet[int]]:
    """Randomized guesses of which centers to drop; empty guess always first.

    Each outer round builds one guess: s0_bound + 1 inner steps, each a fair
    coin flip followed (on heads) by drawing a surviving center with
    probability proportional to its current cluster cost among survivors
    plus stand-ins.  A skipped flip still consumes the step.  The outer
    round count follows the (8/eps)^(s0_bound+1) * ln n schedule, capped.
    """
    if s0_bound < 0:
        raise ValueError("s0_bound must be nonnegative")
    eps = float(rat(epsilon))
    raw = (8.0 / eps) ** (s0_bound + 1) * math.log(max(inst.n, 1))
    outer = max(0, math.ceil(raw))
    if cap is not None:
        outer = min(outer, cap)
    rng = random.Random(repr(("kmedian-exprem", seed)))
    found: List[FrozenSet[int]] = [frozenset()]
    seen = {frozenset()}
    for _ in range(outer):
        Q: set = set()
        for _step in range(s0_bound + 1):
            if rng.randrange(2) == 0:
                continue
            survivors = sorted(set(S) - Q)
            if not survivors:
                continue
            assign = _assign(inst, survivors + sorted(Lambda))
            weights = []
            for c in survivors:
                w = sum(
                    (inst.d(p, c) for p, cc in assign.items() if cc == c), Fraction(0)
                )
                weights.append(w)
            if sum(weights, Fraction(0)) == 0:
                continue
            Q.add(survivors[_weighted_draw(rng, weights)])
        fq = frozenset(Q)
        if fq not in seen:
            seen.add(fq)
            found.append(fq)
    return found


# ---------------------------------------------------------------------------
# stage 5: recursive guessing of proxy removals


def cheap_rem(
    inst: MetricInstance,
    S: Sequence[int],
    Q: Iterable[int],
    sizes: Tuple[int, int, int],
    Lambda: Sequence[int],
    cap: Optional[int] = None,
) -> List[Tuple[FrozenSet[int], Dict[int, int]]]:
    """Bounded recursion emitting proxy removal sets with reassignment maps.

    sizes = (u, r, x) are the guessed cardinalities of the true removal set,
    the keep-but-reroute set, and the receiving set.  Survivor count at most
    4*(u+r+x) switches to exhaustive enumeration.  Otherwise the recursion
    repeatedly takes the center with the cheapest reroute, branching over
    the roles it might play; a center entering the proxy set records its
    reroute target at that moment.  Branches that run out of candidates are
    pruned silently.  Raises on inconsistent sizes; a cap overflow raises
    with the partial list attached.
    """
    u_sz, r_sz, x_sz = sizes
    if min(sizes) < 0:
        raise ValueError("sizes must be nonnegative")
    qset = frozenset(Q)
    survivors = tuple(sorted(set(S) - qset))
    ell = u_sz + r_sz + x_sz
    if ell > 2 * len(survivors):
        raise ValueError(
            f"inconsistent sizes: u+r+x = {ell} exceeds twice the {len(survivors)} survivors"
        )
    sq_assign = _assign(inst, list(survivors) + sorted(Lambda))
    clusters: Dict[int, List[int]] = {c: [] for c in survivors}
    for p, c in sq_assign.items():
        if c in clusters:
            clusters[c].append(p)

    out: List[Tuple[FrozenSet[int], Dict[int, int]]] = []
    emitted = set()

    def emit(u_tilde: FrozenSet[int], next_map: Dict[int, int]):
        key = (u_tilde, tuple(sorted(next_map.items())))
        if key not in emitted:
            emitted.add(key)
            out.append((u_tilde, dict(next_map)))

    if len(survivors) <= 4 * ell:
        # few survivors: enumerate every proxy set and reroute shield outright
        for u_tilde in itertools.combinations(survivors, u_sz):
            rest = [c for c in survivors if c not in u_tilde]
            for shield in itertools.combinations(rest, r_sz):
                pool = [c for c in rest if c not in shield]
                if u_tilde and not pool:
                    continue
                next_map = {c: _closest_center(inst, c, pool) for c in u_tilde}
                emit(frozenset(u_tilde), next_map)
        return out

    calls = 0

    def recurse(
        known_u: FrozenSet[int],
        known_r: FrozenSet[int],
        known_x: FrozenSet[int],
        shielded: FrozenSet[int],
        u_tilde: FrozenSet[int],
        next_map: Dict[int, int],
    ):
        nonlocal calls
        calls += 1
        if cap is not None and calls > cap:
            raise CapExceededError(
                f"recursion exceeded {cap} calls", estimate=4 ** (2 * ell), partial=out
            )
        if len(u_tilde) == u_sz:
            emit(u_tilde, next_map)
            return
        candidates = [
            c
            for c in survivors
            if c not in known_r and c not in known_x and c not in shielded and c not in u_tilde
        ]
        best = None  # (reroute cost, center, target)
        for c in candidates:
            pool = [
                c2
                for c2 in survivors
                if c2 not in known_u and c2 not in known_r and c2 not in u_tilde and c2 != c
            ]
            if not pool:
                continue
            target = _closest_center(inst, c, pool)
            reroute = sum((inst.d(p, target) for p in clusters[c]), Fraction(0))
            if best is None or (reroute, c) < (best[0], best[1]):
                best = (reroute, c, target)
        if best is None:
            return  # branch exhausted its candidates
        _, c, target = best
        if c not in known_u and len(known_x) < x_sz:
            recurse(known_u, known_r, known_x | {c}, shielded, u_tilde, next_map)
        if c not in known_u and len(known_r) < r_sz:
            recurse(known_u, known_r | {c}, known_x, shielded, u_tilde, next_map)
        if len(known_u) + len(known_r) == u_sz + r_sz or target in shielded:
            recurse(
                known_u,
                known_r,
                known_x,
                shielded | {target},
                u_tilde | {c},
                {**next_map, c: target},
            )
        else:
            if len(known_r) < r_sz:
                recurse(known_u, known_r | {target}, known_x, shielded, u_tilde, next_map)
            if len(known_u) < u_sz:
                recurse(known_u | {target}, known_r, known_x, shielded, u_tilde, next_map)
            recurse(
                known_u,
                known_r,
                known_x,
                shielded | {target},
                u_tilde | {c},
                {**next_map, c: target},
            )

    recurse(frozenset(), frozenset(), frozenset(), frozenset(), frozenset(), {})
    return out


# ---------------------------------------------------------------------------
# stage 6: powerset guess of clusters removed outright


def guess_R0(
    P_clusters: Dict[int, Fraction], threshold, cap: Optional[int] = None
) -> List[FrozenSet[int]]:
    """All subsets of the clusters at least as expensive as the threshold."""
    limit = rat(threshold)
    if limit <= 0:
        raise ValueError("threshold must be positive")
    heavy = sorted(c for c, v in P_clusters.items() if v >= limit)
    estimate = 2 ** len(heavy)
    if cap is not None and estimate > cap:
        raise CapExceededError(
            f"{estimate} subsets exceed the cap of {cap}", estimate=estimate
        )
    subsets = []
    for mask in range(estimate):
        subsets.append(frozenset(heavy[i] for i in range(len(heavy)) if mask >> i & 1))
    return subsets


# ---------------------------------------------------------------------------
# the nested driver


def _candidate_key(entry):
    return (entry["cost"], entry["centers"])


def _evaluate_job(job):
    """Run the maximization stage for one fully-guessed context."""
    ctx: SubmodularContext = job["ctx"]
    inst: MetricInstance = job["inst"]
    try:
        X = maximize_f(ctx)
        _, closures = eval_g(ctx, X)
        centers = extract_k_centers(ctx, X, closures, job["working"])
    except (InfeasibleContextError, ExtractionError, ValueError):
        return None
    value = cost(inst, centers)
    winner = dict(job["descriptor"])
    winner["picks"] = [ctx.element_facility[e] for e in X]
    winner["closures"] = sorted(closures)
    return {"centers": centers, "cost": value, "winner": winner}


def _ball_to_json(balls: Tuple[Ball, ...]):
    return [[leader, rat_str(rat(radius))] for leader, radius in balls]


def run_stable(
    inst: MetricInstance,
    k: int,
    epsilon,
    seed=0,
    caps: Optional[SearchCaps] = None,
    restarts: Optional[int] = None,
    oracle: Optional[OracleGuesses] = None,
    workers: int = 0,
    search_mode: str = "strict",
) -> StableSolution:
    """Full nested guess enumeration; returns the cheapest exactly-k candidate.

    Works best with epsilon below 1/12.  The all-empty guess chain always
    survives the filters, so the local-search solution itself is always a
    candidate and the result is never worse than it.  `restarts` repeats
    everything with fresh sample randomness.  Injected guesses (oracle)
    replace the corresponding enumeration wholesale.
    """
    caps = caps or SearchCaps()
    oracle = oracle or OracleGuesses()
    if restarts is None:
        restarts = caps.restarts
    restarts = max(1, restarts)
    eps = rat(epsilon)

    S = tuple(oracle.S) if oracle.S is not None else local_search(inst, k, epsilon, mode=search_mode)
    if len(S) != k:
        raise ValueError(f"starting solution has {len(S)} centers, expected {k}")
    cost_S = cost(inst, S)
    if cost_S == 0:
        return StableSolution(
            centers=tuple(sorted(S)),
            cost=Fraction(0),
            k=k,
            partial_search=False,
            winner={"stage": "local-search-optimal"},
            evaluated=0,
        )

    partial = False
    evaluated = 0
    best = None

    for restart in range(restarts):
        jobs = []
        if oracle.W is not None:
            W = tuple(oracle.W)
        else:
            W = d_sample(
                inst, S, None, seed=("dsample", seed, restart), epsilon=eps, cap=caps.sample_size
            )
        s_costs = {p: min(inst.d(p, c) for c in S) for p in set(W)}
        if oracle.ball_families is not None:
            families = [tuple(fam) for fam in oracle.ball_families]
        else:
            try:
                families = ball_guesses(W, s_costs, eps, cap=caps.ball_families)
            except CapExceededError:
                partial = True
                families = [()]
        for bi, balls in enumerate(families):
            inst_ext, Lambda = make_dummy_centers(inst, balls)
            ball_facs = tuple(facilities_in_ball(inst, ball) for ball in balls)
            s0 = len(balls)
            if oracle.Q_list is not None:
                removal_guesses = [frozenset(q) for q in oracle.Q_list]
            else:
                removal_guesses = exp_rem(
                    inst_ext,
                    S,
                    Lambda,
                    s0,
                    eps,
                    seed=("exprem", seed, restart, bi),
                    cap=caps.exprem_outer,
                )
            for qi, Q in enumerate(removal_guesses):
                if not Q <= set(S):
                    continue
                rem = s0 - len(Q)
                if rem < 0:
                    continue
                if oracle.sizes_list is not None:
                    sizes_options = list(oracle.sizes_list)
                else:
                    sizes_options = [
                        (u, rem - u, x) for u in range(rem + 1) for x in range(u + 1)
                    ]
                for sizes in sizes_options:
                    u_sz, r_sz, x_sz = sizes
                    if u_sz + r_sz != rem or min(sizes) < 0:
                        continue
                    if u_sz + r_sz + x_sz > 2 * (len(S) - len(Q)):
                        continue
                    if oracle.U_list is not None:
                        proxy_list = [(frozenset(u), dict(nm)) for u, nm in oracle.U_list]
                    else:
                        try:
                            proxy_list = cheap_rem(
                                inst_ext, S, Q, sizes, Lambda, cap=caps.cheaprem_calls
                            )
                        except CapExceededError as exc:
                            partial = True
                            proxy_list = list(exc.partial or [])
                    for ui, (u_tilde, next_map) in enumerate(proxy_list):
                        if len(u_tilde) != u_sz or not u_tilde <= set(S) - Q:
                            continue
                        if not set(next_map) >= u_tilde:
                            continue
                        sq_centers = sorted(set(S) - Q) + list(Lambda)
                        sq_assign = _assign(inst_ext, sq_centers)
                        mu = {
                            p: (next_map[c] if c in u_tilde else c)
                            for p, c in sq_assign.items()
                        }
                        views = cluster_views(inst_ext, mu, eps, cost_S, r_sz)
                        working = sorted(set(S) - Q - u_tilde) + list(Lambda)
                        sq_groups: Dict[int, set] = {}
                        for p, c in sq_assign.items():
                            sq_groups.setdefault(c, set()).add(p)
                        mu_groups: Dict[int, set] = {}
                        for p, c in mu.items():
                            mu_groups.setdefault(c, set()).add(p)
                        potentials = [
                            c
                            for c in working
                            if c not in Lambda
                            and mu_groups.get(c, set()) == sq_groups.get(c, set())
                        ]
                        if r_sz > 0:
                            pc = {
                                c: views[c].cost if c in views else Fraction(0)
                                for c in potentials
                            }
                            if oracle.R0_list is not None:
                                r0_options = [frozenset(r) for r in oracle.R0_list]
                            else:
                                try:
                                    r0_options = guess_R0(
                                        pc,
                                        eps * eps * (cost_S / 5) / r_sz,
                                        cap=caps.r0_subsets,
                                    )
                                except CapExceededError:
                                    partial = True
                                    r0_options = [frozenset()]
                        else:
                            r0_options = [frozenset()]
                        for ri, R0 in enumerate(r0_options):
                            if not R0 <= set(potentials) or len(R0) > r_sz:
                                continue
                            r1 = r_sz - len(R0)
                            P1 = tuple(
                                c
                                for c in potentials
                                if c not in R0 and c in views and views[c].concentrated
                            )
                            if len(P1) < r1:
                                continue
                            matroid, elem_fac = matroid_from_balls(ball_facs)
                            clusters = {
                                c: tuple(sorted(members))
                                for c, members in mu_groups.items()
                            }
                            cores = {
                                c: views[c].core for c in views if c in set(potentials)
                            }
                            ctx = SubmodularContext(
                                inst=inst_ext,
                                k=k,
                                clusters=clusters,
                                mu=mu,
                                Lambda=Lambda,
                                R0=R0,
                                P1=P1,
                                r1_size=r1,
                                cores=cores,
                                matroid=matroid,
                                element_facility=elem_fac,
                                ball_facilities=ball_facs,
                            )
                            descriptor = {
                                "restart": restart,
                                "balls": _ball_to_json(balls),
                                "Q": sorted(Q),
                                "sizes": list(sizes),
                                "U_tilde": sorted(u_tilde),
                                "R0": sorted(R0),
                            }
                            jobs.append(
                                {
                                    "ctx": ctx,
                                    "inst": inst,
                                    "working": tuple(working),
                                    "descriptor": descriptor,
                                }
                            )
                            if len(jobs) >= caps.candidates:
                                partial = True
                                break
                        if len(jobs) >= caps.candidates:
                            break
                    if len(jobs) >= caps.candidates:
                        break
                if len(jobs) >= caps.candidates:
                    break
            if len(jobs) >= caps.candidates:
                break

        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_evaluate_job, jobs))
        else:
            results = [_evaluate_job(job) for job in jobs]
        for res in results:
            if res is None:
                continue
            evaluated += 1
            if best is None or _candidate_key(res) < _candidate_key(best):
                best = res

    if best is None:
        raise RuntimeError("no candidate survived the guess enumeration")
    return StableSolution(
        centers=tuple(best["centers"]),
        cost=best["cost"],
        k=k,
        partial_search=partial,
        winner=best["winner"],
        evaluated=evaluated,
    )


# ---------------------------------------------------------------------------
# top-level combination


def pad_centers(inst: MetricInstance, centers: Iterable[int], k: int) -> Tuple[int, ...]:
    """Top up to exactly k by adding unopened facilities in index order."""
    out = sorted(set(centers))
    if len(out) > k:
        raise ValueError(f"{len(out)} centers cannot be padded down to {k}")
    have = set(out)
    for i in inst.facilities:
        if len(out) >= k:
            break
        if i not in have:
            out.append(i)
    if len(out) < k:
        raise ValueError("not enough facilities to reach k centers")
    return tuple(sorted(out))


def run_main(
    inst: MetricInstance,
    k: int,
    epsilon,
    seed=0,
    caps: Optional[SearchCaps] = None,
    restarts: Optional[int] = None,
    eta=None,
    workers: int = 0,
) -> StableSolution:
    """Combine the walk-based route with the guess pipeline; best of both.

    First finds a reduced budget k' such that the walk at k' opens at most
    k locations in total (surplus free copies included), then runs the
    guess pipeline at every budget in (k', k].  All candidates are padded
    to exactly k centers; the cheapest wins.  If no viable k' exists the
    guess pipeline at k is the sole route.
    """
    from .merge import WalkError, run_pseudo_approx

    caps = caps or SearchCaps()
    candidates = []
    partial = False
    k_prime = k
    pseudo_pick = None
    tried = set()
    try:
        while k_prime >= 1 and k_prime not in tried:
            tried.add(k_prime)
            pseudo = run_pseudo_approx(inst, k_prime, epsilon, eta)
            surplus = pseudo.free_count
            if k_prime + surplus <= k:
                pseudo_pick = (k_prime, pseudo)
                break
            k_prime = k - surplus
    except WalkError:
        # Instance outside the walk's separation precondition; the guess
        # pipeline has no such restriction, so run it as the sole route.
        pseudo_pick = None
    if pseudo_pick is not None:
        k_used, pseudo = pseudo_pick
        locations = {ref.base for ref in pseudo.open_set}
        centers = pad_centers(inst, locations, k)
        candidates.append(
            {
                "centers": centers,
                "cost": cost(inst, centers),
                "winner": {"route": "walk", "k_reduced": k_used},
            }
        )
        sweep_low = k_used
    else:
        sweep_low = k - 1  # guess pipeline at k only
    for k2 in range(sweep_low + 1, k + 1):
        sol = run_stable(
            inst,
            k2,
            epsilon,
            seed=("main", seed, k2),
            caps=caps,
            restarts=restarts,
            workers=workers,
        )
        partial = partial or sol.partial_search
        centers = pad_centers(inst, sol.centers, k)
        candidates.append(
            {
                "centers": centers,
                "cost": cost(inst, centers),
                "winner": {"route": "guess-pipeline", "k_budget": k2, "detail": sol.winner},
            }
        )
    best = min(candidates, key=_candidate_key)
    return StableSolution(
        centers=tuple(best["centers"]),
        cost=best["cost"],
        k=k,
        partial_search=partial,
        winner=best["winner"],
        evaluated=len(candidates),
        source="main",
    )
