"""Exact-rational metric instances for k-median and facility-location runs.

Points live in one index space: clients first (0 .. n-1), then facilities
(n .. n+m-1).  All distances are `fractions.Fraction`; after normalization
they are integers.  Free facility copies are addressed through `FacilityRef`
and priced through the offset table carried by `ParamSet`.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union


class _Infinite:
    """Sentinel that compares greater than every rational (used for d(j, {}))."""

    __slots__ = ()

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return other is INF

    def __gt__(self, other):
        return other is not INF

    def __ge__(self, other):
        return True

    def __eq__(self, other):
        return other is INF

    def __ne__(self, other):
        return other is not INF

    def __hash__(self):
        return 0x1F1F1F

    def __repr__(self):
        return "INF"


INF = _Infinite()

#: A distance is either a finite rational or the infinite sentinel.
Distance = Union[Fraction, _Infinite]


def rat(value) -> Fraction:
    """Coerce ints/strings/Fractions to Fraction (accepts "p/q" strings)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, int):
        return Fraction(value)
    raise TypeError(f"not an exact rational: {value!r}")


def rat_str(value: Fraction) -> str:
    """Canonical "p/q" form with an explicit denominator."""
    f = Fraction(value)
    return f"{f.numerator}/{f.denominator}"


@dataclass(frozen=True)
class MetricInstance:
    """A finite metric over n clients and m candidate facilities.

    `dist` is a dense (n+m) x (n+m) table, rows and columns ordered clients
    then facilities.  The table is expected to satisfy the metric axioms;
    `validate_metric` checks them exhaustively.
    """

    n: int
    m: int
    dist: tuple
    label: str = ""

    @property
    def clients(self) -> range:
        return range(self.n)

    @property
    def facilities(self) -> range:
        return range(self.n, self.n + self.m)

    @property
    def points(self) -> range:
        return range(self.n + self.m)

    def d(self, a: int, b: int) -> Fraction:
        return self.dist[a][b]

    def max_distance(self) -> Fraction:
        return max(max(row) for row in self.dist) if self.dist else Fraction(0)

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "dist": [[rat_str(x) for x in row] for row in self.dist],
            "labels": {"instance": self.label},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @staticmethod
    def from_json_dict(doc: dict) -> "MetricInstance":
        n, m = int(doc["n"]), int(doc["m"])
        rows = doc["dist"]
        if len(rows) != n + m or any(len(r) != n + m for r in rows):
            raise ValueError("distance table must be (n+m) x (n+m)")
        dist = tuple(tuple(rat(x) for x in row) for row in rows)
        label = str(doc.get("labels", {}).get("instance", ""))
        return MetricInstance(n=n, m=m, dist=dist, label=label)

    @staticmethod
    def from_json(text: str) -> "MetricInstance":
        return MetricInstance.from_json_dict(json.loads(text))


def make_instance(n: int, m: int, table: Sequence[Sequence], label: str = "") -> MetricInstance:
    dist = tuple(tuple(rat(x) for x in row) for row in table)
    return MetricInstance(n=n, m=m, dist=dist, label=label)


def validate_metric(inst: MetricInstance) -> list:
    """Return a list of human-readable violations (empty iff a valid metric)."""
    bad = []
    pts = inst.points
    d = inst.dist
    for a in pts:
        if d[a][a] != 0:
            bad.append(f"nonzero diagonal at {a}: {d[a][a]}")
    for a in pts:
        for b in pts:
            if a < b:
                if d[a][b] != d[b][a]:
                    bad.append(f"asymmetry at ({a},{b}): {d[a][b]} vs {d[b][a]}")
                if d[a][b] < 0:
                    bad.append(f"negative distance at ({a},{b}): {d[a][b]}")
    for a in pts:
        for b in pts:
            if b == a:
                continue
            dab = d[a][b]
            for c in pts:
                if d[a][c] + d[c][b] < dab:
                    bad.append(
                        f"triangle violation: d({a},{b})={dab} > "
                        f"d({a},{c})+d({c},{b})={d[a][c] + d[c][b]}"
                    )
    return bad


def metric_closure(table: Sequence[Sequence[Fraction]]) -> tuple:
    """All-pairs shortest paths (Floyd-Warshall) over an exact table."""
    size = len(table)
    rows = [list(row) for row in table]
    for mid in range(size):
        rmid = rows[mid]
        for a in range(size):
            via = rows[a][mid]
            ra = rows[a]
            for b in range(size):
                alt = via + rmid[b]
                if alt < ra[b]:
                    ra[b] = alt
    return tuple(tuple(row) for row in rows)


class DegenerateGuessError(ValueError):
    """Raised when a zero scale guess meets a nonzero distance."""


def normalize_with_guess(inst: MetricInstance, epsilon, Mguess) -> MetricInstance:
    """Rescale to an integral metric with distances in [1, ceil(n^3/eps)].

    Client-facility pairs within `Mguess` are rescaled to
    max(1, ceil((d/Mguess) * (n/eps))); every other off-diagonal pair is set
    to the cap and the result is replaced by its metric closure.
    """
    eps = rat(epsilon)
    M = rat(Mguess)
    n = inst.n
    if M == 0:
        if any(
            inst.d(j, i) != 0 for j in inst.clients for i in inst.facilities
        ):
            raise DegenerateGuessError("zero guess with nonzero client-facility distances")
    cap = Fraction(-((-(n ** 3)) // eps))  # ceil(n^3 / eps), exact
    size = n + inst.m
    table = [[cap] * size for _ in range(size)]
    for a in range(size):
        table[a][a] = Fraction(0)
    for j in inst.clients:
        for i in inst.facilities:
            dij = inst.d(j, i)
            if dij <= M:
                if dij == 0:
                    scaled = Fraction(1)
                else:
                    ratio = dij / M * n / eps
                    scaled = Fraction(max(1, -((-ratio.numerator) // ratio.denominator)))
                table[j][i] = scaled
                table[i][j] = scaled
    closed = metric_closure(table)
    return MetricInstance(n=inst.n, m=inst.m, dist=closed, label=inst.label + "[normalized]")


def enumerate_normalizations(inst: MetricInstance, epsilon) -> list:
    """One (Mguess, normalized instance) pair per distinct client-facility distance."""
    values = sorted({inst.d(j, i) for j in inst.clients for i in inst.facilities})
    out = []
    for M in values:
        try:
            out.append((M, normalize_with_guess(inst, epsilon, M)))
        except DegenerateGuessError:
            continue
    return out


@dataclass(frozen=True, order=True)
class FacilityRef:
    """A regular facility, or a free copy of one (copy ids are run-unique).

    Free copies sit at their base facility shifted outward by the offset
    u(copy) recorded in the governing ParamSet.
    """

    base: int
    copy: int = -1  # -1 marks a regular facility

    @property
    def is_free(self) -> bool:
        return self.copy >= 0

    def __repr__(self):
        if self.is_free:
            return f"Free({self.copy}@{self.base})"
        return f"Fac({self.base})"


def regular(base: int) -> FacilityRef:
    return FacilityRef(base=base, copy=-1)


def free_copy(copy_id: int, base: int) -> FacilityRef:
    if copy_id < 0:
        raise ValueError("free copy ids must be non-negative")
    return FacilityRef(base=base, copy=copy_id)


class MissingParameterError(KeyError):
    """Raised when a free copy has no recorded offset."""


def default_eta(n: int) -> Fraction:
    """Error budget small enough that n*eta stays below the distance grid."""
    return Fraction(1, 2 ** min(max(24, n), 64))


@dataclass(frozen=True)
class ParamSet:
    """Run parameters: facility price f (doubled to fhat in the duals),
    accuracy epsilon with delta = 3*epsilon, error budget eta, and the
    offsets u for free facility copies."""

    f: Fraction
    epsilon: Fraction
    eta: Fraction
    u: Mapping[int, Fraction] = field(default_factory=dict)

    @property
    def fhat(self) -> Fraction:
        return 2 * self.f

    @property
    def delta(self) -> Fraction:
        return 3 * self.epsilon

    def offset(self, copy_id: int) -> Fraction:
        try:
            return self.u[copy_id]
        except KeyError:
            raise MissingParameterError(f"no offset recorded for free copy {copy_id}")

    def with_f(self, f) -> "ParamSet":
        return ParamSet(f=rat(f), epsilon=self.epsilon, eta=self.eta, u=dict(self.u))

    def with_offset(self, copy_id: int, value) -> "ParamSet":
        u = dict(self.u)
        u[copy_id] = rat(value)
        return ParamSet(f=self.f, epsilon=self.epsilon, eta=self.eta, u=u)


def make_params(f, epsilon, n: int, eta=None, u=None) -> ParamSet:
    eps = rat(epsilon)
    if not (0 < eps < Fraction(1, 6)):
        raise ValueError("epsilon must lie strictly between 0 and 1/6")
    e = default_eta(n) if eta is None else rat(eta)
    if e <= 0 or n * e >= 1:
        raise ValueError("eta must satisfy 0 < n*eta < 1")
    return ParamSet(f=rat(f), epsilon=eps, eta=e, u=dict(u or {}))


PointOrRef = Union[int, FacilityRef]


def extended_distance(inst: MetricInstance, params: ParamSet, a: PointOrRef, b: PointOrRef) -> Fraction:
    """Distance in the metric extended with free copies.

    Regular pairs read the base table; a free copy adds its offset on top of
    its base facility's row; two distinct free copies pay both offsets.
    """
    if isinstance(a, FacilityRef) and isinstance(b, FacilityRef) and a == b:
        return Fraction(0)
    ua = ub = Fraction(0)
    pa, pb = a, b
    if isinstance(a, FacilityRef):
        pa = a.base
        if a.is_free:
            ua = params.offset(a.copy)
    if isinstance(b, FacilityRef):
        pb = b.base
        if b.is_free:
            ub = params.offset(b.copy)
    return ua + inst.dist[pa][pb] + ub


def distance_to_set(inst: MetricInstance, params: ParamSet, point: PointOrRef, refs: Iterable[FacilityRef]) -> Distance:
    """min over refs of the extended distance; INF when refs is empty."""
    best: Distance = INF
    for ref in refs:
        dd = extended_distance(inst, params, point, ref)
        if best is INF or dd < best:
            best = dd
    return best


def generate_random_instance(seed: int, n: int, m: int, coord_range: int = 9) -> MetricInstance:
    """Deterministic random metric: closure of a symmetric integer table."""
    if n < 1 or m < 1:
        raise ValueError("need at least one client and one facility")
    rng = random.Random(("kmedian-instance", seed, n, m, coord_range).__repr__())
    size = n + m
    table = [[Fraction(0)] * size for _ in range(size)]
    for a in range(size):
        for b in range(a + 1, size):
            v = Fraction(rng.randint(1, max(1, coord_range)))
            table[a][b] = v
            table[b][a] = v
    closed = metric_closure(table)
    return MetricInstance(n=n, m=m, dist=closed, label=f"random(seed={seed},n={n},m={m})")


def generate_stable_instance(
    seed: int,
    k: int,
    cluster_size: int,
    separation: int,
    extra_facilities: int = 0,
    jitter: bool = False,
):
    """Line metric with k well-separated client groups, one facility each.

    Returns (instance, planted facility point ids).  Group g sits at
    g*separation; its clients sit at offsets 1 (or 1..2 with jitter) from the
    group's facility.  Optional extra facilities are parked between groups so
    they never serve anyone in an optimal solution.
    """
    if k < 1 or cluster_size < 1:
        raise ValueError("need k >= 1 and cluster_size >= 1")
    if separation < 8 * (2 + cluster_size):
        raise ValueError("separation too small for a well-separated plant")
    rng = random.Random(("kmedian-stable", seed, k, cluster_size, separation).__repr__())
    client_pos = []
    for g in range(k):
        center = g * separation
        for c in range(cluster_size):
            off = 1 + (rng.randint(0, 1) if jitter else 0)
            side = -1 if (c % 2 == 1) else 1
            client_pos.append(center + side * off)
    fac_pos = [g * separation for g in range(k)]
    for x in range(extra_facilities):
        # park decoys mid-gap (or past the last group) so no client is close
        g = x % max(1, k - 1) if k > 1 else 0
        fac_pos.append(g * separation + separation // 2 + x)
    n = len(client_pos)
    m = len(fac_pos)
    pos = client_pos + fac_pos
    size = n + m
    table = [[Fraction(abs(pos[a] - pos[b])) for b in range(size)] for a in range(size)]
    for a in range(size):
        for b in range(size):
            if a != b and table[a][b] == 0:
                table[a][b] = Fraction(1)  # co-located distinct points sit at the grid floor
    inst = MetricInstance(
        n=n, m=m, dist=metric_closure(table),
        label=f"stable(seed={seed},k={k},sz={cluster_size},sep={separation})",
    )
    planted = frozenset(range(n, n + k))
    return inst, planted
