"""Shared builders and independent reference oracles for the test suite."""

import itertools
import random
from fractions import Fraction
from typing import Dict, List, Sequence, Tuple

from kmedian.lp import EQ, GE, LE, LinearSystem
from kmedian.metric import MetricInstance, make_instance, rat


def line_instance(clients: Sequence, facilities: Sequence, label: str = "") -> MetricInstance:
    """Instance from 1-D coordinates; distances are absolute differences."""
    coords = [rat(c) for c in clients] + [rat(f) for f in facilities]
    size = len(coords)
    table = [[abs(coords[a] - coords[b]) for b in range(size)] for a in range(size)]
    return make_instance(len(clients), len(facilities), table, label=label)


def assignment_cost(inst: MetricInstance, centers: Sequence[int]) -> Fraction:
    """Straight recomputation, independent of the oracle module."""
    total = Fraction(0)
    for j in inst.clients:
        total += min(inst.d(j, c) for c in centers)
    return total


def exhaustive_kmedian(inst: MetricInstance, k: int) -> Tuple[Fraction, frozenset]:
    """Plain double-loop brute force used to cross-check the oracle module."""
    best = None
    best_set = None
    for combo in itertools.combinations(inst.facilities, k):
        value = assignment_cost(inst, combo)
        if best is None or value < best:
            best = value
            best_set = frozenset(combo)
    return best, best_set


def exhaustive_ufl(inst: MetricInstance, f) -> Tuple[Fraction, frozenset]:
    price = rat(f)
    best = None
    best_set = None
    facilities = list(inst.facilities)
    for size in range(1, len(facilities) + 1):
        for combo in itertools.combinations(facilities, size):
            value = assignment_cost(inst, combo) + price * size
            if best is None or value < best:
                best = value
                best_set = frozenset(combo)
    return best, best_set


# ---------------------------------------------------------------------------
# reference oracle for linear feasibility: exhaustive vertex enumeration


def _point_satisfies(system: LinearSystem, point: Dict[str, Fraction]) -> bool:
    for name, lo, hi in system.variables:
        if not (lo <= point[name] <= hi):
            return False
    for coefs, rel, rhs in system.rows:
        lhs = sum((c * point[name] for name, c in coefs.items()), Fraction(0))
        if rel == LE and lhs > rhs:
            return False
        if rel == GE and lhs < rhs:
            return False
        if rel == EQ and lhs != rhs:
            return False
    return True


def _solve_square(rows: List[List[Fraction]], rhs: List[Fraction]):
    """Gaussian elimination; None when the chosen rows are dependent."""
    size = len(rows)
    aug = [list(rows[i]) + [rhs[i]] for i in range(size)]
    for col in range(size):
        pivot = next((r for r in range(col, size) if aug[r][col] != 0), None)
        if pivot is None:
            return None
        aug[col], aug[pivot] = aug[pivot], aug[col]
        pv = aug[col][col]
        aug[col] = [x / pv for x in aug[col]]
        for r in range(size):
            if r != col and aug[r][col] != 0:
                factor = aug[r][col]
                aug[r] = [a - factor * b for a, b in zip(aug[r], aug[col])]
    return [aug[i][size] for i in range(size)]


def vertex_feasible(system: LinearSystem) -> bool:
    """The region is a polytope (every variable is boxed), so it is nonempty
    iff some choice of active constraints -- rows held at equality plus
    variables pinned to a bound -- solves to a point satisfying everything."""
    names = [name for name, _, _ in system.variables]
    bounds = {name: (lo, hi) for name, lo, hi in system.variables}
    nvars = len(names)
    row_list = list(system.rows)
    for t in range(min(nvars, len(row_list)) + 1):
        for active_rows in itertools.combinations(range(len(row_list)), t):
            for pinned in itertools.combinations(names, nvars - t):
                free = [name for name in names if name not in pinned]
                for sides in itertools.product((0, 1), repeat=len(pinned)):
                    point = {
                        name: bounds[name][side] for name, side in zip(pinned, sides)
                    }
                    if t:
                        mat = []
                        rhs_vec = []
                        for ri in active_rows:
                            coefs, _, rhs = row_list[ri]
                            mat.append([coefs.get(name, Fraction(0)) for name in free])
                            shift = sum(
                                (
                                    c * point[name]
                                    for name, c in coefs.items()
                                    if name in point
                                ),
                                Fraction(0),
                            )
                            rhs_vec.append(rhs - shift)
                        sol = _solve_square(mat, rhs_vec)
                        if sol is None:
                            continue
                        point.update({name: value for name, value in zip(free, sol)})
                    if _point_satisfies(system, point):
                        return True
    return False


def random_system(seed: int, nvars: int, max_rows: int, planted: bool) -> LinearSystem:
    """Small random boxed system; `planted` smuggles in a feasible point."""
    rng = random.Random(repr(("lp-system", seed, nvars, max_rows, planted)))

    def small_fraction(lo: int, hi: int) -> Fraction:
        return Fraction(rng.randint(lo, hi), rng.choice((1, 1, 2, 4)))

    system = LinearSystem()
    names = [f"x{i}" for i in range(nvars)]
    box = {}
    for name in names:
        lo = small_fraction(-4, 0)
        hi = lo + abs(small_fraction(0, 6)) + Fraction(rng.randint(0, 3))
        system.var(name, lo, hi)
        box[name] = (lo, hi)
    witness = None
    if planted:
        witness = {}
        for name in names:
            lo, hi = box[name]
            witness[name] = lo + (hi - lo) * Fraction(rng.randint(0, 4), 4)
    nrows = rng.randint(1, max_rows)
    for _ in range(nrows):
        support = rng.sample(names, rng.randint(1, nvars))
        coefs = {}
        for name in support:
            c = small_fraction(-3, 3)
            if c != 0:
                coefs[name] = c
        if not coefs:
            coefs[support[0]] = Fraction(1)
        rel = rng.choice((LE, GE, EQ))
        if witness is not None:
            lhs = sum(
                (c * witness[name] for name, c in coefs.items()), Fraction(0)
            )
            if rel == LE:
                rhs = lhs + abs(small_fraction(0, 3))
            elif rel == GE:
                rhs = lhs - abs(small_fraction(0, 3))
            else:
                rhs = lhs
        else:
            rhs = small_fraction(-6, 6)
        system.add(coefs, rel, rhs)
    return system
