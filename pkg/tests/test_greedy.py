from fractions import Fraction

import pytest

from kmedian.greedy import GreedyEvent, audit_no_overbid, run_greedy
from kmedian.metric import generate_random_instance, make_params
from kmedian.oracle import brute_force_ufl, cost

from helpers import assignment_cost, line_instance


class TestHandTraces:
    def test_single_client_single_facility(self):
        # the lone budget must grow to the connection cost plus both prices
        inst = line_instance([0], [3])
        f = Fraction(2)
        out = run_greedy(inst, f)
        assert [r.base for r in out.S_star] == [1]
        assert out.alpha_star[0] == inst.d(0, 1) + 2 * f
        kinds = {ev.kind for ev in out.events}
        assert len(kinds) == 2  # one opening, one connection

    def test_two_equal_clients_share_the_price(self):
        inst = line_instance([0, 6], [3])
        f = Fraction(3)
        out = run_greedy(inst, f)
        assert [r.base for r in out.S_star] == [2]
        # both budgets stop together, each covering half of the doubled price
        assert out.alpha_star[0] == out.alpha_star[1] == inst.d(0, 2) + f

    def test_cheap_price_opens_both_facilities(self):
        inst = line_instance([0, 100], [1, 99])
        out = run_greedy(inst, Fraction(1, 2))
        assert sorted(r.base for r in out.S_star) == [2, 3]

    def test_costly_price_opens_one(self):
        inst = line_instance([0, 10], [1, 9])
        out = run_greedy(inst, Fraction(50))
        assert len(out.S_star) == 1


class TestIdentities:
    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("f", [Fraction(1), Fraction(7, 2)])
    def test_payment_identity_and_feasibility(self, seed, f):
        inst = generate_random_instance(seed, 6, 4)
        out = run_greedy(inst, f)
        S = [r.base for r in out.S_star]
        conn = assignment_cost(inst, S)
        total = sum(out.alpha_star.values(), Fraction(0))
        assert total == conn + 2 * f * len(S)
        for i in inst.facilities:
            paid = sum(
                (
                    max(out.alpha_star[j] - 2 * inst.d(i, j), Fraction(0))
                    for j in inst.clients
                ),
                Fraction(0),
            )
            assert paid <= 2 * f

    @pytest.mark.parametrize("seed", range(8))
    def test_factor_two_against_oracle(self, seed):
        inst = generate_random_instance(seed + 50, 6, 4)
        f = Fraction(2)
        out = run_greedy(inst, f)
        S = [r.base for r in out.S_star]
        lhs = assignment_cost(inst, S)
        opt = brute_force_ufl(inst, f).value
        assert lhs <= 2 * (opt - f * len(S))

    def test_deterministic(self):
        inst = generate_random_instance(4, 7, 5)
        a = run_greedy(inst, Fraction(3))
        b = run_greedy(inst, Fraction(3))
        assert a.alpha_star == b.alpha_star
        assert a.events == b.events
        assert [r.base for r in a.S_star] == [r.base for r in b.S_star]


class TestAudit:
    def test_honest_run_passes(self):
        inst = generate_random_instance(2, 6, 4)
        f = Fraction(2)
        out = run_greedy(inst, f)
        params = make_params(f, Fraction(1, 8), inst.n)
        report = audit_no_overbid(out.events, inst, params)
        assert report.ok, report.violations

    def test_fabricated_late_opening_fails(self):
        # delaying an opening lets the dual run past the no-overbid ceiling
        inst = generate_random_instance(2, 6, 4)
        f = Fraction(2)
        out = run_greedy(inst, f)
        params = make_params(f, Fraction(1, 8), inst.n)
        tampered = [
            GreedyEvent(theta=ev.theta + 100, kind=ev.kind, subject=ev.subject)
            for ev in out.events
        ]
        report = audit_no_overbid(tampered, inst, params)
        assert not report.ok

    def test_reordered_events_fail(self):
        inst = generate_random_instance(6, 6, 4)
        f = Fraction(2)
        out = run_greedy(inst, f)
        assert len(out.events) >= 2
        params = make_params(f, Fraction(1, 8), inst.n)
        swapped = list(reversed(out.events))
        report = audit_no_overbid(swapped, inst, params)
        assert not report.ok
