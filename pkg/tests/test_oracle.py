from fractions import Fraction

import pytest

from kmedian.metric import free_copy, generate_random_instance, make_params, regular
from kmedian.oracle import (
    EnumerationCapError,
    brute_force_kmedian,
    brute_force_ufl,
    cost,
    ufl_cost,
    verify_lmp_certificate,
)

from helpers import assignment_cost, exhaustive_kmedian, exhaustive_ufl, line_instance


class TestCost:
    def test_matches_independent_recomputation(self):
        inst = generate_random_instance(1, 6, 4)
        for S in ([6], [6, 8], [7, 9]):
            assert cost(inst, S) == assignment_cost(inst, S)

    def test_accepts_refs_and_offsets(self):
        inst = line_instance([0, 10], [1, 9])
        p = make_params(1, Fraction(1, 8), inst.n, u={0: Fraction(3)})
        refs = [regular(2), free_copy(0, 3)]
        want = min(inst.d(0, 2), inst.d(0, 3) + 3) + min(inst.d(1, 2), inst.d(1, 3) + 3)
        assert cost(inst, refs, p) == want

    def test_empty_solution_rejected(self):
        inst = line_instance([0], [1])
        with pytest.raises(ValueError):
            cost(inst, [])

    def test_ufl_adds_prices(self):
        inst = line_instance([0, 4], [1, 6])
        assert ufl_cost(inst, [2, 3], 5) == cost(inst, [2, 3]) + 10


class TestBruteForce:
    @pytest.mark.parametrize("seed", range(5))
    def test_kmedian_matches_plain_enumeration(self, seed):
        inst = generate_random_instance(seed, 6, 5)
        for k in (1, 2, 3):
            res = brute_force_kmedian(inst, k)
            want_value, want_set = exhaustive_kmedian(inst, k)
            assert res.value == want_value
            assert assignment_cost(inst, sorted(res.witness)) == want_value
            assert len(res.witness) == k

    @pytest.mark.parametrize("seed", range(5))
    def test_ufl_matches_plain_enumeration(self, seed):
        inst = generate_random_instance(seed + 20, 5, 4)
        for f in (Fraction(1), Fraction(5, 2), Fraction(7)):
            res = brute_force_ufl(inst, f)
            want_value, _ = exhaustive_ufl(inst, f)
            assert res.value == want_value
            got = assignment_cost(inst, sorted(res.witness)) + f * len(res.witness)
            assert got == want_value

    def test_kmedian_k_bounds(self):
        inst = line_instance([0], [1, 2])
        with pytest.raises(ValueError):
            brute_force_kmedian(inst, 0)
        with pytest.raises(ValueError):
            brute_force_kmedian(inst, 3)

    def test_enumeration_counter(self):
        inst = generate_random_instance(2, 4, 5)
        assert brute_force_kmedian(inst, 2).enumerated == 10
        assert brute_force_ufl(inst, 1).enumerated == 2**5 - 1

    def test_cap_guard(self, monkeypatch):
        import kmedian.oracle as oracle_module

        inst = generate_random_instance(3, 4, 6)
        monkeypatch.setattr(oracle_module, "KMEDIAN_ENUM_CAP", 5)
        with pytest.raises(EnumerationCapError):
            brute_force_kmedian(inst, 3)


class TestCertificateChecker:
    def test_honest_certificate_passes(self):
        # one client, one facility: the dual grows to d + 2f exactly
        inst = line_instance([0], [2])
        f = Fraction(3)
        alpha = {0: inst.d(0, 1) + 2 * f}
        report = verify_lmp_certificate(inst, f, [1], alpha, 2)
        assert report.dual_feasible
        assert report.payment_balanced

    def test_inflated_dual_fails(self):
        inst = line_instance([0], [2])
        f = Fraction(3)
        alpha = {0: inst.d(0, 1) + 2 * f + 1}
        report = verify_lmp_certificate(inst, f, [1], alpha, 2)
        assert not report.dual_feasible or not report.payment_balanced
