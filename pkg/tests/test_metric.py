from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from kmedian.metric import (
    INF,
    DegenerateGuessError,
    FacilityRef,
    MetricInstance,
    MissingParameterError,
    default_eta,
    distance_to_set,
    enumerate_normalizations,
    extended_distance,
    free_copy,
    generate_random_instance,
    generate_stable_instance,
    make_instance,
    make_params,
    metric_closure,
    normalize_with_guess,
    rat,
    rat_str,
    regular,
    validate_metric,
)

from helpers import line_instance


class TestRationals:
    def test_rat_parses_fraction_strings(self):
        assert rat("3/4") == Fraction(3, 4)
        assert rat(5) == Fraction(5)
        assert rat(Fraction(1, 8)) == Fraction(1, 8)

    def test_rat_str_always_shows_denominator(self):
        assert rat_str(Fraction(3)) == "3/1"
        assert rat_str(Fraction(-7, 2)) == "-7/2"

    @given(st.integers(-50, 50), st.integers(1, 50))
    def test_round_trip(self, p, q):
        x = Fraction(p, q)
        assert rat(rat_str(x)) == x


class TestInfinity:
    def test_orders_above_every_rational(self):
        assert INF > Fraction(10**12)
        assert not (INF < Fraction(0))
        assert INF == INF
        assert INF >= Fraction(5) and INF != Fraction(5)

    def test_distance_to_empty_set(self):
        inst = line_instance([0], [1])
        params = make_params(1, Fraction(1, 8), inst.n)
        assert distance_to_set(inst, params, 0, []) is INF


class TestMakeInstance:
    def test_basic_line(self):
        inst = line_instance([0, 4], [1, 6])
        assert inst.n == 2 and inst.m == 4 - 2
        assert inst.d(0, 2) == 1 and inst.d(1, 3) == 2
        assert validate_metric(inst) == []

    def test_flags_asymmetry(self):
        inst = make_instance(1, 1, [[0, 1], [2, 0]])
        assert any("asymmetry" in v for v in validate_metric(inst))

    def test_flags_negative(self):
        inst = make_instance(1, 1, [[0, -1], [-1, 0]])
        assert any("negative" in v for v in validate_metric(inst))

    def test_flags_triangle_violation(self):
        inst = make_instance(2, 1, [[0, 1, 5], [1, 0, 1], [5, 1, 0]])
        assert any("triangle" in v for v in validate_metric(inst))

    def test_flags_nonzero_diagonal(self):
        inst = make_instance(1, 1, [[1, 1], [1, 0]])
        assert any("diagonal" in v for v in validate_metric(inst))

    def test_allows_zero_offdiagonal(self):
        # coincident points are legal (stand-ins at radius 0 rely on this)
        table = [[0, 0], [0, 0]]
        inst = make_instance(1, 1, table)
        assert validate_metric(inst) == []

    def test_closure_fixes_triangle(self):
        table = [
            [Fraction(0), Fraction(1), Fraction(5)],
            [Fraction(1), Fraction(0), Fraction(1)],
            [Fraction(5), Fraction(1), Fraction(0)],
        ]
        closed = metric_closure(table)
        assert closed[0][2] == 2
        inst = MetricInstance(n=2, m=1, dist=closed)
        assert validate_metric(inst) == []


class TestSerialization:
    def test_json_round_trip(self):
        inst = generate_random_instance(3, 5, 4)
        again = MetricInstance.from_json(inst.to_json())
        assert again == inst

    def test_canonical_bytes_stable(self):
        a = generate_random_instance(7, 6, 3).to_json()
        b = generate_random_instance(7, 6, 3).to_json()
        assert a == b


class TestGenerators:
    def test_random_instance_valid_and_deterministic(self):
        a = generate_random_instance(11, 8, 5)
        b = generate_random_instance(11, 8, 5)
        assert a == b
        assert a.n == 8 and a.m == 5
        assert validate_metric(a) == []

    def test_random_instances_differ_across_seeds(self):
        assert generate_random_instance(1, 6, 4) != generate_random_instance(2, 6, 4)

    def test_stable_instance_shape(self):
        inst, planted = generate_stable_instance(5, k=3, cluster_size=4, separation=80)
        assert inst.n == 12 and inst.m == 3
        assert len(planted) == 3
        assert validate_metric(inst) == []
        # every client strictly prefers its own group's facility
        for j in inst.clients:
            dists = sorted(inst.d(j, i) for i in planted)
            assert dists[0] < dists[1]

    def test_stable_instance_rejects_small_separation(self):
        with pytest.raises(ValueError):
            generate_stable_instance(5, k=3, cluster_size=4, separation=10)

    def test_stable_extra_facilities_and_jitter(self):
        inst, planted = generate_stable_instance(
            9, k=2, cluster_size=3, separation=64, extra_facilities=2, jitter=True
        )
        assert inst.m == 4
        assert len(planted) == 2
        assert validate_metric(inst) == []

    def test_stable_deterministic(self):
        a = generate_stable_instance(4, k=2, cluster_size=3, separation=64)
        b = generate_stable_instance(4, k=2, cluster_size=3, separation=64)
        assert a[0] == b[0] and a[1] == b[1]


class TestNormalization:
    def test_scaled_range(self):
        inst = line_instance([0, 3, 9], [1, 7])
        eps = Fraction(1, 8)
        M = max(inst.d(j, i) for j in inst.clients for i in inst.facilities)
        norm = normalize_with_guess(inst, eps, M)
        cap = Fraction(-((-(inst.n**3)) // eps))
        for j in norm.clients:
            for i in norm.facilities:
                if norm.d(j, i) != 0:
                    assert 1 <= norm.d(j, i) <= cap
        assert validate_metric(norm) == []

    def test_small_guess_caps_far_pairs(self):
        inst = line_instance([0, 100], [1])
        eps = Fraction(1, 8)
        norm = normalize_with_guess(inst, eps, Fraction(1))
        cap = Fraction(-((-(inst.n**3)) // eps))
        # client 1 sits far outside the guess; its distance hits the cap
        assert norm.d(1, 2) == cap

    def test_zero_guess_degenerate(self):
        inst = line_instance([0, 5], [1])
        with pytest.raises(DegenerateGuessError):
            normalize_with_guess(inst, Fraction(1, 8), 0)

    def test_enumeration_covers_distinct_distances(self):
        inst = line_instance([0, 3], [1, 5])
        pairs = enumerate_normalizations(inst, Fraction(1, 8))
        distances = {inst.d(j, i) for j in inst.clients for i in inst.facilities}
        assert {M for M, _ in pairs} <= distances
        assert len(pairs) >= 1


class TestRefsAndParams:
    def test_regular_and_free(self):
        r = regular(4)
        assert not r.is_free and r.base == 4
        c = free_copy(0, 4)
        assert c.is_free and c.copy == 0
        with pytest.raises(ValueError):
            free_copy(-1, 4)

    def test_param_properties(self):
        p = make_params(Fraction(3), Fraction(1, 8), 4)
        assert p.fhat == 6
        assert p.delta == Fraction(3, 8)
        assert p.eta == default_eta(4)

    def test_epsilon_bounds_strict(self):
        make_params(1, Fraction(1, 7), 4)
        for bad in (Fraction(1, 6), Fraction(0), Fraction(1, 3), Fraction(-1, 8)):
            with pytest.raises(ValueError):
                make_params(1, bad, 4)

    def test_default_eta_schedule(self):
        assert default_eta(4) == Fraction(1, 2**24)
        assert default_eta(30) == Fraction(1, 2**30)
        assert default_eta(500) == Fraction(1, 2**64)

    def test_missing_offset_raises(self):
        p = make_params(1, Fraction(1, 8), 3)
        with pytest.raises(MissingParameterError):
            p.offset(0)

    def test_extended_distance_offsets(self):
        inst = line_instance([0, 4], [1, 6])
        p = make_params(1, Fraction(1, 8), inst.n, u={0: Fraction(2), 1: Fraction(5)})
        a = free_copy(0, 2)
        b = free_copy(1, 3)
        assert extended_distance(inst, p, 0, a) == inst.d(0, 2) + 2
        assert extended_distance(inst, p, a, b) == 2 + inst.d(2, 3) + 5
        assert extended_distance(inst, p, a, a) == 0
        assert extended_distance(inst, p, 2, 3) == inst.d(2, 3)

    def test_distance_to_set_picks_minimum(self):
        inst = line_instance([0], [1, 6])
        p = make_params(1, Fraction(1, 8), inst.n, u={0: Fraction(1, 2)})
        refs = [regular(2), free_copy(0, 1)]
        assert distance_to_set(inst, p, 0, refs) == min(
            inst.d(0, 2), inst.d(0, 1) + Fraction(1, 2)
        )
