from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbit_tiler.averages import (
    AVERAGE_CSV_HEADER,
    FiniteEquivalence,
    birkhoff_average,
    birkhoff_averages,
    class_average_map,
    conditional_expectation,
    induced_automorphism,
    mean_over_set,
    random_equivalence,
    transversal,
    verify_finite_averages,
)
from orbit_tiler.systems import finite_system, orbit_window, random_finite_system, rotation_system

F4 = (1, 0, 0, 0)


def four_cycle():
    return finite_system([[0, 1, 2, 3]], F4)


def test_mean_over_set_examples():
    assert mean_over_set([5, 7], {1}) == 7
    assert mean_over_set([Fraction(2, 3)] * 7, range(7)) == Fraction(2, 3)
    assert mean_over_set(F4, {0, 1, 2, 3}) == Fraction(1, 4)
    with pytest.raises(ValueError):
        mean_over_set(F4, set())


def test_birkhoff_average_examples():
    six = finite_system([[0, 1, 2, 3, 4, 5]], [1, 0, 1, 0, 0, 0])
    w = orbit_window(six, 0, 12)
    assert birkhoff_average(w, 4, 1) == w.fvals[4]
    assert birkhoff_average(w, 0, 3) == Fraction(2, 3)
    with pytest.raises(ValueError):
        birkhoff_average(w, 10, 3)
    with pytest.raises(ValueError):
        birkhoff_average(w, 0, 0)


def test_golden_birkhoff_average_direct_sum():
    m = rotation_system(cf=[1] * 64)
    w = orbit_window(m, 0.0, 10**5)
    direct = float(np.sum(((np.arange(10**5) * float(m.alpha)) % 1.0) < 0.5)) / 10**5
    got = birkhoff_average(w, 0, 10**5)
    assert abs(got - 0.5) <= 1e-3
    assert abs(got - direct) <= 1e-4


def test_class_average_map_examples():
    assert class_average_map(F4, FiniteEquivalence.identity(range(4))) == dict(enumerate(F4))
    assert set(class_average_map(F4, FiniteEquivalence(((0, 1, 2, 3),))).values()) == {Fraction(1, 4)}
    got = class_average_map(F4, FiniteEquivalence(((0, 2), (1, 3))))
    assert [got[p] for p in range(4)] == [Fraction(1, 2), 0, Fraction(1, 2), 0]


def test_verify_identity_relation():
    r = verify_finite_averages(four_cycle(), FiniteEquivalence.identity(range(4)))
    assert r.equal and r.lhs == r.rhs == Fraction(1, 4)


def test_verify_two_class_relation():
    r = verify_finite_averages(four_cycle(), FiniteEquivalence(((0, 2), (1, 3))))
    assert r.lhs == Fraction(1, 4) and r.rhs == Fraction(1, 4) and r.equal
    assert r.to_csv_row("c4", "r1") == "c4,r1,1/4,1/4,true"
    assert AVERAGE_CSV_HEADER.count(",") == 4


@pytest.mark.parametrize("seed", range(100))
def test_six_cycle_tilings_random_f(seed):
    rng = np.random.default_rng(seed)
    vals = [Fraction(int(rng.integers(-20, 21)), int(rng.integers(1, 9))) for _ in range(6)]
    m = finite_system([[0, 1, 2, 3, 4, 5]], vals)
    # tile lengths summing to 6, rotated to a random offset
    lengths = [(3, 3), (2, 2, 2), (1, 2, 3), (6,), (1, 1, 4)][seed % 5]
    off = int(rng.integers(0, 6))
    classes, pos = [], off
    for n in lengths:
        classes.append(tuple((pos + k) % 6 for k in range(n)))
        pos += n
    assert verify_finite_averages(m, FiniteEquivalence(tuple(classes))).equal


def test_nonuniform_weights_flag_applicability():
    m = finite_system([[0, 1], [2]], [1, 0, 5], weights=["1/4", "1/4", "1/2"])
    r = verify_finite_averages(m, FiniteEquivalence(((0, 2),)))
    assert not r.applicable
    r2 = verify_finite_averages(m, FiniteEquivalence(((0, 1), (2,))))
    assert r2.applicable and r2.equal


def test_domain_outside_system_rejected():
    with pytest.raises(ValueError):
        verify_finite_averages(four_cycle(), FiniteEquivalence(((0, 9),)))


def test_overlapping_classes_rejected():
    with pytest.raises(ValueError):
        FiniteEquivalence(((0, 1), (1, 2)))


def test_transversal_and_automorphism():
    F = FiniteEquivalence(((3, 1), (0,), (5, 2, 4)))
    assert transversal(F) == (1, 0, 2)
    T = induced_automorphism(F)
    assert T == {1: 3, 3: 1, 0: 0, 2: 4, 4: 5, 5: 2}


def test_conditional_expectation_examples():
    assert conditional_expectation(four_cycle()) == (Fraction(1, 4),) * 4
    two = finite_system([[0, 1, 2], [3, 4, 5, 6, 7]], [1, 1, 1, 0, 0, 0, 0, 0])
    assert conditional_expectation(two) == (1, 1, 1, 0, 0, 0, 0, 0)
    inv = finite_system([[0, 1], [2, 3, 4]], [Fraction(1, 3), Fraction(1, 3), 7, 7, 7])
    assert conditional_expectation(inv) == inv.values


# ------------------------------------------------------------ properties

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=80, deadline=None)
@given(seeds, st.floats(0.1, 1.0))
def test_finite_averaging_identity_random(seed, keep):
    rng = np.random.default_rng(seed)
    m = random_finite_system(rng, max_size=40)
    F = random_equivalence(range(m.size), rng, keep)
    r = verify_finite_averages(m, F)
    assert r.equal and r.lhs == r.transversal_sum
    assert all(a == b for a, b in r.by_size.values())


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_class_average_map_idempotent_and_constant(seed):
    rng = np.random.default_rng(seed)
    m = random_finite_system(rng, max_size=30)
    F = random_equivalence(range(m.size), rng, 0.8)
    once = class_average_map(m.values, F)
    twice = class_average_map(once, F)
    assert once == twice
    for cls in F.classes:
        assert len({once[p] for p in cls}) == 1
    if F.domain:
        dom = sorted(F.domain)
        assert sum(once[p] for p in dom) == sum(m.values[p] for p in dom)


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(2, 40), st.data())
def test_birkhoff_telescoping_exact(seed, n, data):
    rng = np.random.default_rng(seed)
    m = random_finite_system(rng, max_size=12)
    w = orbit_window(m, 0, n)
    k = data.draw(st.integers(1, n - 1))
    lhs = n * birkhoff_average(w, 0, n) - k * birkhoff_average(w, 0, k)
    assert lhs == (n - k) * birkhoff_average(w, k, n - k)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 0.99), st.integers(2, 500), st.data())
def test_birkhoff_telescoping_float(x0, n, data):
    m = rotation_system(cf=[1, 2] * 32, steps=[(0.0, 0.3, 1.5), (0.6, 0.9, -0.25)], trig=[("cos", 2, 0.5)])
    w = orbit_window(m, x0, n)
    k = data.draw(st.integers(1, n - 1))
    lhs = n * birkhoff_average(w, 0, n) - k * birkhoff_average(w, 0, k)
    assert abs(lhs - (n - k) * birkhoff_average(w, k, n - k)) <= 1e-12


def test_birkhoff_averages_match_single_calls():
    w = orbit_window(rotation_system(cf=[1] * 64), 0.2, 1000)
    ns = [1, 7, 100, 1000]
    assert birkhoff_averages(w, 0, ns) == [birkhoff_average(w, 0, n) for n in ns]
