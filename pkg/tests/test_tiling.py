from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbit_tiler.averages import birkhoff_average
from orbit_tiler.sections import generate_candidate_section, left_marker, sparsify
from orbit_tiler.systems import IntervalRef, OrbitWindow, finite_system, orbit_window, rotation_system
from orbit_tiler.tiling import (
    build_partial_equivalence,
    build_tiling_plan,
    class_average_bound,
    coverage_check,
    greedy_tile,
    tiling_to_csv,
    tiling_uniqueness_oracle,
)


def raw_window(f, margin, exact=False):
    f = np.asarray(f, dtype=object if exact else np.float64)
    if exact:
        f = np.array([Fraction(v) for v in f], dtype=object)
    return OrbitWindow(None, 0, len(f), margin, np.arange(len(f)), f)


def constant_plan(length, W=40, margin=5):
    """Plan on a window whose interior tile lengths are all ``length``."""
    w = raw_window(np.full(W, 0.5), margin)
    plan = build_tiling_plan(w, length, 0.5)
    return w, plan


# ------------------------------------------------------------ plans


@pytest.mark.parametrize("b", [0.5, Fraction(2, 7)])
def test_constant_at_threshold_gives_full_tiles(b):
    exact = isinstance(b, Fraction)
    w = raw_window([b] * 30, 4, exact=exact)
    plan = build_tiling_plan(w, 4, b)
    assert (plan.ell[4:26] == 4).all() and plan.Z.size == 0


def test_constant_below_threshold_fails_everywhere():
    w = raw_window([-0.5] * 30, 4)
    plan = build_tiling_plan(w, 4, 0.5)
    assert plan.Z.tolist() == list(range(4, 26))
    assert (plan.ell[4:26] == 1).all()


def test_six_cycle_tile_length():
    m = finite_system([[0, 1, 2, 3, 4, 5]], [1, 0, 1, 0, 0, 0])
    w = orbit_window(m, 0, 18, 3)
    plan = build_tiling_plan(w, 3, Fraction(1, 2))
    assert [birkhoff_average(w, 6, n) for n in (1, 2, 3)] == [1, Fraction(1, 2), Fraction(2, 3)]
    assert plan.ell[6] == 3 and not plan.fail[6]


def test_plan_rejects_L_beyond_margin():
    w = raw_window(np.zeros(20), 2)
    with pytest.raises(ValueError):
        build_tiling_plan(w, 3, 0.0)
    with pytest.raises(ValueError):
        build_tiling_plan(w, 0, 0.0)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from([-1.0, -0.5, 0.0, 0.5, 1.0, 2.0]), min_size=12, max_size=40), st.integers(1, 5))
def test_ell_maximality(vals, L):
    margin = L
    if len(vals) < 2 * margin + 1:
        return
    w = raw_window(vals, margin)
    plan = build_tiling_plan(w, L, 0.25)
    for i in range(w.interior.lo, w.interior.hi):
        avgs = [birkhoff_average(w, i, n) for n in range(1, L + 1)]
        if plan.fail[i]:
            assert plan.ell[i] == 1 and all(a < 0.25 for a in avgs)
        else:
            k = int(plan.ell[i])
            assert avgs[k - 1] >= 0.25
            assert all(a < 0.25 for a in avgs[k:])


# ------------------------------------------------------------ tilings


def test_empty_interval_tiled():
    _, plan = constant_plan(3)
    t = greedy_tile(plan, IntervalRef(7, 7))
    assert t is not None and t.tiles == ()
    assert len(tiling_uniqueness_oracle(plan, IntervalRef(7, 7))) == 1


def test_greedy_walk_examples():
    _, plan = constant_plan(3)
    t = greedy_tile(plan, IntervalRef(5, 11))
    assert t.tiles == (IntervalRef(5, 8), IntervalRef(8, 11))
    assert greedy_tile(plan, IntervalRef(5, 12)) is None
    assert tiling_uniqueness_oracle(plan, IntervalRef(5, 12)) == []
    assert tiling_uniqueness_oracle(plan, IntervalRef(5, 11)) == [t]


def test_interval_outside_region_rejected():
    _, plan = constant_plan(3)
    with pytest.raises(ValueError):
        greedy_tile(plan, IntervalRef(0, 6))
    with pytest.raises(ValueError):
        tiling_uniqueness_oracle(plan, IntervalRef(5, 30))


def test_tiling_csv():
    _, plan = constant_plan(3)
    iv = IntervalRef(5, 11)
    assert tiling_to_csv(iv, greedy_tile(plan, iv)) == (
        "interval_lo,interval_hi,status,lo,hi\n5,11,tiled,5,8\n5,11,tiled,8,11\n"
    )
    bad = IntervalRef(5, 12)
    assert tiling_to_csv(bad, None) == "interval_lo,interval_hi,status,lo,hi\n5,12,not_tiled,,\n"


@st.composite
def random_plan(draw):
    L = draw(st.integers(1, 3))
    vals = draw(st.lists(st.sampled_from([-1.0, 0.0, 1.0, 2.0]), min_size=20, max_size=20))
    b = draw(st.sampled_from([-0.25, 0.25, 0.75, 1.25]))
    w = raw_window(vals, 3)
    return build_tiling_plan(w, L, b)


@settings(max_examples=200, deadline=None)
@given(random_plan(), st.integers(3, 17), st.integers(0, 12))
def test_greedy_equals_exhaustive(plan, lo, length):
    hi = min(lo + length, 17)
    iv = IntervalRef(lo, hi)
    found = tiling_uniqueness_oracle(plan, iv)
    g = greedy_tile(plan, iv)
    assert len(found) <= 1
    assert found == ([] if g is None else [g])


@settings(max_examples=200, deadline=None)
@given(random_plan(), st.integers(3, 17), st.integers(0, 14))
def test_prefix_closure(plan, lo, length):
    hi = min(lo + length, 17)
    t = greedy_tile(plan, IntervalRef(lo, hi))
    if t is None:
        return
    for k, tile in enumerate(t.tiles):
        prefix = greedy_tile(plan, IntervalRef(lo, tile.lo))
        assert prefix is not None and prefix.tiles == t.tiles[:k]


# ------------------------------------------------------------ partial equivalence


def brute_force_classes(plan, S):
    """Classes I_z built one z at a time, straight from the definition."""
    work = S.working
    stilde = set(S.S_tilde.tolist())
    out = set()
    for z in range(work.lo, work.hi):
        if z in stilde:
            continue
        s = left_marker(S, z)
        if greedy_tile(plan, IntervalRef(s, z)) is not None:
            out.add((z, z + int(plan.ell[z])))
    return out


@st.composite
def plan_and_section(draw):
    L = draw(st.integers(1, 4))
    W = 120
    vals = draw(st.lists(st.sampled_from([-1.0, 0.0, 0.5, 1.0, 2.0]), min_size=W, max_size=W))
    b = draw(st.sampled_from([0.0, 0.4, 0.9]))
    w = raw_window(vals, 4)
    plan = build_tiling_plan(w, L, b)
    SL = draw(st.integers(L, 6))
    S0 = draw(st.lists(st.integers(4, 115), max_size=25))
    S = sparsify(S0, SL, W)
    return w, plan, S


@settings(max_examples=200, deadline=None)
@given(plan_and_section())
def test_partial_equivalence_matches_definition(data):
    w, plan, S = data
    F = build_partial_equivalence(w, plan, S)
    got = {(c.lo, c.hi) for c in F.classes}
    assert got == brute_force_classes(plan, S)
    assert F.is_disjoint()
    for c in F.classes:
        assert S.working.lo <= c.lo and c.hi <= S.working.hi
    cov = coverage_check(F, plan, S, w)
    assert cov.inclusion_holds and cov.bounded_inclusion_holds
    bound = class_average_bound(F, w, plan.b)
    assert bound.holds in (True, None)


def test_marker_witnesses_are_classes():
    w, plan = constant_plan(2, W=40, margin=4)
    S = sparsify([4, 10, 16, 22], 2, 40)
    F = build_partial_equivalence(w, plan, S)
    starts = set(F.lo.tolist())
    assert {4, 10, 16} <= starts


def test_constant_at_threshold_covers_all_but_stilde():
    w, plan = constant_plan(2, W=40, margin=4)
    S = sparsify([4, 10, 16, 22], 2, 40)
    F = build_partial_equivalence(w, plan, S)
    cov = coverage_check(F, plan, S, w)
    dom = F.domain_mask()
    work = np.zeros(40, dtype=bool)
    work[4:22] = True
    assert np.array_equal(dom, work & ~S.stilde_mask)
    assert cov.inclusion_holds and cov.z_mass == 0
    b = class_average_bound(F, w, 0.5)
    assert b.holds and b.min_average == 0.5


def test_negative_control_unit_tiles():
    w = raw_window([-1.0] * 60, 4)
    plan = build_tiling_plan(w, 3, 0.5)
    S = sparsify([4, 15, 30, 44], 3, 60)
    F = build_partial_equivalence(w, plan, S)
    assert (F.hi - F.lo == 1).all() and F.in_z.all()
    expected = [z for z in range(4, 44) if not S.stilde_mask[z]]
    assert F.lo.tolist() == expected
    cov = coverage_check(F, plan, S, w)
    assert cov.inclusion_holds
    assert np.array_equal(F.domain_mask()[4:44], ~S.stilde_mask[4:44])
    bound = class_average_bound(F, w, 0.5)
    assert bound.holds is None and bound.checked == 0


def test_six_cycle_class_average():
    m = finite_system([[0, 1, 2, 3, 4, 5]], [1, 0, 1, 0, 0, 0])
    w = orbit_window(m, 0, 30, 3)
    plan = build_tiling_plan(w, 3, Fraction(1, 2))
    S = sparsify([6, 12, 18, 24], 3, 30)
    F = build_partial_equivalence(w, plan, S)
    assert (6, 9) in {(c.lo, c.hi) for c in F.classes}
    bound = class_average_bound(F, w, Fraction(1, 2))
    assert bound.holds and bound.min_average >= Fraction(1, 2)


def test_section_shorter_than_plan_rejected():
    w, plan = constant_plan(3)
    with pytest.raises(ValueError):
        build_partial_equivalence(w, plan, sparsify([6, 20], 2, 40))


def test_classes_csv():
    w, plan = constant_plan(2, W=40, margin=4)
    F = build_partial_equivalence(w, plan, sparsify([4, 10], 2, 40))
    assert F.to_csv() == "lo,hi,witness\n4,6,4\n6,8,6\n"


@pytest.mark.parametrize("seed", range(5))
def test_rotation_coverage(seed):
    m = rotation_system(cf=[1] * 64)
    w = orbit_window(m, (0.0, 1000 * seed), 20000, 64)
    plan = build_tiling_plan(w, 16, 0.45)
    S = sparsify(generate_candidate_section(w, 0.01, seed), 16, w.width)
    F = build_partial_equivalence(w, plan, S)
    cov = coverage_check(F, plan, S, w)
    assert cov.inclusion_holds and F.is_disjoint()
    assert class_average_bound(F, w, 0.45).holds
