"""Set averages, Birkhoff averages, class averages and their exact identities."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .systems import FiniteSystem, OrbitWindow

__all__ = [
    "FiniteEquivalence",
    "AverageReport",
    "mean_over_set",
    "birkhoff_average",
    "birkhoff_averages",
    "class_average_map",
    "verify_finite_averages",
    "conditional_expectation",
    "transversal",
    "induced_automorphism",
    "random_equivalence",
]


def _lookup(fvals, y):
    if isinstance(fvals, Mapping):
        return fvals[y]
    return fvals[int(y)]


def _mean(values: Sequence) -> Fraction | float:
    if not values:
        raise ValueError("mean of an empty set")
    if all(isinstance(v, (Fraction, int)) for v in values):
        return Fraction(sum(values, Fraction(0)), len(values))
    s = 0.0
    for v in values:
        s += float(v)
    return s / len(values)


def mean_over_set(fvals, U: Iterable[int]) -> Fraction | float:
    """Unweighted mean of ``fvals`` over the finite nonempty set ``U``.

    >>> mean_over_set([1, 0, 0, 0], {0, 1, 2, 3})
    Fraction(1, 4)
    """
    pts = sorted(set(U))
    if not pts:
        raise ValueError("U must be nonempty")
    return _mean([_lookup(fvals, y) for y in pts])


def birkhoff_average(window: OrbitWindow, i: int, n: int) -> Fraction | float:
    """Mean of f over T^i x0, ..., T^(i+n-1) x0.

    Float sums run left to right so they match the tile-length kernels
    bit for bit.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if i < 0 or i + n > window.width:
        raise ValueError(f"[{i}, {i + n}) exceeds the window of width {window.width}")
    seg = window.fvals[i : i + n]
    if window.exact:
        return Fraction(sum(seg, Fraction(0)), n)
    return float(np.cumsum(seg)[-1] / n)


def birkhoff_averages(window: OrbitWindow, i: int, ns: Sequence[int]) -> list:
    """Birkhoff averages at T^i x0 for every n in ``ns`` from one running sum."""
    ns = list(ns)
    if not ns:
        return []
    top = max(ns)
    if min(ns) < 1 or i < 0 or i + top > window.width:
        raise ValueError("requested averages exceed the window")
    seg = window.fvals[i : i + top]
    if window.exact:
        acc, total = [], Fraction(0)
        for v in seg:
            total += v
            acc.append(total)
        return [Fraction(acc[n - 1], n) for n in ns]
    csum = np.cumsum(seg)
    return [float(csum[n - 1] / n) for n in ns]


# ----------------------------------------------------------- equivalences


@dataclass(frozen=True)
class FiniteEquivalence:
    """Partial equivalence relation given by its (finite) classes."""

    classes: tuple[tuple[int, ...], ...]
    domain: frozenset = field(init=False)

    def __post_init__(self):
        seen: set[int] = set()
        norm = []
        for cls in self.classes:
            cls = tuple(sorted(int(p) for p in cls))
            if not cls:
                raise ValueError("classes must be nonempty")
            if len(set(cls)) != len(cls) or seen.intersection(cls):
                raise ValueError("classes must be pairwise disjoint")
            seen.update(cls)
            norm.append(cls)
        object.__setattr__(self, "classes", tuple(norm))
        object.__setattr__(self, "domain", frozenset(seen))

    @classmethod
    def identity(cls, points: Iterable[int]) -> "FiniteEquivalence":
        return cls(tuple((p,) for p in points))

    def class_of(self) -> dict[int, tuple[int, ...]]:
        return {p: c for c in self.classes for p in c}


def class_average_map(fvals, F: FiniteEquivalence) -> dict:
    """Map each point of dom(F) to the mean of ``fvals`` over its class."""
    out = {}
    for cls in F.classes:
        m = mean_over_set(fvals, cls)
        for p in cls:
            out[p] = m
    return out


def transversal(F: FiniteEquivalence) -> tuple[int, ...]:
    """One point per class: its smallest id."""
    return tuple(cls[0] for cls in F.classes)


def induced_automorphism(F: FiniteEquivalence) -> dict[int, int]:
    """Bijection of dom(F) cycling each class in increasing id order."""
    return {p: cls[(k + 1) % len(cls)] for cls in F.classes for k, p in enumerate(cls)}


@dataclass(frozen=True)
class AverageReport:
    lhs: Fraction
    rhs: Fraction
    equal: bool
    # weights constant on every class, i.e. F is measure-preserving
    applicable: bool
    by_size: dict = field(default_factory=dict)
    transversal_sum: Fraction | None = None

    def to_csv_row(self, system_id: str, relation_id: str) -> str:
        return f"{system_id},{relation_id},{self.lhs},{self.rhs},{str(self.equal).lower()}"


AVERAGE_CSV_HEADER = "system_id,relation_id,lhs,rhs,equal"


def verify_finite_averages(system: FiniteSystem, F: FiniteEquivalence) -> AverageReport:
    """Compare sum mu(x) f(x) with sum mu(x) A_f[F](x) over dom(F), exactly.

    The comparison is also done separately on each part of dom(F) where the
    classes have a common size, and the left side is recomputed along the
    orbits of the induced automorphism started from the transversal.
    """
    if not F.domain <= set(range(system.size)):
        raise ValueError("relation domain is not inside the system")
    mu, f = system.weights, system.values
    avg = class_average_map(f, F)

    by_size: dict[int, list[Fraction]] = defaultdict(lambda: [Fraction(0), Fraction(0)])
    for cls in F.classes:
        part = by_size[len(cls)]
        for p in cls:
            part[0] += mu[p] * f[p]
            part[1] += mu[p] * avg[p]
    lhs = sum((v[0] for v in by_size.values()), Fraction(0))
    rhs = sum((v[1] for v in by_size.values()), Fraction(0))

    step = induced_automorphism(F)
    sizes = {p: len(c) for c in F.classes for p in c}
    trans = Fraction(0)
    for x in transversal(F):
        y = x
        for _ in range(sizes[x]):
            trans += mu[y] * f[y]
            y = step[y]

    applicable = all(len({mu[p] for p in cls}) == 1 for cls in F.classes)
    return AverageReport(
        lhs=lhs,
        rhs=rhs,
        equal=lhs == rhs,
        applicable=applicable,
        by_size={n: (v[0], v[1]) for n, v in sorted(by_size.items())},
        transversal_sum=trans,
    )


def conditional_expectation(system: FiniteSystem) -> tuple[Fraction, ...]:
    """E(f | invariant sets): the mu-weighted mean of f over each point's cycle."""
    out = [Fraction(0)] * system.size
    for cyc in system.cycles:
        mass = sum((system.weights[p] for p in cyc), Fraction(0))
        val = sum((system.weights[p] * system.values[p] for p in cyc), Fraction(0)) / mass
        for p in cyc:
            out[p] = val
    return tuple(out)


def random_equivalence(points: Sequence[int], rng: np.random.Generator, keep: float = 1.0) -> FiniteEquivalence:
    """Random partition of a random subset of ``points`` (each kept w.p. ``keep``)."""
    pts = [int(p) for p in points if rng.random() < keep]
    if not pts:
        return FiniteEquivalence(())
    n_classes = int(rng.integers(1, len(pts) + 1))
    labels = rng.integers(0, n_classes, size=len(pts))
    groups: dict[int, list[int]] = defaultdict(list)
    for p, lab in zip(pts, labels):
        groups[int(lab)].append(p)
    return FiniteEquivalence(tuple(tuple(g) for _, g in sorted(groups.items())))
