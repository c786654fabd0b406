"""Tile lengths, greedy interval tilings and the partial equivalence they induce.

For a threshold b and horizon L, the tile at index i is ``[i, i + ell[i])``
where ``ell[i]`` is the largest n <= L whose Birkhoff average from i reaches
b (or 1 when none does; those i form the threshold-fail set Z). An interval
is tiled when it splits into such tiles; the split, if any, is found by
walking from the left end.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import _kernels
from .sections import SectionSet
from .systems import IntervalRef, OrbitWindow, to_exact

__all__ = [
    "TilingPlan",
    "Tiling",
    "PartialEquivalence",
    "CoverageReport",
    "BoundReport",
    "build_tiling_plan",
    "greedy_tile",
    "tiling_uniqueness_oracle",
    "build_partial_equivalence",
    "coverage_check",
    "class_average_bound",
    "tiling_to_csv",
    "ORACLE_MAX_LENGTH",
]

ORACLE_MAX_LENGTH = 20


def _threshold(window: OrbitWindow, b):
    return to_exact(b) if window.exact else float(b)


@dataclass(frozen=True, eq=False)
class TilingPlan:
    L: int
    b: object
    ell: np.ndarray
    fail: np.ndarray
    region: IntervalRef

    @property
    def Z(self) -> np.ndarray:
        return np.flatnonzero(self.fail)

    def tile(self, i: int) -> IntervalRef:
        return IntervalRef(i, i + int(self.ell[i]))


@dataclass(frozen=True)
class Tiling:
    interval: IntervalRef
    tiles: tuple[IntervalRef, ...]


def build_tiling_plan(window: OrbitWindow, L: int, b, backend: str | None = None) -> TilingPlan:
    """Tile lengths and threshold-fail set on the window interior."""
    L = int(L)
    if L < 1:
        raise ValueError("L must be at least 1")
    if L > window.margin:
        raise ValueError(f"L = {L} exceeds the window margin {window.margin}")
    region = window.interior
    b = _threshold(window, b)
    ell, fail = _kernels.tile_lengths(window.fvals, b, L, region.lo, region.hi, backend=backend)
    ell.flags.writeable = False
    fail.flags.writeable = False
    return TilingPlan(L=L, b=b, ell=ell, fail=fail, region=region)


def _check_inside(plan: TilingPlan, interval: IntervalRef):
    if len(interval) and not (plan.region.lo <= interval.lo and interval.hi <= plan.region.hi):
        raise ValueError(f"[{interval.lo}, {interval.hi}) is not inside the plan region")


def greedy_tile(plan: TilingPlan, interval: IntervalRef) -> Tiling | None:
    """The tiling of ``interval``, or None when it is not tiled."""
    _check_inside(plan, interval)
    tiles = []
    pos = interval.lo
    while pos < interval.hi:
        nxt = pos + int(plan.ell[pos])
        if nxt > interval.hi:
            return None
        tiles.append(IntervalRef(pos, nxt))
        pos = nxt
    return Tiling(interval, tuple(tiles))


def tiling_uniqueness_oracle(plan: TilingPlan, interval: IntervalRef) -> list[Tiling]:
    """Every partition of ``interval`` into tiles, by exhaustive backtracking.

    Candidates are all tiles inside the interval. At each step the search
    tries every unused candidate that contains the leftmost uncovered point
    and does not overlap what is already covered.
    """
    _check_inside(plan, interval)
    n = len(interval)
    if n > ORACLE_MAX_LENGTH:
        raise ValueError(f"oracle is limited to intervals of length <= {ORACLE_MAX_LENGTH}")
    lo = interval.lo
    ell = plan.ell[lo : interval.hi].tolist()
    # containing[p]: every candidate tile (start, end, bitmask) covering offset p
    containing: list[list] = [[] for _ in range(n)]
    for k, length in enumerate(ell):
        if k + length <= n:
            mask = ((1 << length) - 1) << k
            for p in range(k, k + length):
                containing[p].append((lo + k, lo + k + length, mask))
    full = (1 << n) - 1
    found: list[Tiling] = []

    def search(covered: int, used: list):
        if covered == full:
            tiles = tuple(IntervalRef(i, e) for i, e in sorted(used))
            found.append(Tiling(interval, tiles))
            return
        free = ~covered & full
        p = (free & -free).bit_length() - 1
        for i, e, mask in containing[p]:
            if not mask & covered:
                used.append((i, e))
                search(covered | mask, used)
                used.pop()

    search(0, [])
    return found


def tiling_to_csv(interval: IntervalRef, tiling: Tiling | None) -> str:
    rows = ["interval_lo,interval_hi,status,lo,hi"]
    status = "tiled" if tiling is not None else "not_tiled"
    if tiling is None or not tiling.tiles:
        rows.append(f"{interval.lo},{interval.hi},{status},,")
    else:
        rows += [f"{interval.lo},{interval.hi},{status},{t.lo},{t.hi}" for t in tiling.tiles]
    return "\n".join(rows) + "\n"


# -------------------------------------------------------- partial equivalence


@dataclass(frozen=True, eq=False)
class PartialEquivalence:
    """Classes ``[lo[k], hi[k])`` generated by witnesses ``witness[k]``.

    ``in_z[k]`` flags classes whose witness lies in the threshold-fail set;
    those are kept but carry no lower bound on their average.
    """

    lo: np.ndarray
    hi: np.ndarray
    witness: np.ndarray
    in_z: np.ndarray
    working: IntervalRef
    width: int

    def __len__(self) -> int:
        return int(self.lo.size)

    @property
    def classes(self) -> list[IntervalRef]:
        return [IntervalRef(int(a), int(b)) for a, b in zip(self.lo, self.hi)]

    def domain_mask(self, bounded_only: bool = False) -> np.ndarray:
        """Indicator of dom(F), or of the classes with witness outside Z."""
        sel = ~self.in_z if bounded_only else np.ones(len(self), dtype=bool)
        delta = np.zeros(self.width + 1, dtype=np.int64)
        np.add.at(delta, self.lo[sel], 1)
        np.add.at(delta, self.hi[sel], -1)
        return np.cumsum(delta[:-1]) > 0

    def is_disjoint(self) -> bool:
        order = np.argsort(self.lo, kind="stable")
        lo, hi = self.lo[order], self.hi[order]
        return bool(np.all(hi[:-1] <= lo[1:])) if lo.size > 1 else True

    def to_csv(self) -> str:
        return "lo,hi,witness\n" + "".join(
            f"{int(a)},{int(b)},{int(w)}\n" for a, b, w in zip(self.lo, self.hi, self.witness)
        )


def build_partial_equivalence(
    window: OrbitWindow, plan: TilingPlan, S: SectionSet, backend: str | None = None
) -> PartialEquivalence:
    """Classes I_z for z in the working region with z outside S~ and [s(z), z) tiled.

    The working region runs from the first to the last marker, so every z in
    it has a left marker and every class closes before the next marker.
    """
    if S.width != window.width:
        raise ValueError("section and window widths differ")
    if S.L < plan.L:
        # with a shorter S~ a tile could run past the next marker
        raise ValueError("section gap parameter is smaller than the plan horizon")
    working = S.working
    if len(working) and not (plan.region.lo <= working.lo and working.hi <= plan.region.hi):
        raise ValueError("markers must lie in the plan region")
    lo, hi = _kernels.block_walk(plan.ell, S.S, S.stilde_mask, backend=backend)
    # witnesses are the class left ends, so identical classes cannot repeat
    if lo.size > 1 and np.any(np.diff(lo) <= 0):
        raise AssertionError("block walk produced repeated or unordered witnesses")
    for arr in (lo, hi):
        arr.flags.writeable = False
    in_z = plan.fail[lo] if lo.size else np.zeros(0, dtype=bool)
    return PartialEquivalence(lo=lo, hi=hi, witness=lo, in_z=in_z, working=working, width=window.width)


def _mass(count_or_sum, total, exact: bool):
    if total == 0:
        return Fraction(0) if exact else 0.0
    if exact:
        return Fraction(count_or_sum) / total
    return float(count_or_sum) / total


def _abs_sum(f: np.ndarray, mask: np.ndarray, exact: bool):
    vals = f[mask]
    if exact:
        return sum((abs(v) for v in vals), Fraction(0))
    return float(np.abs(vals).sum())


@dataclass(frozen=True)
class CoverageReport:
    working_size: int
    inclusion_holds: bool
    missing: int
    uncovered: int
    excluded_mass: object
    excluded_f_mass: object
    stilde_mass: object
    z_mass: object
    boundary_mass: object
    bounded_inclusion_holds: bool
    bounded_excluded_mass: object
    bounded_excluded_f_mass: object

    @property
    def excluded_total(self):
        return self.excluded_mass + self.excluded_f_mass


def coverage_check(F: PartialEquivalence, plan: TilingPlan, S: SectionSet, window: OrbitWindow) -> CoverageReport:
    """Check dom(F) contains working \\ (S~ u Z) and measure what is left out.

    Masses are fractions of the working region. The same inclusion is also
    checked for the classes whose witness avoids Z.
    """
    exact = window.exact
    work = np.zeros(window.width, dtype=bool)
    work[F.working.lo : F.working.hi] = True
    n = int(work.sum())
    required = work & ~S.stilde_mask & ~plan.fail
    dom = F.domain_mask()
    bdom = F.domain_mask(bounded_only=True)
    out = work & ~dom
    bout = work & ~bdom
    inner = window.interior
    return CoverageReport(
        working_size=n,
        inclusion_holds=not bool(np.any(required & ~dom)),
        missing=int(np.sum(required & ~dom)),
        uncovered=int(out.sum()),
        excluded_mass=_mass(int(out.sum()), n, exact),
        excluded_f_mass=_mass(_abs_sum(window.fvals, out, exact), n, exact),
        stilde_mass=_mass(int(np.sum(work & S.stilde_mask)), n, exact),
        z_mass=_mass(int(np.sum(work & plan.fail)), n, exact),
        boundary_mass=_mass(len(inner) - n, len(inner), exact),
        bounded_inclusion_holds=not bool(np.any(required & ~bdom)),
        bounded_excluded_mass=_mass(int(bout.sum()), n, exact),
        bounded_excluded_f_mass=_mass(_abs_sum(window.fvals, bout, exact), n, exact),
    )


@dataclass(frozen=True)
class BoundReport:
    min_average: object
    checked: int
    holds: bool | None


def class_average_bound(F: PartialEquivalence, window: OrbitWindow, b, backend: str | None = None) -> BoundReport:
    """Smallest class average over classes whose witness is outside Z.

    ``holds`` is None when no such class exists.
    """
    b = _threshold(window, b)
    sel = ~F.in_z
    if not np.any(sel):
        return BoundReport(min_average=None, checked=0, holds=None)
    averages = _kernels.segment_means(window.fvals, F.lo[sel], F.hi[sel], backend=backend)
    low = min(averages) if window.exact else float(averages.min())
    return BoundReport(min_average=low, checked=int(sel.sum()), holds=bool(low >= b))
