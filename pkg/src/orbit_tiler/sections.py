"""Sparse marker sets with large gaps on orbit windows.

A candidate set is drawn by i.i.d. thinning of the window interior; it is then
sparsified by deleting every candidate that has another candidate within L
steps to its right. Markers of the result are more than L apart.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .systems import IntervalRef, OrbitWindow

__all__ = [
    "NoMarkerToTheLeft",
    "SectionSet",
    "GapStats",
    "generate_candidate_section",
    "sparsify",
    "gap_statistics",
    "left_marker",
    "saturation_mass",
    "shifted_union",
]


class NoMarkerToTheLeft(LookupError):
    """The queried index precedes the first marker of the window."""


def shifted_union(S: np.ndarray, L: int, width: int) -> np.ndarray:
    """Sorted indices of (S - 1) u ... u (S - L), clipped to [0, width)."""
    mask = np.zeros(width, dtype=bool)
    for i in range(1, L + 1):
        shifted = S - i
        mask[shifted[(shifted >= 0) & (shifted < width)]] = True
    return np.flatnonzero(mask)


@dataclass(frozen=True, eq=False)
class SectionSet:
    S: np.ndarray
    L: int
    width: int
    S_tilde: np.ndarray

    @property
    def density(self) -> float:
        return self.S.size / self.width

    @property
    def stilde_mask(self) -> np.ndarray:
        mask = np.zeros(self.width, dtype=bool)
        mask[self.S_tilde] = True
        return mask

    @property
    def working(self) -> IntervalRef:
        """[first marker, last marker): the union of complete marker blocks."""
        if self.S.size < 2:
            return IntervalRef(0, 0)
        return IntervalRef(int(self.S[0]), int(self.S[-1]))

    def to_csv(self) -> str:
        return "index\n" + "".join(f"{int(i)}\n" for i in self.S)


@dataclass(frozen=True, eq=False)
class GapStats:
    gaps: np.ndarray
    max_gap: int
    min_gap: int
    has_gap_bigger_than_L: bool

    def histogram(self) -> list[tuple[int, int]]:
        values, counts = np.unique(self.gaps, return_counts=True)
        return [(int(v), int(c)) for v, c in zip(values, counts)]

    def to_csv(self) -> str:
        return "gap,count\n" + "".join(f"{g},{c}\n" for g, c in self.histogram())


def generate_candidate_section(
    window: OrbitWindow, density: float, seed: int, allow_degenerate: bool = False
) -> np.ndarray:
    """Interior indices, each kept independently with probability ``density``.

    ``density`` must lie in (0, 1); the endpoints are accepted only with
    ``allow_degenerate`` (used by tests and the saturation check).
    """
    density = float(density)
    if not 0.0 < density < 1.0 and not (allow_degenerate and 0.0 <= density <= 1.0):
        raise ValueError("density must lie in (0, 1)")
    inner = window.interior
    rng = np.random.default_rng(seed)
    u = rng.random(len(inner))
    return inner.lo + np.flatnonzero(u < density).astype(np.int64)


def sparsify(S0, L: int, width: int | None = None) -> SectionSet:
    """Remove every candidate with another candidate in (x, x + L].

    With ``width`` given, candidates lacking L steps of right context inside
    the window are dropped as well.

    >>> sparsify([0, 1, 4], 2, width=10).S.tolist()
    [1, 4]
    """
    L = int(L)
    if L < 1:
        raise ValueError("L must be at least 1")
    S0 = np.unique(np.asarray(S0, dtype=np.int64))
    if width is None:
        width = int(S0[-1]) + L + 1 if S0.size else L + 1
    keep = np.ones(S0.size, dtype=bool)
    if S0.size > 1:
        keep[:-1] = np.diff(S0) > L
    keep &= S0 + L < width
    S = S0[keep]
    return SectionSet(S=S, L=L, width=int(width), S_tilde=shifted_union(S, L, int(width)))


def gap_statistics(S: SectionSet) -> GapStats:
    if S.S.size < 2:
        raise ValueError("gap statistics need at least two markers")
    gaps = np.diff(S.S)
    return GapStats(
        gaps=gaps,
        max_gap=int(gaps.max()),
        min_gap=int(gaps.min()),
        has_gap_bigger_than_L=bool(np.any(gaps >= S.L)),
    )


def left_marker(S: SectionSet, x: int) -> int:
    """Closest marker s <= x."""
    k = int(np.searchsorted(S.S, x, side="right")) - 1
    if k < 0:
        raise NoMarkerToTheLeft(f"no marker at or before index {x}")
    return int(S.S[k])


def saturation_mass(sections: Sequence[SectionSet]) -> float:
    """Fraction of sampled windows whose marker set is nonempty."""
    if not sections:
        raise ValueError("need at least one window")
    return sum(1 for s in sections if s.S.size > 0) / len(sections)
