"""Concrete measure-preserving Z-actions and finite orbit windows.

Three families are supported:

* ``FiniteSystem``: a permutation of finitely many points given by its
  cycles, with exact rational weights and observable values.
* ``RotationSystem``: ``x -> x + alpha (mod 1)`` with a step-function
  observable plus optional trigonometric terms.
* ``BernoulliSystem``: the shift on i.i.d. coin flips; the observable is the
  coordinate at 0, so a window is just a stretch of the coin sequence.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import Any, Iterable, Sequence, Union

import numpy as np

__all__ = [
    "SpecError",
    "FiniteSystem",
    "RotationSystem",
    "BernoulliSystem",
    "SystemModel",
    "OrbitWindow",
    "IntervalRef",
    "build_system",
    "finite_system",
    "rotation_system",
    "bernoulli_system",
    "orbit_window",
    "to_exact",
    "cf_to_fraction",
    "random_finite_system",
    "MAX_WINDOW",
]

#: Largest window width orbit_window will materialize; ORBIT_TILER_MAX_WINDOW overrides.
MAX_WINDOW = int(os.environ.get("ORBIT_TILER_MAX_WINDOW", 50_000_000))

_ALPHA_DIGITS = 30
# alpha is split as hi/2**31 + lo; n * hi_num stays inside int64 for n < 2**32
_ALPHA_BITS = 31
_MAX_ROTATION_INDEX = 2**32


class SpecError(ValueError):
    """Raised for malformed system specs and out-of-range window requests."""


def to_exact(x: Any) -> Fraction:
    """Exact rational from an int, Fraction, decimal string or float.

    Floats go through their shortest repr, so ``0.45`` becomes ``9/20``.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(x):
            raise SpecError(f"non-finite value {x!r}")
        return Fraction(repr(float(x)))
    if isinstance(x, str):
        try:
            return Fraction(x.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise SpecError(f"not a rational number: {x!r}") from exc
    raise SpecError(f"cannot convert {x!r} to a rational")


def cf_to_fraction(quotients: Sequence[int]) -> Fraction:
    """Value of the continued fraction [0; a1, a2, ...]."""
    if not quotients:
        raise SpecError("continued fraction needs at least one partial quotient")
    if any(int(a) < 1 for a in quotients):
        raise SpecError("partial quotients must be positive integers")
    value = Fraction(0)
    for a in reversed(quotients):
        value = 1 / (int(a) + value)
    return value


def _significant_digits(text: str) -> int:
    mantissa = text.strip().lower().split("e")[0].lstrip("+-")
    digits = mantissa.replace(".", "").lstrip("0")
    return len(digits)


# ------------------------------------------------------------------- models


@dataclass(frozen=True)
class FiniteSystem:
    """Permutation system with exact rational weights and values.

    ``cycles[c]`` lists point ids in orbit order, so ``T`` maps each entry to
    the next one, wrapping around.
    """

    cycles: tuple[tuple[int, ...], ...]
    weights: tuple[Fraction, ...]
    values: tuple[Fraction, ...]
    name: str = "finite"
    kind: str = field(default="finite-exact", init=False)

    def __post_init__(self):
        n = len(self.weights)
        seen = sorted(p for cyc in self.cycles for p in cyc)
        if any(len(cyc) == 0 for cyc in self.cycles) or not self.cycles:
            raise SpecError("cycles must be nonempty")
        if seen != list(range(n)):
            raise SpecError("cycles must partition the point ids 0..n-1")
        if len(self.values) != n:
            raise SpecError("need one observable value per point")
        if any(w <= 0 for w in self.weights):
            raise SpecError("weights must be positive")
        if sum(self.weights) != 1:
            raise SpecError(f"weights sum to {sum(self.weights)}, not 1")
        for cyc in self.cycles:
            for k, p in enumerate(cyc):
                pred = cyc[k - 1]
                # mu(T^-1 {p}) = mu({pred})
                if self.weights[pred] != self.weights[p]:
                    raise SpecError(
                        f"T is not measure-preserving: mu(T^-1{{{p}}}) = {self.weights[pred]} "
                        f"but mu({{{p}}}) = {self.weights[p]}"
                    )

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def successor(self) -> np.ndarray:
        succ = np.empty(self.size, dtype=np.int64)
        for cyc in self.cycles:
            for k, p in enumerate(cyc):
                succ[p] = cyc[(k + 1) % len(cyc)]
        return succ

    def cycle_of(self, point: int) -> tuple[int, ...]:
        for cyc in self.cycles:
            if point in cyc:
                return cyc
        raise SpecError(f"point {point} out of range")

    def advance(self, start: int, k: int) -> int:
        cyc = self.cycle_of(int(start))
        return cyc[(cyc.index(int(start)) + k) % len(cyc)]

    def integral(self) -> Fraction:
        return sum((w * v for w, v in zip(self.weights, self.values)), Fraction(0))

    def preimage_measure(self, points: Iterable[int]) -> Fraction:
        succ = self.successor
        pts = set(int(p) for p in points)
        return sum((self.weights[q] for q in range(self.size) if int(succ[q]) in pts), Fraction(0))

    def measure(self, points: Iterable[int]) -> Fraction:
        return sum((self.weights[int(p)] for p in set(points)), Fraction(0))


@dataclass(frozen=True)
class RotationSystem:
    """Rotation by ``alpha`` on [0, 1).

    The observable is ``sum c * 1[lo, hi)(x)`` over ``steps`` plus
    ``sum amp * cos/sin(2 pi k x)`` over ``trig``.
    """

    alpha: Fraction
    steps: tuple[tuple[float, float, float], ...]
    trig: tuple[tuple[str, int, float], ...] = ()
    name: str = "rotation"
    kind: str = field(default="rotation", init=False)

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise SpecError("alpha must lie in (0, 1)")
        for lo, hi, _ in self.steps:
            if not 0 <= lo <= hi <= 1:
                raise SpecError(f"step [{lo}, {hi}) is not inside [0, 1)")
        for fn, k, _ in self.trig:
            if fn not in ("cos", "sin") or int(k) < 1:
                raise SpecError(f"bad trigonometric term {(fn, k)!r}")

    def advance(self, start, k: int):
        x0, n = _rotation_start(start)
        return (x0, n + k)

    def positions(self, x0: float, first: int, count: int) -> np.ndarray:
        """frac(x0 + j * alpha) for j = first .. first + count - 1."""
        if first < 0 or first + count > _MAX_ROTATION_INDEX:
            raise SpecError("rotation orbit index out of supported range [0, 2**32)")
        scale = 1 << _ALPHA_BITS
        hi_num = math.floor(self.alpha * scale)
        lo = float(self.alpha - Fraction(hi_num, scale))
        j = np.arange(first, first + count, dtype=np.int64)
        coarse = ((j * hi_num) & (scale - 1)).astype(np.float64) / scale
        pos = x0 + coarse + j.astype(np.float64) * lo
        return pos - np.floor(pos)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x, dtype=np.float64)
        for lo, hi, c in self.steps:
            out += c * ((x >= lo) & (x < hi))
        for fn, k, amp in self.trig:
            g = np.cos if fn == "cos" else np.sin
            out += amp * g(2.0 * np.pi * k * x)
        return out

    def integral(self) -> float:
        # trig terms with frequency >= 1 integrate to zero
        return float(sum(Fraction(c) * (Fraction(hi) - Fraction(lo)) for lo, hi, c in self.steps))


@dataclass(frozen=True)
class BernoulliSystem:
    """Shift on {0,1}^Z with i.i.d. coordinates, P(1) = p.

    Coordinate j of the sample point is derived from a Philox stream keyed
    by ``seed``, so any stretch of coordinates can be produced directly.
    """

    p: float
    seed: int = 0
    name: str = "bernoulli"
    kind: str = field(default="bernoulli", init=False)

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise SpecError("p must lie in [0, 1]")
        if int(self.seed) < 0:
            raise SpecError("seed must be non-negative")

    def advance(self, start: int, k: int) -> int:
        return int(start) + k

    def coordinates(self, first: int, count: int) -> np.ndarray:
        if first < 0:
            raise SpecError("bernoulli offset must be non-negative")
        gen = np.random.Philox(int(self.seed))
        gen.advance(first // 4)
        gen.random_raw(first % 4)
        raw = np.asarray(gen.random_raw(count), dtype=np.uint64)
        u = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (u < self.p).astype(np.float64)

    def integral(self) -> float:
        return float(self.p)


SystemModel = Union[FiniteSystem, RotationSystem, BernoulliSystem]


def _rotation_start(start) -> tuple[float, int]:
    if isinstance(start, tuple):
        x0, n = start
        return float(x0), int(n)
    return float(start), 0


# -------------------------------------------------------------- constructors


def finite_system(cycles, values, weights=None, name: str = "finite") -> FiniteSystem:
    cycles = tuple(tuple(int(p) for p in cyc) for cyc in cycles)
    n = sum(len(c) for c in cycles)
    if weights is None or weights == "uniform":
        w = (Fraction(1, n),) * n if n else ()
    else:
        w = tuple(to_exact(x) for x in weights)
    return FiniteSystem(cycles=cycles, weights=w, values=tuple(to_exact(v) for v in values), name=name)


def rotation_system(alpha=None, cf=None, steps=((0.0, 0.5, 1.0),), trig=(), name: str = "rotation") -> RotationSystem:
    if cf is not None:
        a = cf_to_fraction(list(cf))
    elif alpha is None:
        raise SpecError("rotation needs alpha or a continued fraction")
    elif isinstance(alpha, Fraction):
        a = alpha
    else:
        text = str(alpha)
        if _significant_digits(text) < _ALPHA_DIGITS:
            raise SpecError(
                f"alpha {text!r} has fewer than {_ALPHA_DIGITS} significant digits; "
                "give more digits or a continued fraction"
            )
        try:
            a = Fraction(Decimal(text))
        except InvalidOperation as exc:
            raise SpecError(f"alpha {text!r} is not a decimal number") from exc
    steps = tuple((float(lo), float(hi), float(c)) for lo, hi, c in steps)
    trig = tuple((str(fn), int(k), float(amp)) for fn, k, amp in trig)
    return RotationSystem(alpha=a, steps=steps, trig=trig, name=name)


def bernoulli_system(p, seed: int = 0, name: str = "bernoulli") -> BernoulliSystem:
    return BernoulliSystem(p=float(p), seed=int(seed), name=name)


def random_finite_system(
    rng: np.random.Generator, min_size: int = 2, max_size: int = 64, max_denominator: int = 12, name: str = "finite"
) -> FiniteSystem:
    """Uniform-measure permutation system with random cycles and rational values."""
    n = int(rng.integers(min_size, max_size + 1))
    perm = rng.permutation(n)
    cuts = np.sort(rng.choice(np.arange(1, n), size=int(rng.integers(0, min(n - 1, 6) + 1)), replace=False))
    cycles = [tuple(int(p) for p in c) for c in np.split(perm, cuts) if c.size]
    dens = rng.integers(1, max_denominator + 1, size=n)
    nums = rng.integers(-3 * max_denominator, 3 * max_denominator + 1, size=n)
    values = [Fraction(int(a), int(d)) for a, d in zip(nums, dens)]
    return finite_system(cycles, values, name=name)


def build_system(spec: dict) -> SystemModel:
    """Validated model from a plain dict (as produced by the config reader).

    >>> build_system({"kind": "finite", "cycles": [[0, 1, 2, 3]], "values": [1, 0, 0, 0]}).weights[0]
    Fraction(1, 4)
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    name = spec.pop("name", kind or "system")
    if kind in ("finite", "finite-exact"):
        if "cycles" not in spec or "values" not in spec:
            raise SpecError("finite system needs cycles and values")
        return finite_system(spec["cycles"], spec["values"], spec.get("weights"), name=name)
    if kind == "rotation":
        return rotation_system(
            alpha=spec.get("alpha"),
            cf=spec.get("cf"),
            steps=spec.get("steps", ((0.0, 0.5, 1.0),)),
            trig=spec.get("trig", ()),
            name=name,
        )
    if kind == "bernoulli":
        if "p" not in spec:
            raise SpecError("bernoulli system needs p")
        return bernoulli_system(spec["p"], spec.get("seed", 0), name=name)
    raise SpecError(f"unknown system kind {kind!r}")


# ------------------------------------------------------------------- windows


@dataclass(frozen=True)
class IntervalRef:
    """Half-open index range [lo, hi) of a window."""

    lo: int
    hi: int

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi:
            raise ValueError(f"bad interval [{self.lo}, {self.hi})")

    def __len__(self) -> int:
        return self.hi - self.lo

    def __contains__(self, i) -> bool:
        return self.lo <= i < self.hi


@dataclass(frozen=True, eq=False)
class OrbitWindow:
    """``width`` consecutive orbit points; index i stands for T^i(start).

    ``fvals`` is an object array of Fractions for finite systems and a float64
    array otherwise. Indices in [margin, width - margin) are the interior.
    """

    model: Any
    start: Any
    width: int
    margin: int
    points: np.ndarray
    fvals: np.ndarray

    @property
    def exact(self) -> bool:
        return self.fvals.dtype == object

    @property
    def interior(self) -> IntervalRef:
        return IntervalRef(self.margin, self.width - self.margin)

    def negated(self) -> "OrbitWindow":
        """Same orbit with observable -f (used for the lower-threshold side)."""
        f = -self.fvals
        f.flags.writeable = False
        return OrbitWindow(self.model, self.start, self.width, self.margin, self.points, f)

    def to_csv(self) -> str:
        rows = ["index,fval"]
        rows += [f"{i},{_fmt(v)}" for i, v in enumerate(self.fvals)]
        return "\n".join(rows) + "\n"


def _fmt(v) -> str:
    if isinstance(v, Fraction):
        return str(v)
    return repr(float(v))


def orbit_window(model: SystemModel, start=0, width: int = 1, margin: int = 0) -> OrbitWindow:
    """Materialize ``width`` consecutive orbit points starting at ``start``.

    ``start`` is a point id (finite), an angle ``x0`` or pair ``(x0, n)``
    meaning ``T^n x0`` (rotation), or a coordinate offset (bernoulli; the
    seed lives on the model).
    """
    width, margin = int(width), int(margin)
    if width < 1:
        raise SpecError("width must be at least 1")
    if width > MAX_WINDOW:
        raise SpecError(f"width {width} exceeds the window budget {MAX_WINDOW}")
    if not 0 <= 2 * margin <= width:
        raise SpecError("margin must satisfy 0 <= margin <= width / 2")

    if isinstance(model, FiniteSystem):
        s = int(start)
        if not 0 <= s < model.size:
            raise SpecError(f"start id {s} out of range 0..{model.size - 1}")
        cyc = model.cycle_of(s)
        pos = cyc.index(s)
        idx = (pos + np.arange(width)) % len(cyc)
        points = np.asarray(cyc, dtype=np.int64)[idx]
        fvals = np.empty(width, dtype=object)
        fvals[:] = [model.values[p] for p in points]
    elif isinstance(model, RotationSystem):
        x0, n = _rotation_start(start)
        points = model.positions(x0, n, width)
        fvals = model.evaluate(points)
    elif isinstance(model, BernoulliSystem):
        offset = int(start)
        points = np.arange(offset, offset + width, dtype=np.int64)
        fvals = model.coordinates(offset, width)
    else:
        raise SpecError(f"unsupported model {type(model).__name__}")

    points.flags.writeable = False
    fvals.flags.writeable = False
    return OrbitWindow(model, start, width, margin, points, fvals)
