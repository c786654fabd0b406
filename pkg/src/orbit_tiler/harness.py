"""Quantitative end-to-end checks on windows: L selection, inequality chains,
the two-sided probe, Birkhoff convergence and conditional expectations.

Masses are empirical: the mass of a set A is ``|A & working| / |working|``
and the f-mass is the same with |f| summed instead of counted.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import _kernels
from .averages import birkhoff_averages, conditional_expectation
from .sections import SectionSet, generate_candidate_section, sparsify
from .systems import (
    BernoulliSystem,
    FiniteSystem,
    OrbitWindow,
    RotationSystem,
    orbit_window,
    to_exact,
)
from .tiling import (
    build_partial_equivalence,
    build_tiling_plan,
    class_average_bound,
    coverage_check,
)

__all__ = [
    "CapReached",
    "SectionBudgetError",
    "BudgetParams",
    "LChoice",
    "Link",
    "ChainReport",
    "SideResult",
    "ProbeReport",
    "ConvergenceRecord",
    "CondExpReport",
    "default_cap",
    "choose_L",
    "choose_section",
    "verify_chain",
    "recheck_chain_csv",
    "two_sided_contradiction_probe",
    "convergence_experiment",
    "limit_vs_conditional_expectation",
]

DEFAULT_CAP = 2**16
FLOAT_REGROUP_RTOL = 1e-9


def default_cap() -> int:
    return int(os.environ.get("ORBIT_TILER_CAP", DEFAULT_CAP))


class CapReached(RuntimeError):
    """No L up to the cap pushed the threshold-fail mass under epsilon."""

    def __init__(self, cap: int, history):
        self.cap = cap
        self.history = tuple(history)
        last = self.history[-1] if self.history else None
        super().__init__(f"cap L = {cap} reached; last (L, Z mass, Z f-mass) = {last}")


class SectionBudgetError(RuntimeError):
    """Could not find a marker set that is both sparse enough and nonempty."""


def _num(x, exact: bool):
    return to_exact(x) if exact else float(x)


@dataclass(frozen=True)
class BudgetParams:
    """Thresholds and error budget of one run.

    With ``a`` set this is a two-sided run and requires
    ``(b - a) > 2 eps (|a| + |b| + 2)`` (total mass 1). With ``delta`` set,
    ``epsilon`` must equal ``min(delta, 1) / 8``.
    """

    b: float
    epsilon: float
    a: float | None = None
    delta: float | None = None
    L: int | None = None
    cap: int | None = None

    def __post_init__(self):
        eps, b = to_exact(self.epsilon), to_exact(self.b)
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        if self.a is not None:
            a = to_exact(self.a)
            if not a < b:
                raise ValueError("need a < b")
            if not (b - a) > 2 * eps * (abs(a) + abs(b) + 2):
                raise ValueError("budget violated: need (b - a) > 2 eps (|a| + |b| + 2)")
        if self.delta is not None:
            d = to_exact(self.delta)
            if d <= 0:
                raise ValueError("delta must be positive")
            if eps != min(d, 1) / 8:
                raise ValueError("ergodic-style runs need epsilon = min(delta, 1) / 8")

    @classmethod
    def ergodic(cls, delta, **kw) -> "BudgetParams":
        d = to_exact(delta)
        return cls(b=float(d), epsilon=float(min(d, 1) / 8), delta=float(d), **kw)


# ------------------------------------------------------------------ choose_L


@dataclass(frozen=True)
class LChoice:
    L: int
    z_mass: object
    z_f_mass: object
    history: tuple


def _l_schedule(cap: int):
    L = 1
    while L < cap:
        yield L
        L *= 2
    yield cap


def choose_L(window: OrbitWindow, b, epsilon, cap: int | None = None, backend: str | None = None) -> LChoice:
    """Smallest L in 1, 2, 4, ... whose threshold-fail set Z has
    mass + f-mass below ``epsilon`` on the window interior.

    The cap is ``min(cap, margin)``; exhausting it raises CapReached.
    """
    exact = window.exact
    b = _num(b, exact)
    eps = _num(epsilon, exact)
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    cap = min(int(cap if cap is not None else default_cap()), window.margin)
    if cap < 1:
        raise ValueError("window margin leaves no room for L >= 1")
    inner = window.interior
    total = len(inner)
    f = window.fvals
    idx = np.arange(inner.lo, inner.hi, dtype=np.int64)
    sums = np.zeros(idx.size, dtype=object) if exact else np.zeros(idx.size)
    history = []
    done = 0
    for L in _l_schedule(cap):
        hit, sums = _kernels.extend_reach(f, b, idx, sums, done + 1, L, backend=backend)
        idx, sums = idx[~hit], sums[~hit]
        done = L
        if exact:
            zm = Fraction(idx.size, total)
            zf = sum((abs(v) for v in f[idx]), Fraction(0)) / total
        else:
            zm = idx.size / total
            zf = float(np.abs(f[idx]).sum()) / total
        history.append((L, zm, zf))
        if zm + zf < eps:
            return LChoice(L=L, z_mass=zm, z_f_mass=zf, history=tuple(history))
    raise CapReached(cap, history)


# --------------------------------------------------------------- sections


def _stilde_budget(window: OrbitWindow, S: SectionSet):
    work = S.working
    n = len(work)
    mask = S.stilde_mask[work.lo : work.hi]
    fv = window.fvals[work.lo : work.hi][mask]
    if window.exact:
        return Fraction(int(mask.sum()), n), sum((abs(v) for v in fv), Fraction(0)) / n
    return int(mask.sum()) / n, float(np.abs(fv).sum()) / n


def choose_section(
    window: OrbitWindow, L: int, epsilon, seed: int, density: float | None = None, attempts: int = 40
) -> SectionSet:
    """Sparse marker set with S~ mass + S~ f-mass below ``epsilon``.

    Starts from a density that aims at half of the budget, halves it
    when the budget is exceeded and raises it when fewer than two markers
    survive.
    """
    eps = float(epsilon)
    inner = window.interior
    fmax = float(max((abs(v) for v in window.fvals[inner.lo : inner.hi]), default=0))
    d = density if density is not None else eps / (2.0 * L * (1.0 + fmax))
    for attempt in range(attempts):
        S0 = generate_candidate_section(window, min(d, 0.5), [int(seed), attempt])
        S = sparsify(S0, L, window.width)
        if S.S.size < 2:
            d *= 1.5
            continue
        m, fm = _stilde_budget(window, S)
        if m + fm < _num(epsilon, window.exact):
            return S
        d /= 2.0
    raise SectionBudgetError(f"no admissible marker set after {attempts} attempts (window too short?)")


# ------------------------------------------------------------------- chains


@dataclass(frozen=True)
class Link:
    name: str
    lhs: object
    relation: str
    rhs: object
    passed: bool


_QUANTITY_ORDER = (
    "b",
    "epsilon",
    "delta",
    "L",
    "working_size",
    "window_f",
    "Y_f",
    "Y_avg",
    "Y_mass",
    "outside_Y_mass",
    "outside_Y_f_mass",
    "z_mass",
    "z_f_mass",
    "stilde_mass",
    "stilde_f_mass",
    "boundary_mass",
)


def _compare(lhs, rel, rhs, exact: bool) -> bool:
    if rel == ">=":
        return bool(lhs >= rhs)
    if rel == "<":
        return bool(lhs < rhs)
    if rel == "==":
        if exact:
            return lhs == rhs
        return abs(lhs - rhs) <= FLOAT_REGROUP_RTOL * max(1.0, abs(lhs), abs(rhs))
    raise ValueError(rel)


def evaluate_links(q: dict, exact: bool) -> list[Link]:
    """Every link of the chain, evaluated from the raw quantities ``q``."""
    b, eps = q["b"], q["epsilon"]
    slack = 2 * eps * (abs(b) + 1)
    spec = [
        ("coverage budget", q["outside_Y_mass"] + q["outside_Y_f_mass"], "<", 2 * eps),
        ("(i) window f >= Y f - 2eps", q["window_f"], ">=", q["Y_f"] - 2 * eps),
        ("(ii) Y f = Y class average", q["Y_f"], "==", q["Y_avg"]),
        ("(iii) Y class average >= b mass(Y)", q["Y_avg"], ">=", b * q["Y_mass"]),
        ("(iv) b mass(Y) >= b - 2eps(|b|+1)", b * q["Y_mass"], ">=", b - slack),
        ("conclusion window f >= b - 2eps(|b|+1)", q["window_f"], ">=", b - slack),
    ]
    d = q.get("delta")
    if d is not None:
        spec += [
            ("(e1) Y class average - 2eps >= delta(1-2eps) - 2eps", q["Y_avg"] - 2 * eps, ">=", d * (1 - 2 * eps) - 2 * eps),
            ("(e2) delta(1-2eps) - 2eps >= delta/2", d * (1 - 2 * eps) - 2 * eps, ">=", d / 2),
        ]
    return [Link(name, lhs, rel, rhs, _compare(lhs, rel, rhs, exact)) for name, lhs, rel, rhs in spec]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer, Fraction)):
        return str(v)
    return repr(float(v))


@dataclass(frozen=True)
class ChainReport:
    exact: bool
    quantities: dict
    links: tuple[Link, ...]
    coverage_inclusion: bool
    bound_holds: bool | None
    min_class_average: object

    @property
    def passed(self) -> bool:
        return all(link.passed for link in self.links) and self.coverage_inclusion and self.bound_holds is not False

    @property
    def lower_bound(self):
        q = self.quantities
        return q["b"] - 2 * q["epsilon"] * (abs(q["b"]) + 1)

    def to_csv(self) -> str:
        rows = ["kind,name,lhs,relation,rhs,passed"]
        rows.append(f"meta,arithmetic,{'exact' if self.exact else 'float'},,,")
        for k in _QUANTITY_ORDER:
            if k in self.quantities and self.quantities[k] is not None:
                rows.append(f"quantity,{k},{_fmt(self.quantities[k])},,,")
        rows.append(f"check,coverage inclusion,,,,{_fmt(self.coverage_inclusion)}")
        rows.append(f"check,class average bound,{_fmt(self.min_class_average)},>=,{_fmt(self.quantities['b'])},{_fmt(self.bound_holds)}")
        for link in self.links:
            rows.append(f"link,{link.name},{_fmt(link.lhs)},{link.relation},{_fmt(link.rhs)},{_fmt(link.passed)}")
        return "\n".join(rows) + "\n"

    def to_text(self) -> str:
        lines = [f"chain ({'exact' if self.exact else 'float'} arithmetic), L = {self.quantities['L']}"]
        for link in self.links:
            mark = "PASS" if link.passed else "FAIL"
            lines.append(f"  [{mark}] {link.name}: {_fmt(link.lhs)} {link.relation} {_fmt(link.rhs)}")
        lines.append(f"  coverage inclusion: {'holds' if self.coverage_inclusion else 'VIOLATED'}")
        lines.append(f"  min class average (witness outside Z): {_fmt(self.min_class_average)}")
        return "\n".join(lines) + "\n"


def recheck_chain_csv(text: str) -> list[Link]:
    """Re-evaluate the links of a serialized ChainReport from its quantities."""
    q: dict = {}
    exact = False
    for row in text.strip().splitlines()[1:]:
        kind, name, lhs, *_ = row.split(",")
        if kind == "meta" and name == "arithmetic":
            exact = lhs == "exact"
        elif kind == "quantity":
            q[name] = lhs
    conv = (lambda s: Fraction(s)) if exact else float
    parsed = {k: (int(v) if k in ("L", "working_size") else conv(v)) for k, v in q.items()}
    parsed.setdefault("delta", None)
    return evaluate_links(parsed, exact)


def verify_chain(window: OrbitWindow, S: SectionSet, params: BudgetParams, backend: str | None = None) -> ChainReport:
    """Build the plan and relation for ``params.L`` and evaluate the chain.

    Y is the union of classes whose witness lies outside Z; each such class
    has average >= b, which is what the chain uses.
    """
    if params.L is None:
        raise ValueError("params.L must be set (see choose_L)")
    exact = window.exact
    b = _num(params.b, exact)
    eps = _num(params.epsilon, exact)
    plan = build_tiling_plan(window, params.L, b, backend=backend)
    F = build_partial_equivalence(window, plan, S, backend=backend)
    cov = coverage_check(F, plan, S, window)
    bound = class_average_bound(F, window, b, backend=backend)

    work = F.working
    n = len(work)
    if n == 0:
        raise ValueError("empty working region: need at least two markers")
    f = window.fvals
    sel = ~F.in_z
    ymask = F.domain_mask(bounded_only=True)[work.lo : work.hi]
    fw = f[work.lo : work.hi]
    if exact:
        window_f = sum(fw, Fraction(0)) / n
        y_f = sum(fw[ymask], Fraction(0)) / n
        means = _kernels.segment_means(f, F.lo[sel], F.hi[sel]) if sel.any() else []
        y_avg = sum((Fraction(int(h - l)) * m for l, h, m in zip(F.lo[sel], F.hi[sel], means)), Fraction(0)) / n
        y_mass = Fraction(int(ymask.sum()), n)
    else:
        window_f = float(np.sum(fw)) / n
        y_f = float(np.sum(fw[ymask])) / n
        if sel.any():
            means = _kernels.segment_means(f, F.lo[sel], F.hi[sel], backend=backend)
            y_avg = float(np.sum((F.hi[sel] - F.lo[sel]) * means)) / n
        else:
            y_avg = 0.0
        y_mass = int(ymask.sum()) / n
    s_m, s_fm = _stilde_budget(window, S)
    q = {
        "b": b,
        "epsilon": eps,
        "delta": _num(params.delta, exact) if params.delta is not None else None,
        "L": int(params.L),
        "working_size": n,
        "window_f": window_f,
        "Y_f": y_f,
        "Y_avg": y_avg,
        "Y_mass": y_mass,
        "outside_Y_mass": cov.bounded_excluded_mass,
        "outside_Y_f_mass": cov.bounded_excluded_f_mass,
        "z_mass": cov.z_mass,
        "z_f_mass": _z_f_mass(window, plan, work),
        "stilde_mass": s_m,
        "stilde_f_mass": s_fm,
        "boundary_mass": cov.boundary_mass,
    }
    return ChainReport(
        exact=exact,
        quantities=q,
        links=tuple(evaluate_links(q, exact)),
        coverage_inclusion=cov.inclusion_holds and cov.bounded_inclusion_holds,
        bound_holds=bound.holds,
        min_class_average=bound.min_average,
    )


def _z_f_mass(window, plan, work):
    zm = plan.fail[work.lo : work.hi]
    vals = window.fvals[work.lo : work.hi][zm]
    if window.exact:
        return sum((abs(v) for v in vals), Fraction(0)) / len(work)
    return float(np.abs(vals).sum()) / len(work)


# -------------------------------------------------------------------- probe


@dataclass(frozen=True)
class SideResult:
    side: str
    threshold: object
    L: int | None
    history: tuple
    chain: ChainReport | None

    @property
    def succeeded(self) -> bool:
        return self.L is not None


@dataclass(frozen=True)
class ProbeReport:
    a: object
    b: object
    epsilon: object
    upper: SideResult
    lower: SideResult
    boundary_mass: object

    @property
    def dual_success(self) -> bool:
        return self.upper.succeeded and self.lower.succeeded

    @property
    def contradiction(self) -> bool:
        """Both one-sided bounds hold and are incompatible on this window."""
        if not self.dual_success:
            return False
        up, lo = self.upper.chain, self.lower.chain
        return bool(up.passed and lo.passed)

    def to_csv(self) -> str:
        rows = ["side,threshold,outcome,L,chain_passed,bound"]
        for s, sign in ((self.upper, 1), (self.lower, -1)):
            outcome = "succeeded" if s.succeeded else "cap_reached"
            passed = _fmt(s.chain.passed) if s.chain else ""
            bound = _fmt(sign * s.chain.lower_bound) if s.chain else ""
            rows.append(f"{s.side},{_fmt(s.threshold)},{outcome},{_fmt(s.L)},{passed},{bound}")
        return "\n".join(rows) + "\n"

    def to_text(self) -> str:
        lines = [f"two-sided probe a = {_fmt(self.a)}, b = {_fmt(self.b)}, eps = {_fmt(self.epsilon)}"]
        for s in (self.upper, self.lower):
            if s.succeeded:
                lines.append(f"  {s.side}: L = {s.L}, chain {'passed' if s.chain.passed else 'FAILED'}")
            else:
                last = s.history[-1] if s.history else None
                lines.append(f"  {s.side}: CapReached (last L, Z mass, Z f-mass = {last})")
        boundary = "n/a" if self.boundary_mass is None else _fmt(self.boundary_mass)
        lines.append(f"  dual success: {self.dual_success}; boundary mass {boundary}")
        return "\n".join(lines) + "\n"


def _run_side(window, side, threshold, params, seed, backend):
    try:
        choice = choose_L(window, threshold, params.epsilon, cap=params.cap, backend=backend)
    except CapReached as exc:
        return SideResult(side, threshold, None, exc.history, None)
    S = choose_section(window, choice.L, params.epsilon, seed)
    side_params = BudgetParams(b=threshold, epsilon=params.epsilon, L=choice.L, cap=params.cap)
    chain = verify_chain(window, S, side_params, backend=backend)
    return SideResult(side, threshold, choice.L, choice.history, chain)


def two_sided_contradiction_probe(
    window: OrbitWindow, params: BudgetParams, seed: int = 0, backend: str | None = None
) -> ProbeReport:
    """Run the upper chain for b on f and the mirrored chain for a on -f."""
    if params.a is None:
        raise ValueError("two-sided probe needs params.a")
    exact = window.exact
    a, b = _num(params.a, exact), _num(params.b, exact)
    upper = _run_side(window, "upper", b, params, seed, backend)
    lower = _run_side(window.negated(), "lower", -a, params, seed, backend)
    chains = [s.chain for s in (upper, lower) if s.chain is not None]
    boundary = chains[0].quantities["boundary_mass"] if chains else None
    return ProbeReport(a=a, b=b, epsilon=params.epsilon, upper=upper, lower=lower, boundary_mass=boundary)


# -------------------------------------------------------------- convergence


def _reference(model, start):
    if isinstance(model, FiniteSystem):
        return conditional_expectation(model)[int(start)]
    if isinstance(model, (RotationSystem, BernoulliSystem)):
        return model.integral()
    raise TypeError(f"unsupported model {type(model).__name__}")


@dataclass(frozen=True)
class ConvergenceRecord:
    model_id: str
    starts: tuple
    n_grid: tuple[int, ...]
    averages: tuple[tuple, ...]
    references: tuple

    @property
    def deviations(self) -> list[list]:
        return [[abs(a - ref) for a in row] for row, ref in zip(self.averages, self.references)]

    def to_csv(self) -> str:
        rows = ["start,n,average,deviation"]
        for start, row, dev in zip(self.starts, self.averages, self.deviations):
            for n, a, d in zip(self.n_grid, row, dev):
                rows.append(f"{_fmt_start(start)},{n},{_fmt(a)},{_fmt(d)}")
        return "\n".join(rows) + "\n"


def _fmt_start(start) -> str:
    if isinstance(start, tuple):
        return ":".join(_fmt(s) for s in start)
    return _fmt(start)


def convergence_experiment(model, starts: Sequence, n_grid: Sequence[int]) -> ConvergenceRecord:
    """Birkhoff averages A_f[T, n] for each start and n, against the limit."""
    n_grid = tuple(int(n) for n in n_grid)
    if not n_grid or any(n < 1 for n in n_grid) or list(n_grid) != sorted(n_grid):
        raise ValueError("n_grid must be ascending positive integers")
    rows = []
    refs = []
    for start in starts:
        w = orbit_window(model, start, n_grid[-1], 0)
        rows.append(tuple(birkhoff_averages(w, 0, n_grid)))
        refs.append(_reference(model, start))
    return ConvergenceRecord(
        model_id=getattr(model, "name", model.kind),
        starts=tuple(starts),
        n_grid=n_grid,
        averages=tuple(rows),
        references=tuple(refs),
    )


# ------------------------------------------------- conditional expectation


@dataclass(frozen=True)
class CondExpReport:
    rows: tuple  # (point, period, k, average, conditional expectation)
    invariant_sets: tuple  # (cycle indices, integral of f, integral of E(f|inv))
    all_points_match: bool
    all_sets_match: bool

    @property
    def passed(self) -> bool:
        return self.all_points_match and self.all_sets_match

    def to_csv(self) -> str:
        out = ["point,period,k,average,condexp,equal"]
        out += [f"{p},{per},{k},{avg},{ce},{str(avg == ce).lower()}" for p, per, k, avg, ce in self.rows]
        return "\n".join(out) + "\n"


MAX_ENUMERATED_CYCLES = 16


def limit_vs_conditional_expectation(system: FiniteSystem, ks: Sequence[int] = (1, 2, 3)) -> CondExpReport:
    """A_f[T, k * period] against E(f | invariant sets) at every point, and
    the integrals of f and E(f | inv) over every union of cycles."""
    if not isinstance(system, FiniteSystem):
        raise TypeError("conditional expectation checks need a finite-exact system")
    ce = conditional_expectation(system)
    rows = []
    for cyc in system.cycles:
        period = len(cyc)
        for p in cyc:
            w = orbit_window(system, p, period * max(ks), 0)
            avgs = birkhoff_averages(w, 0, [k * period for k in ks])
            rows += [(p, period, k, a, ce[p]) for k, a in zip(ks, avgs)]
    n_cycles = len(system.cycles)
    if n_cycles > MAX_ENUMERATED_CYCLES:
        raise ValueError(f"too many cycles to enumerate invariant sets ({n_cycles})")
    mu, f = system.weights, system.values
    sets = []
    for r in range(n_cycles + 1):
        for combo in itertools.combinations(range(n_cycles), r):
            pts = [p for c in combo for p in system.cycles[c]]
            lhs = sum((mu[p] * f[p] for p in pts), Fraction(0))
            rhs = sum((mu[p] * ce[p] for p in pts), Fraction(0))
            sets.append((combo, lhs, rhs))
    return CondExpReport(
        rows=tuple(rows),
        invariant_sets=tuple(sets),
        all_points_match=all(a == c for *_, a, c in rows),
        all_sets_match=all(l == r for _, l, r in sets),
    )
