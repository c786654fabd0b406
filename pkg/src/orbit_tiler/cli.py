"""Batch front end: ``orbit-tiler SUBCOMMAND --config PATH [flags]``.

Exit status is 0 when every check passes, 1 when a check fails and 2 for a
configuration error (in which case nothing is written).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .averages import (
    AVERAGE_CSV_HEADER,
    FiniteEquivalence,
    random_equivalence,
    verify_finite_averages,
)
from .config import SUBCOMMANDS, ConfigError, ExperimentConfig, parse_config
from .harness import (
    BudgetParams,
    CapReached,
    SectionBudgetError,
    choose_L,
    choose_section,
    convergence_experiment,
    limit_vs_conditional_expectation,
    two_sided_contradiction_probe,
    verify_chain,
)
from .sections import gap_statistics, generate_candidate_section, sparsify
from .systems import (
    FiniteSystem,
    IntervalRef,
    SpecError,
    build_system,
    orbit_window,
    random_finite_system,
)
from .tiling import (
    build_partial_equivalence,
    build_tiling_plan,
    class_average_bound,
    coverage_check,
    greedy_tile,
    tiling_to_csv,
    tiling_uniqueness_oracle,
)

log = logging.getLogger("orbit_tiler")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _header(cfg: ExperimentConfig) -> list[str]:
    lines = [f"orbit-tiler {__version__} :: {cfg.command}", f"seed = {cfg.seed}"]
    for section in sorted(cfg.raw):
        for key in sorted(cfg.raw[section]):
            if (section, key) in (("run", "out"), ("run", "jobs")):
                continue
            lines.append(f"  {section}.{key} = {cfg.raw[section][key]}")
    return lines + [""]


def _model(cfg: ExperimentConfig):
    spec = dict(cfg.system)
    if spec["kind"] == "bernoulli":
        spec.setdefault("seed", cfg.seed)
    return build_system(spec)


def _window(cfg: ExperimentConfig):
    return orbit_window(_model(cfg), cfg.start, cfg.width, cfg.margin)


def _pool_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ------------------------------------------------------------------- lemma1


def _lemma1_task(args):
    system, sid, seed, count = args
    rng = np.random.default_rng(seed)
    rows, ok = [], True
    points = range(system.size)
    for r in range(count):
        F = random_equivalence(points, rng, keep=float(rng.uniform(0.3, 1.0)))
        rep = verify_finite_averages(system, F)
        if rep.applicable and not rep.equal:
            ok = False
        rows.append(rep.to_csv_row(sid, f"r{r}"))
    # the identity relation is always included
    rep = verify_finite_averages(system, FiniteEquivalence.identity(points))
    ok &= rep.equal
    rows.append(rep.to_csv_row(sid, "identity"))
    return ok, rows


def run_lemma1(cfg: ExperimentConfig):
    ss = np.random.SeedSequence(cfg.seed)
    if cfg.system is not None:
        systems = [(_model(cfg), cfg.system.get("name", "finite"))]
    else:
        rng = np.random.default_rng(ss.spawn(1)[0])
        systems = [(random_finite_system(rng), f"sys{k}") for k in range(cfg.systems)]
    seeds = ss.generate_state(len(systems) + 1)[1:]
    tasks = [(s, sid, int(seed), cfg.relations) for (s, sid), seed in zip(systems, seeds)]
    results = _pool_map(_lemma1_task, tasks, cfg.jobs)
    ok = all(r[0] for r in results)
    rows = [row for r in results for row in r[1]]
    csv = AVERAGE_CSV_HEADER + "\n" + "\n".join(rows) + "\n"
    n_eq = sum(row.endswith(",true") for row in rows)
    report = _header(cfg) + [
        f"systems: {len(systems)}, relations checked: {len(rows)}",
        f"exact equalities: {n_eq}/{len(rows)}",
        f"result: {'PASS' if ok else 'FAIL'}",
    ]
    return ok, {"lemma1.csv": csv, "report.txt": "\n".join(report) + "\n"}


# ----------------------------------------------------------------- sections


def run_sections(cfg: ExperimentConfig):
    w = _window(cfg)
    L = cfg.section_L
    S0 = generate_candidate_section(w, cfg.density, cfg.seed, allow_degenerate=True)
    S = sparsify(S0, L, w.width)
    checks = {
        "subset of candidates": bool(np.isin(S.S, S0).all()),
        "disjoint from every shift 1..L": all(
            not np.intersect1d(S.S, S.S - i).size for i in range(1, L + 1)
        ),
        "disjoint from S~": not np.intersect1d(S.S, S.S_tilde).size,
    }
    artifacts = {"sections.csv": S.to_csv()}
    lines = _header(cfg) + [f"candidates: {S0.size}, markers: {S.S.size}, density: {_fmt(S.density)}"]
    if S.S.size >= 2:
        g = gap_statistics(S)
        checks["min gap >= L + 1"] = g.min_gap >= L + 1
        artifacts["gaps.csv"] = g.to_csv()
        lines.append(f"gaps: min {g.min_gap}, max {g.max_gap}, mean {_fmt(float(g.gaps.mean()))}")
    else:
        artifacts["gaps.csv"] = "gap,count\n"
        lines.append("fewer than two markers: no gaps")
    lines += [f"[{'PASS' if v else 'FAIL'}] {k}" for k, v in checks.items()]
    ok = all(checks.values())
    artifacts["report.txt"] = "\n".join(lines) + "\n"
    return ok, artifacts


# --------------------------------------------------------------------- tile


def _resolve_L(cfg, w, b) -> int:
    if cfg.L is not None:
        return cfg.L
    return choose_L(w, b, cfg.epsilon, cap=cfg.cap).L


def run_tile(cfg: ExperimentConfig):
    w = _window(cfg)
    lines = _header(cfg)
    try:
        L = _resolve_L(cfg, w, cfg.b)
    except CapReached as exc:
        lines.append(f"CapReached: {exc}")
        return True, {"report.txt": "\n".join(lines) + "\n"}
    plan = build_tiling_plan(w, L, cfg.b)
    S = (
        choose_section(w, L, cfg.epsilon, cfg.seed)
        if cfg.density is None
        else sparsify(generate_candidate_section(w, cfg.density, cfg.seed), L, w.width)
    )
    F = build_partial_equivalence(w, plan, S)
    cov = coverage_check(F, plan, S, w)
    bound = class_average_bound(F, w, cfg.b)

    rng = np.random.default_rng([cfg.seed, 1])
    work = F.working
    spot_rows = ["interval_lo,interval_hi,status,lo,hi"]
    agree = True
    for _ in range(cfg.intervals if len(work) else 0):
        lo = int(rng.integers(work.lo, work.hi))
        hi = min(work.hi, lo + int(rng.integers(0, 13)))
        iv = IntervalRef(lo, hi)
        g = greedy_tile(plan, iv)
        all_t = tiling_uniqueness_oracle(plan, iv)
        agree &= (g is None and not all_t) or (g is not None and all_t == [g])
        spot_rows += tiling_to_csv(iv, g).splitlines()[1:]

    checks = {
        "classes pairwise disjoint": F.is_disjoint(),
        "dom(F) contains working minus (S~ u Z)": cov.inclusion_holds,
        "class averages >= b (witness outside Z)": bound.holds is not False,
        "greedy tiling equals exhaustive enumeration": agree,
    }
    lines += [
        f"L = {L}, markers = {S.S.size}, working = [{work.lo}, {work.hi}), classes = {len(F)}",
        f"Z mass {_fmt(cov.z_mass)}, S~ mass {_fmt(cov.stilde_mass)}, uncovered mass {_fmt(cov.excluded_mass)}",
        f"min class average {_fmt(bound.min_average)} over {bound.checked} classes",
    ]
    lines += [f"[{'PASS' if v else 'FAIL'}] {k}" for k, v in checks.items()]
    cov_csv = "quantity,value\n" + "".join(
        f"{k},{_fmt(getattr(cov, k))}\n"
        for k in ("working_size", "missing", "uncovered", "excluded_mass", "excluded_f_mass", "stilde_mass", "z_mass", "boundary_mass")
    )
    return all(checks.values()), {
        "classes.csv": F.to_csv(),
        "tilings.csv": "\n".join(spot_rows) + "\n",
        "coverage.csv": cov_csv,
        "report.txt": "\n".join(lines) + "\n",
    }


# -------------------------------------------------------------------- chain


def run_chain(cfg: ExperimentConfig):
    w = _window(cfg)
    lines = _header(cfg)
    if cfg.a is not None:
        params = BudgetParams(b=cfg.b, a=cfg.a, epsilon=cfg.epsilon, cap=cfg.cap)
        probe = two_sided_contradiction_probe(w, params, seed=cfg.seed)
        artifacts = {"probe.csv": probe.to_csv()}
        for s in (probe.upper, probe.lower):
            if s.chain is not None:
                artifacts[f"chain_{s.side}.csv"] = s.chain.to_csv()
                lines.append(s.chain.to_text())
        lines.append(probe.to_text())
        chains_ok = all(s.chain.passed for s in (probe.upper, probe.lower) if s.chain is not None)
        ok = chains_ok and not probe.dual_success
        lines.append(f"result: {'PASS' if ok else 'FAIL'}")
        artifacts["report.txt"] = "\n".join(lines) + "\n"
        return ok, artifacts

    if cfg.delta is not None:
        params = BudgetParams.ergodic(cfg.delta, cap=cfg.cap)
    else:
        params = BudgetParams(b=cfg.b, epsilon=cfg.epsilon, cap=cfg.cap)
    try:
        L = cfg.L if cfg.L is not None else choose_L(w, params.b, params.epsilon, cap=cfg.cap).L
    except CapReached as exc:
        lines.append(f"CapReached (expected when b exceeds the limit): {exc}")
        return True, {"report.txt": "\n".join(lines) + "\n"}
    S = (
        choose_section(w, L, params.epsilon, cfg.seed)
        if cfg.density is None
        else sparsify(generate_candidate_section(w, cfg.density, cfg.seed), L, w.width)
    )
    params = BudgetParams(b=params.b, epsilon=params.epsilon, delta=params.delta, L=L, cap=cfg.cap)
    rep = verify_chain(w, S, params)
    lines.append(rep.to_text())
    lines.append(f"result: {'PASS' if rep.passed else 'FAIL'}")
    return rep.passed, {"chain.csv": rep.to_csv(), "report.txt": "\n".join(lines) + "\n"}


# ----------------------------------------------------------------- converge


def _converge_task(args):
    model, starts, grid = args
    return convergence_experiment(model, starts, grid)


def run_converge(cfg: ExperimentConfig):
    model = _model(cfg)
    grid = cfg.n_grid
    rng = np.random.default_rng(cfg.seed)
    if model.kind == "bernoulli" and cfg.seeds > 0:
        seeds = np.random.SeedSequence(cfg.seed).generate_state(cfg.seeds)
        tasks = [(build_system({**cfg.system, "seed": int(s)}), [0], grid) for s in seeds]
        labels = [f"{int(s)}:0" for s in seeds]
    else:
        if isinstance(cfg.starts, int):
            if model.kind == "rotation":
                starts = [(float(x), 0) for x in rng.random(cfg.starts)]
            elif model.kind == "finite-exact":
                starts = list(range(min(cfg.starts, model.size)))
            else:
                starts = [k * grid[-1] for k in range(cfg.starts)]
        else:
            starts = list(cfg.starts)
        chunk = max(1, -(-len(starts) // cfg.jobs))
        tasks = [(model, starts[i : i + chunk], grid) for i in range(0, len(starts), chunk)]
        labels = None
    records = _pool_map(_converge_task, tasks, cfg.jobs)

    rows = ["start,n,average,deviation"]
    final_dev = []
    k = 0
    for rec in records:
        for start, avgs, devs in zip(rec.starts, rec.averages, rec.deviations):
            label = labels[k] if labels else (":".join(_fmt(s) for s in start) if isinstance(start, tuple) else str(start))
            k += 1
            for n, a, d in zip(rec.n_grid, avgs, devs):
                rows.append(f"{label},{n},{_fmt(a)},{_fmt(d)}")
            final_dev.append(devs[-1])

    checks = {"deviations non-negative": all(d >= 0 for r in records for row in r.deviations for d in row)}
    if isinstance(model, FiniteSystem):
        checks["zero deviation at full periods"] = all(
            d == 0
            for r in records
            for start, row in zip(r.starts, r.deviations)
            for n, d in zip(r.n_grid, row)
            if n % len(model.cycle_of(start)) == 0
        )
    lines = _header(cfg) + [f"runs: {len(final_dev)}, max n = {grid[-1]}"]
    lines.append(f"max deviation at max n: {_fmt(max(final_dev))}")
    if cfg.tolerance is not None:
        frac = sum(d <= cfg.tolerance for d in final_dev) / len(final_dev)
        checks[f"fraction within {cfg.tolerance} >= {cfg.quantile}"] = frac >= cfg.quantile
        lines.append(f"fraction within tolerance: {_fmt(frac)}")
    lines += [f"[{'PASS' if v else 'FAIL'}] {k}" for k, v in checks.items()]
    return all(checks.values()), {"converge.csv": "\n".join(rows) + "\n", "report.txt": "\n".join(lines) + "\n"}


# ------------------------------------------------------------------ condexp


def run_condexp(cfg: ExperimentConfig):
    rep = limit_vs_conditional_expectation(_model(cfg))
    sets = ["cycles,integral_f,integral_condexp,equal"] + [
        f"{' '.join(map(str, c)) or '-'},{l},{r},{str(l == r).lower()}" for c, l, r in rep.invariant_sets
    ]
    lines = _header(cfg) + [
        f"[{'PASS' if rep.all_points_match else 'FAIL'}] A_f[T, k * period] equals E(f | inv) at every point",
        f"[{'PASS' if rep.all_sets_match else 'FAIL'}] integrals agree on all {len(rep.invariant_sets)} invariant sets",
    ]
    return rep.passed, {
        "condexp.csv": rep.to_csv(),
        "invariant_sets.csv": "\n".join(sets) + "\n",
        "report.txt": "\n".join(lines) + "\n",
    }


RUNNERS = {
    "lemma1": run_lemma1,
    "sections": run_sections,
    "tile": run_tile,
    "chain": run_chain,
    "converge": run_converge,
    "condexp": run_condexp,
}


def write_artifacts(out: Path, artifacts: dict[str, str]) -> None:
    """Write every file under a temporary name, then rename them all."""
    out.mkdir(parents=True, exist_ok=True)
    tmp = []
    try:
        for name, text in artifacts.items():
            p = out / f".{name}.tmp"
            with open(p, "w", newline="\n") as fh:
                fh.write(text)
            tmp.append((p, out / name))
    except BaseException:
        for p, _ in tmp:
            p.unlink(missing_ok=True)
        raise
    for p, final in tmp:
        os.replace(p, final)


def run(cfg: ExperimentConfig) -> tuple[int, dict[str, str]]:
    ok, artifacts = RUNNERS[cfg.command](cfg)
    return (EXIT_OK if ok else EXIT_FAIL), artifacts


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orbit-tiler", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, help="key = value experiment file")
    p.add_argument("--seed", type=int, help="top-level seed (overrides run.seed)")
    p.add_argument("--out", type=Path, help="output directory (overrides run.out)")
    p.add_argument("--jobs", type=int, help="worker processes (overrides run.jobs)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config key")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects SECTION.KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_CONFIG
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for flag, key in ((args.seed, "run.seed"), (args.out, "run.out"), (args.jobs, "run.jobs")):
        if flag is not None:
            overrides[key] = str(flag)
    text = ""
    path = "<no config>"
    if args.config is not None:
        path = str(args.config)
        try:
            text = args.config.read_text()
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        cfg = parse_config(text, args.command, overrides, path=path)
        code, artifacts = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpecError, SectionBudgetError) as exc:
        print(f"config error: {path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_artifacts(Path(cfg.out), artifacts)
    log.info("wrote %d artifacts to %s", len(artifacts), cfg.out)
    print(artifacts["report.txt"], end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
