"""Experiment configuration: an INI-style ``key = value`` file, one section
per concern.

Grammar (``;`` and ``#`` start comments)::

    [system]
    kind    = finite | rotation | bernoulli
    name    = free text (used as the system id in artifacts)
    # finite
    cycles  = 0 1 2 3 | 4 5 6        ; '|' separates cycles, orbit order
    values  = 1 0 0 0 1/2 1/2 1/2    ; one rational per point id
    weights = uniform | w0 w1 ...
    # rotation
    alpha   = 0.6180339887498948482045868343656381   ; >= 30 significant digits
    cf      = 1*64                   ; partial quotients of [0; a1, a2, ...]
    steps   = 0:1/2:1, 1/2:3/4:-2    ; lo:hi:coefficient, comma separated
    trig    = cos:1:0.25             ; cos|sin:frequency:amplitude
    # bernoulli
    p       = 0.3
    seed    = 7                      ; defaults to the run seed

    [window]   start, width, margin
    [sections] density (number or auto), L
    [thresholds] a, b, delta, epsilon, L (number or auto), cap
    [run]      seed, out, jobs, starts, n_grid, seeds, systems, relations,
               intervals, tolerance, quantile
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "SUBCOMMANDS"]

SUBCOMMANDS = ("lemma1", "sections", "tile", "chain", "converge", "condexp")

_KEYS = {
    "system": {"kind", "name", "cycles", "values", "weights", "alpha", "cf", "steps", "trig", "p", "seed"},
    "window": {"start", "width", "margin"},
    "sections": {"density", "L"},
    "thresholds": {"a", "b", "delta", "epsilon", "L", "cap"},
    "run": {"seed", "out", "jobs", "starts", "n_grid", "seeds", "systems", "relations", "intervals", "tolerance", "quantile"},
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None, path: str = "<config>"):
        self.line, self.column, self.path = line, column, path
        where = path
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {message}")


@dataclass
class ExperimentConfig:
    command: str
    system: dict | None = None
    start: Any = 0
    width: int = 10_000
    margin: int = 256
    density: float | None = None
    section_L: int = 8
    a: float | None = None
    b: float | None = None
    delta: float | None = None
    epsilon: float = 0.01
    L: int | None = None
    cap: int | None = None
    seed: int = 0
    out: str = "results"
    jobs: int = 1
    starts: Any = 10
    n_grid: tuple[int, ...] = (1000, 10000)
    seeds: int = 0
    systems: int = 100
    relations: int = 1
    intervals: int = 200
    tolerance: float | None = None
    quantile: float = 1.0
    raw: dict = field(default_factory=dict)


def _locate(text: str) -> dict:
    """(section, key) -> (line, column of the value), 1-based."""
    where = {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"\s*([A-Za-z_][\w]*)\s*[=:]\s*", line)
        if m and section is not None:
            where[(section, m.group(1))] = (n, m.end() + 1)
    return where


class _Reader:
    def __init__(self, cp, where, path):
        self.cp, self.where, self.path = cp, where, path

    def error(self, section, key, message):
        line, col = self.where.get((section, key), (None, None))
        raise ConfigError(f"[{section}] {key}: {message}", line, col, self.path)

    def get(self, section, key):
        if self.cp.has_section(section) and self.cp.has_option(section, key):
            value = self.cp.get(section, key).strip()
            return value if value != "" else None
        return None

    def number(self, section, key, kind, default=None, lo=None, allow_auto=False):
        text = self.get(section, key)
        if text is None:
            return default
        if allow_auto and text.lower() == "auto":
            return None
        try:
            value = kind(Fraction(text)) if kind is not int else int(text)
        except (ValueError, ZeroDivisionError):
            self.error(section, key, f"expected a number, got {text!r}")
        if lo is not None and value < lo:
            self.error(section, key, f"must be >= {lo}, got {text}")
        return value

    def rational_list(self, section, key):
        text = self.get(section, key)
        try:
            return [Fraction(t) for t in text.split()]
        except (ValueError, ZeroDivisionError):
            self.error(section, key, f"expected rationals separated by spaces, got {text!r}")


def _expand_cf(text: str) -> list[int]:
    out = []
    for tok in text.replace(",", " ").split():
        if "*" in tok:
            q, rep = tok.split("*")
            out += [int(q)] * int(rep)
        else:
            out.append(int(tok))
    return out


def _system_spec(r: _Reader) -> dict | None:
    if not r.cp.has_section("system"):
        return None
    kind = r.get("system", "kind")
    if kind not in ("finite", "rotation", "bernoulli"):
        r.error("system", "kind", f"expected finite, rotation or bernoulli, got {kind!r}")
    spec: dict = {"kind": kind, "name": r.get("system", "name") or kind}
    if kind == "finite":
        for key in ("cycles", "values"):
            if r.get("system", key) is None:
                r.error("system", key, "required for finite systems")
        try:
            spec["cycles"] = [[int(p) for p in c.split()] for c in r.get("system", "cycles").split("|")]
        except ValueError:
            r.error("system", "cycles", "expected integer point ids")
        spec["values"] = r.rational_list("system", "values")
        w = r.get("system", "weights")
        spec["weights"] = None if w in (None, "uniform") else r.rational_list("system", "weights")
    elif kind == "rotation":
        if r.get("system", "cf") is not None:
            try:
                spec["cf"] = _expand_cf(r.get("system", "cf"))
            except ValueError:
                r.error("system", "cf", "expected positive integers, optionally q*repeat")
        elif r.get("system", "alpha") is not None:
            spec["alpha"] = r.get("system", "alpha")
        else:
            r.error("system", "kind", "rotation needs alpha or cf")
        steps_text = r.get("system", "steps") or "0:1/2:1"
        try:
            spec["steps"] = [tuple(float(Fraction(x)) for x in s.split(":")) for s in steps_text.split(",") if s.strip()]
            if any(len(s) != 3 for s in spec["steps"]):
                raise ValueError
        except (ValueError, ZeroDivisionError):
            r.error("system", "steps", "expected lo:hi:coefficient items")
        trig_text = r.get("system", "trig")
        if trig_text:
            try:
                spec["trig"] = [
                    (fn.strip(), int(k), float(Fraction(amp)))
                    for fn, k, amp in (t.split(":") for t in trig_text.split(",") if t.strip())
                ]
            except ValueError:
                r.error("system", "trig", "expected cos|sin:frequency:amplitude items")
    else:
        spec["p"] = r.number("system", "p", float)
        if spec["p"] is None:
            r.error("system", "p", "required for bernoulli systems")
        seed = r.number("system", "seed", int, lo=0)
        if seed is not None:
            spec["seed"] = seed
    return spec


def _start(r: _Reader, kind: str | None):
    text = r.get("window", "start")
    if text is None:
        return (0.0, 0) if kind == "rotation" else 0
    try:
        if kind == "rotation":
            if ":" in text:
                x0, n = text.split(":")
                return (float(Fraction(x0)), int(n))
            return (float(Fraction(text)), 0)
        return int(text)
    except (ValueError, ZeroDivisionError):
        r.error("window", "start", f"bad start point {text!r}")


def parse_config(text: str, command: str, overrides: dict | None = None, path: str = "<config>") -> ExperimentConfig:
    """Parse and validate; ``overrides`` maps ``section.key`` to replacement text."""
    if command not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {command!r}", path=path)
    cp = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=(";", "#"), comment_prefixes=(";", "#"), strict=True
    )
    cp.optionxform = str
    try:
        cp.read_string(text, source=path)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, None, path) from exc
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, None, path) from exc
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", exc.lineno, 1, path) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line (expected key = value)", line, 1, path) from exc
    where = _locate(text)
    for dotted, value in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key", path=path)
        section, key = dotted.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, str(value))
    for section in cp.sections():
        if section not in _KEYS:
            line = next((ln for (s, _), (ln, _) in where.items() if s == section), None)
            raise ConfigError(f"unknown section [{section}]", line, 1, path)
        for key in cp.options(section):
            if key not in _KEYS[section]:
                line, col = where.get((section, key), (None, None))
                raise ConfigError(f"unknown key {key!r} in [{section}]", line, 1 if line else None, path)

    r = _Reader(cp, where, path)
    cfg = ExperimentConfig(command=command)
    cfg.raw = {s: dict(cp.items(s)) for s in cp.sections()}
    cfg.system = _system_spec(r)
    kind = cfg.system["kind"] if cfg.system else None
    cfg.start = _start(r, kind)
    cfg.width = r.number("window", "width", int, cfg.width, lo=1)
    cfg.margin = r.number("window", "margin", int, cfg.margin, lo=0)
    if 2 * cfg.margin > cfg.width:
        r.error("window", "margin", f"must be at most width / 2 = {cfg.width // 2}")
    cfg.density = r.number("sections", "density", float, None, lo=0, allow_auto=True)
    if cfg.density is not None and cfg.density > 1:
        r.error("sections", "density", "must lie in (0, 1)")
    cfg.section_L = r.number("sections", "L", int, cfg.section_L, lo=1)
    cfg.a = r.number("thresholds", "a", float)
    cfg.b = r.number("thresholds", "b", float)
    cfg.delta = r.number("thresholds", "delta", float)
    cfg.epsilon = r.number("thresholds", "epsilon", float, cfg.epsilon)
    if cfg.epsilon <= 0:
        r.error("thresholds", "epsilon", "must be positive")
    cfg.L = r.number("thresholds", "L", int, None, lo=1, allow_auto=True)
    cfg.cap = r.number("thresholds", "cap", int, None, lo=1)
    cfg.seed = r.number("run", "seed", int, cfg.seed, lo=0)
    cfg.out = r.get("run", "out") or cfg.out
    cfg.jobs = r.number("run", "jobs", int, cfg.jobs, lo=1)
    cfg.seeds = r.number("run", "seeds", int, cfg.seeds, lo=0)
    cfg.systems = r.number("run", "systems", int, cfg.systems, lo=1)
    cfg.relations = r.number("run", "relations", int, cfg.relations, lo=1)
    cfg.intervals = r.number("run", "intervals", int, cfg.intervals, lo=0)
    cfg.tolerance = r.number("run", "tolerance", float, None, lo=0)
    cfg.quantile = r.number("run", "quantile", float, cfg.quantile, lo=0)
    starts = r.get("run", "starts")
    if starts is not None:
        toks = starts.split()
        try:
            if len(toks) == 1 and "." not in toks[0] and ":" not in toks[0]:
                cfg.starts = int(toks[0])
            elif kind == "rotation":
                cfg.starts = [
                    (float(Fraction(t.split(":")[0])), int(t.split(":")[1])) if ":" in t else (float(Fraction(t)), 0)
                    for t in toks
                ]
            else:
                cfg.starts = [int(t) for t in toks]
        except (ValueError, ZeroDivisionError):
            r.error("run", "starts", "expected a count or a list of start points")
        if isinstance(cfg.starts, int) and cfg.starts < 1:
            r.error("run", "starts", "must be positive")
    grid = r.get("run", "n_grid")
    if grid is not None:
        try:
            cfg.n_grid = tuple(int(t) for t in grid.split())
        except ValueError:
            r.error("run", "n_grid", "expected integers")
        if not cfg.n_grid or min(cfg.n_grid) < 1 or list(cfg.n_grid) != sorted(cfg.n_grid):
            r.error("run", "n_grid", "must be ascending positive integers")

    _validate_for_command(cfg, r)
    return cfg


def _validate_for_command(cfg: ExperimentConfig, r: _Reader):
    cmd = cfg.command
    kind = cfg.system["kind"] if cfg.system else None
    if cmd in ("sections", "tile", "chain", "converge") and cfg.system is None:
        r.error("system", "kind", f"'{cmd}' needs a [system] section")
    if cmd == "condexp" and kind != "finite":
        r.error("system", "kind", "'condexp' needs a finite system")
    if cmd == "lemma1" and cfg.system is not None and kind != "finite":
        r.error("system", "kind", "'lemma1' needs a finite system (or none, for random systems)")
    if cmd == "sections" and cfg.density is None:
        r.error("sections", "density", "'sections' needs an explicit density")
    if cmd in ("tile", "chain") and cfg.b is None:
        r.error("thresholds", "b", f"'{cmd}' needs b")
    if cmd in ("tile", "chain") and cfg.L is not None and cfg.L > cfg.margin:
        r.error("thresholds", "L", f"L = {cfg.L} exceeds the window margin {cfg.margin}")
    if cmd == "chain" and cfg.a is not None:
        a, b, eps = Fraction(str(cfg.a)), Fraction(str(cfg.b)), Fraction(str(cfg.epsilon))
        if not a < b:
            r.error("thresholds", "a", "need a < b")
        if not (b - a) > 2 * eps * (abs(a) + abs(b) + 2):
            r.error("thresholds", "epsilon", "budget violated: need (b - a) > 2 eps (|a| + |b| + 2)")
    if cfg.delta is not None:
        d, eps = Fraction(str(cfg.delta)), Fraction(str(cfg.epsilon))
        if d <= 0 or eps != min(d, 1) / 8:
            r.error("thresholds", "delta", "need delta > 0 and epsilon = min(delta, 1) / 8")
