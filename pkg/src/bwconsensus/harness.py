"""Scenario files, single runs, seeded sweeps and trace re-verification."""

from __future__ import annotations

import configparser
import random
import re
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from .adversary import STRATEGIES, StrategySpec
from .auth import MUTATIONS, value_digest
from .checkers import Verdict, all_verdicts, measure_complexity
from .explore import ExplorationReport, explore_exhaustive
from .model import ResilienceError, SystemParams
from .netsim import (BWAssignment, DelayRange, LinkClass, LinkModel, Scenario, ScenarioError,
                     Simulation)
from .trace import Trace, read_trace

PathLike = Union[str, Path]
BW_PRESETS = ("bisource", "winning", "mixed")


class ScenarioParseError(ScenarioError):
    def __init__(self, where: str, reason: str):
        super().__init__(f"{where}: {reason}")
        self.where = where
        self.reason = reason


# -- scenario files --------------------------------------------------------------


def _pids(text: str) -> frozenset[int]:
    return frozenset(int(x) for x in re.split(r"[,\s]+", text.strip()) if x)


def _link(spec: str, base: LinkModel) -> LinkModel:
    """``timely delta=1 tau=5 min_delay=0.5``; omitted knobs come from ``base``."""
    words = spec.split()
    if not words:
        raise ValueError("empty link description")
    opts = dict(w.split("=", 1) for w in words[1:])
    unknown = set(opts) - {"delta", "tau", "min_delay"}
    if unknown:
        raise ValueError(f"unknown link options {sorted(unknown)}")
    cls = LinkClass(words[0].lower())
    delta = float(opts["delta"]) if "delta" in opts else base.delta
    return LinkModel(
        cls,
        delta if cls == LinkClass.TIMELY else None,
        float(opts.get("tau", base.tau)),
        float(opts.get("min_delay", base.min_delay)),
    )


def preset_bw(preset: str, params: SystemParams, pivot: int,
              order: Iterable[int]) -> BWAssignment:
    """Pivot plus its first 2t neighbours in ``order`` split as the preset says."""
    others = [p for p in order if p != pivot][: 2 * params.t]
    if len(others) < 2 * params.t:
        raise ScenarioError("not enough processes for the BW preset")
    y = {"bisource": 2 * params.t, "winning": 0, "mixed": params.t}[preset]
    return BWAssignment(pivot, frozenset(others[:y]), frozenset(others[y:]))


def bw_links(bw: BWAssignment, delta: float, tau: float,
             min_delay: float = 0.0) -> dict[tuple[int, int], LinkModel]:
    """Links that make ``bw`` hold from ``tau`` on."""
    timely = LinkModel(LinkClass.TIMELY, delta, tau, min_delay)
    links = {}
    for y in bw.Y:
        links[(bw.pivot, y)] = timely
        links[(y, bw.pivot)] = timely
    for z in bw.Z:
        links[(bw.pivot, z)] = LinkModel(LinkClass.WINNING, None, tau)
    return links


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    cfg = configparser.ConfigParser(delimiters=("=",), inline_comment_prefixes=(";",),
                                    interpolation=None)
    cfg.optionxform = str
    try:
        cfg.read_string(text)
    except configparser.Error as exc:
        raise ScenarioParseError(f"line {getattr(exc, 'lineno', '?')}", exc.message) from None

    def field_(section: str, key: str, conv: Callable, default=None, required=False):
        if not cfg.has_option(section, key):
            if required:
                raise ScenarioParseError(f"[{section}] {key}", "missing")
            return default
        raw = cfg.get(section, key)
        try:
            return conv(raw)
        except (ValueError, KeyError) as exc:
            raise ScenarioParseError(f"[{section}] {key}", f"bad value {raw!r}: {exc}") from None

    if not cfg.has_section("system"):
        raise ScenarioParseError("[system]", "missing section")
    n = field_("system", "n", int, required=True)
    t = field_("system", "t", int, required=True)
    params = SystemParams(n, t)
    name = field_("system", "name", str, name)

    values: dict[int, bytes] = {}
    if cfg.has_section("values"):
        default = cfg.get("values", "default", fallback=None)
        for pid in params.processes:
            raw = cfg.get("values", str(pid), fallback=default)
            if raw is None:
                raise ScenarioParseError(f"[values] {pid}", "missing")
            values[pid] = raw.encode("utf-8")
        for key in cfg.options("values"):
            if key != "default" and (not key.isdigit() or int(key) not in params.processes):
                raise ScenarioParseError(f"[values] {key}", "not a process id")
    else:
        raise ScenarioParseError("[values]", "missing section")

    byzantine: dict[int, StrategySpec] = {}
    if cfg.has_section("byzantine"):
        for key in cfg.options("byzantine"):
            if not key.isdigit():
                raise ScenarioParseError(f"[byzantine] {key}", "not a process id")
            byzantine[int(key)] = field_("byzantine", key, StrategySpec.parse)

    default_link = LinkModel()
    links: dict[tuple[int, int], LinkModel] = {}
    if cfg.has_section("links"):
        base = LinkModel(LinkClass.ASYNC, field_("links", "delta", float),
                         field_("links", "tau", float, 0.0), field_("links", "min_delay", float, 0.0))
        default_link = field_("links", "default", lambda s: _link(s, base), base)
        for key in cfg.options("links"):
            if key in ("default", "delta", "tau", "min_delay"):
                continue
            m = re.fullmatch(r"\s*(\d+)\s*->\s*(\d+)\s*", key)
            if not m:
                raise ScenarioParseError(f"[links] {key}", "expected 'a->b'")
            links[(int(m.group(1)), int(m.group(2)))] = field_(
                "links", key, lambda s: _link(s, base))

    bw = None
    if cfg.has_section("bw"):
        preset = field_("bw", "preset", str)
        correct = [p for p in params.processes if p not in byzantine]
        pivot = field_("bw", "pivot", int, correct[0] if correct else 1)
        if preset is not None:
            if preset not in BW_PRESETS:
                raise ScenarioParseError("[bw] preset", f"unknown preset {preset!r}")
            order = field_("bw", "order", lambda s: [int(x) for x in s.split(",")],
                           list(params.processes))
            bw = preset_bw(preset, params, pivot, order)
        else:
            bw = BWAssignment(pivot, field_("bw", "Y", _pids, frozenset()),
                              field_("bw", "Z", _pids, frozenset()))
        delta = field_("bw", "delta", float, 1.0)
        tau = field_("bw", "tau", float, 0.0)
        min_delay = field_("bw", "min_delay", float, 0.0)
        # explicit per-pair entries in [links] take precedence
        links = {**bw_links(bw, delta, tau, min_delay), **links}

    seed = field_("run", "seed", int, 0) if cfg.has_section("run") else 0
    max_rounds = field_("run", "max_rounds", int, 20) if cfg.has_section("run") else 20
    base_delay = DelayRange()
    mutations: frozenset[str] = frozenset()
    if cfg.has_section("run"):
        base_delay = DelayRange(field_("run", "delay_lo", float, 0.1),
                                field_("run", "delay_hi", float, 2.0),
                                field_("run", "drift", float, 0.0))
        mutations = field_("run", "mutations", _names, frozenset())
    scenario = Scenario(params, values, byzantine, links, default_link, bw, seed, max_rounds,
                        base_delay, mutations, name)
    return scenario.validate()


def _names(text: str) -> frozenset[str]:
    names = frozenset(x for x in re.split(r"[,\s]+", text.strip()) if x)
    unknown = names - set(MUTATIONS)
    if unknown:
        raise ValueError(f"unknown mutation {sorted(unknown)}")
    return names


def load_scenario(path: PathLike) -> Scenario:
    """Read and validate a scenario file.

    Raises :class:`ScenarioParseError` for syntax problems,
    :class:`~bwconsensus.model.ResilienceError` for ``n <= 3t`` and
    :class:`~bwconsensus.netsim.ScenarioError` for other inconsistencies.
    """
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), path.stem)


# -- single runs -------------------------------------------------------------------


@dataclass
class RunReport:
    scenario: str
    seed: int
    end: str
    decisions: dict[int, Optional[str]]  # pid -> value digest
    rounds: dict[int, Optional[int]]
    steps: Optional[int]
    hops: Optional[int]
    messages: dict[tuple[str, int], int]
    verdicts: list[Verdict]
    forgeries: int = 0
    duration: float = field(default=0.0, compare=False)

    @property
    def failed(self) -> bool:
        return self.forgeries > 0 or any(v.failed for v in self.verdicts)

    def verdict(self, prop: str) -> Verdict:
        return next(v for v in self.verdicts if v.property == prop)

    def lines(self) -> list[str]:
        status = "fail" if self.failed else "pass"
        out = [f"run\t{self.scenario}\tseed={self.seed}\tstatus={status}\tend={self.end}\t"
               f"steps={self.steps if self.steps is not None else '-'}\t"
               f"hops={self.hops if self.hops is not None else '-'}\tforgeries={self.forgeries}"]
        for pid in sorted(self.decisions):
            r = self.rounds[pid]
            out.append(f"decision\tp{pid}\tround={'-' if r is None else r}\t"
                       f"value={self.decisions[pid] or '-'}")
        out += ["verdict\t" + v.to_line() for v in self.verdicts]
        return out


def run_once(scenario: Scenario, seed: Optional[int] = None,
             trace_out: Optional[PathLike] = None,
             round_budget: Optional[int] = None) -> RunReport:
    """Simulate, optionally persist the trace, and run every checker."""
    started = time.perf_counter()
    sim = Simulation(scenario, seed)
    trace = sim.run()
    if trace_out is not None:
        trace.write(trace_out)
    cx = measure_complexity(trace)
    decisions = {p: (None if v is None else value_digest(v)) for p, v in sim.decisions().items()}
    return RunReport(
        scenario=scenario.name, seed=sim.seed, end=trace.end, decisions=decisions,
        rounds=sim.decision_rounds(), steps=cx.steps, hops=cx.hops, messages=cx.messages,
        verdicts=all_verdicts(trace, round_budget), forgeries=sim.forgeries,
        duration=time.perf_counter() - started,
    )


def verify_trace(path: PathLike, round_budget: Optional[int] = None) -> list[Verdict]:
    """Re-check a persisted trace without re-simulating (raises MalformedTrace)."""
    trace: Trace = read_trace(path)
    return all_verdicts(trace, round_budget)


# -- sweeps --------------------------------------------------------------------------

VALUES = (b"a", b"b", b"c")


def _adversarial(template: Scenario, seed: int) -> Scenario:
    """n in {4,5,7}, up to t Byzantine processes from the whole catalog, random inputs."""
    rng = random.Random(f"adversarial/{seed}")
    n = rng.choice((4, 5, 7))
    params = SystemParams(n, (n - 1) // 3)
    byz_ids = rng.sample(params.processes, rng.randint(1, params.t))
    byzantine = {p: StrategySpec(rng.choice(STRATEGIES)) for p in byz_ids}
    if rng.random() < 0.3:
        # put a both-values coordinator in the first rounds
        byzantine = {p: StrategySpec("CertifiedBothValues") for p in range(1, params.t + 1)}
    values = {p: rng.choice(VALUES) for p in params.processes}
    drift = rng.choice((0.0, 0.0, 0.05))
    return replace(template, params=params, initial_values=values, byzantine=byzantine,
                   links={}, default_link=LinkModel(), bw=None, seed=seed,
                   base_delay=DelayRange(0.1, 2.0, drift), name=f"adversarial-n{n}")


def _validity(template: Scenario, seed: int) -> Scenario:
    """Correct processes share one input; Byzantine ones push other values."""
    rng = random.Random(f"validity/{seed}")
    n = rng.choice((4, 5, 7))
    params = SystemParams(n, (n - 1) // 3)
    common = rng.choice(VALUES)
    byz_ids = rng.sample(params.processes, params.t)
    catalog = ("Equivocator", "InvalidSpammer", "CertifiedBothValues", "Mute", "Delayer",
               "SilentCoordinator")
    byzantine = {p: StrategySpec(rng.choice(catalog)) for p in byz_ids}
    values = {p: (rng.choice([v for v in VALUES if v != common]) if p in byzantine else common)
              for p in params.processes}
    return replace(template, params=params, initial_values=values, byzantine=byzantine,
                   links={}, default_link=LinkModel(), bw=None, seed=seed,
                   name=f"validity-n{n}")


BW_MIXES = {"bisource": (2, 0), "winning": (0, 2), "mixed": (1, 1)}


def bw_scenario(y: int, z: int, seed: int, n: int = 4, t: int = 1,
                delta: float = 1.0, drift: float = 0.05) -> Scenario:
    """A ◇2t-BW run: drifting asynchronous links except the pivot's privileged ones,
    one Byzantine non-pivot process, random stabilization time."""
    rng = random.Random(f"bw/{y}/{z}/{seed}")
    params = SystemParams(n, t)
    pivot = rng.choice(params.processes)
    others = [p for p in params.processes if p != pivot]
    rng.shuffle(others)
    bw = BWAssignment(pivot, frozenset(others[:y]), frozenset(others[y:y + z]))
    byz = rng.choice(others)
    byzantine = {byz: StrategySpec(rng.choice(STRATEGIES))}
    values = {p: rng.choice(VALUES) for p in params.processes}
    tau = round(rng.uniform(0.0, 20.0), 3)
    return Scenario(params, values, byzantine, bw_links(bw, delta, tau), LinkModel(), bw,
                    seed, max_rounds=200, base_delay=DelayRange(0.1, 2.0, drift),
                    name=f"bw-y{y}-z{z}")


def _bw_mix(template: Scenario, seed: int) -> Scenario:
    y, z = list(BW_MIXES.values())[seed % 3]
    return bw_scenario(y, z, seed, template.params.n if template.params.t == 1 else 4)


def handoff_scenario(seed: int) -> Scenario:
    """n=7, t=2: a fast group decides in round 1 while one laggard moves to round 2.

    The round-1 coordinator hears queries slowly, so the fast group times out
    and relays bottom, yet it relays its own value to them quickly.  The laggard
    hears the coordinator late, so its FILT1 and FILT2 carry bottom, and its own
    messages reach the others after their quorums are full; it sees a mixed
    FILT2 quorum before any decision message reaches it.  A Delayer with a small
    extra delay sits in the fast group.
    """
    rng = random.Random(f"handoff/{seed}")
    params = SystemParams(7, 2)
    coordinator = 1
    laggard, delayer = rng.sample(range(2, 8), 2)
    fast = LinkModel(LinkClass.TIMELY, 0.3, 0.0, 0.1)
    to_coordinator = LinkModel(LinkClass.TIMELY, 1.0, 0.0, 0.95)
    slow = LinkModel(LinkClass.TIMELY, 3.0, 0.0, 2.5)
    lagging = LinkModel(LinkClass.TIMELY, 0.8, 0.0, 0.6)
    links = {}
    for a in params.processes:
        for b in params.processes:
            if a == b:
                continue
            if a == coordinator and b == laggard:
                links[(a, b)] = slow
            elif a == laggard:
                links[(a, b)] = lagging
            elif b == coordinator:
                links[(a, b)] = to_coordinator
    values = {p: rng.choice(VALUES) for p in params.processes}
    byzantine = {delayer: StrategySpec("Delayer", {"extra": round(rng.uniform(0.0, 0.05), 3)})}
    return Scenario(params, values, byzantine, links, fast, None, seed, max_rounds=10,
                    name="handoff")


MIXES: dict[str, Callable[[Scenario, int], Scenario]] = {
    "none": lambda template, seed: template.with_seed(seed),
    "adversarial": _adversarial,
    "validity": _validity,
    "bw": _bw_mix,
    "handoff": lambda template, seed: handoff_scenario(seed),
}


@dataclass
class SweepReport:
    mix: str
    runs: list[RunReport]

    @property
    def failures(self) -> list[RunReport]:
        return [r for r in self.runs if r.failed]

    @property
    def failed(self) -> bool:
        return bool(self.failures)

    def counts(self) -> dict[str, Counter]:
        out: dict[str, Counter] = {}
        for r in self.runs:
            for v in r.verdicts:
                out.setdefault(v.property, Counter())[v.status] += 1
        return out

    def round_histogram(self) -> Counter:
        return Counter(max((x for x in r.rounds.values() if x is not None), default=None)
                       for r in self.runs)

    def lines(self) -> list[str]:
        out = [f"sweep\t{self.mix}\truns={len(self.runs)}\tfailed={len(self.failures)}"]
        for prop, c in sorted(self.counts().items()):
            out.append(f"count\t{prop}\t" + "\t".join(f"{k}={v}" for k, v in sorted(c.items())))
        hist = self.round_histogram()
        out.append("rounds\t" + "\t".join(f"{k}={hist[k]}" for k in sorted(hist, key=str)))
        for r in self.failures:
            out += r.lines()
        return out


def _sweep_one(args) -> RunReport:
    template, mix, seed, round_budget = args
    scenario = MIXES[mix](template, seed)
    budget = round_budget
    if budget is None and scenario.bw is not None and mix == "bw":
        budget = 4 * scenario.params.n
    return run_once(scenario, seed, round_budget=budget)


def sweep(template: Scenario, seeds: Iterable[int], mix: str = "none",
          workers: int = 1, round_budget: Optional[int] = None) -> SweepReport:
    """Run ``template`` varied by ``mix`` for every seed; results sorted by seed."""
    if mix not in MIXES:
        raise ScenarioError(f"unknown mix {mix!r}; choose from {sorted(MIXES)}")
    jobs = [(template, mix, s, round_budget) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            runs = list(pool.map(_sweep_one, jobs, chunksize=16))
    else:
        runs = [_sweep_one(j) for j in jobs]
    runs.sort(key=lambda r: r.seed)
    return SweepReport(mix, runs)


def explore(scenario: Scenario, max_rounds: Optional[int] = None,
            depth: Optional[int] = None, max_states: int = 2_000_000) -> ExplorationReport:
    return explore_exhaustive(scenario, max_rounds, depth, max_states)


def exploration_lines(name: str, report: ExplorationReport) -> list[str]:
    out = [f"explore\t{name}\tstatus={'pass' if report.ok else 'fail'}\tstates={report.states}\t"
           f"leaves={report.leaves}\tschedules={report.schedules}\t"
           f"violations={len(report.violations)}"]
    out += ["verdict\t" + v.to_line() for v in report.violations[:20]]
    return out


__all__ = [
    "BW_MIXES", "MIXES", "ResilienceError", "RunReport", "ScenarioParseError", "SweepReport",
    "bw_links", "bw_scenario", "explore", "exploration_lines", "load_scenario", "parse_scenario",
    "preset_bw", "run_once", "sweep", "verify_trace",
]
