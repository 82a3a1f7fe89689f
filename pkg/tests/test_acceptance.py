"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the recorded lines are
repeated in the terminal summary under "acceptance criteria".
"""

import time

import pytest

from bwconsensus.auth import PHASE3_FILTER
from bwconsensus.checkers import STEP_KINDS, measure_complexity
from bwconsensus.explore import explore_exhaustive
from bwconsensus.harness import (BW_MIXES, MIXES, bw_scenario, handoff_scenario, load_scenario,
                                 run_once, sweep)
from bwconsensus.model import ResilienceError, coordinator_of
from bwconsensus.netsim import run

pytestmark = pytest.mark.acceptance


@pytest.fixture
def load(scenario_dir):
    return lambda name: load_scenario(scenario_dir / f"{name}.ini")


def test_c1_favorable_run_takes_six_steps(load, criterion):
    s = load("favorable")
    assert not s.byzantine and s.params.n == 4 and s.params.t == 1
    started = time.perf_counter()
    trace = run(s)
    cx = measure_complexity(trace)
    elapsed = time.perf_counter() - started
    rounds = {r.actor: r.round for r in trace.records if r.kind == "Decide"}
    ok = (rounds == {p: 1 for p in s.params.processes}
          and cx.per_process == {p: 6 for p in s.params.processes} and elapsed < 1.0)
    criterion(ok, f"rounds={sorted(set(rounds.values()))} steps={sorted(set(cx.per_process.values()))} "
                  f"elapsed={elapsed:.3f}s")
    assert ok


def test_c2_sixteen_messages_per_step(load, criterion):
    s = load("favorable")
    cx = measure_complexity(run(s))
    n2 = s.params.n ** 2
    counts = [c for _, _, c in cx.per_step(1)]
    names = [k for k, _, _ in cx.per_step(1)]
    ok = names == list(STEP_KINDS) and counts == [n2] * 6
    criterion(ok, " ".join(f"{k}={c}" for k, c in zip(names, counts)))
    assert ok


def test_c3_agreement_sweep(load, criterion):
    template = load("adversarial")
    seeds = range(1000)
    started = time.perf_counter()
    result = sweep(template, seeds, "adversarial")
    elapsed = time.perf_counter() - started
    counts = result.counts()
    bad_agree = counts["agreement"].get("fail", 0)
    bad_cert = counts["unique-certified"].get("fail", 0)
    sizes = {MIXES["adversarial"](template, s).params.n for s in range(50)}
    coordinators_split = sum(
        any(spec.name == "CertifiedBothValues" and pid == coordinator_of(1, sc.params)
            for pid, spec in sc.byzantine.items())
        for sc in (MIXES["adversarial"](template, s) for s in seeds))
    ok = (len(result.runs) == 1000 and bad_agree == 0 and bad_cert == 0 and elapsed < 60
          and sizes == {4, 5, 7} and coordinators_split > 0)
    criterion(ok, f"runs={len(result.runs)} agreement-fail={bad_agree} "
                  f"unique-certified-fail={bad_cert} split-coordinators={coordinators_split} "
                  f"elapsed={elapsed:.1f}s")
    assert ok


def test_c4_validity_sweep(load, criterion):
    started = time.perf_counter()
    result = sweep(load("adversarial"), range(100), "validity")
    elapsed = time.perf_counter() - started
    statuses = result.counts()["validity"]
    ok = statuses.get("pass", 0) == 100 and elapsed < 10
    criterion(ok, f"validity={dict(statuses)} elapsed={elapsed:.2f}s")
    assert ok


def test_c5_termination_under_bw_mixes(criterion):
    started = time.perf_counter()
    details = []
    ok = True
    for label, (y, z) in BW_MIXES.items():
        decided = total = 0
        for seed in range(100):
            s = bw_scenario(y, z, seed)
            assert s.params.t == 1 and s.bw.x == 2 and s.base_delay.drift > 0
            report = run_once(s, seed, round_budget=4 * s.params.n)
            total += 1
            decided += report.verdict("termination").status == "pass"
        details.append(f"{label}(y={y},z={z})={decided}/{total}")
        ok &= decided == total
    elapsed = time.perf_counter() - started
    ok &= elapsed < 30
    criterion(ok, " ".join(details) + f" elapsed={elapsed:.1f}s")
    assert ok


def test_c6_exhaustive_safety(load, criterion):
    s = load("crash_small")
    started = time.perf_counter()
    report = explore_exhaustive(s, max_rounds=2)
    elapsed = time.perf_counter() - started
    ok = report.ok and report.schedules > 1 and elapsed < 300
    criterion(ok, f"states={report.states} schedules={report.schedules} "
                  f"violations={len(report.violations)} elapsed={elapsed:.1f}s")
    assert ok


def test_c6_exhaustive_mutation_sensitivity(load, criterion):
    s = load("crash_small")
    s.mutations = frozenset({PHASE3_FILTER})
    started = time.perf_counter()
    report = explore_exhaustive(s, max_rounds=2)
    elapsed = time.perf_counter() - started
    ok = len(report.violations) >= 1 and elapsed < 300
    criterion(ok, f"mutated: states={report.states} schedules={report.schedules} "
                  f"violations={len(report.violations)} elapsed={elapsed:.1f}s")
    assert ok


def test_c7_round_handoff(criterion):
    qualifying = []
    seed = 0
    while len(qualifying) < 50 and seed < 500:
        report = run_once(handoff_scenario(seed), seed)
        verdict = report.verdict("round-handoff")
        if verdict.status != "vacuous-pass":
            qualifying.append((seed, report))
        seed += 1
    failures = [s for s, r in qualifying
                if r.verdict("round-handoff").status != "pass" or r.verdict("agreement").failed]
    ok = len(qualifying) == 50 and not failures
    criterion(ok, f"targeted={len(qualifying)} tried={seed} failures={failures}")
    assert ok


def test_c8_resilience_gate(load, criterion):
    with pytest.raises(ResilienceError) as info:
        load("resilience_violation")
    ok = "resilience violation" in str(info.value)
    criterion(ok, str(info.value))
    assert ok


@pytest.mark.parametrize("which", ["favorable", "crash_small", "mixed_bw", "silent_coordinator",
                                   "adversarial", "bw", "handoff"])
def test_c9_determinism(which, load, tmp_path, criterion):
    if which == "bw":
        s = bw_scenario(1, 1, 7)
    elif which == "handoff":
        s = handoff_scenario(7)
    elif which == "adversarial":
        s = MIXES["adversarial"](load("adversarial"), 7)
    else:
        s = load(which)
    one, two = tmp_path / "one.trace", tmp_path / "two.trace"
    run_once(s, 7, one)
    run_once(s, 7, two)
    ok = one.read_bytes() == two.read_bytes()
    criterion(ok, f"{which}: {len(one.read_bytes())} bytes identical={ok}")
    assert ok
