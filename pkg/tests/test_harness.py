import pytest

from bwconsensus.harness import (MIXES, ScenarioParseError, bw_scenario, exploration_lines,
                                 explore, handoff_scenario, load_scenario, parse_scenario,
                                 run_once, sweep, verify_trace)
from bwconsensus.model import ResilienceError
from bwconsensus.netsim import LinkClass, ScenarioError

MINIMAL = """
[system]
n = 4
t = 1
[values]
default = a
"""


def test_minimal_scenario_defaults():
    s = parse_scenario(MINIMAL, "mini")
    assert s.name == "mini" and s.initial_values == {p: b"a" for p in range(1, 5)}
    assert s.byzantine == {} and s.bw is None and s.max_rounds == 20


def test_mixed_preset(scenario_dir):
    s = load_scenario(scenario_dir / "mixed_bw.ini")
    assert s.bw.pivot == 1 and s.bw.Y == {2} and s.bw.Z == {4}
    assert s.link(1, 2).cls == LinkClass.TIMELY and s.link(2, 1).cls == LinkClass.TIMELY
    assert s.link(1, 4).cls == LinkClass.WINNING
    assert s.link(4, 1).cls == LinkClass.ASYNC
    assert s.stabilization == 10.0


def test_explicit_link_overrides_preset():
    text = MINIMAL + """
[links]
1->2 = timely delta=0.5
[bw]
preset = bisource
pivot = 1
order = 2,3
"""
    s = parse_scenario(text)
    assert s.link(1, 2).delta == 0.5 and s.link(2, 1).delta == 1.0


def test_explicit_bw_sets():
    text = MINIMAL + """
[bw]
pivot = 2
Y = 1
Z = 3
"""
    s = parse_scenario(text)
    assert s.bw.Y == {1} and s.bw.Z == {3}


@pytest.mark.parametrize("extra,where", [
    ("[links]\n1-2 = timely delta=1\n", "[links] 1-2"),
    ("[links]\ndefault = timely delta=1 speed=3\n", "[links] default"),
    ("[byzantine]\nfoo = Crash\n", "[byzantine] foo"),
    ("[byzantine]\n2 = Teleporter\n", "[byzantine] 2"),
    ("[bw]\npreset = sideways\n", "[bw] preset"),
    ("[run]\nmax_rounds = many\n", "[run] max_rounds"),
    ("[run]\nmutations = everything\n", "[run] mutations"),
])
def test_parse_errors_name_the_location(extra, where):
    with pytest.raises(ScenarioParseError) as info:
        parse_scenario(MINIMAL + extra)
    assert info.value.where == where


def test_missing_sections():
    with pytest.raises(ScenarioParseError):
        parse_scenario("[values]\ndefault = a\n")
    with pytest.raises(ScenarioParseError):
        parse_scenario("[system]\nn = 4\nt = 1\n")
    with pytest.raises(ScenarioParseError):
        parse_scenario("[system]\nn = 4\nt = 1\n[values]\n1 = a\n")


def test_too_many_byzantine_rejected():
    with pytest.raises(ScenarioError, match="exceed"):
        parse_scenario(MINIMAL + "[byzantine]\n1 = Crash\n2 = Mute\n")


def test_resilience_violation(scenario_dir):
    with pytest.raises(ResilienceError, match="resilience violation"):
        load_scenario(scenario_dir / "resilience_violation.ini")


def test_run_report_lines(scenario_dir):
    report = run_once(load_scenario(scenario_dir / "favorable.ini"))
    lines = report.lines()
    assert lines[0].startswith("run\tfavorable\tseed=0\tstatus=pass")
    assert sum(line.startswith("decision") for line in lines) == 4
    assert report.verdict("agreement").status == "pass"


def test_verify_saved_trace(scenario_dir, tmp_path):
    out = tmp_path / "run.trace"
    run_once(load_scenario(scenario_dir / "mixed_bw.ini"), 3, out)
    verdicts = verify_trace(out)
    assert {v.property: v.status for v in verdicts}["agreement"] == "pass"


def test_sweep_is_ordered_and_parallel_safe(scenario_dir):
    template = load_scenario(scenario_dir / "adversarial.ini")
    serial = sweep(template, range(6), "adversarial")
    parallel = sweep(template, range(6), "adversarial", workers=2)
    assert [r.seed for r in serial.runs] == list(range(6))
    assert serial.runs == parallel.runs
    assert not serial.failed
    assert sum(serial.round_histogram().values()) >= 6


def test_mix_generators_are_deterministic(scenario_dir):
    template = load_scenario(scenario_dir / "adversarial.ini")
    for mix in MIXES:
        assert MIXES[mix](template, 9) == MIXES[mix](template, 9)


def test_bw_scenario_shape():
    s = bw_scenario(1, 1, 0)
    assert s.bw.x == 2 and s.bw.pivot not in s.byzantine
    assert len(s.byzantine) == 1


def test_handoff_scenario_has_a_laggard():
    s = handoff_scenario(0)
    assert s.params.n == 7 and len(s.byzantine) == 1
    assert any(link.delta == 3.0 for link in s.links.values())


def test_explore_lines(scenario_dir):
    s = load_scenario(scenario_dir / "crash_small.ini")
    report = explore(s, max_rounds=1, depth=6)
    lines = exploration_lines(s.name, report)
    assert lines[0].startswith("explore\tcrash-small")
    assert "violations=0" in lines[0]
