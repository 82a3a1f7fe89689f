import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwconsensus.adversary import StrategySpec
from bwconsensus.checkers import check_reliability, check_timely
from bwconsensus.harness import bw_scenario, run_once
from bwconsensus.model import SystemParams
from bwconsensus.netsim import (DELIVER, HOLD, PIVOT_FIRST, BWAssignment, DelayRange, LinkClass,
                                LinkModel, QueryContext, Scenario, ScenarioError, Simulation,
                                enforce_winning, run, schedule_delivery)

VALUES = {1: b"a", 2: b"b", 3: b"a", 4: b"b"}


def scenario(**kw):
    return Scenario(SystemParams(4, 1), dict(VALUES), **kw)


@given(st.floats(0, 100), st.floats(0.01, 5), st.floats(0, 1), st.integers(0, 2**32))
def test_timely_delivery_within_bound(send, delta, frac, seed):
    link = LinkModel(LinkClass.TIMELY, delta, 0.0, delta * frac)
    at = schedule_delivery(send, link, random.Random(seed), DelayRange())
    assert send + delta * frac <= at <= send + delta + 1e-9


@given(st.floats(0, 50), st.integers(0, 2**32))
def test_unstable_timely_link_behaves_asynchronously(send, seed):
    link = LinkModel(LinkClass.TIMELY, 0.5, 60.0)
    base = DelayRange(1.0, 3.0)
    at = schedule_delivery(send, link, random.Random(seed), base)
    assert send + 1.0 <= at <= send + 3.0


def test_self_send_is_immediate():
    assert schedule_delivery(3.5, LinkModel(), random.Random(0), DelayRange(), self_send=True) == 3.5


def test_drift_widens_delays():
    base = DelayRange(0.1, 1.0, drift=1.0)
    rng = random.Random(1)
    assert max(base.sample(100.0, rng) for _ in range(200)) > 1.0


@pytest.mark.parametrize("kw", [
    dict(cls=LinkClass.TIMELY),
    dict(cls=LinkClass.TIMELY, delta=1.0, min_delay=2.0),
    dict(tau=-1.0),
])
def test_bad_links_rejected(kw):
    with pytest.raises(ScenarioError):
        LinkModel(**kw)


def test_bad_delay_range_rejected():
    with pytest.raises(ScenarioError):
        DelayRange(0.0, 1.0)


def ctx(**kw):
    base = dict(querier=2, round=1, issued_at=0.0, quorum=3, pivot=1, enforce=True)
    base.update(kw)
    return QueryContext(**base)


def test_enforce_winning_table():
    assert enforce_winning(ctx(enforce=False, responders=[3, 4]), 4) == DELIVER
    assert enforce_winning(ctx(responders=[3]), 4) == DELIVER
    assert enforce_winning(ctx(responders=[3, 4]), 2) == HOLD
    assert enforce_winning(ctx(responders=[3, 4], pivot_inflight=[]), 2) == PIVOT_FIRST
    assert enforce_winning(ctx(responders=[3, 4]), 1) == DELIVER
    assert enforce_winning(ctx(responders=[3, 4], pivot_delivered=True), 2) == DELIVER


def test_query_context_winning_split():
    c = ctx()
    for p in (3, 1, 3, 4, 2):
        c.record(p)
    assert c.winning() == [3, 1, 4] and c.losing() == [2]
    assert c.pivot_delivered


@pytest.mark.parametrize("kw,match", [
    (dict(byzantine={1: StrategySpec("Crash"), 2: StrategySpec("Crash")}), "exceed"),
    (dict(bw=BWAssignment(1, frozenset({2}), frozenset({2}))), "disjoint"),
    (dict(bw=BWAssignment(1, frozenset({2}))), "2t"),
    (dict(bw=BWAssignment(1, frozenset({2, 3}))), "timely"),
    (dict(bw=BWAssignment(1, frozenset({1, 3}))), "own"),
    (dict(max_rounds=0), "positive"),
])
def test_validate_rejects(kw, match):
    with pytest.raises(ScenarioError, match=match):
        scenario(**kw).validate()


def test_validate_requires_all_values():
    s = Scenario(SystemParams(4, 1), {1: b"a"})
    with pytest.raises(ScenarioError, match="missing"):
        s.validate()


def test_winning_link_must_be_declared():
    bw = BWAssignment(1, frozenset(), frozenset({2, 3}))
    with pytest.raises(ScenarioError, match="winning"):
        scenario(bw=bw).validate()
    links = {(1, 2): LinkModel(LinkClass.WINNING), (1, 3): LinkModel(LinkClass.WINNING)}
    assert scenario(bw=bw, links=links).validate()


def test_stabilization_is_latest_privileged_tau():
    late = LinkModel(LinkClass.TIMELY, 1.0, 7.0)
    links = {(1, 2): LinkModel(LinkClass.TIMELY, 1.0, 2.0), (2, 1): late,
             (1, 3): LinkModel(LinkClass.WINNING, tau=4.0)}
    bw = BWAssignment(1, frozenset({2}), frozenset({3}))
    assert scenario(bw=bw, links=links).stabilization == 7.0
    assert scenario().stabilization == 0.0


def test_same_seed_same_trace():
    s = scenario(byzantine={4: StrategySpec("Equivocator")})
    assert run(s, 11).dumps() == run(s, 11).dumps()
    assert run(s, 11).dumps() != run(s, 12).dumps()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_reliable_links_deliver_everything(seed):
    s = scenario(byzantine={2: StrategySpec("Delayer", {"extra": 1.5})})
    trace = run(s, seed)
    assert check_reliability(trace).status == "pass"


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(2, 0), (1, 1)]))
def test_timely_links_respect_delta_after_stabilization(seed, yz):
    s = bw_scenario(*yz, seed)
    trace = run(s, seed)
    pivot = s.bw.pivot
    # a Byzantine endpoint makes the link vacuously timely
    correct_y = s.bw.Y - set(s.byzantine)
    privileged = {(pivot, y) for y in correct_y} | {(y, pivot) for y in correct_y}
    assert check_timely(trace, 1.0, privileged).status == "pass"


def winning_violations(s, trace):
    """Queries issued after stabilization whose first n-t responses miss the pivot."""
    pivot, quorum = s.bw.pivot, s.params.quorum
    z = s.bw.Z - set(s.byzantine)
    issued = {}
    order: dict[tuple[int, int], list[int]] = {}
    for rec in trace.records:
        if rec.kind == "Send" and rec.phase == "QUERY" and rec.actor in z:
            issued.setdefault((rec.actor, rec.round), rec.time)
        elif rec.kind == "Deliver" and rec.phase == "RESPONSE" and rec.actor in z:
            seen = order.setdefault((rec.actor, rec.round), [])
            if rec.peer not in seen:
                seen.append(rec.peer)
    bad = []
    for key, at in issued.items():
        first = order.get(key, [])[:quorum]
        if at >= s.stabilization and len(first) == quorum and pivot not in first:
            bad.append(key)
    return bad


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(0, 2), (1, 1)]))
def test_winning_links_put_pivot_in_first_quorum(seed, yz):
    s = bw_scenario(*yz, seed)
    trace = run(s, seed)
    assert winning_violations(s, trace) == []


def test_simulation_reports_decisions():
    s = scenario()
    sim = Simulation(s, 3)
    sim.run()
    decided = sim.decisions()
    assert set(decided) == {1, 2, 3, 4}
    assert len(set(decided.values())) == 1
    assert all(r is not None for r in sim.decision_rounds().values())


def test_run_once_writes_trace(tmp_path):
    out = tmp_path / "t.trace"
    report = run_once(scenario(), 5, out)
    assert out.read_text().startswith("# bwtrace 1")
    assert not report.failed
