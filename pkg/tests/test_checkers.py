from bwconsensus.checkers import (FAIL, INCONCLUSIVE, NOT_APPLICABLE, PASS, VACUOUS, Verdict,
                                  all_verdicts, check_agreement, check_reliability,
                                  check_round_handoff, check_termination, check_timely,
                                  check_validity,
                                  check_unique_certified, measure_complexity,
                                  stabilization_round)
from bwconsensus.harness import load_scenario, run_once
from bwconsensus.trace import NA, Trace


def trace(*records, byz=(), proposals=None, bw=False, stab=0.0):
    tr = Trace(4, 1, frozenset(byz), proposals or {p: "A" for p in range(1, 5)},
               stabilization=stab, bw=bw, end="all-decided")
    for rec in records:
        tr.add(*rec)
    return tr


def decide(t, p, r, v):
    return (t, "Decide", p, None, r, "DECIDED", NA, v)


def query(t, p, r, v):
    return (t, "Send", p, None, r, "QUERY", f"q{p}{r}", v)


def filt2(t, p, src, r, v):
    return (t, "Deliver", p, src, r, "FILT2", f"f{src}{r}", v)


def test_agreement_pass_and_fail():
    assert check_agreement(trace(decide(1, 1, 1, "A"), decide(2, 2, 1, "A"))).status == PASS
    v = check_agreement(trace(decide(1, 1, 1, "A"), decide(2, 2, 2, "B")))
    assert v.status == FAIL and v.position == 1


def test_agreement_ignores_byzantine_decisions():
    tr = trace(decide(1, 1, 1, "A"), decide(2, 4, 1, "B"), byz=[4])
    assert check_agreement(tr).status == PASS


def test_validity():
    assert check_validity(trace(decide(1, 1, 1, "A"))).status == PASS
    assert check_validity(trace(decide(1, 1, 1, "B"))).status == FAIL
    mixed = trace(decide(1, 1, 1, "B"), proposals={1: "A", 2: "B", 3: "A", 4: "A"})
    assert check_validity(mixed).status == NOT_APPLICABLE
    # a Byzantine proposal does not make validity inapplicable
    byz = trace(decide(1, 1, 1, "A"), byz=[2], proposals={1: "A", 2: "B", 3: "A", 4: "A"})
    assert check_validity(byz).status == PASS


def test_unique_certified():
    ok = trace(filt2(1, 1, 2, 1, "A"), filt2(1, 2, 3, 1, "BOTTOM"), filt2(2, 3, 1, 2, "B"))
    assert check_unique_certified(ok).status == PASS
    bad = trace(filt2(1, 1, 2, 1, "A"), filt2(2, 3, 1, 1, "B"))
    v = check_unique_certified(bad)
    assert v.status == FAIL and v.position == 1
    # only what correct processes accept counts
    assert check_unique_certified(trace(filt2(1, 1, 2, 1, "A"), filt2(2, 4, 1, 1, "B"),
                                        byz=[4])).status == PASS


def test_round_handoff():
    assert check_round_handoff(trace()).status == VACUOUS
    assert check_round_handoff(trace(decide(1, 1, 1, "A"))).status == VACUOUS
    good = trace(decide(1, 1, 1, "A"), query(2, 2, 2, "A"), decide(3, 2, 2, "A"))
    assert check_round_handoff(good).status == PASS
    bad = trace(decide(1, 1, 1, "A"), query(2, 2, 2, "B"))
    v = check_round_handoff(bad)
    assert v.status == FAIL and v.position == 1
    assert check_round_handoff(trace(decide(1, 1, 1, "A"), query(2, 4, 2, "B"),
                                     byz=[4])).status == VACUOUS


def test_termination():
    assert check_termination(trace()).status == INCONCLUSIVE
    all_decided = trace(*[decide(1, p, 1, "A") for p in (1, 2, 3)], byz=[4], bw=True)
    assert check_termination(all_decided).status == PASS
    missing = trace(decide(1, 1, 1, "A"), byz=[4], bw=True)
    assert check_termination(missing).status == FAIL
    late = trace(query(0, 1, 1, "A"), query(5, 1, 2, "A"),
                 *[decide(9, p, 7, "A") for p in (1, 2, 3)], byz=[4], bw=True, stab=6.0)
    assert stabilization_round(late) == 2
    assert check_termination(late, round_budget=5).status == PASS
    assert check_termination(late, round_budget=4).status == FAIL


def test_timely():
    send = (1.0, "Send", 1, 2, 1, "RELAY", "m", "A")
    assert check_timely(trace(send, (1.9, "Deliver", 2, 1, 1, "RELAY", "m", "A")),
                        1.0, {(1, 2)}).status == PASS
    late = trace(send, (2.5, "Deliver", 2, 1, 1, "RELAY", "m", "A"))
    assert check_timely(late, 1.0, {(1, 2)}).status == FAIL
    assert check_timely(late, 1.0, {(2, 1)}).status == PASS


def test_reliability():
    send = (1.0, "Send", 1, 2, 1, "RELAY", "m", "A")
    assert check_reliability(trace(send, (2.0, "Deliver", 2, 1, 1, "RELAY", "m", "A"))).status == PASS
    assert check_reliability(trace(send)).status == FAIL
    assert check_reliability(trace((2.0, "Deliver", 2, 1, 1, "RELAY", "m", "A"))).status == FAIL


def test_verdict_line():
    assert Verdict("agreement", FAIL, 3, "x").to_line() == "agreement\tfail\t3\tx"
    assert Verdict("agreement", PASS).to_line() == "agreement\tpass\t-\t"


def test_all_verdicts_names():
    names = [v.property for v in all_verdicts(trace())]
    assert names == ["agreement", "validity", "unique-certified", "round-handoff", "termination"]


def test_step_count_with_silent_first_coordinator(scenario_dir):
    # round 1 burns INIT..FILT2 (6 steps), round 2 adds QUERY..FILT2 (5 more)
    report = run_once(load_scenario(scenario_dir / "silent_coordinator.ini"))
    assert report.steps == 11
    assert set(report.rounds.values()) == {2}


def test_complexity_of_undecided_trace():
    c = measure_complexity(trace(query(0, 1, 1, "A")))
    assert c.steps is None and c.decision_round is None
    assert c.per_step(1)[1] == ("QUERY", 1, 1)
