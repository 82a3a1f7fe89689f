import pytest

from bwconsensus.adversary import StrategySpec
from bwconsensus.model import SystemParams
from bwconsensus.netsim import Scenario, run
from bwconsensus.trace import HEADER, MalformedTrace, parse_trace, read_trace


@pytest.fixture
def sample():
    s = Scenario(SystemParams(4, 1), {1: b"a", 2: b"b", 3: b"a", 4: b"b"},
                 {3: StrategySpec("Equivocator")})
    return run(s, 4)


def test_round_trip(sample, tmp_path):
    path = tmp_path / "x.trace"
    sample.write(path)
    back = read_trace(path)
    assert back.dumps() == sample.dumps()
    assert back.byzantine == frozenset({3})
    assert len(back.records) == len(sample.records)


def test_header_first(sample):
    assert sample.lines()[0] == HEADER


def test_truncated_trace_rejected(sample):
    lines = sample.dumps().splitlines()
    with pytest.raises(MalformedTrace):
        parse_trace(lines[:-1])


def test_bad_record_rejected(sample):
    lines = sample.dumps().splitlines()
    broken = lines[:10] + ["1.0\tTeleport\t1\t-\t-\tX\t-\t-"] + lines[10:]
    with pytest.raises(MalformedTrace):
        parse_trace(broken)


def test_missing_header_rejected(sample):
    with pytest.raises(MalformedTrace):
        parse_trace(sample.dumps().splitlines()[1:])
