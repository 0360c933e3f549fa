import io
import json
import random

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from capwarden.trace import (Direction, ProcessIdentity, RawStack, ReplaySource, SymbolicStack,
                             SyscallEvent, TraceFormatError, TraceFormatWarning, parse_trace, write_trace)


def _record(**overrides):
    rec = {"seq": 0, "ts_ns": 10, "pid": 7, "tid": 7, "ppid": 1, "comm": "frps",
           "program_id": "frps@1", "dir": "enter", "nr": 1,
           "stack_syms": ["syscall.Syscall", "os.(*File).Write"]}
    rec.update(overrides)
    return {k: v for k, v in rec.items() if v is not None}


def _lines(*records):
    return ("\n".join(json.dumps(r) for r in records) + "\n").encode()


def test_enter_record_with_symbolic_stack():
    (ev,) = parse_trace(_lines(_record()))
    assert ev.direction is Direction.ENTER
    assert ev.syscall_nr == 1
    assert ev.stack == SymbolicStack(("syscall.Syscall", "os.(*File).Write"))
    assert ev.return_value is None


def test_exit_record_has_no_stack():
    (ev,) = parse_trace(_lines(_record(dir="exit", ret=0, stack_syms=None)))
    assert ev.direction is Direction.EXIT
    assert ev.return_value == 0
    assert ev.stack is None


def test_missing_nr_names_line():
    data = _lines(_record(), _record(seq=1, nr=None))
    with pytest.raises(TraceFormatError) as exc:
        parse_trace(data)
    assert exc.value.line == 2
    assert "'nr'" in str(exc.value)


def test_mixed_stack_encodings_rejected():
    data = _lines(_record(), _record(seq=1, stack_syms=None, stack_addrs=[0x1000]))
    with pytest.raises(TraceFormatError, match="mixes"):
        parse_trace(data)


def test_seq_assigned_when_absent():
    events = parse_trace(_lines(_record(seq=None), _record(seq=None), _record(seq=None)))
    assert [e.seq for e in events] == [0, 1, 2]


def test_non_increasing_seq_rejected():
    with pytest.raises(TraceFormatError, match="does not increase"):
        parse_trace(_lines(_record(seq=5), _record(seq=5)))


@pytest.mark.parametrize("bad", [
    {"dir": "sideways"},
    {"pid": 0},
    {"comm": ""},
    {"nr": "1"},
    {"nr": True},
    {"ret": 3},
    {"stack_syms": None},
    {"stack_syms": [""]},
])
def test_malformed_records(bad):
    with pytest.raises(TraceFormatError):
        parse_trace(_lines(_record(**bad)))


def test_exit_without_ret_rejected():
    with pytest.raises(TraceFormatError, match="ret"):
        parse_trace(_lines(_record(dir="exit", stack_syms=None)))


def test_invalid_json_line():
    with pytest.raises(TraceFormatError) as exc:
        parse_trace(b'{"seq": 0,\n')
    assert exc.value.line == 1


def test_unknown_keys_warn_or_fail():
    data = _lines(_record(extra=1))
    with pytest.warns(TraceFormatWarning):
        assert len(parse_trace(data)) == 1
    with pytest.raises(TraceFormatError, match="unknown keys"):
        parse_trace(data, strict=True)


def test_empty_stack_is_parseable():
    (ev,) = parse_trace(_lines(_record(stack_syms=[])))
    assert ev.stack == SymbolicStack(())


def test_empty_sequence_writes_empty_file():
    buf = io.BytesIO()
    write_trace([], buf)
    assert buf.getvalue() == b""


def test_single_event_round_trip_text_sink():
    ident = ProcessIdentity(3, 4, 1, "x", "x@0")
    ev = SyscallEvent(0, 5, ident, Direction.ENTER, 59, stack=RawStack((0x1000, 0x2000)))
    buf = io.StringIO()
    write_trace([ev], buf)
    assert buf.getvalue().count("\n") == 1
    assert parse_trace(buf.getvalue()) == [ev]


def test_replay_source(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_bytes(_lines(_record(), _record(seq=1, dir="exit", ret=0, stack_syms=None)))
    events = list(ReplaySource(str(path)).events())
    assert [e.direction for e in events] == [Direction.ENTER, Direction.EXIT]


identities = st.builds(
    ProcessIdentity,
    pid=st.integers(1, 2**22), tid=st.integers(1, 2**22), ppid=st.integers(0, 2**22),
    comm=st.text(min_size=1, max_size=15), program_id=st.text(max_size=20),
)


@st.composite
def event_sequences(draw, raw=None):
    raw = draw(st.booleans()) if raw is None else raw
    n = draw(st.integers(0, 30))
    seqs = sorted(draw(st.sets(st.integers(0, 10**9), min_size=n, max_size=n)))
    events = []
    for seq in seqs:
        ident = draw(identities)
        ts = draw(st.integers(0, 2**62))
        nr = draw(st.integers(0, 1000))
        if draw(st.booleans()):
            events.append(SyscallEvent(seq, ts, ident, Direction.EXIT, nr, return_value=draw(st.integers(-4095, 2**31))))
        elif raw:
            addrs = draw(st.lists(st.integers(0, 2**64 - 1), max_size=8))
            events.append(SyscallEvent(seq, ts, ident, Direction.ENTER, nr, stack=RawStack(tuple(addrs))))
        else:
            frames = draw(st.lists(st.text(min_size=1, max_size=30), max_size=8))
            events.append(SyscallEvent(seq, ts, ident, Direction.ENTER, nr, stack=SymbolicStack(tuple(frames))))
    return events


@settings(suppress_health_check=[HealthCheck.too_slow], deadline=None)
@given(event_sequences())
def test_round_trip_property(events):
    buf = io.BytesIO()
    write_trace(events, buf)
    parsed = parse_trace(buf.getvalue())
    assert parsed == events
    assert [e.seq for e in parsed] == sorted({e.seq for e in parsed})


def test_thousand_event_trace_is_byte_stable():
    from capwarden.synthetic import generate_trace

    events = generate_trace(random.Random(11), 1000)
    first = io.BytesIO()
    write_trace(events, first)
    reparsed = parse_trace(first.getvalue())
    assert reparsed == events
    second = io.BytesIO()
    write_trace(reparsed, second)
    assert first.getvalue() == second.getvalue()


@settings(max_examples=25, suppress_health_check=[HealthCheck.too_slow], deadline=None)
@given(event_sequences(raw=True))
def test_raw_round_trip_property(events):
    buf = io.BytesIO()
    write_trace(events, buf)
    assert parse_trace(buf.getvalue()) == events
