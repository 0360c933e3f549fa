import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capwarden.capabilities import Capability, default_mapping
from capwarden.engine import (ALLOWED, RUNTIME, SUPPRESSED, VIOLATION, Action, Engine, EngineConfig,
                              EngineConfigError, Observation, StreamError, UnknownSyscallPolicy,
                              ViolationKind, run_analysis, run_enforcement)
from capwarden.policy import PolicyMetadata, PolicyMismatchError, merge, serialize
from capwarden.symbols import ClassifierConfig, load_symbols
from capwarden.synthetic import FRP_WRITE_STACK, RUNTIME_STACKS, TraceBuilder, generate_trace
from capwarden.trace import Direction, ProcessIdentity, RawStack, SymbolicStack, SyscallEvent

COBRA = "github.com/spf13/cobra"
GOLIB = "github.com/fatedier/golib/log"
KCP = "github.com/xtaci/kcp-go/v5"

APP = ProcessIdentity(100, 100, 1, "frps", "frps@0")
GOLIB_VIA_KCP = ("syscall.Syscall", "syscall.write", "os.(*File).Write", f"{GOLIB}.WriteLog",
                 f"{KCP}.(*UDPSession).Write", "main.main", "runtime.main")
COBRA_SEND = ("syscall.Syscall6", "syscall.sendto", f"{COBRA}.execute", "main.main", "runtime.main")


def fig2_trace(mapping):
    """Six events: the same attributed write twice, plus runtime-only noise."""
    b = TraceBuilder(mapping)
    b.enter(APP, "futex", RUNTIME_STACKS[0])
    b.enter(APP, "write", FRP_WRITE_STACK)
    b.enter(APP, "mmap", RUNTIME_STACKS[3])
    b.enter(APP, "nanosleep", RUNTIME_STACKS[2])
    b.enter(APP, "futex", RUNTIME_STACKS[0])
    b.enter(APP, "write", FRP_WRITE_STACK)
    return b.events


def test_six_event_analysis_gives_one_package(mapping):
    doc = run_analysis(fig2_trace(mapping), mapping)
    assert list(doc.packages) == [GOLIB]
    entry = doc.packages[GOLIB]
    assert entry.syscalls == {1}
    assert entry.capabilities == {Capability.CAP_WRITE_FILE}
    assert list(entry.call_paths[Capability.CAP_WRITE_FILE].values()) == [(COBRA, GOLIB)]
    assert doc.metadata == PolicyMetadata("x86_64", ClassifierConfig().digest(), None)


def test_empty_and_runtime_only_traces(mapping):
    assert run_analysis([], mapping).packages == {}
    b = TraceBuilder(mapping)
    for stack in RUNTIME_STACKS:
        b.enter(APP, "futex", stack)
    assert run_analysis(b.events, mapping).packages == {}


def test_learning_closure_on_fig2(mapping):
    trace = fig2_trace(mapping)
    report = run_enforcement(trace, run_analysis(trace, mapping), mapping)
    assert [v.verdict for v in report.verdicts] == [RUNTIME, ALLOWED, RUNTIME, RUNTIME, RUNTIME, ALLOWED]


def test_unauthorized_capability(mapping):
    b = TraceBuilder(mapping)
    b.enter(APP, "write", ("syscall.write", f"{COBRA}.execute", "main.main"))
    policy = run_analysis(b.events, mapping)
    assert policy.packages[COBRA].capabilities == {Capability.CAP_WRITE_FILE}
    b.enter(APP, "sendto", COBRA_SEND)
    report = run_enforcement(b.events, policy, mapping)
    (v,) = report.violations
    assert v.kind is ViolationKind.UNAUTHORIZED_CAPABILITY
    assert (v.package, v.capability) == (COBRA, "CAP_SEND_DATA")


def test_unapproved_call_path(mapping):
    b = TraceBuilder(mapping)
    b.enter(APP, "write", FRP_WRITE_STACK)
    policy = run_analysis(b.events, mapping)
    b.enter(APP, "write", GOLIB_VIA_KCP)
    (v,) = run_enforcement(b.events, policy, mapping).violations
    assert v.kind is ViolationKind.UNAPPROVED_CALL_PATH
    assert v.package == GOLIB
    assert v.capability == "CAP_WRITE_FILE"


def test_unknown_package(mapping):
    policy = run_analysis(fig2_trace(mapping), mapping)
    b = TraceBuilder(mapping)
    b.enter(APP, "write", ("syscall.write", f"{KCP}.Dial", "main.main"))
    (v,) = run_enforcement(b.events, policy, mapping).violations
    assert v.kind is ViolationKind.UNKNOWN_PACKAGE


def test_check_order_package_before_capability(mapping):
    policy = run_analysis(fig2_trace(mapping), mapping)
    b = TraceBuilder(mapping)
    b.enter(APP, "sendto", ("syscall.sendto", f"{KCP}.Dial", "main.main"))
    b.enter(APP, "sendto", FRP_WRITE_STACK)
    report = run_enforcement(b.events, policy, mapping)
    assert [v.kind for v in report.verdicts] == [ViolationKind.UNKNOWN_PACKAGE,
                                                 ViolationKind.UNAUTHORIZED_CAPABILITY]


def test_unknown_syscalls(mapping):
    b = TraceBuilder(mapping)
    b.enter(APP, "write", FRP_WRITE_STACK)
    policy = run_analysis(b.events, mapping)
    b.enter(APP, 1000, FRP_WRITE_STACK)
    (v,) = run_enforcement(b.events, policy, mapping).violations
    assert v.kind is ViolationKind.UNKNOWN_SYSCALL
    assert v.capability == "UNKNOWN"
    lenient = EngineConfig(unknown_syscall_policy=UnknownSyscallPolicy.IGNORE)
    assert run_enforcement(b.events, policy, mapping, lenient).violations == []
    # learned unknown numbers stay allowed under the default policy
    assert run_enforcement(b.events, run_analysis(b.events, mapping), mapping).violations == []


def test_failed_exec_stays_native(mapping):
    b = TraceBuilder(mapping)
    b.enter(APP, "execve", FRP_WRITE_STACK)
    b.exit(APP, "execve", -2)
    b.enter(APP, "write", FRP_WRITE_STACK)
    engine = Engine(mapping)
    for ev in b.events:
        engine.step(ev)
    assert engine.mode_of(APP.pid) == "native"
    assert engine.document.flat_binaries == {}
    assert engine.stats.exec_failures == 1


def test_committed_exec_switches_to_flat(mapping):
    b = TraceBuilder(mapping)
    b.enter(APP, "execve", FRP_WRITE_STACK)
    after = ProcessIdentity(APP.pid, APP.tid, APP.ppid, "iptables", "iptables@1")
    b.exit(after, "execve", 0)
    b.enter(after, "write", ("whatever",))
    b.enter(APP, "write", FRP_WRITE_STACK)  # residual from the old image
    doc = run_analysis(b.events, mapping)
    assert doc.packages[GOLIB].executed_binaries == {"iptables"}
    assert doc.flat_binaries == {"iptables": {Capability.CAP_WRITE_FILE}}
    assert doc.packages[GOLIB].capabilities == {Capability.CAP_EXEC}

    report = run_enforcement(b.events, doc, mapping)
    assert [v.verdict for v in report.verdicts] == [ALLOWED, ALLOWED]
    assert report.stats.dropped_residual == 1

    b.enter(after, "connect", ("whatever",))
    report = run_enforcement(b.events, doc, mapping)
    assert report.verdicts[-1].kind is ViolationKind.UNAUTHORIZED_FLAT_CAPABILITY
    assert report.verdicts[-1].package == "iptables"


def test_exec_exit_on_other_thread_does_not_commit(mapping):
    b = TraceBuilder(mapping)
    b.enter(APP, "execve", FRP_WRITE_STACK)
    other = ProcessIdentity(APP.pid, APP.tid + 1, APP.ppid, "sh", "sh@1")
    b.exit(other, "execve", 0)
    engine = Engine(mapping)
    for ev in b.events:
        engine.step(ev)
    assert engine.mode_of(APP.pid) == "native"


def test_fork_tracking_and_comm_filter(mapping):
    b = TraceBuilder(mapping)
    stranger = ProcessIdentity(500, 500, 1, "sshd", "sshd@0")
    b.enter(stranger, "write", FRP_WRITE_STACK)
    b.enter(APP, "clone", FRP_WRITE_STACK)
    b.exit(APP, "clone", 101)
    child = ProcessIdentity(101, 101, APP.pid, "worker", "frps@0")
    b.enter(child, "write", GOLIB_VIA_KCP)
    # grandchild discovered by ppid alone
    grandchild = ProcessIdentity(102, 102, 101, "worker", "frps@0")
    b.enter(grandchild, "read", ("syscall.read", f"{KCP}.Read", "main.main"))
    engine = Engine(mapping, EngineConfig(comm_filter=frozenset({"frps"})))
    for ev in b.events:
        engine.step(ev)
    assert engine.tracked_pids == {100, 101, 102}
    assert engine.stats.dropped_untracked == 1
    assert set(engine.document.packages) == {GOLIB, KCP}
    assert engine.document.packages[GOLIB].capabilities == {Capability.CAP_EXEC, Capability.CAP_WRITE_FILE}


def test_clone_failure_registers_nothing(mapping):
    b = TraceBuilder(mapping)
    b.enter(APP, "clone", FRP_WRITE_STACK)
    b.exit(APP, "clone", -11)
    engine = Engine(mapping, EngineConfig(comm_filter=frozenset({"frps"})))
    for ev in b.events:
        engine.step(ev)
    assert engine.tracked_pids == {100}


def test_terminate_suppresses_later_events(mapping):
    b = TraceBuilder(mapping)
    b.enter(APP, "write", FRP_WRITE_STACK)
    policy = run_analysis(b.events, mapping)
    sibling = ProcessIdentity(200, 200, 1, "frps", "frps@0")
    b.enter(APP, "write", GOLIB_VIA_KCP)
    b.enter(APP, "write", FRP_WRITE_STACK)
    b.enter(sibling, "write", FRP_WRITE_STACK)
    b.enter(APP, "futex", RUNTIME_STACKS[0])
    cfg = EngineConfig(action=Action.TERMINATE)
    report = run_enforcement(b.events, policy, mapping, cfg)
    assert [(v.pid, v.verdict) for v in report.verdicts] == [
        (100, ALLOWED), (100, VIOLATION), (100, SUPPRESSED), (200, ALLOWED), (100, SUPPRESSED)]
    logged = run_enforcement(b.events, policy, mapping)
    assert [v.verdict for v in logged.verdicts] == [ALLOWED, VIOLATION, ALLOWED, ALLOWED, RUNTIME]


def test_out_of_order_seq(mapping):
    events = fig2_trace(mapping)
    events[2], events[3] = events[3], events[2]
    with pytest.raises(StreamError, match="out of order"):
        run_analysis(events, mapping)


def test_per_pid_order_only(mapping):
    # interleaved pids with each pid's own sequence increasing are fine
    a = SyscallEvent(5, 0, APP, Direction.ENTER, 1, stack=SymbolicStack(FRP_WRITE_STACK))
    other = ProcessIdentity(300, 300, 1, "frps", "frps@0")
    b = SyscallEvent(3, 0, other, Direction.ENTER, 1, stack=SymbolicStack(FRP_WRITE_STACK))
    assert run_analysis([a, b], mapping).packages[GOLIB].syscalls == {1}


@pytest.fixture(scope="module")
def fixture_symbols(data_dir):
    return load_symbols((data_dir / "fixture.elf").read_bytes())


def raw_event(seq, addrs, nr=1):
    return SyscallEvent(seq, seq, APP, Direction.ENTER, nr, stack=RawStack(tuple(addrs)))


def test_raw_trace_with_symbols(mapping, fixture_symbols):
    events = [raw_event(0, [0x1048, 0x1010]), raw_event(1, [0x1010])]
    doc = run_analysis(events, mapping, symbols=fixture_symbols)
    assert list(doc.packages) == ["main"]
    assert doc.packages["main"].kind == "main"
    report = run_enforcement(events, doc, mapping, symbols=fixture_symbols)
    assert [v.verdict for v in report.verdicts] == [ALLOWED, ALLOWED]


def test_raw_trace_unresolvable_is_fail_closed(mapping, fixture_symbols):
    good = [raw_event(0, [0x1048, 0x1010])]
    doc = run_analysis(good + [raw_event(1, [0x9000, 0x1010])], mapping, symbols=fixture_symbols)
    assert doc.packages["main"].syscalls == {1}
    report = run_enforcement(good + [raw_event(1, [0x9000, 0x1010])], doc, mapping, symbols=fixture_symbols)
    assert report.verdicts[-1].kind is ViolationKind.UNKNOWN_PACKAGE
    permissive = EngineConfig(fail_closed_unresolved=False)
    report = run_enforcement(good + [raw_event(1, [0x9000, 0x1010])], doc, mapping, permissive,
                             symbols=fixture_symbols)
    assert report.violations == []


def test_raw_trace_without_symbols(mapping):
    with pytest.raises(EngineConfigError):
        run_analysis([raw_event(0, [0x1010])], mapping)


def test_mixed_stack_kinds_rejected(mapping, fixture_symbols):
    events = [raw_event(0, [0x1010]), SyscallEvent(1, 1, APP, Direction.ENTER, 1, stack=SymbolicStack(FRP_WRITE_STACK))]
    with pytest.raises(StreamError):
        run_analysis(events, mapping, symbols=fixture_symbols)


def test_metadata_mismatch_refuses_to_run(mapping):
    policy = run_analysis(fig2_trace(mapping), mapping)
    cfg = EngineConfig(classifier=ClassifierConfig(include_root_module=True))
    with pytest.raises(PolicyMismatchError):
        run_enforcement(fig2_trace(mapping), policy, mapping, cfg)


def test_verdict_records(mapping):
    b = TraceBuilder(mapping)
    b.enter(APP, "write", FRP_WRITE_STACK)
    policy = run_analysis(b.events, mapping)
    b.enter(APP, "write", GOLIB_VIA_KCP)
    report = run_enforcement(b.events, policy, mapping)
    rows = [json.loads(line) for line in report.to_jsonl().splitlines()]
    assert all(set(r) == {"seq", "pid", "verdict", "kind", "package", "capability", "path_hash"} for r in rows)
    assert rows[0]["path_hash"] == "cf8c7ab86065f738"
    assert rows[1]["kind"] == "UnapprovedCallPath"
    assert len(report.to_jsonl(only_flagged=True).splitlines()) == 1
    assert report.counts == {"UnapprovedCallPath": 1}


def test_analysis_step_returns_observations(mapping):
    engine = Engine(mapping)
    obs = engine.step(fig2_trace(mapping)[1])
    assert isinstance(obs, Observation)
    assert (obs.package, obs.capability, obs.path_hash) == (GOLIB, "CAP_WRITE_FILE", 0xCF8C7AB86065F738)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_closure_and_determinism(seed):
    mapping = default_mapping()
    trace = generate_trace(random.Random(seed), 200)
    policy = run_analysis(trace, mapping)
    first = run_enforcement(trace, policy, mapping)
    assert first.violations == []
    assert run_enforcement(trace, policy, mapping).verdicts == first.verdicts
    assert serialize(run_analysis(trace, mapping)) == serialize(policy)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 2**32))
def test_merge_is_monotone_for_enforcement(seed_a, seed_b):
    mapping = default_mapping()
    a = run_analysis(generate_trace(random.Random(seed_a), 150), mapping)
    b = run_analysis(generate_trace(random.Random(seed_b), 150), mapping)
    probe = generate_trace(random.Random(seed_a ^ seed_b), 150)
    under_a = {v.seq for v in run_enforcement(probe, a, mapping).violations}
    under_ab = {v.seq for v in run_enforcement(probe, merge(a, b), mapping).violations}
    assert under_ab <= under_a
