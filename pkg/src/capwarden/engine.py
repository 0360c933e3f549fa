"""Analysis and enforcement over a syscall event stream.

The same decision procedure backs both modes. Per event:

1. Processes are admitted when their comm is in the filter (or the filter is
   empty), or when their parent is already tracked. Clone-family exits with a
   positive return value register the child.
2. An exec-family enter records a pending transition on that thread; the
   matching exit commits it when the return value is non-negative. After a
   commit the process is checked against a flat per-binary allowlist, named
   after the comm seen on the exit record.
3. Enter events still carrying the pre-exec program image are dropped.
4. Everything else is attributed to a package via its stack, mapped to a
   capability, and either recorded (analysis) or checked (enforcement).
"""

from __future__ import annotations

import enum
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Set, Union

from .attribution import RUNTIME_INTERNAL, Attributed, attribute, attribute_symbols
from .capabilities import CLONE_FAMILY, EXEC_FAMILY, UNKNOWN, Capability, SyscallMapping
from .policy import PolicyDocument, PolicyMetadata, PolicyMismatchError
from .symbols import ClassifierConfig, PackageId, SymbolTable, UnresolvableAddressError, resolve_address
from .trace import Direction, RawStack, SymbolicStack, SyscallEvent

log = logging.getLogger(__name__)

_CACHE_LIMIT = 1 << 16


class StreamError(ValueError):
    """Event stream violates ordering or homogeneity requirements."""


class EngineConfigError(ValueError):
    pass


class Action(enum.Enum):
    LOG = "log"
    TERMINATE = "terminate"


class UnknownSyscallPolicy(enum.Enum):
    VIOLATE = "violate"
    IGNORE = "ignore"


class ViolationKind(enum.Enum):
    UNKNOWN_PACKAGE = "UnknownPackage"
    UNAUTHORIZED_CAPABILITY = "UnauthorizedCapability"
    UNAPPROVED_CALL_PATH = "UnapprovedCallPath"
    UNAUTHORIZED_FLAT_CAPABILITY = "UnauthorizedFlatCapability"
    UNKNOWN_SYSCALL = "UnknownSyscall"


ALLOWED = "allowed"
RUNTIME = "runtime_internal"
VIOLATION = "violation"
SUPPRESSED = "suppressed"


@dataclass(frozen=True)
class EngineConfig:
    comm_filter: frozenset = frozenset()
    action: Action = Action.LOG
    classifier: ClassifierConfig = ClassifierConfig()
    unknown_syscall_policy: UnknownSyscallPolicy = UnknownSyscallPolicy.VIOLATE
    plaintext_paths: bool = True
    # False: drop unresolvable raw frames instead of rejecting the whole stack
    fail_closed_unresolved: bool = True

    @property
    def include_root_module(self) -> bool:
        return self.classifier.include_root_module


class Verdict(NamedTuple):
    seq: int
    pid: int
    verdict: str
    kind: Optional[ViolationKind] = None
    package: Optional[str] = None
    capability: Optional[str] = None
    path_hash: Optional[int] = None

    @property
    def is_violation(self) -> bool:
        return self.verdict == VIOLATION

    def to_record(self) -> dict:
        return {
            "seq": self.seq,
            "pid": self.pid,
            "verdict": self.verdict,
            "kind": self.kind.value if self.kind is not None else None,
            "package": self.package,
            "capability": self.capability,
            "path_hash": format(self.path_hash, "016x") if self.path_hash is not None else None,
        }


class Observation(NamedTuple):
    seq: int
    pid: int
    package: str
    syscall_nr: int
    capability: str
    path_hash: Optional[int]


class _Proc:
    __slots__ = ("pid", "program_id", "flat", "residual", "pending", "last_seq", "terminated")

    def __init__(self, pid: int, program_id: str) -> None:
        self.pid = pid
        self.program_id = program_id
        self.flat: Optional[str] = None
        self.residual: Set[str] = set()
        self.pending: Dict[int, Optional[PackageId]] = {}
        self.last_seq = -1
        self.terminated = False

    def fork(self, child_pid: int) -> "_Proc":
        child = _Proc(child_pid, self.program_id)
        child.flat = self.flat
        child.residual = set(self.residual)
        return child


@dataclass
class EngineStats:
    events: int = 0
    dropped_untracked: int = 0
    dropped_residual: int = 0
    unattributable: int = 0
    runtime_internal: int = 0
    exec_commits: int = 0
    exec_failures: int = 0


@dataclass
class VerdictReport:
    verdicts: List[Verdict] = field(default_factory=list)
    stats: EngineStats = field(default_factory=EngineStats)

    @property
    def violations(self) -> List[Verdict]:
        return [v for v in self.verdicts if v.verdict == VIOLATION]

    @property
    def counts(self) -> Counter:
        return Counter(v.kind.value for v in self.verdicts if v.kind is not None)

    @property
    def verdict_counts(self) -> Counter:
        return Counter(v.verdict for v in self.verdicts)

    def to_jsonl(self, only_flagged: bool = False) -> str:
        rows = self.verdicts
        if only_flagged:
            rows = [v for v in rows if v.verdict in (VIOLATION, SUPPRESSED)]
        return "".join(json.dumps(v.to_record(), sort_keys=True) + "\n" for v in rows)


class Engine:
    """Stateful consumer of one event stream.

    With ``policy`` unset the engine runs in analysis mode and accumulates
    into ``self.document``; otherwise ``step`` returns verdicts.
    """

    def __init__(self, mapping: SyscallMapping, config: EngineConfig = EngineConfig(),
                 symbols: Optional[SymbolTable] = None, policy: Optional[PolicyDocument] = None) -> None:
        self.mapping = mapping
        self.config = config
        self.symbols = symbols
        self.policy = policy
        self.enforcing = policy is not None
        self.document = PolicyDocument(metadata=PolicyMetadata(mapping.arch, config.classifier.digest()))
        self.stats = EngineStats()
        self._caps = {nr: cap for nr, (_, cap) in mapping.table.items()}
        self._exec_nrs = mapping.numbers_of(EXEC_FAMILY)
        self._clone_nrs = mapping.numbers_of(CLONE_FAMILY)
        self._procs: Dict[int, _Proc] = {}
        self._cache: dict = {}
        self._stack_kind: Optional[type] = None
        self._terminate = config.action is Action.TERMINATE
        self._ignore_unknown = config.unknown_syscall_policy is UnknownSyscallPolicy.IGNORE
        if self.enforcing:
            check_compatible(policy, mapping, config)

    # -- process tracking --------------------------------------------------

    def _admit(self, event: SyscallEvent) -> Optional[_Proc]:
        ident = event.identity
        parent = self._procs.get(ident.ppid)
        if parent is not None:
            proc = parent.fork(ident.pid)
            if proc.flat is None:
                proc.program_id = ident.program_id
        elif not self.config.comm_filter or ident.comm in self.config.comm_filter:
            proc = _Proc(ident.pid, ident.program_id)
        else:
            return None
        self._procs[ident.pid] = proc
        return proc

    @property
    def tracked_pids(self) -> Set[int]:
        return set(self._procs)

    def mode_of(self, pid: int) -> Optional[str]:
        """``"native"``, ``"flat:<binary>"``, or None for untracked pids."""
        proc = self._procs.get(pid)
        if proc is None:
            return None
        return "native" if proc.flat is None else f"flat:{proc.flat}"

    def _on_exit(self, proc: _Proc, event: SyscallEvent) -> None:
        nr = event.syscall_nr
        ret = event.return_value
        if nr in self._clone_nrs:
            if ret > 0 and ret not in self._procs:
                self._procs[ret] = proc.fork(ret)
            return
        if nr not in self._exec_nrs:
            return
        tid = event.identity.tid
        if tid not in proc.pending:
            return
        source = proc.pending.pop(tid)
        if ret < 0:
            self.stats.exec_failures += 1
            return
        name = event.identity.comm
        proc.residual.add(proc.program_id)
        proc.program_id = event.identity.program_id
        proc.residual.discard(proc.program_id)
        proc.flat = name
        proc.pending.clear()
        self.stats.exec_commits += 1
        if not self.enforcing:
            self.document.record_exec(source, name)

    # -- attribution -------------------------------------------------------

    def _attribute(self, stack):
        kind = type(stack)
        if kind is not self._stack_kind:
            if self._stack_kind is not None:
                raise StreamError("trace mixes raw and symbolic stacks")
            if kind is RawStack and self.symbols is None:
                raise EngineConfigError("raw stacks need a symbol table (--binary)")
            self._stack_kind = kind
        key = stack.frames if kind is SymbolicStack else stack.addresses
        try:
            return self._cache[key]
        except KeyError:
            pass
        if not key:
            result = None
        elif kind is SymbolicStack:
            result = attribute_symbols(key, self.config.classifier)
        else:
            result = self._attribute_raw(key)
        if len(self._cache) >= _CACHE_LIMIT:
            self._cache.clear()
        self._cache[key] = result
        return result

    def _attribute_raw(self, addresses):
        frames = []
        for addr in addresses:
            try:
                frames.append(resolve_address(self.symbols, addr, self.config.classifier))
            except UnresolvableAddressError:
                if self.config.fail_closed_unresolved:
                    log.debug("unresolvable address %#x", addr)
                    return None
        if not frames:
            return None
        return attribute(frames, self.config.classifier)

    # -- the step function -------------------------------------------------

    def step(self, event: SyscallEvent) -> Union[Verdict, Observation, None]:
        self.stats.events += 1
        pid = event.identity.pid
        proc = self._procs.get(pid)
        if proc is None:
            proc = self._admit(event)
            if proc is None:
                self.stats.dropped_untracked += 1
                return None
        if event.seq < proc.last_seq:
            raise StreamError(f"seq {event.seq} out of order for pid {pid} (last {proc.last_seq})")
        proc.last_seq = event.seq

        if event.direction is Direction.EXIT:
            if not proc.terminated:
                self._on_exit(proc, event)
            return None
        if proc.terminated:
            return Verdict(event.seq, pid, SUPPRESSED)
        if proc.flat is not None and event.identity.program_id in proc.residual:
            self.stats.dropped_residual += 1
            return None

        nr = event.syscall_nr
        cap = self._caps.get(nr, UNKNOWN)
        if proc.flat is not None:
            source = None
            result = self._flat(proc, event, cap)
        else:
            result, source = self._native(event, cap)
        if nr in self._exec_nrs:
            proc.pending[event.identity.tid] = source
        if self._terminate and result is not None and result.verdict == VIOLATION:
            proc.terminated = True
        return result

    def _flat(self, proc: _Proc, event: SyscallEvent, cap):
        name = proc.flat
        if not self.enforcing:
            if cap is UNKNOWN:
                self.stats.unattributable += 1
                return None
            self.document.record_flat_observation(name, cap)
            return Observation(event.seq, proc.pid, name, event.syscall_nr, cap.value, None)
        if cap is UNKNOWN:
            if self._ignore_unknown:
                return Verdict(event.seq, proc.pid, ALLOWED, None, name, UNKNOWN.value)
            return Verdict(event.seq, proc.pid, VIOLATION, ViolationKind.UNKNOWN_SYSCALL, name, UNKNOWN.value)
        allowed = self.policy.flat_binaries.get(name)
        if allowed is None or cap not in allowed:
            return Verdict(event.seq, proc.pid, VIOLATION, ViolationKind.UNAUTHORIZED_FLAT_CAPABILITY,
                           name, cap.value)
        return Verdict(event.seq, proc.pid, ALLOWED, None, name, cap.value)

    def _native(self, event: SyscallEvent, cap):
        seq, pid = event.seq, event.identity.pid
        attribution = self._attribute(event.stack)
        if attribution is None:
            self.stats.unattributable += 1
            if not self.enforcing:
                return None, None
            return Verdict(seq, pid, VIOLATION, ViolationKind.UNKNOWN_PACKAGE, None, cap.value), None
        if attribution is RUNTIME_INTERNAL:
            self.stats.runtime_internal += 1
            return (Verdict(seq, pid, RUNTIME) if self.enforcing else None), None

        terminal = attribution.terminal
        path = attribution.path
        if not self.enforcing:
            self.document.record_observation(terminal, event.syscall_nr, cap, path, self.config.plaintext_paths)
            return Observation(seq, pid, terminal.path, event.syscall_nr, cap.value, path.hash), terminal

        entry = self.policy.packages.get(terminal.path)
        if entry is None:
            kind = ViolationKind.UNKNOWN_PACKAGE
        elif cap is UNKNOWN:
            if self._ignore_unknown or event.syscall_nr in entry.syscalls:
                kind = None
            else:
                kind = ViolationKind.UNKNOWN_SYSCALL
        elif cap not in entry.capabilities:
            kind = ViolationKind.UNAUTHORIZED_CAPABILITY
        elif not entry.allows(cap, path.hash):
            kind = ViolationKind.UNAPPROVED_CALL_PATH
        else:
            kind = None
        verdict = ALLOWED if kind is None else VIOLATION
        return Verdict(seq, pid, verdict, kind, terminal.path, cap.value, path.hash), terminal


def check_compatible(policy: PolicyDocument, mapping: SyscallMapping, config: EngineConfig) -> None:
    expected = PolicyMetadata(mapping.arch, config.classifier.digest())
    if not policy.metadata.compatible(expected):
        raise PolicyMismatchError(
            f"policy was learned under arch={policy.metadata.arch!r} "
            f"classifier={policy.metadata.classifier_digest!r}; current arch={mapping.arch!r} "
            f"classifier={expected.classifier_digest!r}"
        )


def run_analysis(events: Iterable[SyscallEvent], mapping: SyscallMapping,
                 config: EngineConfig = EngineConfig(), symbols: Optional[SymbolTable] = None,
                 created_at: Optional[str] = None) -> PolicyDocument:
    engine = Engine(mapping, config, symbols)
    step = engine.step
    for event in events:
        step(event)
    engine.document.metadata.created_at = created_at
    return engine.document


def run_enforcement(events: Iterable[SyscallEvent], policy: PolicyDocument, mapping: SyscallMapping,
                    config: EngineConfig = EngineConfig(),
                    symbols: Optional[SymbolTable] = None) -> VerdictReport:
    engine = Engine(mapping, config, symbols, policy)
    step = engine.step
    verdicts: List[Verdict] = []
    append = verdicts.append
    for event in events:
        v = step(event)
        if v is not None:
            append(v)
    return VerdictReport(verdicts, engine.stats)
