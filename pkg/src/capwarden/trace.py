"""Syscall event model and the line-delimited JSON trace format.

One record per line::

    {"seq": 3, "ts_ns": 1000, "pid": 10, "tid": 10, "ppid": 1, "comm": "frps",
     "program_id": "frps@1", "dir": "enter", "nr": 1,
     "stack_syms": ["syscall.Syscall", "os.(*File).Write", "main.main"]}

Stacks are innermost-first. ``stack_addrs`` carries raw return addresses that
must be symbolized against the traced binary; ``stack_syms`` carries already
resolved function names. A single trace uses one encoding throughout.
"""

from __future__ import annotations

import enum
import io
import json
import warnings
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, List, Optional, Protocol, Sequence, Tuple, Union


class TraceFormatError(ValueError):
    """Malformed trace record; ``line`` is 1-based."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TraceFormatWarning(UserWarning):
    pass


class Direction(enum.Enum):
    ENTER = "enter"
    EXIT = "exit"


@dataclass(frozen=True, slots=True)
class ProcessIdentity:
    pid: int
    tid: int
    ppid: int
    comm: str
    program_id: str

    def __post_init__(self) -> None:
        if self.pid <= 0 or self.tid <= 0 or self.ppid < 0:
            raise ValueError(f"invalid ids pid={self.pid} tid={self.tid} ppid={self.ppid}")
        if not self.comm:
            raise ValueError("comm must be non-empty")


@dataclass(frozen=True, slots=True)
class RawStack:
    """Return addresses, innermost first."""

    addresses: Tuple[int, ...]


@dataclass(frozen=True, slots=True)
class SymbolicStack:
    """Fully qualified function names, innermost first."""

    frames: Tuple[str, ...]


StackPayload = Union[RawStack, SymbolicStack]


@dataclass(frozen=True, slots=True)
class SyscallEvent:
    seq: int
    timestamp_ns: int
    identity: ProcessIdentity
    direction: Direction
    syscall_nr: int
    return_value: Optional[int] = None
    stack: Optional[StackPayload] = None

    def __post_init__(self) -> None:
        if self.direction is Direction.ENTER:
            if self.stack is None or self.return_value is not None:
                raise ValueError("enter events carry a stack and no return value")
        elif self.return_value is None or self.stack is not None:
            raise ValueError("exit events carry a return value and no stack")

    @property
    def pid(self) -> int:
        return self.identity.pid


class CaptureSource(Protocol):
    """Anything that yields events satisfying the trace invariants.

    A live adapter (kernel tracepoints feeding a ring buffer) implements this
    by delivering Enter events with stacks, Exit events for exec- and
    clone-family syscalls, comm filtering applied at the source, and per-pid
    ordering.
    """

    def events(self) -> Iterator[SyscallEvent]: ...


class ReplaySource:
    """Capture source backed by a recorded trace file."""

    def __init__(self, path: str, strict: bool = False) -> None:
        self.path = path
        self.strict = strict

    def events(self) -> Iterator[SyscallEvent]:
        with open(self.path, "rb") as fh:
            yield from iter_trace(fh, strict=self.strict)


_KNOWN_KEYS = frozenset(
    ("seq", "ts_ns", "pid", "tid", "ppid", "comm", "program_id", "dir", "nr", "ret",
     "stack_addrs", "stack_syms")
)
_REQUIRED = ("ts_ns", "pid", "tid", "ppid", "comm", "program_id", "dir", "nr")


def _int(record: dict, key: str, lineno: int) -> int:
    value = record[key]
    if type(value) is not int:
        raise TraceFormatError(f"{key!r} must be an integer", lineno)
    return value


def _decode(record: object, lineno: int, strict: bool, prev_seq: Optional[int]) -> SyscallEvent:
    if not isinstance(record, dict):
        raise TraceFormatError("record is not a JSON object", lineno)
    for key in _REQUIRED:
        if key not in record:
            raise TraceFormatError(f"missing key {key!r}", lineno)
    unknown = record.keys() - _KNOWN_KEYS
    if unknown:
        msg = f"unknown keys {sorted(unknown)}"
        if strict:
            raise TraceFormatError(msg, lineno)
        warnings.warn(f"line {lineno}: {msg} ignored", TraceFormatWarning, stacklevel=4)

    if "seq" in record:
        seq = _int(record, "seq", lineno)
    else:
        seq = 0 if prev_seq is None else prev_seq + 1
    if prev_seq is not None and seq <= prev_seq:
        raise TraceFormatError(f"seq {seq} does not increase (previous {prev_seq})", lineno)

    comm = record["comm"]
    program_id = record["program_id"]
    if not isinstance(comm, str) or not isinstance(program_id, str):
        raise TraceFormatError("'comm' and 'program_id' must be strings", lineno)
    try:
        identity = ProcessIdentity(
            _int(record, "pid", lineno), _int(record, "tid", lineno),
            _int(record, "ppid", lineno), comm, program_id,
        )
    except ValueError as exc:
        if isinstance(exc, TraceFormatError):
            raise
        raise TraceFormatError(str(exc), lineno) from None

    try:
        direction = Direction(record["dir"])
    except (ValueError, TypeError):
        raise TraceFormatError(f"'dir' must be 'enter' or 'exit', got {record['dir']!r}", lineno) from None

    nr = _int(record, "nr", lineno)
    ts = _int(record, "ts_ns", lineno)
    has_addrs = "stack_addrs" in record
    has_syms = "stack_syms" in record

    if direction is Direction.EXIT:
        if has_addrs or has_syms:
            raise TraceFormatError("exit record must not carry a stack", lineno)
        if "ret" not in record:
            raise TraceFormatError("exit record missing 'ret'", lineno)
        return SyscallEvent(seq, ts, identity, direction, nr, return_value=_int(record, "ret", lineno))

    if "ret" in record:
        raise TraceFormatError("enter record must not carry 'ret'", lineno)
    if has_addrs == has_syms:
        raise TraceFormatError("enter record needs exactly one of 'stack_addrs', 'stack_syms'", lineno)
    if has_addrs:
        addrs = record["stack_addrs"]
        if not isinstance(addrs, list) or any(type(a) is not int or a < 0 for a in addrs):
            raise TraceFormatError("'stack_addrs' must be an array of non-negative integers", lineno)
        stack: StackPayload = RawStack(tuple(addrs))
    else:
        syms = record["stack_syms"]
        if not isinstance(syms, list) or any(not isinstance(s, str) or not s for s in syms):
            raise TraceFormatError("'stack_syms' must be an array of non-empty strings", lineno)
        stack = SymbolicStack(tuple(syms))
    return SyscallEvent(seq, ts, identity, direction, nr, stack=stack)


def _lines(stream: Union[IO[bytes], IO[str], bytes, str, Iterable]) -> Iterable:
    if isinstance(stream, (bytes, str)):
        return stream.splitlines()
    return stream


def iter_trace(stream, strict: bool = False) -> Iterator[SyscallEvent]:
    """Lazily decode a trace from a byte/text stream, bytes, str, or iterable of lines."""
    prev_seq: Optional[int] = None
    stack_kind: Optional[type] = None
    for lineno, line in enumerate(_lines(stream), start=1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise TraceFormatError(f"invalid UTF-8: {exc}", lineno) from None
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"invalid JSON: {exc.msg}", lineno) from None
        event = _decode(record, lineno, strict, prev_seq)
        if event.stack is not None:
            kind = type(event.stack)
            if stack_kind is None:
                stack_kind = kind
            elif kind is not stack_kind:
                raise TraceFormatError("trace mixes raw and symbolic stacks", lineno)
        prev_seq = event.seq
        yield event


def parse_trace(stream, strict: bool = False) -> List[SyscallEvent]:
    return list(iter_trace(stream, strict=strict))


def encode_event(event: SyscallEvent) -> str:
    ident = event.identity
    record = {
        "seq": event.seq,
        "ts_ns": event.timestamp_ns,
        "pid": ident.pid,
        "tid": ident.tid,
        "ppid": ident.ppid,
        "comm": ident.comm,
        "program_id": ident.program_id,
        "dir": event.direction.value,
        "nr": event.syscall_nr,
    }
    if event.direction is Direction.EXIT:
        record["ret"] = event.return_value
    elif isinstance(event.stack, RawStack):
        record["stack_addrs"] = list(event.stack.addresses)
    else:
        record["stack_syms"] = list(event.stack.frames)
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def write_trace(events: Iterable[SyscallEvent], sink: Union[IO[bytes], IO[str]]) -> None:
    text = isinstance(sink, io.TextIOBase)
    for event in events:
        line = encode_event(event) + "\n"
        sink.write(line if text else line.encode("utf-8"))


def stack_kind(events: Sequence[SyscallEvent]) -> Optional[type]:
    """``RawStack``/``SymbolicStack`` for the first stacked event, or None."""
    for event in events:
        if event.stack is not None:
            return type(event.stack)
    return None
