"""Deterministic synthetic traces for tests, acceptance runs and benchmarks."""

from __future__ import annotations

import random
from typing import Dict, List, Optional, Sequence, Tuple

from .capabilities import Capability, SyscallMapping, default_mapping
from .trace import Direction, ProcessIdentity, SymbolicStack, SyscallEvent

# The stack from the motivating frp example, innermost first.
FRP_WRITE_STACK: Tuple[str, ...] = (
    "syscall.Syscall",
    "syscall.write",
    "internal/poll.(*FD).Write",
    "os.(*File).Write",
    "github.com/fatedier/golib/log.WriteLog",
    "github.com/fatedier/golib/log.log",
    "main.runServer",
    "main.init.func1",
    "github.com/spf13/cobra.execute",
    "github.com/spf13/cobra.ExecuteC",
    "main.Execute",
    "main.main",
    "runtime.main",
    "runtime.goexit.abi0",
)

RUNTIME_STACKS: Tuple[Tuple[str, ...], ...] = (
    ("runtime.futex", "runtime.futexsleep", "runtime.notesleep", "runtime.stopm", "runtime.mstart"),
    ("runtime.systemstack", "runtime.gcBgMarkWorker", "runtime.goexit.abi0"),
    ("runtime.netpoll", "runtime.findRunnable", "runtime.schedule", "runtime.mstart"),
    ("runtime.mmap", "runtime.sysAlloc", "runtime.mallocgc", "runtime.goexit.abi0"),
)

THIRD_PARTY = (
    "github.com/spf13/cobra",
    "github.com/fatedier/golib/log",
    "github.com/fatedier/frp/client",
    "github.com/xtaci/kcp-go/v5",
    "github.com/gorilla/websocket",
    "go.etcd.io/bbolt",
    "golang.org/x/net/http2",
    "google.golang.org/grpc",
    "gopkg.in/ini.v1",
    "github.com/prometheus/client_golang/prometheus",
)

STDLIB_WRAPPERS: Dict[Capability, Tuple[str, ...]] = {
    Capability.CAP_WRITE_FILE: ("syscall.Syscall", "syscall.write", "internal/poll.(*FD).Write", "os.(*File).Write"),
    Capability.CAP_READ_FILE: ("syscall.Syscall", "syscall.read", "internal/poll.(*FD).Read", "os.(*File).Read"),
    Capability.CAP_CONNECT_REMOTE: ("syscall.Syscall", "syscall.connect", "net.(*netFD).connect", "net.(*sysDialer).dialTCP"),
    Capability.CAP_SEND_DATA: ("syscall.Syscall6", "syscall.sendto", "internal/poll.(*FD).WriteTo", "net.(*UDPConn).WriteTo"),
    Capability.CAP_EXEC: ("syscall.rawVforkSyscall", "syscall.forkExec", "os.StartProcess", "os/exec.(*Cmd).Start"),
}

FLAT_BINARIES = ("iptables", "sh", "git", "tar")

# Capabilities the generator draws syscalls from; excludes exec and clone
# families, which the generator emits explicitly with their exit records.
_PLAIN_CAPS = tuple(c for c in Capability if c is not Capability.CAP_EXEC)


def go_symbol(package: str, func: str) -> str:
    """Linker symbol for ``func`` in ``package``, escaping dots in the last path element."""
    head, sep, last = package.rpartition("/")
    return f"{head}{sep}{last.replace('.', '%2e')}.{func}"


def _syscalls_by_capability(mapping: SyscallMapping, exclude=()) -> Dict[Capability, List[int]]:
    out: Dict[Capability, List[int]] = {}
    for nr, (name, cap) in sorted(mapping.table.items()):
        if name in exclude:
            continue
        out.setdefault(cap, []).append(nr)
    return out


class TraceBuilder:
    """Accumulates well-formed events with consecutive sequence numbers."""

    def __init__(self, mapping: Optional[SyscallMapping] = None, start_seq: int = 0) -> None:
        self.mapping = mapping or default_mapping()
        self.events: List[SyscallEvent] = []
        self.seq = start_seq
        self.ts = 1_000_000

    def _nr(self, syscall) -> int:
        if isinstance(syscall, int):
            return syscall
        nr = self.mapping.number_of(syscall)
        if nr is None:
            raise KeyError(syscall)
        return nr

    def _push(self, event: SyscallEvent) -> SyscallEvent:
        self.events.append(event)
        self.seq += 1
        self.ts += 1000
        return event

    def enter(self, ident: ProcessIdentity, syscall, frames: Sequence[str]) -> SyscallEvent:
        return self._push(SyscallEvent(self.seq, self.ts, ident, Direction.ENTER, self._nr(syscall),
                                       stack=SymbolicStack(tuple(frames))))

    def exit(self, ident: ProcessIdentity, syscall, ret: int) -> SyscallEvent:
        return self._push(SyscallEvent(self.seq, self.ts, ident, Direction.EXIT, self._nr(syscall),
                                       return_value=ret))


def random_stack(rng: random.Random, cap: Capability, packages: Sequence[str],
                 depth: int = 3) -> Tuple[str, ...]:
    """Innermost-first stack: stdlib wrappers, a third-party chain, main, runtime."""
    wrappers = STDLIB_WRAPPERS.get(cap, ("syscall.Syscall", "syscall.RawSyscall6"))
    chain = [rng.choice(packages) for _ in range(rng.randint(1, depth))]
    frames = list(wrappers)
    for i, pkg in enumerate(chain):
        frames.append(go_symbol(pkg, f"fn{rng.randint(0, 3)}"))
        if rng.random() < 0.3:
            frames.append(go_symbol(pkg, f"(*T).helper{i}"))
        if rng.random() < 0.2:
            frames.append("main.glue")
    frames += ["main.main", "runtime.main", "runtime.goexit.abi0"]
    return tuple(frames)


def generate_trace(rng: random.Random, n_events: int = 300, mapping: Optional[SyscallMapping] = None,
                   packages: Sequence[str] = THIRD_PARTY, n_stacks: int = 24,
                   comm: str = "app") -> List[SyscallEvent]:
    """Random trace mixing packages, runtime-only stacks, forks, and execs.

    Execs fail about a third of the time; successful ones switch the process
    to flat mode and leave a few residual events from the old image. Unknown
    syscall numbers appear only in native-mode events.
    """
    mapping = mapping or default_mapping()
    builder = TraceBuilder(mapping)
    by_cap = _syscalls_by_capability(mapping, exclude=("execve", "execveat", "clone", "clone3",
                                                       "fork", "vfork"))
    stacks = []
    for _ in range(n_stacks):
        cap = rng.choice(_PLAIN_CAPS)
        stacks.append((cap, random_stack(rng, cap, packages)))

    next_pid = 100
    root = ProcessIdentity(next_pid, next_pid, 1, comm, f"{comm}@0")
    procs: List[ProcessIdentity] = [root]
    flat: Dict[int, bool] = {root.pid: False}
    stale: Dict[int, ProcessIdentity] = {}
    # an unrelated process the comm filter would drop
    noise = ProcessIdentity(9000, 9000, 1, "noise", "noise@0")

    while len(builder.events) < n_events:
        ident = rng.choice(procs)
        roll = rng.random()
        if roll < 0.05:
            builder.enter(noise, "write", FRP_WRITE_STACK)
        elif roll < 0.12:
            builder.enter(ident, rng.choice(by_cap[Capability.CAP_READ_SYSTEM_STATE]), rng.choice(RUNTIME_STACKS))
        elif roll < 0.17 and len(procs) < 8:
            frames = random_stack(rng, Capability.CAP_EXEC, packages)
            builder.enter(ident, "clone", frames)
            next_pid += 1
            builder.exit(ident, "clone", next_pid)
            child = ProcessIdentity(next_pid, next_pid, ident.pid, ident.comm, ident.program_id)
            procs.append(child)
            flat[child.pid] = flat[ident.pid]
        elif roll < 0.21:
            frames = random_stack(rng, Capability.CAP_EXEC, packages)
            builder.enter(ident, "execve", frames)
            if rng.random() < 0.35:
                builder.exit(ident, "execve", -2)
                continue
            binary = rng.choice(FLAT_BINARIES)
            new = ProcessIdentity(ident.pid, ident.tid, ident.ppid, binary, f"{binary}@{builder.seq}")
            builder.exit(new, "execve", 0)
            stale[ident.pid] = ident
            procs[procs.index(ident)] = new
            flat[ident.pid] = True
        elif roll < 0.24 and ident.pid in stale:
            # residual syscall from a thread of the replaced image
            builder.enter(stale[ident.pid], "futex", RUNTIME_STACKS[0][:2] + (go_symbol("github.com/gorilla/websocket", "fn0"),))
        elif roll < 0.26 and not flat[ident.pid]:
            cap, frames = rng.choice(stacks)
            builder.enter(ident, rng.choice((335, 500, 1000)), frames)
        else:
            cap, frames = rng.choice(stacks)
            builder.enter(ident, rng.choice(by_cap[cap]), frames)
    return builder.events


def generate_throughput_trace(n_events: int, seed: int = 0, mapping: Optional[SyscallMapping] = None,
                              n_stacks: int = 256) -> List[SyscallEvent]:
    """Single-process symbolic trace with a fixed pool of realistic stacks."""
    mapping = mapping or default_mapping()
    rng = random.Random(seed)
    by_cap = _syscalls_by_capability(mapping, exclude=("execve", "execveat", "clone", "clone3",
                                                       "fork", "vfork"))
    pool = []
    for _ in range(n_stacks):
        cap = rng.choice(_PLAIN_CAPS)
        pool.append((tuple(by_cap[cap]), SymbolicStack(random_stack(rng, cap, THIRD_PARTY, depth=4))))
    ident = ProcessIdentity(4242, 4242, 1, "bench", "bench@0")
    events = []
    choice = rng.choice
    for seq in range(n_events):
        nrs, stack = choice(pool)
        events.append(SyscallEvent(seq, seq * 1000, ident, Direction.ENTER, choice(nrs), stack=stack))
    return events
