"""Capability taxonomy and the syscall-number mapping that feeds it."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Mapping, Optional, Tuple, Union

DEFAULT_ARCH = "x86_64"


class MappingError(ValueError):
    pass


class Category(enum.Enum):
    FILE = "File Capabilities"
    NETWORK = "Network Capabilities"
    EXECUTION = "Execution Capabilities"
    SYSTEM = "System State and Configuration"
    MEMORY = "Memory Operations"


class Capability(str, enum.Enum):
    CAP_FILE = "CAP_FILE"
    CAP_READ_FILE = "CAP_READ_FILE"
    CAP_WRITE_FILE = "CAP_WRITE_FILE"
    CAP_CREATE_FILE = "CAP_CREATE_FILE"
    CAP_DELETE_FILE = "CAP_DELETE_FILE"
    CAP_FILE_METADATA = "CAP_FILE_METADATA"
    CAP_CONNECT_REMOTE = "CAP_CONNECT_REMOTE"
    CAP_LISTEN_LOCAL = "CAP_LISTEN_LOCAL"
    CAP_SEND_DATA = "CAP_SEND_DATA"
    CAP_RECEIVE_DATA = "CAP_RECEIVE_DATA"
    CAP_EXEC = "CAP_EXEC"
    CAP_TERMINATE_PROCESS = "CAP_TERMINATE_PROCESS"
    CAP_READ_SYSTEM_STATE = "CAP_READ_SYSTEM_STATE"
    CAP_WRITE_SYSTEM_STATE = "CAP_WRITE_SYSTEM_STATE"
    CAP_RESOURCE_LIMITS = "CAP_RESOURCE_LIMITS"
    CAP_MEMORY_MANIPULATION = "CAP_MEMORY_MANIPULATION"
    CAP_DIRECT_IO = "CAP_DIRECT_IO"

    @property
    def category(self) -> Category:
        return _CATEGORY[self]

    @classmethod
    def parse(cls, name: str) -> "Capability":
        """Look up a capability by name, accepting legacy aliases."""
        name = CAPABILITY_ALIASES.get(name, name)
        try:
            return cls(name)
        except ValueError:
            raise MappingError(f"unknown capability {name!r}") from None


_CATEGORY = {
    **dict.fromkeys(
        [Capability.CAP_FILE, Capability.CAP_READ_FILE, Capability.CAP_WRITE_FILE,
         Capability.CAP_CREATE_FILE, Capability.CAP_DELETE_FILE, Capability.CAP_FILE_METADATA],
        Category.FILE),
    **dict.fromkeys(
        [Capability.CAP_CONNECT_REMOTE, Capability.CAP_LISTEN_LOCAL,
         Capability.CAP_SEND_DATA, Capability.CAP_RECEIVE_DATA],
        Category.NETWORK),
    **dict.fromkeys([Capability.CAP_EXEC, Capability.CAP_TERMINATE_PROCESS], Category.EXECUTION),
    **dict.fromkeys(
        [Capability.CAP_READ_SYSTEM_STATE, Capability.CAP_WRITE_SYSTEM_STATE,
         Capability.CAP_RESOURCE_LIMITS],
        Category.SYSTEM),
    **dict.fromkeys([Capability.CAP_MEMORY_MANIPULATION, Capability.CAP_DIRECT_IO], Category.MEMORY),
}

CAPABILITY_ALIASES = {"CAP_MODIFY_SYSTEM_STATE": "CAP_WRITE_SYSTEM_STATE"}


class _Unknown:
    """Marker for syscall numbers missing from the mapping."""

    __slots__ = ()
    value = "UNKNOWN"

    def __repr__(self) -> str:
        return "UNKNOWN"

    def __reduce__(self):
        return "UNKNOWN"


UNKNOWN = _Unknown()

CapabilityOrUnknown = Union[Capability, _Unknown]

# syscall-family names used by the engine for process tracking
EXEC_FAMILY = ("execve", "execveat")
CLONE_FAMILY = ("clone", "clone3", "fork", "vfork")


@dataclass(frozen=True)
class SyscallMapping:
    """Total map from syscall number to ``(name, capability)`` for one architecture."""

    table: Mapping[int, Tuple[str, Capability]]
    arch: str = DEFAULT_ARCH
    _by_name: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_name", {name: nr for nr, (name, _) in self.table.items()})

    def __len__(self) -> int:
        return len(self.table)

    def capability_of(self, nr: int) -> CapabilityOrUnknown:
        entry = self.table.get(nr)
        return UNKNOWN if entry is None else entry[1]

    def name_of(self, nr: int) -> Optional[str]:
        entry = self.table.get(nr)
        return None if entry is None else entry[0]

    def number_of(self, name: str) -> Optional[int]:
        return self._by_name.get(name)

    def numbers_of(self, names) -> frozenset:
        return frozenset(self._by_name[n] for n in names if n in self._by_name)


def capability_of(mapping: SyscallMapping, nr: int) -> CapabilityOrUnknown:
    return mapping.capability_of(nr)


def load_mapping(source: Union[bytes, str, "object"], arch: Optional[str] = None) -> SyscallMapping:
    """Parse ``<nr>\\t<name>\\t<CAPABILITY>`` lines.

    ``source`` may be bytes, text, or a readable stream. A ``# arch: <tag>``
    comment sets the architecture unless ``arch`` is passed explicitly.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    table: Dict[int, Tuple[str, Capability]] = {}
    names: Dict[str, int] = {}
    file_arch = None
    for lineno, line in enumerate(source.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if body.startswith("arch:"):
                file_arch = body[len("arch:"):].strip()
            continue
        parts = stripped.split("\t")
        if len(parts) != 3:
            raise MappingError(f"line {lineno}: expected 3 tab-separated fields")
        nr_text, name, cap_name = (p.strip() for p in parts)
        try:
            nr = int(nr_text)
        except ValueError:
            raise MappingError(f"line {lineno}: bad syscall number {nr_text!r}") from None
        if nr < 0 or not name:
            raise MappingError(f"line {lineno}: invalid entry")
        if nr in table:
            raise MappingError(f"line {lineno}: duplicate syscall number {nr}")
        if name in names:
            raise MappingError(f"line {lineno}: duplicate syscall name {name!r}")
        try:
            cap = Capability(cap_name)
        except ValueError:
            raise MappingError(f"line {lineno}: unknown capability {cap_name!r}") from None
        table[nr] = (name, cap)
        names[name] = nr
    return SyscallMapping(table, arch or file_arch or DEFAULT_ARCH)


def default_mapping_text() -> str:
    return resources.files("capwarden").joinpath(f"data/syscalls_{DEFAULT_ARCH}.tsv").read_text("utf-8")


_default: Optional[SyscallMapping] = None


def default_mapping() -> SyscallMapping:
    global _default
    if _default is None:
        _default = load_mapping(default_mapping_text())
    return _default
