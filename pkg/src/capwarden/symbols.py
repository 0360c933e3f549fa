"""ELF symbol tables, address resolution, and Go package trust classes."""

from __future__ import annotations

import bisect
import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, List, Tuple, Union

from . import _kernels

# Padding tolerated between a symbol's end and the next symbol's start.
DEFAULT_GAP_SLACK = 64

_SHT_SYMTAB = 2
_STT_FUNC = 2
_SYM = struct.Struct("<IBBHQQ")


class ELFFormatError(ValueError):
    """Input is not a little-endian ELF64 file, or is truncated."""


class SymbolsUnavailableError(LookupError):
    """The binary has no function symbols (stripped)."""


class UnresolvableAddressError(LookupError):
    def __init__(self, addr: int) -> None:
        self.addr = addr
        super().__init__(f"unresolvable address {addr:#x}")


class SymbolClassificationError(ValueError):
    """Symbol name does not follow the ``<import path>.<name>`` convention."""


class TrustClass(enum.IntEnum):
    # values shared with the kernel modules
    RUNTIME = 0
    STDLIB = 1
    ROOT_MODULE = 2
    THIRD_PARTY = 3

    @property
    def trusted(self) -> bool:
        return self <= TrustClass.STDLIB


@dataclass(frozen=True)
class ClassifierConfig:
    """Controls which packages count as the application's own code.

    ``root_prefixes`` lists module paths treated like ``main``; with
    ``include_root_module`` set, those packages also appear in call paths.
    """

    root_prefixes: Tuple[str, ...] = ()
    include_root_module: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "root_prefixes", tuple(p.rstrip("/") for p in self.root_prefixes))

    def digest(self) -> str:
        blob = json.dumps(
            {"root_prefixes": sorted(self.root_prefixes), "include_root_module": self.include_root_module},
            sort_keys=True, separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Symbol:
    start: int
    size: int
    name: str

    @property
    def end(self) -> int:
        return self.start + self.size


@dataclass(frozen=True)
class SymbolTable:
    entries: Tuple[Symbol, ...]
    binary_path: str = ""
    _starts: List[int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        starts = [s.start for s in self.entries]
        if starts != sorted(starts):
            raise ValueError("symbol entries must be sorted by start address")
        object.__setattr__(self, "_starts", starts)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True, slots=True)
class PackageId:
    path: str
    trust_class: TrustClass


@dataclass(frozen=True, slots=True)
class ResolvedFrame:
    function_name: str
    package: PackageId
    address: int = 0


def _read_bytes(binary: Union[bytes, bytearray, memoryview, BinaryIO]) -> bytes:
    if isinstance(binary, (bytes, bytearray, memoryview)):
        return bytes(binary)
    return binary.read()


def load_symbols(binary: Union[bytes, BinaryIO], binary_path: str = "") -> SymbolTable:
    """Read function symbols from the ``.symtab`` section of an ELF64 LE image.

    Only section headers, symbol tables and their linked string tables are
    touched. Zero-address symbols are skipped; when two symbols overlap the
    larger one wins.
    """
    data = _read_bytes(binary)
    if len(data) < 64 or data[:4] != b"\x7fELF":
        raise ELFFormatError("not an ELF file")
    if data[4] != 2 or data[5] != 1:
        raise ELFFormatError("only little-endian ELF64 is supported")
    shoff, = struct.unpack_from("<Q", data, 0x28)
    shentsize, shnum = struct.unpack_from("<HH", data, 0x3A)
    if shoff == 0 or shnum == 0:
        raise SymbolsUnavailableError("no section headers")
    if shentsize < 64 or shoff + shnum * shentsize > len(data):
        raise ELFFormatError("section header table out of bounds")

    sections = []
    for i in range(shnum):
        base = shoff + i * shentsize
        _, sh_type, _, _, sh_offset, sh_size, sh_link, _, _, sh_entsize = struct.unpack_from(
            "<IIQQQQIIQQ", data, base
        )
        sections.append((sh_type, sh_offset, sh_size, sh_link, sh_entsize))

    raw: List[Tuple[int, int, str]] = []
    for sh_type, off, size, link, entsize in sections:
        if sh_type != _SHT_SYMTAB:
            continue
        if entsize < _SYM.size or off + size > len(data) or link >= len(sections):
            raise ELFFormatError("malformed symbol table section")
        _, str_off, str_size, _, _ = sections[link]
        if str_off + str_size > len(data):
            raise ELFFormatError("string table out of bounds")
        strtab = data[str_off:str_off + str_size]
        for pos in range(off, off + size - entsize + 1, entsize):
            st_name, st_info, _, _, st_value, st_size = _SYM.unpack_from(data, pos)
            if st_info & 0xF != _STT_FUNC or st_value == 0 or st_name == 0:
                continue
            end = strtab.find(b"\0", st_name)
            name = strtab[st_name:end if end >= 0 else None].decode("utf-8", "replace")
            if name:
                raw.append((st_value, st_size, name))

    if not raw:
        raise SymbolsUnavailableError("symbols unavailable: no function symbols (stripped binary?)")
    return SymbolTable(tuple(_dedupe(raw)), binary_path)


def _dedupe(raw: Iterable[Tuple[int, int, str]]) -> List[Symbol]:
    kept: List[Symbol] = []
    for start, size, name in sorted(raw, key=lambda t: (t[0], -t[1], t[2])):
        if kept:
            prev = kept[-1]
            if start == prev.start:
                continue
            if start < prev.end:
                if size > prev.size:
                    kept[-1] = Symbol(start, size, name)
                continue
        kept.append(Symbol(start, size, name))
    return kept


def lookup_symbol(table: SymbolTable, addr: int, slack: int = DEFAULT_GAP_SLACK) -> Symbol:
    idx = bisect.bisect_right(table._starts, addr) - 1
    if idx < 0:
        raise UnresolvableAddressError(addr)
    sym = table.entries[idx]
    if addr < sym.end:
        return sym
    nxt = table.entries[idx + 1].start if idx + 1 < len(table.entries) else None
    if addr - sym.end < slack and (nxt is None or addr < nxt):
        return sym
    raise UnresolvableAddressError(addr)


def extract_package(function_name: str) -> str:
    """Import path of a Go symbol: up to the last '/', then to the next '.'.

    Escapes such as ``%2e`` (a dot in the last path element) are decoded.

    >>> extract_package("github.com/fatedier/golib/log.WriteLog")
    'github.com/fatedier/golib/log'
    >>> extract_package("os.(*File).Write")
    'os'
    >>> extract_package("gopkg.in/ini%2ev1.Load")
    'gopkg.in/ini.v1'
    """
    try:
        return _kernels.extract_package(function_name)
    except ValueError as exc:
        raise SymbolClassificationError(str(exc)) from None


def classify_package(path: str, config: ClassifierConfig = ClassifierConfig()) -> TrustClass:
    return TrustClass(_kernels.classify(path, config.root_prefixes))


def frame_for_symbol(function_name: str, config: ClassifierConfig = ClassifierConfig(),
                     address: int = 0) -> ResolvedFrame:
    """Resolved frame for a name; C symbols become ``cgo/<name>`` third-party frames."""
    path = _kernels.package_of_symbol(function_name)
    return ResolvedFrame(function_name, PackageId(path, classify_package(path, config)), address)


def resolve_address(table: SymbolTable, addr: int, config: ClassifierConfig = ClassifierConfig(),
                    slack: int = DEFAULT_GAP_SLACK) -> ResolvedFrame:
    return frame_for_symbol(lookup_symbol(table, addr, slack).name, config, addr)
