"""Per-package allowlists: accumulation, canonical JSON, merge and diff.

A document maps each traced package to the syscalls and capabilities it used,
the binaries it executed, and for every capability the set of call-path
hashes through which that capability was reached. Processes that replaced
their image via exec are tracked separately in ``flat_binaries``, keyed by
executable name.
"""

from __future__ import annotations

import copy
import json
import re
import warnings
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Set, Tuple

from .attribution import CallPath, path_hash
from .capabilities import UNKNOWN, Capability, CapabilityOrUnknown, MappingError
from .symbols import PackageId, TrustClass

KIND_DEP = "dep"
KIND_MAIN = "main"

_HASH_RE = re.compile(r"^[0-9a-f]{16}$")
_ENTRY_KEYS = {"type", "path", "syscalls", "capabilities", "executed_binaries", "call_paths"}
_TOP_KEYS = {"packages", "flat_binaries", "metadata"}


class PolicyFormatError(ValueError):
    pass


class PolicyFormatWarning(UserWarning):
    pass


class PolicyMismatchError(ValueError):
    """Documents learned under different mappings or classifier settings."""


@dataclass
class PackagePolicy:
    path: str
    kind: str = KIND_DEP
    syscalls: Set[int] = field(default_factory=set)
    capabilities: Set[Capability] = field(default_factory=set)
    executed_binaries: Set[str] = field(default_factory=set)
    # capability -> {path hash -> plaintext packages or None}
    call_paths: Dict[Capability, Dict[int, Optional[Tuple[str, ...]]]] = field(default_factory=dict)

    def allows(self, capability: Capability, hash_: int) -> bool:
        paths = self.call_paths.get(capability)
        return paths is not None and hash_ in paths


@dataclass
class PolicyMetadata:
    arch: Optional[str] = None
    classifier_digest: Optional[str] = None
    created_at: Optional[str] = None

    def compatible(self, other: "PolicyMetadata") -> bool:
        return all(
            x is None or y is None or x == y
            for x, y in ((self.arch, other.arch), (self.classifier_digest, other.classifier_digest))
        )

    def combine(self, other: "PolicyMetadata") -> "PolicyMetadata":
        stamps = [s for s in (self.created_at, other.created_at) if s is not None]
        return PolicyMetadata(
            self.arch if self.arch is not None else other.arch,
            self.classifier_digest if self.classifier_digest is not None else other.classifier_digest,
            min(stamps) if stamps else None,
        )


@dataclass
class PolicyDocument:
    packages: Dict[str, PackagePolicy] = field(default_factory=dict)
    flat_binaries: Dict[str, Set[Capability]] = field(default_factory=dict)
    metadata: PolicyMetadata = field(default_factory=PolicyMetadata)

    def _entry(self, package: PackageId) -> PackagePolicy:
        entry = self.packages.get(package.path)
        if entry is None:
            kind = KIND_MAIN if package.trust_class is TrustClass.ROOT_MODULE else KIND_DEP
            entry = self.packages[package.path] = PackagePolicy(package.path, kind)
        return entry

    def record_observation(self, terminal: PackageId, nr: int, capability: CapabilityOrUnknown,
                           path: CallPath, plaintext: bool = True) -> None:
        """Add one attributed syscall. Unknown capabilities record the number only."""
        entry = self._entry(terminal)
        entry.syscalls.add(nr)
        if capability is UNKNOWN:
            return
        entry.capabilities.add(capability)
        paths = entry.call_paths.setdefault(capability, {})
        if paths.get(path.hash) is None:
            paths[path.hash] = path.packages if plaintext else None

    def record_exec(self, source_package: Optional[PackageId], binary_name: str) -> None:
        if source_package is not None:
            self._entry(source_package).executed_binaries.add(binary_name)
        self.flat_binaries.setdefault(binary_name, set())

    def record_flat_observation(self, binary_name: str, capability: Capability) -> None:
        self.flat_binaries.setdefault(binary_name, set()).add(capability)

    def copy(self) -> "PolicyDocument":
        return copy.deepcopy(self)

    def serialize(self) -> bytes:
        return serialize(self)

    @classmethod
    def parse(cls, data) -> "PolicyDocument":
        return parse(data)


# -- serialization -----------------------------------------------------------

def _entry_to_json(entry: PackagePolicy) -> dict:
    call_paths = {}
    for cap, paths in entry.call_paths.items():
        items = []
        for h in sorted(paths):
            item = {"hash": format(h, "016x")}
            if paths[h] is not None:
                item["path"] = list(paths[h])
            items.append(item)
        call_paths[cap.value] = items
    return {
        "type": entry.kind,
        "path": entry.path,
        "syscalls": sorted(entry.syscalls),
        "capabilities": sorted(c.value for c in entry.capabilities),
        "executed_binaries": sorted(entry.executed_binaries),
        "call_paths": call_paths,
    }


def to_json(doc: PolicyDocument) -> dict:
    meta = {k: v for k, v in (("arch", doc.metadata.arch),
                              ("classifier_digest", doc.metadata.classifier_digest),
                              ("created_at", doc.metadata.created_at)) if v is not None}
    return {
        "packages": {path: _entry_to_json(doc.packages[path]) for path in doc.packages},
        "flat_binaries": {name: sorted(c.value for c in caps) for name, caps in doc.flat_binaries.items()},
        "metadata": meta,
    }


def serialize(doc: PolicyDocument) -> bytes:
    """Canonical JSON: sorted keys and sorted arrays, so equal documents give equal bytes."""
    return (json.dumps(to_json(doc), sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def _caps(values, where: str) -> Set[Capability]:
    if not isinstance(values, list):
        raise PolicyFormatError(f"{where}: expected an array of capability names")
    try:
        return {Capability.parse(v) for v in values}
    except (MappingError, TypeError) as exc:
        raise PolicyFormatError(f"{where}: {exc}") from None


def _str_set(values, where: str) -> Set[str]:
    if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
        raise PolicyFormatError(f"{where}: expected an array of strings")
    return set(values)


def _entry_from_json(key: str, raw) -> PackagePolicy:
    where = f"package {key!r}"
    if not isinstance(raw, dict):
        raise PolicyFormatError(f"{where}: entry must be an object")
    raw = dict(raw)
    if "syscalls_paths" in raw:
        if "call_paths" in raw:
            raise PolicyFormatError(f"{where}: both 'call_paths' and 'syscalls_paths' present")
        warnings.warn(f"{where}: 'syscalls_paths' is a legacy alias for 'call_paths'",
                      PolicyFormatWarning, stacklevel=4)
        raw["call_paths"] = raw.pop("syscalls_paths")
    unknown = raw.keys() - _ENTRY_KEYS
    if unknown:
        raise PolicyFormatError(f"{where}: unexpected keys {sorted(unknown)}")
    for required in ("type", "path", "syscalls", "capabilities"):
        if required not in raw:
            raise PolicyFormatError(f"{where}: missing {required!r}")
    if raw["type"] not in (KIND_DEP, KIND_MAIN):
        raise PolicyFormatError(f"{where}: type must be 'dep' or 'main'")
    if raw["path"] != key:
        raise PolicyFormatError(f"{where}: path field {raw['path']!r} does not match key")
    syscalls = raw["syscalls"]
    if not isinstance(syscalls, list) or any(type(n) is not int or n < 0 for n in syscalls):
        raise PolicyFormatError(f"{where}: syscalls must be an array of non-negative integers")
    entry = PackagePolicy(
        key, raw["type"], set(syscalls), _caps(raw["capabilities"], where),
        _str_set(raw.get("executed_binaries", []), where),
    )
    call_paths = raw.get("call_paths", {})
    if not isinstance(call_paths, dict):
        raise PolicyFormatError(f"{where}: call_paths must be an object")
    for cap_name, items in call_paths.items():
        cap = next(iter(_caps([cap_name], where)))
        if cap not in entry.capabilities:
            raise PolicyFormatError(f"{where}: call paths for {cap.value} which is not granted")
        if not isinstance(items, list):
            raise PolicyFormatError(f"{where}: call_paths[{cap_name!r}] must be an array")
        paths = entry.call_paths.setdefault(cap, {})
        for item in items:
            if not isinstance(item, dict) or not item.keys() <= {"hash", "path"} or "hash" not in item:
                raise PolicyFormatError(f"{where}: malformed call path {item!r}")
            hex_ = item["hash"]
            if not isinstance(hex_, str) or not _HASH_RE.match(hex_):
                raise PolicyFormatError(f"{where}: hash must be 16 lowercase hex digits, got {hex_!r}")
            h = int(hex_, 16)
            plain = item.get("path")
            if plain is not None:
                if not isinstance(plain, list) or not plain or not all(isinstance(p, str) for p in plain):
                    raise PolicyFormatError(f"{where}: call path must be a non-empty array of strings")
                plain = tuple(plain)
                if path_hash(plain) != h:
                    raise PolicyFormatError(f"{where}: call path {list(plain)} does not match hash {hex_}")
            if paths.get(h) is None:
                paths[h] = plain
    return entry


def from_json(obj) -> PolicyDocument:
    if not isinstance(obj, dict):
        raise PolicyFormatError("policy must be a JSON object")
    if isinstance(obj.get("packages"), dict) and obj.keys() <= _TOP_KEYS:
        packages_raw = obj["packages"]
        flat_raw = obj.get("flat_binaries", {})
        meta_raw = obj.get("metadata", {})
    else:
        # legacy layout: package entries directly at the top level
        packages_raw, flat_raw, meta_raw = obj, {}, {}

    doc = PolicyDocument()
    for key, raw in packages_raw.items():
        doc.packages[key] = _entry_from_json(key, raw)

    if not isinstance(flat_raw, dict):
        raise PolicyFormatError("flat_binaries must be an object")
    for name, caps in flat_raw.items():
        doc.flat_binaries[name] = _caps(caps, f"flat binary {name!r}")
    for entry in doc.packages.values():
        for name in entry.executed_binaries:
            doc.flat_binaries.setdefault(name, set())

    if not isinstance(meta_raw, dict):
        raise PolicyFormatError("metadata must be an object")
    unknown = meta_raw.keys() - {"arch", "classifier_digest", "created_at"}
    if unknown:
        raise PolicyFormatError(f"metadata: unexpected keys {sorted(unknown)}")
    doc.metadata = PolicyMetadata(meta_raw.get("arch"), meta_raw.get("classifier_digest"),
                                  meta_raw.get("created_at"))
    return doc


def parse(data) -> PolicyDocument:
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    elif hasattr(data, "read"):
        data = data.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise PolicyFormatError(f"invalid JSON: {exc}") from None
    return from_json(obj)


# -- merge / diff ------------------------------------------------------------

def _check_compatible(a: PolicyDocument, b: PolicyDocument) -> None:
    if not a.metadata.compatible(b.metadata):
        raise PolicyMismatchError(
            f"incompatible policies: arch {a.metadata.arch!r} vs {b.metadata.arch!r}, "
            f"classifier {a.metadata.classifier_digest!r} vs {b.metadata.classifier_digest!r}"
        )


def merge(a: PolicyDocument, b: PolicyDocument) -> PolicyDocument:
    """Field-wise union. Idempotent, commutative and associative."""
    _check_compatible(a, b)
    out = a.copy()
    for path, theirs in b.packages.items():
        mine = out.packages.get(path)
        if mine is None:
            out.packages[path] = copy.deepcopy(theirs)
            continue
        if theirs.kind == KIND_MAIN:
            mine.kind = KIND_MAIN
        mine.syscalls |= theirs.syscalls
        mine.capabilities |= theirs.capabilities
        mine.executed_binaries |= theirs.executed_binaries
        for cap, paths in theirs.call_paths.items():
            target = mine.call_paths.setdefault(cap, {})
            for h, plain in paths.items():
                current = target.get(h)
                if current is None or (plain is not None and plain < current):
                    target[h] = plain if plain is not None else current
    for name, caps in b.flat_binaries.items():
        out.flat_binaries.setdefault(name, set()).update(caps)
    out.metadata = a.metadata.combine(b.metadata)
    return out


class Change(NamedTuple):
    op: str  # "+" or "-"
    kind: str
    subject: str
    detail: str = ""


_KIND_ORDER = {k: i for i, k in enumerate(
    ["package", "syscall", "capability", "call_path", "executed_binary", "flat_binary", "flat_capability"]
)}


def atoms(doc: PolicyDocument) -> Set[Tuple[str, str, str]]:
    """Decompose a document into ``(kind, subject, detail)`` facts."""
    out: Set[Tuple[str, str, str]] = set()
    for path, entry in doc.packages.items():
        out.add(("package", path, ""))
        out.update(("syscall", path, str(n)) for n in entry.syscalls)
        out.update(("capability", path, c.value) for c in entry.capabilities)
        out.update(("executed_binary", path, b) for b in entry.executed_binaries)
        for cap, paths in entry.call_paths.items():
            out.update(("call_path", path, f"{cap.value} {h:016x}") for h in paths)
    for name, caps in doc.flat_binaries.items():
        out.add(("flat_binary", name, ""))
        out.update(("flat_capability", name, c.value) for c in caps)
    return out


def _sort_key(change: Change):
    syscall = int(change.detail) if change.kind == "syscall" else -1
    return (change.subject, _KIND_ORDER[change.kind], syscall, change.detail, change.op)


@dataclass
class DiffReport:
    changes: List[Change]

    @property
    def added(self) -> List[Change]:
        return [c for c in self.changes if c.op == "+"]

    @property
    def removed(self) -> List[Change]:
        return [c for c in self.changes if c.op == "-"]

    def __bool__(self) -> bool:
        return bool(self.changes)

    def to_text(self) -> str:
        if not self.changes:
            return "no changes\n"
        lines = []
        for c in self.changes:
            label = c.kind.replace("_", " ")
            verb = "added" if c.op == "+" else "removed"
            tail = f" {c.detail}" if c.detail else ""
            lines.append(f"{c.op} {c.subject}: {label} {verb}{tail}")
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        return "".join(json.dumps(c._asdict(), sort_keys=True) + "\n" for c in self.changes)


def diff(old: PolicyDocument, new: PolicyDocument) -> DiffReport:
    _check_compatible(old, new)
    before, after = atoms(old), atoms(new)
    changes = [Change("+", *a) for a in after - before] + [Change("-", *a) for a in before - after]
    return DiffReport(sorted(changes, key=_sort_key))


def merge_all(docs: Iterable[PolicyDocument]) -> PolicyDocument:
    out = PolicyDocument()
    for doc in docs:
        out = merge(out, doc)
    return out
