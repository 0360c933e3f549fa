"""Assign a syscall's stack to the package responsible for it.

The terminal package is the innermost frame that belongs to the application
or a third-party module; runtime and standard-library wrappers are skipped.
The call path lists the non-trusted packages from the outermost frame down to
the terminal one, with repeats from adjacent frames collapsed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

from . import _kernels
from .symbols import ClassifierConfig, PackageId, ResolvedFrame, TrustClass


class AttributionError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class CallPath:
    packages: Tuple[str, ...]
    hash: int

    @classmethod
    def of(cls, packages: Sequence[str]) -> "CallPath":
        packages = tuple(packages)
        return cls(packages, path_hash(packages))

    @property
    def hex(self) -> str:
        return format(self.hash, "016x")


@dataclass(frozen=True, slots=True)
class Attributed:
    terminal: PackageId
    path: CallPath


class _RuntimeInternal:
    __slots__ = ()

    def __repr__(self) -> str:
        return "RUNTIME_INTERNAL"

    def __reduce__(self):
        return "RUNTIME_INTERNAL"


RUNTIME_INTERNAL = _RuntimeInternal()

Attribution = Union[Attributed, _RuntimeInternal]


def path_hash(packages: Sequence[str]) -> int:
    """FNV-1a/64 over the UTF-8 package paths joined by a 0x1F byte."""
    if not packages:
        raise AttributionError("call path must be non-empty")
    return _kernels.path_hash(packages)


def attribute(frames: Sequence[ResolvedFrame], config: ClassifierConfig = ClassifierConfig()) -> Attribution:
    """Attribute an innermost-first list of resolved frames.

    Stacks made only of trusted frames (runtime and standard library) are
    reported as ``RUNTIME_INTERNAL``.
    """
    if not frames:
        raise AttributionError("empty stack")
    packages = [f.package.path for f in frames]
    classes = [int(f.package.trust_class) for f in frames]
    found = _kernels.attribute_core(packages, classes, config.include_root_module)
    if found is None:
        return RUNTIME_INTERNAL
    idx, path = found
    return Attributed(frames[idx].package, CallPath(path, _kernels.path_hash(path)))


def attribute_symbols(names: Sequence[str], config: ClassifierConfig = ClassifierConfig()) -> Attribution:
    """Fast path for symbolic stacks; equivalent to resolving then attributing."""
    if not names:
        raise AttributionError("empty stack")
    found = _kernels.attribute_symbols(names, config.root_prefixes, config.include_root_module)
    if found is None:
        return RUNTIME_INTERNAL
    terminal, cls, path, h = found
    return Attributed(PackageId(terminal, TrustClass(cls)), CallPath(path, h))
