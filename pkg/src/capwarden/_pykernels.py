"""Pure-Python implementations of the hot attribution kernels.

Mirrors ``_ckernels.pyx`` function for function. Trust classes are passed
around as small ints (see ``TrustClass``) so both backends share one contract.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple
from urllib.parse import unquote

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF
PATH_SEPARATOR = 0x1F

RUNTIME = 0
STDLIB = 1
ROOT_MODULE = 2
THIRD_PARTY = 3


def fnv1a64(data: bytes, seed: int = FNV_OFFSET) -> int:
    h = seed
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & MASK64
    return h


def path_hash(packages: Sequence[str]) -> int:
    h = FNV_OFFSET
    first = True
    for pkg in packages:
        if not first:
            h = ((h ^ PATH_SEPARATOR) * FNV_PRIME) & MASK64
        first = False
        for byte in pkg.encode("utf-8"):
            h = ((h ^ byte) * FNV_PRIME) & MASK64
    return h


def extract_package(function_name: str) -> str:
    name = function_name
    bracket = name.find("[")
    if bracket >= 0:
        name = name[:bracket]
    slash = name.rfind("/")
    dot = name.find(".", slash + 1)
    if dot <= 0 or dot == slash + 1:
        raise ValueError(f"not a Go-convention symbol: {function_name!r}")
    pkg = name[:dot]
    # the linker writes dots in the last path element as %2e
    return unquote(pkg) if "%" in pkg else pkg


def classify(path: str, root_prefixes: Tuple[str, ...]) -> int:
    if path == "runtime" or path.startswith("runtime/"):
        return RUNTIME
    if path == "main":
        return ROOT_MODULE
    for prefix in root_prefixes:
        if path == prefix or path.startswith(prefix + "/"):
            return ROOT_MODULE
    if path.startswith("cgo/"):
        return THIRD_PARTY
    slash = path.find("/")
    head = path if slash < 0 else path[:slash]
    return STDLIB if "." not in head else THIRD_PARTY


def package_of_symbol(function_name: str) -> str:
    """Package for a frame name; non-Go symbols land in ``cgo/<name>``."""
    try:
        return extract_package(function_name)
    except ValueError:
        return "cgo/" + function_name


def attribute_core(
    packages: Sequence[str], classes: Sequence[int], include_root: bool
) -> Optional[Tuple[int, Tuple[str, ...]]]:
    """Return ``(terminal_index, call_path)`` or None when nothing is attributable.

    Inputs are innermost-first; the returned path is outermost-first with the
    terminal package last.
    """
    n = len(packages)
    terminal = -1
    for i in range(n):
        c = classes[i]
        if c == ROOT_MODULE or c == THIRD_PARTY:
            terminal = i
            break
    if terminal < 0:
        return None
    path = []
    last = None
    for i in range(n - 1, terminal, -1):
        c = classes[i]
        if c == THIRD_PARTY or (include_root and c == ROOT_MODULE):
            pkg = packages[i]
            if pkg != last:
                path.append(pkg)
                last = pkg
    pkg = packages[terminal]
    if pkg != last:
        path.append(pkg)
    return terminal, tuple(path)


def attribute_symbols(
    names: Sequence[str], root_prefixes: Tuple[str, ...], include_root: bool
) -> Optional[Tuple[str, int, Tuple[str, ...], int]]:
    """Fused symbolize+attribute+hash for symbolic stacks.

    Returns ``(terminal_package, terminal_class, call_path, path_hash)`` or
    None when no frame is application or third-party code.
    """
    packages = [package_of_symbol(name) for name in names]
    classes = [classify(pkg, root_prefixes) for pkg in packages]
    found = attribute_core(packages, classes, include_root)
    if found is None:
        return None
    idx, path = found
    return packages[idx], classes[idx], path, path_hash(path)
