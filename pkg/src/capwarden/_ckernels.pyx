# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled attribution kernels; same contract as ``_pykernels``."""

from libc.stdint cimport uint64_t

from urllib.parse import unquote

cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001B3ULL
cdef unsigned char PATH_SEPARATOR = 0x1F

cdef enum:
    RUNTIME = 0
    STDLIB = 1
    ROOT_MODULE = 2
    THIRD_PARTY = 3


cdef inline uint64_t _fnv_bytes(uint64_t h, bytes data):
    cdef const unsigned char* p = data
    cdef Py_ssize_t i, n = len(data)
    for i in range(n):
        h = (h ^ p[i]) * FNV_PRIME
    return h


def fnv1a64(data, seed=None):
    cdef uint64_t h = FNV_OFFSET if seed is None else <uint64_t>seed
    return _fnv_bytes(h, bytes(data))


cpdef unsigned long long path_hash(packages):
    cdef uint64_t h = FNV_OFFSET
    cdef bint first = True
    cdef str pkg
    for pkg in packages:
        if not first:
            h = (h ^ PATH_SEPARATOR) * FNV_PRIME
        first = False
        h = _fnv_bytes(h, pkg.encode("utf-8"))
    return h


cpdef str extract_package(str function_name):
    cdef str name = function_name
    cdef Py_ssize_t bracket = name.find("[")
    if bracket >= 0:
        name = name[:bracket]
    cdef Py_ssize_t slash = name.rfind("/")
    cdef Py_ssize_t dot = name.find(".", slash + 1)
    if dot <= 0 or dot == slash + 1:
        raise ValueError(f"not a Go-convention symbol: {function_name!r}")
    if "%" in name[:dot]:
        return unquote(name[:dot])
    return name[:dot]


cpdef int classify(str path, tuple root_prefixes):
    cdef str prefix
    if path == "runtime" or path.startswith("runtime/"):
        return RUNTIME
    if path == "main":
        return ROOT_MODULE
    for prefix in root_prefixes:
        if path == prefix or path.startswith(prefix + "/"):
            return ROOT_MODULE
    if path.startswith("cgo/"):
        return THIRD_PARTY
    cdef Py_ssize_t slash = path.find("/")
    cdef str head = path if slash < 0 else path[:slash]
    return STDLIB if "." not in head else THIRD_PARTY


cpdef str package_of_symbol(str function_name):
    try:
        return extract_package(function_name)
    except ValueError:
        return "cgo/" + function_name


def attribute_core(packages, classes, bint include_root):
    cdef Py_ssize_t n = len(packages)
    cdef Py_ssize_t i, terminal = -1
    cdef int c
    for i in range(n):
        c = classes[i]
        if c == ROOT_MODULE or c == THIRD_PARTY:
            terminal = i
            break
    if terminal < 0:
        return None
    cdef list path = []
    cdef object last = None
    cdef object pkg
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


def attribute_symbols(names, tuple root_prefixes, bint include_root):
    cdef list packages = [package_of_symbol(name) for name in names]
    cdef list classes = [classify(pkg, root_prefixes) for pkg in packages]
    found = attribute_core(packages, classes, include_root)
    if found is None:
        return None
    idx, path = found
    return packages[idx], classes[idx], path, path_hash(path)
