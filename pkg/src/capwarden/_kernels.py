"""Select the compiled kernels when available, else the pure-Python ones.

Set ``CAPWARDEN_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("CAPWARDEN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

fnv1a64 = _impl.fnv1a64
path_hash = _impl.path_hash
extract_package = _impl.extract_package
classify = _impl.classify
package_of_symbol = _impl.package_of_symbol
attribute_core = _impl.attribute_core
attribute_symbols = _impl.attribute_symbols


def available_backends():
    """Kernel modules importable in this environment, keyed by name."""
    backends = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        backends["cython"] = _ckernels
    return backends
