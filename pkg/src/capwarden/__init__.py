"""Per-dependency syscall capability policies for Go programs.

Attribute every syscall in a trace to the package that caused it, learn a
least-privilege allowlist per package, and flag deviations from it.
"""

from ._kernels import BACKEND
from .attribution import RUNTIME_INTERNAL, Attributed, CallPath, attribute, attribute_symbols, path_hash
from .capabilities import UNKNOWN, Capability, Category, SyscallMapping, default_mapping, load_mapping
from .engine import (Action, Engine, EngineConfig, UnknownSyscallPolicy, Verdict, VerdictReport,
                     ViolationKind, run_analysis, run_enforcement)
from .policy import PackagePolicy, PolicyDocument, diff, merge, parse, serialize
from .symbols import (ClassifierConfig, PackageId, ResolvedFrame, SymbolTable, TrustClass,
                      classify_package, extract_package, load_symbols, resolve_address)
from .trace import Direction, ProcessIdentity, RawStack, SymbolicStack, SyscallEvent, parse_trace, write_trace

__version__ = "0.1.0"
