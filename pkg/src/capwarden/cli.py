"""Command-line front end.

Exit codes: 0 success / no violations, 1 violations found (``check`` only),
2 usage, I/O or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from typing import List, Optional

from .capabilities import Capability, Category, MappingError, default_mapping, load_mapping
from .engine import Action, EngineConfig, EngineConfigError, StreamError, UnknownSyscallPolicy, \
    run_analysis, run_enforcement
from .policy import PolicyDocument, PolicyFormatError, PolicyMismatchError, diff, merge, parse, serialize
from .symbols import ClassifierConfig, ELFFormatError, SymbolsUnavailableError, load_symbols
from .trace import RawStack, TraceFormatError, iter_trace

MAPPING_ENV = "CAPWARDEN_MAPPING"

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _load_mapping(path: Optional[str]):
    path = path or os.environ.get(MAPPING_ENV)
    if not path:
        return default_mapping()
    with open(path, "rb") as fh:
        return load_mapping(fh)


def _config(args) -> EngineConfig:
    return EngineConfig(
        comm_filter=frozenset(args.comm or ()),
        action=Action(getattr(args, "action", "log")),
        classifier=ClassifierConfig(tuple(args.root_module or ()), args.include_root_module),
        unknown_syscall_policy=UnknownSyscallPolicy(getattr(args, "unknown_syscall", "violate")),
        plaintext_paths=not getattr(args, "hash_only", False),
    )


def _load_trace(args):
    with open(args.trace, "rb") as fh:
        events = list(iter_trace(fh, strict=args.strict))
    symbols = None
    if args.binary:
        with open(args.binary, "rb") as fh:
            symbols = load_symbols(fh, args.binary)
    elif any(isinstance(e.stack, RawStack) for e in events):
        raise UsageError("trace has raw stack addresses; pass --binary to symbolize them")
    return events, symbols


def _read_policy(path: str) -> PolicyDocument:
    with open(path, "rb") as fh:
        return parse(fh.read())


def _write(data: bytes, out: Optional[str]) -> None:
    if out and out != "-":
        with open(out, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def cmd_learn(args) -> int:
    events, symbols = _load_trace(args)
    mapping = _load_mapping(args.mapping)
    created = os.environ.get("SOURCE_DATE_EPOCH")
    doc = run_analysis(events, mapping, _config(args), symbols, created_at=created)
    if args.merge_into:
        doc = merge(_read_policy(args.merge_into), doc)
    _write(serialize(doc), args.output)
    return EXIT_OK


def cmd_check(args) -> int:
    events, symbols = _load_trace(args)
    mapping = _load_mapping(args.mapping)
    policy = _read_policy(args.policy)
    report = run_enforcement(events, policy, mapping, _config(args), symbols)
    if args.format == "json":
        sys.stdout.write(report.to_jsonl(only_flagged=not args.verbose))
    else:
        for v in report.verdicts:
            if v.verdict == "violation":
                h = f"{v.path_hash:016x}" if v.path_hash is not None else "-"
                sys.stdout.write(f"seq={v.seq} pid={v.pid} {v.kind.value} package={v.package} "
                                 f"capability={v.capability} path={h}\n")
            elif v.verdict == "suppressed" and args.verbose:
                sys.stdout.write(f"seq={v.seq} pid={v.pid} suppressed\n")
    counts = report.verdict_counts
    summary = ", ".join(f"{k}={counts[k]}" for k in sorted(counts)) or "no verdicts"
    print(f"{len(report.violations)} violation(s); {summary}", file=sys.stderr)
    return EXIT_VIOLATIONS if report.violations else EXIT_OK


def cmd_diff(args) -> int:
    report = diff(_read_policy(args.old), _read_policy(args.new))
    sys.stdout.write(report.to_jsonl() if args.format == "json" else report.to_text())
    return EXIT_OK


def cmd_merge(args) -> int:
    docs = [_read_policy(p) for p in args.policies]
    out = docs[0]
    for doc in docs[1:]:
        out = merge(out, doc)
    _write(serialize(out), args.output)
    return EXIT_OK


def render_audit(doc: PolicyDocument) -> str:
    lines = []
    for path in sorted(doc.packages):
        entry = doc.packages[path]
        lines.append(f"{path} [{entry.kind}] ({len(entry.capabilities)} capabilities)")
        for category in Category:
            caps = sorted(c.value for c in entry.capabilities if c.category is category)
            if caps:
                lines.append(f"  {category.value}:")
                for cap in caps:
                    n = len(entry.call_paths.get(Capability(cap), {}))
                    lines.append(f"    {cap}  ({n} call path{'s' if n != 1 else ''})")
        if entry.syscalls:
            lines.append(f"  syscalls: {', '.join(map(str, sorted(entry.syscalls)))}")
        if entry.executed_binaries:
            lines.append(f"  executes: {', '.join(sorted(entry.executed_binaries))}")
    if doc.flat_binaries:
        lines.append("flat binaries:")
        for name in sorted(doc.flat_binaries):
            caps = sorted(c.value for c in doc.flat_binaries[name])
            lines.append(f"  {name}: {', '.join(caps) if caps else '(none)'}")
    return "\n".join(lines) + "\n"


def cmd_audit(args) -> int:
    doc = _read_policy(args.policy)
    if args.format == "json":
        sys.stdout.write(json.dumps(
            {p: sorted(c.value for c in e.capabilities) for p, e in doc.packages.items()},
            sort_keys=True) + "\n")
    else:
        sys.stdout.write(render_audit(doc))
    return EXIT_OK


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trace", required=True, help="trace file (JSON lines)")
    p.add_argument("--binary", help="ELF binary for raw stack addresses")
    p.add_argument("--mapping", help=f"syscall mapping file (default: ${MAPPING_ENV} or built-in x86_64)")
    p.add_argument("--comm", action="append", help="track processes with this command name (repeatable)")
    p.add_argument("--root-module", action="append", metavar="PREFIX",
                   help="module path treated as the application's own code (repeatable)")
    p.add_argument("--include-root-module", action="store_true",
                   help="keep application packages in call paths")
    p.add_argument("--strict", action="store_true", help="reject unknown keys in trace records")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capwarden", description="Learn and enforce per-package syscall capability policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="build a policy from a trusted trace")
    _add_engine_flags(p)
    p.add_argument("-o", "--output", help="policy file to write (default: stdout)")
    p.add_argument("--merge-into", metavar="POLICY", help="merge the learned policy into an existing one")
    p.add_argument("--hash-only", action="store_true", help="store call-path hashes without plaintext")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("check", help="replay a trace against a policy")
    _add_engine_flags(p)
    p.add_argument("--policy", required=True)
    p.add_argument("--action", choices=[a.value for a in Action], default="log")
    p.add_argument("--unknown-syscall", choices=[u.value for u in UnknownSyscallPolicy], default="violate")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.add_argument("-v", "--verbose", action="store_true", help="report every verdict, not only violations")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("diff", help="compare two policies")
    p.add_argument("old")
    p.add_argument("new")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("audit", help="list a policy for review")
    p.add_argument("policy")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("merge", help="union two or more policies")
    p.add_argument("policies", nargs="+")
    p.add_argument("-o", "--output", help="merged policy file (default: stdout)")
    p.set_defaults(func=cmd_merge)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _show_warning
            return args.func(args)
    except (OSError, UsageError, TraceFormatError, PolicyFormatError, PolicyMismatchError, MappingError,
            ELFFormatError, SymbolsUnavailableError, EngineConfigError, StreamError) as exc:
        print(f"capwarden {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
