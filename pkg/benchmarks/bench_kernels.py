"""Compare the compiled and pure-Python attribution kernels.

Runs three workloads per backend:

* ``hash``: path_hash over a fixed corpus of package paths
* ``attribute``: fused symbolize+attribute+hash over distinct symbolic stacks
* ``replay``: engine enforcement over a synthetic trace, in a subprocess with
  the backend forced through ``CAPWARDEN_PURE_PYTHON``

Usage: python3 benchmarks/bench_kernels.py [--events N] [--stacks N] [--repeat N]
"""

from __future__ import annotations

import argparse
import json
import os
import random
import subprocess
import sys
import time

from capwarden import _kernels
from capwarden.capabilities import Capability
from capwarden.synthetic import THIRD_PARTY, random_stack

REPLAY_SNIPPET = """
import json, sys, time
from capwarden import BACKEND, default_mapping
from capwarden.engine import Engine, run_analysis
from capwarden.synthetic import generate_throughput_trace
n, stacks = int(sys.argv[1]), int(sys.argv[2])
mapping = default_mapping()
events = generate_throughput_trace(n, seed=1, mapping=mapping, n_stacks=stacks)
policy = run_analysis(events, mapping)
engine = Engine(mapping, policy=policy)
start = time.perf_counter()
for ev in events:
    engine.step(ev)
print(json.dumps({"backend": BACKEND, "rate": n / (time.perf_counter() - start)}))
"""


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def bench_kernels(impl, corpus, stacks, repeat: int) -> dict:
    path_hash = impl.path_hash
    attribute = impl.attribute_symbols
    t_hash = _best(lambda: [path_hash(p) for p in corpus], repeat)
    t_attr = _best(lambda: [attribute(s, (), False) for s in stacks], repeat)
    return {"hash_per_s": len(corpus) / t_hash, "attribute_per_s": len(stacks) / t_attr}


def bench_replay(pure: bool, events: int, stacks: int) -> float:
    env = dict(os.environ, CAPWARDEN_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", REPLAY_SNIPPET, str(events), str(stacks)],
                         env=env, check=True, capture_output=True, text=True).stdout
    return json.loads(out)["rate"]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--events", type=int, default=200_000, help="replay trace length")
    parser.add_argument("--stacks", type=int, default=5_000, help="distinct stacks (cache misses)")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    rng = random.Random(0)
    caps = list(Capability)
    stacks = [random_stack(rng, rng.choice(caps), THIRD_PARTY, depth=4) for _ in range(args.stacks)]
    corpus = [[rng.choice(THIRD_PARTY) for _ in range(rng.randint(1, 5))] for _ in range(args.stacks)]

    backends = _kernels.available_backends()
    rows = {}
    for name, impl in sorted(backends.items()):
        rows[name] = bench_kernels(impl, corpus, stacks, args.repeat)
        rows[name]["replay_per_s"] = bench_replay(name == "python", args.events, args.stacks)

    print(f"{'backend':<8} {'path_hash/s':>14} {'attribute/s':>14} {'replay ev/s':>14}")
    for name, r in rows.items():
        print(f"{name:<8} {r['hash_per_s']:>14,.0f} {r['attribute_per_s']:>14,.0f} {r['replay_per_s']:>14,.0f}")
    if "cython" in rows:
        py, cy = rows["python"], rows["cython"]
        print("speedup  " + "  ".join(
            f"{k.split('_per_s')[0]}={cy[k] / py[k]:.2f}x" for k in ("hash_per_s", "attribute_per_s", "replay_per_s")))
    else:
        print("compiled kernels not built; only the fallback was measured")
    return 0


if __name__ == "__main__":
    sys.exit(main())
