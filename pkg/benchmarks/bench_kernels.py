"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--links 60000] [--queries 4096] [--repeat 5]

Prints one row per kernel with the best-of-``repeat`` time for each backend
and the speedup. Outputs of the two backends are compared before timing.
"""

import argparse
import timeit

import numpy as np

from linkpattern import _kernels
from linkpattern.graph_store import TemporalGraph


def make_inputs(num_links, num_queries, num_nodes, k, seed):
    rng = np.random.default_rng(seed)
    # skewed degrees, roughly like a message network
    weights = 1.0 / np.arange(1, num_nodes + 1)
    weights /= weights.sum()
    g = TemporalGraph.from_arrays(rng.choice(num_nodes, size=num_links, p=weights),
                                  rng.choice(num_nodes, size=num_links, p=weights),
                                  np.sort(rng.random(num_links)) * num_links, num_nodes=num_nodes)
    q = rng.integers(num_links // 2, num_links, size=num_queries)
    hist = (g.inc_ptr, g.inc_idx, g.inc_ts, g.src[q], g.dst[q], g.ts[q], k)
    l = k + 1
    src = rng.integers(num_nodes, size=(num_queries, l))
    dst = rng.integers(num_nodes, size=(num_queries, l))
    ts = np.sort(rng.random((num_queries, l)), axis=1)
    valid = np.arange(l)[None, :] >= rng.integers(0, l, size=num_queries)[:, None]
    chan = (src, dst, ts, valid, 5.0)
    return {"history_window": hist, "inductive_channels": chan}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--links", type=int, default=60_000)
    ap.add_argument("--queries", type=int, default=4096)
    ap.add_argument("--nodes", type=int, default=1_900)
    ap.add_argument("--k", type=int, default=12)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if _kernels.compiled is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")

    inputs = make_inputs(args.links, args.queries, args.nodes, args.k, args.seed)
    print(f"{args.links} links, {args.queries} queries, k={args.k}, best of {args.repeat}")
    print(f"{'kernel':<20}{'cython ms':>12}{'python ms':>12}{'speedup':>10}")
    for name, call_args in inputs.items():
        fast = getattr(_kernels.compiled, name)
        slow = getattr(_kernels.python, name)
        np.testing.assert_allclose(fast(*call_args), slow(*call_args), rtol=1e-12)
        t_fast = min(timeit.repeat(lambda: fast(*call_args), number=1, repeat=args.repeat))
        t_slow = min(timeit.repeat(lambda: slow(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<20}{t_fast * 1e3:>12.2f}{t_slow * 1e3:>12.2f}{t_slow / t_fast:>9.1f}x")


if __name__ == "__main__":
    main()
