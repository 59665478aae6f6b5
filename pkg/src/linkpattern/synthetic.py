"""Synthetic temporal graphs with planted, checkable patterns."""

from __future__ import annotations

import numpy as np

from linkpattern.graph_store import TemporalGraph, history_indices


def reciprocal_graph(num_links: int = 200, num_pairs: int = 10, num_nodes: int | None = None,
                     seed: int = 0) -> TemporalGraph:
    """Every ``(a, b, t)`` is answered by ``(b, a, t + 1)``.

    Conversations are drawn from ``num_pairs`` fixed node pairs, so each pair
    talks repeatedly and the opening link is predictable from earlier rounds.
    """
    rng = np.random.default_rng(seed)
    num_nodes = num_nodes or 2 * num_pairs
    perm = rng.permutation(num_nodes)
    pairs = perm[:2 * num_pairs].reshape(num_pairs, 2)
    src, dst, ts = [], [], []
    for k in range(num_links // 2):
        a, b = pairs[rng.integers(num_pairs)]
        if rng.random() < 0.5:
            a, b = b, a
        src += [a, b]
        dst += [b, a]
        ts += [2.0 * k, 2.0 * k + 1.0]
    return TemporalGraph.from_arrays(src, dst, ts, num_nodes=num_nodes)


def distant_reply_graph(num_chains: int = 600, num_nodes: int = 120, chain_length: int = 3,
                        period: float = 40.0, rate: float = 1.0, min_distance: int = 0,
                        seed: int = 0) -> TemporalGraph:
    """Short back-and-forth chains whose replies arrive after a long delay.

    Chain ``k`` picks a fresh pair ``(u, v)`` and emits ``(u, v)``, ``(v, u)``,
    ``(u, v)``, ... spaced ``period`` apart (with jitter). Chains start as a
    Poisson process of intensity ``rate``, so many chains overlap and the
    links between a reply and its target touch the same nodes. Pairs are
    fresh, so pair identity carries no information across time.

    With ``min_distance > 0``, replies whose target is among the
    ``min_distance`` most recent incident links are dropped (repeatedly,
    since each removal shifts later ranks), so every surviving reply has its
    target strictly farther back than ``min_distance``.
    """
    rng = np.random.default_rng(seed)
    starts = np.cumsum(rng.exponential(1.0 / rate, size=num_chains))
    src, dst, ts = [], [], []
    for k in range(num_chains):
        u, v = rng.choice(num_nodes, size=2, replace=False)
        t = starts[k]
        for j in range(chain_length):
            a, b = (u, v) if j % 2 == 0 else (v, u)
            src.append(a)
            dst.append(b)
            ts.append(t)
            t += period * rng.uniform(0.75, 1.25)
    g = TemporalGraph.from_arrays(src, dst, ts, num_nodes=num_nodes)
    while min_distance > 0:
        close = [i for i in range(len(g)) if target_rank(g, i, min_distance) is not None]
        if not close:
            break
        keep = np.setdiff1d(np.arange(len(g)), close)
        g = TemporalGraph.from_arrays(g.src[keep], g.dst[keep], g.ts[keep], num_nodes=num_nodes)
    return g


def target_rank(g: TemporalGraph, i: int, window: int) -> int | None:
    """Rank (1 = most recent) of the latest reverse link among the query's history.

    ``None`` if no reverse link lies within the ``window`` most recent links
    incident to the query's endpoints.
    """
    s, o, t = int(g.src[i]), int(g.dst[i]), float(g.ts[i])
    hist = history_indices(g, (s, o), t, window)
    for r, h in enumerate(hist[::-1], start=1):
        if g.src[h] == o and g.dst[h] == s:
            return r
    return None
