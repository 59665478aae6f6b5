"""EdgeBank: predict a link iff its (source, destination) pair was seen before."""

from __future__ import annotations

import time

import numpy as np

from linkpattern.graph_store import DatasetSplit, Link, TemporalGraph
from linkpattern.trainer import EvalReport, evaluate_auc, split_negatives


class EdgeMemory:
    """Pairs observed so far; only ever grows."""

    def __init__(self, directed: bool = True):
        self.directed = directed
        self._pairs: set[tuple[int, int]] = set()

    def _key(self, s: int, o: int) -> tuple[int, int]:
        if self.directed or s <= o:
            return (s, o)
        return (o, s)

    def add(self, s: int, o: int) -> None:
        self._pairs.add(self._key(int(s), int(o)))

    def update(self, src, dst) -> None:
        for s, o in zip(src, dst):
            self.add(s, o)

    def __contains__(self, pair) -> bool:
        return self._key(int(pair[0]), int(pair[1])) in self._pairs

    def __len__(self) -> int:
        return len(self._pairs)


def edgebank_score(memory: EdgeMemory, query: Link) -> int:
    return int((query.source, query.destination) in memory)


def edgebank_eval(g: TemporalGraph, split: DatasetSplit, seed: int, directed: bool = True,
                  rows: range | None = None) -> EvalReport:
    """Stream the graph and score each evaluated positive and its seeded negative.

    Memory holds every link strictly earlier than the query, so earlier
    test links count as history. Queries sharing a timestamp are scored
    before any of them enters memory.
    """
    t0 = time.perf_counter()
    rows = split.test if rows is None else rows
    neg = split_negatives(g, rows, seed)
    memory = EdgeMemory(directed)
    pos_scores = np.zeros(len(rows))
    neg_scores = np.zeros(len(rows))
    if len(rows) == 0:
        raise ValueError("nothing to evaluate")
    i = int(np.searchsorted(g.ts, g.ts[rows.start], side="left"))
    memory.update(g.src[:i], g.dst[:i])
    while i < rows.stop:
        j = int(np.searchsorted(g.ts, g.ts[i], side="right"))
        for k in range(max(i, rows.start), min(j, rows.stop)):
            pos_scores[k - rows.start] = (g.src[k], g.dst[k]) in memory
            neg_scores[k - rows.start] = (g.src[k], neg[k - rows.start]) in memory
        memory.update(g.src[i:j], g.dst[i:j])
        i = j
    return EvalReport(auc=evaluate_auc(pos_scores, neg_scores), loss=float("nan"),
                      seconds=time.perf_counter() - t0)


def binary_auc(pos_scores, neg_scores) -> float:
    """Closed-form AUC for 0/1 scores: P(pos=1, neg=0) + 0.5 * P(tie)."""
    p1 = float(np.mean(pos_scores))
    n1 = float(np.mean(neg_scores))
    return p1 * (1 - n1) + 0.5 * (p1 * n1 + (1 - p1) * (1 - n1))
