"""Temporal link storage: CSV ingestion, incidence indexes, splits and negatives."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for unreadable or malformed interaction data."""


class Link(NamedTuple):
    source: int
    destination: int
    timestamp: float


@dataclass(frozen=True, eq=False)
class TemporalGraph:
    """Chronologically sorted link stream with per-node incidence lists.

    Incidence is stored in CSR form: the links touching node ``u`` are
    ``inc_idx[inc_ptr[u]:inc_ptr[u + 1]]``, ascending by link index (and
    therefore by timestamp). ``inc_ts`` mirrors ``inc_idx`` with the link
    timestamps so the time cut-off can be found by bisection.
    """

    src: np.ndarray
    dst: np.ndarray
    ts: np.ndarray
    num_nodes: int
    labels: tuple[str, ...]
    inc_ptr: np.ndarray
    inc_idx: np.ndarray
    inc_ts: np.ndarray

    @classmethod
    def from_arrays(cls, src, dst, ts, num_nodes: int | None = None,
                    labels: Sequence[str] | None = None) -> "TemporalGraph":
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        ts = np.asarray(ts, dtype=np.float64)
        if not (src.shape == dst.shape == ts.shape) or src.ndim != 1:
            raise DataError("src, dst and ts must be 1-d arrays of equal length")
        if not np.all(np.isfinite(ts)):
            raise DataError("timestamps must be finite")
        if num_nodes is None:
            num_nodes = int(max(src.max(initial=-1), dst.max(initial=-1)) + 1)
        if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= num_nodes):
            raise DataError("node ids must lie in [0, num_nodes)")
        if labels is None:
            labels = [str(i) for i in range(num_nodes)]
        if len(labels) != num_nodes:
            raise DataError("labels must have one entry per node")

        order = np.argsort(ts, kind="stable")
        src, dst, ts = src[order], dst[order], ts[order]

        link_ids = np.arange(len(src), dtype=np.int64)
        not_loop = dst != src
        nodes = np.concatenate([src, dst[not_loop]])
        idx = np.concatenate([link_ids, link_ids[not_loop]])
        perm = np.lexsort((idx, nodes))
        inc_idx = idx[perm]
        inc_ptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(nodes, minlength=num_nodes), out=inc_ptr[1:])
        inc_ts = ts[inc_idx]

        for arr in (src, dst, ts, inc_ptr, inc_idx, inc_ts):
            arr.setflags(write=False)
        return cls(src, dst, ts, int(num_nodes), tuple(str(x) for x in labels),
                   inc_ptr, inc_idx, inc_ts)

    def __len__(self) -> int:
        return len(self.src)

    def link(self, i: int) -> Link:
        return Link(int(self.src[i]), int(self.dst[i]), float(self.ts[i]))

    def links(self) -> list[Link]:
        return [self.link(i) for i in range(len(self))]

    def incident(self, node: int) -> np.ndarray:
        return self.inc_idx[self.inc_ptr[node]:self.inc_ptr[node + 1]]

    def node_id(self, label: str) -> int | None:
        try:
            return self._label_index[label]
        except KeyError:
            return None

    @property
    def _label_index(self) -> dict[str, int]:
        cache = self.__dict__.get("_label_cache")
        if cache is None:
            cache = {lab: i for i, lab in enumerate(self.labels)}
            object.__setattr__(self, "_label_cache", cache)
        return cache

    def same_as(self, other: "TemporalGraph") -> bool:
        return (self.num_nodes == other.num_nodes and self.labels == other.labels
                and np.array_equal(self.src, other.src) and np.array_equal(self.dst, other.dst)
                and np.array_equal(self.ts, other.ts)
                and np.array_equal(self.inc_ptr, other.inc_ptr)
                and np.array_equal(self.inc_idx, other.inc_idx))


@dataclass(frozen=True)
class DatasetSplit:
    train: range
    validation: range
    test: range

    def by_name(self, name: str) -> range:
        return {"train": self.train, "val": self.validation,
                "validation": self.validation, "test": self.test}[name]


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def node_map_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".nodes.csv")


def load_csv(path: str | Path, write_node_map: bool = True) -> TemporalGraph:
    """Read ``source,destination,timestamp`` rows into a :class:`TemporalGraph`.

    Extra trailing columns are ignored. A non-numeric timestamp in the first
    row marks it as a header. Raw labels are re-indexed to contiguous ids in
    order of first appearance in the time-sorted stream; the mapping is
    written next to the data as ``<name>.nodes.csv``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    raw_src: list[str] = []
    raw_dst: list[str] = []
    raw_ts: list[float] = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise DataError(f"{path}:{lineno}: expected source,destination,timestamp")
            s, o, t = (c.strip() for c in row[:3])
            if lineno == 1 and not raw_ts and not _is_number(t):
                continue
            try:
                tv = float(t)
            except ValueError:
                raise DataError(f"{path}:{lineno}: timestamp {t!r} is not a number") from None
            if not math.isfinite(tv):
                raise DataError(f"{path}:{lineno}: non-finite timestamp {t!r}")
            if not s or not o:
                raise DataError(f"{path}:{lineno}: empty node label")
            raw_src.append(s)
            raw_dst.append(o)
            raw_ts.append(tv)
    if not raw_ts:
        raise DataError(f"{path}: no links")
    if len(raw_ts) < 2:
        raise DataError(f"{path}: need at least 2 links, found {len(raw_ts)}")

    ts = np.asarray(raw_ts, dtype=np.float64)
    order = np.argsort(ts, kind="stable")
    ids: dict[str, int] = {}
    for i in order:
        for lab in (raw_src[i], raw_dst[i]):
            if lab not in ids:
                ids[lab] = len(ids)
    src = np.fromiter((ids[x] for x in raw_src), dtype=np.int64, count=len(raw_src))
    dst = np.fromiter((ids[x] for x in raw_dst), dtype=np.int64, count=len(raw_dst))
    g = TemporalGraph.from_arrays(src, dst, ts, len(ids), list(ids))
    if write_node_map:
        write_node_map_file(g, node_map_path(path))
    return g


def write_node_map_file(g: TemporalGraph, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["original_label", "assigned_id"])
        w.writerows((lab, i) for i, lab in enumerate(g.labels))


def read_node_map_file(path: str | Path) -> list[str]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    labels = [""] * len(rows)
    for lab, i in rows:
        labels[int(i)] = lab
    return labels


def save_csv(g: TemporalGraph, path: str | Path) -> None:
    """Write the stream with original labels; ``repr`` keeps timestamps exact."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "destination", "timestamp"])
        for s, o, t in zip(g.src, g.dst, g.ts):
            w.writerow([g.labels[s], g.labels[o], repr(float(t))])


def chronological_split(g: TemporalGraph, train_frac: float = 0.7,
                        val_frac: float = 0.1) -> DatasetSplit:
    n = len(g)
    if n < 10:
        raise DataError(f"graph too small to split: {n} links (need >= 10)")
    # integer arithmetic for the default fractions avoids 0.7 * n float error
    if (train_frac, val_frac) == (0.7, 0.1):
        n_train, n_val = 7 * n // 10, n // 10
    else:
        n_train, n_val = math.floor(train_frac * n), math.floor(val_frac * n)
    a, b = n_train, n_train + n_val
    return DatasetSplit(range(0, a), range(a, b), range(b, n))


def sample_negative(g: TemporalGraph, positive: Link, rng: np.random.Generator) -> Link:
    """Corrupt the destination uniformly over all nodes (the true one included)."""
    return Link(positive.source, int(rng.integers(g.num_nodes)), positive.timestamp)


def sample_negative_destinations(g: TemporalGraph, count: int,
                                 rng: np.random.Generator) -> np.ndarray:
    return rng.integers(g.num_nodes, size=count, dtype=np.int64)


def history_before(g: TemporalGraph, nodes: Iterable[int], t: float, k: int) -> list[Link]:
    """The ``k`` most recent links strictly before ``t`` touching any of ``nodes``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    idx = history_indices(g, nodes, t, k)
    return [g.link(i) for i in idx]


def history_indices(g: TemporalGraph, nodes: Iterable[int], t: float, k: int) -> np.ndarray:
    parts = []
    for u in set(int(x) for x in nodes):
        if not 0 <= u < g.num_nodes:
            continue
        lo, hi = g.inc_ptr[u], g.inc_ptr[u + 1]
        cut = lo + np.searchsorted(g.inc_ts[lo:hi], t, side="left")
        parts.append(g.inc_idx[max(lo, cut - k):cut])
    if not parts or k == 0:
        return np.empty(0, dtype=np.int64)
    merged = np.unique(np.concatenate(parts))
    return merged[len(merged) - min(k, len(merged)):]
