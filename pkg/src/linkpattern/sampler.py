"""Input construction: nearest history, parametric recall, and the query last."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
import torch

from linkpattern import _kernels
from linkpattern.graph_store import Link, TemporalGraph

if TYPE_CHECKING:
    from linkpattern.encoder import LinkEncoder

PAD = -1

# slot origins
ORIGIN_PAD, ORIGIN_NEAREST, ORIGIN_PARAMETRIC, ORIGIN_QUERY = 0, 1, 2, 3
ORIGIN_NAMES = {ORIGIN_PAD: "pad", ORIGIN_NEAREST: "nearest",
                ORIGIN_PARAMETRIC: "parametric", ORIGIN_QUERY: "query"}


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinkSequence:
    """One model input: ``n + p`` history slots (``None`` for PAD) then the query."""

    links: tuple[Link | None, ...]
    origins: tuple[str, ...]

    @property
    def pad_count(self) -> int:
        return sum(x is None for x in self.links)

    @property
    def query(self) -> Link:
        return self.links[-1]

    def __len__(self) -> int:
        return len(self.links)


@dataclass
class SequenceBatch:
    """Column arrays for ``B`` sequences of length ``l``; slot ``l - 1`` is the query.

    ``link_index`` holds the graph index of each history slot (-1 for PAD and
    for the query slot, which need not be a graph link).
    """

    src: np.ndarray
    dst: np.ndarray
    ts: np.ndarray
    valid: np.ndarray
    origin: np.ndarray
    link_index: np.ndarray

    def __len__(self) -> int:
        return self.src.shape[0]

    @property
    def length(self) -> int:
        return self.src.shape[1]

    @property
    def query_time(self) -> np.ndarray:
        return self.ts[:, -1]

    def pad_counts(self) -> np.ndarray:
        return (~self.valid).sum(axis=1)

    def sequence(self, b: int) -> LinkSequence:
        links = tuple(
            Link(int(self.src[b, i]), int(self.dst[b, i]), float(self.ts[b, i]))
            if self.valid[b, i] else None
            for i in range(self.length))
        return LinkSequence(links, tuple(ORIGIN_NAMES[int(x)] for x in self.origin[b]))

    def select(self, rows) -> "SequenceBatch":
        return SequenceBatch(self.src[rows], self.dst[rows], self.ts[rows],
                             self.valid[rows], self.origin[rows], self.link_index[rows])

    @staticmethod
    def concat(batches: Sequence["SequenceBatch"]) -> "SequenceBatch":
        return SequenceBatch(*(np.concatenate([getattr(b, f) for b in batches])
                               for f in ("src", "dst", "ts", "valid", "origin", "link_index")))


def nearest_sample(g: TemporalGraph, query: Link, n: int) -> list[Link]:
    """The ``n`` most recent links touching either query endpoint, oldest first."""
    if n < 0:
        raise ValueError("n must be non-negative")
    idx = _kernels.history_window(g.inc_ptr, g.inc_idx, g.inc_ts, [query.source],
                                  [query.destination], [query.timestamp], n)[0]
    return [g.link(i) for i in idx if i != PAD]


def closeness(q_embed, h_embed) -> float:
    q = np.asarray(q_embed, dtype=np.float64)
    h = np.asarray(h_embed, dtype=np.float64)
    if q.shape != h.shape or q.ndim != 1:
        raise ValueError(f"dimension mismatch: {q.shape} vs {h.shape}")
    return float(q @ h)


def top_closeness(scores: np.ndarray, p: int) -> np.ndarray:
    """Column indices of the ``p`` largest scores per row, ties toward later columns.

    Columns are assumed chronological, so a later column is a more recent link.
    Returned indices are sorted ascending.
    """
    m = scores.shape[1]
    p = min(p, m)
    order = np.argsort(-scores[:, ::-1], axis=1, kind="stable")[:, :p]
    return np.sort(m - 1 - order, axis=1)


def parametric_sample(g: TemporalGraph, query: Link, m: int, p: int,
                      encoder: "LinkEncoder", n_exclude: int = 0) -> list[Link]:
    """Top-``p`` closeness links among ``m`` recent candidates.

    The candidate pool skips the ``n_exclude`` most recent incident links,
    which are the ones nearest sampling already took.
    """
    if not m >= p >= 0:
        raise ValueError("need m >= p >= 0")
    sel = _parametric_indices(g, np.array([query.source]), np.array([query.destination]),
                              np.array([query.timestamp]), n_exclude, m, p, encoder)[0]
    return [g.link(i) for i in sel if i != PAD]


def _parametric_indices(g, qsrc, qdst, qt, n, m, p, encoder, window=None):
    if p == 0 or m == 0:
        return np.full((len(qsrc), 0), PAD, dtype=np.int64)
    if window is None:
        window = _kernels.history_window(g.inc_ptr, g.inc_idx, g.inc_ts, qsrc, qdst, qt, n + m)
    cand = window[:, :m]
    scores = candidate_closeness(g, cand, qsrc, qdst, qt, encoder)
    cols = top_closeness(scores, p)
    return np.take_along_axis(cand, cols, axis=1)


@torch.no_grad()
def candidate_closeness(g, cand, qsrc, qdst, qt, encoder) -> np.ndarray:
    """Dot products of query and candidate embeddings; PAD candidates get -inf."""
    ok = cand != PAD
    safe = np.where(ok, cand, 0)
    cs, cd, ct = g.src[safe], g.dst[safe], g.ts[safe]
    t_q = np.broadcast_to(np.asarray(qt, dtype=np.float64)[:, None], cand.shape)
    h = encoder.link_embed(cs, cd, ct, t_q)
    q = encoder.link_embed(qsrc, qdst, qt, qt)
    scores = torch.einsum("bmd,bd->bm", h, q).double().numpy()
    scores[~ok] = -np.inf
    return scores


def build_sequence(nearest: Sequence[Link], parametric: Sequence[Link], query: Link,
                   n: int, p: int) -> LinkSequence:
    if len(nearest) > n or len(parametric) > p:
        raise ValueError("more links than slots")
    if set(nearest) & set(parametric):
        raise SamplerError("nearest and parametric samples overlap")
    # the parametric pool lies wholly before the nearest window in stream
    # order, so listing it first makes the stable sort break timestamp ties
    # the same way the stream does
    tagged = [(x, "parametric") for x in parametric] + [(x, "nearest") for x in nearest]
    tagged.sort(key=lambda item: item[0].timestamp)
    pad = n + p - len(tagged)
    links = (None,) * pad + tuple(x for x, _ in tagged) + (query,)
    origins = ("pad",) * pad + tuple(o for _, o in tagged) + ("query",)
    return LinkSequence(links, origins)


class SequenceBuilder:
    """Batched sequence construction for many queries against one graph."""

    def __init__(self, g: TemporalGraph, n_nearest: int, p_parametric: int = 0,
                 m_candidates: int | None = None):
        if n_nearest < 0 or p_parametric < 0:
            raise ValueError("sampling lengths must be non-negative")
        if m_candidates is None:
            m_candidates = 4 * n_nearest if p_parametric else 0
        if p_parametric > m_candidates:
            raise ValueError("m_candidates must be >= p_parametric")
        self.g = g
        self.n = n_nearest
        self.p = p_parametric
        self.m = m_candidates if p_parametric else 0

    @property
    def length(self) -> int:
        return self.n + self.p + 1

    def build(self, qsrc, qdst, qt, encoder: "LinkEncoder | None" = None) -> SequenceBatch:
        g = self.g
        qsrc = np.asarray(qsrc, dtype=np.int64)
        qdst = np.asarray(qdst, dtype=np.int64)
        qt = np.asarray(qt, dtype=np.float64)
        window = _kernels.history_window(g.inc_ptr, g.inc_idx, g.inc_ts,
                                         qsrc, qdst, qt, self.n + self.m)
        nearest = window[:, self.m:]
        if self.p:
            if encoder is None:
                raise ValueError("parametric sampling needs an encoder")
            param = _parametric_indices(g, qsrc, qdst, qt, self.n, self.m, self.p,
                                        encoder, window=window)
        else:
            param = np.full((len(qsrc), 0), PAD, dtype=np.int64)

        hist = np.concatenate([nearest, param], axis=1)
        origin = np.concatenate([np.full(nearest.shape, ORIGIN_NEAREST, np.int8),
                                 np.full(param.shape, ORIGIN_PARAMETRIC, np.int8)], axis=1)
        # PAD is -1, so an ascending sort by link index both orders the links
        # chronologically and moves padding to the front
        order = np.argsort(hist, axis=1, kind="stable")
        hist = np.take_along_axis(hist, order, axis=1)
        origin = np.take_along_axis(origin, order, axis=1)
        valid_h = hist != PAD
        origin[~valid_h] = ORIGIN_PAD
        safe = np.where(valid_h, hist, 0)

        B = len(qsrc)
        src = np.concatenate([np.where(valid_h, g.src[safe], PAD), qsrc[:, None]], axis=1)
        dst = np.concatenate([np.where(valid_h, g.dst[safe], PAD), qdst[:, None]], axis=1)
        ts = np.concatenate([np.where(valid_h, g.ts[safe], 0.0), qt[:, None]], axis=1)
        valid = np.concatenate([valid_h, np.ones((B, 1), bool)], axis=1)
        origin = np.concatenate([origin, np.full((B, 1), ORIGIN_QUERY, np.int8)], axis=1)
        link_index = np.concatenate([hist, np.full((B, 1), PAD, np.int64)], axis=1)
        return SequenceBatch(src, dst, ts, valid, origin, link_index)

    def build_one(self, query: Link, encoder: "LinkEncoder | None" = None) -> SequenceBatch:
        return self.build([query.source], [query.destination], [query.timestamp], encoder)
