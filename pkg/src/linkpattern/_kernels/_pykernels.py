"""Pure numpy implementations of the hot kernels (reference and fallback)."""

import numpy as np


def history_window(inc_ptr, inc_idx, inc_ts, qsrc, qdst, qt, k):
    """Most recent ``k`` link indices before ``qt`` touching ``qsrc`` or ``qdst``.

    Returns an int64 array of shape (B, k), ascending per row and left-padded
    with -1 when the history is shorter than ``k``.
    """
    qsrc = np.asarray(qsrc, dtype=np.int64)
    qdst = np.asarray(qdst, dtype=np.int64)
    qt = np.asarray(qt, dtype=np.float64)
    num_nodes = len(inc_ptr) - 1
    out = np.full((len(qsrc), k), -1, dtype=np.int64)
    if k == 0:
        return out
    for b in range(len(qsrc)):
        parts = []
        for u in (qsrc[b], qdst[b]) if qsrc[b] != qdst[b] else (qsrc[b],):
            if not 0 <= u < num_nodes:
                continue
            lo, hi = inc_ptr[u], inc_ptr[u + 1]
            cut = lo + np.searchsorted(inc_ts[lo:hi], qt[b], side="left")
            parts.append(inc_idx[max(lo, cut - k):cut])
        if not parts:
            continue
        merged = np.unique(np.concatenate(parts))[-k:]
        if len(merged):
            out[b, k - len(merged):] = merged
    return out


def inductive_channels(src, dst, ts, valid, alpha):
    """Time-decay and node-equality channels, lower triangle only.

    ``src``/``dst``/``ts``/``valid`` have shape (B, l). Output is float64
    (B, 4, l, l) in the order time, source, destination, source-vs-destination.
    Entries above the diagonal and any row/column of an invalid slot are 0.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    ts = np.asarray(ts, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    l = src.shape[1]
    mask = valid[:, :, None] & valid[:, None, :] & np.tri(l, dtype=bool)
    out = np.empty((src.shape[0], 4, l, l))
    out[:, 0] = np.exp(-alpha * np.abs(ts[:, :, None] - ts[:, None, :]))
    out[:, 1] = src[:, :, None] == src[:, None, :]
    out[:, 2] = dst[:, :, None] == dst[:, None, :]
    out[:, 3] = src[:, :, None] == dst[:, None, :]
    out *= mask[:, None]
    return out
