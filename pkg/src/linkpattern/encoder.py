"""Five-channel attention images from link sequences."""

from __future__ import annotations

import json
import math
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from linkpattern import _kernels
from linkpattern.sampler import PAD, SequenceBatch

CHANNELS = ("e", "t", "s", "o", "so")
_INDUCTIVE = {"t": 0, "s": 1, "o": 2, "so": 3}


class TimeEncoder(nn.Module):
    """``phi(dt)_i = cos(omega_i * dt + b_i)`` with trainable frequencies and phases."""

    def __init__(self, dim: int, generator: torch.Generator | None = None):
        super().__init__()
        # periods spread log-uniformly over [1e-2, 1e2] scaled time units
        log_period = torch.empty(dim).uniform_(-2.0, 2.0, generator=generator)
        self.omega = nn.Parameter(10.0 ** -log_period)
        self.phase = nn.Parameter(torch.zeros(dim))

    def forward(self, dt: torch.Tensor) -> torch.Tensor:
        # omega * dt reaches 1e4 and beyond on long histories, where float32
        # loses the phase; form the argument in float64 and cast the cosine back
        arg = dt.double().unsqueeze(-1) * self.omega.double() + self.phase.double()
        return torch.cos(arg).to(self.omega.dtype)


class LinkEncoder(nn.Module):
    """Node embeddings, time encoding and the channel-image assembly.

    ``time_scale`` divides every time difference before it reaches either
    the cosine encoding or the decay channel. Node ids outside
    ``[0, num_nodes)`` share one reserved embedding row.
    """

    def __init__(self, num_nodes: int, embed_dim: int = 64, alpha: float = 5.0,
                 time_scale: float = 1.0, channels: Sequence[str] = CHANNELS,
                 full_mutual: bool = False, generator: torch.Generator | None = None):
        super().__init__()
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        if time_scale <= 0:
            raise ValueError("time_scale must be positive")
        unknown = [c for c in channels if c not in CHANNELS]
        if unknown or not channels:
            raise ValueError(f"channels must be a non-empty subset of {CHANNELS}")
        self.num_nodes = num_nodes
        self.embed_dim = embed_dim
        self.alpha = float(alpha)
        self.time_scale = float(time_scale)
        self.channels = tuple(c for c in CHANNELS if c in channels)
        # the source-vs-destination channel is not symmetric, so its upper
        # triangle is not redundant; keeping it is opt-in
        self.full_mutual = bool(full_mutual)
        self.node_embedding = nn.Parameter(
            torch.randn(num_nodes + 1, embed_dim, generator=generator) / math.sqrt(embed_dim))
        self.time_encoder = TimeEncoder(embed_dim, generator=generator)

    @property
    def unknown_row(self) -> int:
        return self.num_nodes

    def rows(self, ids) -> torch.Tensor:
        ids = torch.from_numpy(np.array(ids, dtype=np.int64))
        known = (ids >= 0) & (ids < self.num_nodes)
        return torch.where(known, ids, torch.full_like(ids, self.num_nodes))

    def time_encode(self, dt) -> torch.Tensor:
        dt = torch.as_tensor(np.asarray(dt, dtype=np.float64) / self.time_scale)
        return self.time_encoder(dt)

    def link_embed(self, src, dst, ts, t_query, valid=None) -> torch.Tensor:
        """``phi(t_query - ts) + H[src] + H[dst]``; zero where ``valid`` is false."""
        dt = np.asarray(t_query, dtype=np.float64) - np.asarray(ts, dtype=np.float64)
        H = self.node_embedding
        emb = self.time_encode(dt) + H[self.rows(src)] + H[self.rows(dst)]
        if valid is not None:
            emb = emb * torch.as_tensor(np.asarray(valid), dtype=emb.dtype).unsqueeze(-1)
        return emb

    def sequence_embed(self, batch: SequenceBatch) -> torch.Tensor:
        t_q = np.broadcast_to(batch.query_time[:, None], batch.ts.shape)
        return self.link_embed(batch.src, batch.dst, batch.ts, t_q, batch.valid)

    def forward(self, batch: SequenceBatch) -> torch.Tensor:
        """Channel images of shape (B, C, l, l); C is 5 unless channels were dropped."""
        l = batch.length
        dtype = self.node_embedding.dtype
        out = []
        if "e" in self.channels:
            emb = self.sequence_embed(batch)
            out.append(torch.tril(emb @ emb.transpose(1, 2)))
        if any(c in _INDUCTIVE for c in self.channels):
            ind = inductive_channels(batch, self.alpha, self.time_scale)
            if self.full_mutual:
                ind[:, 3] += mutual_upper(batch)
            ind = torch.from_numpy(ind).to(dtype)
            for c in self.channels:
                if c in _INDUCTIVE:
                    out.append(ind[:, _INDUCTIVE[c]])
        image = torch.stack(out, dim=1)
        assert image.shape[-2:] == (l, l)
        return image


def inductive_channels(batch: SequenceBatch, alpha: float, time_scale: float = 1.0) -> np.ndarray:
    return _kernels.inductive_channels(batch.src, batch.dst, batch.ts / time_scale,
                                       batch.valid, alpha)


def mutual_upper(batch: SequenceBatch) -> np.ndarray:
    """Strict upper triangle of the source-vs-destination equality channel."""
    l = batch.length
    ok = batch.valid[:, :, None] & batch.valid[:, None, :]
    eq = batch.src[:, :, None] == batch.dst[:, None, :]
    return (eq & ok & np.triu(np.ones((l, l), bool), 1)).astype(np.float64)


# single-matrix versions, full (pre-zeroing) matrices; PAD slots are -1 / None

def transductive_channel(embeds) -> np.ndarray:
    e = np.asarray(embeds, dtype=np.float64)
    return e @ e.T


def time_channel(ts, alpha: float, valid=None) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    ts = np.asarray(ts, dtype=np.float64)
    out = np.exp(-alpha * np.abs(ts[:, None] - ts[None, :]))
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        out *= valid[:, None] & valid[None, :]
    return out


def identity_channel(ids, other=None) -> np.ndarray:
    a = np.array([PAD if x is None else x for x in ids], dtype=np.int64)
    b = a if other is None else np.array([PAD if x is None else x for x in other], dtype=np.int64)
    return ((a[:, None] == b[None, :]) & (a[:, None] != PAD) & (b[None, :] != PAD)).astype(float)


def assemble_image(batch: SequenceBatch, encoder: LinkEncoder) -> torch.Tensor:
    return encoder(batch)


def image_to_json(image) -> str:
    """Debug dump of one channel image as a nested JSON array."""
    arr = image.detach().cpu().numpy() if isinstance(image, torch.Tensor) else np.asarray(image)
    return json.dumps(arr.astype(float).tolist())
