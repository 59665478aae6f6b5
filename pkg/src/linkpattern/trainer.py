"""Training, evaluation and gradient checking for the link predictor."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.stats import rankdata

from linkpattern.encoder import CHANNELS, LinkEncoder
from linkpattern.graph_store import DatasetSplit, TemporalGraph
from linkpattern.model import EffNet, EffNetSpec, predict_score
from linkpattern.sampler import SequenceBatch, SequenceBuilder

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "train_loss", "val_auc", "epoch_seconds")
CHECKPOINT_FORMAT = "linkpattern-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0
    patience: int = 3
    n_nearest: int = 12
    p_parametric: int = 0
    m_candidates: int | None = None
    alpha: float = 5.0
    embed_dim: int = 64
    time_scale: float | str = "auto"
    channels: str = "e,t,s,o,so"
    full_mutual: bool = False
    width: int = 64
    stage1_layers: int = 3
    stage2_layers: int = 7
    expansion: int = 4
    head_channels: int = 1280
    eval_batch_size: int = 512

    def __post_init__(self):
        for name in ("epochs", "batch_size", "patience", "embed_dim", "width",
                     "expansion", "head_channels", "eval_batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("n_nearest", "p_parametric", "stage1_layers", "stage2_layers"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.p_parametric and self.candidates < self.p_parametric:
            raise ValueError("m_candidates must be >= p_parametric")
        if self.time_scale != "auto" and not float(self.time_scale) > 0:
            raise ValueError("time_scale must be 'auto' or a positive number")
        bad = [c for c in self.channel_list if c not in CHANNELS]
        if bad or not self.channel_list:
            raise ValueError(f"unknown channels {bad}; choose from {CHANNELS}")

    @property
    def candidates(self) -> int:
        if not self.p_parametric:
            return 0
        return self.m_candidates if self.m_candidates is not None else 4 * self.n_nearest

    @property
    def channel_list(self) -> tuple[str, ...]:
        return tuple(c.strip() for c in self.channels.split(",") if c.strip())

    def effnet_spec(self) -> EffNetSpec:
        return EffNetSpec(in_channels=len(self.channel_list), width=self.width,
                          stage1_layers=self.stage1_layers, stage2_layers=self.stage2_layers,
                          expansion=self.expansion, head_channels=self.head_channels)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("seed")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]


@dataclass
class EvalReport:
    auc: float
    loss: float
    epoch: int | None = None
    seconds: float = 0.0
    train_loss: float | None = None
    train_auc: float | None = None


@dataclass
class TrainResult:
    model: "LinkPredictor"
    reports: list[EvalReport]
    best_epoch: int
    best_val_auc: float
    checkpoint_path: Path | None = None
    final_val_auc: float | None = None


class LinkPredictor(nn.Module):
    """Encoder and CNN together, with the sampling settings they were trained with."""

    def __init__(self, num_nodes: int, config: TrainConfig, time_scale: float,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        self.encoder = LinkEncoder(num_nodes, config.embed_dim, config.alpha, time_scale,
                                   config.channel_list, config.full_mutual, generator=generator)
        self.net = EffNet(config.effnet_spec())
        self.net.reset_parameters(generator)

    @property
    def num_nodes(self) -> int:
        return self.encoder.num_nodes

    def builder(self, g: TemporalGraph) -> SequenceBuilder:
        c = self.config
        return SequenceBuilder(g, c.n_nearest, c.p_parametric, c.candidates or None)

    def forward(self, batch: SequenceBatch) -> torch.Tensor:
        return self.net(self.encoder(batch))

    @torch.no_grad()
    def score_batches(self, g: TemporalGraph, qsrc, qdst, qt,
                      batch_size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Positive-class probabilities and logits for many queries (inference mode)."""
        was_training = self.training
        self.eval()
        builder = self.builder(g)
        bs = batch_size or self.config.eval_batch_size
        probs, logits = [], []
        for lo in range(0, len(qsrc), bs):
            sl = slice(lo, lo + bs)
            batch = builder.build(qsrc[sl], qdst[sl], qt[sl], self.encoder)
            out = self(batch)
            logits.append(out.double().numpy())
            probs.append(predict_score(out).double().numpy())
        self.train(was_training)
        if not probs:
            return np.empty(0), np.empty((0, 2))
        return np.concatenate(probs), np.concatenate(logits)


def evaluate_auc(scores_pos: Sequence[float], scores_neg: Sequence[float]) -> float:
    """ROC-AUC via the Mann-Whitney statistic; tied pairs count one half."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[:len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def auto_time_scale(g: TemporalGraph, split: DatasetSplit) -> float:
    """Mean inter-event time over the training links (1.0 if degenerate)."""
    tr = split.train
    if len(tr) < 2:
        return 1.0
    span = float(g.ts[tr[-1]] - g.ts[tr[0]])
    scale = span / (len(tr) - 1)
    return scale if scale > 0 and math.isfinite(scale) else 1.0


def split_negatives(g: TemporalGraph, rows: range, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(g.num_nodes, size=len(rows), dtype=np.int64)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    lse = np.logaddexp(logits[:, 0], logits[:, 1])
    return float(np.mean(lse - logits[np.arange(len(labels)), labels]))


def evaluate_rows(model: LinkPredictor, g: TemporalGraph, rows: range, seed: int,
                  epoch: int | None = None) -> EvalReport:
    t0 = time.perf_counter()
    idx = np.arange(rows.start, rows.stop)
    neg = split_negatives(g, rows, seed)
    qsrc = np.concatenate([g.src[idx], g.src[idx]])
    qdst = np.concatenate([g.dst[idx], neg])
    qt = np.concatenate([g.ts[idx], g.ts[idx]])
    probs, logits = model.score_batches(g, qsrc, qdst, qt)
    labels = np.r_[np.ones(len(idx), np.int64), np.zeros(len(idx), np.int64)]
    return EvalReport(auc=evaluate_auc(probs[:len(idx)], probs[len(idx):]),
                      loss=_cross_entropy(logits, labels), epoch=epoch,
                      seconds=time.perf_counter() - t0)


def run_dir_name(config: TrainConfig) -> str:
    return f"{config.digest()}-seed{config.seed}"


def _write_metrics(path: Path, reports: list[EvalReport]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in reports:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.auc), f"{r.seconds:.3f}"])


def train(g: TemporalGraph, split: DatasetSplit, config: TrainConfig,
          run_dir: str | Path | None = None,
          on_epoch: Callable[[EvalReport], None] | None = None,
          node_map_file: str | None = None) -> TrainResult:
    """Fit encoder and CNN on the training range, selecting epochs by validation AUC.

    Each training positive is paired with one freshly corrupted negative per
    epoch; validation negatives are fixed by ``config.seed``. The best
    validation state is restored into the returned model and, when
    ``run_dir`` is given, written to ``run_dir/best.pt`` together with
    ``metrics.csv``.
    """
    if len(split.train) == 0 or len(split.validation) == 0:
        raise ValueError("training and validation ranges must be non-empty")
    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    scale = auto_time_scale(g, split) if config.time_scale == "auto" else float(config.time_scale)
    model = LinkPredictor(g.num_nodes, config, scale, generator=gen)
    builder = model.builder(g)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                           weight_decay=config.weight_decay)
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)

    train_idx = np.arange(split.train.start, split.train.stop)
    reports: list[EvalReport] = []
    best_auc, best_epoch, best_state, stale = -math.inf, 0, None, 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(train_idx)
        neg_all = rng.integers(g.num_nodes, size=len(order), dtype=np.int64)
        model.train()
        total, count = 0.0, 0
        pos_scores, neg_scores = [], []
        for lo in range(0, len(order), config.batch_size):
            pos = order[lo:lo + config.batch_size]
            neg = neg_all[lo:lo + config.batch_size]
            b = len(pos)
            batch = builder.build(np.r_[g.src[pos], g.src[pos]], np.r_[g.dst[pos], neg],
                                  np.r_[g.ts[pos], g.ts[pos]], model.encoder)
            labels = torch.cat([torch.ones(b, dtype=torch.long), torch.zeros(b, dtype=torch.long)])
            logits = model(batch)
            loss = F.cross_entropy(logits, labels)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss.item()} at epoch {epoch}, batch starting {lo}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item() * 2 * b
            count += 2 * b
            with torch.no_grad():
                p = predict_score(logits).double().numpy()
            pos_scores.append(p[:b])
            neg_scores.append(p[b:])
        train_loss = total / count
        val = evaluate_rows(model, g, split.validation, config.seed, epoch)
        report = EvalReport(auc=val.auc, loss=val.loss, epoch=epoch,
                            seconds=time.perf_counter() - t0, train_loss=train_loss,
                            train_auc=evaluate_auc(np.concatenate(pos_scores),
                                                   np.concatenate(neg_scores)))
        reports.append(report)
        log.info("epoch %d train_loss %.4f train_auc %.4f val_auc %.4f (%.1fs)", epoch,
                 train_loss, report.train_auc, report.auc, report.seconds)
        if on_epoch is not None:
            on_epoch(report)
        if run_dir is not None:
            _write_metrics(run_dir / "metrics.csv", reports)
        if report.auc > best_auc:
            best_auc, best_epoch, stale = report.auc, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if stale >= config.patience:
                break

    final_auc = reports[-1].auc
    model.load_state_dict(best_state)
    model.eval()
    ckpt = None
    if run_dir is not None:
        ckpt = run_dir / "best.pt"
        save_checkpoint(ckpt, model, g, extra={"best_epoch": best_epoch, "best_val_auc": best_auc},
                        node_map_file=node_map_file)
    return TrainResult(model, reports, best_epoch, best_auc, ckpt, final_auc)


def save_checkpoint(path: str | Path, model: LinkPredictor, g: TemporalGraph,
                    extra: dict | None = None, node_map_file: str | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "effnet_spec": model.net.spec.to_dict(),
        "num_nodes": model.num_nodes,
        "time_scale": model.encoder.time_scale,
        "node_labels": list(g.labels),
        "node_map_file": node_map_file,
        "encoder": model.encoder.state_dict(),
        "net": model.net.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, Path(path))


def load_checkpoint(path: str | Path) -> tuple[LinkPredictor, dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    config = TrainConfig.from_dict(payload["config"])
    model = LinkPredictor(payload["num_nodes"], config, payload["time_scale"])
    model.encoder.load_state_dict(payload["encoder"])
    model.net.load_state_dict(payload["net"])
    model.eval()
    return model, payload


def check_compatible(payload: dict, g: TemporalGraph) -> None:
    if tuple(payload["node_labels"]) != g.labels:
        raise CheckpointError(
            f"checkpoint node map ({len(payload['node_labels'])} nodes) does not match "
            f"dataset node map ({g.num_nodes} nodes)")


def evaluate_split(g: TemporalGraph, rows: range, checkpoint: str | Path | LinkPredictor,
                   seed: int) -> EvalReport:
    if isinstance(checkpoint, LinkPredictor):
        model = checkpoint
        if model.num_nodes != g.num_nodes:
            raise CheckpointError("model node count does not match dataset")
    else:
        model, payload = load_checkpoint(checkpoint)
        check_compatible(payload, g)
    return evaluate_rows(model, g, rows, seed)


# --- gradient checking -------------------------------------------------------

GRADCHECK_CONFIG = TrainConfig(n_nearest=2, p_parametric=1, m_candidates=2, embed_dim=4,
                               width=3, stage1_layers=1, stage2_layers=1, expansion=2,
                               head_channels=5, alpha=1.0, time_scale=1.0)


def _gradcheck_graph(seed: int) -> TemporalGraph:
    rng = np.random.default_rng(seed)
    n, v = 40, 6
    return TemporalGraph.from_arrays(rng.integers(v, size=n), rng.integers(v, size=n),
                                     np.sort(rng.random(n) * 10), num_nodes=v + 2)


def gradient_check(config: TrainConfig = GRADCHECK_CONFIG, seed: int = 0, eps: float = 1e-5,
                   corrupt: bool = False, grad_floor: float = 1e-6) -> dict:
    """Compare autograd gradients with central differences in float64.

    Sequences (including the parametric top-p choice) are built once and held
    fixed, since selection is not differentiable. ``corrupt=True`` scales the
    stem convolution's weight gradient by 1.5 as a negative control.

    Returns ``{"max_rel_error", "per_parameter", "untouched_rows_zero"}``; the
    per-parameter error is ``||g_auto - g_fd|| / max(||g_auto||, ||g_fd||)``
    restricted, for the embedding table, to the rows the batch touches.
    """
    g = _gradcheck_graph(seed)
    gen = torch.Generator().manual_seed(seed)
    model = LinkPredictor(g.num_nodes, config, float(config.time_scale), generator=gen).double()
    model.train()
    rng = np.random.default_rng(seed)
    q = rng.choice(np.arange(10, len(g)), size=4, replace=False)
    neg = rng.integers(g.num_nodes, size=len(q))
    batch = model.builder(g).build(np.r_[g.src[q], g.src[q]], np.r_[g.dst[q], neg],
                                   np.r_[g.ts[q], g.ts[q]], model.encoder)
    labels = torch.cat([torch.ones(len(q), dtype=torch.long), torch.zeros(len(q), dtype=torch.long)])

    def loss_fn():
        return F.cross_entropy(model(batch), labels)

    params = dict(model.named_parameters())
    hook = None
    if corrupt:
        hook = model.net.stem[0].weight.register_hook(lambda grad: grad * 1.5)
    model.zero_grad()
    loss_fn().backward()
    if hook is not None:
        hook.remove()
    analytic = {k: p.grad.detach().clone() for k, p in params.items()}

    emb_name = "encoder.node_embedding"
    touched = np.unique(model.encoder.rows(np.concatenate([batch.src[batch.valid],
                                                           batch.dst[batch.valid]])).numpy())
    per_param = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            if name == emb_name:
                d = p.shape[1]
                positions = [r * d + c for r in touched for c in range(d)]
            else:
                positions = range(flat.numel())
            num = torch.zeros(len(positions), dtype=torch.float64)
            for k, pos in enumerate(positions):
                orig = flat[pos].item()
                flat[pos] = orig + eps
                up = loss_fn().item()
                flat[pos] = orig - eps
                down = loss_fn().item()
                flat[pos] = orig
                num[k] = (up - down) / (2 * eps)
            ana = analytic[name].view(-1)[list(positions)]
            # the floor keeps exactly-zero gradients (e.g. a BN bias feeding a
            # train-mode BN) from dividing roundoff by roundoff
            denom = max(ana.norm().item(), num.norm().item(), grad_floor)
            per_param[name] = (ana - num).norm().item() / denom

    mask = torch.ones(params[emb_name].shape[0], dtype=torch.bool)
    mask[torch.as_tensor(touched)] = False
    untouched_zero = bool(torch.all(analytic[emb_name][mask] == 0))
    return {"max_rel_error": max(per_param.values()), "per_parameter": per_param,
            "untouched_rows_zero": untouched_zero}
