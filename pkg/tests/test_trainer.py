import csv
import itertools

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from linkpattern import trainer
from linkpattern.graph_store import TemporalGraph, chronological_split
from linkpattern.synthetic import reciprocal_graph
from linkpattern.trainer import (CheckpointError, LinkPredictor, TrainConfig, TrainingDiverged,
                                 auto_time_scale, evaluate_auc, evaluate_split, gradient_check,
                                 load_checkpoint, run_dir_name, save_checkpoint, train)

TINY = dict(n_nearest=4, embed_dim=8, width=8, stage1_layers=1, stage2_layers=1, expansion=2,
            head_channels=16, batch_size=16)


def small_graph(seed=0, n=300, v=25):
    rng = np.random.default_rng(seed)
    return TemporalGraph.from_arrays(rng.integers(v, size=n), rng.integers(v, size=n),
                                     np.sort(rng.random(n)) * 100, num_nodes=v)


# --- AUC ----------------------------------------------------------------------

def test_auc_examples():
    assert evaluate_auc([0.9, 0.8], [0.1, 0.2]) == 1.0
    assert evaluate_auc([0.5], [0.5]) == 0.5
    assert evaluate_auc([0.9, 0.3], [0.5, 0.1]) == 0.75
    with pytest.raises(ValueError):
        evaluate_auc([], [0.1])


def pairwise_auc(pos, neg):
    wins = sum((p > q) + 0.5 * (p == q) for p, q in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auc_matches_pairwise_count_200_sets():
    rng = np.random.default_rng(0)
    for k in range(200):
        n_pos, n_neg = rng.integers(1, 40, size=2)
        # coarse rounding on half the sets so ties occur
        pos, neg = rng.random(n_pos), rng.random(n_neg)
        if k % 2:
            pos, neg = np.round(pos, 1), np.round(neg, 1)
        assert evaluate_auc(pos, neg) == pytest.approx(pairwise_auc(pos, neg), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=20),
       st.lists(st.integers(0, 5), min_size=1, max_size=20))
def test_auc_oracle_property(pos, neg):
    assert evaluate_auc(pos, neg) == pytest.approx(pairwise_auc(pos, neg), abs=1e-12)


# --- config -------------------------------------------------------------------

def test_config_validation():
    for bad in [dict(epochs=0), dict(batch_size=-1), dict(alpha=0), dict(n_nearest=-1),
                dict(p_parametric=3, m_candidates=2), dict(time_scale=0),
                dict(channels="e,q"), dict(learning_rate=-1)]:
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochs": 2, "bogus": 1})
    cfg = TrainConfig(p_parametric=2)
    assert cfg.candidates == 48
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_run_dir_name_hash_and_seed():
    a, b = TrainConfig(seed=1), TrainConfig(seed=2)
    assert run_dir_name(a) != run_dir_name(b)
    assert run_dir_name(a).split("-")[0] == run_dir_name(b).split("-")[0]
    assert run_dir_name(TrainConfig(n_nearest=3)) != run_dir_name(TrainConfig())


def test_auto_time_scale():
    g = TemporalGraph.from_arrays(np.zeros(20, int), np.ones(20, int), np.arange(20) * 3.0)
    assert auto_time_scale(g, chronological_split(g)) == pytest.approx(3.0)


# --- optimization properties -------------------------------------------------

def batch_for(model, g, rows, seed=0):
    rng = np.random.default_rng(seed)
    neg = rng.integers(g.num_nodes, size=len(rows))
    batch = model.builder(g).build(np.r_[g.src[rows], g.src[rows]], np.r_[g.dst[rows], neg],
                                   np.r_[g.ts[rows], g.ts[rows]], model.encoder)
    labels = torch.cat([torch.ones(len(rows), dtype=torch.long),
                        torch.zeros(len(rows), dtype=torch.long)])
    return batch, labels


def test_zero_learning_rate_step_is_identity():
    g = small_graph()
    cfg = TrainConfig(p_parametric=2, **TINY)
    model = LinkPredictor(g.num_nodes, cfg, 1.0, generator=torch.Generator().manual_seed(0))
    before = {k: v.clone() for k, v in model.named_parameters()}
    opt = torch.optim.Adam(model.parameters(), lr=0.0)
    batch, labels = batch_for(model, g, np.arange(100, 132))
    F.cross_entropy(model(batch), labels).backward()
    opt.step()
    for k, v in model.named_parameters():
        assert torch.equal(v, before[k]), k


def test_loss_permutation_invariant():
    g = small_graph(1)
    cfg = TrainConfig(p_parametric=1, **TINY)
    model = LinkPredictor(g.num_nodes, cfg, 1.0,
                          generator=torch.Generator().manual_seed(1)).double().train()
    batch, labels = batch_for(model, g, np.arange(150, 182))
    perm = np.random.default_rng(0).permutation(len(labels))
    a = F.cross_entropy(model(batch), labels).item()
    b = F.cross_entropy(model(batch.select(perm)), labels[perm]).item()
    assert a == pytest.approx(b, rel=1e-6)


def test_embedding_gradient_sparsity():
    g = small_graph(2, v=60)
    cfg = TrainConfig(**TINY)
    model = LinkPredictor(g.num_nodes, cfg, 1.0, generator=torch.Generator().manual_seed(2))
    batch, labels = batch_for(model, g, np.arange(200, 210))
    F.cross_entropy(model(batch), labels).backward()
    grad = model.encoder.node_embedding.grad
    used = set(batch.src[batch.valid].tolist()) | set(batch.dst[batch.valid].tolist())
    for row in range(g.num_nodes + 1):
        if row not in used:
            assert torch.all(grad[row] == 0)
    assert any(torch.any(grad[r] != 0) for r in used)


def test_gradient_check_passes_and_control_fails():
    good = gradient_check()
    assert good["max_rel_error"] < 1e-4, good["per_parameter"]
    assert good["untouched_rows_zero"]
    assert {"encoder.time_encoder.omega", "encoder.time_encoder.phase",
            "encoder.node_embedding"} <= set(good["per_parameter"])
    bad = gradient_check(corrupt=True)
    assert bad["max_rel_error"] > 1e-2


# --- training loop ------------------------------------------------------------

def test_train_writes_metrics_and_checkpoint(tmp_path):
    g = small_graph(3)
    cfg = TrainConfig(epochs=3, patience=5, **TINY)
    seen = []
    res = train(g, chronological_split(g), cfg, run_dir=tmp_path, on_epoch=seen.append)
    assert len(seen) == 3 and res.checkpoint_path == tmp_path / "best.pt"
    with (tmp_path / "metrics.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == trainer.METRICS_HEADER
    assert [int(r[0]) for r in rows[1:]] == [1, 2, 3]
    assert res.best_val_auc == max(r.auc for r in res.reports)
    assert res.best_val_auc >= res.final_val_auc


def test_best_checkpoint_not_worse_than_final(tmp_path):
    g = small_graph(4)
    split = chronological_split(g)
    cfg = TrainConfig(epochs=6, patience=2, **TINY)
    res = train(g, split, cfg, run_dir=tmp_path)
    best = evaluate_split(g, split.validation, res.checkpoint_path, cfg.seed)
    assert best.auc == pytest.approx(res.best_val_auc, abs=1e-12)
    assert best.auc >= res.final_val_auc


def test_early_stopping_patience():
    g = small_graph(5)
    cfg = TrainConfig(epochs=30, patience=2, **TINY)
    res = train(g, chronological_split(g), cfg)
    aucs = [r.auc for r in res.reports]
    assert res.best_epoch == 1 + int(np.argmax(aucs))
    if len(aucs) < 30:
        # stopped exactly `patience` epochs after the last improvement
        assert len(aucs) == res.best_epoch + 2
        assert all(a <= res.best_val_auc for a in aucs[res.best_epoch:])


def test_training_is_deterministic():
    g = small_graph(6)
    cfg = TrainConfig(epochs=2, p_parametric=2, **TINY)
    a = train(g, chronological_split(g), cfg)
    b = train(g, chronological_split(g), cfg)
    assert [r.train_loss for r in a.reports] == [r.train_loss for r in b.reports]
    assert [r.auc for r in a.reports] == [r.auc for r in b.reports]


def test_planted_reciprocal_pattern_learned_within_five_epochs():
    g = reciprocal_graph(num_links=200, seed=0)
    cfg = TrainConfig(n_nearest=4, embed_dim=8, width=16, stage1_layers=1, stage2_layers=1,
                      expansion=2, head_channels=32, batch_size=4, learning_rate=2e-3,
                      epochs=5, patience=5, full_mutual=True)
    res = train(g, chronological_split(g), cfg)
    assert max(r.train_auc for r in res.reports) > 0.95


def test_divergence_aborts(monkeypatch):
    g = small_graph(7)

    def nan_loss(logits, labels):
        return logits.sum() * float("nan")

    monkeypatch.setattr(trainer.F, "cross_entropy", nan_loss)
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(g, chronological_split(g), TrainConfig(epochs=2, **TINY))


# --- evaluation and checkpoints ----------------------------------------------

def test_zero_model_auc_is_half():
    g = small_graph(8)
    split = chronological_split(g)
    model = LinkPredictor(g.num_nodes, TrainConfig(**TINY), 1.0)
    with torch.no_grad():
        for p in model.net.parameters():
            p.zero_()
    assert evaluate_split(g, split.test, model, 0).auc == 0.5


def test_checkpoint_round_trip_bit_exact(tmp_path):
    g = small_graph(9)
    cfg = TrainConfig(epochs=1, p_parametric=2, **TINY)
    res = train(g, chronological_split(g), cfg, run_dir=tmp_path)
    model, payload = load_checkpoint(res.checkpoint_path)
    assert payload["config"] == cfg.to_dict()
    rng = np.random.default_rng(0)
    qs, qd = rng.integers(g.num_nodes, size=(2, 100))
    qt = rng.random(100) * 110
    a = res.model.score_batches(g, qs, qd, qt)
    b = model.score_batches(g, qs, qd, qt)
    assert np.array_equal(a[1], b[1])
    r1 = evaluate_split(g, chronological_split(g).test, res.checkpoint_path, 3)
    r2 = evaluate_split(g, chronological_split(g).test, res.checkpoint_path, 3)
    assert r1.auc == r2.auc


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.pt")
    torch.save({"format": "other"}, tmp_path / "x.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.pt")
    g = small_graph(10)
    model = LinkPredictor(g.num_nodes, TrainConfig(**TINY), 1.0)
    save_checkpoint(tmp_path / "m.pt", model, g)
    other = small_graph(11, v=30)
    with pytest.raises(CheckpointError, match="node map"):
        evaluate_split(other, chronological_split(other).test, tmp_path / "m.pt", 0)
