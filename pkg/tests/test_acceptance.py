"""Acceptance criteria, one test per criterion.

Each test adds a PASS / FAIL / BLOCKED line that is printed in the pytest
terminal summary. Criteria needing the real UCI or MOOC link streams read
them from ``LINKPATTERN_UCI_CSV`` / ``LINKPATTERN_MOOC_CSV`` (or
``data/uci.csv`` / ``data/mooc.csv`` at the repository root) and are
reported BLOCKED when the files are absent.
"""

import csv
import itertools
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch
import yaml
from scipy.stats import binomtest

from linkpattern import cli
from linkpattern.baseline import edgebank_eval
from linkpattern.encoder import LinkEncoder, identity_channel, time_channel
from linkpattern.graph_store import (TemporalGraph, chronological_split, history_indices,
                                     load_csv)
from linkpattern.model import EffNet, EffNetSpec
from linkpattern.sampler import ORIGIN_PARAMETRIC, PAD, SequenceBatch, SequenceBuilder
from linkpattern.synthetic import distant_reply_graph
from linkpattern.trainer import (TrainConfig, evaluate_auc, evaluate_rows, gradient_check,
                                 load_checkpoint, save_checkpoint, train)

ROOT = Path(__file__).resolve().parents[1]


def dataset(name):
    env = os.environ.get(f"LINKPATTERN_{name.upper()}_CSV")
    path = Path(env) if env else ROOT / "data" / f"{name}.csv"
    return path if path.is_file() else None


def outcome(report, number, ok, detail):
    report(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


def blocked(report, number, detail):
    report(f"criterion {number}: BLOCKED - {detail}")
    pytest.skip(detail)


# --- 1 ------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_1_uci_end_to_end(acceptance_report):
    path = dataset("uci")
    if path is None:
        blocked(acceptance_report, 1, "UCI link stream not available "
                "(set LINKPATTERN_UCI_CSV); needs test AUC >= 0.93 over 3 seeds")
    g = load_csv(path)
    split = chronological_split(g)
    t0 = time.perf_counter()
    aucs, best_epochs = [], []
    for seed in range(3):
        res = train(g, split, TrainConfig(seed=seed))
        aucs.append(evaluate_rows(res.model, g, split.test, seed).auc)
        best_epochs.append(res.best_epoch)
    hours = (time.perf_counter() - t0) / 3600
    ok = np.mean(aucs) >= 0.93 and max(best_epochs) <= 8 and hours <= 2
    outcome(acceptance_report, 1, ok,
            f"UCI test AUC mean {np.mean(aucs):.4f} (seeds {np.round(aucs, 4).tolist()}, "
            f"need >= 0.93); best epochs {best_epochs} (need <= 8); {hours:.2f} h (need <= 2)")


# --- 2 ------------------------------------------------------------------------

@pytest.mark.parametrize("name, target, tol", [("uci", 0.812, 0.02), ("mooc", 0.471, 0.03)])
def test_criterion_2_edgebank(acceptance_report, name, target, tol):
    path = dataset(name)
    if path is None:
        blocked(acceptance_report, 2, f"{name.upper()} link stream not available "
                f"(set LINKPATTERN_{name.upper()}_CSV); needs EdgeBank AUC {target} +/- {tol}")
    g = load_csv(path, write_node_map=False)
    split = chronological_split(g)
    reports = [edgebank_eval(g, split, seed) for seed in range(10)]
    auc = float(np.mean([r.auc for r in reports]))
    slowest = max(r.seconds for r in reports)
    ok = abs(auc - target) <= tol and slowest < 60
    outcome(acceptance_report, 2, ok,
            f"{name.upper()} EdgeBank AUC {auc:.4f} over 10 seeds (need {target} +/- {tol}); "
            f"slowest run {slowest:.1f} s (need < 60)")


# --- 3 ------------------------------------------------------------------------

N, M, P = 2, 8, 3


def ablation_config(p, seed):
    return TrainConfig(n_nearest=N, p_parametric=p, m_candidates=M, embed_dim=16, width=16,
                       stage1_layers=1, stage2_layers=2, head_channels=64, batch_size=32,
                       epochs=20, patience=5, seed=seed)


def brute_force_recall(model, g, rows):
    """Recompute closeness in float64 from raw parameters and check the pipeline.

    Returns (recalled targets, queries with a planted target, chance hits,
    selections disagreeing with the brute force beyond float32 ties).
    """
    enc = model.encoder
    H = enc.node_embedding.detach().double().numpy()
    om = enc.time_encoder.omega.detach().double().numpy()
    ph = enc.time_encoder.phase.detach().double().numpy()

    def emb(s, o, dt):
        return np.cos(om * dt / enc.time_scale + ph) + H[s] + H[o]

    batch = model.builder(g).build(g.src[rows], g.dst[rows], g.ts[rows], enc)
    hits = total = disagree = 0
    chance = 0.0
    for k, i in enumerate(rows):
        s, o, t = int(g.src[i]), int(g.dst[i]), float(g.ts[i])
        hist = history_indices(g, (s, o), t, N + M)
        cand = hist[:max(0, len(hist) - N)]
        picked = set(batch.link_index[k][batch.origin[k] == ORIGIN_PARAMETRIC].tolist())
        if len(cand):
            q = emb(s, o, 0.0)
            scores = np.array([emb(g.src[c], g.dst[c], t - g.ts[c]) @ q for c in cand])
            order = np.argsort(-scores, kind="stable")
            top = set(cand[order[:P]].tolist())
            if top != picked:
                srt = scores[order]
                gap = srt[P - 1] - srt[P] if len(srt) > P else np.inf
                disagree += gap > 1e-4 * max(1.0, abs(srt[P - 1]))
        # planted target: the latest reverse link beyond the nearest window
        target = next((int(h) for h in hist[::-1][N:]
                       if g.src[h] == o and g.dst[h] == s), None)
        if target is None:
            continue
        total += 1
        hits += target in picked
        chance += min(P, len(cand)) / len(cand)
    return hits, total, chance, disagree


@pytest.mark.slow
def test_criterion_3_parametric_ablation(acceptance_report):
    lines, ok = [], True
    for seed in range(3):
        g = distant_reply_graph(num_chains=2000, chain_length=4, min_distance=2, seed=seed)
        split = chronological_split(g)
        auc = {}
        for p in (0, P):
            res = train(g, split, ablation_config(p, seed))
            auc[p] = evaluate_rows(res.model, g, split.test, seed).auc
        rows = np.arange(split.test.start, split.test.stop)
        hits, total, chance, disagree = brute_force_recall(res.model, g, rows)
        pval = binomtest(hits, total, chance / total, alternative="greater").pvalue
        gain = auc[P] - auc[0]
        seed_ok = gain >= 0.05 and disagree == 0 and pval < 0.01
        ok &= seed_ok
        lines.append(f"seed {seed}: AUC P=0 {auc[0]:.3f} P={P} {auc[P]:.3f} gain {gain:+.3f}; "
                     f"recall {hits}/{total} = {hits / total:.3f} vs chance "
                     f"{chance / total:.3f} (p={pval:.1e}); oracle disagreements {disagree}")
    outcome(acceptance_report, 3, ok,
            f"N={N}, M={M}, target beyond N; need gain >= 0.05 and recall above chance. "
            + " | ".join(lines))


# --- 4 ------------------------------------------------------------------------

def _batch(src, dst, ts, valid):
    origin = np.where(valid, 1, 0).astype(np.int8)
    origin[:, -1] = 3
    return SequenceBatch(np.where(valid, src, PAD), np.where(valid, dst, PAD),
                         np.where(valid, ts, 0.0), valid, origin,
                         np.full(src.shape, PAD, np.int64))


def check_relabeling():
    rng = np.random.default_rng(0)
    B, l, v = 1000, 13, 20
    enc = LinkEncoder(v, 8, generator=torch.Generator().manual_seed(0))
    valid = np.arange(l)[None, :] >= rng.integers(0, l, size=B)[:, None]
    src, dst = rng.integers(v, size=(2, B, l))
    ts = np.sort(rng.random((B, l)) * 10, axis=1)
    perm = np.array([rng.permutation(v) for _ in range(B)])
    r = np.arange(B)[:, None]
    a = enc(_batch(src, dst, ts, valid))[:, 1:]
    b = enc(_batch(perm[r, src], perm[r, dst], ts, valid))[:, 1:]
    return torch.equal(a, b), "relabeling 1000 sequences bit-exact"


def _partition(values):
    first = {}
    return tuple(first.setdefault(x, len(first)) for x in values)


def _recover(S, O, SO):
    l = len(S)
    parent = list(range(2 * l))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for i, j in itertools.product(range(l), repeat=2):
        for a, b, on in ((i, j, S[i, j]), (l + i, l + j, O[i, j]), (i, l + j, SO[i, j])):
            if on:
                parent[find(a)] = find(b)
    return _partition([find(x) for x in range(2 * l)])


def check_reconstructability():
    count = 0
    for l in range(1, 5):
        for pairs in itertools.product(range(9), repeat=l):
            s = [p // 3 for p in pairs]
            o = [p % 3 for p in pairs]
            got = _recover(identity_channel(s), identity_channel(o), identity_channel(s, o))
            if got != _partition(s + o):
                return False, f"partition mismatch for s={s} o={o}"
            count += 1
    return True, f"partition recovered on all {count} sequences (raw channels)"


def check_cam_gap():
    net = EffNet(EffNetSpec(width=16, stage1_layers=1, stage2_layers=2, head_channels=64)).double()
    net.reset_parameters(torch.Generator().manual_seed(0))
    gen = torch.Generator().manual_seed(1)
    net.train()
    with torch.no_grad():
        net(torch.randn(32, 5, 9, 9, generator=gen, dtype=torch.float64))
    net.eval()
    worst = 0.0
    with torch.no_grad():
        for k in range(100):
            l = 2 + k % 14
            x = torch.randn(1, 5, l, l, generator=gen, dtype=torch.float64)
            logits = net(x)[0]
            for c in (0, 1):
                target = (logits[c] - net.fc.bias[c]).item()
                worst = max(worst, abs(net.cam(x, c).mean().item() - target) / abs(target))
    return worst < 1e-6, f"CAM-GAP worst relative error {worst:.1e}"


def check_gradients():
    good = gradient_check()
    bad = gradient_check(corrupt=True)
    ok = good["max_rel_error"] < 1e-4 and bad["max_rel_error"] > 1e-2 and good["untouched_rows_zero"]
    return ok, (f"gradcheck max rel error {good['max_rel_error']:.1e}, "
                f"mutated control {bad['max_rel_error']:.1e}")


def check_time_and_zeroing():
    rng = np.random.default_rng(2)
    for _ in range(500):
        ts = rng.integers(-10**6, 10**6, size=int(rng.integers(1, 14))) / 64.0
        c = int(rng.integers(-10**6, 10**6)) / 64.0
        a = time_channel(ts, 5.0)
        if not (np.array_equal(a, time_channel(ts + c, 5.0)) and np.all(np.diag(a) == 1)):
            return False, "time channel translation/diagonal violated"
    n = 3000
    g = TemporalGraph.from_arrays(rng.integers(40, size=n), rng.integers(40, size=n),
                                  np.sort(rng.random(n)) * 500, num_nodes=40)
    enc = LinkEncoder(40, 8, time_scale=0.2, generator=torch.Generator().manual_seed(2))
    images = 0
    for n_near, p in ((12, 0), (4, 3)):
        batch = SequenceBuilder(g, n_near, p).build(g.src, g.dst, g.ts, enc)
        img = enc(batch).detach().numpy()
        l = batch.length
        upper = np.triu(np.ones((l, l), bool), 1)
        if np.any(img[:, :, upper] != 0):
            return False, "nonzero upper triangle"
        pad = ~batch.valid
        if np.any(img.transpose(0, 2, 1, 3)[pad] != 0) or np.any(img.transpose(0, 3, 1, 2)[pad] != 0):
            return False, "nonzero PAD row or column"
        images += len(batch)
    return True, f"time channel translation/diagonal ok; zeroing ok on {images} assembled images"


def check_auc_oracle():
    rng = np.random.default_rng(3)
    for k in range(200):
        pos = rng.random(int(rng.integers(1, 50)))
        neg = rng.random(int(rng.integers(1, 50)))
        if k % 2:
            pos, neg = np.round(pos, 1), np.round(neg, 1)
        pairs = sum((a > b) + 0.5 * (a == b) for a in pos for b in neg) / (len(pos) * len(neg))
        if abs(evaluate_auc(pos, neg) - pairs) > 1e-12:
            return False, f"AUC mismatch on set {k}"
    return True, "AUC matches pairwise count on 200 sets"


def test_criterion_4_property_suite(acceptance_report):
    results = [check() for check in (check_relabeling, check_reconstructability, check_cam_gap,
                                     check_gradients, check_time_and_zeroing, check_auc_oracle)]
    failed = sum(not ok for ok, _ in results)
    outcome(acceptance_report, 4, failed == 0,
            f"{len(results) - failed}/{len(results)} properties hold: "
            + "; ".join(("" if ok else "FAILED ") + msg for ok, msg in results))


# --- 5 ------------------------------------------------------------------------

def test_criterion_5_determinism(acceptance_report, tmp_path, monkeypatch):
    rng = np.random.default_rng(4)
    n = 600
    data = tmp_path / "links.csv"
    data.write_text("".join(f"n{a},n{b},{t:.4f}\n" for a, b, t in
                            zip(rng.integers(40, size=n), rng.integers(40, size=n),
                                np.sort(rng.random(n)) * 100)))
    cfg = {"dataset": str(data), "epochs": 3, "patience": 3, "n_nearest": 6, "p_parametric": 2,
           "embed_dim": 8, "width": 8, "stage1_layers": 1, "stage2_layers": 2,
           "head_channels": 32, "batch_size": 32}
    cfg_path = tmp_path / "run.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    metrics = []
    for root in ("a", "b"):
        monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / root))
        assert cli.main(["train", str(cfg_path)]) == 0
        (run,) = [d for d in (tmp_path / root).iterdir() if d.is_dir()]
        with (run / "metrics.csv").open() as fh:
            metrics.append(list(csv.reader(fh)))
    # epoch_seconds is wall-clock and is excluded from the comparison
    same_metrics = [r[:3] for r in metrics[0]] == [r[:3] for r in metrics[1]]

    g = load_csv(data)
    model, _ = load_checkpoint(run / "best.pt")
    save_checkpoint(tmp_path / "again.pt", model, g)
    reloaded, _ = load_checkpoint(tmp_path / "again.pt")
    qs, qd = rng.integers(g.num_nodes, size=(2, 100))
    qt = rng.random(100) * 110
    a = model.score_batches(g, qs, qd, qt)[1]
    b = reloaded.score_batches(g, qs, qd, qt)[1]
    same_forward = np.array_equal(a, b)
    outcome(acceptance_report, 5, same_metrics and same_forward,
            f"metrics.csv epoch/train_loss/val_auc identical across runs: {same_metrics}; "
            f"checkpoint reload bit-identical on 100 inputs: {same_forward}")
