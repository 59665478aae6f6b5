"""Command-line entry point: ``linkpattern {train,eval,explain,baseline}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch
import yaml

from linkpattern.baseline import edgebank_eval
from linkpattern.graph_store import (DataError, Link, chronological_split, load_csv,
                                     node_map_path)
from linkpattern.model import POSITIVE, link_importance, predict_score
from linkpattern.sampler import ORIGIN_NAMES
from linkpattern.trainer import (CheckpointError, TrainConfig, TrainingDiverged,
                                 check_compatible, evaluate_split, load_checkpoint,
                                 run_dir_name, train)

log = logging.getLogger("linkpattern")

OUTPUT_ROOT_ENV = "LINKPATTERN_OUTPUT_ROOT"
REPORT_HEADER = ("split", "seed", "auc", "loss", "seconds")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    output_dir: str = "runs"
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    train: TrainConfig = TrainConfig()

    @classmethod
    def from_mapping(cls, raw: dict, base: Path | None = None) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a flat key/value mapping")
        run_keys = {f.name for f in fields(cls)} - {"train"}
        train_keys = {f.name for f in fields(TrainConfig)}
        unknown = sorted(set(raw) - run_keys - train_keys)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        nested = [k for k, v in raw.items() if isinstance(v, (dict, list))]
        if nested:
            raise ConfigError(f"config values must be scalars: {', '.join(nested)}")
        if "dataset" not in raw:
            raise ConfigError("config must name a dataset")
        try:
            tc = TrainConfig(**{k: v for k, v in raw.items() if k in train_keys})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        run = {k: v for k, v in raw.items() if k in run_keys}
        # relative paths are taken from the config file's directory
        for key in ("dataset", "output_dir"):
            if key in run and base is not None and not Path(str(run[key])).is_absolute():
                run[key] = str(base / str(run[key]))
        return cls(train=tc, **run)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with path.open() as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_mapping(raw, base=path.parent)

    def to_mapping(self) -> dict:
        d = {"dataset": self.dataset, "output_dir": self.output_dir,
             "train_fraction": self.train_fraction, "val_fraction": self.val_fraction}
        d.update(self.train.to_dict())
        return d


def _output_root(config: RunConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or config.output_dir)


def _load_split(dataset: str, train_fraction: float = 0.7, val_fraction: float = 0.1):
    g = load_csv(dataset)
    return g, chronological_split(g, train_fraction, val_fraction)


def cmd_train(args) -> int:
    config = RunConfig.load(args.config)
    g, split = _load_split(config.dataset, config.train_fraction, config.val_fraction)
    run_dir = _output_root(config) / run_dir_name(config.train)
    run_dir.mkdir(parents=True, exist_ok=True)
    with (run_dir / "config.yaml").open("w") as fh:
        yaml.safe_dump(config.to_mapping(), fh, sort_keys=True)
    log.info("training on %s (%d links, %d nodes) -> %s", config.dataset, len(g),
             g.num_nodes, run_dir)
    result = train(g, split, config.train, run_dir=run_dir,
                   node_map_file=str(node_map_path(config.dataset)))
    print(f"best epoch {result.best_epoch} val_auc {result.best_val_auc:.4f}")
    print(f"run directory: {run_dir}")
    return 0


def _write_report(path: str | Path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_HEADER)
        w.writeheader()
        w.writerows(rows)


def cmd_eval(args) -> int:
    model, payload = load_checkpoint(args.checkpoint)
    g = load_csv(args.dataset)
    check_compatible(payload, g)
    cfg = payload["config"]
    split = chronological_split(g)
    rows = split.by_name(args.split)
    reports = []
    for k in range(args.repeats):
        rep = evaluate_split(g, rows, model, args.seed + k)
        reports.append({"split": args.split, "seed": args.seed + k, "auc": rep.auc,
                        "loss": rep.loss, "seconds": round(rep.seconds, 3)})
    aucs = np.array([r["auc"] for r in reports])
    if args.repeats > 1:
        print(f"{args.split} auc {aucs.mean():.4f} std {aucs.std(ddof=1):.4f} "
              f"over {args.repeats} seeds")
    else:
        print(f"{args.split} auc {aucs[0]:.4f}")
    if args.output:
        _write_report(args.output, reports)
    log.debug("evaluated with n_nearest=%s p_parametric=%s", cfg["n_nearest"], cfg["p_parametric"])
    return 0


def _resolve_query(g, args) -> Link:
    if args.index is not None:
        if not 0 <= args.index < len(g):
            raise DataError(f"query index {args.index} out of range [0, {len(g)})")
        return g.link(args.index)
    s_lab, o_lab, t = args.query
    s, o = g.node_id(s_lab), g.node_id(o_lab)
    # unseen labels fall back to the reserved embedding row
    return Link(g.num_nodes if s is None else s, g.num_nodes if o is None else o, float(t))


def explain_query(model, g, query: Link) -> dict:
    """Sampled history, CAM and per-slot importance for one query."""
    model.eval()
    batch = model.builder(g).build_one(query, model.encoder)
    with torch.no_grad():
        image = model.encoder(batch)
        logits = model.net(image)
        cam = model.net.cam(image, POSITIVE)[0].double().numpy()
    pad = int(batch.pad_counts()[0])
    scores = link_importance(cam, pad)

    def label(i):
        return g.labels[i] if 0 <= i < g.num_nodes else None

    slots = []
    for i in range(batch.length):
        entry = {"slot": i, "origin": ORIGIN_NAMES[int(batch.origin[0, i])],
                 "importance": scores[i]}
        if batch.valid[0, i]:
            entry.update(source=label(int(batch.src[0, i])),
                         destination=label(int(batch.dst[0, i])),
                         timestamp=float(batch.ts[0, i]))
        else:
            entry.update(source=None, destination=None, timestamp=None)
        slots.append(entry)
    return {
        "query": {"source": label(query.source), "destination": label(query.destination),
                  "timestamp": query.timestamp},
        "score": float(predict_score(logits)[0]),
        "logits": logits[0].double().tolist(),
        "cam_class": "positive",
        "cam_total": float(cam.sum()),
        "importance_total": float(2 * cam.sum() - np.trace(cam)),
        "pad_count": pad,
        "history": slots[:-1],
        "query_slot": slots[-1],
        "cam": cam.tolist(),
    }


def render_heatmap(explanation: dict, path: str | Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cam = np.asarray(explanation["cam"])
    slots = explanation["history"] + [explanation["query_slot"]]
    names = [f"{s['source']}->{s['destination']}" if s["source"] is not None else "pad"
             for s in slots]
    imp = [s["importance"] if s["importance"] is not None else np.nan for s in slots]
    fig, (a0, a1) = plt.subplots(1, 2, figsize=(10, 4.5))
    im = a0.imshow(cam, cmap="viridis")
    a0.set_xticks(range(len(names)), names, rotation=90, fontsize=7)
    a0.set_yticks(range(len(names)), names, fontsize=7)
    a0.set_title("class activation map")
    fig.colorbar(im, ax=a0)
    a1.barh(range(len(names)), imp)
    a1.set_yticks(range(len(names)), names, fontsize=7)
    a1.invert_yaxis()
    a1.set_title("link importance")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_explain(args) -> int:
    model, payload = load_checkpoint(args.checkpoint)
    g = load_csv(args.dataset)
    check_compatible(payload, g)
    query = _resolve_query(g, args)
    out = explain_query(model, g, query)
    Path(args.output).write_text(json.dumps(out, indent=2))
    if args.heatmap:
        render_heatmap(out, args.heatmap)
    print(f"score {out['score']:.4f}; explanation written to {args.output}")
    return 0


def cmd_baseline(args) -> int:
    g = load_csv(args.dataset)
    split = chronological_split(g)
    rows = split.by_name(args.split)
    rep = edgebank_eval(g, split, args.seed, directed=not args.undirected, rows=rows)
    print(f"edgebank {args.split} auc {rep.auc:.4f} ({rep.seconds:.1f}s)")
    if args.output:
        _write_report(args.output, [{"split": args.split, "seed": args.seed, "auc": rep.auc,
                                     "loss": "", "seconds": round(rep.seconds, 3)}])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linkpattern", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a YAML config")
    t.add_argument("config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="AUC of a checkpoint on the val or test range")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--split", choices=("val", "test"), default="test")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--repeats", type=int, default=1)
    e.add_argument("--output")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("explain", help="per-link importance for one query")
    x.add_argument("checkpoint")
    x.add_argument("dataset")
    q = x.add_mutually_exclusive_group(required=True)
    q.add_argument("--index", type=int, help="index of a link in the time-sorted dataset")
    q.add_argument("--query", nargs=3, metavar=("SOURCE", "DESTINATION", "TIME"))
    x.add_argument("--output", required=True)
    x.add_argument("--heatmap", help="optional PNG path")
    x.set_defaults(func=cmd_explain)

    b = sub.add_parser("baseline", help="EdgeBank AUC")
    b.add_argument("dataset")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--split", choices=("val", "test"), default="test")
    b.add_argument("--undirected", action="store_true")
    b.add_argument("--output")
    b.set_defaults(func=cmd_baseline)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    if getattr(args, "repeats", 1) < 1:
        print("error: --repeats must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
