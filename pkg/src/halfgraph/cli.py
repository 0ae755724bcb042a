"""Command-line entry point: ``halfgraph <subcommand> ...`` or ``python -m halfgraph``.

Every artifact-producing subcommand writes ``<output>.manifest.json`` next to
its output, recording the resolved configuration, input digests, output
paths, the seed, wall-clock time and the large-scale reference settings.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from typing import List, Optional

import numpy as np

from . import data as data_mod
from . import downstream
from .gnn import FULL_SCALE_DIM, FULL_SCALE_LAYERS, READOUTS, EncoderConfig
from .graph import GraphError
from .phd import DIRECTIONS
from .pretrain import (
    FULL_SCALE_BATCH,
    FULL_SCALE_EPOCHS,
    FULL_SCALE_LR,
    CheckpointError,
    TrainConfig,
    load_checkpoint,
    pretrain,
)


class CliError(Exception):
    pass


# -- helpers ---------------------------------------------------------------


def _require(path: str, what: str = "path") -> str:
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _tu_files(path: str) -> List[str]:
    if os.path.isdir(path):
        return sorted(os.path.join(path, f) for f in os.listdir(path) if f.endswith(".txt"))
    directory, name = os.path.split(path)
    return sorted(
        os.path.join(directory or ".", f)
        for f in os.listdir(directory or ".")
        if f.startswith(name + "_") and f.endswith(".txt")
    )


def digest(path: str) -> str:
    """sha256 of a file, or of every TU text file (name and bytes) under a dataset path."""
    h = hashlib.sha256()
    files = [path] if os.path.isfile(path) else _tu_files(path)
    for f in files:
        if len(files) > 1 or not os.path.isfile(path):
            h.update(os.path.basename(f).encode() + b"\0")
        with open(f, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 16), b""):
                h.update(block)
    return h.hexdigest()


def resolve_format(path: str, fmt: str) -> str:
    if fmt != "auto":
        return fmt
    return "jsonl" if path.endswith(".jsonl") else "tu"


def load(path: str, fmt: str) -> data_mod.Dataset:
    if not os.path.exists(path):
        directory = os.path.dirname(path) or "."
        # a TU prefix like data/MUTAG/MUTAG is not itself a file
        if not (resolve_format(path, fmt) == "tu" and os.path.isdir(directory) and _tu_files(path)):
            raise CliError(f"data path not found: {path}")
    return data_mod.load_dataset(path, resolve_format(path, fmt))


def _atomic_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_manifest(out: str, args: argparse.Namespace, inputs: List[str], outputs: List[str], start: float, extra=None):
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "subcommand": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": {p: digest(p) for p in inputs},
        "outputs": outputs,
        "full_scale_reference": {
            "dim": FULL_SCALE_DIM,
            "layers": FULL_SCALE_LAYERS,
            "epochs": FULL_SCALE_EPOCHS,
            "lr": FULL_SCALE_LR,
            "batch_size": FULL_SCALE_BATCH,
            "finetune": downstream.FULL_SCALE_FINETUNE,
            "mutag_probe_accuracy": list(downstream.FULL_SCALE_MUTAG_ACC),
        },
        "wall_clock_seconds": round(time.time() - start, 3),
    }
    if extra:
        manifest.update(extra)
    path = out + ".manifest.json"
    _atomic_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# -- subcommands -----------------------------------------------------------


def cmd_pretrain(args) -> int:
    start = time.time()
    ds = load(args.data, args.format)
    encoder = EncoderConfig(
        dim=args.dim,
        layers=args.layers,
        dropout=args.dropout,
        direction=args.direction,
        readout=args.readout,
        node_vocab=ds.node_vocab,
        edge_vocab=ds.edge_vocab,
    )
    train = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        seed=args.seed,
        mask_lambda=args.mask_lambda,
        mask_fraction=args.mask_fraction,
        checkpoint_every=args.checkpoint_every,
    )
    resume = load_checkpoint(_require(args.resume, "checkpoint")) if args.resume else None
    log_path = args.log or args.out + ".log.csv"
    rows = ["epoch,loss,pretext_acc"]

    def on_epoch(entry):
        rows.append(f"{entry.epoch},{entry.loss:.17g},{entry.pretext_acc:.17g}")
        if not args.quiet:
            print(f"epoch {entry.epoch:4d}  loss {entry.loss:.6f}  pretext_acc {entry.pretext_acc:.4f}", file=sys.stderr)

    ckpt, _ = pretrain(ds, encoder, train, checkpoint_path=args.out, resume=resume, on_epoch=on_epoch)
    _atomic_text(log_path, "\n".join(rows) + "\n")
    write_manifest(
        args.out, args, [args.data], [args.out, log_path], start,
        {"checkpoint_digest": ckpt.digest(), "direction": encoder.direction},
    )
    return 0


def cmd_embed(args) -> int:
    start = time.time()
    ds = load(args.data, args.format)
    ckpt = load_checkpoint(_require(args.ckpt, "checkpoint"))
    matrix = downstream.extract_embeddings(ds, ckpt, args.readout)
    downstream.export_embeddings_csv(matrix, ds.labels, args.out)
    write_manifest(args.out, args, [args.data, args.ckpt], [args.out], start)
    return 0


def cmd_probe(args) -> int:
    start = time.time()
    _, labels, rows = downstream.read_embeddings_csv(_require(args.embeddings, "embeddings file"))
    if args.data:
        labels = load(args.data, args.format).labels
        if len(labels) != len(rows):
            raise CliError("dataset and embedding file disagree on the number of graphs")
    if np.any(labels < 0):
        raise CliError("every graph needs a class label for probing")
    report = downstream.linear_probe(rows, labels, folds=args.folds, seed=args.seed)
    result = dict(report.to_dict(), majority_baseline=downstream.majority_rate(labels))
    print(f"accuracy {report.mean:.3f} +/- {report.std:.3f} over {args.folds} folds "
          f"(majority baseline {result['majority_baseline']:.3f})")
    if args.out:
        _atomic_text(args.out, json.dumps(result, indent=2) + "\n")
        inputs = [args.embeddings] + ([args.data] if args.data else [])
        write_manifest(args.out, args, inputs, [args.out], start)
    return 0


def cmd_finetune(args) -> int:
    start = time.time()
    ds = load(args.data, args.format)
    ckpt = load_checkpoint(_require(args.ckpt, "checkpoint"))
    splits = downstream.read_split_file(_require(args.split, "split file"), len(ds))
    result = downstream.finetune(
        ds, splits, ckpt,
        epochs=args.epochs, lr=args.lr, encoder_lr=args.encoder_lr, dropout=args.dropout,
        batch_size=args.batch, metric=args.metric, seed=args.seed,
    )
    print(f"best epoch {result.best_epoch}: valid {args.metric} {result.valid:.4f}, test {args.metric} {result.test:.4f}")
    if args.out:
        _atomic_text(args.out, json.dumps(result.to_dict(), indent=2) + "\n")
        write_manifest(args.out, args, [args.data, args.ckpt, args.split], [args.out], start)
    return 0


def cmd_gen_synth(args) -> int:
    start = time.time()
    if args.spec not in data_mod.PRESETS:
        raise CliError(f"unknown preset {args.spec!r}; choose from {sorted(data_mod.PRESETS)}")
    ds = data_mod.gen_synthetic(data_mod.PRESETS[args.spec](count=args.count, seed=args.seed))
    data_mod.write_jsonl(ds, args.out)
    write_manifest(args.out, args, [], [args.out], start, {"census": ds.census()})
    return 0


def cmd_inspect(args) -> int:
    ds = load(args.data, args.format)
    c = ds.census()
    print(f"{c['graphs']} graphs, {c['classes']} classes, avg nodes {c['avg_nodes']:.2f}")
    print(f"avg edges {c['avg_edges']:.2f}, node feature width {c['node_feature_width']} "
          f"(vocab {c['node_vocab']}), edge feature width {c['edge_feature_width']} (vocab {c['edge_vocab']})")
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="halfgraph", description="Half-graph discrimination pre-training toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp, required=True):
        sp.add_argument("--data", required=required, help="TU dataset directory (or <dir>/<name> prefix) or .jsonl file")
        sp.add_argument("--format", choices=("auto", "tu", "jsonl"), default="auto")

    sp = sub.add_parser("pretrain", help="pre-train an encoder on half-graph discrimination")
    data_args(sp)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--dim", type=int, default=64)
    sp.add_argument("--layers", type=int, default=3)
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--batch", type=int, default=FULL_SCALE_BATCH)
    sp.add_argument("--lr", type=float, default=FULL_SCALE_LR)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--direction", choices=DIRECTIONS, default="uni")
    sp.add_argument("--readout", choices=READOUTS, default="collection")
    sp.add_argument("--mask-lambda", type=float, default=0.0, help="weight of the attribute-masking loss (0 disables it)")
    sp.add_argument("--mask-fraction", type=float, default=0.15)
    sp.add_argument("--dropout", type=float, default=0.0)
    sp.add_argument("--checkpoint-every", type=int, default=0)
    sp.add_argument("--resume", help="continue from this checkpoint")
    sp.add_argument("--log", help="per-epoch CSV (default <out>.log.csv)")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("embed", help="export one embedding per graph as CSV")
    data_args(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--readout", choices=READOUTS, default=None, help="default: the checkpoint's readout")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("probe", help="k-fold linear probe on exported embeddings")
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--labels-from-data", action="store_true",
                    help="use the label column that embed copied from the dataset (the default)")
    data_args(sp, required=False)
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="JSON report path")
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("finetune", help="supervised fine-tuning with a linear head")
    data_args(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--split", required=True, help="lines of '<graph_index> <train|valid|test>'")
    sp.add_argument("--metric", choices=("auc", "acc"), default="auc")
    sp.add_argument("--epochs", type=int, default=downstream.FULL_SCALE_FINETUNE["epochs"])
    sp.add_argument("--lr", type=float, default=downstream.FULL_SCALE_FINETUNE["lr"])
    sp.add_argument("--encoder-lr", type=float, default=None, help="0 freezes the encoder (default: --lr)")
    sp.add_argument("--dropout", type=float, default=downstream.FULL_SCALE_FINETUNE["dropout"])
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="JSON result path")
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("gen-synth", help="write a synthetic dataset as JSONL")
    sp.add_argument("--spec", default="two-family", help=f"preset: {', '.join(sorted(data_mod.PRESETS))}")
    sp.add_argument("--count", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_synth)

    sp = sub.add_parser("inspect", help="print a dataset census")
    data_args(sp)
    sp.set_defaults(func=cmd_inspect)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, data_mod.DatasetError, GraphError, CheckpointError, ValueError, OSError) as exc:
        print(f"halfgraph {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
