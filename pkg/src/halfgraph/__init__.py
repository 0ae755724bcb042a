"""Pairwise half-graph discrimination pre-training for graph neural networks."""
from .data import Dataset, gen_synthetic, load_dataset, parse_jsonl, parse_tu, two_family_spec, write_jsonl
from .downstream import extract_embeddings, finetune, linear_probe, roc_auc, stratified_kfold
from .gnn import EncoderConfig, forward, init_params
from .graph import Graph, GraphError, disjoint_union, make_graph
from .phd import assemble, build_epoch, decompose, make_pair
from .pretrain import Checkpoint, TrainConfig, load_checkpoint, pretrain, save_checkpoint

__all__ = [
    "Checkpoint",
    "Dataset",
    "EncoderConfig",
    "Graph",
    "GraphError",
    "TrainConfig",
    "assemble",
    "build_epoch",
    "decompose",
    "disjoint_union",
    "extract_embeddings",
    "finetune",
    "forward",
    "gen_synthetic",
    "init_params",
    "linear_probe",
    "load_checkpoint",
    "load_dataset",
    "make_graph",
    "make_pair",
    "parse_jsonl",
    "parse_tu",
    "pretrain",
    "roc_auc",
    "save_checkpoint",
    "stratified_kfold",
    "two_family_spec",
    "write_jsonl",
]
