"""Dataset containers, the TU text format, JSONL graphs and synthetic fixtures."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .graph import Graph, GraphError, validate


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    """Ordered graphs plus the categorical vocabulary sizes per feature slot."""

    name: str
    graphs: List[Graph]
    node_vocab: Tuple[int, ...]
    edge_vocab: Tuple[int, ...]
    label_map: Dict[int, int] = field(default_factory=dict)

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    def __iter__(self):
        return iter(self.graphs)

    @property
    def labels(self) -> np.ndarray:
        return np.array([-1 if g.label is None else g.label for g in self.graphs])

    @property
    def num_classes(self) -> int:
        labels = self.labels
        return len(np.unique(labels[labels >= 0]))

    def census(self) -> dict:
        sizes = np.array([g.num_nodes for g in self.graphs], dtype=float)
        return {
            "name": self.name,
            "graphs": len(self.graphs),
            "classes": self.num_classes,
            "avg_nodes": float(sizes.mean()) if len(sizes) else 0.0,
            "avg_edges": float(np.mean([g.num_edges for g in self.graphs])) if self.graphs else 0.0,
            "node_feature_width": len(self.node_vocab),
            "edge_feature_width": len(self.edge_vocab),
            "node_vocab": list(self.node_vocab),
            "edge_vocab": list(self.edge_vocab),
        }


def infer_vocab(graphs: Sequence[Graph]) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    """``max + 1`` per feature slot, at least 1."""

    def slot_max(arrays, width):
        vocab = np.ones(width, dtype=np.int64)
        for a in arrays:
            if a.size:
                vocab = np.maximum(vocab, a.max(axis=0) + 1)
        return tuple(int(v) for v in vocab)

    nw = graphs[0].node_feats.shape[1] if graphs else 0
    ew = graphs[0].edge_feats.shape[1] if graphs else 0
    return (
        slot_max([g.node_feats for g in graphs], nw),
        slot_max([g.edge_feats for g in graphs], ew),
    )


# -- TU format -------------------------------------------------------------


def _read_ints(path: str, required: bool = True) -> Optional[List[List[int]]]:
    if not os.path.exists(path):
        if required:
            raise DatasetError(f"missing file {path}")
        return None
    rows = []
    fname = os.path.basename(path)
    with open(path, "r", encoding="latin-1", newline="\n") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([int(tok) for tok in line.replace(",", " ").split()])
            except ValueError:
                raise DatasetError(f"{fname} line {lineno}: non-integer token in {line!r}") from None
    return rows


def _dense(values: Sequence[int]) -> Tuple[np.ndarray, Dict[int, int]]:
    arr = np.asarray(values, dtype=np.int64)
    uniq = np.unique(arr)
    mapping = {int(u): i for i, u in enumerate(uniq)}
    return np.searchsorted(uniq, arr), mapping


def parse_tu(directory: str, name: str) -> Dataset:
    """Read ``<name>_A.txt``, ``_graph_indicator``, ``_graph_labels`` and the
    optional ``_node_labels`` / ``_edge_labels`` files.

    Node, edge and class labels are remapped to dense ``0..V-1`` by sorted
    value. Edges listed in both directions collapse to one undirected edge.
    """

    def path(suffix):
        return os.path.join(directory, f"{name}_{suffix}.txt")

    a_rows = _read_ints(path("A"))
    indicator = [r[0] for r in _read_ints(path("graph_indicator"))]
    graph_labels = [r[0] for r in _read_ints(path("graph_labels"))]
    node_rows = _read_ints(path("node_labels"), required=False)
    edge_rows = _read_ints(path("edge_labels"), required=False)

    n_nodes = len(indicator)
    n_graphs = len(graph_labels)
    gids = np.asarray(indicator, dtype=np.int64)
    if len(np.unique(gids)) != n_graphs or gids.min() != 1 or gids.max() != n_graphs:
        raise DatasetError(
            f"{name}_graph_indicator.txt: graph ids must cover 1..{n_graphs} "
            f"(the number of graph labels)"
        )
    if node_rows is not None and len(node_rows) != n_nodes:
        raise DatasetError(f"{name}_node_labels.txt: expected {n_nodes} lines, got {len(node_rows)}")
    if edge_rows is not None and len(edge_rows) != len(a_rows):
        raise DatasetError(f"{name}_edge_labels.txt: expected {len(a_rows)} lines, got {len(edge_rows)}")

    if node_rows is None:
        node_feats, node_vocab = np.zeros((n_nodes, 1), dtype=np.int64), (1,)
    else:
        cols = np.asarray(node_rows, dtype=np.int64)
        dense = [_dense(cols[:, s])[0] for s in range(cols.shape[1])]
        node_feats = np.stack(dense, axis=1)
        node_vocab = tuple(int(c.max()) + 1 for c in dense)
    if edge_rows is None:
        edge_lab, edge_vocab = np.zeros((len(a_rows), 1), dtype=np.int64), (1,)
    else:
        cols = np.asarray(edge_rows, dtype=np.int64)
        dense = [_dense(cols[:, s])[0] for s in range(cols.shape[1])]
        edge_lab = np.stack(dense, axis=1)
        edge_vocab = tuple(int(c.max()) + 1 for c in dense)

    # nodes of each graph keep their global-id order
    order = np.argsort(gids, kind="stable")
    members = np.split(order, np.cumsum(np.bincount(gids - 1, minlength=n_graphs))[:-1])
    local = np.empty(n_nodes, dtype=np.int64)
    for nodes in members:
        local[nodes] = np.arange(len(nodes))

    edges_per_graph: List[Dict[Tuple[int, int], Tuple[int, ...]]] = [dict() for _ in range(n_graphs)]
    seen_directed = set()
    fname = f"{name}_A.txt"
    for lineno, row in enumerate(a_rows, 1):
        if len(row) != 2:
            raise DatasetError(f"{fname} line {lineno}: expected two node ids")
        u, v = row[0] - 1, row[1] - 1
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise DatasetError(f"{fname} line {lineno}: dangling node id in edge {row}")
        if gids[u] != gids[v]:
            raise DatasetError(
                f"{fname} line {lineno}: cross-graph edge {row} joins graphs {gids[u]} and {gids[v]}"
            )
        if u == v:
            raise DatasetError(f"{fname} line {lineno}: self-loop on node {row[0]}")
        if (u, v) in seen_directed:
            raise DatasetError(f"{fname} line {lineno}: duplicate edge {row}")
        seen_directed.add((u, v))
        g = gids[u] - 1
        key = (min(local[u], local[v]), max(local[u], local[v]))
        feat = tuple(int(x) for x in edge_lab[lineno - 1])
        prev = edges_per_graph[g].get(key)
        if prev is not None and prev != feat:
            raise DatasetError(f"{fname} line {lineno}: mirrored edge {row} has a different label")
        edges_per_graph[g][key] = feat

    dense_labels, label_map = _dense(graph_labels)
    ew = len(edge_vocab)
    graphs = []
    for g, nodes in enumerate(members):
        items = sorted(edges_per_graph[g].items())
        edges = np.asarray([k for k, _ in items], dtype=np.int64).reshape(-1, 2)
        feats = np.asarray([f for _, f in items], dtype=np.int64).reshape(-1, ew)
        graph = Graph(node_feats[nodes], edges, feats, int(dense_labels[g]))
        err = validate(graph)
        if err:
            raise DatasetError(f"{name}: graph {g + 1}: {err}")
        graphs.append(graph)
    return Dataset(name, graphs, node_vocab, edge_vocab, label_map)


# -- JSONL -----------------------------------------------------------------


def _graph_from_obj(obj: dict, lineno: int) -> Graph:
    try:
        n = int(obj["num_nodes"])
        nf = obj["node_feats"]
        edges = obj["edges"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed graph at line {lineno}: {exc!r}") from None
    if len(nf) != n:
        raise DatasetError(f"line {lineno}: node_feats has {len(nf)} rows for {n} nodes")
    widths = {len(r) for r in nf}
    if len(widths) > 1:
        raise DatasetError(f"line {lineno}: node feature vectors have unequal length")
    ewidths = {len(e) - 2 for e in edges}
    if len(ewidths) > 1 or any(w < 0 for w in ewidths):
        raise DatasetError(f"line {lineno}: edge entries must be [u, v, feat...] of equal length")
    pairs = []
    for e in edges:
        u, v = int(e[0]), int(e[1])
        if u == v:
            raise DatasetError(f"self-loop at line {lineno}")
        pairs.append((min(u, v), max(u, v)))
    ew = ewidths.pop() if ewidths else 0
    g = Graph(
        np.asarray(nf, dtype=np.int64).reshape(n, -1),
        np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
        np.asarray([e[2:] for e in edges], dtype=np.int64).reshape(len(edges), ew),
        obj.get("label"),
    )
    return g


def parse_jsonl(path: str, name: Optional[str] = None) -> Dataset:
    """One graph object per line: ``num_nodes``, ``node_feats``, ``edges``, optional ``label``."""
    graphs = []
    with open(path, "r", encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed JSON at line {lineno}: {exc.msg}") from None
            g = _graph_from_obj(obj, lineno)
            err = validate(g)
            if err:
                raise DatasetError(f"{err} at line {lineno}")
            graphs.append(g)
    if not graphs:
        raise DatasetError(f"{path}: no graphs")
    # edgeless graphs take the dataset's edge feature width
    ew = max((g.edge_feats.shape[1] for g in graphs if g.num_edges), default=1)
    graphs = [
        g if g.num_edges else Graph(g.node_feats, g.edges, np.zeros((0, ew), dtype=np.int64), g.label)
        for g in graphs
    ]
    if len({g.node_feats.shape[1] for g in graphs}) > 1 or len({g.edge_feats.shape[1] for g in graphs}) > 1:
        raise DatasetError(f"{path}: graphs have heterogeneous feature widths")
    nv, ev = infer_vocab(graphs)
    return Dataset(name or os.path.splitext(os.path.basename(path))[0], graphs, nv, ev)


def graph_to_obj(g: Graph) -> dict:
    obj = {
        "num_nodes": g.num_nodes,
        "node_feats": g.node_feats.tolist(),
        "edges": [[int(u), int(v), *map(int, f)] for (u, v), f in zip(g.edges, g.edge_feats)],
    }
    if g.label is not None:
        obj["label"] = g.label
    return obj


def write_jsonl(dataset, path: str) -> None:
    graphs = dataset.graphs if isinstance(dataset, Dataset) else dataset
    with open(path, "w", encoding="latin-1", newline="\n") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_obj(g), separators=(",", ":")) + "\n")


def load_dataset(path: str, fmt: str) -> Dataset:
    """``fmt='tu'`` takes a directory (name = its basename) or a ``<dir>/<name>`` prefix."""
    if fmt == "jsonl":
        if not os.path.exists(path):
            raise DatasetError(f"no such file: {path}")
        return parse_jsonl(path)
    if fmt == "tu":
        if os.path.isdir(path):
            return parse_tu(path, os.path.basename(os.path.normpath(path)))
        directory, name = os.path.split(path)
        if not os.path.isdir(directory or "."):
            raise DatasetError(f"no such directory: {path}")
        return parse_tu(directory or ".", name)
    raise DatasetError(f"unknown format {fmt!r}")


# -- synthetic fixtures ----------------------------------------------------

STRUCTURES = ("cycle", "path", "random-tree", "near-complete")
LABEL_MODES = ("iid", "patterned")
# label index (0 or 1) as a function of node position
PATTERNS = {
    "low": lambda p: np.zeros_like(p),
    "high": lambda p: np.ones_like(p),
    "alternate": lambda p: p % 2,
    "pairs": lambda p: (p // 2) % 2,
    "triples": lambda p: (p // 3) % 2,
    "sparse-high": lambda p: (p % 4 == 0).astype(np.int64),
    "sparse-low": lambda p: (p % 4 != 0).astype(np.int64),
    "two-one": lambda p: (p % 3 == 0).astype(np.int64),
}


@dataclass(frozen=True)
class FamilySpec:
    """One family of synthetic graphs.

    ``label_mode='iid'`` draws every node label uniformly from ``labels``.
    ``'patterned'`` gives each graph one periodic pattern from
    :data:`PATTERNS`, applied along a node "position" (index on cycles and
    paths, depth in trees), so both halves of a graph share it.
    """

    structure: str
    size_range: Tuple[int, int]
    labels: Tuple[int, ...]
    count: int
    label_mode: str = "iid"
    patterns: Tuple[str, ...] = ("low", "high", "alternate", "pairs")

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ValueError(f"structure must be one of {STRUCTURES}")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}")
        lo, hi = self.size_range
        if lo < 2 or hi < lo:
            raise ValueError("sizes must be >= 2")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.label_mode == "patterned" and len(self.labels) < 2:
            raise ValueError("patterned labels need two label values")
        unknown = set(self.patterns) - set(PATTERNS)
        if unknown:
            raise ValueError(f"unknown patterns {sorted(unknown)}")


@dataclass(frozen=True)
class SynthSpec:
    families: Tuple[FamilySpec, ...]
    seed: int = 0
    name: str = "synthetic"
    shuffle: bool = True


def _structure(kind: str, n: int, rng: np.random.Generator):
    """Edges and a per-node position used by patterned labels."""
    if kind in ("cycle", "path"):
        edges = [(i, i + 1) for i in range(n - 1)]
        if kind == "cycle" and n >= 3:
            edges.append((0, n - 1))
        return edges, np.arange(n)
    if kind == "random-tree":
        depth = np.zeros(n, dtype=np.int64)
        edges = []
        for i in range(1, n):
            p = int(rng.integers(i))
            edges.append((p, i))
            depth[i] = depth[p] + 1
        return edges, depth
    if kind == "near-complete":
        edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
        keep = rng.random(len(edges)) >= 0.2
        # keep a spanning path so the graph stays connected
        for i in range(n - 1):
            keep[edges.index((i, i + 1))] = True
        return [e for e, k in zip(edges, keep) if k], np.arange(n)
    raise ValueError(kind)


def _labels(fam: FamilySpec, pos: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    labels = np.asarray(fam.labels, dtype=np.int64)
    if fam.label_mode == "iid":
        return labels[rng.integers(len(labels), size=len(pos))]
    pattern = PATTERNS[fam.patterns[int(rng.integers(len(fam.patterns)))]]
    return labels[pattern(np.asarray(pos, dtype=np.int64))]


def gen_synthetic(spec: SynthSpec) -> Dataset:
    """Deterministic in ``spec``; class label = family index."""
    rng = np.random.default_rng(spec.seed)
    graphs = []
    for fam_id, fam in enumerate(spec.families):
        for _ in range(fam.count):
            n = int(rng.integers(fam.size_range[0], fam.size_range[1] + 1))
            edges, pos = _structure(fam.structure, n, rng)
            feats = _labels(fam, pos, rng).reshape(n, 1)
            e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
            graphs.append(Graph(feats, np.sort(e, axis=1), np.zeros((len(e), 1), dtype=np.int64), fam_id))
    if spec.shuffle:
        graphs = [graphs[i] for i in rng.permutation(len(graphs))]
    nv, ev = infer_vocab(graphs)
    # the vocabulary spans every label any family may emit
    all_labels = [l for f in spec.families for l in f.labels]
    nv = (max(nv[0], max(all_labels) + 1),)
    return Dataset(spec.name, graphs, nv, ev)


def two_family_spec(count: int = 200, seed: int = 0, size_range=(10, 24), label_mode="patterned") -> SynthSpec:
    """Cycles labelled from {0, 1} against random trees labelled from {2, 3}."""
    half = count // 2
    return SynthSpec(
        (
            FamilySpec("cycle", size_range, (0, 1), half, label_mode),
            FamilySpec("random-tree", size_range, (2, 3), count - half, label_mode),
        ),
        seed=seed,
        name="two-family",
    )


PRESETS = {
    "two-family": two_family_spec,
    "two-family-iid": lambda count=200, seed=0: two_family_spec(count, seed, label_mode="iid"),
}
