"""Attributed undirected graphs, subgraph windows and disjoint-union batching.

Graphs store every undirected edge once as ``(u, v)`` with ``u < v``. Node
order is the ingestion order and is never canonicalized: half-graph
decomposition slices contiguous index ranges of it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised when a graph violates a structural invariant."""


def _frozen(a, dtype=np.int64, ndim=2):
    a = np.array(a, dtype=dtype)
    if ndim == 2 and a.ndim == 1 and a.size == 0:
        a = a.reshape(0, 0)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph with categorical node and edge features.

    Parameters
    ----------
    node_feats : array-like, shape (num_nodes, F)
        Integer feature vector per node.
    edges : array-like, shape (m, 2)
        Undirected edges, one row per edge.
    edge_feats : array-like, shape (m, Fe)
        Integer feature vector per edge, aligned with ``edges``.
    label : int or None
        Optional class label.
    """

    node_feats: np.ndarray
    edges: np.ndarray
    edge_feats: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        nf = _frozen(self.node_feats)
        if nf.ndim == 1:
            nf = _frozen(nf.reshape(-1, 1))
        e = _frozen(np.asarray(self.edges, dtype=np.int64).reshape(-1, 2))
        ef = np.asarray(self.edge_feats, dtype=np.int64)
        if ef.ndim == 1:
            ef = ef.reshape(len(e), -1)
        object.__setattr__(self, "node_feats", nf)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "edge_feats", _frozen(ef))
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @property
    def num_nodes(self) -> int:
        return self.node_feats.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.node_feats, other.node_feats)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.edge_feats, other.edge_feats)
            and self.node_feats.shape == other.node_feats.shape
            and self.edge_feats.shape == other.edge_feats.shape
        )

    def __repr__(self):
        return (
            f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges}, "
            f"label={self.label})"
        )


def make_graph(num_nodes, node_feats, edges, label=None, edge_width=1):
    """Build a graph from ``(u, v, *feats)`` edge tuples, ordering endpoints.

    Edges without features get a constant zero feature of width ``edge_width``.
    """
    nf = np.asarray(node_feats, dtype=np.int64)
    if nf.ndim == 1:
        nf = nf.reshape(num_nodes, -1)
    pairs, feats = [], []
    for row in edges:
        u, v, *f = (int(x) for x in row)
        pairs.append((min(u, v), max(u, v)))
        feats.append(f if f else [0] * edge_width)
    width = len(feats[0]) if feats else edge_width
    return Graph(
        nf.reshape(num_nodes, -1),
        np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
        np.asarray(feats, dtype=np.int64).reshape(-1, width),
        label,
    )


def validate(g: Graph) -> Optional[str]:
    """Return ``None`` if ``g`` satisfies every invariant, else the first violation."""
    n = g.num_nodes
    if g.node_feats.ndim != 2:
        return "node feature vectors have unequal length"
    if g.edge_feats.ndim != 2 or g.edge_feats.shape[0] != g.num_edges:
        return "edge feature vectors have unequal length"
    if np.any(g.node_feats < 0) or np.any(g.edge_feats < 0):
        return "negative feature index"
    if g.num_edges == 0:
        return None
    u, v = g.edges[:, 0], g.edges[:, 1]
    if np.any(u < 0) or np.any(v < 0) or np.any(u >= n) or np.any(v >= n):
        return "endpoint out of range"
    if np.any(u == v):
        return "self-loop"
    if np.any(u > v):
        return "edge not stored with u < v"
    keys = u * n + v
    if np.unique(keys).size != keys.size:
        return "duplicate edge"
    return None


def check(g: Graph) -> Graph:
    err = validate(g)
    if err is not None:
        raise GraphError(err)
    return g


def induced_subgraph(g: Graph, start: int, stop: int) -> Graph:
    """Subgraph on the contiguous node window ``[start, stop)``, re-indexed from 0."""
    if not 0 <= start < stop <= g.num_nodes:
        raise GraphError(
            f"window [{start}, {stop}) is empty or outside [0, {g.num_nodes})"
        )
    e = g.edges
    keep = (e[:, 0] >= start) & (e[:, 1] < stop)
    return Graph(
        g.node_feats[start:stop],
        e[keep] - start,
        g.edge_feats[keep],
        g.label,
    )


@dataclass(frozen=True)
class DirectedEdgeList:
    """Both directions of every undirected edge, sharing one feature row."""

    sources: np.ndarray
    targets: np.ndarray
    edge_feature_rows: np.ndarray

    def __len__(self):
        return len(self.sources)


def to_directed(g: Graph) -> DirectedEdgeList:
    u, v = g.edges[:, 0], g.edges[:, 1]
    rows = np.arange(g.num_edges, dtype=np.int64)
    return DirectedEdgeList(
        np.concatenate([u, v]), np.concatenate([v, u]), np.concatenate([rows, rows])
    )


@dataclass(frozen=True, eq=False)
class BatchGraph:
    """Disjoint union of k members (plain graphs or assembled PHD instances).

    Node rows of collection nodes carry no features; ``real_nodes`` lists the
    rows that do. Virtual edges are directed and featureless.
    """

    node_feats: np.ndarray  # (N, F); collection rows are zero
    real_nodes: np.ndarray  # indices of rows with features
    node_segments: np.ndarray  # (N,)
    edges: np.ndarray  # (M, 2) undirected real edges, global indices
    edge_feats: np.ndarray  # (M, Fe)
    edge_segments: np.ndarray  # (M,)
    virtual_src: np.ndarray
    virtual_dst: np.ndarray
    node_offsets: np.ndarray  # (k,) start of each member
    edge_offsets: np.ndarray  # (k,) start of each member's real edges
    virtual_offsets: np.ndarray
    graph_id_per_node: np.ndarray
    collection_node_indices: Optional[np.ndarray]
    labels: np.ndarray  # (k,), -1 when absent
    directions: tuple = ()
    kinds: tuple = ()
    _directed: dict = field(default_factory=dict, repr=False)

    @property
    def num_graphs(self) -> int:
        return len(self.node_offsets)

    @property
    def num_nodes(self) -> int:
        return len(self.node_segments)

    def directed(self):
        """Message list ``(src, dst, feature_row, segment)``.

        Real edges come first in both orientations, then virtual edges; a
        feature row of -1 marks a virtual edge.
        """
        if not self._directed:
            u, v = self.edges[:, 0], self.edges[:, 1]
            m, nv = len(u), len(self.virtual_src)
            rows = np.arange(m, dtype=np.int64)
            self._directed.update(
                src=np.concatenate([u, v, self.virtual_src]),
                dst=np.concatenate([v, u, self.virtual_dst]),
                row=np.concatenate([rows, rows, np.full(nv, -1, dtype=np.int64)]),
                segment=np.concatenate(
                    [self.edge_segments, self.edge_segments, np.full(nv, 2, dtype=np.int64)]
                ),
            )
        d = self._directed
        return d["src"], d["dst"], d["row"], d["segment"]

    def member_sizes(self) -> np.ndarray:
        return np.diff(np.append(self.node_offsets, self.num_nodes))


def _member_arrays(g):
    """Normalize a Graph or AssembledInstance into batchable pieces."""
    from .phd import AssembledInstance

    if isinstance(g, AssembledInstance):
        return dict(
            kind="instance",
            num_nodes=g.num_nodes,
            node_feats=g.node_feats,
            node_segments=g.node_segments,
            edges=g.edges,
            edge_feats=g.edge_feats,
            edge_segments=g.edge_segments,
            virtual_src=g.virtual_src,
            virtual_dst=g.virtual_dst,
            collection=g.collection,
            label=g.label,
            direction=g.direction,
        )
    if isinstance(g, Graph):
        return dict(
            kind="graph",
            num_nodes=g.num_nodes,
            node_feats=g.node_feats,
            node_segments=np.zeros(g.num_nodes, dtype=np.int64),
            edges=g.edges,
            edge_feats=g.edge_feats,
            edge_segments=np.zeros(g.num_edges, dtype=np.int64),
            virtual_src=np.zeros(0, dtype=np.int64),
            virtual_dst=np.zeros(0, dtype=np.int64),
            collection=None,
            label=-1 if g.label is None else g.label,
            direction=None,
        )
    raise TypeError(f"cannot batch {type(g).__name__}")


def disjoint_union(members: Sequence) -> BatchGraph:
    """Concatenate graphs or assembled instances into one batch."""
    if len(members) == 0:
        raise GraphError("cannot batch an empty sequence")
    parts = [_member_arrays(g) for g in members]
    fw = {p["node_feats"].shape[1] for p in parts}
    ew = {p["edge_feats"].shape[1] for p in parts if len(p["edge_feats"])}
    if len(fw) > 1 or len(ew) > 1:
        raise GraphError("members have heterogeneous feature widths")
    fw = fw.pop()
    ew = ew.pop() if ew else parts[0]["edge_feats"].shape[1]

    sizes = np.array([p["num_nodes"] for p in parts], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    n_total = int(sizes.sum())
    node_feats = np.zeros((n_total, fw), dtype=np.int64)
    real, segs, edges, efeats, esegs, vsrc, vdst, coll = ([] for _ in range(8))
    e_off, v_off = [], []
    ne = nvirt = 0
    for p, off in zip(parts, offsets):
        n_real = len(p["node_feats"])
        node_feats[off : off + n_real] = p["node_feats"]
        real.append(off + np.arange(n_real, dtype=np.int64))
        segs.append(p["node_segments"])
        edges.append(p["edges"].reshape(-1, 2) + off)
        efeats.append(p["edge_feats"].reshape(-1, ew))
        esegs.append(p["edge_segments"])
        vsrc.append(p["virtual_src"] + off)
        vdst.append(p["virtual_dst"] + off)
        e_off.append(ne)
        v_off.append(nvirt)
        ne += len(p["edges"])
        nvirt += len(p["virtual_src"])
        if p["collection"] is not None:
            coll.append(off + p["collection"])
    if coll and len(coll) != len(parts):
        raise GraphError("cannot mix members with and without collection nodes")
    return BatchGraph(
        node_feats=node_feats,
        real_nodes=np.concatenate(real),
        node_segments=np.concatenate(segs).astype(np.int64),
        edges=np.concatenate(edges).astype(np.int64),
        edge_feats=np.concatenate(efeats).astype(np.int64),
        edge_segments=np.concatenate(esegs).astype(np.int64),
        virtual_src=np.concatenate(vsrc).astype(np.int64),
        virtual_dst=np.concatenate(vdst).astype(np.int64),
        node_offsets=offsets,
        edge_offsets=np.asarray(e_off, dtype=np.int64),
        virtual_offsets=np.asarray(v_off, dtype=np.int64),
        graph_id_per_node=np.repeat(np.arange(len(parts), dtype=np.int64), sizes),
        collection_node_indices=np.asarray(coll, dtype=np.int64) if coll else None,
        labels=np.asarray([p["label"] for p in parts], dtype=np.int64),
        directions=tuple(p["direction"] for p in parts),
        kinds=tuple(p["kind"] for p in parts),
    )


def split_batch(batch: BatchGraph) -> list:
    """Inverse of :func:`disjoint_union`."""
    from .phd import AssembledInstance

    k = batch.num_graphs
    n_end = np.append(batch.node_offsets[1:], batch.num_nodes)
    e_end = np.append(batch.edge_offsets[1:], len(batch.edges))
    v_end = np.append(batch.virtual_offsets[1:], len(batch.virtual_src))
    out = []
    for i in range(k):
        n0, n1 = batch.node_offsets[i], n_end[i]
        e0, e1 = batch.edge_offsets[i], e_end[i]
        v0, v1 = batch.virtual_offsets[i], v_end[i]
        label = int(batch.labels[i])
        if batch.kinds[i] == "graph":
            out.append(
                Graph(
                    batch.node_feats[n0:n1],
                    batch.edges[e0:e1] - n0,
                    batch.edge_feats[e0:e1],
                    None if label < 0 else label,
                )
            )
        else:
            has_coll = batch.collection_node_indices is not None
            n_real = int(batch.collection_node_indices[i] - n0) if has_coll else n1 - n0
            out.append(
                AssembledInstance(
                    node_feats=batch.node_feats[n0 : n0 + n_real],
                    node_segments=batch.node_segments[n0:n1],
                    edges=batch.edges[e0:e1] - n0,
                    edge_feats=batch.edge_feats[e0:e1],
                    edge_segments=batch.edge_segments[e0:e1],
                    virtual_src=batch.virtual_src[v0:v1] - n0,
                    virtual_dst=batch.virtual_dst[v0:v1] - n0,
                    label=label,
                    direction=batch.directions[i],
                    has_collection=has_coll,
                )
            )
    return out
