"""Pairwise half-graph discrimination instances.

A source graph is cut at a border index into two half-graphs (the top-left
and bottom-right blocks of its adjacency matrix). With probability 0.5 the
second half is swapped for a half of another graph. The pair is merged into a
single graph plus a collection node that receives one virtual edge from every
real node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence, Tuple

import numpy as np

from .graph import Graph, GraphError, induced_subgraph

UNIDIRECTIONAL = "uni"
BIDIRECTIONAL = "bi"
DIRECTIONS = (UNIDIRECTIONAL, BIDIRECTIONAL)


def border_range(n: int) -> Tuple[int, int]:
    """Inclusive ``(lo, hi)`` admissible border indices for an ``n``-node graph."""
    if n < 2:
        raise GraphError(f"cannot split a graph with {n} node(s) into two halves")
    lo = max(math.ceil(n / 3), 1)
    hi = min(math.floor(2 * n / 3), n - 1)
    if lo > hi:  # unreachable for n >= 2, kept as a guard
        lo = hi = max(1, min(lo, n - 1))
    return lo, hi


def sample_border(n: int, rng: np.random.Generator) -> int:
    lo, hi = border_range(n)
    return int(rng.integers(lo, hi + 1))


def split_at(g: Graph, b: int) -> Tuple[Graph, Graph]:
    return induced_subgraph(g, 0, b), induced_subgraph(g, b, g.num_nodes)


def decompose(g: Graph, rng: np.random.Generator) -> Tuple[Graph, Graph, int]:
    b = sample_border(g.num_nodes, rng)
    first, second = split_at(g, b)
    return first, second, b


@dataclass(frozen=True)
class HalfGraphPair:
    first: Graph
    second: Graph
    label: int
    source_id: int
    border: int
    partner_id: Optional[int] = None

    def __post_init__(self):
        if (self.label == 1) != (self.partner_id is None):
            raise ValueError("label must be 1 exactly when there is no partner")
        if self.first.num_nodes == 0 or self.second.num_nodes == 0:
            raise ValueError("half-graphs must be non-empty")


PartnerSupplier = Callable[[np.random.Generator], Tuple[int, Graph]]


def make_pair(
    source: Graph,
    partner_supplier: PartnerSupplier,
    rng: np.random.Generator,
    source_id: int = 0,
) -> HalfGraphPair:
    """Decompose ``source``; with probability 0.5 swap in a partner's half.

    ``partner_supplier(rng)`` returns ``(partner_id, partner_graph)`` and is
    only called for negatives.
    """
    first, second, b = decompose(source, rng)
    if rng.random() < 0.5:
        return HalfGraphPair(first, second, 1, source_id, b)
    partner_id, partner = partner_supplier(rng)
    if partner_id == source_id:
        raise ValueError("partner supplier returned the source graph itself")
    p_first, p_second, _ = decompose(partner, rng)
    replacement = p_first if rng.random() < 0.5 else p_second
    return HalfGraphPair(first, replacement, 0, source_id, b, partner_id)


@dataclass(frozen=True, eq=False)
class AssembledInstance:
    """Two half-graphs merged into one graph plus a trailing collection node.

    ``node_feats`` covers the real nodes only; the collection node is index
    ``num_nodes - 1``. Real edges are stored undirected; virtual edges are
    directed ``virtual_src -> virtual_dst``.
    """

    node_feats: np.ndarray
    node_segments: np.ndarray
    edges: np.ndarray
    edge_feats: np.ndarray
    edge_segments: np.ndarray
    virtual_src: np.ndarray
    virtual_dst: np.ndarray
    label: int
    direction: str = UNIDIRECTIONAL
    has_collection: bool = True

    @property
    def num_nodes(self) -> int:
        return len(self.node_segments)

    @property
    def collection(self) -> Optional[int]:
        return len(self.node_segments) - 1 if self.has_collection else None

    @property
    def num_real_nodes(self) -> int:
        return len(self.node_feats)

    def num_directed_entries(self) -> int:
        return 2 * len(self.edges) + len(self.virtual_src)

    def __eq__(self, other):
        if not isinstance(other, AssembledInstance):
            return NotImplemented
        return (
            self.label == other.label
            and self.direction == other.direction
            and self.has_collection == other.has_collection
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in (
                    "node_feats",
                    "node_segments",
                    "edges",
                    "edge_feats",
                    "edge_segments",
                    "virtual_src",
                    "virtual_dst",
                )
            )
        )


def _virtual_edges(n_real: int, direction: str):
    real = np.arange(n_real, dtype=np.int64)
    coll = np.full(n_real, n_real, dtype=np.int64)
    if direction == UNIDIRECTIONAL:
        return real, coll
    if direction == BIDIRECTIONAL:
        return np.concatenate([real, coll]), np.concatenate([coll, real])
    raise ValueError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")


def _merge(halves: Sequence[Graph], label: int, direction: str) -> AssembledInstance:
    node_feats, node_seg, edges, edge_feats, edge_seg = [], [], [], [], []
    offset = 0
    for seg, h in enumerate(halves):
        node_feats.append(h.node_feats)
        node_seg.append(np.full(h.num_nodes, seg, dtype=np.int64))
        edges.append(h.edges + offset)
        edge_feats.append(h.edge_feats)
        edge_seg.append(np.full(h.num_edges, seg, dtype=np.int64))
        offset += h.num_nodes
    vsrc, vdst = _virtual_edges(offset, direction)
    ew = halves[0].edge_feats.shape[1]
    return AssembledInstance(
        node_feats=np.concatenate(node_feats),
        node_segments=np.concatenate(node_seg + [np.array([2], dtype=np.int64)]),
        edges=np.concatenate(edges).reshape(-1, 2),
        edge_feats=np.concatenate([f.reshape(-1, ew) for f in edge_feats]),
        edge_segments=np.concatenate(edge_seg),
        virtual_src=vsrc,
        virtual_dst=vdst,
        label=int(label),
        direction=direction,
    )


def assemble(pair: HalfGraphPair, direction: str = UNIDIRECTIONAL) -> AssembledInstance:
    return _merge([pair.first, pair.second], pair.label, direction)


def assemble_whole(g: Graph, direction: str = UNIDIRECTIONAL) -> AssembledInstance:
    """Whole graph as a single segment-0 half plus a collection node."""
    return _merge([g], -1 if g.label is None else g.label, direction)


def strip_collection(inst: AssembledInstance) -> AssembledInstance:
    """The same instance without its collection node and virtual edges.

    Real-node indices, features and segments are unchanged.
    """
    return AssembledInstance(
        node_feats=inst.node_feats,
        node_segments=inst.node_segments[:-1],
        edges=inst.edges,
        edge_feats=inst.edge_feats,
        edge_segments=inst.edge_segments,
        virtual_src=np.zeros(0, dtype=np.int64),
        virtual_dst=np.zeros(0, dtype=np.int64),
        label=inst.label,
        direction=inst.direction,
        has_collection=False,
    )


def instance_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-instance stream, independent of construction order."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, index]))


def epoch_order(n: int, seed: int, epoch: int, shuffle: bool = True) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, 0xFFFF_FFFF]))
    return rng.permutation(n)


def build_instance(
    graphs: Sequence[Graph], index: int, seed: int, epoch: int, direction: str = UNIDIRECTIONAL
) -> AssembledInstance:
    n = len(graphs)
    rng = instance_rng(seed, epoch, index)

    def partner(r):
        j = int(r.integers(n - 1))
        j += j >= index
        return j, graphs[j]

    return assemble(make_pair(graphs[index], partner, rng, source_id=index), direction)


def build_epoch(
    graphs: Sequence[Graph],
    seed: int,
    epoch: int = 0,
    shuffle: bool = True,
    direction: str = UNIDIRECTIONAL,
) -> Iterator[AssembledInstance]:
    """One freshly sampled instance per graph, partners drawn uniformly from the rest."""
    if len(graphs) < 2:
        raise ValueError("need at least 2 graphs to sample negatives")
    for i in epoch_order(len(graphs), seed, epoch, shuffle):
        yield build_instance(graphs, int(i), seed, epoch, direction)
