"""Input embeddings, GIN-style message passing, discriminator and readouts.

Parameters live in a flat ``dict[str, Tensor]`` so the optimizer and the
checkpoint writer can treat them uniformly. Each categorical slot gets one
extra table row past its vocabulary, reserved for the attribute mask token.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import BatchGraph, disjoint_union
from .phd import DIRECTIONS, UNIDIRECTIONAL

Params = Dict[str, Tensor]
READOUTS = ("collection", "mean")

# reference values for the large-scale setting
FULL_SCALE_DIM = 300
FULL_SCALE_LAYERS = 5


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    layers: int = 3
    dropout: float = 0.0
    direction: str = UNIDIRECTIONAL
    readout: str = "collection"
    node_vocab: Tuple[int, ...] = (1,)
    edge_vocab: Tuple[int, ...] = (1,)

    def __post_init__(self):
        object.__setattr__(self, "node_vocab", tuple(int(v) for v in self.node_vocab))
        object.__setattr__(self, "edge_vocab", tuple(int(v) for v in self.edge_vocab))
        if self.dim < 1 or self.layers < 1:
            raise ValueError("dim and layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}")
        if any(v < 1 for v in self.node_vocab + self.edge_vocab):
            raise ValueError("vocabularies must have at least one entry")

    @classmethod
    def full_scale(cls, **kw):
        return cls(dim=FULL_SCALE_DIM, layers=FULL_SCALE_LAYERS, **kw)

    def to_dict(self):
        d = asdict(self)
        d["node_vocab"] = list(self.node_vocab)
        d["edge_vocab"] = list(self.edge_vocab)
        return d


def mask_token(config: EncoderConfig) -> int:
    """Index of the reserved token in node feature slot 0."""
    return config.node_vocab[0]


def _xavier(rng, fan_in, fan_out, shape):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_params(config: EncoderConfig, rng: np.random.Generator) -> Params:
    """Xavier-uniform matrices, zero biases, N(0, 0.02) embedding tables."""
    d = config.dim
    p: Params = {}

    def emb(name, rows):
        p[name] = Tensor(rng.normal(0.0, 0.02, size=(rows, d)), requires_grad=True, name=name)

    for s, v in enumerate(config.node_vocab):
        emb(f"node_emb.{s}", v + 1)
    for s, v in enumerate(config.edge_vocab):
        emb(f"edge_emb.{s}", v + 1)
    emb("node_seg", 3)
    emb("edge_seg", 3)
    emb("collection_token", 1)
    for k in range(config.layers):
        for name, shape in ((f"layer{k}.w1", (d, d)), (f"layer{k}.w2", (d, d))):
            p[name] = Tensor(_xavier(rng, d, d, shape), requires_grad=True, name=name)
        for name in (f"layer{k}.b1", f"layer{k}.b2"):
            p[name] = Tensor(np.zeros(d), requires_grad=True, name=name)
    p["disc.w"] = Tensor(_xavier(rng, d, 1, (d,)), requires_grad=True, name="disc.w")
    p["disc.b"] = Tensor(np.zeros(1), requires_grad=True, name="disc.b")
    return p


def _check_vocab(feats: np.ndarray, vocab, what: str):
    if feats.shape[0] == 0:
        return
    if feats.shape[1] != len(vocab):
        raise ValueError(
            f"{what} feature width {feats.shape[1]} does not match the encoder's {len(vocab)}"
        )
    over = feats > np.asarray(vocab)[None, :]
    if np.any(over) or np.any(feats < 0):
        raise ValueError(f"{what} feature index out of vocabulary")


def embed_inputs(
    batch: BatchGraph, params: Params, config: EncoderConfig, node_feats: Optional[np.ndarray] = None
) -> Tuple[Tensor, Tensor]:
    """Feature plus segment embeddings for every node and directed edge.

    ``node_feats`` overrides ``batch.node_feats`` (used for attribute masking).
    """
    n = batch.num_nodes
    feats = batch.node_feats if node_feats is None else node_feats
    real = batch.real_nodes
    real_feats = feats[real]
    _check_vocab(real_feats, config.node_vocab, "node")

    h = ad.row_gather(params["node_seg"], batch.node_segments)
    fe = _slot_sum(params, "node_emb", real_feats)
    if fe is not None:
        h = h + ad.segment_sum(fe, real, n)
    if batch.collection_node_indices is not None:
        coll = batch.collection_node_indices
        tok = ad.row_gather(params["collection_token"], np.zeros(len(coll), dtype=np.int64))
        h = h + ad.segment_sum(tok, coll, n)

    src, dst, row, seg = batch.directed()
    e = ad.row_gather(params["edge_seg"], seg)
    has_feat = np.flatnonzero(row >= 0)
    ef_rows = batch.edge_feats[row[has_feat]]
    _check_vocab(ef_rows, config.edge_vocab, "edge")
    fe = _slot_sum(params, "edge_emb", ef_rows)
    if fe is not None:
        e = e + ad.segment_sum(fe, has_feat, len(src))
    return h, e


def _slot_sum(params: Params, prefix: str, feats: np.ndarray) -> Optional[Tensor]:
    if feats.shape[0] == 0 or feats.ndim < 2 or feats.shape[1] == 0:
        return None
    out = ad.row_gather(params[f"{prefix}.0"], feats[:, 0])
    for s in range(1, feats.shape[1]):
        out = out + ad.row_gather(params[f"{prefix}.{s}"], feats[:, s])
    return out


def mp_layer(
    h: Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    e: Tensor,
    params: Params,
    k: int,
    dropout: float = 0.0,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """``h'_i = relu(MLP(h_i + sum_{j->i} (h_j + e_ji)))`` then dropout."""
    msg = ad.row_gather(h, src) + e
    x = h + ad.segment_sum(msg, dst, h.shape[0])
    z = ad.relu(x @ params[f"layer{k}.w1"] + params[f"layer{k}.b1"])
    z = z @ params[f"layer{k}.w2"] + params[f"layer{k}.b2"]
    return ad.dropout(ad.relu(z), dropout, rng, training)


def encode(
    batch: BatchGraph,
    params: Params,
    config: EncoderConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    node_feats: Optional[np.ndarray] = None,
) -> Tensor:
    """Node embeddings after ``config.layers`` rounds of message passing."""
    h, e = embed_inputs(batch, params, config, node_feats)
    src, dst, _, _ = batch.directed()
    for k in range(config.layers):
        h = mp_layer(h, src, dst, e, params, k, config.dropout, training, rng)
    return h


def forward(
    batch: BatchGraph,
    params: Params,
    config: EncoderConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    node_feats: Optional[np.ndarray] = None,
) -> Tuple[Tensor, Optional[Tensor]]:
    """Return node embeddings and the collection-node rows (``None`` without them)."""
    h = encode(batch, params, config, training, rng, node_feats)
    if batch.collection_node_indices is None:
        return h, None
    return h, ad.row_gather(h, batch.collection_node_indices)


def discriminate(h_c: Tensor, params: Params) -> Tensor:
    """Same-source probability per instance."""
    return ad.sigmoid(h_c @ params["disc.w"] + params["disc.b"])


def readout(h: Tensor, batch: BatchGraph, mode: str = "collection") -> Tensor:
    """Per-member graph embedding from final node embeddings."""
    if mode == "collection":
        if batch.collection_node_indices is None:
            raise ValueError("collection readout needs assembled instances")
        return ad.row_gather(h, batch.collection_node_indices)
    if mode == "mean":
        real = batch.real_nodes
        gid = batch.graph_id_per_node[real]
        counts = np.bincount(gid, minlength=batch.num_graphs).astype(np.float64)
        sums = ad.segment_sum(ad.row_gather(h, real), gid, batch.num_graphs)
        return sums * (1.0 / np.maximum(counts, 1.0))[:, None]
    raise ValueError(f"readout must be one of {READOUTS}")


def forward_instances(instances, params, config, training=False, rng=None):
    """Convenience: batch ``instances`` and return ``(batch, h, h_c)``."""
    batch = disjoint_union(list(instances))
    h, hc = forward(batch, params, config, training, rng)
    return batch, h, hc
