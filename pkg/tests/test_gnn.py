from dataclasses import replace

import numpy as np
import pytest

from halfgraph import autodiff as ad
from halfgraph.autodiff import Tensor
from halfgraph.gnn import (
    EncoderConfig,
    discriminate,
    embed_inputs,
    forward,
    init_params,
    mp_layer,
    readout,
)
from halfgraph.graph import disjoint_union, make_graph
from halfgraph.phd import (
    AssembledInstance,
    HalfGraphPair,
    assemble,
    assemble_whole,
    build_epoch,
    strip_collection,
)

from conftest import random_graph

NODE_VOCAB, EDGE_VOCAB = (3,), (2,)


def config(**kw):
    kw.setdefault("dim", 8)
    kw.setdefault("layers", 2)
    return EncoderConfig(node_vocab=NODE_VOCAB, edge_vocab=EDGE_VOCAB, **kw)


def params_for(cfg, seed=0):
    return init_params(cfg, np.random.default_rng(seed))


def random_instances(rng, count, lo=2, hi=14, direction="uni"):
    gs = [random_graph(rng, int(rng.integers(lo, hi))) for _ in range(max(count, 2))]
    return list(build_epoch(gs, seed=int(rng.integers(1 << 30)), direction=direction))[:count]


def one(inst, params, cfg):
    return forward(disjoint_union([inst]), params, cfg)


def test_config_validation():
    for bad in ({"dim": 0}, {"layers": 0}, {"dropout": 1.0}, {"direction": "x"}, {"readout": "max"}):
        with pytest.raises(ValueError):
            config(**bad)
    big = EncoderConfig.full_scale()
    assert (big.dim, big.layers) == (300, 5)


def test_param_shapes():
    cfg = config(dim=6, layers=3)
    p = params_for(cfg)
    assert p["node_emb.0"].shape == (4, 6)  # vocab plus the mask row
    assert p["node_seg"].shape == (3, 6) and p["edge_seg"].shape == (3, 6)
    assert p["collection_token"].shape == (1, 6)
    assert sum(k.startswith("layer") for k in p) == 12
    assert p["disc.w"].shape == (6,) and p["disc.b"].shape == (1,)


def test_zero_tables_give_zero_inputs(rng):
    cfg = config()
    p = params_for(cfg)
    for name in ("node_emb.0", "edge_emb.0", "node_seg", "edge_seg", "collection_token"):
        p[name].data[:] = 0.0
    h, e = embed_inputs(disjoint_union(random_instances(rng, 3)), p, cfg)
    assert not h.data.any() and not e.data.any()


def test_segment_difference_in_inputs():
    cfg = config()
    p = params_for(cfg)
    node = make_graph(1, [1], [])
    inst = assemble(HalfGraphPair(node, node, 1, 0, 1), "uni")
    h, _ = embed_inputs(disjoint_union([inst]), p, cfg)
    np.testing.assert_allclose(h.data[0] - h.data[1], p["node_seg"].data[0] - p["node_seg"].data[1], atol=1e-15)
    expected = p["collection_token"].data[0] + p["node_seg"].data[2]
    np.testing.assert_allclose(h.data[2], expected, atol=1e-15)


def test_virtual_edges_get_segment_two_only(rng):
    cfg = config()
    p = params_for(cfg)
    batch = disjoint_union(random_instances(rng, 2))
    _, e = embed_inputs(batch, p, cfg)
    _, _, row, seg = batch.directed()
    virtual = row < 0
    assert np.all(seg[virtual] == 2)
    np.testing.assert_array_equal(e.data[virtual], np.broadcast_to(p["edge_seg"].data[2], e.data[virtual].shape))


def test_feature_out_of_vocabulary():
    cfg = config()
    g = make_graph(3, [0, 9, 0], [(0, 1)])
    with pytest.raises(ValueError, match="out of vocabulary"):
        forward(disjoint_union([assemble_whole(g)]), params_for(cfg), cfg)


def identity_layer(d):
    return {
        "layer0.w1": Tensor(np.eye(d)),
        "layer0.b1": Tensor(np.zeros(d)),
        "layer0.w2": Tensor(np.eye(d)),
        "layer0.b2": Tensor(np.zeros(d)),
    }


def test_mp_layer_isolated_node():
    h = Tensor([[0.5, -1.0, 2.0]])
    out = mp_layer(h, np.zeros(0, int), np.zeros(0, int), Tensor(np.zeros((0, 3))), identity_layer(3), 0)
    np.testing.assert_array_equal(out.data, [[0.5, 0.0, 2.0]])


def test_mp_layer_single_edge():
    h0, h1 = np.array([1.0, -3.0]), np.array([-0.5, 2.0])
    h = Tensor(np.stack([h0, h1]))
    out = mp_layer(h, np.array([0]), np.array([1]), Tensor(np.zeros((1, 2))), identity_layer(2), 0)
    np.testing.assert_array_equal(out.data[1], np.maximum(h1 + h0, 0))
    np.testing.assert_array_equal(out.data[0], np.maximum(h0, 0))


def test_mp_layer_gradients(rng):
    d = 4
    params = {
        "layer0.w1": Tensor(rng.normal(size=(d, d)), requires_grad=True),
        "layer0.b1": Tensor(rng.normal(size=d), requires_grad=True),
        "layer0.w2": Tensor(rng.normal(size=(d, d)), requires_grad=True),
        "layer0.b2": Tensor(rng.normal(size=d), requires_grad=True),
    }
    e = Tensor(rng.normal(size=(5, d)), requires_grad=True)
    h = rng.normal(size=(4, d))
    src, dst = np.array([0, 1, 2, 3, 0]), np.array([1, 2, 3, 0, 2])
    watched = {"w1": params["layer0.w1"], "w2": params["layer0.w2"], "e": e}
    report = ad.finite_difference_check(
        lambda: ad.total(ad.sigmoid(mp_layer(Tensor(h), src, dst, e, params, 0))), watched
    )
    assert all(r["passed"] for r in report.values()), report


def test_discriminate_examples():
    p = {"disc.w": Tensor(np.zeros(3)), "disc.b": Tensor([0.0])}
    hc = Tensor(np.ones((2, 3)))
    np.testing.assert_array_equal(discriminate(hc, p).data, [0.5, 0.5])
    p["disc.b"] = Tensor([10.0])
    assert discriminate(hc, p).data[0] == pytest.approx(0.99995, abs=1e-5)


def test_readout_mean_single_node():
    cfg = config()
    p = params_for(cfg)
    g = make_graph(1, [2], [])
    batch = disjoint_union([strip_collection(assemble_whole(g))])
    h, hc = forward(batch, p, cfg)
    assert hc is None
    np.testing.assert_array_equal(readout(h, batch, "mean").data[0], h.data[0])


def test_readout_mean_excludes_collection():
    cfg = config()
    p = params_for(cfg)
    batch = disjoint_union([assemble_whole(make_graph(3, [0, 1, 2], [(0, 1), (1, 2)]))])
    h, hc = forward(batch, p, cfg)
    np.testing.assert_allclose(readout(h, batch, "mean").data[0], h.data[:3].sum(axis=0) / 3, atol=1e-15)
    np.testing.assert_array_equal(readout(h, batch, "collection").data, hc.data)


def test_readout_collection_needs_instances():
    cfg = config()
    batch = disjoint_union([make_graph(2, [0, 0], [(0, 1)])])
    h, _ = forward(batch, params_for(cfg), cfg)
    with pytest.raises(ValueError):
        readout(h, batch, "collection")


def test_batch_of_one_is_bitwise(rng):
    cfg = config()
    p = params_for(cfg)
    inst = random_instances(rng, 1)[0]
    a = one(inst, p, cfg)[1].data
    b = forward(disjoint_union([inst]), p, cfg)[1].data
    assert a.tobytes() == b.tobytes()


def test_batch_matches_members(rng):
    cfg = config(dim=16, layers=3)
    p = params_for(cfg)
    insts = random_instances(rng, 12)
    _, hc = forward(disjoint_union(insts), p, cfg)
    single = np.stack([one(i, p, cfg)[1].data[0] for i in insts])
    assert np.max(np.abs(hc.data - single)) < 1e-12


def test_member_order_permutes_outputs(rng):
    cfg = config()
    p = params_for(cfg)
    a, b = random_instances(rng, 2)
    ab = forward(disjoint_union([a, b]), p, cfg)[1].data
    ba = forward(disjoint_union([b, a]), p, cfg)[1].data
    np.testing.assert_allclose(ab, ba[::-1], atol=1e-12)


def test_collection_non_interference_bitwise(rng):
    cfg = config(dim=16, layers=3)
    p = params_for(cfg)
    for inst in random_instances(rng, 20, hi=20):
        with_c = one(inst, p, cfg)[0].data[: inst.num_real_nodes]
        without = one(strip_collection(inst), p, cfg)[0].data
        assert with_c.tobytes() == without.tobytes()


def test_bidirectional_changes_real_nodes(rng):
    cfg = config(dim=16, layers=3, direction="bi")
    p = params_for(cfg)
    for inst in random_instances(rng, 5, direction="bi"):
        with_c = one(inst, p, cfg)[0].data[: inst.num_real_nodes]
        without = one(strip_collection(inst), p, cfg)[0].data
        assert np.max(np.abs(with_c - without)) > 1e-9


def permute_instance(inst, perm):
    """Relabel real nodes with ``perm`` (old index -> new index)."""
    n = inst.num_real_nodes
    inv = np.argsort(perm)
    edges = np.sort(perm[inst.edges], axis=1)
    return AssembledInstance(
        node_feats=inst.node_feats[inv],
        node_segments=np.concatenate([inst.node_segments[:n][inv], [2]]),
        edges=edges,
        edge_feats=inst.edge_feats,
        edge_segments=inst.edge_segments,
        virtual_src=np.concatenate([perm, [n]])[inst.virtual_src],
        virtual_dst=np.concatenate([perm, [n]])[inst.virtual_dst],
        label=inst.label,
        direction=inst.direction,
    )


@pytest.mark.parametrize("direction", ["uni", "bi"])
def test_permutation_invariance(rng, direction):
    cfg = config(dim=16, layers=3, direction=direction)
    p = params_for(cfg)
    for inst in random_instances(rng, 5, direction=direction):
        batch = disjoint_union([inst])
        h, hc = forward(batch, p, cfg)
        for _ in range(4):
            perm = rng.permutation(inst.num_real_nodes)
            other = permute_instance(inst, perm)
            ob = disjoint_union([other])
            h2, hc2 = forward(ob, p, cfg)
            np.testing.assert_allclose(hc2.data, hc.data, atol=1e-9, rtol=0)
            np.testing.assert_allclose(readout(h2, ob, "mean").data, readout(h, batch, "mean").data, atol=1e-9, rtol=0)


def test_segment_sensitivity(rng):
    inst = random_instances(rng, 1, lo=6)[0]
    n = inst.num_real_nodes
    swapped_segments = inst.node_segments.copy()
    swapped_segments[:n] = 1 - swapped_segments[:n]
    swapped = replace(inst, node_segments=swapped_segments, edge_segments=1 - inst.edge_segments)
    cfg = config()
    differs = [
        np.max(np.abs(one(inst, params_for(cfg, s), cfg)[1].data - one(swapped, params_for(cfg, s), cfg)[1].data)) > 0
        for s in range(5)
    ]
    assert any(differs)


def test_dropout_only_in_training(rng):
    cfg = config(dropout=0.5)
    p = params_for(cfg)
    batch = disjoint_union(random_instances(rng, 3))
    a = forward(batch, p, cfg)[1].data
    b = forward(batch, p, cfg)[1].data
    c = forward(batch, p, cfg, training=True, rng=np.random.default_rng(0))[1].data
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)
