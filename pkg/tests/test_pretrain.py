import math
import struct
from dataclasses import replace

import numpy as np
import pytest

from halfgraph import autodiff as ad
from halfgraph.autodiff import Tensor
from halfgraph.data import gen_synthetic, two_family_spec
from halfgraph.gnn import EncoderConfig, discriminate, forward, init_params
from halfgraph.graph import disjoint_union, make_graph
from halfgraph.phd import build_epoch
from halfgraph.pretrain import (
    CheckpointError,
    TrainConfig,
    adam_step,
    bce_loss,
    derive_seed,
    init_mask_head,
    load_checkpoint,
    mask_attr_loss,
    new_state,
    num_masked,
    pretrain,
    save_checkpoint,
)

from conftest import random_graph


@pytest.fixture(scope="module")
def synth():
    return gen_synthetic(two_family_spec(count=24, seed=3))


def encoder_for(ds, **kw):
    kw.setdefault("dim", 8)
    kw.setdefault("layers", 2)
    return EncoderConfig(node_vocab=ds.node_vocab, edge_vocab=ds.edge_vocab, **kw)


def test_bce_half():
    assert bce_loss(Tensor([0.5]), [1]).item() == pytest.approx(0.693147, abs=1e-6)


def test_bce_perfect_is_near_zero():
    assert 0.0 <= bce_loss(Tensor([1.0, 0.0]), [1, 0]).item() < 1e-11


def test_bce_pair():
    assert bce_loss(Tensor([0.9, 0.1]), [1, 0]).item() == pytest.approx(0.105361, abs=1e-6)


def test_bce_nonnegative(rng):
    for _ in range(100):
        p = rng.random(5)
        assert bce_loss(Tensor(p), rng.integers(2, size=5)).item() >= 0.0


def test_adam_zero_gradient():
    theta = {"w": np.array([1.0, -2.0])}
    state = {"t": 0, "m": {}, "v": {}}
    adam_step(theta, {"w": np.zeros(2)}, state, lr=1e-3)
    np.testing.assert_array_equal(theta["w"], [1.0, -2.0])


def test_adam_first_step_closed_form():
    theta = {"w": np.zeros(3)}
    adam_step(theta, {"w": np.ones(3)}, {"t": 0, "m": {}, "v": {}}, lr=1e-3)
    np.testing.assert_allclose(theta["w"], -0.001 / (1 + 1e-8), rtol=1e-12)


def test_adam_shape_mismatch():
    state = {"t": 0, "m": {"w": np.zeros(2)}, "v": {"w": np.zeros(2)}}
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(3)}, state, lr=1e-3)


def test_adam_ten_steps_deterministic(rng):
    grads = [rng.normal(size=4) for _ in range(10)]

    def run():
        theta, state = {"w": np.ones(4)}, {"t": 0, "m": {}, "v": {}}
        for g in grads:
            adam_step(theta, {"w": g}, state, lr=1e-2)
        return theta["w"]

    assert run().tobytes() == run().tobytes()


def test_num_masked_rounding():
    assert num_masked(100, 0.15) == 15
    assert num_masked(3, 0.15) == 1
    assert num_masked(10, 0.25) == 3  # 2.5 rounds up


def test_mask_loss_untrained_is_about_ln2():
    rng = np.random.default_rng(0)
    cfg = EncoderConfig(dim=8, layers=2, node_vocab=(2,), edge_vocab=(1,))
    gs = [make_graph(12, rng.integers(2, size=12), [(i, i + 1) for i in range(11)]) for _ in range(20)]
    batch = disjoint_union(list(build_epoch(gs, 0)))
    losses = []
    for seed in range(20):
        r = np.random.default_rng(seed)
        params = init_params(cfg, r)
        params.update(init_mask_head(cfg, r))
        params["mask.w"].data *= 0.01  # near-uniform head
        losses.append(mask_attr_loss(batch, params, cfg, 0.15, r, training=False).item())
    assert np.mean(losses) == pytest.approx(math.log(2), abs=0.01)


def test_mask_loss_needs_two_symbols():
    cfg = EncoderConfig(dim=8, layers=1, node_vocab=(1,), edge_vocab=(1,))
    batch = disjoint_union([make_graph(3, [0, 0, 0], [(0, 1)])])
    params = init_params(cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        mask_attr_loss(batch, params, cfg, 0.15, np.random.default_rng(0))


def test_mask_gradients_match_finite_differences(synth):
    cfg = encoder_for(synth, dim=4, layers=1)
    r = np.random.default_rng(1)
    params = init_params(cfg, r)
    params.update(init_mask_head(cfg, r))
    batch = disjoint_union(list(build_epoch(synth.graphs[:4], 0)))
    watched = {k: params[k] for k in ("mask.w", "layer0.w1", "node_emb.0")}
    report = ad.finite_difference_check(
        lambda: mask_attr_loss(batch, params, cfg, 0.3, np.random.default_rng(5)), watched
    )
    assert all(r["passed"] for r in report.values()), report


def test_train_config_validation():
    for bad in ({"epochs": 0}, {"batch_size": 0}, {"lr": 0.0}, {"mask_lambda": -1.0}, {"mask_fraction": 1.0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_derive_seed_stable_and_distinct():
    assert derive_seed(0, "init") == derive_seed(0, "init")
    assert len({derive_seed(0, "init"), derive_seed(0, "train"), derive_seed(1, "init")}) == 3


def test_init_loss_near_ln2():
    big = gen_synthetic(two_family_spec(count=200, seed=1))
    cfg = encoder_for(big, dim=32, layers=3)
    ck = new_state(cfg, TrainConfig())
    params = ck.tensors()
    losses, accs = [], []
    for epoch in range(5):
        batch = disjoint_union(list(build_epoch(big.graphs, 7, epoch)))
        p = discriminate(forward(batch, params, cfg)[1], params)
        losses.append(bce_loss(p, batch.labels).item())
        accs.append(np.mean((p.data >= 0.5) == (batch.labels == 1)))
    assert 0.6 <= np.mean(losses) <= 0.8
    assert 0.4 <= np.mean(accs) <= 0.6


def test_small_step_does_not_increase_loss(rng):
    cfg = EncoderConfig(dim=8, layers=2, node_vocab=(3,), edge_vocab=(2,))
    params = init_params(cfg, np.random.default_rng(0))
    gs = [random_graph(rng, int(rng.integers(3, 12))) for _ in range(100)]
    violations = 0
    for inst in build_epoch(gs, 0):
        batch = disjoint_union([inst])

        def loss():
            return bce_loss(discriminate(forward(batch, params, cfg)[1], params), batch.labels)

        ad.zero_grad(params.values())
        before = loss()
        ad.backward(before)
        saved = {k: p.data.copy() for k, p in params.items()}
        for p in params.values():
            p.data -= 1e-4 * p.grad
        violations += loss().item() > before.item()
        for k, p in params.items():
            p.data = saved[k]
    assert violations <= 2


def test_pretrain_same_seed_same_trajectory(synth):
    cfg = encoder_for(synth)
    tc = TrainConfig(epochs=3, batch_size=8, seed=4)
    a = [l.loss for l in pretrain(synth, cfg, tc)[1]]
    b = [l.loss for l in pretrain(synth, cfg, tc)[1]]
    assert a == b


def test_pretrain_needs_two_graphs(synth):
    with pytest.raises(ValueError):
        pretrain(synth.graphs[:1], encoder_for(synth), TrainConfig(epochs=1))


def test_joint_masking_loss_decreases(synth):
    cfg = encoder_for(synth, dim=16, layers=2)
    _, logs = pretrain(synth, cfg, TrainConfig(epochs=50, batch_size=8, lr=1e-3, mask_lambda=1.0))
    assert all(l.mask_loss is not None for l in logs)
    assert np.mean([l.loss for l in logs[-5:]]) < np.mean([l.loss for l in logs[:5]])


def test_checkpoint_round_trip(tmp_path, synth):
    ck, _ = pretrain(synth, encoder_for(synth), TrainConfig(epochs=2, batch_size=8, mask_lambda=1.0))
    path = tmp_path / "model.phdc"
    save_checkpoint(ck, str(path))
    back = load_checkpoint(str(path))
    assert back.encoder == ck.encoder and back.train == ck.train and back.epoch == 2
    assert back.params.keys() == ck.params.keys()
    for k in ck.params:
        assert back.params[k].tobytes() == ck.params[k].tobytes()
        assert back.optimizer["m"][k].tobytes() == ck.optimizer["m"][k].tobytes()
        assert back.optimizer["v"][k].tobytes() == ck.optimizer["v"][k].tobytes()
    assert back.optimizer["t"] == ck.optimizer["t"]
    assert back.rng_state == ck.rng_state


def test_checkpoint_truncated(tmp_path, synth):
    ck = new_state(encoder_for(synth), TrainConfig())
    path = tmp_path / "model.phdc"
    save_checkpoint(ck, str(path))
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError, match="unexpected end of file"):
        load_checkpoint(str(path))


def test_checkpoint_version_999(tmp_path, synth):
    ck = new_state(encoder_for(synth), TrainConfig())
    path = tmp_path / "model.phdc"
    save_checkpoint(ck, str(path))
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", 999)
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="unsupported checkpoint version 999"):
        load_checkpoint(str(path))


def test_checkpoint_bad_magic_and_digest(tmp_path, synth):
    ck = new_state(encoder_for(synth), TrainConfig())
    path = tmp_path / "model.phdc"
    save_checkpoint(ck, str(path))
    data = bytearray(path.read_bytes())
    path.write_bytes(b"XXXX" + bytes(data[4:]))
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))
    data[8] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="digest"):
        load_checkpoint(str(path))


def test_resume_matches_uninterrupted(tmp_path, synth):
    cfg = encoder_for(synth, dropout=0.2)
    full_cfg = TrainConfig(epochs=4, batch_size=8, seed=2, mask_lambda=0.5)
    full, full_logs = pretrain(synth, cfg, full_cfg)

    half, _ = pretrain(synth, cfg, replace(full_cfg, epochs=2))
    path = str(tmp_path / "half.phdc")
    save_checkpoint(half, path)
    resumed, tail_logs = pretrain(synth, cfg, full_cfg, resume=load_checkpoint(path))

    assert [l.loss for l in tail_logs] == [l.loss for l in full_logs[2:]]
    for k in full.params:
        assert resumed.params[k].tobytes() == full.params[k].tobytes()


def test_periodic_checkpoint_written(tmp_path, synth):
    path = tmp_path / "periodic.phdc"
    seen = []

    def on_epoch(log):
        if path.exists():
            seen.append((log.epoch, load_checkpoint(str(path)).epoch))

    pretrain(synth, encoder_for(synth), TrainConfig(epochs=4, batch_size=8, checkpoint_every=2), str(path), on_epoch=on_epoch)
    assert (3, 2) in seen
    assert load_checkpoint(str(path)).epoch == 4
