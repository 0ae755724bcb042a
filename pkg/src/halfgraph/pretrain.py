"""Pre-training on half-graph discrimination: losses, Adam, loop, checkpoints."""
from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gnn import EncoderConfig, Params, discriminate, encode, forward, init_params, mask_token
from .graph import BatchGraph, Graph, disjoint_union
from .phd import build_epoch

PROB_EPS = 1e-12
CHECKPOINT_MAGIC = b"PHDC"
CHECKPOINT_VERSION = 1

# reference protocol at full scale
FULL_SCALE_EPOCHS = 100
FULL_SCALE_LR = 1e-3
FULL_SCALE_BATCH = 256


def derive_seed(seed: int, label: str) -> int:
    """Stable 63-bit sub-seed for a named subsystem."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# -- losses ----------------------------------------------------------------


def bce_loss(p: Tensor, y) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped to ``[1e-12, 1 - 1e-12]``."""
    y = np.asarray(y, dtype=np.float64)
    p = ad.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    ll = ad.log(p) * y + ad.log(1.0 - p) * (1.0 - y)
    return -ad.mean(ll)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    return -ad.mean(ad.pick(ad.log_softmax(logits), targets))


def num_masked(n_real: int, fraction: float) -> int:
    """Nearest integer to ``fraction * n_real``, at least one."""
    return max(1, int(np.floor(fraction * n_real + 0.5)))


def init_mask_head(config: EncoderConfig, rng: np.random.Generator) -> Params:
    d, v = config.dim, config.node_vocab[0]
    a = np.sqrt(6.0 / (d + v))
    return {
        "mask.w": Tensor(rng.uniform(-a, a, size=(d, v)), requires_grad=True, name="mask.w"),
        "mask.b": Tensor(np.zeros(v), requires_grad=True, name="mask.b"),
    }


def mask_attr_loss(
    batch: BatchGraph,
    params: Params,
    config: EncoderConfig,
    fraction: float,
    rng: np.random.Generator,
    training: bool = True,
) -> Tensor:
    """Hide slot 0 of a fraction of real nodes and predict it back from ``h^K``."""
    real = batch.real_nodes
    if len(real) == 0:
        raise ValueError("no maskable nodes in batch")
    if config.node_vocab[0] < 2:
        raise ValueError("attribute masking needs a slot-0 vocabulary of at least 2")
    chosen = rng.choice(real, num_masked(len(real), fraction), replace=False)
    feats = batch.node_feats.copy()
    targets = feats[chosen, 0].copy()
    feats[chosen, 0] = mask_token(config)
    h = encode(batch, params, config, training, rng, node_feats=feats)
    logits = ad.row_gather(h, chosen) @ params["mask.w"] + params["mask.b"]
    return softmax_cross_entropy(logits, targets)


# -- optimizer -------------------------------------------------------------


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place.

    ``params`` and ``grads`` map names to arrays; ``state`` holds ``t``,
    ``m`` and ``v`` and is updated in place.
    """
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, theta in params.items():
        g = grads[name]
        m = state["m"].setdefault(name, np.zeros_like(theta))
        v = state["v"].setdefault(name, np.zeros_like(theta))
        if m.shape != theta.shape or g.shape != theta.shape:
            raise ValueError(f"adam: shape mismatch for {name}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


class Adam:
    def __init__(self, params: Params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, state=None):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = state or {"t": 0, "m": {}, "v": {}}

    def zero_grad(self):
        ad.zero_grad(self.params.values())

    def step(self):
        adam_step(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items()},
            self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )


# -- configuration and checkpoints ----------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    mask_lambda: float = 0.0
    mask_fraction: float = 0.15
    shuffle: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.mask_lambda < 0:
            raise ValueError("mask_lambda must be >= 0")
        if not 0 < self.mask_fraction < 1:
            raise ValueError("mask_fraction must lie in (0, 1)")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    encoder: EncoderConfig
    train: TrainConfig
    params: Dict[str, np.ndarray]
    optimizer: dict = field(default_factory=lambda: {"t": 0, "m": {}, "v": {}})
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    def config_json(self) -> str:
        return json.dumps(
            {"encoder": self.encoder.to_dict(), "train": asdict(self.train)}, sort_keys=True
        )

    def digest(self) -> str:
        return hashlib.sha256(self.config_json().encode()).hexdigest()

    def tensors(self) -> Params:
        """Fresh trainable tensors holding copies of the stored parameters."""
        return {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in self.params.items()}


def _write_tensors(buf, arrays: Dict[str, np.ndarray]):
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _write_blob(buf, text: str):
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    """Write atomically: header, config, epoch, params, Adam state, rng state."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    buf.write(hashlib.sha256(ckpt.config_json().encode()).digest())
    _write_blob(buf, ckpt.config_json())
    buf.write(struct.pack("<I", ckpt.epoch))
    _write_tensors(buf, ckpt.params)
    buf.write(struct.pack("<Q", ckpt.optimizer["t"]))
    _write_tensors(buf, ckpt.optimizer["m"])
    _write_tensors(buf, ckpt.optimizer["v"])
    _write_blob(buf, json.dumps(ckpt.rng_state, sort_keys=True))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("unexpected end of file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def tensors(self) -> Dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            name = self.blob()
            (rank,) = self.unpack("<I")
            shape = self.unpack(f"<{rank}Q") if rank else ()
            size = int(np.prod(shape)) if rank else 1
            out[name] = np.frombuffer(self.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        return out


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = r.take(32)
    config_text = r.blob()
    if hashlib.sha256(config_text.encode()).digest() != digest:
        raise CheckpointError("config digest mismatch")
    cfg = json.loads(config_text)
    (epoch,) = r.unpack("<I")
    params = r.tensors()
    (t,) = r.unpack("<Q")
    m, v = r.tensors(), r.tensors()
    rng_state = json.loads(r.blob())
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after checkpoint")
    return Checkpoint(
        encoder=EncoderConfig(**cfg["encoder"]),
        train=TrainConfig(**cfg["train"]),
        params=params,
        optimizer={"t": t, "m": m, "v": v},
        epoch=epoch,
        rng_state=rng_state,
        version=version,
    )


# -- training loop ---------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    loss: float
    pretext_acc: float
    phd_loss: float
    mask_loss: Optional[float] = None


def _batches(items: Sequence, size: int):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def pretext_accuracy(p: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((p >= 0.5) == (np.asarray(y) == 1)))


def new_state(encoder: EncoderConfig, train: TrainConfig) -> Checkpoint:
    """Freshly initialized parameters (plus the masking head when enabled)."""
    init_rng = np.random.default_rng(derive_seed(train.seed, "init"))
    params = init_params(encoder, init_rng)
    if train.mask_lambda > 0:
        params.update(init_mask_head(encoder, init_rng))
    train_rng = np.random.default_rng(derive_seed(train.seed, "train"))
    return Checkpoint(
        encoder=encoder,
        train=train,
        params={k: p.data for k, p in params.items()},
        rng_state=train_rng.bit_generator.state,
    )


def pretrain(
    graphs: Sequence[Graph],
    encoder: EncoderConfig,
    train: TrainConfig,
    checkpoint_path: Optional[str] = None,
    resume: Optional[Checkpoint] = None,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
):
    """Run (or continue) pre-training; returns ``(checkpoint, logs)``.

    Every epoch resamples one instance per graph. With ``resume``, training
    continues from the stored epoch, parameters, Adam moments and rng state
    up to ``train.epochs``.
    """
    graphs = list(getattr(graphs, "graphs", graphs))
    if len(graphs) < 2:
        raise ValueError("pre-training needs at least 2 graphs")
    state = resume if resume is not None else new_state(encoder, train)
    if resume is not None:
        encoder = resume.encoder
        state = replace(resume, train=train)
    params = state.tensors()
    opt = Adam(
        params,
        lr=train.lr,
        state={
            "t": state.optimizer["t"],
            "m": {k: a.copy() for k, a in state.optimizer["m"].items()},
            "v": {k: a.copy() for k, a in state.optimizer["v"].items()},
        },
    )
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng_state
    inst_seed = derive_seed(train.seed, "instances")
    logs: List[EpochLog] = []

    def snapshot(epoch):
        return Checkpoint(
            encoder=encoder,
            train=train,
            params={k: p.data.copy() for k, p in params.items()},
            optimizer={
                "t": opt.state["t"],
                "m": {k: a.copy() for k, a in opt.state["m"].items()},
                "v": {k: a.copy() for k, a in opt.state["v"].items()},
            },
            epoch=epoch,
            rng_state=rng.bit_generator.state,
        )

    for epoch in range(state.epoch, train.epochs):
        instances = list(build_epoch(graphs, inst_seed, epoch, train.shuffle, encoder.direction))
        tot = phd_tot = mask_tot = 0.0
        correct = 0
        for chunk in _batches(instances, train.batch_size):
            batch = disjoint_union(chunk)
            opt.zero_grad()
            _, hc = forward(batch, params, encoder, training=True, rng=rng)
            p = discriminate(hc, params)
            loss = bce_loss(p, batch.labels)
            phd = loss.item()
            if train.mask_lambda > 0:
                aux = mask_attr_loss(batch, params, encoder, train.mask_fraction, rng)
                mask_tot += aux.item() * len(chunk)
                loss = loss + train.mask_lambda * aux
            ad.backward(loss)
            opt.step()
            tot += loss.item() * len(chunk)
            phd_tot += phd * len(chunk)
            correct += int(np.sum((p.data >= 0.5) == (batch.labels == 1)))
        n = len(instances)
        entry = EpochLog(
            epoch + 1,
            tot / n,
            correct / n,
            phd_tot / n,
            mask_tot / n if train.mask_lambda > 0 else None,
        )
        logs.append(entry)
        if on_epoch:
            on_epoch(entry)
        if checkpoint_path and train.checkpoint_every and (epoch + 1) % train.checkpoint_every == 0:
            save_checkpoint(snapshot(epoch + 1), checkpoint_path)

    final = snapshot(max(train.epochs, state.epoch))
    if checkpoint_path:
        save_checkpoint(final, checkpoint_path)
    return final, logs


def evaluate_pretext(graphs, ckpt: Checkpoint, seed: int = 0, epochs: int = 1, batch_size: int = 256):
    """Mean PHD loss and accuracy of a checkpoint on freshly sampled instances."""
    graphs = list(getattr(graphs, "graphs", graphs))
    params = ckpt.tensors()
    losses, correct, total = [], 0, 0
    for epoch in range(epochs):
        instances = list(build_epoch(graphs, seed, epoch, True, ckpt.encoder.direction))
        for chunk in _batches(instances, batch_size):
            batch = disjoint_union(chunk)
            _, hc = forward(batch, params, ckpt.encoder)
            p = discriminate(hc, params)
            losses.append(bce_loss(p, batch.labels).item() * len(chunk))
            correct += int(np.sum((p.data >= 0.5) == (batch.labels == 1)))
            total += len(chunk)
    return sum(losses) / total, correct / total
