"""Graph embeddings, linear probes, fine-tuning and classification metrics."""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from . import autodiff as ad
from .autodiff import Tensor
from .gnn import forward, readout
from .graph import disjoint_union
from .phd import assemble_whole
from .pretrain import Adam, Checkpoint, derive_seed, softmax_cross_entropy

C_GRID = tuple(10.0**k for k in range(-3, 4))
SPLIT_NAMES = ("train", "valid", "test")

# reference numbers for the full-scale setting
FULL_SCALE_MUTAG_ACC = (90.5, 0.9)
FULL_SCALE_FINETUNE = {"epochs": 100, "lr": 1e-3, "dropout": 0.5}


# -- metrics ---------------------------------------------------------------


def accuracy(pred, labels) -> float:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if pred.shape != labels.shape or pred.size == 0:
        raise ValueError("accuracy needs two non-empty arrays of equal shape")
    return float(np.mean(pred == labels))


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative; ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = stats.rankdata(scores)  # midranks for ties
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def stratified_kfold(labels, k: int, seed: int = 0) -> List[np.ndarray]:
    """Test-index arrays for ``k`` folds, each class dealt round-robin after a seeded shuffle."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if k < 2:
        raise ValueError("need at least 2 folds")
    if counts.min() < k:
        raise ValueError(
            f"class {classes[counts.argmin()]} has {counts.min()} members, fewer than {k} folds"
        )
    rng = np.random.default_rng(seed)
    folds: List[list] = [[] for _ in range(k)]
    start = 0
    for c in classes:
        members = rng.permutation(np.flatnonzero(labels == c))
        for j, idx in enumerate(members):
            folds[(start + j) % k].append(idx)
        start = (start + len(members)) % k  # keeps total fold sizes balanced
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]


def stratified_holdout(labels, fraction: float, seed: int = 0):
    """Split indices into ``(keep, held)`` with ``fraction`` of every class held out (at least one)."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    keep, held = [], []
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_held = min(max(1, int(round(fraction * len(members)))), len(members) - 1)
        held.extend(members[:n_held])
        keep.extend(members[n_held:])
    return np.sort(np.asarray(keep, dtype=np.int64)), np.sort(np.asarray(held, dtype=np.int64))


# -- embeddings ------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingMatrix:
    rows: np.ndarray
    readout: str
    checkpoint_digest: str

    def __post_init__(self):
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("embedding matrix has non-finite entries")

    def __len__(self):
        return len(self.rows)


def extract_embeddings(graphs, ckpt: Checkpoint, mode: Optional[str] = None) -> EmbeddingMatrix:
    """One inference-mode forward per graph (whole graph as segment 0 plus a collection node).

    Graphs are embedded one at a time so row ``i`` depends only on graph ``i``.
    """
    graphs = list(getattr(graphs, "graphs", graphs))
    mode = mode or ckpt.encoder.readout
    params = {k: Tensor(v) for k, v in ckpt.params.items()}
    rows = []
    for g in graphs:
        batch = disjoint_union([assemble_whole(g, ckpt.encoder.direction)])
        h, _ = forward(batch, params, ckpt.encoder)
        rows.append(readout(h, batch, mode).data[0])
    d = ckpt.encoder.dim
    return EmbeddingMatrix(np.asarray(rows).reshape(-1, d), mode, ckpt.digest())


def export_embeddings_csv(matrix: EmbeddingMatrix, labels, path: str) -> None:
    """Header ``graph_id,label,e0,...`` then one row per graph, 17 significant digits."""
    labels = np.asarray(labels)
    if len(labels) != len(matrix):
        raise ValueError("one label per embedding row required")
    d = matrix.rows.shape[1]
    lines = [",".join(["graph_id", "label"] + [f"e{j}" for j in range(d)])]
    for i, (row, y) in enumerate(zip(matrix.rows, labels)):
        lines.append(",".join([str(i), str(int(y))] + [format(float(x), ".17g") for x in row]))
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_embeddings_csv(path: str):
    """Inverse of :func:`export_embeddings_csv`: ``(graph_ids, labels, rows)``."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[:2] != ["graph_id", "label"]:
            raise ValueError(f"{path}: unexpected header")
        ids, labels, rows = [], [], []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            ids.append(int(parts[0]))
            labels.append(int(parts[1]))
            rows.append([float(x) for x in parts[2:]])
    return np.array(ids), np.array(labels), np.asarray(rows, dtype=np.float64).reshape(len(ids), len(header) - 2)


# -- linear probe ----------------------------------------------------------


def _standardize(train: np.ndarray, *others: np.ndarray):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd < 1e-12] = 1.0
    return [(x - mu) / sd for x in (train,) + others]


def fit_logistic(X: np.ndarray, y: np.ndarray, C: float, num_classes: int) -> np.ndarray:
    """Multinomial logistic regression with an L2 penalty ``|W|^2 / (2 C n)`` on the weights.

    Returns a ``[d + 1, num_classes]`` matrix whose last row is the unpenalized bias.
    """
    n, d = X.shape
    Xb = np.hstack([X, np.ones((n, 1))])
    Y = np.eye(num_classes)[y]
    penalty = np.ones((d + 1, 1))
    penalty[-1] = 0.0
    reg = 1.0 / (C * n)

    def objective(w):
        W = w.reshape(d + 1, num_classes)
        z = Xb @ W
        z -= z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -np.sum(Y * logp) / n + 0.5 * reg * np.sum(penalty * W * W)
        grad = Xb.T @ (np.exp(logp) - Y) / n + reg * penalty * W
        return loss, grad.ravel()

    res = optimize.minimize(
        objective, np.zeros((d + 1) * num_classes), jac=True, method="L-BFGS-B",
        options={"maxiter": 500},
    )
    return res.x.reshape(d + 1, num_classes)


def predict_logistic(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.argmax(X @ W[:-1] + W[-1], axis=1)


@dataclass
class EvalReport:
    fold_scores: List[float]
    metric: str = "accuracy"
    chosen: List[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_scores))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_scores))

    def to_dict(self):
        return {
            "metric": self.metric,
            "folds": list(self.fold_scores),
            "mean": self.mean,
            "std": self.std,
            "chosen_C": list(self.chosen),
        }


def linear_probe(X, y, folds: int = 10, grid: Sequence[float] = C_GRID, seed: int = 0) -> EvalReport:
    """Stratified k-fold accuracy of an L2 logistic classifier on fixed embeddings.

    Per fold, C is chosen on a stratified 80/20 split of the training part,
    then the classifier is refit on the whole training part.
    """
    X = np.asarray(getattr(X, "rows", X), dtype=np.float64)
    y = np.asarray(y)
    classes, y_idx = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise ValueError("linear probe needs at least 2 classes")
    k = len(classes)
    report = EvalReport([], "accuracy")
    for f, test in enumerate(stratified_kfold(y_idx, folds, seed)):
        train = np.setdiff1d(np.arange(len(y)), test)
        inner_fit, inner_val = stratified_holdout(y_idx[train], 0.2, derive_seed(seed, f"inner{f}"))
        a, b = _standardize(X[train[inner_fit]], X[train[inner_val]])
        scores = [
            accuracy(predict_logistic(fit_logistic(a, y_idx[train[inner_fit]], C, k), b), y_idx[train[inner_val]])
            for C in grid
        ]
        C = grid[int(np.argmax(scores))]
        a, b = _standardize(X[train], X[test])
        W = fit_logistic(a, y_idx[train], C, k)
        report.fold_scores.append(accuracy(predict_logistic(W, b), y_idx[test]))
        report.chosen.append(C)
    return report


def majority_rate(y) -> float:
    _, counts = np.unique(np.asarray(y), return_counts=True)
    return float(counts.max() / counts.sum())


# -- fine-tuning -----------------------------------------------------------


def read_split_file(path: str, num_graphs: int) -> Dict[str, np.ndarray]:
    """Parse ``<graph_index> <train|valid|test>`` lines; every graph exactly once."""
    seen = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2 or parts[1] not in SPLIT_NAMES:
                raise ValueError(f"{path} line {lineno}: expected '<graph_index> <train|valid|test>'")
            try:
                idx = int(parts[0])
            except ValueError:
                raise ValueError(f"{path} line {lineno}: non-integer graph index {parts[0]!r}") from None
            if not 0 <= idx < num_graphs:
                raise ValueError(f"{path} line {lineno}: graph index {idx} out of range")
            if idx in seen:
                raise ValueError(f"{path} line {lineno}: graph {idx} assigned twice")
            seen[idx] = parts[1]
    missing = sorted(set(range(num_graphs)) - set(seen))
    if missing:
        raise ValueError(f"{path}: graph {missing[0]} has no split assignment")
    splits = {s: np.array(sorted(i for i, v in seen.items() if v == s), dtype=np.int64) for s in SPLIT_NAMES}
    return splits


def write_split_file(splits: Dict[str, np.ndarray], path: str) -> None:
    rows = sorted((int(i), s) for s in SPLIT_NAMES for i in splits.get(s, ()))
    with open(path, "w") as fh:
        fh.writelines(f"{i} {s}\n" for i, s in rows)


def random_splits(labels, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Dict[str, np.ndarray]:
    """Stratified train/valid/test assignment (each split gets every class when possible)."""
    labels = np.asarray(labels)
    rest, test = stratified_holdout(labels, fractions[2], seed)
    keep, valid = stratified_holdout(labels[rest], fractions[1] / (1.0 - fractions[2]), seed + 1)
    return {"train": rest[keep], "valid": rest[valid], "test": test}


@dataclass
class FinetuneResult:
    metric: str
    valid: float
    test: float
    best_epoch: int
    history: List[dict]

    def to_dict(self):
        return {
            "metric": self.metric,
            "valid": self.valid,
            "test": self.test,
            "best_epoch": self.best_epoch,
            "history": self.history,
        }


def _score(probs: np.ndarray, y: np.ndarray, metric: str) -> float:
    if metric == "auc":
        return roc_auc(probs[:, 1], y)
    return accuracy(np.argmax(probs, axis=1), y)


def finetune(
    graphs,
    splits: Dict[str, np.ndarray],
    ckpt: Checkpoint,
    epochs: int = 100,
    lr: float = 1e-3,
    encoder_lr: Optional[float] = None,
    dropout: float = 0.5,
    batch_size: int = 32,
    metric: str = "auc",
    seed: int = 0,
) -> FinetuneResult:
    """Train a linear head on the readout, optionally backpropagating into the encoder.

    ``encoder_lr`` defaults to ``lr``; 0 freezes the encoder, which then runs
    in inference mode so the head sees fixed embeddings. Dropout applies
    inside the encoder layers while it trains. The epoch with the best
    validation metric (first on ties) supplies the reported test metric.
    """
    graphs = list(getattr(graphs, "graphs", graphs))
    for s in SPLIT_NAMES:
        if len(splits.get(s, ())) == 0:
            raise ValueError(f"split {s!r} is empty")
    if metric not in ("auc", "acc"):
        raise ValueError("metric must be 'auc' or 'acc'")
    labels = np.array([-1 if g.label is None else g.label for g in graphs])
    if np.any(labels < 0):
        raise ValueError("fine-tuning needs a label on every graph")
    num_classes = int(labels.max()) + 1
    if metric == "auc" and num_classes != 2:
        raise ValueError("ROC-AUC is defined here for binary labels only")
    encoder_lr = lr if encoder_lr is None else encoder_lr
    frozen = encoder_lr == 0
    config = replace(ckpt.encoder, dropout=0.0 if frozen else dropout)
    mode = config.readout

    enc = ckpt.tensors()
    rng = np.random.default_rng(derive_seed(seed, "finetune"))
    d = config.dim
    bound = np.sqrt(6.0 / (d + num_classes))
    head = {
        "head.w": Tensor(rng.uniform(-bound, bound, size=(d, num_classes)), requires_grad=True),
        "head.b": Tensor(np.zeros(num_classes), requires_grad=True),
    }
    head_opt = Adam(head, lr=lr)
    enc_opt = None if frozen else Adam(enc, lr=encoder_lr)
    instances = [assemble_whole(g, config.direction) for g in graphs]

    def embed(idx, training):
        batch = disjoint_union([instances[i] for i in idx])
        h, _ = forward(batch, enc, config, training=training, rng=rng)
        return readout(h, batch, mode)

    fixed = extract_embeddings(graphs, ckpt, mode).rows if frozen else None

    def features(idx, training):
        if frozen:
            return Tensor(fixed[idx])
        return embed(idx, training)

    def evaluate(idx):
        logits = features(idx, False) @ head["head.w"] + head["head.b"]
        logp = ad.log_softmax(logits).data
        loss = -float(np.mean(logp[np.arange(len(idx)), labels[idx]]))
        return _score(np.exp(logp), labels[idx], metric), loss

    train_idx = np.asarray(splits["train"])
    history, best = [], None
    for epoch in range(1, epochs + 1):
        order = rng.permutation(train_idx)
        total = 0.0
        for start in range(0, len(order), batch_size):
            chunk = order[start : start + batch_size]
            head_opt.zero_grad()
            if enc_opt:
                enc_opt.zero_grad()
            logits = features(chunk, True) @ head["head.w"] + head["head.b"]
            loss = softmax_cross_entropy(logits, labels[chunk])
            ad.backward(loss)
            head_opt.step()
            if enc_opt:
                enc_opt.step()
            total += loss.item() * len(chunk)
        v, v_loss = evaluate(splits["valid"])
        t, _ = evaluate(splits["test"])
        history.append(
            {"epoch": epoch, "loss": total / len(train_idx), "valid": v, "valid_loss": v_loss, "test": t}
        )
        if best is None or (v, -v_loss) > (best["valid"], -best["valid_loss"]):
            best = history[-1]
    return FinetuneResult(metric, best["valid"], best["test"], best["epoch"], history)
