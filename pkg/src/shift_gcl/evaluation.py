"""Linear evaluation on frozen embeddings and ID/OOD metric computation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import tape as T
from ._optim import adam_update, init_optimizer
from .tape import Tape, Tensor


@dataclass(frozen=True)
class ProbeConfig:
    probe_epochs: int = 500
    probe_lr: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.probe_epochs < 0:
            raise ValueError("probe_epochs must be >= 0")
        if self.probe_lr <= 0:
            raise ValueError("probe_lr must be positive")


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_f1: float
    roc_auc: float | None = None


@dataclass(frozen=True)
class SplitMasks:
    train: np.ndarray
    id_val: np.ndarray
    id_test: np.ndarray
    ood_val: np.ndarray
    ood_test: np.ndarray

    NAMES = ("train", "id_val", "id_test", "ood_val", "ood_test")

    def __post_init__(self) -> None:
        masks = [np.asarray(getattr(self, n), dtype=bool) for n in self.NAMES]
        for name, m in zip(self.NAMES, masks):
            object.__setattr__(self, name, m)
            if m.shape != masks[0].shape or m.ndim != 1:
                raise ValueError("all masks must be 1-D with equal length")
        total = np.zeros(masks[0].shape, dtype=int)
        for m in masks:
            total += m
        if total.size and total.max() > 1:
            raise ValueError("split masks must be pairwise disjoint")
        # train emptiness is checked where training happens (linear_probe,
        # pretrain), so that validation-only environment graphs stay valid

    @classmethod
    def from_dict(cls, d: dict) -> "SplitMasks":
        missing = [n for n in cls.NAMES if n not in d]
        if missing:
            raise KeyError(f"masks missing keys: {missing}")
        return cls(**{n: np.asarray(d[n], dtype=bool) for n in cls.NAMES})


@dataclass
class ProbeClassifier:
    w: np.ndarray            # (d, k)
    b: np.ndarray            # (1, k)
    num_classes: int

    def logits(self, embeddings) -> np.ndarray:
        emb = embeddings.values if isinstance(embeddings, Tensor) else np.asarray(embeddings)
        return emb @ self.w + self.b

    def predict(self, embeddings) -> np.ndarray:
        return np.argmax(self.logits(embeddings), axis=1)


def _cross_entropy(logits: Tensor, onehot: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy, stable for arbitrarily large logits.

    Uses lse(x) = log(sum exp(x - c)) + c with c the detached per-row max;
    the shift is exact for any constant, so gradients are untouched.
    """
    m = logits.values.shape[0]
    c = logits.values.max(axis=1, keepdims=True)
    shifted = T.sub(logits, T.constant(np.broadcast_to(c, logits.shape).copy()))
    lse = T.add(T.log(T.row_sum(T.exp(shifted))), T.constant(c))
    fit = T.row_sum(T.elementwise_mul(logits, T.constant(onehot)))
    return T.scalar_mul(T.sum_all(T.sub(lse, fit)), 1.0 / m)


def linear_probe(embeddings, labels, train_mask, cfg: ProbeConfig) -> ProbeClassifier:
    """Train a one-layer softmax classifier on frozen embeddings."""
    emb = embeddings.values if isinstance(embeddings, Tensor) else np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    train_mask = np.asarray(train_mask, dtype=bool)
    idx = np.flatnonzero(train_mask)
    if idx.size == 0:
        raise ValueError("probe training split is empty")
    y = labels[idx]
    if np.unique(y).size < 2:
        raise ValueError("probe needs at least two classes in the training split")

    d = emb.shape[1]
    k = int(labels.max()) + 1
    rng = np.random.default_rng(cfg.seed)
    bound = np.sqrt(6.0 / (d + k))
    params = {"w": rng.uniform(-bound, bound, size=(d, k)), "b": np.zeros((1, k))}
    state = init_optimizer(params)

    x_tr = emb[idx]
    onehot = np.zeros((idx.size, k))
    onehot[np.arange(idx.size), y] = 1.0

    for _ in range(cfg.probe_epochs):
        tp = Tape()
        w = tp.leaf(params["w"])
        b = tp.leaf(params["b"])
        logits = T.add(T.matmul(T.constant(x_tr), w), b)
        loss = _cross_entropy(logits, onehot)
        grads = tp.backward(loss)
        params = adam_update(params, {"w": grads[w.node_id], "b": grads[b.node_id]},
                             state, cfg.probe_lr)
    return ProbeClassifier(w=params["w"], b=params["b"], num_classes=k)


def metric_suite(preds, scores, labels) -> Metrics:
    """Accuracy, macro-F1, and (for binary labels with scores) midrank AUC."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels must have equal length")

    accuracy = float(np.mean(preds == labels))

    classes = np.union1d(np.unique(labels), np.unique(preds))
    f1s = []
    for c in classes:
        tp = np.sum((preds == c) & (labels == c))
        fp = np.sum((preds == c) & (labels != c))
        fn = np.sum((preds != c) & (labels == c))
        denom = 2 * tp + fp + fn
        f1s.append(2.0 * tp / denom if denom > 0 else 0.0)
    macro_f1 = float(np.mean(f1s))

    roc_auc = None
    if scores is not None:
        scores = np.asarray(scores, dtype=np.float64)
        pos = labels == 1
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        if n_pos > 0 and n_neg > 0:
            ranks = rankdata(scores)
            u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
            roc_auc = float(u / (n_pos * n_neg))
    return Metrics(accuracy=accuracy, macro_f1=macro_f1, roc_auc=roc_auc)


def evaluate(classifier: ProbeClassifier, embeddings, labels,
             masks: SplitMasks) -> dict[str, Metrics]:
    """Per-split metrics from classifier logits; empty splits are omitted."""
    labels = np.asarray(labels, dtype=np.int64)
    logits = classifier.logits(embeddings)
    preds = np.argmax(logits, axis=1)
    scores = logits[:, 1] - logits[:, 0] if classifier.num_classes == 2 else None

    out = {}
    for name in ("id_val", "id_test", "ood_val", "ood_test"):
        m = getattr(masks, name)
        if not m.any():
            continue
        split_scores = scores[m] if scores is not None else None
        out[name] = metric_suite(preds[m], split_scores, labels[m])
    return out


def selection_metric(metrics: Metrics, num_classes: int) -> float:
    """Checkpoint-selection value: accuracy for multiclass, AUC for binary."""
    if num_classes == 2 and metrics.roc_auc is not None:
        return metrics.roc_auc
    return metrics.accuracy
