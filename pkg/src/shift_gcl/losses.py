"""Objectives: contrastive MI loss, prototype clustering with balanced-
assignment codes, pseudo-labels, the label-conditioned (CMI) loss, and the
combined robust loss.

Per-anchor terms are written as log(denominator) - log(positive), so an
anchor with no negatives contributes exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .tape import Tensor


@dataclass(frozen=True)
class ObjectiveConfig:
    tau: float = 0.2
    gamma: float = 0.1
    lambda_sinkhorn: float = 20.0
    sinkhorn_iters: int = 3

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.lambda_sinkhorn <= 0:
            raise ValueError(f"lambda_sinkhorn must be positive, got {self.lambda_sinkhorn}")
        if self.sinkhorn_iters < 1:
            raise ValueError(f"sinkhorn_iters must be >= 1, got {self.sinkhorn_iters}")


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def init_prototypes(dim: int, num_prototypes: int, seed: int) -> np.ndarray:
    """Random d x K prototype matrix with unit-norm columns."""
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(dim, num_prototypes))
    return normalize_columns(c)


def normalize_columns(c: np.ndarray) -> np.ndarray:
    norms = np.sqrt((c * c).sum(axis=0, keepdims=True))
    return c / np.where(norms == 0.0, 1.0, norms)


def _nce(u, v, tau: float, neg_mask: np.ndarray) -> Tensor:
    """Two-view InfoNCE with an explicit n x n negative-selection mask.

    neg_mask[i, k] = 1 admits k as a negative for anchor i, in both the
    inter-view and intra-view sums.  The positive is always the aligned
    pair (i, i).
    """
    n = _values(u).shape[0]
    inv_tau = 1.0 / tau
    e_uv = T.exp(T.scalar_mul(T.matmul(u, T.transpose(v)), inv_tau))
    e_uu = T.exp(T.scalar_mul(T.matmul(u, T.transpose(u)), inv_tau))
    e_vv = T.exp(T.scalar_mul(T.matmul(v, T.transpose(v)), inv_tau))

    eye = T.constant(np.eye(n))
    mask = T.constant(np.asarray(neg_mask, dtype=np.float64))

    pos = T.row_sum(T.elementwise_mul(e_uv, eye))
    neg_u = T.add(T.row_sum(T.elementwise_mul(e_uv, mask)),
                  T.row_sum(T.elementwise_mul(e_uu, mask)))
    neg_v = T.add(T.row_sum(T.elementwise_mul(T.transpose(e_uv), mask)),
                  T.row_sum(T.elementwise_mul(e_vv, mask)))
    log_pos = T.log(pos)
    loss_u = T.sub(T.log(T.add(pos, neg_u)), log_pos)
    loss_v = T.sub(T.log(T.add(pos, neg_v)), log_pos)
    total = T.add(T.sum_all(loss_u), T.sum_all(loss_v))
    return T.scalar_mul(total, 0.5 / n)


def mi_loss(u, v, tau: float) -> Tensor:
    """Node-node contrastive loss with all other nodes as negatives."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    n = _values(u).shape[0]
    neg_mask = 1.0 - np.eye(n)
    return _nce(u, v, tau, neg_mask)


def cmi_loss(u, v, labels, tau: float) -> Tensor:
    """Contrastive loss with negatives restricted to same-pseudo-label nodes."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    lab = np.asarray(labels, dtype=np.int64)
    n = _values(u).shape[0]
    if lab.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {lab.shape}")
    same = (lab[:, None] == lab[None, :]).astype(np.float64)
    neg_mask = same * (1.0 - np.eye(n))
    return _nce(u, v, tau, neg_mask)


def robust_loss(u, v, prototypes, labels, cfg: ObjectiveConfig) -> Tensor:
    """mi_loss - gamma * cmi_loss; labels default to pseudo_labels(u, C).

    With gamma = 0 the CMI term is skipped entirely, so the result is
    bit-identical to mi_loss.
    """
    mi = mi_loss(u, v, cfg.tau)
    if cfg.gamma == 0.0:
        return mi
    if labels is None:
        labels = pseudo_labels(u, prototypes)
    return T.sub(mi, T.scalar_mul(cmi_loss(u, v, labels, cfg.tau), cfg.gamma))


def prototype_scores(z, c) -> Tensor:
    """Row-softmax of Z C: per-node distribution over the K prototypes."""
    return T.row_softmax(T.matmul(z, c))


def pseudo_labels(u, c) -> np.ndarray:
    """Per-node argmax of U C; ties resolved to the lowest cluster index."""
    scores = _values(u) @ _values(c)
    return np.argmax(scores, axis=1).astype(np.int64)


def sinkhorn(scores, lam: float, iters: int) -> Tensor:
    """Balanced assignment codes: rows converge to 1/n, columns to 1/K.

    Starting from exp(lambda * scores) (shifted by the matrix max so exp
    cannot overflow), alternately rescale columns to sum 1/K and rows to
    sum 1/n.  The result is detached from any tape.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    vals = _values(scores)
    n, k = vals.shape
    a = lam * vals
    m = np.exp(a - a.max())
    for _ in range(iters):
        m = m / (m.sum(axis=0, keepdims=True) * k)
        m = m / (m.sum(axis=1, keepdims=True) * n)
    return Tensor(m)


def clustering_loss(z_a, z_b, c, cfg: ObjectiveConfig, codes=None) -> Tensor:
    """Swapped-prediction loss between prototype scores and balanced codes.

    Codes are computed from detached scores and row-scaled by n so each
    node's target is a distribution over clusters; gradient flows only
    through the softmax predictions (into the Z's and C).  ``codes`` lets
    callers (mainly tests) supply the two target matrices directly.
    """
    za, zb, cv = _values(z_a), _values(z_b), _values(c)
    n = za.shape[0]
    p_a = prototype_scores(z_a, c)
    p_b = prototype_scores(z_b, c)
    if codes is None:
        q_a = n * sinkhorn(za @ cv, cfg.lambda_sinkhorn, cfg.sinkhorn_iters).values
        q_b = n * sinkhorn(zb @ cv, cfg.lambda_sinkhorn, cfg.sinkhorn_iters).values
    else:
        q_a, q_b = (_values(q) for q in codes)
    ce_ab = T.sum_all(T.elementwise_mul(T.constant(q_b), T.log(p_a)))
    ce_ba = T.sum_all(T.elementwise_mul(T.constant(q_a), T.log(p_b)))
    return T.scalar_mul(T.add(ce_ab, ce_ba), -1.0 / n)
