"""Estimator-style wrappers so the pipeline composes with the usual
fit/transform/predict ecosystem.

``ContrastiveEncoder.fit`` runs self-supervised pretraining on a Dataset;
``transform`` maps a Dataset or Graph to frozen node embeddings.
``LinearProbeClassifier`` is the matching supervised head for embeddings.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .augment import ViewParams
from .datasets import Dataset
from .encoders import EncoderConfig, encode
from .evaluation import ProbeConfig, linear_probe
from .graphs import Graph
from .training import TrainConfig, apply_variant, checkpoint_model, pretrain


def _as_graph(x) -> Graph:
    if isinstance(x, Dataset):
        return x.graph
    if isinstance(x, Graph):
        return x
    raise TypeError(f"expected a Dataset or Graph, got {type(x).__name__}")


class ContrastiveEncoder(BaseEstimator, TransformerMixin):
    """Self-supervised node-embedding learner with ablation variants.

    Parameters mirror the training configuration; ``variant`` selects one
    of {mario, no_ad, no_cmi, grace}.  ``checkpoint`` picks which retained
    checkpoint transform uses ("id" or "ood").
    """

    def __init__(self, epochs=100, lr=0.01, prototype_lr=0.05, prototype_steps=10,
                 ascent_steps=3, ascent_step_size=1e-3, gamma=0.1, tau=0.2,
                 num_prototypes=100, lambda_sinkhorn=20.0, sinkhorn_iters=3,
                 p_f1=0.2, p_e1=0.2, p_f2=0.3, p_e2=0.3, seed=0, eval_every=10,
                 encoder_kind="gcn", num_layers=2, hidden_dim=32,
                 probe_epochs=500, probe_lr=0.05, variant="mario", checkpoint="id"):
        self.epochs = epochs
        self.lr = lr
        self.prototype_lr = prototype_lr
        self.prototype_steps = prototype_steps
        self.ascent_steps = ascent_steps
        self.ascent_step_size = ascent_step_size
        self.gamma = gamma
        self.tau = tau
        self.num_prototypes = num_prototypes
        self.lambda_sinkhorn = lambda_sinkhorn
        self.sinkhorn_iters = sinkhorn_iters
        self.p_f1 = p_f1
        self.p_e1 = p_e1
        self.p_f2 = p_f2
        self.p_e2 = p_e2
        self.seed = seed
        self.eval_every = eval_every
        self.encoder_kind = encoder_kind
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.probe_epochs = probe_epochs
        self.probe_lr = probe_lr
        self.variant = variant
        self.checkpoint = checkpoint

    def _configs(self, input_dim: int) -> tuple[TrainConfig, EncoderConfig, ProbeConfig]:
        train = TrainConfig(
            epochs=self.epochs, lr=self.lr, prototype_lr=self.prototype_lr,
            prototype_steps=self.prototype_steps, ascent_steps=self.ascent_steps,
            ascent_step_size=self.ascent_step_size, gamma=self.gamma, tau=self.tau,
            num_prototypes=self.num_prototypes, lambda_sinkhorn=self.lambda_sinkhorn,
            sinkhorn_iters=self.sinkhorn_iters,
            view1=ViewParams(p_f=self.p_f1, p_e=self.p_e1),
            view2=ViewParams(p_f=self.p_f2, p_e=self.p_e2),
            seed=self.seed, eval_every=self.eval_every,
        )
        train = apply_variant(train, self.variant)
        enc = EncoderConfig(kind=self.encoder_kind, num_layers=self.num_layers,
                            input_dim=input_dim, hidden_dim=self.hidden_dim)
        probe = ProbeConfig(probe_epochs=self.probe_epochs, probe_lr=self.probe_lr,
                            seed=self.seed)
        return train, enc, probe

    def fit(self, X: Dataset, y=None) -> "ContrastiveEncoder":
        if not isinstance(X, Dataset):
            raise TypeError(f"fit expects a Dataset, got {type(X).__name__}")
        train, enc_cfg, probe = self._configs(X.graph.feature_dim)
        result = pretrain(X, train, encoder_config=enc_cfg, probe_config=probe)
        self.encoder_config_ = enc_cfg
        self.result_ = result
        self.log_ = result.log
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "result_"):
            raise NotFittedError("ContrastiveEncoder is not fitted yet; call fit first")
        if self.checkpoint not in ("id", "ood"):
            raise ValueError("checkpoint must be 'id' or 'ood'")
        ckpt = self.result_.best_id if self.checkpoint == "id" else self.result_.best_ood
        enc, _ = checkpoint_model(ckpt, self.encoder_config_)
        return encode(_as_graph(X), enc, self.encoder_config_).values


class LinearProbeClassifier(BaseEstimator, ClassifierMixin):
    """One-layer softmax classifier over frozen embeddings."""

    def __init__(self, probe_epochs=500, probe_lr=0.05, seed=0):
        self.probe_epochs = probe_epochs
        self.probe_lr = probe_lr
        self.seed = seed

    def fit(self, X, y) -> "LinearProbeClassifier":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError("y must be 1-D with one label per row of X")
        cfg = ProbeConfig(probe_epochs=self.probe_epochs, probe_lr=self.probe_lr,
                          seed=self.seed)
        self.probe_ = linear_probe(X, y, np.ones(len(y), dtype=bool), cfg)
        self.classes_ = np.arange(self.probe_.num_classes)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "probe_"):
            raise NotFittedError("LinearProbeClassifier is not fitted yet; call fit first")

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        return self.probe_.logits(np.asarray(X, dtype=np.float64))

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)
