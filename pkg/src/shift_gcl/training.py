"""Bi-level optimization driver: per epoch, refresh prototypes by plain
gradient descent on the clustering loss, run the adversarial ascent inner
loop accumulating encoder/projector gradients, then take one Adam step.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from ._optim import OptimizerState, adam_update, init_optimizer
from .augment import ViewParams, sample_view
from .datasets import Dataset
from .encoders import (EncoderConfig, EncoderParams, ProjectorParams,
                       attach_params, encode, init_params, named_parameters,
                       project, set_parameters)
from .evaluation import ProbeConfig, evaluate, linear_probe, selection_metric
from .graphs import Graph
from .losses import (ObjectiveConfig, clustering_loss, cmi_loss, init_prototypes,
                     mi_loss, normalize_columns, pseudo_labels)
from .tape import Tape

VARIANTS = ("mario", "no_ad", "no_cmi", "grace")


class NumericalError(RuntimeError):
    """Training hit a non-finite loss or parameter; maps to CLI exit 3."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 0.01
    prototype_lr: float = 0.05
    prototype_steps: int = 10
    ascent_steps: int = 3
    ascent_step_size: float = 1e-3
    gamma: float = 0.1
    tau: float = 0.2
    num_prototypes: int = 100
    lambda_sinkhorn: float = 20.0
    sinkhorn_iters: int = 3
    view1: ViewParams = ViewParams(p_f=0.2, p_e=0.2)
    view2: ViewParams = ViewParams(p_f=0.3, p_e=0.3)
    seed: int = 0
    eval_every: int = 10

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0 or self.prototype_lr < 0:
            raise ValueError("lr must be positive and prototype_lr >= 0")
        if self.prototype_steps < 1:
            raise ValueError("prototype_steps must be >= 1")
        if self.ascent_steps < 1:
            raise ValueError("ascent_steps must be >= 1")
        if self.ascent_step_size < 0:
            raise ValueError("ascent_step_size must be >= 0")
        if self.num_prototypes < 1:
            raise ValueError("num_prototypes must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        # tau/gamma/lambda/iters ranges are re-checked by ObjectiveConfig
        self.objective()

    def objective(self) -> ObjectiveConfig:
        return ObjectiveConfig(tau=self.tau, gamma=self.gamma,
                               lambda_sinkhorn=self.lambda_sinkhorn,
                               sinkhorn_iters=self.sinkhorn_iters)


def apply_variant(config: TrainConfig, variant: str) -> TrainConfig:
    """Ablation aliases: no_ad freezes the perturbation, no_cmi drops the
    compression term, grace does both."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    out = config
    if variant in ("no_ad", "grace"):
        out = dataclasses.replace(out, ascent_step_size=0.0, ascent_steps=1)
    if variant in ("no_cmi", "grace"):
        out = dataclasses.replace(out, gamma=0.0)
    return out


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    prototypes: np.ndarray
    epoch: int
    rng_state: dict
    config_digest: str


@dataclass
class AscentResult:
    grads: dict[str, np.ndarray]   # (1/M)-weighted accumulation over ascent steps
    losses: list[dict]             # per step: {"mi", "cmi", "rob"}
    delta: np.ndarray


@dataclass
class PretrainResult:
    best_id: Checkpoint
    best_ood: Checkpoint
    log: list[dict]


def update_prototypes(z_a: np.ndarray, z_b: np.ndarray, c: np.ndarray,
                      cfg: TrainConfig) -> np.ndarray:
    """l plain gradient-descent steps on the clustering loss wrt C only,
    renormalizing columns after each step.  Z's must be detached values."""
    if cfg.prototype_lr == 0.0:
        return c
    obj = cfg.objective()
    z_a = np.asarray(z_a, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    for _ in range(cfg.prototype_steps):
        tp = Tape()
        c_leaf = tp.leaf(c)
        loss = clustering_loss(z_a, z_b, c_leaf, obj)
        grad = tp.backward(loss)[c_leaf.node_id]
        c = normalize_columns(c - cfg.prototype_lr * grad)
    return c


def adversarial_step(g_a: Graph, g_b: Graph, enc: EncoderParams, proj: ProjectorParams,
                     prototypes: np.ndarray, enc_cfg: EncoderConfig,
                     cfg: TrainConfig, rng: np.random.Generator) -> AscentResult:
    """Inner ascent loop: perturb view-alpha features, accumulate (1/M) of
    the parameter gradient per step, move delta by a fixed-norm ascent step.

    Pseudo-labels are recomputed each step from the current perturbed Z_a.
    A zero delta-gradient skips that step's delta update.
    """
    eps = cfg.ascent_step_size
    m_steps = cfg.ascent_steps
    delta = rng.uniform(-eps, eps, size=g_a.features.shape)
    accum: dict[str, np.ndarray] = {}
    losses = []

    for _ in range(m_steps):
        tp = Tape()
        enc_t, proj_t, leaves = attach_params(enc, proj, tp)
        d_leaf = tp.leaf(delta)
        x_pert = T.add(T.constant(g_a.features), d_leaf)
        z_a = project(encode(g_a, enc_t, enc_cfg, features=x_pert), proj_t)
        z_b = project(encode(g_b, enc_t, enc_cfg), proj_t)

        mi = mi_loss(z_a, z_b, cfg.tau)
        if cfg.gamma != 0.0:
            labels = pseudo_labels(z_a.values, prototypes)
            cmi = cmi_loss(z_a, z_b, labels, cfg.tau)
            rob = T.sub(mi, T.scalar_mul(cmi, cfg.gamma))
            cmi_val = cmi.item()
        else:
            rob = mi
            cmi_val = 0.0
        losses.append({"mi": mi.item(), "cmi": cmi_val, "rob": rob.item()})

        grads = tp.backward(rob)
        for name, leaf in leaves.items():
            g = grads[leaf.node_id] / m_steps
            accum[name] = accum.get(name, 0.0) + g

        gd = grads[d_leaf.node_id]
        norm = float(np.sqrt((gd * gd).sum()))
        if eps > 0.0 and norm > 0.0:
            delta = delta + eps * (gd / norm)
    return AscentResult(grads=accum, losses=losses, delta=delta)


def _check_finite(epoch: int, components: dict) -> None:
    bad = [k for k, v in components.items() if not math.isfinite(v)]
    if bad:
        detail = ", ".join(f"{k}={components[k]}" for k in components)
        raise NumericalError(f"non-finite loss at epoch {epoch} ({detail}); "
                             f"offending components: {bad}")


def pretrain(dataset: Dataset, config: TrainConfig,
             encoder_config: EncoderConfig | None = None,
             probe_config: ProbeConfig | None = None,
             config_digest: str = "") -> PretrainResult:
    """Full training loop; returns best-ID and best-OOD checkpoints plus a
    per-epoch log.  Deterministic given config.seed."""
    graph = dataset.graph
    if encoder_config is None:
        encoder_config = EncoderConfig(input_dim=graph.feature_dim)
    if probe_config is None:
        probe_config = ProbeConfig(seed=config.seed)
    if encoder_config.input_dim != graph.feature_dim:
        raise ValueError(f"encoder input_dim {encoder_config.input_dim} != "
                         f"feature dim {graph.feature_dim}")
    if not dataset.masks.train.any():
        raise ValueError("pretrain needs a non-empty train mask for probe evaluation")

    seq = np.random.SeedSequence(config.seed)
    s_params, s_proto, s_views, s_delta = seq.spawn(4)
    enc, proj = init_params(encoder_config, s_params)
    prototypes = init_prototypes(encoder_config.hidden_dim, config.num_prototypes, s_proto)
    rng_views = np.random.default_rng(s_views)
    rng_delta = np.random.default_rng(s_delta)

    params = dict(named_parameters(enc, proj))
    opt = init_optimizer(params)
    obj = config.objective()
    labels = dataset.labels
    masks = dataset.masks
    num_classes = dataset.num_classes

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(
            params={k: v.copy() for k, v in dict(named_parameters(enc, proj)).items()},
            prototypes=prototypes.copy(),
            epoch=epoch,
            rng_state={"views": rng_views.bit_generator.state,
                       "delta": rng_delta.bit_generator.state},
            config_digest=config_digest,
        )

    best_id, best_ood = snapshot(0), snapshot(0)
    best_id_metric = best_ood_metric = -math.inf
    log: list[dict] = []

    for epoch in range(1, config.epochs + 1):
        g_a = sample_view(graph, config.view1, rng_views)
        g_b = sample_view(graph, config.view2, rng_views)

        z_a0 = project(encode(g_a, enc, encoder_config), proj).values
        z_b0 = project(encode(g_b, enc, encoder_config), proj).values
        prototypes = update_prototypes(z_a0, z_b0, prototypes, config)
        loss_clu = clustering_loss(z_a0, z_b0, prototypes, obj).item()

        step = adversarial_step(g_a, g_b, enc, proj, prototypes,
                                encoder_config, config, rng_delta)
        last = step.losses[-1]
        record = {"epoch": epoch, "loss_mi": last["mi"], "loss_cmi": last["cmi"],
                  "loss_rob": last["rob"], "loss_clu": loss_clu}
        _check_finite(epoch, {k: record[k] for k in
                              ("loss_mi", "loss_cmi", "loss_rob", "loss_clu")})

        params = adam_update(dict(named_parameters(enc, proj)), step.grads, opt, config.lr)
        enc, proj = set_parameters(enc, proj, params)
        if any(not np.isfinite(v).all() for v in params.values()):
            raise NumericalError(f"non-finite parameter after epoch {epoch}")

        if epoch % config.eval_every == 0 or epoch == config.epochs:
            emb = encode(graph, enc, encoder_config).values
            clf = linear_probe(emb, labels, masks.train, probe_config)
            mets = evaluate(clf, emb, labels, masks)
            if "id_val" in mets:
                m = selection_metric(mets["id_val"], num_classes)
                record["id_val_metric"] = m
                if m > best_id_metric:
                    best_id_metric, best_id = m, snapshot(epoch)
            if "ood_val" in mets:
                m = selection_metric(mets["ood_val"], num_classes)
                record["ood_val_metric"] = m
                if m > best_ood_metric:
                    best_ood_metric, best_ood = m, snapshot(epoch)
        log.append(record)

    # datasets without a validation split fall back to the final state
    if config.epochs > 0:
        final = snapshot(config.epochs)
        if best_id_metric == -math.inf:
            best_id = final
        if best_ood_metric == -math.inf:
            best_ood = final
    return PretrainResult(best_id=best_id, best_ood=best_ood, log=log)


def checkpoint_model(ckpt: Checkpoint, enc_cfg: EncoderConfig) -> tuple[EncoderParams, ProjectorParams]:
    """Materialize parameter structures from a checkpoint's flat mapping."""
    template_enc, template_proj = init_params(enc_cfg, 0)
    return set_parameters(template_enc, template_proj, ckpt.params)
