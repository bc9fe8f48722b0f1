"""Shift-robust graph contrastive learning on a small tape-based autodiff core.

The package pretrains a GNN encoder with an adversarially augmented
contrastive objective, compresses environment-specific information through
online prototype clustering, and evaluates the frozen embeddings with a
linear probe on in-distribution and shifted splits.
"""

from .augment import ViewParams, drop_edges, mask_features, sample_view
from .datasets import (CbasParams, Dataset, SpuriousParams, generate_cbas,
                       generate_spurious, load_dataset, save_dataset)
from .encoders import (EncoderConfig, EncoderParams, ProjectorParams, encode,
                       init_params, project)
from .estimator import ContrastiveEncoder, LinearProbeClassifier
from .evaluation import (Metrics, ProbeConfig, SplitMasks, evaluate,
                         linear_probe, metric_suite, selection_metric)
from .graphs import (Graph, NormalizedAdjacency, build_graph,
                     mean_neighbor_matrix, normalized_adjacency, spmm)
from .losses import (ObjectiveConfig, clustering_loss, cmi_loss,
                     init_prototypes, mi_loss, prototype_scores,
                     pseudo_labels, robust_loss, sinkhorn)
from .tape import (DomainError, ShapeError, Tape, TapeError, Tensor, constant,
                   finite_diff_check, register_op)
from .theory import CaseResult, appendix_case
from .training import (VARIANTS, Checkpoint, NumericalError, PretrainResult,
                       TrainConfig, adversarial_step, apply_variant,
                       checkpoint_model, pretrain, update_prototypes)

__version__ = "0.1.0"

__all__ = [
    "CaseResult", "CbasParams", "Checkpoint", "ContrastiveEncoder", "Dataset",
    "DomainError", "EncoderConfig", "EncoderParams", "Graph",
    "LinearProbeClassifier", "Metrics", "NormalizedAdjacency",
    "NumericalError", "ObjectiveConfig", "PretrainResult", "ProbeConfig",
    "ProjectorParams", "ShapeError", "SplitMasks", "SpuriousParams", "Tape",
    "TapeError", "Tensor", "TrainConfig", "VARIANTS", "ViewParams",
    "adversarial_step", "appendix_case", "apply_variant", "build_graph",
    "checkpoint_model", "clustering_loss", "cmi_loss", "constant",
    "drop_edges", "encode", "evaluate", "finite_diff_check", "generate_cbas",
    "generate_spurious", "init_params", "init_prototypes", "linear_probe",
    "load_dataset", "mask_features", "mean_neighbor_matrix", "metric_suite",
    "mi_loss", "normalized_adjacency", "pretrain", "project",
    "prototype_scores", "pseudo_labels", "register_op", "robust_loss",
    "sample_view", "save_dataset", "selection_metric", "sinkhorn", "spmm",
    "update_prototypes",
]
