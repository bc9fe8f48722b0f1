"""GNN encoder g and projector p producing node embeddings for contrasting.

Parameters live as plain float64 arrays at rest; a training step attaches
them to a tape as leaves.  ``encode`` and ``project`` accept either form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .graphs import Graph, mean_neighbor_matrix, normalized_adjacency, spmm
from .tape import ShapeError, Tape, Tensor

KINDS = ("gcn", "sage-mean")


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "gcn"
    num_layers: int = 2
    input_dim: int = 4
    hidden_dim: int = 32

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"encoder kind must be one of {KINDS}, got {self.kind!r}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.input_dim <= 0 or self.hidden_dim <= 0:
            raise ValueError("input_dim and hidden_dim must be positive")


@dataclass
class EncoderParams:
    weights: list                      # per-layer weight (gcn: the only one; sage: self)
    neighbor_weights: list | None = None   # sage-mean only


@dataclass
class ProjectorParams:
    w1: object
    w2: object


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(config: EncoderConfig, seed: int) -> tuple[EncoderParams, ProjectorParams]:
    """Glorot-uniform initialization, deterministic given seed."""
    rng = np.random.default_rng(seed)
    dims = [config.input_dim] + [config.hidden_dim] * config.num_layers
    weights, nbr = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(_glorot(rng, fan_in, fan_out))
        if config.kind == "sage-mean":
            nbr.append(_glorot(rng, fan_in, fan_out))
    enc = EncoderParams(weights=weights,
                        neighbor_weights=nbr if config.kind == "sage-mean" else None)
    proj = ProjectorParams(w1=_glorot(rng, config.hidden_dim, config.hidden_dim),
                           w2=_glorot(rng, config.hidden_dim, config.hidden_dim))
    return enc, proj


def encode(g: Graph, params: EncoderParams, config: EncoderConfig,
           features=None) -> Tensor:
    """Multi-layer propagation; relu between layers, final layer linear.

    ``features`` overrides ``g.features`` (used for perturbed passes); it may
    be a tape-attached tensor so gradients can flow back into the input.
    """
    h = features if features is not None else T.constant(g.features)
    if not isinstance(h, Tensor):
        h = T.constant(h)
    if h.shape[1] != config.input_dim:
        raise ShapeError("encode", (h.shape, ("n", config.input_dim)))
    if h.shape[0] != g.n:
        raise ShapeError("encode", (h.shape, (g.n, "d")))

    last = config.num_layers - 1
    if config.kind == "gcn":
        adj = normalized_adjacency(g)
        for l, w in enumerate(params.weights):
            h = T.matmul(spmm(adj, h), w)
            if l < last:
                h = T.relu(h)
    else:
        mean_nbr = mean_neighbor_matrix(g)
        for l, (w_self, w_nbr) in enumerate(zip(params.weights, params.neighbor_weights)):
            h = T.add(T.matmul(h, w_self), T.matmul(spmm(mean_nbr, h), w_nbr))
            if l < last:
                h = T.relu(h)
    return h


def project(h, params: ProjectorParams) -> Tensor:
    """Z = relu(h W1) W2, rows scaled onto the unit sphere."""
    z = T.matmul(T.relu(T.matmul(h, params.w1)), params.w2)
    return T.row_l2_normalize(z)


def named_parameters(enc: EncoderParams, proj: ProjectorParams) -> list[tuple[str, object]]:
    """Stable (name, array) ordering shared by the optimizer and checkpoints."""
    out = []
    for l, w in enumerate(enc.weights):
        if enc.neighbor_weights is not None:
            out.append((f"enc.{l}.w_self", w))
            out.append((f"enc.{l}.w_nbr", enc.neighbor_weights[l]))
        else:
            out.append((f"enc.{l}.w", w))
    out.append(("proj.w1", proj.w1))
    out.append(("proj.w2", proj.w2))
    return out


def set_parameters(enc: EncoderParams, proj: ProjectorParams,
                   mapping: dict) -> tuple[EncoderParams, ProjectorParams]:
    """Rebuild parameter structures from a flat name -> array mapping."""
    weights = []
    nbr = [] if enc.neighbor_weights is not None else None
    for l in range(len(enc.weights)):
        if nbr is not None:
            weights.append(mapping[f"enc.{l}.w_self"])
            nbr.append(mapping[f"enc.{l}.w_nbr"])
        else:
            weights.append(mapping[f"enc.{l}.w"])
    return (EncoderParams(weights=weights, neighbor_weights=nbr),
            ProjectorParams(w1=mapping["proj.w1"], w2=mapping["proj.w2"]))


def attach_params(enc: EncoderParams, proj: ProjectorParams,
                  tp: Tape) -> tuple[EncoderParams, ProjectorParams, dict[str, Tensor]]:
    """Leaf-attach every parameter array to a tape for one training step."""
    leaves: dict[str, Tensor] = {}

    def _leaf(name: str, arr) -> Tensor:
        t = tp.leaf(arr)
        leaves[name] = t
        return t

    weights = []
    nbr = [] if enc.neighbor_weights is not None else None
    for l, w in enumerate(enc.weights):
        if nbr is not None:
            weights.append(_leaf(f"enc.{l}.w_self", w))
            nbr.append(_leaf(f"enc.{l}.w_nbr", enc.neighbor_weights[l]))
        else:
            weights.append(_leaf(f"enc.{l}.w", w))
    enc_t = EncoderParams(weights=weights, neighbor_weights=nbr)
    proj_t = ProjectorParams(w1=_leaf("proj.w1", proj.w1), w2=_leaf("proj.w2", proj.w2))
    return enc_t, proj_t, leaves
