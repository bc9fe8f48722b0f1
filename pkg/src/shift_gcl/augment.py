"""Stochastic view generation: edge dropping and feature-column masking.

Pure functions of (graph, params, rng).  The rng is a numpy Generator;
identical seed and call sequence give identical views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import Graph

Rng = np.random.Generator


@dataclass(frozen=True)
class ViewParams:
    p_f: float = 0.2
    p_e: float = 0.2

    def __post_init__(self) -> None:
        for name, p in (("p_f", self.p_f), ("p_e", self.p_e)):
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {p}")


def drop_edges(g: Graph, p_e: float, rng: Rng) -> Graph:
    """Remove each stored undirected edge independently with probability p_e."""
    if not 0.0 <= p_e < 1.0:
        raise ValueError(f"p_e must lie in [0, 1), got {p_e}")
    if p_e == 0.0 or g.num_edges == 0:
        return Graph(n=g.n, edges=g.edges, features=g.features)
    keep = rng.random(g.num_edges) >= p_e
    return Graph(n=g.n, edges=g.edges[keep], features=g.features)


def mask_features(g: Graph, p_f: float, rng: Rng) -> Graph:
    """Zero whole feature columns, each kept with probability 1 - p_f."""
    if not 0.0 <= p_f < 1.0:
        raise ValueError(f"p_f must lie in [0, 1), got {p_f}")
    if p_f == 0.0:
        return Graph(n=g.n, edges=g.edges, features=g.features)
    keep = rng.random(g.feature_dim) >= p_f
    return Graph(n=g.n, edges=g.edges, features=g.features * keep[None, :])


def sample_view(g: Graph, vp: ViewParams, rng: Rng) -> Graph:
    """Compose drop_edges then mask_features with one view's probabilities."""
    return mask_features(drop_edges(g, vp.p_e, rng), vp.p_f, rng)
