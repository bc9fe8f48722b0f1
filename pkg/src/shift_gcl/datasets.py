"""Synthetic distribution-shift dataset generators at desk scale, plus
lossless JSON load/save.

Two families: a scale-free base graph with attached 5-node house motifs
whose "color" features carry a tunable spurious correlation, and a
multi-environment generator whose labels depend on invariant features
while a per-environment random GNN emits spurious ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .evaluation import SplitMasks
from .graphs import Graph, build_graph, normalized_adjacency

CLASS_BASE, CLASS_TOP, CLASS_MIDDLE, CLASS_BOTTOM = 0, 1, 2, 3
CBAS_CLASS_NAMES = ("base", "top", "middle", "bottom")

SHIFT_KINDS = ("concept", "covariate")

# split fractions over shuffled nodes: train, id_val, id_test, ood_val, ood_test
_SPLIT_FRACTIONS = (0.4, 0.1, 0.2, 0.1, 0.2)


@dataclass(frozen=True)
class Dataset:
    graph: Graph
    labels: np.ndarray
    masks: SplitMasks
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.shape != (self.graph.n,):
            raise ValueError(f"labels must have shape ({self.graph.n},), got {lab.shape}")
        object.__setattr__(self, "labels", lab)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class CbasParams:
    base_nodes: int = 300
    num_houses: int = 80
    shift_kind: str = "concept"
    spurious_strength: float = 0.9
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.base_nodes < 3:
            raise ValueError("base_nodes must be >= 3")
        if self.num_houses < 0:
            raise ValueError("num_houses must be >= 0")
        if self.shift_kind not in SHIFT_KINDS:
            raise ValueError(f"shift_kind must be one of {SHIFT_KINDS}")
        if not 0.0 <= self.spurious_strength <= 1.0:
            raise ValueError("spurious_strength must lie in [0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


@dataclass(frozen=True)
class SpuriousParams:
    n_nodes: int = 400
    d1: int = 8
    d2: int = 8
    num_envs: int = 10
    num_classes: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.n_nodes, self.d1, self.d2) <= 0:
            raise ValueError("n_nodes, d1, d2 must be positive")
        if self.num_envs < 3:
            raise ValueError("num_envs must be >= 3 (train, val, and OOD envs)")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")


def _barabasi_albert_edges(n: int, m: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Preferential attachment via the repeated-endpoint list trick."""
    edges: list[tuple[int, int]] = []
    targets = list(range(m))
    repeated: list[int] = []
    for v in range(m, n):
        edges.extend((v, t) for t in targets)
        repeated.extend(targets)
        repeated.extend([v] * m)
        chosen: set[int] = set()
        while len(chosen) < m:
            chosen.add(repeated[int(rng.integers(len(repeated)))])
        targets = sorted(chosen)
    return edges


def _split_masks(n: int, rng: np.random.Generator) -> SplitMasks:
    order = rng.permutation(n)
    bounds = np.cumsum(np.array(_SPLIT_FRACTIONS) * n).astype(int)
    parts = np.split(order, bounds[:-1])
    masks = {}
    for name, part in zip(SplitMasks.NAMES, parts):
        m = np.zeros(n, dtype=bool)
        m[part] = True
        masks[name] = m
    return SplitMasks(**masks)


def generate_cbas(p: CbasParams) -> Dataset:
    """Scale-free base plus house motifs with label-correlated colors.

    Concept shift: node colors follow the label with probability rho on
    train/ID nodes and are uniform-random on OOD nodes.  Covariate shift:
    the color-label correlation is rho everywhere, but OOD nodes use the
    negated color palette, disjoint from the ID one.
    """
    rng = np.random.default_rng(p.seed)
    n = p.base_nodes + 5 * p.num_houses

    edges = _barabasi_albert_edges(p.base_nodes, 2, rng)
    labels = np.full(n, CLASS_BASE, dtype=np.int64)
    for h in range(p.num_houses):
        s = p.base_nodes + 5 * h
        m0, m1, b2, b3, top = s, s + 1, s + 2, s + 3, s + 4
        edges.extend([(m0, m1), (m1, b2), (b2, b3), (b3, m0), (top, m0), (top, m1)])
        edges.append((m0, int(rng.integers(p.base_nodes))))
        labels[[m0, m1]] = CLASS_MIDDLE
        labels[[b2, b3]] = CLASS_BOTTOM
        labels[top] = CLASS_TOP

    masks = _split_masks(n, rng)
    ood = masks.ood_val | masks.ood_test

    rho = p.spurious_strength
    follows = rng.random(n) < rho
    random_color = rng.integers(0, 4, size=n)
    color = np.where(follows, labels, random_color)
    if p.shift_kind == "concept":
        # OOD colors carry no label information at all
        color = np.where(ood, rng.integers(0, 4, size=n), color)
        palette = np.ones(n)
    else:
        palette = np.where(ood, -1.0, 1.0)

    feats = np.zeros((n, 4))
    feats[np.arange(n), color] = palette
    feats += rng.normal(0.0, p.noise_std, size=(n, 4))

    graph = build_graph(n, edges, feats)
    meta = {
        "name": "cbas",
        "shift_kind": p.shift_kind,
        "spurious_strength": p.spurious_strength,
        "noise_std": p.noise_std,
        "seed": p.seed,
        "base_nodes": p.base_nodes,
        "num_houses": p.num_houses,
        "class_names": list(CBAS_CLASS_NAMES),
    }
    return Dataset(graph=graph, labels=labels, masks=masks, meta=meta)


def _er_edges(n: int, mean_degree: float, rng: np.random.Generator) -> np.ndarray:
    prob = mean_degree / (n - 1)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < prob
    return np.stack([iu[keep], ju[keep]], axis=1)


def _role_masks(n: int, role: str) -> SplitMasks:
    masks = {name: np.zeros(n, dtype=bool) for name in SplitMasks.NAMES}
    masks[role] = np.ones(n, dtype=bool)
    return SplitMasks(**masks)


def generate_spurious(p: SpuriousParams) -> list[tuple[int, Dataset]]:
    """Shared random graph; labels from invariant features X1; per-env
    spurious features X2 from a fresh random GNN fed [onehot(Y) | env id].

    Environment 0 is the training graph, environment 1 the validation
    graph, environments 2..num_envs-1 are OOD test graphs.
    """
    rng = np.random.default_rng(p.seed)
    n = p.n_nodes
    edges = _er_edges(n, 10.0, rng)
    x1 = rng.normal(size=(n, p.d1))
    adj = normalized_adjacency(build_graph(n, edges, x1)).matrix

    labels = None
    for _ in range(100):
        w = rng.normal(size=(p.d1, p.num_classes))
        cand = np.argmax(np.asarray(adj @ (x1 @ w)), axis=1)
        if np.unique(cand).size == p.num_classes:
            labels = cand.astype(np.int64)
            break
    if labels is None:
        raise RuntimeError("labeling GNN degenerate after 100 retries: some class never appears")

    onehot = np.zeros((n, p.num_classes))
    onehot[np.arange(n), labels] = 1.0

    out = []
    for env in range(p.num_envs):
        w_env = rng.normal(size=(p.num_classes + 1, p.d2))
        inp = np.hstack([onehot, np.full((n, 1), float(env))])
        x2 = np.asarray(adj @ (inp @ w_env))
        feats = np.hstack([x1, x2])
        role = "train" if env == 0 else ("id_val" if env == 1 else "ood_test")
        meta = {
            "name": "spurious",
            "env": env,
            "role": role,
            "seed": p.seed,
            "d1": p.d1,
            "d2": p.d2,
            "num_classes": p.num_classes,
            "num_envs": p.num_envs,
        }
        ds = Dataset(graph=build_graph(n, edges, feats), labels=labels,
                     masks=_role_masks(n, role), meta=meta)
        out.append((env, ds))
    return out


def save_dataset(d: Dataset, path) -> None:
    payload = {
        "n": d.graph.n,
        "edges": d.graph.edges.tolist(),
        "features": d.graph.features.tolist(),
        "labels": d.labels.tolist(),
        "masks": {name: getattr(d.masks, name).tolist() for name in SplitMasks.NAMES},
        "meta": d.meta,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)

    for key in ("n", "edges", "features", "labels", "masks"):
        if key not in payload:
            raise ValueError(f"dataset file missing key {key!r}")
    n = payload["n"]
    if not isinstance(n, int) or n <= 0:
        raise ValueError(f"dataset node count must be a positive integer, got {n!r}")

    graph = build_graph(n, payload["edges"], np.asarray(payload["features"], dtype=np.float64))
    labels = np.asarray(payload["labels"], dtype=np.int64)
    masks = SplitMasks.from_dict(payload["masks"])
    return Dataset(graph=graph, labels=labels, masks=masks, meta=payload.get("meta", {}))
