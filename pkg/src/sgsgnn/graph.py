"""Undirected graph container, homophily measures, and directory I/O.

Edges are stored once in canonical form (u < v); the CSR adjacency holds
the symmetrized edge set so message passing sees both directions. A graph
directory is five files: edges.csv, features.csv, labels.csv, splits.csv
and meta.json (authoritative counts).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

SPLIT_TAGS = ("train", "val", "test")


@dataclass(frozen=True)
class Graph:
    num_nodes: int
    num_edges: int
    edge_u: np.ndarray  # canonical endpoints, u < v
    edge_v: np.ndarray
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    features: np.ndarray  # (num_nodes, F)
    labels: np.ndarray  # ints in [0, num_classes)
    split: np.ndarray  # per node: "train" | "val" | "test"
    num_classes: int
    meta: dict = field(default_factory=dict)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def degrees(self):
        return np.diff(self.csr_offsets)

    def mask(self, tag):
        if tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag: {tag!r}")
        return self.split == tag

    def neighbors(self, u):
        return self.csr_targets[self.csr_offsets[u] : self.csr_offsets[u + 1]]


def canonical_edges(pairs):
    """Dedup an iterable of (u, v) int pairs into sorted canonical form.

    Reversed duplicates collapse; self-loops raise.
    """
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size and np.any(arr[:, 0] == arr[:, 1]):
        bad = arr[arr[:, 0] == arr[:, 1]][0]
        raise ValueError(f"self-loop edge rejected: ({bad[0]},{bad[1]})")
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    if lo.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    order = np.lexsort((hi, lo))
    lo, hi = lo[order], hi[order]
    keep = np.ones(lo.size, dtype=bool)
    keep[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
    return lo[keep], hi[keep]


def build_csr(num_nodes, edge_u, edge_v):
    """Symmetrized CSR from the canonical edge list; targets sorted per row."""
    heads = np.concatenate([edge_u, edge_v])
    tails = np.concatenate([edge_v, edge_u])
    deg = np.bincount(heads, minlength=num_nodes)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(deg, out=offsets[1:])
    order = np.lexsort((tails, heads))
    targets = tails[order]
    return offsets, targets


def make_graph(num_nodes, edge_pairs, features, labels, split, num_classes, meta=None):
    """Validate raw arrays and assemble an immutable Graph."""
    edge_u, edge_v = canonical_edges(edge_pairs)
    if edge_u.size and (edge_u.min() < 0 or edge_v.max() >= num_nodes):
        raise ValueError("edge endpoint outside [0, num_nodes)")
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != num_nodes:
        raise ValueError(f"features rows {features.shape[0]} != num_nodes {num_nodes}")
    if not np.all(np.isfinite(features)):
        raise ValueError("non-finite feature value")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (num_nodes,):
        raise ValueError("labels must be one integer per node")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label outside [0, {num_classes})")
    split = np.asarray(split, dtype=object)
    if split.shape != (num_nodes,):
        raise ValueError("splits must be one tag per node")
    for tag in split:
        if tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag: {tag!r}")
    split = split.astype("U5")
    offsets, targets = build_csr(num_nodes, edge_u, edge_v)
    g = Graph(
        num_nodes=num_nodes,
        num_edges=int(edge_u.size),
        edge_u=edge_u,
        edge_v=edge_v,
        csr_offsets=offsets,
        csr_targets=targets,
        features=features,
        labels=labels,
        split=split,
        num_classes=int(num_classes),
        meta=dict(meta or {}),
    )
    for arr in (g.edge_u, g.edge_v, g.csr_offsets, g.csr_targets, g.features, g.labels, g.split):
        arr.setflags(write=False)
    return g


# ---------------------------------------------------------------------------
# homophily


def node_homophily(g):
    """Mean over non-isolated nodes of the same-label neighbor fraction."""
    deg = g.degrees()
    active = deg > 0
    if not np.any(active):
        return 0.0
    same = np.zeros(g.num_nodes)
    lab_u = g.labels[g.edge_u]
    lab_v = g.labels[g.edge_v]
    agree = lab_u == lab_v
    np.add.at(same, g.edge_u[agree], 1.0)
    np.add.at(same, g.edge_v[agree], 1.0)
    return float(np.mean(same[active] / deg[active]))


def edge_homophily(g):
    """Fraction of canonical edges whose endpoints share a label."""
    if g.num_edges == 0:
        raise ValueError("edge homophily undefined on an empty edge set")
    return float(np.mean(g.labels[g.edge_u] == g.labels[g.edge_v]))


def adjusted_homophily(g):
    """Chance-corrected edge homophily using degree mass per class.

    Returns 0 when the correction denominator vanishes (single class).
    """
    if g.num_edges == 0:
        raise ValueError("adjusted homophily undefined on an empty edge set")
    h_e = edge_homophily(g)
    deg = g.degrees().astype(np.float64)
    d_k = np.bincount(g.labels, weights=deg, minlength=g.num_classes)
    total = 2.0 * g.num_edges
    chance = float(np.sum((d_k / total) ** 2))
    denom = 1.0 - chance
    if abs(denom) < 1e-12:
        return 0.0
    return (h_e - chance) / denom


def subgraph_edge_homophily(g, edge_indices):
    """Edge homophily restricted to a subset of canonical edge indices."""
    idx = np.asarray(edge_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("edge homophily undefined on an empty subset")
    if idx.min() < 0 or idx.max() >= g.num_edges:
        raise ValueError("edge index out of range")
    return float(np.mean(g.labels[g.edge_u[idx]] == g.labels[g.edge_v[idx]]))


@dataclass(frozen=True)
class HomophilyReport:
    node_homophily: float
    edge_homophily: float
    adjusted_homophily: float
    is_heterophilic: bool

    def to_dict(self):
        return {
            "node_homophily": self.node_homophily,
            "edge_homophily": self.edge_homophily,
            "adjusted_homophily": self.adjusted_homophily,
            "is_heterophilic": self.is_heterophilic,
        }


def homophily_report(g):
    h_adj = adjusted_homophily(g)
    return HomophilyReport(
        node_homophily=node_homophily(g),
        edge_homophily=edge_homophily(g),
        adjusted_homophily=h_adj,
        is_heterophilic=h_adj <= 0.5,
    )


# ---------------------------------------------------------------------------
# directory I/O


def _require(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"missing graph file: {path}")
    return path


def load_graph(dir_path):
    """Read a graph directory (edges/features/labels/splits + meta.json)."""
    meta_path = _require(os.path.join(dir_path, "meta.json"))
    with open(meta_path, encoding="utf-8") as f:
        meta = json.load(f)
    num_nodes = int(meta["num_nodes"])
    num_classes = int(meta["num_classes"])
    feature_dim = int(meta["feature_dim"])

    edges_path = _require(os.path.join(dir_path, "edges.csv"))
    pairs = []
    with open(edges_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"{edges_path}:{lineno}: expected 'u,v'")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as e:
                raise ValueError(f"{edges_path}:{lineno}: non-integer node id") from e
            if u < 0 or v < 0 or u >= num_nodes or v >= num_nodes:
                raise ValueError(f"{edges_path}:{lineno}: node id outside [0,{num_nodes})")
            if u == v:
                raise ValueError(f"{edges_path}:{lineno}: self-loop edge rejected")
            pairs.append((u, v))

    feats_path = _require(os.path.join(dir_path, "features.csv"))
    features = np.loadtxt(feats_path, delimiter=",", dtype=np.float64, ndmin=2)
    if features.shape != (num_nodes, feature_dim):
        raise ValueError(
            f"features shape {features.shape} != ({num_nodes}, {feature_dim})"
        )
    if not np.all(np.isfinite(features)):
        raise ValueError("non-finite feature value in features.csv")

    labels_path = _require(os.path.join(dir_path, "labels.csv"))
    labels = np.loadtxt(labels_path, dtype=np.int64, ndmin=1)
    if labels.shape != (num_nodes,):
        raise ValueError(f"labels.csv has {labels.shape[0]} rows, expected {num_nodes}")

    splits_path = _require(os.path.join(dir_path, "splits.csv"))
    with open(splits_path, encoding="utf-8") as f:
        split = [line.strip() for line in f if line.strip()]
    if len(split) != num_nodes:
        raise ValueError(f"splits.csv has {len(split)} rows, expected {num_nodes}")

    extra = {k: v for k, v in meta.items() if k not in ("num_nodes", "num_classes", "feature_dim")}
    return make_graph(num_nodes, pairs, features, labels, split, num_classes, meta=extra)


def save_graph(g, dir_path):
    """Write a graph directory; inverse of load_graph (round-trips exactly)."""
    os.makedirs(dir_path, exist_ok=True)
    with open(os.path.join(dir_path, "edges.csv"), "w", encoding="utf-8", newline="\n") as f:
        for u, v in zip(g.edge_u, g.edge_v):
            f.write(f"{u},{v}\n")
    with open(os.path.join(dir_path, "features.csv"), "w", encoding="utf-8", newline="\n") as f:
        for row in g.features:
            f.write(",".join(repr(float(x)) for x in row) + "\n")
    with open(os.path.join(dir_path, "labels.csv"), "w", encoding="utf-8", newline="\n") as f:
        for y in g.labels:
            f.write(f"{y}\n")
    with open(os.path.join(dir_path, "splits.csv"), "w", encoding="utf-8", newline="\n") as f:
        for tag in g.split:
            f.write(f"{tag}\n")
    meta = {
        "num_nodes": g.num_nodes,
        "num_classes": g.num_classes,
        "feature_dim": g.feature_dim,
    }
    meta.update(g.meta)
    with open(os.path.join(dir_path, "meta.json"), "w", encoding="utf-8", newline="\n") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
