"""Synthetic graph generators with controllable homophily.

Two constructions: a degree-regular generator where each node wires a fixed
share of its edges to same-label partners, and a two-moons point cloud wired
by intra-moon k-NN plus random cross-moon bridge edges.
"""

from __future__ import annotations

import numpy as np

from .graph import make_graph

DEFAULT_SPLIT_FRACTIONS = (0.2, 0.4, 0.4)
MOON_SPLIT_FRACTIONS = (0.3, 0.2, 0.5)


def balanced_labels(n_nodes, num_classes):
    """Round-robin label vector with near-equal class counts."""
    return np.arange(n_nodes, dtype=np.int64) % num_classes


def random_split(n_nodes, fractions, rng):
    """Assign train/val/test tags by a seeded permutation."""
    f_train, f_val, f_test = fractions
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n_train = int(round(f_train * n_nodes))
    n_val = int(round(f_val * n_nodes))
    perm = rng.permutation(n_nodes)
    split = np.empty(n_nodes, dtype=object)
    split[perm[:n_train]] = "train"
    split[perm[n_train : n_train + n_val]] = "val"
    split[perm[n_train + n_val :]] = "test"
    return split


def class_cluster_features(labels, num_classes, feature_dim, rng):
    """Unit-variance Gaussians centered on one-hot class directions."""
    if feature_dim < num_classes:
        raise ValueError(
            f"feature_dim {feature_dim} < num_classes {num_classes}; "
            "one-hot class means need one axis per class"
        )
    means = np.zeros((num_classes, feature_dim))
    means[np.arange(num_classes), np.arange(num_classes)] = 1.0
    return means[labels] + rng.standard_normal((labels.size, feature_dim))


def gen_homophily_controlled(
    base_labels,
    degree,
    target_h,
    feature_dim,
    seed,
    split_fractions=DEFAULT_SPLIT_FRACTIONS,
):
    """Wire each node to ceil(d*target_h) same-label partners, rest arbitrary.

    Duplicate and self-loop draws are resampled, so every node initiates
    exactly `degree` distinct edges. Realized edge homophily lands near
    target_h + (1 - target_h)/num_classes since arbitrary draws can also
    hit the node's own class.
    """
    labels = np.asarray(base_labels, dtype=np.int64)
    n = labels.size
    num_classes = int(labels.max()) + 1 if n else 0
    if not 0.0 <= target_h <= 1.0:
        raise ValueError(f"target_h must lie in [0,1], got {target_h}")
    counts = np.bincount(labels, minlength=num_classes)
    if counts.min() < degree + 1:
        k = int(np.argmin(counts))
        raise ValueError(
            f"class {k} has {counts[k]} members, need >= {degree + 1} "
            "to supply distinct same-label neighbors"
        )
    rng = np.random.default_rng(seed)
    n_same = int(np.ceil(degree * target_h))
    n_arb = degree - n_same
    by_class = [np.flatnonzero(labels == c) for c in range(num_classes)]

    edge_set = set()
    pairs = []

    def try_add(u, v):
        if u == v:
            return False
        key = (u, v) if u < v else (v, u)
        if key in edge_set:
            return False
        edge_set.add(key)
        pairs.append(key)
        return True

    for u in range(n):
        pool = by_class[labels[u]]
        added = 0
        while added < n_same:
            v = int(pool[rng.integers(pool.size)])
            if try_add(u, v):
                added += 1
        added = 0
        while added < n_arb:
            v = int(rng.integers(n))
            if try_add(u, v):
                added += 1

    features = class_cluster_features(labels, num_classes, feature_dim, rng)
    split = random_split(n, split_fractions, rng)
    meta = {
        "generator": "homophily_controlled",
        "degree": int(degree),
        "target_h": float(target_h),
        "seed": int(seed),
        "feature_model": "one-hot class means, unit variance",
    }
    return make_graph(n, pairs, features, labels, split, num_classes, meta=meta)


def gen_moon_graph(
    n_nodes,
    noise,
    k_nn,
    bridge_fraction,
    seed,
    split_fractions=MOON_SPLIT_FRACTIONS,
):
    """Two interleaved half-circles, intra-moon k-NN edges, random bridges.

    Bridges (cross-moon pairs) are added until they make up bridge_fraction
    of all edges, so edge homophily comes out at 1 - bridge_fraction. The
    2-D point coordinates are the node features; labels = moon membership.
    """
    if n_nodes % 2 != 0:
        raise ValueError("n_nodes must be even (two equal moons)")
    if k_nn < 2:
        raise ValueError("k_nn must be >= 2")
    if not 0.0 <= bridge_fraction <= 1.0:
        raise ValueError(f"bridge_fraction must lie in [0,1], got {bridge_fraction}")
    half = n_nodes // 2
    if k_nn >= half:
        raise ValueError("k_nn must be smaller than the moon size")
    rng = np.random.default_rng(seed)

    t = np.linspace(0.0, np.pi, half)
    xy = np.empty((n_nodes, 2))
    xy[:half, 0] = np.cos(t)
    xy[:half, 1] = np.sin(t)
    # vertical offset 0.05 keeps the crescents interleaved while leaving the
    # classes nearly sign-separable in y, which a bias-free GCN can express
    xy[half:, 0] = 1.0 - np.cos(t)
    xy[half:, 1] = 0.05 - np.sin(t)
    xy += noise * rng.standard_normal((n_nodes, 2))
    labels = np.zeros(n_nodes, dtype=np.int64)
    labels[half:] = 1

    pairs = []
    edge_set = set()
    for lo, hi in ((0, half), (half, n_nodes)):
        pts = xy[lo:hi]
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        np.fill_diagonal(d2, np.inf)
        nbrs = np.argsort(d2, axis=1)[:, :k_nn]
        for i in range(hi - lo):
            for j in nbrs[i]:
                a, b = lo + i, lo + int(j)
                key = (a, b) if a < b else (b, a)
                if key not in edge_set:
                    edge_set.add(key)
                    pairs.append(key)

    intra = len(pairs)
    cross = 0
    # cross/(intra+cross) >= bridge_fraction, solved for the smallest count
    if bridge_fraction < 1.0:
        want_cross = int(np.ceil(bridge_fraction * intra / (1.0 - bridge_fraction)))
    else:
        raise ValueError("bridge_fraction = 1 would need an edgeless intra wiring")
    while cross < want_cross:
        u = int(rng.integers(half))
        v = half + int(rng.integers(half))
        if (u, v) not in edge_set:
            edge_set.add((u, v))
            pairs.append((u, v))
            cross += 1

    split = random_split(n_nodes, split_fractions, rng)
    meta = {
        "generator": "moon",
        "noise": float(noise),
        "k_nn": int(k_nn),
        "bridge_fraction": float(bridge_fraction),
        "seed": int(seed),
    }
    return make_graph(n_nodes, pairs, xy, labels, split, 2, meta=meta)
