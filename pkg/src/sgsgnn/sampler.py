"""Sparse subgraph sampling: prior mixing, multinomial and Gumbel top-k draws.

Distinct-edge multinomial sampling is implemented with exponential race
keys (smallest k of Exp(1)/p_i), which draws the same distribution as
sequential renormalized sampling in one vectorized pass. A plain
with-replacement sampler is also exposed for the theory checks, whose
analysis assumes replacement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class AugmentedDistribution:
    probs: np.ndarray
    lam: float


def augment_with_prior(p_learned, p_prior, lam):
    """Convex mix lam * learned + (1 - lam) * prior; stays normalized."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0,1], got {lam}")
    p_learned = np.asarray(p_learned, dtype=np.float64)
    p_prior = np.asarray(p_prior, dtype=np.float64)
    if p_learned.shape != p_prior.shape:
        raise ValueError("distribution length mismatch")
    for name, vec in (("learned", p_learned), ("prior", p_prior)):
        if abs(vec.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} distribution sums to {vec.sum()}, not 1")
    mixed = lam * p_learned + (1.0 - lam) * p_prior
    if abs(mixed.sum() - 1.0) > 1e-9:
        raise AssertionError("mixing broke normalization")
    return AugmentedDistribution(probs=mixed, lam=float(lam))


def sample_without_replacement(probs, k, rng):
    """k distinct indices by successive renormalized draws, vectorized.

    Race construction: index i fires at time Exp(1)/p_i; the k earliest
    arrivals have exactly the sequential without-replacement law.
    """
    probs = np.asarray(probs, dtype=np.float64)
    support = int(np.count_nonzero(probs > 0))
    if k > support:
        raise ValueError(f"need {k} distinct edges, only {support} have positive mass")
    if k == probs.size:
        return np.arange(k, dtype=np.int64)
    keys = np.full(probs.size, np.inf)
    pos = probs > 0
    keys[pos] = rng.standard_exponential(support) / probs[pos]
    idx = np.argpartition(keys, k - 1)[:k]
    return np.sort(idx.astype(np.int64))


def sample_multinomial_k(dist, k, seed):
    """Spec'd entry point: distinct edges from a probability vector."""
    probs = dist.probs if hasattr(dist, "probs") else dist
    return sample_without_replacement(probs, k, _as_rng(seed))


def sample_with_replacement(probs, k, rng):
    """k independent categorical draws (duplicates allowed)."""
    probs = np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    return np.searchsorted(cdf, rng.random(k), side="right").astype(np.int64)


def sample_gumbel_topk(raw_scores, k, temperature, seed, noise=True):
    """Indices of the k largest log(w)/T + g with Gumbel(0,1) noise g.

    The noise is added after temperature scaling so the k=1 selection
    marginal is softmax(log w / T); scaling the noisy key as a whole
    would cancel T out of the argmax. ``noise=False`` is a test hook
    that zeroes g, reducing to plain top-k.
    """
    w = raw_scores.value if isinstance(raw_scores, ad.Tensor) else np.asarray(raw_scores)
    if k > w.size:
        raise ValueError(f"k={k} exceeds edge count {w.size}")
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    keys = np.log(np.clip(w, 1e-300, None)) / temperature
    if noise:
        u = _as_rng(seed).random(w.size)
        keys = keys - np.log(-np.log(u))
    idx = np.argpartition(-keys, k - 1)[:k]
    return np.sort(idx.astype(np.int64))


@dataclass
class SparseSubgraph:
    edge_indices: np.ndarray  # distinct canonical edge ids of the parent
    edge_u: np.ndarray
    edge_v: np.ndarray
    edge_weights: ad.Tensor  # w[edge_indices], gradient path intact
    num_nodes: int

    @property
    def k(self):
        return int(self.edge_indices.size)


def build_subgraph(g, edge_indices, raw_scores):
    """Assemble the weighted subgraph the downstream GCN consumes.

    ``raw_scores`` may be an autodiff tensor over all canonical edges of
    ``g``; gathering keeps the gradient route from the GCN loss back into
    the scorer. A plain array gives fixed weights (baselines).
    """
    idx = np.asarray(edge_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("subgraph needs at least one edge")
    if np.unique(idx).size != idx.size:
        raise ValueError("edge indices must be distinct")
    if idx.min() < 0 or idx.max() >= g.num_edges:
        raise ValueError("edge index out of range")
    if isinstance(raw_scores, ad.Tensor):
        weights = ad.gather_rows(raw_scores, idx)
    else:
        weights = ad.Tensor(np.asarray(raw_scores, dtype=np.float64)[idx])
    return SparseSubgraph(
        edge_indices=idx,
        edge_u=g.edge_u[idx],
        edge_v=g.edge_v[idx],
        edge_weights=weights,
        num_nodes=g.num_nodes,
    )


def edge_budget(num_edges, q):
    """k = floor(q * |E| / 100), the subgraph size at sparsity q percent."""
    if not 0 < q <= 100:
        raise ValueError(f"q must lie in (0, 100], got {q}")
    return int(np.floor(q * num_edges / 100.0))


def export_subgraph_csv(sg, path):
    """Write u,v,weight rows for the sampled edges."""
    w = sg.edge_weights.value
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("u,v,weight\n")
        for u, v, x in zip(sg.edge_u, sg.edge_v, w):
            f.write(f"{u},{v},{float(x)!r}\n")
