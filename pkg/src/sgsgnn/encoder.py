"""Edge scorer: structural GCN embedding, pairwise MLP, score normalization.

The encoder sees a cheap structural sketch of each part (a prior-sampled
subgraph), embeds nodes with a 2-layer GCN, and scores every edge of the
part from the endpoint embeddings. Scores become a sampling distribution
by sum or temperature-softmax normalization; the temperature follows a
linear annealing schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .gnn import propagate

NORMALIZE_MODES = ("sum", "softmax_temp", "gumbel_topk")


@dataclass
class EdgeEncoderParams:
    enc_w0: ad.Tensor  # F -> H
    enc_w1: ad.Tensor  # H -> H
    mlp_w0: ad.Tensor  # 2H -> H
    mlp_b0: ad.Tensor
    mlp_w1: ad.Tensor  # H -> 1
    mlp_b1: ad.Tensor

    def parameters(self):
        return [self.enc_w0, self.enc_w1, self.mlp_w0, self.mlp_b0, self.mlp_w1, self.mlp_b1]


def init_encoder_params(rng, in_dim, hidden_dim):
    return EdgeEncoderParams(
        enc_w0=ad.parameter(ad.glorot_uniform(rng, in_dim, hidden_dim), name="enc.w0"),
        enc_w1=ad.parameter(ad.glorot_uniform(rng, hidden_dim, hidden_dim), name="enc.w1"),
        mlp_w0=ad.parameter(ad.glorot_uniform(rng, 2 * hidden_dim, hidden_dim), name="mlp.w0"),
        mlp_b0=ad.parameter(np.zeros(hidden_dim), name="mlp.b0"),
        mlp_w1=ad.parameter(ad.glorot_uniform(rng, hidden_dim, 1), name="mlp.w1"),
        mlp_b1=ad.parameter(np.zeros(1), name="mlp.b1"),
    )


@dataclass(frozen=True)
class AnnealSchedule:
    t_start: float = 1.0
    t_min: float = 0.1
    max_epochs: int = 500

    def __post_init__(self):
        if not self.t_start >= self.t_min > 0:
            raise ValueError("need t_start >= t_min > 0")

    @property
    def rate(self):
        return (self.t_start - self.t_min) / max(self.max_epochs, 1)


def anneal_temperature(schedule, epoch):
    """Linear decay clamped at the floor: max(T_min, T0 - epoch * r)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return max(schedule.t_min, schedule.t_start - epoch * schedule.rate)


def sample_structural_edges(num_edges, prior, q, rng):
    """Indices of k = floor(q*|E|/100) distinct edges drawn by the prior."""
    if not 0 < q <= 100:
        raise ValueError(f"q must lie in (0, 100], got {q}")
    k = int(np.floor(q * num_edges / 100.0))
    if k == 0:
        raise ValueError(f"q={q} yields an empty structural sample on {num_edges} edges")
    from .sampler import sample_without_replacement

    return sample_without_replacement(prior, k, rng)


def encode_structural_embedding(params, features, edge_u, edge_v, num_nodes,
                                prior, q, rng, edge_weights=None):
    """Embed nodes with a 2-layer GCN over a prior-sampled edge subset.

    edge_weights (len |E|, detached) weight the aggregation; training feeds
    back the previous epoch's learned scores here so suspected heterophilic
    edges fade out of the encoder's own message passing. None means unit
    weights (the cold-start state).
    """
    idx = sample_structural_edges(edge_u.size, prior, q, rng)
    su, sv = edge_u[idx], edge_v[idx]
    agg_w = np.ones(idx.size) if edge_weights is None else np.asarray(edge_weights)[idx]
    x = ad.as_tensor(features)
    h = ad.relu(ad.matmul(propagate(agg_w, su, sv, x, num_nodes), params.enc_w0))
    return ad.matmul(propagate(agg_w, su, sv, h, num_nodes), params.enc_w1)


def score_edges(params, h, edge_u, edge_v):
    """w(e_uv) = sigmoid(MLP([h_u - h_v ; h_u * h_v])), strictly in (0,1)."""
    hu = ad.gather_rows(h, edge_u)
    hv = ad.gather_rows(h, edge_v)
    pair = ad.concat_cols(ad.sub(hu, hv), ad.mul(hu, hv))
    z = ad.relu(ad.add(ad.matmul(pair, params.mlp_w0), params.mlp_b0))
    return ad.flatten(ad.sigmoid(ad.add(ad.matmul(z, params.mlp_w1), params.mlp_b1)))


@dataclass
class EdgeDistribution:
    raw_scores: ad.Tensor  # (E,) in (0,1)
    probs: np.ndarray  # (E,) sums to 1 for sum/softmax modes
    mode: str
    temperature: float


def normalize(raw_scores, mode, temperature=1.0):
    """Turn raw scores into sampling probabilities.

    sum mode divides by the total; softmax mode treats scores as logits at
    the given temperature. gumbel_topk defers the noisy selection to the
    sampler, so probs here are the softmax((log w)/T) marginal-of-the-max.
    """
    if mode not in NORMALIZE_MODES:
        raise ValueError(f"unknown normalization mode: {mode!r}")
    w = raw_scores.value if isinstance(raw_scores, ad.Tensor) else np.asarray(raw_scores)
    if mode == "sum":
        total = w.sum()
        if total <= 0.0:
            raise ValueError("sum normalization needs a positive score total")
        probs = w / total
    elif mode == "softmax_temp":
        if temperature <= 0:
            raise ValueError("softmax temperature must be > 0")
        z = w / temperature
        z = z - z.max()
        e = np.exp(z)
        probs = e / e.sum()
    else:
        if temperature <= 0:
            raise ValueError("gumbel temperature must be > 0")
        z = np.log(np.clip(w, 1e-300, None)) / temperature
        z = z - z.max()
        e = np.exp(z)
        probs = e / e.sum()
    return EdgeDistribution(
        raw_scores=raw_scores if isinstance(raw_scores, ad.Tensor) else ad.Tensor(w),
        probs=probs,
        mode=mode,
        temperature=float(temperature),
    )
