"""Edge-weighted two-layer GCN over a sparse subgraph.

The adjacency is never materialized: propagation is a fused
scale-aggregate-scale using the sampled edge list, with unit self-loops
folded in so isolated nodes still see their own features. Edge weights
enter the normalized adjacency, so the downstream loss backpropagates
into them and from there into the edge scorer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class GnnParams:
    w0: ad.Tensor  # F -> H
    w1: ad.Tensor  # H -> C
    b0: ad.Tensor | None = None
    b1: ad.Tensor | None = None

    def parameters(self):
        ps = [self.w0, self.w1]
        if self.b0 is not None:
            ps.append(self.b0)
        if self.b1 is not None:
            ps.append(self.b1)
        return ps


def init_gnn_params(rng, in_dim, hidden_dim, num_classes, bias=False):
    p = GnnParams(
        w0=ad.parameter(ad.glorot_uniform(rng, in_dim, hidden_dim), name="gnn.w0"),
        w1=ad.parameter(ad.glorot_uniform(rng, hidden_dim, num_classes), name="gnn.w1"),
    )
    if bias:
        p.b0 = ad.parameter(np.zeros(hidden_dim), name="gnn.b0")
        p.b1 = ad.parameter(np.zeros(num_classes), name="gnn.b1")
    return p


@dataclass
class GnnOutput:
    y_hat: ad.Tensor  # (|V|, C) row-stochastic
    hidden: ad.Tensor  # (|V|, H) layer-1 embeddings, post-ReLU


def propagate(weights, edge_u, edge_v, x, num_nodes):
    """One application of D^{-1/2} (A_w + I) D^{-1/2} to x.

    ``weights`` is the per-edge weight vector (tensor or ndarray); the
    self-loop weight is fixed at 1, which keeps every normalized degree
    strictly positive.
    """
    deg_hat = ad.add(ad.edge_incident_sum(weights, edge_u, edge_v, num_nodes), 1.0)
    s = ad.power(deg_hat, -0.5)
    xs = ad.row_scale(x, s)
    agg = ad.add(ad.edge_aggregate(weights, edge_u, edge_v, xs), xs)
    return ad.row_scale(agg, s)


def gcn_forward(params, edge_u, edge_v, edge_weights, features, num_nodes,
                train_mode=False, dropout_rate=0.0, rng=None):
    """Two-layer weighted GCN: ReLU hidden layer, row-softmax output.

    Dropout hits the layer-1 output only, and only in train mode. The
    returned hidden embeddings are pre-dropout so the consistency loss
    sees deterministic geometry.
    """
    x = ad.as_tensor(features)
    h = ad.matmul(propagate(edge_weights, edge_u, edge_v, x, num_nodes), params.w0)
    if params.b0 is not None:
        h = ad.add(h, params.b0)
    hidden = ad.relu(h)
    h1 = hidden
    if train_mode and dropout_rate > 0.0:
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        h1 = ad.dropout(h1, dropout_rate, rng)
    logits = ad.matmul(propagate(edge_weights, edge_u, edge_v, h1, num_nodes), params.w1)
    if params.b1 is not None:
        logits = ad.add(logits, params.b1)
    return GnnOutput(y_hat=ad.row_softmax(logits), hidden=hidden)


def predict_labels(y_hat):
    """Row argmax; ties resolve to the lowest class id."""
    val = y_hat.value if isinstance(y_hat, ad.Tensor) else np.asarray(y_hat)
    return np.argmax(val, axis=1)
