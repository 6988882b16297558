"""Training losses: label cross-entropy, edge assortativity, consistency.

All three are differentiable through the tape. Assortativity pushes
scores on train-train edges toward the label-agreement indicator (full
binary cross-entropy by default; the one-sided variant that only rewards
homophilous edges sits behind a flag). Consistency ties each sampled
edge's score to the cosine of its endpoint GNN embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

PROB_FLOOR = 1e-12
COSINE_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha_ce: float = 1.0
    alpha_assor: float = 1.0
    alpha_cons: float = 0.5

    def __post_init__(self):
        for name, a in (("alpha_ce", self.alpha_ce), ("alpha_assor", self.alpha_assor),
                        ("alpha_cons", self.alpha_cons)):
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"{name} must lie in [0,1], got {a}")


@dataclass
class LossBreakdown:
    ce: float
    assor: float
    cons: float
    total: float


def cross_entropy(y_hat, labels, train_mask):
    """Mean negative log-likelihood over train nodes, probs floored at 1e-12."""
    rows = np.flatnonzero(train_mask)
    if rows.size == 0:
        raise ValueError("cross entropy needs a nonempty train mask")
    picked = ad.pick(y_hat, rows, np.asarray(labels)[rows])
    return ad.scale(ad.mean_all(ad.log(ad.clamp_min(picked, PROB_FLOOR))), -1.0)


def _clamped_unit(w):
    return ad.clamp_min(ad.clamp_max(w, 1.0 - PROB_FLOOR), PROB_FLOOR)


def assortativity_loss(raw_scores, edge_u, edge_v, labels, train_mask,
                       one_sided=False, reduction="mean"):
    """BCE between edge scores and label agreement on train-train edges.

    Only edges with both endpoints in the train set contribute; an empty
    set gives 0. one_sided drops the heterophilous log(1-w) term.
    """
    labels = np.asarray(labels)
    train_mask = np.asarray(train_mask, dtype=bool)
    tt = train_mask[edge_u] & train_mask[edge_v]
    if not np.any(tt):
        return ad.Tensor(0.0)
    same = labels[edge_u[tt]] == labels[edge_v[tt]]
    idx_all = np.flatnonzero(tt)
    w = _clamped_unit(ad.gather_rows(raw_scores, idx_all))
    total = None
    if np.any(same):
        pos = ad.sum_all(ad.log(ad.gather_rows(w, np.flatnonzero(same))))
        total = ad.scale(pos, -1.0)
    if not one_sided and np.any(~same):
        neg = ad.sum_all(ad.log(ad.sub(1.0, ad.gather_rows(w, np.flatnonzero(~same)))))
        total = ad.scale(neg, -1.0) if total is None else ad.sub(total, neg)
    if total is None:
        return ad.Tensor(0.0)
    count = int(np.count_nonzero(same)) if one_sided else int(idx_all.size)
    if reduction == "mean":
        return ad.scale(total, 1.0 / count)
    if reduction == "sum":
        return total
    raise ValueError(f"unknown reduction: {reduction!r}")


def consistency_loss(sampled_scores, hidden, edge_u, edge_v, reduction="mean"):
    """Mean |w_e - cosine(h_u, h_v)| over the sampled edges.

    Cosine is defined as 0 whenever either endpoint norm is below 1e-12,
    and those edges contribute |w_e| with no gradient into the embedding.
    """
    edge_u = np.asarray(edge_u, dtype=np.int64)
    edge_v = np.asarray(edge_v, dtype=np.int64)
    n_edges = edge_u.size
    if n_edges == 0:
        return ad.Tensor(0.0)
    hv_val = hidden.value if isinstance(hidden, ad.Tensor) else np.asarray(hidden)
    norms = np.linalg.norm(hv_val, axis=1)
    valid = (norms[edge_u] >= COSINE_NORM_FLOOR) & (norms[edge_v] >= COSINE_NORM_FLOOR)

    total = None
    if np.any(valid):
        iu, iv = edge_u[valid], edge_v[valid]
        hu = ad.gather_rows(hidden, iu)
        hv = ad.gather_rows(hidden, iv)
        dot = ad.row_sum(ad.mul(hu, hv))
        nu = ad.power(ad.row_sum(ad.mul(hu, hu)), 0.5)
        nv = ad.power(ad.row_sum(ad.mul(hv, hv)), 0.5)
        cos = ad.div(dot, ad.mul(nu, nv))
        w_sel = ad.gather_rows(sampled_scores, np.flatnonzero(valid))
        total = ad.sum_all(ad.absolute(ad.sub(w_sel, cos)))
    if np.any(~valid):
        w_rest = ad.gather_rows(sampled_scores, np.flatnonzero(~valid))
        rest = ad.sum_all(ad.absolute(w_rest))
        total = rest if total is None else ad.add(total, rest)
    if reduction == "mean":
        return ad.scale(total, 1.0 / n_edges)
    if reduction == "sum":
        return total
    raise ValueError(f"unknown reduction: {reduction!r}")


def total_loss(ce, assor, cons, weights):
    """Weighted sum alpha1*ce + alpha2*assor + alpha3*cons, plus breakdown."""
    combined = ad.add(
        ad.add(ad.scale(ce, weights.alpha_ce), ad.scale(assor, weights.alpha_assor)),
        ad.scale(cons, weights.alpha_cons),
    )
    breakdown = LossBreakdown(
        ce=float(ce.value),
        assor=float(assor.value),
        cons=float(cons.value),
        total=float(combined.value),
    )
    return combined, breakdown
