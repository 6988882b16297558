"""Fixed-distribution sparsifier baselines and sparsity sweeps.

Baselines sample subgraph topology from a precomputed edge distribution
(uniform, inverse-degree, or effective resistance) and train the same
downstream GCN on unit weights. Sweeps run every (method, q, seed) cell
under one protocol so learned and fixed samplers compare head to head.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .gnn import gcn_forward, init_gnn_params, predict_labels
from .graph import subgraph_edge_homophily
from .losses import cross_entropy
from .metrics import macro_f1, micro_f1
from .prior import compute_prior
from .sampler import edge_budget, sample_without_replacement
from .training import (
    _EVAL_TAG,
    _INFER_TAG,
    _INIT_TAG,
    _S_DROPOUT,
    _S_SAMPLE,
    TrainingDiverged,
    _rng,
    detect_convergence,
    infer_ensemble,
    train,
    train_conditional,
)

FIXED_KINDS = ("random", "degree_weighted", "effective_resistance")
SWEEP_METHODS = FIXED_KINDS + ("sgs", "sgs_conditional", "full")

ER_NODE_CAP = 3000


@dataclass(frozen=True)
class FixedSampler:
    kind: str
    probs: np.ndarray  # one probability per canonical edge

    def __post_init__(self):
        if self.kind not in FIXED_KINDS:
            raise ValueError(f"kind must be one of {FIXED_KINDS}")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"distribution sums to {total}, not 1")


def random_distribution(g):
    """Uniform 1/|E| over canonical edges."""
    if g.num_edges == 0:
        raise ValueError("graph has no edges")
    return np.full(g.num_edges, 1.0 / g.num_edges)


def degree_weighted_distribution(g):
    """Inverse-degree edge weights, the same form as the learned model's prior."""
    return compute_prior(g)


def _connected_components(g):
    """Label nodes by component via BFS over the CSR structure."""
    comp = np.full(g.num_nodes, -1, dtype=np.int64)
    current = 0
    for root in range(g.num_nodes):
        if comp[root] >= 0:
            continue
        comp[root] = current
        frontier = [root]
        while frontier:
            nxt = []
            for u in frontier:
                for v in g.neighbors(u):
                    if comp[v] < 0:
                        comp[v] = current
                        nxt.append(v)
            frontier = nxt
        current += 1
    return comp, current


def effective_resistances(g, cap=ER_NODE_CAP):
    """Exact per-edge effective resistance via dense Laplacian pseudoinverse."""
    if g.num_nodes > cap:
        raise ValueError(
            f"graph has {g.num_nodes} nodes, above the exact computation cap {cap}"
        )
    if g.num_edges == 0:
        raise ValueError("graph has no edges")
    comp, n_comp = _connected_components(g)
    resist = np.empty(g.num_edges)
    for c in range(n_comp):
        nodes = np.flatnonzero(comp == c)
        if nodes.size < 2:
            continue
        local = np.full(g.num_nodes, -1, dtype=np.int64)
        local[nodes] = np.arange(nodes.size)
        edge_mask = comp[g.edge_u] == c
        lu, lv = local[g.edge_u[edge_mask]], local[g.edge_v[edge_mask]]
        lap = np.zeros((nodes.size, nodes.size))
        np.add.at(lap, (lu, lv), -1.0)
        np.add.at(lap, (lv, lu), -1.0)
        lap[np.arange(nodes.size), np.arange(nodes.size)] = -lap.sum(axis=1)
        vals, vecs = np.linalg.eigh(lap)
        inv = np.where(vals > 1e-9, 1.0 / np.where(vals > 1e-9, vals, 1.0), 0.0)
        pinv = (vecs * inv) @ vecs.T
        diag = np.diag(pinv)
        resist[edge_mask] = diag[lu] + diag[lv] - 2.0 * pinv[lu, lv]
    return resist


def effective_resistance_distribution(g, cap=ER_NODE_CAP):
    """Edge probabilities proportional to effective resistance."""
    resist = effective_resistances(g, cap)
    return resist / resist.sum()


def fixed_distribution(g, kind):
    if kind == "random":
        return FixedSampler(kind, random_distribution(g))
    if kind == "degree_weighted":
        return FixedSampler(kind, degree_weighted_distribution(g))
    if kind == "effective_resistance":
        return FixedSampler(kind, effective_resistance_distribution(g))
    raise ValueError(f"kind must be one of {FIXED_KINDS}")


# ---------------------------------------------------------------------------
# fixed-distribution training under the shared protocol


@dataclass
class FixedRunSummary:
    test_micro_f1: float
    test_macro_f1: float
    epochs_to_converge: int
    subgraph_edge_homophily: float
    best_val_f1: float
    epochs_run: int


def train_fixed(g, cfg, probs):
    """Train the downstream GCN on unit-weight subgraphs drawn from `probs`.

    Mirrors the learned pipeline's seed discipline, convergence rule,
    patience, best-validation snapshotting, and ensemble inference, with
    the edge distribution held fixed and cross-entropy as the whole loss.
    """
    cfg.validate()
    if probs.shape != (g.num_edges,):
        raise ValueError("distribution length must match the edge count")
    train_mask, val_mask, test_mask = g.mask("train"), g.mask("val"), g.mask("test")
    if not np.any(train_mask):
        raise ValueError("graph has an empty train split")
    if not np.any(val_mask):
        raise ValueError("graph has an empty val split")

    params = init_gnn_params(_rng(cfg.seed, _INIT_TAG), g.feature_dim,
                             cfg.hidden_dim, g.num_classes, bias=cfg.gnn_bias)
    opt = ad.Adam(params.parameters(), lr=cfg.lr)
    k = max(1, edge_budget(g.num_edges, cfg.q))

    best_val, best_snap, best_sub_h, best_epoch = -1.0, None, 0.0, -1
    loss_tail, stale, converged_at = [], 0, None
    epoch = 0
    for epoch in range(cfg.max_epochs):
        sel = sample_without_replacement(probs, k, _rng(cfg.seed, epoch, 0, _S_SAMPLE))
        out = gcn_forward(params, g.edge_u[sel], g.edge_v[sel],
                          np.ones(sel.size), g.features, g.num_nodes,
                          train_mode=True, dropout_rate=cfg.dropout,
                          rng=_rng(cfg.seed, epoch, 0, _S_DROPOUT))
        ce = cross_entropy(out.y_hat, g.labels, train_mask)
        loss_val = float(ce.value)
        if not np.isfinite(loss_val):
            raise TrainingDiverged(f"non-finite loss {loss_val} at epoch {epoch}")
        opt.zero_grad()
        ad.backward(ce)
        opt.step()
        opt.zero_grad()

        sel_eval = sample_without_replacement(
            probs, k, _rng(cfg.seed, _EVAL_TAG, epoch, _S_SAMPLE))
        with ad.no_grad():
            out_eval = gcn_forward(params, g.edge_u[sel_eval], g.edge_v[sel_eval],
                                   np.ones(sel_eval.size), g.features, g.num_nodes)
        pred = predict_labels(out_eval.y_hat)
        val_f1 = micro_f1(pred, g.labels, val_mask)
        if val_f1 > best_val:
            best_val = val_f1
            best_snap = [p.value.copy() for p in params.parameters()]
            best_sub_h = subgraph_edge_homophily(g, sel_eval)
            best_epoch = epoch
            stale = 0
        else:
            stale += 1

        loss_tail = (loss_tail + [loss_val])[-5:]
        if detect_convergence(loss_tail):
            converged_at = epoch + 1
            break
        if stale >= cfg.patience:
            break

    epochs_run = epoch + 1
    for p, snap in zip(params.parameters(), best_snap):
        p.value = snap
    mean_y = np.zeros((g.num_nodes, g.num_classes))
    with ad.no_grad():
        for r in range(cfg.ensemble_size):
            sel = sample_without_replacement(probs, k, _rng(cfg.seed, _INFER_TAG, r))
            out = gcn_forward(params, g.edge_u[sel], g.edge_v[sel],
                              np.ones(sel.size), g.features, g.num_nodes)
            mean_y += out.y_hat.value
    mean_y /= cfg.ensemble_size
    pred = predict_labels(mean_y)
    has_test = bool(np.any(test_mask))
    return FixedRunSummary(
        test_micro_f1=micro_f1(pred, g.labels, test_mask) if has_test else 0.0,
        test_macro_f1=macro_f1(pred, g.labels, test_mask) if has_test else 0.0,
        epochs_to_converge=converged_at if converged_at is not None else epochs_run,
        subgraph_edge_homophily=best_sub_h,
        best_val_f1=best_val,
        epochs_run=epochs_run,
    )


# ---------------------------------------------------------------------------
# sparsity sweeps


@dataclass(frozen=True)
class SweepRow:
    method: str
    q: float
    seed: int
    test_micro_f1: float
    test_macro_f1: float
    epochs_to_converge: int
    subgraph_edge_homophily: float

    CSV_COLUMNS = ("method,q,seed,test_micro_f1,test_macro_f1,"
                   "epochs_to_converge,subgraph_edge_homophily")

    def csv_row(self):
        return (f"{self.method},{self.q!r},{self.seed},{self.test_micro_f1!r},"
                f"{self.test_macro_f1!r},{self.epochs_to_converge},"
                f"{self.subgraph_edge_homophily!r}")


def run_method(g, cfg, method, q, seed):
    """One sweep cell: train `method` at sparsity q with the given seed."""
    cell_cfg = replace(cfg, q=float(q), seed=int(seed))
    if method in ("sgs", "sgs_conditional"):
        trainer = train_conditional if method == "sgs_conditional" else train
        state, hist = trainer(g, cell_cfg)
        mean_y, pred = infer_ensemble(state, g, cell_cfg)
        test_mask = g.mask("test")
        return SweepRow(
            method=method, q=float(q), seed=int(seed),
            test_micro_f1=micro_f1(pred, g.labels, test_mask),
            test_macro_f1=macro_f1(pred, g.labels, test_mask),
            epochs_to_converge=state.converged_epochs(),
            subgraph_edge_homophily=hist[state.best_epoch].subgraph_edge_homophily,
        )
    if method == "full":
        summary = train_fixed(g, replace(cell_cfg, q=100.0),
                              random_distribution(g))
    elif method in FIXED_KINDS:
        summary = train_fixed(g, cell_cfg, fixed_distribution(g, method).probs)
    else:
        raise ValueError(f"method must be one of {SWEEP_METHODS}")
    return SweepRow(
        method=method, q=float(q), seed=int(seed),
        test_micro_f1=summary.test_micro_f1,
        test_macro_f1=summary.test_macro_f1,
        epochs_to_converge=summary.epochs_to_converge,
        subgraph_edge_homophily=summary.subgraph_edge_homophily,
    )


def sweep_sparsity(g, methods, qs, seeds, cfg=None):
    """Cartesian product of (method, q, seed) cells; rows in loop order."""
    from .training import RunConfig

    cfg = RunConfig() if cfg is None else cfg
    rows = []
    for method in methods:
        for q in qs:
            for seed in seeds:
                rows.append(run_method(g, cfg, method, q, seed))
    return rows


def save_sweep_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(SweepRow.CSV_COLUMNS + "\n")
        for row in rows:
            f.write(row.csv_row() + "\n")
