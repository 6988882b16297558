"""Training loops, ensemble inference, convergence detection, checkpoints.

Standard training: per epoch and part, embed structure, score edges,
normalize at the annealed temperature, mix with the prior, sample a
k-edge subgraph, run the weighted GCN, and step both models on the
combined loss. Conditional training gates the encoder update on whether
the learned distribution beats a prior-sampled baseline on training F1.

The encoder's structural subgraph is resampled fresh every epoch and its
aggregation is weighted by the previous epoch's learned scores (kept in
ModelState.edge_w), so edges the model already distrusts fade out of the
encoder's own message passing. Validation is a deterministic no-dropout
forward over all edges weighted by those scores; the best checkpoint is
the highest validation micro-F1 with ties broken by validation
cross-entropy, and the temperature at that epoch is reused at inference.

All randomness is derived statelessly from (seed, epoch, part, stream),
so a run resumed from a checkpoint reproduces the uninterrupted
trajectory bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .encoder import (
    AnnealSchedule,
    EdgeEncoderParams,
    anneal_temperature,
    encode_structural_embedding,
    init_encoder_params,
    normalize,
    score_edges,
)
from .gnn import GnnParams, gcn_forward, init_gnn_params, predict_labels
from .graph import subgraph_edge_homophily
from .losses import (
    LossWeights,
    assortativity_loss,
    consistency_loss,
    cross_entropy,
    total_loss,
)
from .metrics import macro_f1, micro_f1
from .prior import compute_prior, partition_graph
from .sampler import (
    augment_with_prior,
    edge_budget,
    sample_gumbel_topk,
    sample_without_replacement,
)

SAMPLING_MODES = ("multinomial", "gumbel_topk")

# rng stream tags (last element of the derived seed tuple)
_S_STRUCT, _S_SAMPLE, _S_DROPOUT, _S_BASELINE = 0, 1, 2, 3
_EVAL_TAG, _INFER_TAG, _INIT_TAG = 101, 202, 303


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; message carries epoch context."""


@dataclass(frozen=True)
class RunConfig:
    q: float = 20.0
    hidden_dim: int = 256
    num_layers: int = 2
    lr: float = 0.001
    dropout: float = 0.2
    max_epochs: int = 500
    lam: float = 0.5
    alpha_ce: float = 1.0
    alpha_assor: float = 1.0
    alpha_cons: float = 0.5
    t_start: float = 1.0
    t_min: float = 0.1
    sampling: str = "multinomial"
    normalize_mode: str = "softmax_temp"
    edge_cap: int = 500_000
    ensemble_size: int = 10
    conditional_updates: bool = False
    patience: int = 50
    seed: int = 0
    one_sided_assor: bool = False
    loss_reduction: str = "mean"
    gnn_bias: bool = False

    def validate(self):
        if not 0 < self.q <= 100:
            raise ValueError(f"q must lie in (0,100], got {self.q}")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.num_layers != 2:
            raise ValueError("only the 2-layer protocol architecture is supported")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0,1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0,1]")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
        if self.normalize_mode not in ("sum", "softmax_temp"):
            raise ValueError("normalize_mode must be 'sum' or 'softmax_temp'")
        if not self.t_start >= self.t_min > 0:
            raise ValueError("need t_start >= t_min > 0")
        if self.edge_cap < 1:
            raise ValueError("edge_cap must be >= 1")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.loss_reduction not in ("mean", "sum"):
            raise ValueError("loss_reduction must be 'mean' or 'sum'")
        LossWeights(self.alpha_ce, self.alpha_assor, self.alpha_cons)
        return self

    def loss_weights(self):
        return LossWeights(self.alpha_ce, self.alpha_assor, self.alpha_cons)


@dataclass
class EpochMetrics:
    epoch: int
    total: float
    ce: float
    assor: float
    cons: float
    train_micro_f1: float
    train_macro_f1: float
    val_micro_f1: float
    val_macro_f1: float
    test_micro_f1: float
    test_macro_f1: float
    subgraph_edge_homophily: float
    temperature: float
    encoder_updated: bool

    CSV_COLUMNS = (
        "epoch,total,ce,assor,cons,train_micro_f1,train_macro_f1,"
        "val_micro_f1,val_macro_f1,test_micro_f1,test_macro_f1,"
        "subgraph_edge_homophily,temperature,encoder_updated"
    )

    def csv_row(self):
        vals = [self.epoch, self.total, self.ce, self.assor, self.cons,
                self.train_micro_f1, self.train_macro_f1, self.val_micro_f1,
                self.val_macro_f1, self.test_micro_f1, self.test_macro_f1,
                self.subgraph_edge_homophily, self.temperature,
                int(self.encoder_updated)]
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in vals)


@dataclass
class ModelState:
    encoder: EdgeEncoderParams
    gnn: GnnParams
    enc_opt: ad.Adam
    gnn_opt: ad.Adam
    best_t: float
    best_val_f1: float
    epoch: int  # next epoch to run; doubles as "epochs completed"
    edge_w: np.ndarray = None  # last learned score per canonical edge
    best_epoch: int = -1
    best_val_ce: float = float("inf")
    best_edge_w: np.ndarray = None
    epochs_since_improve: int = 0
    loss_tail: list = field(default_factory=list)  # last few epoch losses
    best_snapshot: dict = field(default_factory=dict)
    epochs_to_converge: int | None = None

    def parameters(self):
        return self.encoder.parameters() + self.gnn.parameters()

    def converged_epochs(self):
        """Epoch count to report: convergence epoch, or epochs run if never hit."""
        return self.epoch if self.epochs_to_converge is None else self.epochs_to_converge

    def snapshot_best(self, temperature, val_f1, val_ce, epoch):
        self.best_val_f1 = float(val_f1)
        self.best_val_ce = float(val_ce)
        self.best_t = float(temperature)
        self.best_epoch = epoch
        self.best_edge_w = self.edge_w.copy()
        self.best_snapshot = {p.name: p.value.copy() for p in self.parameters()}

    def use_best(self):
        """Swap the best-validation weights in for the scope of a `with`.

        Training leaves the trajectory weights in place (checkpoints must
        resume the run, not the best epoch); inference borrows the best
        snapshot through this context.
        """
        return _BestParams(self)


class _BestParams:
    def __init__(self, state):
        self.state = state

    def __enter__(self):
        self.saved = {p.name: p.value for p in self.state.parameters()}
        self.saved_edge_w = self.state.edge_w
        if self.state.best_snapshot:
            for p in self.state.parameters():
                if p.name in self.state.best_snapshot:
                    p.value = self.state.best_snapshot[p.name]
            if self.state.best_edge_w is not None:
                self.state.edge_w = self.state.best_edge_w
        return self.state

    def __exit__(self, *exc):
        for p in self.state.parameters():
            p.value = self.saved[p.name]
        self.state.edge_w = self.saved_edge_w
        return False


def _rng(*key):
    return np.random.default_rng(list(key))


def detect_convergence(loss_history, window=5, tol=1e-3):
    """True once the last `window` losses have population std <= tol."""
    if len(loss_history) < window:
        return False
    return float(np.std(np.asarray(loss_history[-window:], dtype=np.float64))) <= tol


def init_state(g, cfg):
    rng = _rng(cfg.seed, _INIT_TAG)
    encoder = init_encoder_params(rng, g.feature_dim, cfg.hidden_dim)
    gnn = init_gnn_params(rng, g.feature_dim, cfg.hidden_dim, g.num_classes,
                          bias=cfg.gnn_bias)
    return ModelState(
        encoder=encoder,
        gnn=gnn,
        enc_opt=ad.Adam(encoder.parameters(), lr=cfg.lr),
        gnn_opt=ad.Adam(gnn.parameters(), lr=cfg.lr),
        best_t=cfg.t_start,
        best_val_f1=-1.0,
        epoch=0,
        edge_w=np.ones(g.num_edges),
    )


def _score_all_edges(state, g, partition, cfg, tag=_INFER_TAG):
    """Score every canonical edge part by part; returns the (|E|,) value vector."""
    scores = np.empty(g.num_edges)
    with ad.no_grad():
        for pid, idx in enumerate(partition.part_edges):
            if idx.size == 0:
                continue
            eu, ev = g.edge_u[idx], g.edge_v[idx]
            h = encode_structural_embedding(
                state.encoder, g.features, eu, ev, g.num_nodes,
                partition.part_priors[pid], cfg.q,
                _rng(cfg.seed, tag, pid, _S_STRUCT),
                edge_weights=state.edge_w[idx],
            )
            scores[idx] = score_edges(state.encoder, h, eu, ev).value
    return scores


def _eval_epoch(state, g, val_mask):
    """Deterministic no-dropout forward over every edge, score-weighted.

    Edges the encoder has written off carry near-zero weight and drop out
    of the normalized aggregation, so this tracks the quality sampled
    inference will see without adding sampling noise to model selection.
    """
    with ad.no_grad():
        out = gcn_forward(state.gnn, g.edge_u, g.edge_v, state.edge_w,
                          g.features, g.num_nodes)
        val_ce = float(cross_entropy(out.y_hat, g.labels, val_mask).value)
    return predict_labels(out.y_hat), val_ce


def _part_train_step(state, g, cfg, temperature, epoch, pid, edge_idx,
                     part_prior, train_mask, conditional):
    """One part's forward/backward.

    Returns (loss breakdown, encoder_updated, selected global edge indices).
    """
    eu, ev = g.edge_u[edge_idx], g.edge_v[edge_idx]
    h_struct = encode_structural_embedding(
        state.encoder, g.features, eu, ev, g.num_nodes, part_prior, cfg.q,
        _rng(cfg.seed, epoch, pid, _S_STRUCT),
        edge_weights=state.edge_w[edge_idx],
    )
    w = score_edges(state.encoder, h_struct, eu, ev)
    dist = normalize(w, cfg.normalize_mode, temperature)
    aug = augment_with_prior(dist.probs, part_prior, cfg.lam)
    k = max(1, edge_budget(edge_idx.size, cfg.q))
    rng_sample = _rng(cfg.seed, epoch, pid, _S_SAMPLE)
    if cfg.sampling == "gumbel_topk":
        sel = sample_gumbel_topk(w.value, k, temperature, rng_sample)
    else:
        sel = sample_without_replacement(aug.probs, k, rng_sample)
    su, sv = eu[sel], ev[sel]
    w_sel = ad.gather_rows(w, sel)
    out = gcn_forward(
        state.gnn, su, sv, w_sel, g.features, g.num_nodes,
        train_mode=True, dropout_rate=cfg.dropout,
        rng=_rng(cfg.seed, epoch, pid, _S_DROPOUT),
    )

    ce = cross_entropy(out.y_hat, g.labels, train_mask)
    assor = assortativity_loss(w, eu, ev, g.labels, train_mask,
                               one_sided=cfg.one_sided_assor,
                               reduction=cfg.loss_reduction)
    cons = consistency_loss(w_sel, out.hidden, su, sv,
                            reduction=cfg.loss_reduction)
    loss, breakdown = total_loss(ce, assor, cons, cfg.loss_weights())
    if not np.isfinite(breakdown.total):
        raise TrainingDiverged(
            f"non-finite loss {breakdown.total} at epoch {epoch}, part {pid}"
        )

    update_encoder = True
    if conditional:
        pred_learned = predict_labels(out.y_hat)
        rng_base = _rng(cfg.seed, epoch, pid, _S_BASELINE)
        base_sel = sample_without_replacement(part_prior, k, rng_base)
        with ad.no_grad():
            base_out = gcn_forward(
                state.gnn, eu[base_sel], ev[base_sel],
                np.ones(base_sel.size), g.features, g.num_nodes,
            )
        f1_learned = micro_f1(pred_learned, g.labels, train_mask)
        f1_base = micro_f1(predict_labels(base_out.y_hat), g.labels, train_mask)
        update_encoder = f1_learned >= f1_base

    state.enc_opt.zero_grad()
    state.gnn_opt.zero_grad()
    if update_encoder:
        ad.backward(loss)
        state.enc_opt.step()
        state.gnn_opt.step()
    else:
        # encoder frozen for this part: only the CE path trains the GNN
        ad.backward(ce)
        state.gnn_opt.step()
    state.enc_opt.zero_grad()
    state.gnn_opt.zero_grad()
    # feed this epoch's scores back into the next encoder aggregation
    state.edge_w[edge_idx] = w.value
    return breakdown, update_encoder, edge_idx[sel]


def _run(g, cfg, conditional, resume_state=None, stop_epoch=None):
    cfg.validate()
    if g.num_edges == 0:
        raise ValueError("graph has no edges to sparsify")
    train_mask = g.mask("train")
    if not np.any(train_mask):
        raise ValueError("graph has an empty train split")
    val_mask = g.mask("val")
    test_mask = g.mask("test")
    if not np.any(val_mask):
        raise ValueError("graph has an empty val split (needed for checkpointing)")

    prior = compute_prior(g)
    partition = partition_graph(g, cfg.edge_cap, seed=cfg.seed, prior=prior)
    schedule = AnnealSchedule(cfg.t_start, cfg.t_min, cfg.max_epochs)
    state = resume_state if resume_state is not None else init_state(g, cfg)
    start_epoch = state.epoch if resume_state is not None else 0
    if state.epochs_to_converge is not None or state.epochs_since_improve >= cfg.patience:
        return state, []  # run already stopped; nothing left to do
    end_epoch = cfg.max_epochs if stop_epoch is None else min(stop_epoch, cfg.max_epochs)

    history = []
    for epoch in range(start_epoch, end_epoch):
        temperature = anneal_temperature(schedule, epoch)
        losses = []
        chosen = []
        encoder_updated = False
        for pid, edge_idx in enumerate(partition.part_edges):
            if edge_idx.size == 0:
                continue
            part_mask = train_mask & (partition.node_part == pid)
            if partition.num_parts == 1 or not np.any(part_mask):
                part_mask = train_mask
            breakdown, updated, sel_idx = _part_train_step(
                state, g, cfg, temperature, epoch, pid,
                edge_idx, partition.part_priors[pid], part_mask, conditional,
            )
            losses.append(breakdown)
            chosen.append(sel_idx)
            encoder_updated = encoder_updated or updated

        mean_total = float(np.mean([b.total for b in losses]))
        state.loss_tail = (state.loss_tail + [mean_total])[-5:]

        pred, val_ce = _eval_epoch(state, g, val_mask)
        sub_h = subgraph_edge_homophily(g, np.concatenate(chosen))
        em = EpochMetrics(
            epoch=epoch,
            total=mean_total,
            ce=float(np.mean([b.ce for b in losses])),
            assor=float(np.mean([b.assor for b in losses])),
            cons=float(np.mean([b.cons for b in losses])),
            train_micro_f1=micro_f1(pred, g.labels, train_mask),
            train_macro_f1=macro_f1(pred, g.labels, train_mask),
            val_micro_f1=micro_f1(pred, g.labels, val_mask),
            val_macro_f1=macro_f1(pred, g.labels, val_mask),
            test_micro_f1=micro_f1(pred, g.labels, test_mask) if np.any(test_mask) else 0.0,
            test_macro_f1=macro_f1(pred, g.labels, test_mask) if np.any(test_mask) else 0.0,
            subgraph_edge_homophily=sub_h,
            temperature=temperature,
            encoder_updated=encoder_updated if conditional else True,
        )
        history.append(em)

        improved = em.val_micro_f1 > state.best_val_f1 or (
            em.val_micro_f1 == state.best_val_f1 and val_ce < state.best_val_ce)
        if improved:
            state.snapshot_best(temperature, em.val_micro_f1, val_ce, epoch)
            state.epochs_since_improve = 0
        else:
            state.epochs_since_improve += 1
        state.epoch = epoch + 1

        if state.epochs_to_converge is None and detect_convergence(state.loss_tail):
            state.epochs_to_converge = epoch + 1
            break
        if state.epochs_since_improve >= cfg.patience:
            break

    return state, history


def train(g, cfg, stop_epoch=None):
    """Standard training (joint encoder+GNN updates every part).

    stop_epoch interrupts the run early so it can be checkpointed and
    resumed; the annealing schedule still spans cfg.max_epochs.
    """
    return _run(g, cfg, conditional=False, stop_epoch=stop_epoch)


def train_conditional(g, cfg, stop_epoch=None):
    """Conditional updates: encoder steps only where it beats the prior."""
    return _run(g, cfg, conditional=True, stop_epoch=stop_epoch)


def resume(g, cfg, state, stop_epoch=None):
    """Continue a checkpointed run to completion under the same config."""
    return _run(g, cfg.validate(), conditional=cfg.conditional_updates,
                resume_state=state, stop_epoch=stop_epoch)


def infer_ensemble(state, g, cfg):
    """Mean of R subgraph forwards at the best temperature, then argmax."""
    if state.best_val_f1 < 0:
        raise ValueError("model state is untrained (no validation checkpoint)")
    cfg.validate()
    prior = compute_prior(g)
    partition = partition_graph(g, cfg.edge_cap, seed=cfg.seed, prior=prior)
    mean_y = np.zeros((g.num_nodes, g.num_classes))
    with state.use_best():
        scores = _score_all_edges(state, g, partition, cfg)
        dist = normalize(ad.Tensor(scores), cfg.normalize_mode, state.best_t)
        k = max(1, edge_budget(g.num_edges, cfg.q))
        with ad.no_grad():
            for r in range(cfg.ensemble_size):
                rng_r = _rng(cfg.seed, _INFER_TAG, r)
                if cfg.sampling == "gumbel_topk":
                    sel = sample_gumbel_topk(scores, k, state.best_t, rng_r)
                else:
                    sel = sample_without_replacement(dist.probs, k, rng_r)
                out = gcn_forward(state.gnn, g.edge_u[sel], g.edge_v[sel],
                                  scores[sel], g.features, g.num_nodes)
                mean_y += out.y_hat.value
    mean_y /= cfg.ensemble_size
    return mean_y, predict_labels(mean_y)


def sample_best_subgraph(state, g, cfg, q=None, seed=None):
    """One subgraph draw at best_T, for the standalone sparsifier path."""
    if state.best_val_f1 < 0:
        raise ValueError("model state is untrained (no validation checkpoint)")
    q = cfg.q if q is None else q
    prior = compute_prior(g)
    partition = partition_graph(g, cfg.edge_cap, seed=cfg.seed, prior=prior)
    with state.use_best():
        scores = _score_all_edges(state, g, partition, cfg)
    dist = normalize(ad.Tensor(scores), cfg.normalize_mode, state.best_t)
    k = max(1, edge_budget(g.num_edges, q))
    sel = sample_without_replacement(
        dist.probs, k, _rng(cfg.seed if seed is None else seed, _INFER_TAG, 0))
    from .sampler import build_subgraph

    return build_subgraph(g, sel, scores)


# ---------------------------------------------------------------------------
# metrics CSV and checkpoint container


def save_metrics_csv(history, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(EpochMetrics.CSV_COLUMNS + "\n")
        for em in history:
            f.write(em.csv_row() + "\n")


CHECKPOINT_MAGIC = b"SGSG"
CHECKPOINT_VERSION = 1


def _named_tensors(state):
    out = {}
    for p in state.parameters():
        out[p.name] = p.value
    for tag, opt in (("adam_enc", state.enc_opt), ("adam_gnn", state.gnn_opt)):
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            out[f"{tag}.m.{i}"] = m
            out[f"{tag}.v.{i}"] = v
        out[f"{tag}.t"] = np.array(float(opt.step_count))
    for name, arr in state.best_snapshot.items():
        out[f"best.{name}"] = arr
    out["meta.edge_w"] = state.edge_w
    if state.best_edge_w is not None:
        out["meta.best_edge_w"] = state.best_edge_w
    out["meta.scalars"] = np.array([
        state.best_t, state.best_val_f1, float(state.epoch),
        float(state.epochs_since_improve),
        -1.0 if state.epochs_to_converge is None else float(state.epochs_to_converge),
        float(state.best_epoch), state.best_val_ce,
    ])
    out["meta.loss_tail"] = np.asarray(state.loss_tail, dtype=np.float64)
    return out


def save_checkpoint(state, path):
    """Versioned binary container: magic, version, length-prefixed tensors."""
    tensors = _named_tensors(state)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(arr.tobytes())


def read_checkpoint_tensors(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
            n_items = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * n_items), dtype=np.float64)
            tensors[name] = data.reshape(shape).copy()
    return tensors


def load_checkpoint(path, g, cfg):
    """Rebuild a ModelState; shapes are cross-checked against graph and config."""
    tensors = read_checkpoint_tensors(path)
    state = init_state(g, cfg)
    for p in state.parameters():
        if p.name not in tensors:
            raise ValueError(f"checkpoint missing tensor {p.name}")
        if tensors[p.name].shape != p.value.shape:
            raise ValueError(
                f"checkpoint tensor {p.name} has shape {tensors[p.name].shape}, "
                f"expected {p.value.shape} (graph/config mismatch)"
            )
        p.value = tensors[p.name].copy()
    for tag, opt in (("adam_enc", state.enc_opt), ("adam_gnn", state.gnn_opt)):
        for i in range(len(opt.params)):
            opt.m[i] = tensors[f"{tag}.m.{i}"].copy()
            opt.v[i] = tensors[f"{tag}.v.{i}"].copy()
        opt.step_count = int(tensors[f"{tag}.t"].item())
    state.best_snapshot = {
        name[len("best."):]: arr.copy()
        for name, arr in tensors.items() if name.startswith("best.")
    }
    if tensors["meta.edge_w"].shape != (g.num_edges,):
        raise ValueError(
            f"checkpoint edge weights cover {tensors['meta.edge_w'].size} edges, "
            f"expected {g.num_edges} (graph mismatch)"
        )
    state.edge_w = tensors["meta.edge_w"].copy()
    if "meta.best_edge_w" in tensors:
        state.best_edge_w = tensors["meta.best_edge_w"].copy()
    scalars = tensors["meta.scalars"]
    state.best_t = float(scalars[0])
    state.best_val_f1 = float(scalars[1])
    state.epoch = int(scalars[2])
    state.epochs_since_improve = int(scalars[3])
    state.epochs_to_converge = None if scalars[4] < 0 else int(scalars[4])
    state.best_epoch = int(scalars[5])
    state.best_val_ce = float(scalars[6])
    state.loss_tail = tensors["meta.loss_tail"].tolist()
    return state
