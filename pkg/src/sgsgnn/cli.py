"""Command-line front end: train, infer, sparsify, sweep, gen, theory-check.

Every command reads one flat config file, is deterministic given that
config, and writes post-hoc artifacts (CSV tables, JSON summaries,
checkpoints) into the configured output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .baselines import save_sweep_csv, sweep_sparsity
from .config import (
    build_graph,
    dump_defaults,
    floats_list,
    ints_list,
    parse_config,
    run_config_from,
    strs_list,
)
from .generators import balanced_labels, gen_homophily_controlled
from .graph import homophily_report, load_graph, make_graph, save_graph
from .metrics import macro_f1, micro_f1
from .sampler import export_subgraph_csv
from .theory import (
    check_adjacency_error,
    check_common_edge_bounds,
    check_gcn_embedding_error,
    lexicographic_edge_universe,
)
from .training import (
    TrainingDiverged,
    infer_ensemble,
    load_checkpoint,
    sample_best_subgraph,
    save_checkpoint,
    save_metrics_csv,
    train,
    train_conditional,
)

SUMMARY_SCHEMA_VERSION = 1


def _out_dir(config):
    path = config["out_dir"]
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _split_f1(pred, g):
    scores = {}
    for name in ("train", "val", "test"):
        mask = g.mask(name)
        if np.any(mask):
            scores[f"{name}_micro_f1"] = micro_f1(pred, g.labels, mask)
            scores[f"{name}_macro_f1"] = macro_f1(pred, g.labels, mask)
    return scores


def cmd_train(args):
    config = parse_config(args.config)
    g = build_graph(config)
    cfg = run_config_from(config)
    conditional = args.command == "train-conditional" or cfg.conditional_updates
    trainer = train_conditional if conditional else train
    state, history = trainer(g, cfg)
    out = _out_dir(config)
    save_metrics_csv(history, os.path.join(out, "metrics.csv"))
    save_checkpoint(state, os.path.join(out, "checkpoint.bin"))
    _, pred = infer_ensemble(state, g, cfg)
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "command": "train-conditional" if conditional else "train",
        "epochs_run": state.epoch,
        "epochs_to_converge": state.converged_epochs(),
        "best_epoch": state.best_epoch,
        "best_t": state.best_t,
        "best_val_f1": state.best_val_f1,
        "subgraph_edge_homophily_at_best":
            history[state.best_epoch].subgraph_edge_homophily if history else None,
    }
    summary.update(_split_f1(pred, g))
    _write_json(os.path.join(out, "summary.json"), summary)
    test = summary.get("test_micro_f1")
    shown = "n/a" if test is None else f"{test:.4f}"
    print(f"trained {state.epoch} epochs, best val F1 {state.best_val_f1:.4f} "
          f"at epoch {state.best_epoch}, test micro-F1 {shown}")
    print(f"artifacts in {out}")
    return 0


def cmd_infer(args):
    config = parse_config(args.config)
    g = build_graph(config)
    cfg = run_config_from(config)
    state = load_checkpoint(args.checkpoint, g, cfg)
    _, pred = infer_ensemble(state, g, cfg)
    out = _out_dir(config)
    with open(os.path.join(out, "predictions.csv"), "w", encoding="utf-8") as f:
        f.write("node_id,label\n")
        for node, label in enumerate(pred):
            f.write(f"{node},{label}\n")
    summary = {"schema_version": SUMMARY_SCHEMA_VERSION, "command": "infer",
               "ensemble_size": cfg.ensemble_size, "best_t": state.best_t}
    summary.update(_split_f1(pred, g))
    _write_json(os.path.join(out, "infer_summary.json"), summary)
    print(f"wrote predictions for {g.num_nodes} nodes to {out}")
    return 0


def cmd_sparsify(args):
    config = parse_config(args.config)
    g = build_graph(config)
    cfg = run_config_from(config)
    state = load_checkpoint(args.checkpoint, g, cfg)
    sub = sample_best_subgraph(state, g, cfg, q=args.q)
    out = _out_dir(config)
    export_subgraph_csv(sub, os.path.join(out, "subgraph.csv"))
    sub_graph = make_graph(g.num_nodes,
                           np.column_stack([sub.edge_u, sub.edge_v]),
                           g.features, g.labels, g.split, g.num_classes)
    report = homophily_report(sub_graph)
    _write_json(os.path.join(out, "subgraph_homophily.json"), {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "command": "sparsify",
        "q": cfg.q if args.q is None else args.q,
        "edges_kept": sub.k,
        "edges_total": g.num_edges,
        "node_homophily": report.node_homophily,
        "edge_homophily": report.edge_homophily,
        "adjusted_homophily": report.adjusted_homophily,
        "is_heterophilic": report.is_heterophilic,
    })
    print(f"kept {sub.k} of {g.num_edges} edges; "
          f"subgraph edge homophily {report.edge_homophily:.4f}")
    return 0


def _median_pivot(rows, method, hs, qs):
    lines = ["target_h," + ",".join(repr(float(q)) for q in qs)]
    for h in hs:
        cells = []
        for q in qs:
            vals = [r.test_micro_f1 for r in rows
                    if r.method == method and r.q == float(q)
                    and abs(r.target_h - h) < 1e-12]
            cells.append(repr(float(np.median(vals))) if vals else "")
        lines.append(repr(float(h)) + "," + ",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_sweep(args):
    config = parse_config(args.config)
    cfg = run_config_from(config)
    methods = strs_list(config["methods"])
    qs = floats_list(config["qs"])
    seeds = ints_list(config["seeds"])
    out = _out_dir(config)

    if config["generator"] == "homophily":
        hs = floats_list(config["gen_target_h"])
    else:
        hs = [None]
    tagged = []
    for h in hs:
        g = build_graph(config, target_h=h)
        rows = sweep_sparsity(g, methods, qs, seeds, cfg)
        name = "results.csv" if h is None else f"results_h{h:g}.csv"
        save_sweep_csv(rows, os.path.join(out, name))
        row_h = homophily_report(g).edge_homophily if h is None else h
        tagged.extend(_TaggedRow(row_h, row) for row in rows)
        print(f"swept {len(rows)} cells"
              + ("" if h is None else f" at target_h={h:g}"))

    pivot_hs = sorted({t.target_h for t in tagged})
    for method in methods:
        csv_text = _median_pivot(tagged, method, pivot_hs, qs)
        with open(os.path.join(out, f"pivot_{method}.csv"), "w",
                  encoding="utf-8") as f:
            f.write(csv_text)
    print(f"artifacts in {out}")
    return 0


class _TaggedRow:
    """Sweep row annotated with the homophily level it was run at."""

    def __init__(self, target_h, row):
        self.target_h = target_h
        self.method = row.method
        self.q = row.q
        self.test_micro_f1 = row.test_micro_f1


def cmd_gen(args):
    config = parse_config(args.config)
    g = build_graph(config)
    out = config["out_dir"]
    save_graph(g, out)
    report = homophily_report(g)
    _write_json(os.path.join(out, "homophily.json"), {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "command": "gen",
        "num_nodes": g.num_nodes,
        "num_edges": g.num_edges,
        "node_homophily": report.node_homophily,
        "edge_homophily": report.edge_homophily,
        "adjusted_homophily": report.adjusted_homophily,
        "is_heterophilic": report.is_heterophilic,
    })
    print(f"wrote graph ({g.num_nodes} nodes, {g.num_edges} edges, "
          f"edge homophily {report.edge_homophily:.4f}) to {out}")
    return 0


def _theory_graph(m, feature_dim, seed):
    num_nodes, edges = lexicographic_edge_universe(m)
    rng = np.random.default_rng([seed, 999])
    feats = rng.normal(size=(num_nodes, feature_dim))
    labels = np.zeros(num_nodes, dtype=np.int64)
    split = np.array(["train"] * num_nodes, dtype="U5")
    return make_graph(num_nodes, edges, feats, labels, split, 1)


def cmd_theory(args):
    config = parse_config(args.config)
    m = config["theory_num_edges"]
    k = config["theory_k"]
    seed = config["theory_seed"]
    rng = np.random.default_rng([seed, 1])
    uniform = np.full(m, 1.0 / m)
    hot = np.zeros(m)
    hot[0] = 1.0
    pairs = [("uniform", uniform, uniform), ("onehot", hot, hot)]
    for i in range(config["theory_pairs"]):
        pairs.append((f"dirichlet_{i}", rng.dirichlet(np.ones(m)),
                      rng.dirichlet(np.ones(m))))

    g = _theory_graph(m, config["theory_feature_dim"], seed)
    reports = {"common_edges": [], "adjacency": [], "embedding": []}
    for i, (name, p_star, p_tilde) in enumerate(pairs):
        rep = check_common_edge_bounds(
            p_star, p_tilde, k, config["theory_trials_overlap"], seed + i)
        reports["common_edges"].append({"pair": name, **rep.to_dict()})
        rep = check_adjacency_error(
            p_star, p_tilde, k, config["theory_trials_matrix"], seed + i)
        reports["adjacency"].append({"pair": name, **rep.to_dict()})
        rep = check_gcn_embedding_error(
            g, p_star, p_tilde, k, depth=config["theory_depth"],
            trials=config["theory_trials_matrix"], seed=seed + i,
            alpha=config["theory_alpha"])
        reports["embedding"].append({"pair": name, **rep.to_dict()})

    all_hold = all(r["holds"] for group in reports.values() for r in group)
    out = _out_dir(config)
    _write_json(os.path.join(out, "theory_report.json"), {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "command": "theory-check",
        "num_pairs": len(pairs),
        "k": k,
        "num_edges": m,
        "all_hold": all_hold,
        "reports": reports,
    })
    checked = sum(len(v) for v in reports.values())
    print(f"checked {checked} bounds over {len(pairs)} distribution pairs; "
          f"all hold: {all_hold}")
    return 0


def cmd_dump_defaults(args):
    dump_defaults()
    return 0


COMMANDS = {
    "train": cmd_train,
    "train-conditional": cmd_train,
    "infer": cmd_infer,
    "sparsify": cmd_sparsify,
    "sweep": cmd_sweep,
    "gen": cmd_gen,
    "theory-check": cmd_theory,
    "dump-defaults": cmd_dump_defaults,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sgsgnn",
        description="Learned graph sparsification with a downstream GCN.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, brief in (
        ("train", "train the sparsifier and GCN, write metrics and checkpoint"),
        ("train-conditional", "train with encoder updates gated on a prior baseline"),
        ("sweep", "run a (method, q, seed) grid and emit comparison CSVs"),
        ("gen", "generate a synthetic graph directory"),
        ("theory-check", "verify sampling bounds by Monte Carlo"),
    ):
        p = sub.add_parser(name, help=brief)
        p.add_argument("config", help="path to a key=value config file")
    for name, brief in (
        ("infer", "ensemble inference from a checkpoint"),
        ("sparsify", "export one sampled subgraph from a checkpoint"),
    ):
        p = sub.add_parser(name, help=brief)
        p.add_argument("config", help="path to a key=value config file")
        p.add_argument("--checkpoint", required=True,
                       help="checkpoint written by train")
        if name == "sparsify":
            p.add_argument("--q", type=float, default=None,
                           help="override the sparsity percent for this export")
    sub.add_parser("dump-defaults", help="print every config key and default")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
