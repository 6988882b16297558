"""Flat key=value experiment configs with typed values and strict keys.

A config file is plain text: one `key = value` per line, `#` or `;`
comments, blank lines, and optional cosmetic `[section]` headers that
do not nest the namespace. Every key has a documented default; unknown
keys are rejected rather than silently ignored.
"""

from __future__ import annotations

import dataclasses
import sys

from .generators import balanced_labels, gen_homophily_controlled, gen_moon_graph
from .graph import load_graph
from .training import RunConfig

# keys beyond the RunConfig fields: graph source, orchestration, theory harness
EXTRA_DEFAULTS = {
    "graph_dir": "",
    "generator": "",
    "gen_nodes": 150,
    "gen_classes": 2,
    "gen_degree": 10,
    "gen_target_h": "0.5",
    "gen_feature_dim": 16,
    "gen_noise": 0.05,
    "gen_k_nn": 3,
    "gen_bridge_fraction": 0.68,
    "gen_seed": 0,
    "gen_split": "",
    "out_dir": "runs/latest",
    "methods": "sgs",
    "qs": "20",
    "seeds": "0",
    "theory_num_edges": 50,
    "theory_k": 10,
    "theory_trials_overlap": 100_000,
    "theory_trials_matrix": 1000,
    "theory_pairs": 100,
    "theory_depth": 16,
    "theory_alpha": 0.9,
    "theory_feature_dim": 8,
    "theory_seed": 0,
}


def config_schema():
    """All known keys mapped to their typed default values."""
    schema = {f.name: f.default for f in dataclasses.fields(RunConfig)}
    schema.update(EXTRA_DEFAULTS)
    return schema


def _parse_value(key, raw, default):
    if isinstance(default, bool):
        if raw.lower() in ("true", "false"):
            return raw.lower() == "true"
        raise ValueError(f"key '{key}' expects true or false, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ValueError(
            f"key '{key}' expects {type(default).__name__}, got {raw!r}"
        ) from None
    return raw


def parse_config(path):
    """Read a config file into a typed dict with defaults filled in."""
    schema = config_schema()
    values = dict(schema)
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith(("#", ";")):
                continue
            if text.startswith("[") and text.endswith("]"):
                continue  # cosmetic section header
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {text!r}")
            key, _, raw = text.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in schema:
                raise ValueError(f"{path}:{lineno}: unknown config key '{key}'")
            values[key] = _parse_value(key, raw, schema[key])
    return values


def dump_defaults(stream=None):
    stream = sys.stdout if stream is None else stream
    for key, default in config_schema().items():
        if isinstance(default, bool):
            default = "true" if default else "false"
        stream.write(f"{key} = {default}\n")


def run_config_from(config):
    """Extract the training protocol settings from a parsed config."""
    names = {f.name for f in dataclasses.fields(RunConfig)}
    return RunConfig(**{k: v for k, v in config.items() if k in names}).validate()


def floats_list(raw):
    return [float(tok) for tok in str(raw).split(",") if tok.strip()]


def ints_list(raw):
    return [int(tok) for tok in str(raw).split(",") if tok.strip()]


def strs_list(raw):
    return [tok.strip() for tok in str(raw).split(",") if tok.strip()]


def _split_kwargs(config):
    if not config["gen_split"]:
        return {}
    fracs = floats_list(config["gen_split"])
    if len(fracs) != 3:
        raise ValueError("gen_split expects three comma-separated fractions")
    return {"split_fractions": tuple(fracs)}


def build_graph(config, target_h=None):
    """Load or generate the graph a command should run on."""
    if config["graph_dir"]:
        return load_graph(config["graph_dir"])
    kind = config["generator"]
    if kind == "homophily":
        if target_h is None:
            hs = floats_list(config["gen_target_h"])
            if len(hs) != 1:
                raise ValueError(
                    "this command expects a single gen_target_h "
                    f"(got {config['gen_target_h']!r}); lists are for sweep")
            target_h = hs[0]
        labels = balanced_labels(config["gen_nodes"], config["gen_classes"])
        return gen_homophily_controlled(
            labels, degree=config["gen_degree"], target_h=target_h,
            feature_dim=config["gen_feature_dim"], seed=config["gen_seed"],
            **_split_kwargs(config))
    if kind == "moon":
        return gen_moon_graph(
            config["gen_nodes"], config["gen_noise"], config["gen_k_nn"],
            config["gen_bridge_fraction"], config["gen_seed"],
            **_split_kwargs(config))
    raise ValueError("config must set graph_dir or generator = homophily|moon")
