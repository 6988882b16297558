"""Graph container, homophily measures, and directory round-trips."""

import json

import numpy as np
import pytest

from sgsgnn.graph import (
    Graph,
    adjusted_homophily,
    build_csr,
    canonical_edges,
    edge_homophily,
    homophily_report,
    load_graph,
    make_graph,
    node_homophily,
    save_graph,
    subgraph_edge_homophily,
)


def tiny(edges, labels, num_classes=None, features=None, split=None):
    n = len(labels)
    if num_classes is None:
        num_classes = int(max(labels)) + 1
    if features is None:
        features = np.zeros((n, 2))
    if split is None:
        split = ["train"] * n
    return make_graph(n, edges, features, labels, split, num_classes)


def random_graph(rng, n=None, p=0.3, classes=3):
    n = n or int(rng.integers(4, 30))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    if not pairs:
        pairs = [(0, 1)]
    labels = rng.integers(0, classes, size=n)
    feats = rng.standard_normal((n, 4))
    split = rng.choice(["train", "val", "test"], size=n).tolist()
    return make_graph(n, pairs, feats, labels, split, classes)


def test_canonical_edges_dedup_and_order():
    u, v = canonical_edges([(3, 1), (1, 3), (0, 2), (2, 0), (0, 1)])
    assert u.tolist() == [0, 0, 1]
    assert v.tolist() == [1, 2, 3]


def test_self_loop_rejected():
    with pytest.raises(ValueError, match="self-loop"):
        canonical_edges([(2, 2)])


def test_csr_matches_edge_list():
    rng = np.random.default_rng(0)
    for _ in range(100):
        g = random_graph(rng)
        deg = np.zeros(g.num_nodes, dtype=int)
        np.add.at(deg, g.edge_u, 1)
        np.add.at(deg, g.edge_v, 1)
        assert np.array_equal(g.degrees(), deg)
        for u in range(g.num_nodes):
            nbrs = set(g.neighbors(u).tolist())
            expect = {v for a, v in zip(g.edge_u, g.edge_v) if a == u}
            expect |= {a for a, v in zip(g.edge_u, g.edge_v) if v == u}
            assert nbrs == expect


def test_make_graph_validation():
    with pytest.raises(ValueError, match="outside"):
        tiny([(0, 5)], [0, 1])
    with pytest.raises(ValueError, match="label"):
        make_graph(2, [(0, 1)], np.zeros((2, 1)), [0, 7], ["train", "test"], 2)
    with pytest.raises(ValueError, match="split"):
        make_graph(2, [(0, 1)], np.zeros((2, 1)), [0, 1], ["train", "nope"], 2)
    with pytest.raises(ValueError, match="finite"):
        make_graph(2, [(0, 1)], np.array([[np.nan], [0.0]]), [0, 1], ["train", "test"], 2)


def test_node_homophily_triangle():
    # labels A,A,B: per-node ratios 1/2, 1/2, 0
    g = tiny([(0, 1), (1, 2), (0, 2)], [0, 0, 1])
    assert node_homophily(g) == pytest.approx(1.0 / 3.0)


def test_node_homophily_all_agree():
    g = tiny([(0, 1), (1, 2)], [1, 1, 1], num_classes=2)
    assert node_homophily(g) == 1.0


def test_node_homophily_skips_isolated():
    g = tiny([(0, 1)], [0, 0, 1], num_classes=2)
    assert node_homophily(g) == 1.0


def test_edge_homophily_triangle():
    g = tiny([(0, 1), (1, 2), (0, 2)], [0, 0, 1])
    assert edge_homophily(g) == pytest.approx(1.0 / 3.0)


def test_edge_homophily_single_class():
    g = tiny([(0, 1), (1, 2)], [0, 0, 0], num_classes=1)
    assert edge_homophily(g) == 1.0


def test_edge_homophily_empty_rejected():
    g = tiny([], [0, 1])
    with pytest.raises(ValueError, match="empty"):
        edge_homophily(g)


def test_adjusted_homophily_single_class_convention():
    g = tiny([(0, 1), (1, 2)], [0, 0, 0], num_classes=1)
    assert adjusted_homophily(g) == 0.0


def test_adjusted_homophily_four_cycle():
    # A,B,A,B alternating: h_e = 0, both class degree masses = 4 of 8
    g = tiny([(0, 1), (1, 2), (2, 3), (0, 3)], [0, 1, 0, 1])
    chance = 2 * (4.0 / 8.0) ** 2
    expect = (0.0 - chance) / (1.0 - chance)
    assert adjusted_homophily(g) == pytest.approx(expect)
    assert homophily_report(g).is_heterophilic


def test_heterophily_threshold():
    rng = np.random.default_rng(5)
    for _ in range(20):
        g = random_graph(rng)
        rep = homophily_report(g)
        assert rep.is_heterophilic == (rep.adjusted_homophily <= 0.5)


def test_subgraph_edge_homophily():
    g = tiny([(0, 1), (1, 2), (0, 2)], [0, 0, 1])
    assert subgraph_edge_homophily(g, [0]) == 1.0
    assert subgraph_edge_homophily(g, [1, 2]) == 0.0
    with pytest.raises(ValueError, match="empty"):
        subgraph_edge_homophily(g, [])
    with pytest.raises(ValueError, match="range"):
        subgraph_edge_homophily(g, [99])


def test_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(2)
    for i in range(100):
        g = random_graph(rng)
        d = tmp_path / f"g{i}"
        save_graph(g, d)
        h = load_graph(d)
        assert h.num_nodes == g.num_nodes
        assert h.num_classes == g.num_classes
        assert np.array_equal(h.edge_u, g.edge_u)
        assert np.array_equal(h.edge_v, g.edge_v)
        assert np.array_equal(h.labels, g.labels)
        assert np.array_equal(h.split, g.split)
        assert np.allclose(h.features, g.features, atol=1e-12, rtol=0)
        assert np.array_equal(h.csr_offsets, g.csr_offsets)
        assert np.array_equal(h.csr_targets, g.csr_targets)


def test_load_errors(tmp_path):
    g = tiny([(0, 1)], [0, 1])
    d = tmp_path / "g"
    save_graph(g, d)
    (d / "edges.csv").write_text("0,1\n1\n")
    with pytest.raises(ValueError, match="expected 'u,v'"):
        load_graph(d)
    (d / "edges.csv").write_text("0,9\n")
    with pytest.raises(ValueError, match="outside"):
        load_graph(d)
    (d / "edges.csv").unlink()
    with pytest.raises(FileNotFoundError, match="edges.csv"):
        load_graph(d)


def test_meta_is_authoritative(tmp_path):
    g = tiny([(0, 1)], [0, 1])
    d = tmp_path / "g"
    save_graph(g, d)
    meta = json.loads((d / "meta.json").read_text())
    meta["num_nodes"] = 5
    (d / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ValueError):
        load_graph(d)


def test_graph_arrays_immutable():
    g = tiny([(0, 1)], [0, 1])
    with pytest.raises(ValueError):
        g.edge_u[0] = 5
    with pytest.raises(ValueError):
        g.features[0, 0] = 1.0
