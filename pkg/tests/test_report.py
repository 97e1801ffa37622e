import io
import json
import xml.etree.ElementTree as ET

import networkx as nx
import numpy as np
import pytest

from helpers import blob_csv, blob_truth

from thd.data import Group, Schema, ingest_csv, read_csv
from thd.engine import ThdNode, ThdParams, run_thd, trace_point_path, tree_statistics
from thd.mapper import Cluster, TopologicalNetwork, build_network
from thd.report import (
    Explainer,
    explain_individual,
    export_network,
    export_tree,
    import_tree,
    split_report,
    summarize_split,
)
from thd.stats import Direction


def test_root_summary(blob_tree):
    s = summarize_split(blob_tree, "1")
    assert s.size == 500 and s.parent_id is None
    assert s.label_distribution == {"A": 0.4, "B": 0.6}
    assert s.top == ()


def test_child_summary_names_shifted_coordinates(blob_tree):
    stats = tree_statistics(blob_tree)
    for node_id, expected in (("1.1", Direction.HIGHER), ("1.2", Direction.LOWER)):
        s = summarize_split(blob_tree, node_id)
        assert s.size == stats["nodes"][node_id]["size"]
        assert s.label_distribution == stats["nodes"][node_id]["label_distribution"]
        assert s.top and s.top[0].feature in {"x0", "x1", "x2"}
        assert s.top[0].direction is expected
        assert all(st.feature != "blob" for st in s.comparison.stats)


def test_leaf_like_its_complement_has_no_top_features():
    # a split between two halves of one distribution
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(400, 3))
    ds = read_csv("a,b,c\n" + "".join(",".join(repr(float(v)) for v in p) + "\n" for p in pts))
    tree = run_thd(ds, ThdParams(max_resolution=1))
    child = ThdNode("1.1", Group(range(0, 400, 2)), tree.root.history, tree.root.network)
    tree.root.children = [child, ThdNode("1.2", Group(range(1, 400, 2)), tree.root.history, tree.root.network)]
    assert summarize_split(tree, "1.1", alpha=0.01).top == ()


def test_explanation_follows_path(blob_tree):
    for row in (0, 199, 200, 499):
        trace = explain_individual(blob_tree, row, "B")
        path = trace_point_path(blob_tree, row)
        assert trace.path == path.nodes and trace.terminal == path.terminal
        if blob_truth(row) == "B":
            assert trace.verdict == "deny-leaning"
        else:
            assert trace.verdict == "grant-leaning"
        text = trace.text()
        assert any(f"x{i}" in text for i in range(3))
        assert all("blob" not in s for s in trace.reason_sentences())
        json.dumps(trace.to_dict())


def test_root_only_tree_is_neutral():
    ds = read_csv(blob_csv(0), Schema(label="blob"))
    tree = run_thd(ds, ThdParams(max_resolution=1, split_threshold=400))
    trace = explain_individual(tree, 3, "B")
    assert trace.path == ("1",) and trace.verdict == "neutral"
    assert "neutral" in trace.text()


def test_threshold_override(blob_tree):
    trace = explain_individual(blob_tree, 250, "B", threshold=1.0)
    assert trace.verdict == "neutral"
    trace = explain_individual(blob_tree, 250, "A", threshold=0.0)
    assert trace.verdict == "neutral"


def test_paper_style_verdict():
    # a final group with 88.5% risky rows against 52.2% overall
    lines = ["x,y"]
    lines += [f"{0.01 * i!r},Bad" for i in range(177)] + [f"{0.01 * i!r},Good" for i in range(23)]
    lines += [f"{100 + 0.01 * i!r},Bad" for i in range(84)] + [f"{100 + 0.01 * i!r},Good" for i in range(216)]
    ds = read_csv("\n".join(lines) + "\n", Schema(label="y"))
    tree = run_thd(ds, ThdParams(max_resolution=2))
    assert [len(c.group) for c in tree.root.children] == [300, 200]
    assert tree_statistics(tree)["nodes"]["1"]["label_distribution"]["Bad"] == pytest.approx(0.522)
    trace = explain_individual(tree, 0, "Bad")
    assert trace.final_distribution["Bad"] == pytest.approx(0.885)
    assert trace.verdict == "deny-leaning"


def test_tree_json_round_trip(blob_tree):
    text = export_tree(blob_tree, "json")
    again = import_tree(text, dataset=blob_tree.dataset)
    assert again == blob_tree
    assert export_tree(again, "json") == text


def test_import_rereads_source_and_checks_hash(tmp_path):
    path = tmp_path / "b.csv"
    path.write_text(blob_csv(3))
    ds = ingest_csv(path, Schema(label="blob"))
    tree = run_thd(ds, ThdParams(max_resolution=2))
    again = import_tree(export_tree(tree))
    assert again == tree and again.dataset.equals(ds)
    path.write_text(blob_csv(4))
    with pytest.raises(ValueError):
        import_tree(export_tree(tree))


def test_tree_dot(blob_tree):
    dot = export_tree(blob_tree, "dot")
    node_lines = [l for l in dot.splitlines() if "[label=" in l]
    edge_lines = [l for l in dot.splitlines() if "->" in l]
    assert len(node_lines) == 3 and len(edge_lines) == 2
    single = run_thd(read_csv("x\n" + "".join(f"{i}\n" for i in range(30))), ThdParams(max_resolution=1))
    assert len([l for l in export_tree(single, "dot").splitlines() if "[label=" in l]) == 1
    with pytest.raises(ValueError):
        export_tree(blob_tree, "yaml")


def parse_back(text, fmt):
    """Independent parsers: node and edge counts from each format."""
    if fmt == "json":
        doc = json.loads(text)
        return len(doc["nodes"]), len(doc["edges"])
    if fmt == "graphml":
        g = nx.read_graphml(io.StringIO(text))
        ns = {"g": "http://graphml.graphdrawing.org/xmlns"}
        root = ET.fromstring(text)
        assert len(root.findall(".//g:node", ns)) == g.number_of_nodes()
        return g.number_of_nodes(), g.number_of_edges()
    lines = text.splitlines()
    return sum(1 for l in lines if l.strip().startswith("n") and "--" not in l), sum("--" in l for l in lines)


@pytest.mark.parametrize("fmt", ["json", "graphml", "dot"])
def test_single_node_network(fmt):
    net = TopologicalNetwork([Cluster((0,), (0, 1, 2), 0)])
    assert parse_back(export_network(net, fmt), fmt) == (1, 0)


@pytest.mark.parametrize("fmt", ["json", "graphml", "dot"])
def test_random_network_counts(fmt):
    rng = np.random.default_rng(1)
    per_bin = [((b,), [tuple(sorted(rng.choice(30, size=5, replace=False).tolist()))]) for b in range(12)]
    net = build_network(per_bin)
    assert parse_back(export_network(net, fmt), fmt) == (len(net.nodes), len(net.edges))


def test_constant_coloring_is_uniform():
    ds = read_csv("c,x\n" + "".join(f"4.5,{i}\n" for i in range(10)))
    net = build_network([((0,), [(0, 1, 2)]), ((1,), [(2, 3, 4)]), ((2,), [(7, 8)])])
    doc = json.loads(export_network(net, "json", ds, "c"))
    assert {n["color"] for n in doc["nodes"]} == {4.5}
    g = nx.read_graphml(io.StringIO(export_network(net, "graphml", ds, "c")))
    assert {d["color"] for _, d in g.nodes(data=True)} == {4.5}
    dot = export_network(net, "dot", ds, "c")
    assert dot.count("color_value=4.5") == 3


def test_blob_split_network_has_two_components(blob_tree):
    g = nx.read_graphml(io.StringIO(export_network(blob_tree.root.network, "graphml")))
    assert nx.number_connected_components(g) == 2


def test_split_report_is_json(blob_tree):
    rep = split_report(blob_tree)
    assert [s["node"] for s in rep["splits"]] == ["1", "1.1", "1.2"]
    assert rep["statistics"]["node_count"] == 3
    json.dumps(rep)


def test_explainer_caches(blob_tree):
    ex = Explainer(blob_tree)
    assert ex.summary("1.1") is ex.summary("1.1")
