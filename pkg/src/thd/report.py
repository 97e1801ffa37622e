"""Split summaries, per-row explanation traces, and tree/network exports."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from .data import Dataset, FeatureKind, Group, Schema, ingest_csv, label_distribution
from .engine import (
    OUTLIER,
    ResolutionRun,
    ThdNode,
    ThdParams,
    ThdTree,
    trace_point_path,
    tree_statistics,
)
from .mapper import Cluster, TopologicalNetwork
from .stats import Direction, FeatureStat, GroupComparison, StatKind, compare_groups, node_coloring

TREE_FORMAT = "thd-tree/1"
NETWORK_FORMAT = "thd-network/1"


def fmt(x: float) -> float:
    """Round to 6 significant digits for stable exports."""
    return float(f"{x:.6g}")


# -- split summaries ----------------------------------------------------------------


def phrase(stat: FeatureStat) -> str:
    """Fixed-template description of one feature difference.

    Continuous features compare medians when the group's sample is skewed
    (``|mean - median| > 0.5 * std``), means otherwise.
    """
    if stat.kind is StatKind.HYPERGEOMETRIC:
        word = "more often" if stat.direction is Direction.HIGHER else "less often"
        return f"{word} {stat.feature}={stat.level} than peers"
    g, b = stat.group_summary, stat.baseline_summary
    direction = stat.direction
    if g["std"] and abs(g["mean"] - g["median"]) > 0.5 * g["std"] and g["median"] != b["median"]:
        direction = Direction.HIGHER if g["median"] > b["median"] else Direction.LOWER
    return f"{direction.value} {stat.feature} than peers"


@dataclass(frozen=True)
class SplitSummary:
    node_id: str
    parent_id: str | None
    size: int
    label_distribution: dict[str, float] | None
    top: tuple[FeatureStat, ...] = ()
    comparison: GroupComparison | None = None

    @property
    def phrases(self) -> list[str]:
        return [phrase(s) for s in self.top]

    def to_dict(self) -> dict:
        return {
            "node": self.node_id,
            "parent": self.parent_id,
            "size": self.size,
            "label_distribution": (
                {k: fmt(v) for k, v in self.label_distribution.items()} if self.label_distribution else None
            ),
            "top": [
                {
                    "feature": s.name,
                    "kind": s.kind.value,
                    "statistic": fmt(s.statistic),
                    "p_value": float(f"{s.p_value:.6g}"),
                    "direction": s.direction.value,
                    "phrase": phrase(s),
                }
                for s in self.top
            ],
        }


def _distribution(dataset: Dataset, group: Group) -> dict[str, float] | None:
    if dataset.label is None:
        return None
    try:
        return label_distribution(dataset, group)
    except ValueError:
        return {}


def summarize_split(tree: ThdTree, node_id: str, alpha: float = 0.01, top_k: int = 5) -> SplitSummary:
    """Size, label distribution and distinguishing features of one node.

    A child is compared with the rest of its parent's group; the root only
    gets size and distribution.
    """
    node = tree.node(node_id)
    dataset = _require_dataset(tree)
    parent = tree.parent(node_id)
    dist = _distribution(dataset, node.group)
    if parent is None:
        return SplitSummary(node.id, None, len(node.group), dist)
    baseline = parent.group.minus(node.group)
    if len(baseline) == 0:
        return SplitSummary(node.id, parent.id, len(node.group), dist)
    comparison = compare_groups(
        dataset, node.group, baseline, node.id, f"{parent.id} minus {node.id}", alpha, top_k
    )
    return SplitSummary(
        node.id, parent.id, len(node.group), dist, tuple(comparison.significant()), comparison
    )


def _require_dataset(tree: ThdTree) -> Dataset:
    if tree.dataset is None:
        raise ValueError("tree has no dataset attached")
    return tree.dataset


# -- explanations -------------------------------------------------------------------


@dataclass(frozen=True)
class Hop:
    node_id: str
    size: int
    risky_fraction: float | None
    reasons: tuple[str, ...]
    stats: tuple[FeatureStat, ...]


@dataclass(frozen=True)
class ExplanationTrace:
    row: int
    path: tuple[str, ...]
    terminal: str
    hops: tuple[Hop, ...]
    final_distribution: dict[str, float] | None
    risky_level: str | None
    global_fraction: float | None
    verdict: str
    verdict_text: str

    def reason_sentences(self) -> list[str]:
        return [
            f"In group {h.node_id} ({h.size} rows): " + "; ".join(h.reasons) + "."
            for h in self.hops
            if h.reasons
        ]

    def text(self) -> str:
        lines = self.reason_sentences()
        if self.terminal == OUTLIER:
            lines.append(f"Dropped as an outlier at the split of group {self.path[-1]}.")
        lines.append(self.verdict_text)
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "row": self.row,
            "path": list(self.path),
            "terminal": self.terminal,
            "hops": [
                {
                    "node": h.node_id,
                    "size": h.size,
                    "risky_fraction": None if h.risky_fraction is None else fmt(h.risky_fraction),
                    "reasons": list(h.reasons),
                    "features": [s.name for s in h.stats],
                }
                for h in self.hops
            ],
            "final_distribution": (
                {k: fmt(v) for k, v in self.final_distribution.items()} if self.final_distribution else None
            ),
            "risky_level": self.risky_level,
            "global_fraction": None if self.global_fraction is None else fmt(self.global_fraction),
            "verdict": self.verdict,
            "text": self.text(),
        }


class Explainer:
    """Caches split summaries so many rows can be explained cheaply."""

    def __init__(self, tree: ThdTree, alpha: float = 0.01, top_k: int = 5, per_hop: int = 3):
        self.tree = tree
        self.alpha = alpha
        self.top_k = top_k
        self.per_hop = per_hop
        self._cache: dict[str, SplitSummary] = {}

    def summary(self, node_id: str) -> SplitSummary:
        if node_id not in self._cache:
            self._cache[node_id] = summarize_split(self.tree, node_id, self.alpha, self.top_k)
        return self._cache[node_id]

    def explain(self, row: int, risky_level: str | None = None, threshold: float | None = None) -> ExplanationTrace:
        dataset = _require_dataset(self.tree)
        path = trace_point_path(self.tree, row)
        root_dist = _distribution(dataset, self.tree.root.group)
        if risky_level is None and root_dist:
            risky_level = max(sorted(root_dist), key=lambda k: root_dist[k])
        global_fraction = root_dist.get(risky_level, 0.0) if root_dist is not None else None
        if threshold is None:
            threshold = global_fraction

        hops = []
        for node_id in path.nodes[1:]:
            s = self.summary(node_id)
            stats = s.top[: self.per_hop]
            frac = s.label_distribution.get(risky_level, 0.0) if s.label_distribution is not None else None
            hops.append(Hop(node_id, s.size, frac, tuple(phrase(x) for x in stats), stats))

        final = self.summary(path.last)
        final_dist = final.label_distribution
        if final_dist is None or threshold is None:
            verdict, text = "undetermined", "No label column: no verdict."
        else:
            frac = final_dist.get(risky_level, 0.0)
            if abs(frac - threshold) <= 1e-12:
                verdict = "neutral"
            elif frac > threshold:
                verdict = "deny-leaning"
            else:
                verdict = "grant-leaning"
            text = (
                f"Final group {path.last} has {frac:.1%} {risky_level} against "
                f"{threshold:.1%} overall: {verdict}."
            )
        return ExplanationTrace(
            row=int(row),
            path=path.nodes,
            terminal=path.terminal,
            hops=tuple(hops),
            final_distribution=final_dist,
            risky_level=risky_level,
            global_fraction=global_fraction,
            verdict=verdict,
            verdict_text=text,
        )


def explain_individual(
    tree: ThdTree, row: int, risky_level: str | None = None, threshold: float | None = None, alpha: float = 0.01
) -> ExplanationTrace:
    """Story of one row's path: up to three distinguishing features per hop
    and a verdict comparing the final group's risky-level fraction with the
    global one (or ``threshold``)."""
    return Explainer(tree, alpha).explain(row, risky_level, threshold)


# -- tree export --------------------------------------------------------------------


def _network_doc(net: TopologicalNetwork) -> dict:
    return {
        "nodes": [{"id": c.node_id, "bin": list(c.bin_index), "rows": list(c.rows)} for c in net.nodes],
        "edges": [[u, v, w] for (u, v), w in net.edges.items()],
    }


def _network_from_doc(doc: dict) -> TopologicalNetwork:
    nodes = [Cluster(tuple(n["bin"]), tuple(n["rows"]), n["id"]) for n in doc["nodes"]]
    edges = {(u, v): w for u, v, w in doc["edges"]}
    return TopologicalNetwork(nodes, edges)


def tree_to_dict(tree: ThdTree) -> dict:
    ds = tree.dataset
    dataset_doc = None
    if ds is not None:
        dataset_doc = {
            "source": ds.source,
            "sha256": ds.content_hash(),
            "rows": ds.n_rows,
            "schema": ds.schema.to_dict() if ds.schema else None,
        }
    nodes = []
    for n in tree.nodes():
        entry = {
            "id": n.id,
            "size": len(n.group),
            "rows": list(n.group.rows),
            "outliers": list(n.outliers.rows),
            "children": [c.id for c in n.children],
            "history": [
                {"resolution": h.resolution, "nodes": h.nodes, "edges": h.edges, "component_sizes": list(h.component_sizes)}
                for h in n.history
            ],
            "network": _network_doc(n.network),
        }
        if ds is not None and ds.label is not None:
            dist = _distribution(ds, n.group)
            entry["label_distribution"] = {k: fmt(v) for k, v in dist.items()}
        nodes.append(entry)
    return {
        "format": TREE_FORMAT,
        "params": tree.params.to_dict(),
        "fingerprint": tree.fingerprint,
        "dataset": dataset_doc,
        "nodes": nodes,
    }


def _tree_dot(tree: ThdTree) -> str:
    ds = tree.dataset
    lines = ["digraph thd {", "  node [shape=box];"]
    for n in tree.nodes():
        label = f"{n.id}\\nn={len(n.group)}"
        if ds is not None and ds.label is not None:
            dist = _distribution(ds, n.group)
            label += "\\n" + " ".join(f"{k} {v:.1%}" for k, v in sorted(dist.items()))
        if n.outliers:
            label += f"\\noutliers={len(n.outliers)}"
        lines.append(f'  "{n.id}" [label="{label}"];')
    for n in tree.nodes():
        for c in n.children:
            lines.append(f'  "{n.id}" -> "{c.id}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_tree(tree: ThdTree, format: str = "json") -> str:
    """Serialize a tree as lossless JSON or as a DOT skeleton."""
    if format == "json":
        return json.dumps(tree_to_dict(tree), indent=1, sort_keys=False) + "\n"
    if format == "dot":
        return _tree_dot(tree)
    raise ValueError(f"unknown tree format {format!r}")


def import_tree(text: str, dataset: Dataset | None = None, load_dataset: bool = True) -> ThdTree:
    """Rebuild a tree from :func:`export_tree` JSON.

    Without ``dataset`` the source file recorded in the document is re-read
    (when ``load_dataset``) and checked against the stored content hash.
    """
    doc = json.loads(text)
    if doc.get("format") != TREE_FORMAT:
        raise ValueError("not a THD tree document")
    params = ThdParams(**doc["params"])
    by_id = {}
    for entry in doc["nodes"]:
        by_id[entry["id"]] = ThdNode(
            id=entry["id"],
            group=Group(entry["rows"]),
            history=[
                ResolutionRun(h["resolution"], h["nodes"], h["edges"], tuple(h["component_sizes"]))
                for h in entry["history"]
            ],
            network=_network_from_doc(entry["network"]),
            outliers=Group(entry["outliers"]),
        )
    for entry in doc["nodes"]:
        by_id[entry["id"]].children = [by_id[c] for c in entry["children"]]
    ds_doc = doc.get("dataset")
    if dataset is None and load_dataset and ds_doc and ds_doc.get("source"):
        schema = Schema.from_dict(ds_doc["schema"]) if ds_doc.get("schema") else None
        dataset = ingest_csv(ds_doc["source"], schema)
    if dataset is not None and ds_doc and dataset.content_hash() != ds_doc["sha256"]:
        raise ValueError("dataset does not match the one the tree was built from")
    return ThdTree(params=params, root=by_id["1"], dataset=dataset, fingerprint=doc["fingerprint"])


# -- network export -----------------------------------------------------------------


def _feature_means(dataset: Dataset, rows: tuple[int, ...]) -> dict[str, float | None]:
    idx = np.asarray(rows, dtype=np.int64)
    out = {}
    for f in dataset.features:
        if f.kind is not FeatureKind.CONTINUOUS:
            continue
        values = dataset.columns[f.name][idx][~dataset.missing[f.name][idx]]
        out[f.name] = fmt(float(np.mean(values))) if len(values) else None
    return out


def export_network(
    net: TopologicalNetwork,
    format: str = "json",
    dataset: Dataset | None = None,
    coloring: str | None = None,
    level: str | None = None,
) -> str:
    """Write a network as GraphML, DOT or JSON.

    With ``coloring`` each node carries a ``color`` attribute equal to
    :func:`node_coloring` for that feature (rounded to 6 significant digits).
    """
    if format not in ("json", "graphml", "dot"):
        raise ValueError(f"unknown network format {format!r}")
    colors = None
    if coloring is not None:
        if dataset is None:
            raise ValueError("coloring needs the dataset")
        colors = {k: (None if v is None else fmt(v)) for k, v in node_coloring(dataset, net, coloring, level).items()}

    if format == "json":
        nodes = []
        for c in net.nodes:
            entry = {"id": c.node_id, "bin": list(c.bin_index), "size": len(c.rows), "rows": list(c.rows)}
            if dataset is not None:
                entry["means"] = _feature_means(dataset, c.rows)
            if colors is not None:
                entry["color"] = colors[c.node_id]
            nodes.append(entry)
        doc = {
            "format": NETWORK_FORMAT,
            "coloring": coloring,
            "nodes": nodes,
            "edges": [{"source": u, "target": v, "weight": w} for (u, v), w in net.edges.items()],
        }
        return json.dumps(doc, indent=1) + "\n"

    if format == "dot":
        lines = ["graph network {"]
        for c in net.nodes:
            attrs = f'label="{c.node_id} ({len(c.rows)})", size={len(c.rows)}'
            if colors is not None and colors[c.node_id] is not None:
                attrs += f", color_value={colors[c.node_id]!r}"
            lines.append(f"  n{c.node_id} [{attrs}];")
        for (u, v), w in net.edges.items():
            lines.append(f"  n{u} -- n{v} [weight={w}];")
        lines.append("}")
        return "\n".join(lines) + "\n"

    g = nx.Graph()
    for c in net.nodes:
        attrs = {"size": len(c.rows), "bin": " ".join(map(str, c.bin_index)), "rows": " ".join(map(str, c.rows))}
        if colors is not None and colors[c.node_id] is not None:
            attrs["color"] = colors[c.node_id]
        g.add_node(c.node_id, **attrs)
    for (u, v), w in net.edges.items():
        g.add_edge(u, v, weight=w)
    buf = io.BytesIO()
    nx.write_graphml(g, buf, encoding="utf-8")
    return buf.getvalue().decode("utf-8")


def split_report(tree: ThdTree, alpha: float = 0.01, top_k: int = 5) -> dict:
    """Summaries of every node, keyed by id, for the run artifacts."""
    explainer = Explainer(tree, alpha, top_k)
    stats = tree_statistics(tree)
    return {
        "statistics": {k: v for k, v in stats.items() if k != "nodes"},
        "splits": [explainer.summary(n.id).to_dict() for n in tree.nodes()],
    }


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
