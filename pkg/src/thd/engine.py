"""Topological hierarchical decomposition: rerun MAPPER at increasing
resolution until the network splits, then recurse on each large component."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from .data import Dataset, Group, label_distribution
from .geometry import LENSES
from .mapper import CoverParams, TopologicalNetwork, connected_components, mapper_from_geometry, prepare_geometry

logger = logging.getLogger(__name__)

OUTLIER = "outlier"
LEAF = "leaf"


@dataclass(frozen=True)
class ThdParams:
    initial_resolution: int = 1
    resolution_increment: int = 1
    gain: float = 2.7
    split_threshold: int = 20
    max_resolution: int = 100
    metric: str = "vne"
    lens: str = "mds"
    k_neighbors: int = 15
    histogram_bins: int = 10

    def __post_init__(self):
        for name in ("initial_resolution", "resolution_increment", "split_threshold", "k_neighbors", "histogram_bins"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
        if self.max_resolution < self.initial_resolution:
            raise ValueError("max_resolution must be >= initial_resolution")
        if not self.gain >= 1:
            raise ValueError(f"gain must be >= 1, got {self.gain}")
        if self.metric not in ("vne", "euclidean"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.lens not in LENSES:
            raise ValueError(f"unknown lens {self.lens!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ResolutionRun:
    resolution: int
    nodes: int
    edges: int
    component_sizes: tuple[int, ...]


@dataclass(eq=True)
class ThdNode:
    id: str
    group: Group
    history: list[ResolutionRun]
    network: TopologicalNetwork
    children: list["ThdNode"] = field(default_factory=list)
    outliers: Group = field(default_factory=lambda: Group(()))

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def resolution(self) -> int:
        """Resolution of the run this node terminated at."""
        return self.history[-1].resolution

    @property
    def depth(self) -> int:
        return self.id.count(".")

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass(eq=False)
class ThdTree:
    params: ThdParams
    root: ThdNode
    dataset: Dataset | None
    fingerprint: str

    def __eq__(self, other):
        return (
            isinstance(other, ThdTree)
            and self.params == other.params
            and self.fingerprint == other.fingerprint
            and self.root == other.root
        )

    def nodes(self) -> list[ThdNode]:
        return list(self.root.walk())

    def node(self, node_id: str) -> ThdNode:
        for node in self.root.walk():
            if node.id == node_id:
                return node
        raise KeyError(f"unknown node {node_id!r}")

    def parent(self, node_id: str) -> ThdNode | None:
        if "." not in node_id:
            return None
        return self.node(node_id.rsplit(".", 1)[0])


def fingerprint(params: ThdParams, dataset: Dataset) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(params.to_dict(), sort_keys=True).encode())
    h.update(dataset.content_hash().encode())
    return h.hexdigest()


@dataclass
class _Outcome:
    history: list[ResolutionRun]
    network: TopologicalNetwork
    child_groups: list[Group]
    outliers: Group


def _decompose(dataset: Dataset, group: Group, params: ThdParams) -> _Outcome:
    """Search resolutions for the first split of one group."""
    geom = prepare_geometry(dataset, group, params.metric, params.lens, params.k_neighbors)
    t = params.split_threshold
    history = []
    n = params.initial_resolution
    while True:
        net = mapper_from_geometry(geom, CoverParams(n, params.gain), params.histogram_bins)
        comps = connected_components(net)
        history.append(ResolutionRun(n, len(net.nodes), len(net.edges), tuple(len(r) for _, r in comps)))
        big = [rows for _, rows in comps if len(rows) >= t]
        if len(big) >= 2:
            small = [r for _, rows in comps if len(rows) < t for r in rows]
            return _Outcome(history, net, [Group(rows) for rows in big], Group(small))
        # a group below 2t rows can never produce two components of t rows
        if len(group) < 2 * t or n + params.resolution_increment > params.max_resolution:
            return _Outcome(history, net, [], Group(()))
        n += params.resolution_increment


def run_thd(dataset: Dataset, params: ThdParams | None = None, threads: int = 1) -> ThdTree:
    """Build the THD tree of ``dataset``.

    Each node reruns MAPPER from the initial resolution, stepping the
    resolution until at least two connected components hold
    ``split_threshold`` rows or more.  Those components become children
    (named by descending size); rows of the smaller components are the
    node's outliers.  A node that reaches ``max_resolution`` without a split
    is a leaf.

    Sibling subtrees are processed in waves; ``threads`` bounds the worker
    pool and never changes the result.
    """
    params = params or ThdParams()
    if dataset.n_rows < params.split_threshold:
        raise ValueError(
            f"dataset has {dataset.n_rows} rows, fewer than split threshold {params.split_threshold}"
        )
    root = ThdNode(id="1", group=dataset.all_rows(), history=[], network=TopologicalNetwork([]))
    wave = [root]
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    work = lambda node: _decompose(dataset, node.group, params)  # noqa: E731
    try:
        while wave:
            outcomes = list(pool.map(work, wave)) if pool else [work(node) for node in wave]
            nxt = []
            for node, out in zip(wave, outcomes):
                node.history = out.history
                node.network = out.network
                node.outliers = out.outliers
                node.children = [
                    ThdNode(id=f"{node.id}.{k}", group=g, history=[], network=TopologicalNetwork([]))
                    for k, g in enumerate(out.child_groups, start=1)
                ]
                if node.children:
                    logger.info(
                        "node %s split at N=%d into %s (+%d outliers)",
                        node.id, node.resolution, [len(c.group) for c in node.children], len(node.outliers),
                    )
                nxt.extend(node.children)
            wave = nxt
    finally:
        if pool:
            pool.shutdown()
    return ThdTree(params=params, root=root, dataset=dataset, fingerprint=fingerprint(params, dataset))


@dataclass(frozen=True)
class PointPath:
    row: int
    nodes: tuple[str, ...]
    terminal: str  # LEAF or OUTLIER

    @property
    def last(self) -> str:
        return self.nodes[-1]


def trace_point_path(tree: ThdTree, row: int) -> PointPath:
    """Node ids from the root down to the deepest node holding ``row``.

    ``terminal`` is ``"outlier"`` when the row was dropped at the last node's
    split, ``"leaf"`` otherwise.
    """
    if row not in tree.root.group:
        raise ValueError(f"invalid row id {row}")
    path = [tree.root.id]
    node = tree.root
    while node.children:
        for child in node.children:
            if row in child.group:
                node = child
                path.append(child.id)
                break
        else:
            if row not in node.outliers:
                raise RuntimeError(f"row {row} lost at node {node.id}")
            return PointPath(int(row), tuple(path), OUTLIER)
    return PointPath(int(row), tuple(path), LEAF)


def tree_statistics(tree: ThdTree) -> dict:
    nodes = tree.nodes()
    leaves = [n for n in nodes if n.is_leaf]
    has_label = tree.dataset is not None and tree.dataset.label is not None
    per_node = {}
    for n in nodes:
        entry = {
            "size": len(n.group),
            "depth": n.depth,
            "resolution": n.resolution,
            "outliers": len(n.outliers),
            "children": [c.id for c in n.children],
        }
        if has_label:
            try:
                entry["label_distribution"] = label_distribution(tree.dataset, n.group)
            except ValueError:
                entry["label_distribution"] = {}
        per_node[n.id] = entry
    return {
        "node_count": len(nodes),
        "leaf_count": len(leaves),
        "max_depth": max(n.depth for n in nodes),
        "total_outliers": sum(len(n.outliers) for n in nodes),
        "leaf_rows": sum(len(n.group) for n in leaves),
        "root_size": len(tree.root.group),
        "nodes": per_node,
    }
