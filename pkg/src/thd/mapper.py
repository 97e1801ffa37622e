"""MAPPER: interval cover of filter space, per-bin single-linkage clustering,
and the 1-skeleton of the nerve of the resulting cover."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .data import AnalysisMatrix, Dataset, Group, analysis_matrix
from .geometry import DistanceMatrix, FilterValues, apply_lens, pairwise_distances


@dataclass(frozen=True)
class CoverParams:
    resolution: int
    gain: float

    def __post_init__(self):
        if int(self.resolution) != self.resolution or self.resolution < 1:
            raise ValueError(f"resolution must be a positive integer, got {self.resolution}")
        if not self.gain >= 1:
            raise ValueError(f"gain must be >= 1, got {self.gain}")

    @property
    def overlap(self) -> float:
        return 1.0 - 1.0 / self.gain


@dataclass(frozen=True)
class Bin:
    index: tuple[int, ...]
    center: tuple[float, ...]
    half_width: tuple[float, ...]

    def bounds(self) -> list[tuple[float, float]]:
        return [(c - e, c + e) for c, e in zip(self.center, self.half_width)]


@dataclass(frozen=True)
class Cluster:
    bin_index: tuple[int, ...]
    rows: tuple[int, ...]
    node_id: int


@dataclass(frozen=True)
class _Axis:
    lo: float
    span: float
    n_bins: int


def _axes(filt: FilterValues, params: CoverParams) -> list[_Axis]:
    axes = []
    for j in range(filt.dim):
        col = filt.coords[:, j]
        lo, hi = float(col.min()), float(col.max())
        span = hi - lo
        axes.append(_Axis(lo, span, params.resolution if span > 0 else 1))
    return axes


def build_cover(filt: FilterValues, params: CoverParams) -> list[Bin]:
    """Evenly spaced overlapping bins over the bounding box of the filter.

    Per dimension the base intervals of width ``range/N`` tile the range and
    each bin extends to ``(range/N) * g / 2`` either side of its center.  A
    dimension with zero range collapses to a single zero-width bin.
    """
    if filt.n == 0:
        raise ValueError("empty filter")
    per_dim = []
    for ax in _axes(filt, params):
        if ax.span == 0:
            per_dim.append([(0, ax.lo, 0.0)])
            continue
        width = ax.span / ax.n_bins
        eps = width * params.gain / 2
        per_dim.append([(i, ax.lo + (i + 0.5) * width, eps) for i in range(ax.n_bins)])
    bins = []
    for combo in itertools.product(*per_dim):
        bins.append(
            Bin(
                index=tuple(c[0] for c in combo),
                center=tuple(c[1] for c in combo),
                half_width=tuple(c[2] for c in combo),
            )
        )
    return bins


def _memberships(filt: FilterValues, params: CoverParams) -> dict[tuple[int, ...], np.ndarray]:
    """Map non-empty bin index -> positions of the points it contains.

    Works in units of the base interval: with ``u = N (x - min) / range`` a
    point lies in bin ``i`` iff ``|u - (i + 1/2)| <= g/2``.  Comparisons are
    closed, so the extreme points (u = 0 and u = N) always land in a bin.
    """
    half = params.gain / 2
    width = int(np.ceil(params.gain)) + 3
    index_grids, valid_grids = [], []
    for j, ax in enumerate(_axes(filt, params)):
        if ax.span == 0:
            cand = np.zeros((filt.n, 1), dtype=np.int64)
            ok = np.ones((filt.n, 1), dtype=bool)
        else:
            u = ax.n_bins * ((filt.coords[:, j] - ax.lo) / ax.span)
            start = np.ceil(u - 0.5 - half).astype(np.int64) - 1
            cand = start[:, None] + np.arange(width)[None, :]
            ok = (cand >= 0) & (cand < ax.n_bins) & (np.abs(u[:, None] - (cand + 0.5)) <= half)
        index_grids.append(cand)
        valid_grids.append(ok)
    # outer product over dimensions: (n, w1, w2, ...)
    d = len(index_grids)
    shape = [filt.n] + [g.shape[1] for g in index_grids]
    valid = np.ones(shape, dtype=bool)
    indices = []
    for j, (cand, ok) in enumerate(zip(index_grids, valid_grids)):
        view = [filt.n] + [1] * d
        view[j + 1] = cand.shape[1]
        valid &= ok.reshape(view)
        indices.append(np.broadcast_to(cand.reshape(view), shape))
    points = np.broadcast_to(np.arange(filt.n).reshape([filt.n] + [1] * d), shape)[valid]
    coords = [ix[valid] for ix in indices]
    order = np.lexsort([points] + coords[::-1])
    points = points[order]
    coords = np.column_stack([c[order] for c in coords])
    if len(points) == 0:
        return {}
    change = np.flatnonzero(np.any(coords[1:] != coords[:-1], axis=1)) + 1
    bounds = np.concatenate([[0], change, [len(points)]])
    return {
        tuple(int(x) for x in coords[a]): points[a:b].copy() for a, b in zip(bounds[:-1], bounds[1:])
    }


def assign_bins(filt: FilterValues, bins: Sequence[Bin]) -> list[np.ndarray]:
    """Positions of the filter points lying in each bin, in ``bins`` order.

    Membership uses closed comparison against each bin's bounds, widened by
    a few ulps of the filter's magnitude so that points on a shared bin edge
    or on the bounding box are not lost to rounding.
    """
    out = []
    coords = filt.coords
    slack = 8 * np.finfo(float).eps * np.maximum(np.abs(coords).max(axis=0), 1.0)
    for b in bins:
        inside = np.ones(filt.n, dtype=bool)
        for j, (c, e) in enumerate(zip(b.center, b.half_width)):
            inside &= np.abs(coords[:, j] - c) <= e + slack[j]
        out.append(np.flatnonzero(inside))
    return out


# -- clustering -----------------------------------------------------------------


@dataclass(frozen=True)
class Merge:
    distance: float
    a: int
    b: int


def single_linkage(rows: Sequence[int], d: DistanceMatrix) -> list[Merge]:
    """Single-linkage merge sequence over ``rows``.

    Computed as a minimum spanning tree with Prim's algorithm (first index
    wins on ties), then sorted by ``(distance, min row, max row)``.  ``rows``
    index into ``d``; merges report those same indices.
    """
    rows = np.asarray(rows, dtype=np.int64)
    m = len(rows)
    if m == 0:
        raise ValueError("single_linkage needs at least one row")
    if m == 1:
        return []
    if m <= SMALL_BIN:
        found = _prim_small(d.submatrix(rows).tolist(), rows.tolist())
    else:
        found = _prim(rows, d)
    merges = [Merge(dist, min(a, b), max(a, b)) for dist, a, b in found]
    merges.sort(key=lambda mg: (mg.distance, mg.a, mg.b))
    return merges


# below this many rows, list loops beat per-step numpy calls
SMALL_BIN = 64


def _prim_small(sub: list[list[float]], rows: list[int]) -> list[tuple[float, int, int]]:
    m = len(rows)
    in_tree = [False] * m
    best = [float("inf")] * m
    parent = [0] * m
    found = []
    current = 0
    in_tree[0] = True
    for _ in range(m - 1):
        dist = sub[current]
        best[current] = float("inf")
        nxt, low = -1, float("inf")
        for j in range(m):
            if in_tree[j]:
                continue
            if dist[j] < best[j]:
                best[j] = dist[j]
                parent[j] = current
            # strict < keeps the first index on ties, as argmin does
            if best[j] < low or nxt < 0:
                nxt, low = j, best[j]
        found.append((low, rows[parent[nxt]], rows[nxt]))
        in_tree[nxt] = True
        current = nxt
    return found


def _prim(rows: np.ndarray, d: DistanceMatrix) -> list[tuple[float, int, int]]:
    m = len(rows)
    sub = d.submatrix(rows) if m <= 2048 else None
    in_tree = np.zeros(m, dtype=bool)
    best = np.full(m, np.inf)
    parent = np.zeros(m, dtype=np.int64)
    found = []
    current = 0
    in_tree[0] = True
    for _ in range(m - 1):
        dist = sub[current] if sub is not None else d.row(int(rows[current]), rows)
        closer = (~in_tree) & (dist < best)
        best[closer] = dist[closer]
        parent[closer] = current
        best[current] = np.inf
        nxt = int(np.argmin(best))
        found.append((float(best[nxt]), int(rows[parent[nxt]]), int(rows[nxt])))
        in_tree[nxt] = True
        current = nxt
    return found


def gap_cutoff(distances: Sequence[float], histogram_bins: int = 10) -> float:
    """Cut height from the first empty histogram bin of the merge distances.

    The histogram spans ``[0, max]`` with equal-width bins.  Empty bins below
    the smallest merge distance are not gaps; the first empty bin above it
    gives the cut at its lower edge.  Returns ``inf`` when there is no gap.
    """
    if histogram_bins < 1:
        raise ValueError("histogram_bins must be >= 1")
    # plain floats: bins are usually a handful of rows and numpy calls dominate
    dist = [float(x) for x in distances]
    if not dist:
        return np.inf
    top = max(dist)
    if top <= 0:
        return np.inf
    # bin k holds [k w, (k+1) w); the top bin is closed
    counts = [0] * histogram_bins
    for x in dist:
        counts[min(int(x / top * histogram_bins), histogram_bins - 1)] += 1
    first = next(k for k, c in enumerate(counts) if c)
    for k in range(first, histogram_bins):
        if counts[k] == 0:
            return top * k / histogram_bins
    return np.inf


def cut_by_gap(merges: Sequence[Merge], rows: Sequence[int], histogram_bins: int = 10) -> list[tuple[int, ...]]:
    """Clusters as connected components of the merges below the gap cut.

    Clusters come back sorted by their smallest row.
    """
    rows = sorted(int(r) for r in rows)
    if len(merges) <= 1:
        # a single merge distance never leaves an empty bin above itself
        return [tuple(rows)]
    cut = gap_cutoff([mg.distance for mg in merges], histogram_bins)
    parent = {r: r for r in rows}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for mg in merges:
        if mg.distance < cut:
            ra, rb = find(mg.a), find(mg.b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for r in rows:
        groups.setdefault(find(r), []).append(r)
    return sorted((tuple(g) for g in groups.values()), key=lambda g: g[0])


# -- nerve ------------------------------------------------------------------------


class TopologicalNetwork:
    """1-skeleton of the nerve: clusters as nodes, shared rows as edges."""

    def __init__(self, nodes: Sequence[Cluster], edges: dict[tuple[int, int], int] | None = None):
        self.nodes = list(nodes)
        for i, node in enumerate(self.nodes):
            if node.node_id != i:
                raise ValueError("node ids must be 0..n-1 in order")
        self.edges = dict(sorted(edges.items())) if edges is not None else _nerve_edges(self.nodes)

    def __eq__(self, other):
        return (
            isinstance(other, TopologicalNetwork)
            and self.nodes == other.nodes
            and self.edges == other.edges
        )

    def __repr__(self):
        return f"TopologicalNetwork(nodes={len(self.nodes)}, edges={len(self.edges)})"

    @cached_property
    def row_to_nodes(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {}
        for node in self.nodes:
            for r in node.rows:
                out.setdefault(r, []).append(node.node_id)
        return {r: tuple(v) for r, v in sorted(out.items())}

    def neighbors(self, node_id: int) -> list[int]:
        return sorted(
            {v for (a, v) in self.edges if a == node_id} | {a for (a, v) in self.edges if v == node_id}
        )

    def rows(self) -> tuple[int, ...]:
        return tuple(self.row_to_nodes)

    def summary(self) -> dict:
        comps = connected_components(self)
        return {
            "nodes": len(self.nodes),
            "edges": len(self.edges),
            "component_sizes": [len(rows) for _, rows in comps],
        }


def _incidence(nodes: Sequence[Cluster]) -> tuple[sparse.csr_matrix, np.ndarray]:
    all_rows = np.unique(np.concatenate([np.asarray(n.rows, dtype=np.int64) for n in nodes]))
    pos = {int(r): i for i, r in enumerate(all_rows)}
    r_idx, c_idx = [], []
    for node in nodes:
        r_idx.extend(pos[r] for r in node.rows)
        c_idx.extend([node.node_id] * len(node.rows))
    inc = sparse.csr_matrix(
        (np.ones(len(r_idx), dtype=np.int64), (r_idx, c_idx)), shape=(len(all_rows), len(nodes))
    )
    return inc, all_rows


def _nerve_edges(nodes: Sequence[Cluster]) -> dict[tuple[int, int], int]:
    if len(nodes) < 2:
        return {}
    inc, _ = _incidence(nodes)
    shared = sparse.triu(inc.T @ inc, k=1).tocoo()
    edges = {
        (int(u), int(v)): int(w) for u, v, w in zip(shared.row, shared.col, shared.data) if w > 0
    }
    return dict(sorted(edges.items()))


def build_network(per_bin: Sequence[tuple[tuple[int, ...], Sequence[Sequence[int]]]]) -> TopologicalNetwork:
    """Nerve 1-skeleton from ``(bin index, clusters)`` pairs.

    Node ids follow bin index order, then the order of clusters within a bin.
    Edge weights count shared rows.
    """
    nodes = []
    for bin_index, clusters in sorted(per_bin, key=lambda item: item[0]):
        for rows in clusters:
            if len(rows) == 0:
                continue
            nodes.append(Cluster(tuple(bin_index), tuple(sorted(int(r) for r in rows)), len(nodes)))
    return TopologicalNetwork(nodes)


def connected_components(net: TopologicalNetwork) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """``(node ids, row ids)`` per component, largest row set first.

    Ties in size go to the component holding the smaller node id.
    """
    n = len(net.nodes)
    if n == 0:
        return []
    if net.edges:
        u, v = zip(*net.edges)
        adj = sparse.coo_matrix((np.ones(len(u)), (u, v)), shape=(n, n))
    else:
        adj = sparse.coo_matrix((n, n))
    _, labels = csgraph.connected_components(adj, directed=False)
    comps: dict[int, list[int]] = {}
    for node_id, lab in enumerate(labels):
        comps.setdefault(int(lab), []).append(node_id)
    out = []
    for node_ids in comps.values():
        rows = sorted({r for k in node_ids for r in net.nodes[k].rows})
        out.append((tuple(node_ids), tuple(rows)))
    out.sort(key=lambda c: (-len(c[1]), c[0][0]))
    return out


# -- composition ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Geometry:
    """Everything MAPPER needs for one group that does not depend on the cover."""

    rows: tuple[int, ...]
    matrix: AnalysisMatrix
    distances: DistanceMatrix
    filter: FilterValues


def prepare_geometry(
    dataset: Dataset, group: Group, metric: str = "vne", lens: str = "mds", k_neighbors: int = 15
) -> Geometry:
    if len(group) == 0:
        raise ValueError("mapper needs a non-empty group")
    mat = analysis_matrix(dataset, group)
    dist = pairwise_distances(mat.values, metric)
    filt = apply_lens(dist, lens, k_neighbors)
    return Geometry(rows=group.rows, matrix=mat, distances=dist, filter=filt)


def mapper_from_geometry(geom: Geometry, params: CoverParams, histogram_bins: int = 10) -> TopologicalNetwork:
    """Cover, cluster each bin with distances sliced from the group matrix,
    and take the nerve."""
    rows = np.asarray(geom.rows, dtype=np.int64)
    per_bin = []
    for index, members in _memberships(geom.filter, params).items():
        if len(members) <= 2:
            # at most one merge, so never a gap: the bin is one cluster
            per_bin.append((index, [tuple(int(r) for r in rows[np.sort(np.asarray(members))])]))
            continue
        merges = single_linkage(members, geom.distances)
        clusters = cut_by_gap(merges, members, histogram_bins)
        per_bin.append((index, [tuple(rows[np.asarray(c)]) for c in clusters]))
    return build_network(per_bin)


def mapper(
    dataset: Dataset,
    group: Group,
    params: CoverParams,
    metric: str = "vne",
    lens: str = "mds",
    k_neighbors: int = 15,
    histogram_bins: int = 10,
) -> TopologicalNetwork:
    geom = prepare_geometry(dataset, group, metric, lens, k_neighbors)
    return mapper_from_geometry(geom, params, histogram_bins)
