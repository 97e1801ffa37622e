"""Metrics and lenses: variance-normalized distances, classical MDS and a
Laplacian-eigenmap neighborhood lens."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import eigsh

# Dense n x n storage up to this many points; beyond it distances are
# recomputed from the scaled coordinates on demand.
DENSE_LIMIT = 3000
_BLOCK = 256


@dataclass(frozen=True)
class Variances:
    values: np.ndarray
    flagged: np.ndarray  # True where the column has zero variance


def feature_variances(matrix: np.ndarray) -> Variances:
    """Population variance per column; zero-variance columns are flagged."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise ValueError("feature_variances needs a non-empty 2-D matrix")
    var = matrix.var(axis=0)
    # constant columns, plus columns whose spread underflows (subnormal
    # standard deviation) and cannot serve as a divisor
    flagged = np.all(matrix == matrix[0], axis=0) | ~(np.sqrt(var) >= np.finfo(float).tiny)
    var = np.where(flagged, 0.0, var)
    return Variances(values=var, flagged=flagged)


def vne_distance(x, y, variances: Variances) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.shape != variances.values.shape:
        raise ValueError("dimension mismatch")
    keep = ~variances.flagged
    diff = (x[keep] - y[keep]) / np.sqrt(variances.values[keep])
    return float(np.sqrt(np.sum(diff * diff)))


def scaled_points(matrix: np.ndarray, metric: str) -> np.ndarray:
    """Coordinates whose plain Euclidean distances realize ``metric``."""
    matrix = np.asarray(matrix, dtype=float)
    if metric == "euclidean":
        return np.ascontiguousarray(matrix)
    if metric == "vne":
        var = feature_variances(matrix)
        keep = ~var.flagged
        return np.ascontiguousarray(matrix[:, keep] / np.sqrt(var.values[keep]))
    raise ValueError(f"unknown metric {metric!r}")


def _row_distances(points: np.ndarray, i: int, idx: np.ndarray) -> np.ndarray:
    diff = points[idx] - points[i]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


class DistanceMatrix:
    """Symmetric distance matrix over ``n`` points.

    Backed either by an explicit dense array or by Euclidean coordinates
    (already scaled for the chosen metric) from which entries are computed on
    demand.  Both backings produce bit-identical entries.
    """

    def __init__(self, n: int, dense: np.ndarray | None = None, points: np.ndarray | None = None):
        if dense is None and points is None:
            raise ValueError("need dense entries or points")
        self.n = n
        self._dense = dense
        self.points = points
        if dense is not None:
            dense.setflags(write=False)

    @classmethod
    def from_dense(cls, dense) -> "DistanceMatrix":
        dense = np.array(dense, dtype=float)
        if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.array_equal(dense, dense.T) or np.any(np.diag(dense) != 0) or np.any(dense < 0):
            raise ValueError("not a valid distance matrix")
        return cls(dense.shape[0], dense=dense)

    @property
    def is_dense(self) -> bool:
        return self._dense is not None

    def row(self, i: int, idx: np.ndarray | None = None) -> np.ndarray:
        """Distances from point ``i`` to points ``idx`` (all when None)."""
        if self._dense is not None:
            return self._dense[i] if idx is None else self._dense[i, idx]
        if idx is None:
            idx = np.arange(self.n)
        return _row_distances(self.points, i, idx)

    def submatrix(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if self._dense is not None:
            return self._dense[np.ix_(idx, idx)]
        return _dense_from_points(self.points[idx])

    def dense(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense
        return _dense_from_points(self.points)

    def __getitem__(self, ij) -> float:
        i, j = ij
        return float(self.row(i, np.array([j]))[0])


def _dense_from_points(points: np.ndarray) -> np.ndarray:
    n = len(points)
    out = np.empty((n, n))
    for start in range(0, n, _BLOCK):
        block = points[start : start + _BLOCK]
        diff = block[:, None, :] - points[None, :, :]
        out[start : start + _BLOCK] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(out, 0.0)
    return out


def pairwise_distances(matrix: np.ndarray, metric: str = "vne", dense_limit: int = DENSE_LIMIT) -> DistanceMatrix:
    """Distances between all rows of ``matrix`` under ``metric``.

    ``metric`` is ``"vne"`` (variance-normalized Euclidean, zero-variance
    columns skipped) or ``"euclidean"``.
    """
    points = scaled_points(matrix, metric)
    n = points.shape[0]
    if n < 1:
        raise ValueError("pairwise_distances needs at least one row")
    if n <= dense_limit:
        return DistanceMatrix(n, dense=_dense_from_points(points), points=points)
    return DistanceMatrix(n, points=points)


@dataclass(frozen=True, eq=False)
class FilterValues:
    coords: np.ndarray  # n x dim

    def __post_init__(self):
        if self.coords.ndim != 2 or not np.all(np.isfinite(self.coords)):
            raise ValueError("filter coordinates must be a finite 2-D array")
        self.coords.setflags(write=False)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def to_json(self) -> dict:
        return {"n": self.n, "dim": self.dim, "coords": self.coords.tolist()}


def fix_signs(coords: np.ndarray) -> np.ndarray:
    """Flip each axis so its largest-magnitude coordinate is positive.

    ``np.argmax`` returns the first maximum, so ties go to the smaller row.
    """
    coords = np.array(coords, dtype=float)
    for j in range(coords.shape[1]):
        col = coords[:, j]
        k = int(np.argmax(np.abs(col)))
        if col[k] < 0:
            coords[:, j] = -col
    return coords + 0.0  # normalizes -0.0


def classical_mds(d: DistanceMatrix, k: int = 2) -> FilterValues:
    """Torgerson classical MDS: top-``k`` axes of the double-centered Gram matrix.

    Axes with non-positive eigenvalues come back as zero columns.  When the
    distance matrix is large and backed by Euclidean coordinates, the same
    eigenpairs are taken from an SVD of the centered coordinates instead of
    forming the n x n Gram matrix.
    """
    if d.n < 2:
        raise ValueError("classical_mds needs at least two points")
    if k < 1:
        raise ValueError("k must be positive")
    if not d.is_dense and d.points is not None:
        coords = _mds_from_points(d.points, k)
    else:
        coords = _mds_from_dense(d.dense(), k)
    return FilterValues(fix_signs(coords))


def _mds_from_dense(dist: np.ndarray, k: int) -> np.ndarray:
    n = dist.shape[0]
    sq = dist * dist
    row_mean = sq.mean(axis=1)
    gram = -0.5 * (sq - row_mean[:, None] - row_mean[None, :] + sq.mean())
    gram = 0.5 * (gram + gram.T)
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1][:k]
    evals, evecs = evals[order], evecs[:, order]
    scale = np.sqrt(np.clip(evals, 0.0, None))
    # eigenvalues at round-off level are treated as zero-width
    tol = max(n * np.finfo(float).eps * max(abs(evals).max(initial=0.0), 1.0), 1e-12)
    scale[evals <= tol] = 0.0
    coords = evecs * scale
    if coords.shape[1] < k:
        coords = np.hstack([coords, np.zeros((n, k - coords.shape[1]))])
    return coords


def _mds_from_points(points: np.ndarray, k: int) -> np.ndarray:
    n = points.shape[0]
    centered = points - points.mean(axis=0)
    u, s, _ = np.linalg.svd(centered, full_matrices=False)
    coords = np.zeros((n, k))
    m = min(k, len(s))
    tol = max(n, points.shape[1]) * np.finfo(float).eps * (s[0] if len(s) else 0.0)
    for j in range(m):
        if s[j] > tol:
            coords[:, j] = u[:, j] * s[j]
    return coords


def knn_graph(d: DistanceMatrix, k_neighbors: int) -> sparse.csr_matrix:
    """Symmetrized k-nearest-neighbor adjacency with unit weights.

    Ties at equal distance go to the smaller row index.
    """
    n = d.n
    rows, cols = [], []
    for i in range(n):
        dist = np.array(d.row(i), dtype=float)
        dist[i] = np.inf
        nearest = np.argsort(dist, kind="stable")[:k_neighbors]
        rows.append(np.full(len(nearest), i))
        cols.append(nearest)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    adj = sparse.coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n)).tocsr()
    adj = adj.maximum(adj.T)
    adj.data[:] = 1.0
    return adj.tocsr()


def _eigenmap(adj: sparse.csr_matrix, dim: int) -> np.ndarray:
    """Laplacian-eigenmap coordinates of one connected graph.

    Returns the generalized eigenvectors ``L v = lambda D v`` with the
    ``dim`` smallest nonzero eigenvalues, i.e. ``D^{-1/2} u`` for eigenvectors
    ``u`` of the symmetric normalized Laplacian.
    """
    n = adj.shape[0]
    out = np.zeros((n, dim))
    if n < 2:
        return out
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    norm_adj = sparse.diags(inv_sqrt) @ adj @ sparse.diags(inv_sqrt)
    m = min(dim + 1, n)
    if n <= DENSE_LIMIT:
        lap = np.eye(n) - norm_adj.toarray()
        evals, evecs = np.linalg.eigh(0.5 * (lap + lap.T))
        evecs = evecs[:, :m]
    else:
        v0 = np.cos(np.arange(n) * 0.7071) + 1.5
        evals, evecs = eigsh(norm_adj, k=m, which="LA", v0=v0, tol=1e-10, maxiter=20 * n)
        order = np.argsort(evals)[::-1]
        evecs = evecs[:, order]
    coords = evecs[:, 1:m] * inv_sqrt[:, None]
    out[:, : coords.shape[1]] = coords
    return out


def neighborhood_lens(d: DistanceMatrix, k_neighbors: int = 15, out_dim: int = 2) -> FilterValues:
    """Deterministic 2-D neighborhood embedding.

    Builds the symmetrized kNN graph and returns Laplacian-eigenmap
    coordinates.  A disconnected graph is embedded one component at a time;
    each component is centered, scaled into a unit box, and shifted along the
    first axis by twice its component index so component boxes never overlap.
    """
    n = d.n
    if not 1 <= k_neighbors < n:
        raise ValueError(f"need n > k_neighbors >= 1 (n={n}, k={k_neighbors})")
    if float(max(np.max(d.row(i)) for i in range(n))) == 0.0:
        return FilterValues(np.zeros((n, out_dim)))
    adj = knn_graph(d, k_neighbors)
    n_comp, labels = csgraph.connected_components(adj, directed=False)
    if n_comp == 1:
        return FilterValues(fix_signs(_eigenmap(adj, out_dim)))
    # relabel components by their smallest member row
    first_seen = {}
    for i, lab in enumerate(labels):
        first_seen.setdefault(lab, len(first_seen))
    coords = np.zeros((n, out_dim))
    for lab, rank in first_seen.items():
        idx = np.flatnonzero(labels == lab)
        sub = fix_signs(_eigenmap(adj[idx][:, idx].tocsr(), out_dim))
        sub = sub - sub.mean(axis=0)
        span = np.abs(sub).max()
        if span > 0:
            sub = sub * (0.5 / span)
        sub[:, 0] += 2.0 * rank
        coords[idx] = sub
    return FilterValues(coords + 0.0)


LENSES = ("mds", "nhl")


def apply_lens(d: DistanceMatrix, lens: str, k_neighbors: int = 15) -> FilterValues:
    """Run the named lens; degenerate group sizes get all-zero coordinates."""
    if lens == "mds":
        if d.n < 2:
            return FilterValues(np.zeros((d.n, 2)))
        return classical_mds(d, 2)
    if lens == "nhl":
        if d.n < 2:
            return FilterValues(np.zeros((d.n, 2)))
        return neighborhood_lens(d, min(k_neighbors, d.n - 1), 2)
    raise ValueError(f"unknown lens {lens!r}")
