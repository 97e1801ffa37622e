"""Synthetic fixtures and independent reference implementations used as
oracles by the tests."""

from __future__ import annotations

import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from thd.data import Schema, read_csv

BLOB_SIZES = (200, 300)
BLOB_DIMS = 3
BLOB_SEPARATION = 10.0
# Blob children are leaves: Gaussian blobs split spuriously only at much finer
# covers (earliest seen: 12), and finer leaf networks isolate more tail rows
# in voter-free nodes.
BLOB_MAX_RESOLUTION = 5


def blob_csv(seed: int, dims: int = BLOB_DIMS, separation: float = BLOB_SEPARATION) -> str:
    """Two unit-variance Gaussian blobs whose centers are ``separation``
    standard deviations apart, labelled A (200 rows) and B (300 rows)."""
    rng = np.random.default_rng(seed)
    shift = np.full(dims, separation / math.sqrt(dims))
    a = rng.normal(size=(BLOB_SIZES[0], dims))
    b = rng.normal(size=(BLOB_SIZES[1], dims)) + shift
    lines = [",".join([f"x{i}" for i in range(dims)] + ["blob"])]
    for row, lab in zip(np.vstack([a, b]), ["A"] * BLOB_SIZES[0] + ["B"] * BLOB_SIZES[1]):
        lines.append(",".join([repr(float(v)) for v in row] + [lab]))
    return "\n".join(lines) + "\n"


def blob_dataset(seed: int = 0):
    return read_csv(blob_csv(seed), Schema(label="blob"), source=f"blobs-{seed}")


def blob_truth(row: int) -> str:
    return "A" if row < BLOB_SIZES[0] else "B"


def write_blob_config(directory: Path, seed: int = 0, **extra) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "blobs.csv").write_text(blob_csv(seed), encoding="utf-8")
    doc = {
        "dataset": "blobs.csv",
        "schema": {"label": "blob"},
        "thd": {"max_resolution": BLOB_MAX_RESOLUTION},
        "risky_level": "B",
        "output_dir": "out",
    }
    doc.update(extra)
    path = directory / "config.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


# ---- oracles -------------------------------------------------------------

def brute_nerve(clusters) -> set[tuple[int, int]]:
    """Edges between every pair of clusters sharing at least one row."""
    edges = set()
    for i in range(len(clusters)):
        for j in range(i + 1, len(clusters)):
            if set(clusters[i]) & set(clusters[j]):
                edges.add((i, j))
    return edges


def brute_ks(a, b) -> float:
    """Largest ECDF gap, evaluated at every observed value with exact
    rational arithmetic."""
    a = sorted(a)
    b = sorted(b)
    best = Fraction(0)
    for x in set(a) | set(b):
        fa = Fraction(sum(v <= x for v in a), len(a))
        fb = Fraction(sum(v <= x for v in b), len(b))
        best = max(best, abs(fa - fb))
    return float(best)


def exact_tail(population: int, successes: int, draws: int, k: int) -> Fraction:
    """P(X >= k) for a hypergeometric draw, as an exact fraction."""
    total = math.comb(population, draws)
    hi = min(successes, draws)
    num = sum(math.comb(successes, i) * math.comb(population - successes, draws - i) for i in range(max(k, 0), hi + 1))
    return Fraction(num, total)


def kolmogorov_series(x: float, terms: int = 200) -> float:
    """Survival function of the Kolmogorov distribution by its alternating
    series, 2 * sum (-1)^(j-1) exp(-2 j^2 x^2)."""
    if x <= 0:
        return 1.0
    return min(1.0, max(0.0, 2.0 * sum((-1) ** (j - 1) * math.exp(-2.0 * j * j * x * x) for j in range(1, terms))))


def components_by_union_find(n: int, edges) -> list[set[int]]:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        parent[find(a)] = find(b)
    groups: dict[int, set[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), set()).add(i)
    return list(groups.values())
