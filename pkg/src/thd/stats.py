"""Two-sample statistics that explain how a group differs from its baseline."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
from scipy.special import kolmogorov

from .data import Dataset, FeatureKind, Group
from .mapper import TopologicalNetwork


class StatKind(str, Enum):
    KS = "ks"
    HYPERGEOMETRIC = "hypergeometric"


class Direction(str, Enum):
    HIGHER = "higher"
    LOWER = "lower"


@dataclass(frozen=True)
class FeatureStat:
    """One feature's comparison of a group against its baseline.

    For categorical levels ``statistic`` is the absolute difference of the
    level's fraction between group and baseline (the KS distance between the
    two indicator samples), so continuous and categorical rows rank on one
    scale; ``enrichment`` keeps the fold change.
    """

    feature: str
    kind: StatKind
    statistic: float
    p_value: float
    direction: Direction
    group_summary: dict
    baseline_summary: dict
    level: str | None = None
    enrichment: float | None = None
    order: int = 0

    @property
    def name(self) -> str:
        return self.feature if self.level is None else f"{self.feature}={self.level}"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        out["direction"] = self.direction.value
        return out


@dataclass(frozen=True)
class GroupComparison:
    group_id: str
    baseline_id: str
    stats: tuple[FeatureStat, ...]
    alpha: float = 0.01
    top_k: int = 5
    notes: tuple[str, ...] = field(default=())

    def significant(self, alpha: float | None = None, top_k: int | None = None) -> list[FeatureStat]:
        alpha = self.alpha if alpha is None else alpha
        top_k = self.top_k if top_k is None else top_k
        return [s for s in self.stats if s.p_value <= alpha][:top_k]

    def to_dict(self) -> dict:
        return {
            "group": self.group_id,
            "baseline": self.baseline_id,
            "alpha": self.alpha,
            "top_k": self.top_k,
            "stats": [s.to_dict() for s in self.stats],
        }


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance, exact, by a merged-sort sweep.

    The ECDF difference only changes at sample values, so evaluating both
    ECDFs at every pooled value (by binary search into the sorted samples)
    visits every candidate for the supremum.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("ks_statistic needs two non-empty samples")
    # ECDF counts just right of every sample value; integer arithmetic on
    # i*m - j*n keeps the supremum exact
    x = np.concatenate([a, b])
    i = np.searchsorted(a, x, side="right").astype(np.int64)
    j = np.searchsorted(b, x, side="right").astype(np.int64)
    best = int(np.max(np.abs(i * m - j * n)))
    return best / (n * m)


def ks_p_value(d: float, n: int, m: int) -> float:
    """Asymptotic two-sided p-value of a KS distance ``d``.

    Uses the Kolmogorov limiting distribution at ``sqrt(n m / (n + m)) * d``.
    """
    if not 0 <= d <= 1:
        raise ValueError("d must lie in [0, 1]")
    if n < 1 or m < 1:
        raise ValueError("sample sizes must be positive")
    en = math.sqrt(n * m / (n + m))
    return float(min(1.0, max(0.0, kolmogorov(en * d))))


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def hypergeometric_pmf(population: int, successes: int, draws: int, k: int) -> float:
    _check_hypergeometric(population, successes, draws, 0)
    if k < max(0, draws - (population - successes)) or k > min(draws, successes):
        return 0.0
    return math.exp(
        _log_comb(successes, k) + _log_comb(population - successes, draws - k) - _log_comb(population, draws)
    )


def _check_hypergeometric(population, successes, draws, k):
    if not (0 <= successes <= population and 0 <= draws <= population):
        raise ValueError(f"invalid hypergeometric parameters N={population} K={successes} n={draws}")
    if not 0 <= k <= min(draws, successes):
        raise ValueError(f"observed count {k} outside [0, min(n, K)]")


def hypergeometric_tail(population: int, successes: int, draws: int, k: int) -> float:
    """``P(X >= k)`` for ``X`` hypergeometric with the given parameters.

    Sums the PMF terms from log-factorials.  Terms are accumulated relative to
    the largest one so tails far below the float range of a direct sum still
    come out with full relative precision.
    """
    _check_hypergeometric(population, successes, draws, k)
    lo = max(k, draws - (population - successes))
    hi = min(draws, successes)
    if lo > hi:
        return 0.0
    if lo == max(0, draws - (population - successes)):
        return 1.0
    base = _log_comb(population, draws)
    logs = [
        _log_comb(successes, i) + _log_comb(population - successes, draws - i) - base
        for i in range(lo, hi + 1)
    ]
    top = max(logs)
    total = math.fsum(math.exp(v - top) for v in logs)
    return min(1.0, math.exp(top) * total)


# -- group comparison ------------------------------------------------------------


def _summary(values: np.ndarray) -> dict:
    if len(values) == 0:
        return {"n": 0, "mean": None, "median": None, "std": None}
    return {
        "n": int(len(values)),
        "mean": float(np.mean(values)),
        "median": float(np.median(values)),
        "std": float(np.std(values)),
    }


def _present(dataset: Dataset, name: str, rows: np.ndarray) -> np.ndarray:
    col = dataset.columns[name][rows]
    return col[~dataset.missing[name][rows]]


def compare_groups(
    dataset: Dataset,
    group: Group,
    baseline: Group,
    group_id: str = "group",
    baseline_id: str = "baseline",
    alpha: float = 0.01,
    top_k: int = 5,
) -> GroupComparison:
    """Rank every non-label feature by how strongly it separates two groups.

    Continuous features get the KS distance and its asymptotic p-value.
    Each level of a categorical feature gets a hypergeometric tail for its
    count in ``group`` drawn from ``group | baseline``; the tail is taken in
    the observed direction (upper when enriched, lower when depleted).
    Missing cells are left out per feature.  Ranking: statistic descending,
    then p-value ascending, then feature order.
    """
    if len(group) == 0 or len(baseline) == 0:
        raise ValueError("compare_groups needs two non-empty groups")
    if set(group.rows) & set(baseline.rows):
        raise ValueError("group and baseline overlap")
    g_idx, b_idx = group.array(), baseline.array()
    stats: list[FeatureStat] = []
    notes: list[str] = []
    order = 0
    for f in dataset.features:
        if f.is_label:
            continue
        ga = _present(dataset, f.name, g_idx)
        ba = _present(dataset, f.name, b_idx)
        if len(ga) == 0 or len(ba) == 0:
            notes.append(f"{f.name}: no present values on one side")
            order += 1
            continue
        if f.kind is FeatureKind.CONTINUOUS:
            d = ks_statistic(ga, ba)
            gs, bs = _summary(ga), _summary(ba)
            stats.append(
                FeatureStat(
                    feature=f.name,
                    kind=StatKind.KS,
                    statistic=d,
                    p_value=ks_p_value(d, len(ga), len(ba)),
                    direction=Direction.HIGHER if gs["mean"] > bs["mean"] else Direction.LOWER,
                    group_summary=gs,
                    baseline_summary=bs,
                    order=order,
                )
            )
            order += 1
            continue
        n_pop = len(ga) + len(ba)
        for code, level in enumerate(dataset.categories[f.name]):
            k = int(np.sum(ga == code))
            k_pop = k + int(np.sum(ba == code))
            if k_pop == 0:
                order += 1
                continue
            g_frac, b_frac = k / len(ga), (k_pop - k) / len(ba)
            if g_frac > b_frac:
                p = hypergeometric_tail(n_pop, k_pop, len(ga), k)
            else:
                # P(X <= k) is the upper tail of the complementary count
                p = hypergeometric_tail(n_pop, n_pop - k_pop, len(ga), len(ga) - k)
            stats.append(
                FeatureStat(
                    feature=f.name,
                    kind=StatKind.HYPERGEOMETRIC,
                    statistic=abs(g_frac - b_frac),
                    p_value=p,
                    direction=Direction.HIGHER if g_frac > b_frac else Direction.LOWER,
                    group_summary={"n": len(ga), "count": k, "fraction": g_frac},
                    baseline_summary={"n": len(ba), "count": k_pop - k, "fraction": b_frac},
                    level=level,
                    enrichment=(k / len(ga)) / (k_pop / n_pop),
                    order=order,
                )
            )
            order += 1
    stats.sort(key=lambda s: (-s.statistic, s.p_value, s.order))
    return GroupComparison(group_id, baseline_id, tuple(stats), alpha, top_k, tuple(notes))


def node_coloring(
    dataset: Dataset, net: TopologicalNetwork, feature: str, level: str | None = None
) -> dict[int, float | None]:
    """Per-node color: mean of a continuous feature, or the fraction of
    ``level`` for a categorical one (label included).

    Missing cells are skipped; a node with no present value maps to None.
    """
    meta = dataset.feature(feature)
    col = dataset.columns[feature]
    miss = dataset.missing[feature]
    target = None
    if meta.kind is FeatureKind.CATEGORICAL:
        cats = dataset.categories[feature]
        if level is None:
            if not cats:
                raise ValueError(f"feature {feature!r} has no levels")
            level = cats[0]
        if level not in cats:
            raise ValueError(f"unknown level {level!r} for {feature!r}")
        target = cats.index(level)
    out: dict[int, float | None] = {}
    for node in net.nodes:
        idx = np.asarray(node.rows, dtype=np.int64)
        values = col[idx][~miss[idx]]
        if len(values) == 0:
            out[node.node_id] = None
        elif target is None:
            out[node.node_id] = float(np.mean(values))
        else:
            out[node.node_id] = float(np.mean(values == target))
    return out
