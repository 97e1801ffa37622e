import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import brute_ks, exact_tail, kolmogorov_series

from thd.data import Group, Schema, read_csv
from thd.mapper import build_network
from thd.stats import (
    Direction,
    StatKind,
    compare_groups,
    hypergeometric_pmf,
    hypergeometric_tail,
    ks_p_value,
    ks_statistic,
    node_coloring,
)


def test_ks_examples():
    assert ks_statistic([3.0, 1.0, 2.0], [1.0, 2.0, 3.0]) == 0
    assert ks_statistic([1, 2], [3, 4]) == 1
    assert ks_statistic([1, 2, 3], [2, 3, 4]) == pytest.approx(1 / 3, abs=1e-15)
    with pytest.raises(ValueError):
        ks_statistic([], [1])


samples = st.lists(st.integers(-5, 5).map(float) | st.floats(-10, 10), min_size=1, max_size=30)


@settings(max_examples=200, deadline=None)
@given(samples, samples)
def test_ks_matches_brute_force(a, b):
    d = ks_statistic(a, b)
    assert abs(d - brute_ks(a, b)) <= 1e-12
    assert 0 <= d <= 1
    assert d == ks_statistic(b, a)


def test_ks_p_value_examples():
    assert ks_p_value(0.0, 10, 10) == 1.0
    assert ks_p_value(1.0, 100, 100) < 1e-12
    x = math.sqrt(50 * 50 / 100) * 0.2
    assert ks_p_value(0.2, 50, 50) == pytest.approx(kolmogorov_series(x), abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(1, 500), st.integers(1, 500))
def test_ks_p_value_matches_series(d, n, m):
    x = math.sqrt(n * m / (n + m)) * d
    p = ks_p_value(d, n, m)
    assert 0 <= p <= 1
    if x > 0.3:  # the alternating series converges slowly near zero
        assert p == pytest.approx(kolmogorov_series(x), abs=1e-9)


def test_hypergeometric_examples():
    assert hypergeometric_tail(10, 5, 5, 0) == 1.0
    assert hypergeometric_tail(10, 5, 5, 5) == pytest.approx(1 / 252, rel=1e-12)
    assert hypergeometric_tail(4, 2, 2, 1) == pytest.approx(5 / 6, rel=1e-12)
    assert float(exact_tail(10, 5, 5, 5)) == pytest.approx(1 / 252, rel=1e-15)


def test_hypergeometric_rejects_invalid():
    with pytest.raises(ValueError):
        hypergeometric_tail(5, 6, 2, 1)
    with pytest.raises(ValueError):
        hypergeometric_tail(5, 2, 3, 3)


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_hypergeometric_matches_exact(data):
    n_pop = data.draw(st.integers(0, 60))
    k_pop = data.draw(st.integers(0, n_pop))
    draws = data.draw(st.integers(0, n_pop))
    k = data.draw(st.integers(0, min(draws, k_pop)))
    exact = exact_tail(n_pop, k_pop, draws, k)
    ours = hypergeometric_tail(n_pop, k_pop, draws, k)
    if exact == 0:
        assert ours == 0
    else:
        assert abs(Fraction(ours) - exact) / exact <= Fraction(1, 10**9)
    total = math.fsum(hypergeometric_pmf(n_pop, k_pop, draws, i) for i in range(0, draws + 1))
    assert total == pytest.approx(1.0, abs=1e-9)


def test_hypergeometric_deep_tail_keeps_precision():
    # far below the smallest normal float when summed naively in probability space
    exact = exact_tail(2000, 1000, 1000, 1000)
    assert hypergeometric_tail(2000, 1000, 1000, 1000) == pytest.approx(float(exact), rel=1e-9)


def two_group_csv(seed, shift=0.0, n=200, features=4):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, features))
    b = rng.normal(size=(n, features))
    b[:, 0] += shift
    head = ",".join(f"f{i}" for i in range(features))
    rows = np.vstack([a, b])
    return head + "\n" + "".join(",".join(repr(float(v)) for v in r) + "\n" for r in rows)


def test_same_distribution_has_no_significant_feature():
    hits = 0
    for seed in range(10):
        ds = read_csv(two_group_csv(seed))
        cmp = compare_groups(ds, Group(range(200)), Group(range(200, 400)))
        assert all(s.statistic < 0.2 for s in cmp.stats)
        hits += any(s.p_value <= 0.001 for s in cmp.stats)
    assert hits == 0


def test_shifted_feature_ranks_first():
    ds = read_csv(two_group_csv(1, shift=5.0))
    cmp = compare_groups(ds, Group(range(200, 400)), Group(range(200)))
    top = cmp.stats[0]
    assert top.feature == "f0" and top.statistic > 0.9
    assert top.direction is Direction.HIGHER and top.kind is StatKind.KS
    assert cmp.significant()[0].feature == "f0"


def test_compare_groups_errors():
    ds = read_csv(two_group_csv(2))
    with pytest.raises(ValueError):
        compare_groups(ds, Group(range(10)), Group(range(10)))
    with pytest.raises(ValueError):
        compare_groups(ds, Group([]), Group(range(10)))


def test_ranking_order():
    ds = read_csv(two_group_csv(3, shift=1.0))
    stats = compare_groups(ds, Group(range(200)), Group(range(200, 400))).stats
    keys = [(-s.statistic, s.p_value, s.order) for s in stats]
    assert keys == sorted(keys)


CATS = "color,size,y\n" + "red,1,Bad\n" * 30 + "blue,2,Good\n" * 10 + "red,3,Good\n" * 5 + "blue,4,Bad\n" * 15


def test_categorical_levels():
    ds = read_csv(CATS, Schema(label="y"))
    group, baseline = Group(range(30)), Group(range(30, 60))
    cmp = compare_groups(ds, group, baseline)
    by_name = {s.name: s for s in cmp.stats}
    assert "y" not in {s.feature for s in cmp.stats}
    red = by_name["color=red"]
    assert red.kind is StatKind.HYPERGEOMETRIC
    assert red.statistic == pytest.approx(1 - 5 / 30)
    assert red.direction is Direction.HIGHER
    assert red.p_value == pytest.approx(float(exact_tail(60, 35, 30, 30)), rel=1e-9)
    assert red.enrichment == pytest.approx(1.0 / (35 / 60))
    blue = by_name["color=blue"]
    assert blue.direction is Direction.LOWER
    # depleted: lower tail P(X <= 0) of blue count in the group
    assert blue.p_value == pytest.approx(float(1 - exact_tail(60, 25, 30, 1)), rel=1e-9)


def test_node_coloring():
    ds = read_csv("c,x,y\n1,1,Bad\n1,5,Bad\n1,9,Good\n1,,Good\n", Schema(label="y"))
    net = build_network([((0,), [(0, 1)]), ((1,), [(1, 2, 3)]), ((2,), [(3,)])])
    assert node_coloring(ds, net, "c") == {0: 1.0, 1: 1.0, 2: 1.0}
    assert node_coloring(ds, net, "y", "Bad") == {0: 1.0, 1: pytest.approx(1 / 3), 2: 0.0}
    assert node_coloring(ds, net, "x") == {0: 3.0, 1: 7.0, 2: None}
    with pytest.raises(KeyError):
        node_coloring(ds, net, "nope")
    with pytest.raises(ValueError):
        node_coloring(ds, net, "y", "Maybe")


def test_node_coloring_matches_brute_force_mean():
    rng = np.random.default_rng(4)
    vals = rng.normal(size=40)
    ds = read_csv("v\n" + "".join(f"{float(v)!r}\n" for v in vals))
    per_bin = [((b,), [tuple(sorted(rng.choice(40, size=6, replace=False).tolist()))]) for b in range(8)]
    net = build_network(per_bin)
    colors = node_coloring(ds, net, "v")
    for node in net.nodes:
        expected = math.fsum(vals[r] for r in node.rows) / len(node.rows)
        assert abs(colors[node.node_id] - expected) <= 1e-12
