"""Tests for descriptive analytics."""

import itertools
from collections import Counter

import numpy as np
import pytest

from fedwatch.analytics import (
    GrowthSeries,
    LagRecord,
    admin_distribution,
    admin_growth,
    empirical_cdf,
    footprint_of,
    lag_groups,
    lag_summary,
    moderator_split,
    policy_footprint,
    policy_growth_series,
    policy_table,
    posts_by_admin_count,
    response_lags,
    spearman,
)
from fedwatch.exceptions import InsufficientDataError, UndefinedStatisticError
from fedwatch.models import InstanceRef
from fedwatch.store import Store

A = InstanceRef("a.example")
B = InstanceRef("b.example")
C = InstanceRef("c.example")
D = InstanceRef("d.example")
E = InstanceRef("e.example")

DAY = 86400
T0 = 100
T1 = T0 + DAY
T16 = T0 + 16 * DAY


def test_footprint(make_snapshot):
    """Test instance, user and post shares over exposed instances only."""
    rows = footprint_of([
        make_snapshot("a.example", T0, users=10, posts=100, policies=("SimplePolicy", "TagPolicy")),
        make_snapshot("b.example", T0, users=30, posts=300, policies=("TagPolicy",)),
        make_snapshot("d.example", T0, users=1000, posts=1000, exposed=False),
    ])
    assert [r.row() for r in rows] == [
        ("TagPolicy", 1.0, 1.0, 1.0),
        ("SimplePolicy", 0.5, 0.25, 0.25),
    ]


def test_footprint_noop_rule(make_snapshot):
    """Test NoOpPolicy counts only when it is the sole policy."""
    rows = footprint_of([
        make_snapshot("a.example", T0, policies=("NoOpPolicy",)),
        make_snapshot("b.example", T0, policies=("NoOpPolicy", "TagPolicy")),
    ])
    shares = {r.policy_name: r.pct_instances for r in rows}
    assert shares == {"NoOpPolicy": 0.5, "TagPolicy": 0.5}


def test_policy_footprint_empty(store):
    """Test an empty store has no footprint."""
    with pytest.raises(InsufficientDataError):
        policy_footprint(store, T0)


def test_admin_distribution(store, make_snapshot):
    """Test only staff-exposing instances are counted."""
    store.append_snapshot(make_snapshot("a.example", T0, admins=("x",)))
    store.append_snapshot(make_snapshot("b.example", T0, admins=("y",)))
    store.append_snapshot(make_snapshot("c.example", T0, admins=("x", "y", "z"), posts=7))
    store.append_snapshot(make_snapshot("d.example", T0, admins=()))
    assert admin_distribution(store, T0) == pytest.approx({1: 2 / 3, 3: 1 / 3})
    assert posts_by_admin_count(store, T0) == {1: [100, 100], 3: [7]}


def test_admin_growth(store, make_snapshot):
    """Test admin and post growth between first and last observation."""
    store.append_snapshot(make_snapshot("a.example", T0, admins=("x",), posts=100))
    store.append_snapshot(make_snapshot("a.example", T1, admins=("x", "y"), posts=300))
    store.append_snapshot(make_snapshot("b.example", T0, admins=("x",), posts=100))
    store.append_snapshot(make_snapshot("b.example", T1, admins=("x",), posts=50))
    store.append_snapshot(make_snapshot("c.example", T0, admins=("x",), posts=10))
    store.append_snapshot(make_snapshot("c.example", T1, admins=("x", "y", "z"), posts=500))
    growth = admin_growth(store)
    assert growth.grew_fraction == pytest.approx(2 / 3)
    assert growth.correlation == pytest.approx(1.0)
    assert growth.rows()[0] == ("a.example", 1, 2, 100, 300)


def test_spearman_extremes():
    """Test perfect monotone agreement and disagreement."""
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)


def test_spearman_matches_rank_formula():
    """Test untied permutations against the closed-form rank difference formula."""
    n = 6
    x = list(range(n))
    for perm in itertools.islice(itertools.permutations(range(n)), 0, None, 37):
        d2 = sum((a - b) ** 2 for a, b in zip(x, perm))
        expected = 1 - 6 * d2 / (n * (n * n - 1))
        assert spearman(x, perm) == pytest.approx(expected)


def test_spearman_invariant_under_monotone_transforms():
    """Test random strictly increasing transforms leave the correlation unchanged."""
    rng = np.random.default_rng(17)
    transforms = [np.exp, lambda v: v ** 3 + 5 * v, np.arctan]
    for _ in range(50):
        x = rng.normal(size=30)
        y = x + rng.normal(scale=2.0, size=30)
        expected = spearman(x, y)
        scale, shift = rng.uniform(0.1, 10.0), rng.uniform(-10.0, 10.0)
        for transform in transforms + [lambda v: scale * v + shift]:
            assert spearman(transform(x), y) == pytest.approx(expected, abs=1e-12)
            assert spearman(x, transform(y)) == pytest.approx(expected, abs=1e-12)
        assert spearman(x, x) == pytest.approx(1.0)
        assert spearman(x, -x) == pytest.approx(-1.0)


def average_ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    start = 0
    while start < len(order):
        end = start
        while end + 1 < len(order) and values[order[end + 1]] == values[order[start]]:
            end += 1
        for k in range(start, end + 1):
            ranks[order[k]] = (start + end) / 2 + 1
        start = end + 1
    return ranks


def test_spearman_with_ties_matches_pearson_of_average_ranks():
    """Test tied vectors against the Pearson correlation of hand-computed average ranks."""
    rng = np.random.default_rng(23)
    checked = 0
    for _ in range(100):
        x = rng.integers(0, 5, 12).tolist()
        y = rng.integers(0, 5, 12).tolist()
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        rx, ry = average_ranks(x), average_ranks(y)
        mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
        cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
        var_x = sum((a - mx) ** 2 for a in rx)
        var_y = sum((b - my) ** 2 for b in ry)
        assert spearman(x, y) == pytest.approx(cov / (var_x * var_y) ** 0.5, abs=1e-9)
        checked += 1
    assert checked > 90


def test_spearman_errors():
    """Test undefined and malformed inputs."""
    with pytest.raises(UndefinedStatisticError):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedStatisticError):
        spearman([1], [2])
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2, 3])


@pytest.fixture
def lag_store(store, make_snapshot):
    """a.example peers with b first, then c/d, then e; it acts on d at once and on c 15 days later."""
    store.append_snapshot(make_snapshot("a.example", T0))
    store.record_peers(A, {B}, T0)
    store.append_snapshot(make_snapshot("a.example", T1, targets=(("reject", "d.example"), ("nsfw", "e.example"))))
    store.record_peers(A, {B, C, D}, T1)
    store.append_snapshot(make_snapshot(
        "a.example", T16,
        targets=(("reject", "b.example"), ("reject", "c.example"), ("reject", "d.example"),
                 ("nsfw", "e.example")),
    ))
    store.record_peers(A, {B, C, D, E}, T16)
    return store


def test_response_lags(lag_store):
    """Test lags in days; pre-window edges and actions before federation are dropped."""
    lags = response_lags(lag_store)
    assert [(r.target, r.lag_days) for r in lags] == [(C, 15.0), (D, 0.0)]
    assert all(r.lag_days >= 0 for r in lags)
    assert response_lags(lag_store, targets=[C]) == [lags[0]]
    assert response_lags(lag_store, sources=[B]) == []


def test_lag_summary(lag_store):
    """Test count, mean and median of lags."""
    assert lag_summary(response_lags(lag_store)) == {"count": 2, "mean": 7.5, "median": 7.5}
    assert lag_summary([]) == {"count": 0}


def test_lags_ignore_stream_order(small_corpus, tmp_path):
    """Test the same observations appended in another interleaving give the same lags."""
    store, _ = small_corpus
    rng = np.random.default_rng(3)
    queues = {inst: store.snapshots(inst) for inst in store.instances()}
    shuffled = Store(tmp_path / "shuffled", fsync=False)
    while queues:
        inst = sorted(queues)[int(rng.integers(len(queues)))]
        shuffled.append_snapshot(queues[inst].pop(0))
        if not queues[inst]:
            del queues[inst]
    edges = store.edges()
    for i in rng.permutation(len(edges)):
        shuffled.append_edge(edges[int(i)])

    expected = Counter(record.row() for record in response_lags(store))
    assert expected
    assert Counter(record.row() for record in response_lags(shuffled)) == expected


def test_empirical_cdf():
    """Test the right-continuous step function."""
    cdf = empirical_cdf([1, 2, 2, 4])
    assert cdf(2) == 0.75
    assert cdf(0) == 0.0
    assert cdf(3) == 0.75
    assert cdf(4) == 1.0
    assert cdf.steps() == [(1.0, 0.25), (2.0, 0.75), (4.0, 1.0)]
    with pytest.raises(InsufficientDataError):
        empirical_cdf([])


def test_empirical_cdf_monotone():
    """Test the CDF never decreases and ends at 1."""
    values = np.random.default_rng(2).exponential(30, 200)
    cdf = empirical_cdf(values)
    points = [cdf(x) for x in np.linspace(0, values.max(), 50)]
    assert points == sorted(points)
    assert points[-1] == 1.0


def test_lag_groups():
    """Test the most and least targeted instances with their mean lags."""
    lags = [
        LagRecord(A, C, 0, DAY, 1.0),
        LagRecord(B, C, 0, 3 * DAY, 3.0),
        LagRecord(A, D, 0, 5 * DAY, 5.0),
    ]
    rows = [r.row() for r in lag_groups(lags, k=1)]
    assert rows == [("top", "c.example", 2, 2.0), ("bottom", "d.example", 1, 5.0)]


def test_policy_growth_series(store, make_snapshot):
    """Test per-policy shares at each bucket and the total growth."""
    store.append_snapshot(make_snapshot("a.example", T0, policies=("TagPolicy",)))
    store.append_snapshot(make_snapshot("b.example", T0, policies=("TagPolicy",)))
    store.append_snapshot(make_snapshot("a.example", T0 + 30 * DAY, policies=("TagPolicy", "SimplePolicy")))
    store.append_snapshot(make_snapshot("b.example", T0 + 30 * DAY, policies=("TagPolicy",)))
    series = policy_growth_series(store, 30 * DAY)
    assert series.bucket_starts == [T0, T0 + 30 * DAY]
    assert series.series["TagPolicy"] == [1.0, 1.0]
    assert series.series["SimplePolicy"] == [0.0, 0.5]
    assert series.series["Others"] == [0.0, 0.0]
    assert series.totals == [2, 3]
    assert series.growth == pytest.approx(1.5)


def test_growth_undefined_without_policies():
    """Test growth from zero deployments is undefined."""
    with pytest.raises(UndefinedStatisticError):
        GrowthSeries([0, 1], {}, [0, 2]).growth


def test_policy_table(store, make_snapshot):
    """Test growth in instances per policy, blank when it started from zero."""
    store.append_snapshot(make_snapshot("a.example", T0, policies=("TagPolicy",)))
    store.append_snapshot(make_snapshot("a.example", T1, policies=("TagPolicy", "SimplePolicy")))
    rows = {r.policy_name: r for r in policy_table(store)}
    assert rows["TagPolicy"].growth_pct == 0.0
    assert rows["SimplePolicy"].growth_pct is None
    assert rows["SimplePolicy"].row()[-1] == ""


def test_moderator_split(store, make_snapshot):
    """Test instances split on moderators beyond their administrators."""
    store.append_snapshot(make_snapshot("a.example", T0, admins=("x",), moderators=("m",),
                                        targets=(("reject", "c.example"),), policies=("SimplePolicy",)))
    store.append_snapshot(make_snapshot("b.example", T0, admins=("x",), moderators=("x",),
                                        policies=("TagPolicy",)))
    store.append_snapshot(make_snapshot("c.example", T0, admins=()))
    split = moderator_split(store, T0)
    assert split.with_dedicated_mods.instances == [A]
    assert split.without.instances == [B]
    assert split.with_dedicated_mods.footprint["SimplePolicy"] == 1.0
    assert split.without.footprint["SimplePolicy"] == 0.0
    assert split.with_dedicated_mods.actions["reject"] == 1.0
    assert ("with_dedicated_mods", "instances", "", 1) in split.rows()
