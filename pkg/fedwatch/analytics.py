"""Descriptive statistics over a store.

Policy footprint and growth, administrator distributions and their
correlation with instance growth, response lags between federating with
an instance and acting against it, and the comparison of instances with
and without dedicated moderators. Everything here reads an immutable
store view; every result type renders to CSV rows through ``rows()``.
"""

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from statistics import mean, median
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import stats

from .constants import (
    GROWTH_TOP_POLICIES,
    LAG_GROUP_SIZE,
    MODERATOR_SPLIT_TOP_POLICIES,
    OTHERS_SERIES,
    SECONDS_PER_DAY,
)
from .exceptions import InsufficientDataError, UndefinedStatisticError
from .models import InstanceRef, InstanceSnapshot
from .policy import policy_names
from .store import Store

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FootprintRow:
    policy_name: str
    pct_instances: float
    pct_users: float
    pct_posts: float
    instances: int = 0

    def row(self) -> Tuple:
        return (self.policy_name, self.pct_instances, self.pct_users, self.pct_posts)


@dataclass(frozen=True)
class LagRecord:
    source: InstanceRef
    target: InstanceRef
    federated_at: int
    policy_at: int
    lag_days: float

    def row(self) -> Tuple:
        return (self.source.domain, self.target.domain, self.federated_at, self.policy_at, self.lag_days)


def _exposed(snapshots: Iterable[InstanceSnapshot]) -> List[InstanceSnapshot]:
    return [s for s in snapshots if s.policy_config.exposed]


def footprint_of(snapshots: Iterable[InstanceSnapshot]) -> List[FootprintRow]:
    """Footprint rows over a set of snapshots; only exposed instances count."""
    exposed = _exposed(snapshots)
    total_users = sum(s.user_count for s in exposed)
    total_posts = sum(s.post_count for s in exposed)
    counts: Counter = Counter()
    users: Counter = Counter()
    posts: Counter = Counter()
    for snapshot in exposed:
        for name in policy_names(snapshot.policy_config):
            counts[name] += 1
            users[name] += snapshot.user_count
            posts[name] += snapshot.post_count
    rows = [
        FootprintRow(
            policy_name=name,
            pct_instances=counts[name] / len(exposed),
            pct_users=users[name] / total_users if total_users else 0.0,
            pct_posts=posts[name] / total_posts if total_posts else 0.0,
            instances=counts[name],
        )
        for name in counts
    ]
    return sorted(rows, key=lambda r: (-r.pct_instances, r.policy_name))


def policy_footprint(store: Store, at: int) -> List[FootprintRow]:
    """Share of instances, users and posts behind each policy at ``at``.

    Denominators are totals over instances exposing their policies; rows
    are sorted by instance share, descending, then name.

    Raises:
        InsufficientDataError: If no successful snapshot exists at or before ``at``
    """
    snapshots = store.snapshots_at(at)
    if not snapshots:
        raise InsufficientDataError(f"No snapshots at or before {at}")
    return footprint_of(snapshots.values())


@dataclass
class GrowthSeries:
    """Per-policy share of exposed instances at each bucket boundary.

    ``totals`` counts policy deployments (instance, policy) at each point.
    """
    bucket_starts: List[int] = field(default_factory=list)
    series: Dict[str, List[float]] = field(default_factory=dict)
    totals: List[int] = field(default_factory=list)

    @property
    def growth(self) -> float:
        """Final total over initial total."""
        if not self.totals or not self.totals[0]:
            raise UndefinedStatisticError("No policies deployed at the first bucket")
        return self.totals[-1] / self.totals[0]

    def rows(self) -> List[Tuple]:
        return [
            (at, name, values[i])
            for i, at in enumerate(self.bucket_starts)
            for name, values in self.series.items()
        ]


def policy_growth_series(store: Store, bucket: int, top: int = GROWTH_TOP_POLICIES) -> GrowthSeries:
    """Share of instances using each of the ``top`` policies over time.

    Points are taken every ``bucket`` seconds from the first observation,
    and at the last observation. A change shows up at the first point at
    or after it. Policies outside the final top ``top`` are summed into
    ``Others``.
    """
    if bucket <= 0:
        raise ValueError(f"bucket must be positive, got {bucket}")
    start, end = store.time_range()
    points = list(range(start, end + 1, bucket))
    if points[-1] != end:
        points.append(end)
    if len(points) < 2:
        logger.warning("Growth series has a single point; the store spans less than one bucket")

    per_point: List[Dict[str, float]] = []
    totals: List[int] = []
    for at in points:
        snapshots = _exposed(store.snapshots_at(at).values())
        counts: Counter = Counter()
        for snapshot in snapshots:
            counts.update(policy_names(snapshot.policy_config))
        per_point.append({name: n / len(snapshots) for name, n in counts.items()} if snapshots else {})
        totals.append(sum(counts.values()))

    final = per_point[-1]
    leaders = [name for name, _ in sorted(final.items(), key=lambda kv: (-kv[1], kv[0]))[:top]]
    series: Dict[str, List[float]] = {name: [p.get(name, 0.0) for p in per_point] for name in leaders}
    series[OTHERS_SERIES] = [sum(v for k, v in p.items() if k not in leaders) for p in per_point]
    return GrowthSeries(points, series, totals)


def admin_distribution(store: Store, at: int) -> Dict[int, float]:
    """Fraction of staff-exposing instances per administrator count."""
    counts = Counter(len(s.admins) for s in store.snapshots_at(at).values() if s.staff_exposed)
    total = sum(counts.values())
    return {n: counts[n] / total for n in sorted(counts)}


def posts_by_admin_count(store: Store, at: int) -> Dict[int, List[int]]:
    """Post counts of staff-exposing instances, grouped by administrator count."""
    groups: Dict[int, List[int]] = defaultdict(list)
    for snapshot in store.snapshots_at(at).values():
        if snapshot.staff_exposed:
            groups[len(snapshot.admins)].append(snapshot.post_count)
    return {n: sorted(groups[n]) for n in sorted(groups)}


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties.

    Raises:
        ValueError: If the vectors differ in length
        UndefinedStatisticError: If fewer than 2 points, or either vector's ranks are constant
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"Vectors differ in length: {x.size} vs {y.size}")
    if x.size < 2:
        raise UndefinedStatisticError("Spearman needs at least 2 points")
    if np.ptp(stats.rankdata(x)) == 0 or np.ptp(stats.rankdata(y)) == 0:
        raise UndefinedStatisticError("Spearman is undefined when a vector is constant")
    return float(np.clip(stats.spearmanr(x, y)[0], -1.0, 1.0))


@dataclass
class AdminGrowth:
    """Administrator and post growth between each instance's first and last observation."""
    records: List[Tuple[str, int, int, int, int]] = field(default_factory=list)
    grew_fraction: float = 0.0
    correlation: Optional[float] = None

    def rows(self) -> List[Tuple[str, int, int, int, int]]:
        return list(self.records)


def admin_growth(store: Store) -> AdminGrowth:
    """How administrator counts grew relative to post counts."""
    result = AdminGrowth()
    for instance in store.instances():
        history = [s for s in store.snapshots(instance) if s.ok and s.staff_exposed]
        if len(history) < 2:
            continue
        first, last = history[0], history[-1]
        result.records.append((instance.domain, len(first.admins), len(last.admins), first.post_count, last.post_count))
    if not result.records:
        return result
    result.grew_fraction = sum(1 for r in result.records if r[2] > r[1]) / len(result.records)
    try:
        result.correlation = spearman([r[2] - r[1] for r in result.records], [r[4] - r[3] for r in result.records])
    except UndefinedStatisticError as e:
        logger.info("Admin/post growth correlation undefined: %s", e)
    return result


def first_policy_times(store: Store) -> Dict[Tuple[InstanceRef, InstanceRef], int]:
    """Earliest observation at which each source lists each target."""
    first: Dict[Tuple[InstanceRef, InstanceRef], int] = {}
    for snapshot in store.snapshots():
        if not snapshot.ok:
            continue
        for target in snapshot.policy_config.target_domains():
            key = (snapshot.instance, target)
            if key not in first or snapshot.observed_at < first[key]:
                first[key] = snapshot.observed_at
    return first


def response_lags(store: Store, targets: Optional[Iterable[InstanceRef]] = None,
                  sources: Optional[Iterable[InstanceRef]] = None) -> List[LagRecord]:
    """Delay between federating with a target and first acting against it.

    Edges already present at the source's first observation are dropped,
    as are pairs where the action predates the observed federation.
    """
    wanted_targets = set(targets) if targets is not None else None
    wanted_sources = set(sources) if sources is not None else None
    policy_at = first_policy_times(store)
    records = []
    dropped = 0
    for edge in store.edges():
        if edge.pre_window:
            continue
        if wanted_targets is not None and edge.target not in wanted_targets:
            continue
        if wanted_sources is not None and edge.source not in wanted_sources:
            continue
        acted = policy_at.get((edge.source, edge.target))
        if acted is None:
            continue
        if acted < edge.first_seen:
            dropped += 1
            continue
        records.append(LagRecord(edge.source, edge.target, edge.first_seen, acted,
                                 (acted - edge.first_seen) / SECONDS_PER_DAY))
    if dropped:
        logger.debug("Dropped %d pairs acted on before federation was observed", dropped)
    return sorted(records, key=lambda r: (r.source, r.target))


class EmpiricalCDF:
    """Right-continuous step function F(x) = #{v <= x} / n."""

    def __init__(self, values: Iterable[float]):
        self.values = np.sort(np.asarray(list(values), dtype=float))
        if self.values.size == 0:
            raise InsufficientDataError("Empirical CDF of an empty sample")

    def __call__(self, x: float) -> float:
        return float(np.searchsorted(self.values, x, side="right") / self.values.size)

    def __len__(self) -> int:
        return int(self.values.size)

    def steps(self) -> List[Tuple[float, float]]:
        """(x, F(x)) at each distinct value."""
        unique = np.unique(self.values)
        return [(float(x), self(x)) for x in unique]


def empirical_cdf(values: Iterable[float]) -> EmpiricalCDF:
    return EmpiricalCDF(values)


@dataclass(frozen=True)
class LagGroupRow:
    group: str
    target: str
    policies_against: int
    mean_lag_days: float

    def row(self) -> Tuple:
        return (self.group, self.target, self.policies_against, self.mean_lag_days)


def lag_groups(lags: Sequence[LagRecord], k: int = LAG_GROUP_SIZE) -> List[LagGroupRow]:
    """Top-k and bottom-k targets by number of policies against them.

    Ties break by domain.
    """
    per_target: Dict[InstanceRef, List[float]] = defaultdict(list)
    for record in lags:
        per_target[record.target].append(record.lag_days)
    top = sorted(per_target, key=lambda t: (-len(per_target[t]), t.domain))[:k]
    bottom = sorted(per_target, key=lambda t: (len(per_target[t]), t.domain))[:k]
    return [
        LagGroupRow(group, t.domain, len(per_target[t]), mean(per_target[t]))
        for group, chosen in (("top", top), ("bottom", bottom))
        for t in chosen
    ]


def simple_action_counts(store: Store, at: int) -> Dict[InstanceRef, Dict[str, int]]:
    """Per-instance SimplePolicy target counts by action, at ``at``."""
    return {
        instance: snapshot.policy_config.action_counts()
        for instance, snapshot in store.snapshots_at(at).items()
        if snapshot.policy_config.exposed
    }


@dataclass
class ModeratorGroup:
    instances: List[InstanceRef] = field(default_factory=list)
    footprint: Dict[str, float] = field(default_factory=dict)
    lag_days: List[float] = field(default_factory=list)
    actions: Dict[str, float] = field(default_factory=dict)


@dataclass
class ModeratorSplit:
    """Instances with and without moderators beyond their administrators."""
    with_dedicated_mods: ModeratorGroup
    without: ModeratorGroup

    def rows(self) -> List[Tuple[str, str, str, float]]:
        rows: List[Tuple[str, str, str, float]] = []
        for name, group in (("with_dedicated_mods", self.with_dedicated_mods), ("without", self.without)):
            rows.append((name, "instances", "", len(group.instances)))
            rows.extend((name, "pct_instances", policy, pct) for policy, pct in group.footprint.items())
            rows.extend((name, "mean_targets", action, value) for action, value in group.actions.items())
            rows.append((name, "lag_days", "count", len(group.lag_days)))
            if group.lag_days:
                rows.append((name, "lag_days", "mean", mean(group.lag_days)))
                rows.append((name, "lag_days", "median", median(group.lag_days)))
        return rows


def moderator_split(store: Store, at: int, top: int = MODERATOR_SPLIT_TOP_POLICIES) -> ModeratorSplit:
    """Compare instances that delegate moderation against those that do not.

    Each group gets its footprint over the overall top ``top`` policies,
    its mean SimplePolicy targets per action and its response lags.
    """
    snapshots = {i: s for i, s in store.snapshots_at(at).items() if s.staff_exposed}
    leaders = [row.policy_name for row in footprint_of(snapshots.values())[:top]]
    lags = response_lags(store)
    split = ModeratorSplit(ModeratorGroup(), ModeratorGroup())
    for instance, snapshot in sorted(snapshots.items()):
        group = split.with_dedicated_mods if snapshot.has_dedicated_moderators else split.without
        group.instances.append(instance)
    for group in (split.with_dedicated_mods, split.without):
        members: Set[InstanceRef] = set(group.instances)
        rows = {r.policy_name: r.pct_instances for r in footprint_of(snapshots[i] for i in group.instances)}
        group.footprint = {name: rows.get(name, 0.0) for name in leaders}
        exposed = [snapshots[i] for i in group.instances if snapshots[i].policy_config.exposed]
        if exposed:
            totals: Counter = Counter()
            for snapshot in exposed:
                totals.update(snapshot.policy_config.action_counts())
            group.actions = {action: totals[action] / len(exposed) for action in sorted(totals)}
        group.lag_days = [r.lag_days for r in lags if r.source in members]
    return split


@dataclass
class PolicyTableRow:
    policy_name: str
    pct_instances: float
    pct_users: float
    pct_posts: float
    instances: int
    growth_pct: Optional[float]

    def row(self) -> Tuple:
        growth = "" if self.growth_pct is None else self.growth_pct
        return (self.policy_name, self.pct_instances, self.pct_users, self.pct_posts, self.instances, growth)


def policy_table(store: Store, top: int = MODERATOR_SPLIT_TOP_POLICIES) -> List[PolicyTableRow]:
    """Top policies at the last observation with their growth in instances since the first."""
    start, end = store.time_range()
    first = {r.policy_name: r.instances for r in policy_footprint(store, start)}
    rows = []
    for row in policy_footprint(store, end)[:top]:
        before = first.get(row.policy_name, 0)
        growth = 100.0 * (row.instances - before) / before if before else None
        rows.append(PolicyTableRow(row.policy_name, row.pct_instances, row.pct_users, row.pct_posts,
                                   row.instances, growth))
    return rows


def lag_summary(lags: Sequence[LagRecord]) -> Dict[str, float]:
    """Count, mean and median of lag days (mean/median absent when empty)."""
    values = [r.lag_days for r in lags]
    summary: Dict[str, float] = {"count": len(values)}
    if values:
        summary["mean"] = mean(values)
        summary["median"] = median(values)
    return summary


def histogram_rows(histogram: Mapping[int, float]) -> List[Tuple[int, float]]:
    return [(n, pct) for n, pct in sorted(histogram.items())]
