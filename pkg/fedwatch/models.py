"""Data models for fedwatch.

This module defines the records fedwatch observes, stores and analyses:
instances and their timestamped snapshots, parsed MRF policy state,
federation edges, anonymised post counters, fetch outcomes, and the
crawl configuration/report pair, and the configuration of the synthetic
corpus generator and of one CLI run. Records are frozen dataclasses with
``to_dict``/``from_dict`` so the store can persist them as one JSON
object per line.
"""

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

from .constants import (
    DECISION_THRESHOLD,
    DEFAULT_CADENCE_SECONDS,
    DEFAULT_MAX_CONCURRENCY,
    DEFAULT_MAX_TIMELINE_PAGES,
    DEFAULT_PER_HOST_MIN_INTERVAL_MS,
    DEFAULT_TIMEOUT_MS,
    HASHTAG_RULE_KEYS,
    MONTH_SECONDS,
    SIMPLE_ACTIONS,
    SYNTH_ADMIN_DISTRIBUTION,
    SYNTH_CADENCE_SECONDS,
    SYNTH_LEXICON_TERMS,
    SYNTH_MONTHS,
    SYNTH_NEW_VERSION,
    SYNTH_OLD_VERSION,
    SYNTH_POLICY_ADOPTION,
    SYNTH_START,
    USER_AGENT,
)
from .exceptions import FedwatchConfigError, PolicyParseError

_LABEL = r"[a-z0-9_](?:[a-z0-9_-]{0,61}[a-z0-9_])?"
_HOSTNAME_RE = re.compile(rf"^{_LABEL}(?:\.{_LABEL})*$")


@dataclass(frozen=True, order=True)
class InstanceRef:
    """An instance, keyed by its lowercase DNS name."""
    domain: str

    def __post_init__(self):
        if not isinstance(self.domain, str):
            raise ValueError(f"Instance domain must be a string, got {type(self.domain).__name__}")
        domain = self.domain.strip().lower().rstrip(".")
        if not domain:
            raise ValueError("Instance domain must not be empty")
        if len(domain) > 253 or not _HOSTNAME_RE.match(domain):
            raise ValueError(f"Invalid instance domain: {self.domain!r}")
        object.__setattr__(self, "domain", domain)

    def __str__(self) -> str:
        return self.domain


class FetchOutcome(Enum):
    """Classified result of one fetch."""
    OK = "ok"
    NON_EXISTENT_DOMAIN = "non_existent_domain"
    NOT_FOUND_404 = "not_found_404"
    PRIVATE_403 = "private_403"
    BAD_GATEWAY_502 = "bad_gateway_502"
    UNAVAILABLE_503 = "unavailable_503"
    GONE_410 = "gone_410"
    OTHER = "other"


class SimpleAction(Enum):
    """SimplePolicy actions an instance can apply against another."""
    REJECT = "reject"
    ACCEPT = "accept"
    NSFW = "nsfw"
    MEDIA_REMOVAL = "media_removal"
    FEDERATED_TIMELINE_REMOVAL = "federated_timeline_removal"
    QUARANTINE = "quarantine"
    REJECT_DELETES = "reject_deletes"
    REPORT_REMOVAL = "report_removal"
    AVATAR_REMOVAL = "avatar_removal"
    BANNER_REMOVAL = "banner_removal"
    FOLLOWERS_ONLY = "followers_only"


if tuple(a.value for a in SimpleAction) != SIMPLE_ACTIONS:
    raise ImportError("SimpleAction members do not match SIMPLE_ACTIONS")


@dataclass(frozen=True)
class SimplePolicyTarget:
    """One directed SimplePolicy action against a target instance."""
    action: SimpleAction
    target: InstanceRef

    def __lt__(self, other):
        return (self.action.value, self.target) < (other.action.value, other.target)


@dataclass(frozen=True)
class HashtagRules:
    """Sizes of the MRF hashtag rule lists."""
    federated_timeline_removal: int = 0
    reject: int = 0
    sensitive: int = 0

    def to_dict(self) -> Dict[str, int]:
        return {key: getattr(self, key) for key in HASHTAG_RULE_KEYS}

    @classmethod
    def from_dict(cls, data: Mapping[str, int]) -> "HashtagRules":
        return cls(**{key: int(data.get(key, 0)) for key in HASHTAG_RULE_KEYS})


@dataclass(frozen=True)
class PolicyConfig:
    """Parsed MRF policy state of one instance at one observation.

    ``other_actions`` keeps SimplePolicy keys outside the known action set,
    mapped to their verbatim target lists. ``exposed`` is False when the
    instance publishes no policy section at all.
    """
    enabled_policies: FrozenSet[str] = frozenset()
    simple_targets: Tuple[SimplePolicyTarget, ...] = ()
    hashtag_rules: HashtagRules = field(default_factory=HashtagRules)
    other_actions: Tuple[Tuple[str, Tuple[str, ...]], ...] = ()
    exposed: bool = True

    @classmethod
    def unexposed(cls) -> "PolicyConfig":
        return cls(exposed=False)

    @property
    def is_unexposed(self) -> bool:
        return not self.exposed

    def targets_for(self, action: SimpleAction) -> List[InstanceRef]:
        return [t.target for t in self.simple_targets if t.action is action]

    def target_domains(self) -> FrozenSet[InstanceRef]:
        return frozenset(t.target for t in self.simple_targets)

    def action_counts(self) -> Dict[str, int]:
        counts = {action: 0 for action in SIMPLE_ACTIONS}
        for target in self.simple_targets:
            counts[target.action.value] += 1
        return counts

    def to_dict(self) -> Dict[str, Any]:
        return {
            "exposed": self.exposed,
            "enabled_policies": sorted(self.enabled_policies),
            "simple_targets": [[t.action.value, t.target.domain] for t in self.simple_targets],
            "hashtag_rules": self.hashtag_rules.to_dict(),
            "other_actions": {key: list(values) for key, values in self.other_actions},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PolicyConfig":
        return cls(
            enabled_policies=frozenset(data.get("enabled_policies", ())),
            simple_targets=tuple(
                SimplePolicyTarget(SimpleAction(action), InstanceRef(domain))
                for action, domain in data.get("simple_targets", ())
            ),
            hashtag_rules=HashtagRules.from_dict(data.get("hashtag_rules", {})),
            other_actions=tuple(
                (key, tuple(values)) for key, values in sorted(data.get("other_actions", {}).items())
            ),
            exposed=bool(data.get("exposed", True)),
        )


@dataclass(frozen=True)
class InstanceSnapshot:
    """One timestamped observation of an instance."""
    instance: InstanceRef
    observed_at: int
    user_count: int = 0
    post_count: int = 0
    active_month: int = 0
    active_halfyear: int = 0
    version: str = ""
    admins: FrozenSet[str] = frozenset()
    moderators: FrozenSet[str] = frozenset()
    policy_config: PolicyConfig = field(default_factory=PolicyConfig.unexposed)
    fetch_status: FetchOutcome = FetchOutcome.OK

    def validate(self) -> None:
        """Check the type invariants.

        Raises:
            ValueError: If a count is negative or the timestamp is not an integer
        """
        if not isinstance(self.observed_at, int) or isinstance(self.observed_at, bool):
            raise ValueError(f"observed_at must be integer seconds, got {self.observed_at!r}")
        for name in ("user_count", "post_count", "active_month", "active_halfyear"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")

    @property
    def ok(self) -> bool:
        return self.fetch_status is FetchOutcome.OK

    @property
    def staff_exposed(self) -> bool:
        return bool(self.admins)

    @property
    def has_dedicated_moderators(self) -> bool:
        return bool(self.moderators - self.admins)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "instance": self.instance.domain,
            "observed_at": self.observed_at,
            "user_count": self.user_count,
            "post_count": self.post_count,
            "active_month": self.active_month,
            "active_halfyear": self.active_halfyear,
            "version": self.version,
            "admins": sorted(self.admins),
            "moderators": sorted(self.moderators),
            "policy_config": self.policy_config.to_dict(),
            "fetch_status": self.fetch_status.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "InstanceSnapshot":
        return cls(
            instance=InstanceRef(data["instance"]),
            observed_at=int(data["observed_at"]),
            user_count=int(data.get("user_count", 0)),
            post_count=int(data.get("post_count", 0)),
            active_month=int(data.get("active_month", 0)),
            active_halfyear=int(data.get("active_halfyear", 0)),
            version=data.get("version", ""),
            admins=frozenset(data.get("admins", ())),
            moderators=frozenset(data.get("moderators", ())),
            policy_config=PolicyConfig.from_dict(data.get("policy_config", {"exposed": False})),
            fetch_status=FetchOutcome(data.get("fetch_status", "ok")),
        )


@dataclass(frozen=True)
class FederationEdge:
    """First observation of ``source`` peering with ``target``."""
    source: InstanceRef
    target: InstanceRef
    first_seen: int
    pre_window: bool = False

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError(f"Federation edge cannot loop on {self.source}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "source": self.source.domain,
            "target": self.target.domain,
            "first_seen": self.first_seen,
            "pre_window": self.pre_window,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FederationEdge":
        return cls(
            source=InstanceRef(data["source"]),
            target=InstanceRef(data["target"]),
            first_seen=int(data["first_seen"]),
            pre_window=bool(data.get("pre_window", False)),
        )


@dataclass(frozen=True)
class Post:
    """Derived counters of one local post. The post text is never kept.

    ``author_key`` is a salted hash of the author account, used only to
    count each author's followers/following once.
    """
    instance: InstanceRef
    post_id: str
    created_at: int
    mentions: int = 0
    hashtags: int = 0
    urls: int = 0
    hate_hits: int = 0
    reblogs_count: int = 0
    replies_count: int = 0
    author_key: str = ""
    author_followers: int = 0
    author_following: int = 0

    def validate(self) -> None:
        for name in ("mentions", "hashtags", "urls", "hate_hits", "reblogs_count",
                     "replies_count", "author_followers", "author_following"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "instance": self.instance.domain,
            "post_id": self.post_id,
            "created_at": self.created_at,
            "mentions": self.mentions,
            "hashtags": self.hashtags,
            "urls": self.urls,
            "hate_hits": self.hate_hits,
            "reblogs_count": self.reblogs_count,
            "replies_count": self.replies_count,
            "author_key": self.author_key,
            "author_followers": self.author_followers,
            "author_following": self.author_following,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Post":
        return cls(
            instance=InstanceRef(data["instance"]),
            post_id=str(data["post_id"]),
            created_at=int(data["created_at"]),
            mentions=int(data.get("mentions", 0)),
            hashtags=int(data.get("hashtags", 0)),
            urls=int(data.get("urls", 0)),
            hate_hits=int(data.get("hate_hits", 0)),
            reblogs_count=int(data.get("reblogs_count", 0)),
            replies_count=int(data.get("replies_count", 0)),
            author_key=data.get("author_key", ""),
            author_followers=int(data.get("author_followers", 0)),
            author_following=int(data.get("author_following", 0)),
        )


@dataclass(frozen=True)
class TimeWindow:
    """Half-open interval [start, end) of Unix seconds."""
    start: int
    end: int

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError(f"Empty window [{self.start}, {self.end})")

    def __contains__(self, timestamp: int) -> bool:
        return self.start <= timestamp < self.end


@dataclass(frozen=True)
class MetadataDocument:
    """Verbatim metadata bodies of one instance.

    ``instance`` is the body of the instance endpoint; ``nodeinfo`` is the
    body of the nodeinfo document it advertises, when one was reachable.
    """
    instance: bytes
    nodeinfo: Optional[bytes] = None

    @classmethod
    def from_json(cls, instance: Any, nodeinfo: Any = None) -> "MetadataDocument":
        return cls(
            instance=json.dumps(instance).encode("utf-8"),
            nodeinfo=None if nodeinfo is None else json.dumps(nodeinfo).encode("utf-8"),
        )

    def instance_json(self) -> Any:
        return _decode_json(self.instance, "$instance")

    def nodeinfo_json(self) -> Any:
        if self.nodeinfo is None:
            return None
        return _decode_json(self.nodeinfo, "$nodeinfo")


def _decode_json(body: bytes, path: str) -> Any:
    try:
        return json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise PolicyParseError(f"not a JSON document ({e})", path) from e


@dataclass
class CrawlConfig:
    """Crawl cadence, politeness and depth settings."""
    seed_instances: List[InstanceRef] = field(default_factory=list)
    cadence_seconds: int = DEFAULT_CADENCE_SECONDS
    per_host_min_interval_ms: int = DEFAULT_PER_HOST_MIN_INTERVAL_MS
    max_concurrency: int = DEFAULT_MAX_CONCURRENCY
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_timeline_pages: int = DEFAULT_MAX_TIMELINE_PAGES
    mock_base_url: Optional[str] = None
    user_agent: str = USER_AGENT

    def validate(self) -> None:
        """Check the configuration invariants.

        Raises:
            FedwatchConfigError: Naming the first offending field
        """
        for name in ("cadence_seconds", "per_host_min_interval_ms", "max_concurrency",
                     "timeout_ms", "max_timeline_pages"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise FedwatchConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.cadence_seconds < self.per_host_min_interval_ms / 1000:
            raise FedwatchConfigError(
                "cadence_seconds must be at least per_host_min_interval_ms/1000 "
                f"({self.cadence_seconds} < {self.per_host_min_interval_ms / 1000})"
            )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CrawlConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise FedwatchConfigError(f"Unknown crawl config keys: {sorted(unknown)}")
        values = dict(data)
        try:
            values["seed_instances"] = [InstanceRef(d) for d in data.get("seed_instances", [])]
        except ValueError as e:
            raise FedwatchConfigError(f"seed_instances: {e}") from e
        config = cls(**values)
        config.validate()
        return config


@dataclass
class CrawlReport:
    """Tallies of one crawl cycle.

    ``outcomes`` holds one class per attempted instance (its metadata
    fetch); ``fetches`` holds one class per HTTP fetch of the cycle.
    """
    started_at: int
    outcomes: Counter = field(default_factory=Counter)
    fetches: Counter = field(default_factory=Counter)
    new_snapshots: int = 0
    new_edges: int = 0
    new_posts: int = 0
    attempted: List[str] = field(default_factory=list)
    discovered: List[str] = field(default_factory=list)
    non_compatible: List[str] = field(default_factory=list)
    parse_errors: Dict[str, str] = field(default_factory=dict)

    def record(self, instance: InstanceRef, outcome: FetchOutcome) -> None:
        self.attempted.append(instance.domain)
        self.outcomes[outcome.value] += 1

    def record_fetch(self, outcome: FetchOutcome) -> None:
        self.fetches[outcome.value] += 1

    def tally(self) -> Dict[str, int]:
        return dict(sorted(self.outcomes.items()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "started_at": self.started_at,
            "outcomes": self.tally(),
            "fetches": dict(sorted(self.fetches.items())),
            "parse_errors": dict(sorted(self.parse_errors.items())),
            "new_snapshots": self.new_snapshots,
            "new_edges": self.new_edges,
            "new_posts": self.new_posts,
            "attempted": sorted(self.attempted),
            "discovered": sorted(self.discovered),
            "non_compatible": sorted(self.non_compatible),
        }


@dataclass
class CorpusParams:
    """Knobs of the synthetic fediverse generator.

    Sizes are log-normal over stored posts and users. Controversial
    instances post with elevated hate and mention rates; moderating
    instances act against their controversial peers and, with a
    smaller probability, against the largest benign ones. Moderating
    instances at or below the large-instance post threshold respond to
    controversial peers with ``small_response_factor`` times the usual
    probability. Delays between federating and acting are gamma
    distributed.
    """
    n_instances: int = 200
    months: int = SYNTH_MONTHS
    cadence_seconds: int = SYNTH_CADENCE_SECONDS
    start: int = SYNTH_START
    seed: int = 0
    controversial_fraction: float = 0.1
    hate_rate_controversial: float = 0.3
    hate_rate_benign: float = 0.01
    mention_rate_controversial: float = 1.5
    mention_rate_benign: float = 0.4
    posts_log_mean: float = 5.0
    posts_log_sigma: float = 1.0
    min_posts: int = 20
    max_posts: int = 3000
    users_log_mean: float = 4.0
    users_log_sigma: float = 1.2
    post_multiplier: int = 100
    peers_min: int = 6
    peers_max: int = 40
    moderating_fraction: float = 0.3
    response_probability: float = 0.8
    small_response_factor: float = 0.5
    size_target_quantile: float = 0.8
    size_response_probability: float = 0.5
    delay_mean_days: float = 45.0
    delay_shape: float = 4.0
    pre_window_fraction: float = 0.5
    preexisting_policy_fraction: float = 0.5
    admin_distribution: Dict[int, float] = field(default_factory=lambda: dict(SYNTH_ADMIN_DISTRIBUTION))
    admin_growth_fraction: float = 0.05
    moderator_fraction: float = 0.2
    unexposed_fraction: float = 0.05
    policy_adoption: Dict[str, float] = field(default_factory=lambda: dict(SYNTH_POLICY_ADOPTION))
    policy_growth: float = 0.4
    old_version: str = SYNTH_OLD_VERSION
    new_version: str = SYNTH_NEW_VERSION
    new_install_fraction: float = 0.4
    upgrade_fraction: float = 0.5
    text_posts: int = 100
    lexicon_terms: Tuple[str, ...] = SYNTH_LEXICON_TERMS

    _FRACTIONS = (
        "controversial_fraction", "hate_rate_controversial", "hate_rate_benign",
        "moderating_fraction", "response_probability", "small_response_factor", "size_target_quantile",
        "size_response_probability", "pre_window_fraction", "preexisting_policy_fraction",
        "admin_growth_fraction", "moderator_fraction", "unexposed_fraction",
        "new_install_fraction", "upgrade_fraction",
    )

    @property
    def span_seconds(self) -> int:
        return self.months * MONTH_SECONDS

    def validate(self) -> None:
        """Check the parameter invariants.

        Raises:
            FedwatchConfigError: Naming the first offending field
        """
        if not isinstance(self.n_instances, int) or self.n_instances < 1:
            raise FedwatchConfigError(f"n_instances must be a positive integer, got {self.n_instances!r}")
        for name in ("months", "cadence_seconds", "post_multiplier", "min_posts", "peers_min"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise FedwatchConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.cadence_seconds > MONTH_SECONDS:
            raise FedwatchConfigError(f"cadence_seconds must not exceed a month, got {self.cadence_seconds}")
        if self.max_posts < self.min_posts:
            raise FedwatchConfigError(f"max_posts ({self.max_posts}) < min_posts ({self.min_posts})")
        if self.peers_max < self.peers_min:
            raise FedwatchConfigError(f"peers_max ({self.peers_max}) < peers_min ({self.peers_min})")
        for name in self._FRACTIONS:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise FedwatchConfigError(f"{name} must be in [0, 1], got {value!r}")
        for name in ("mention_rate_controversial", "mention_rate_benign", "posts_log_sigma",
                     "users_log_sigma", "policy_growth", "text_posts"):
            if getattr(self, name) < 0:
                raise FedwatchConfigError(f"{name} must be non-negative, got {getattr(self, name)!r}")
        if self.delay_mean_days < 0:
            raise FedwatchConfigError(f"delay_mean_days must be non-negative, got {self.delay_mean_days!r}")
        if self.delay_shape <= 0:
            raise FedwatchConfigError(f"delay_shape must be positive, got {self.delay_shape!r}")
        if not self.admin_distribution or any(
            int(k) < 1 or v < 0 for k, v in self.admin_distribution.items()
        ) or abs(sum(self.admin_distribution.values()) - 1.0) > 1e-9:
            raise FedwatchConfigError("admin_distribution must map admin counts >= 1 to weights summing to 1")
        for name, p in self.policy_adoption.items():
            if not 0.0 <= p <= 1.0:
                raise FedwatchConfigError(f"policy_adoption[{name}] must be in [0, 1], got {p!r}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CorpusParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise FedwatchConfigError(f"Unknown corpus parameter keys: {sorted(unknown)}")
        values = dict(data)
        if "admin_distribution" in values:
            values["admin_distribution"] = {int(k): float(v) for k, v in values["admin_distribution"].items()}
        if "lexicon_terms" in values:
            values["lexicon_terms"] = tuple(values["lexicon_terms"])
        params = cls(**values)
        params.validate()
        return params

    @classmethod
    def from_json(cls, path: str) -> "CorpusParams":
        """Load parameters from a JSON file.

        Raises:
            FedwatchConfigError: If the file is unreadable or a value is invalid
        """
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise FedwatchConfigError(f"Cannot read corpus parameters {path}: {e}") from e
        if not isinstance(data, dict):
            raise FedwatchConfigError(f"{path}: corpus parameters must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values["admin_distribution"] = {str(k): v for k, v in sorted(self.admin_distribution.items())}
        values["policy_adoption"] = dict(sorted(self.policy_adoption.items()))
        values["lexicon_terms"] = list(self.lexicon_terms)
        return values


@dataclass
class RunConfig:
    """Flags of one CLI invocation, validated before any work starts."""
    command: str
    store: Optional[str] = None
    out: Optional[str] = None
    seed: int = 0
    mock_base_url: Optional[str] = None
    lexicon: Optional[str] = None
    task: Optional[str] = None
    family: Optional[str] = None
    report: Optional[str] = None
    format: str = "csv"
    params: Optional[str] = None
    config: Optional[str] = None
    model: Optional[str] = None
    threshold: float = DECISION_THRESHOLD
    top_k: Optional[int] = None
    ablate: bool = False
    cycles: int = 1
    seeds: List[str] = field(default_factory=list)
    n_jobs: int = 1

    _NEEDS_STORE = ("crawl", "analyze", "features", "train", "predict", "report")
    _NEEDS_OUT = ("synth", "features", "train", "predict", "report")

    def validate(self) -> None:
        """Check that the flags make sense together.

        Raises:
            FedwatchConfigError: Naming the offending flag
        """
        if self.command in self._NEEDS_STORE and not self.store:
            raise FedwatchConfigError(f"{self.command} requires --store")
        if self.command in self._NEEDS_OUT and not self.out:
            raise FedwatchConfigError(f"{self.command} requires --out")
        if self.command == "train" and not (self.task and self.family):
            raise FedwatchConfigError("train requires --task and --family")
        if self.command == "predict" and not self.model:
            raise FedwatchConfigError("predict requires --model")
        if self.command == "analyze" and not self.report:
            raise FedwatchConfigError("analyze requires --report")
        if self.command == "crawl" and not (self.seeds or self.config):
            raise FedwatchConfigError("crawl requires --seed-instance or --config")
        if self.ablate and self.task != "global":
            raise FedwatchConfigError("--ablate only applies to --task global")
        if self.format not in ("csv", "json"):
            raise FedwatchConfigError(f"--format must be csv or json, got {self.format!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise FedwatchConfigError(f"--threshold must be in [0, 1], got {self.threshold}")
        if self.top_k is not None and self.top_k < 1:
            raise FedwatchConfigError(f"--top-k must be positive, got {self.top_k}")
        if self.cycles < 1:
            raise FedwatchConfigError(f"--cycles must be positive, got {self.cycles}")


def instance_set(domains: Iterable[str]) -> FrozenSet[InstanceRef]:
    """Build a set of instances from domain strings."""
    return frozenset(InstanceRef(d) for d in domains)
