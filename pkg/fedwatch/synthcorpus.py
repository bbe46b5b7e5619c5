"""Synthetic fediverse generator.

Builds a store whose ground truth is known, so every stage of the
pipeline can be checked at desk scale. The generator:
- draws log-normal instance sizes and a random, size-weighted peer graph
- plants controversial instances with elevated hate and mention rates
- lets moderating instances act against controversial peers, and against
  the largest benign ones, after gamma-distributed delays; small moderating
  instances respond less consistently than large ones
- rolls out versions across the 2.3.0 defaults threshold and grows
  policy deployments by a fixed fraction
- writes one snapshot per instance per cadence tick, edges through the
  store's peer diffing, and per-post counters

Post bodies are never generated, apart from a small textual sub-corpus
that goes through the real tokenizer and lexicon matcher. Generation is
single threaded and driven by one seeded ``numpy`` generator, so the
same parameters always produce the same bytes.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Set, Tuple, Union

import numpy as np

from .constants import (
    EDGES_FILE,
    LARGE_INSTANCE_POSTS,
    MANIFEST_FILE,
    NOOP_POLICY,
    POSTS_FILE,
    POST_THRESHOLD_DEFAULTS,
    SECONDS_PER_DAY,
    SIMPLE_POLICY,
    SNAPSHOTS_FILE,
    SYNTH_ACTION_WEIGHTS,
    SYNTH_TEXT_WORDS,
)
from .crawler import normalize_post
from .exceptions import FedwatchConfigError
from .features import HateLexicon, PostCounters
from .models import (
    CorpusParams,
    HashtagRules,
    InstanceRef,
    InstanceSnapshot,
    PolicyConfig,
    Post,
    SimpleAction,
    SimplePolicyTarget,
)
from .policy import defaults_for, policy_names
from .store import Store
from .utils import anonymize_account, format_timestamp, write_json

logger = logging.getLogger(__name__)

GENERATOR_NAME = "fedwatch.synthcorpus"


@dataclass
class CorpusManifest:
    """Ground truth of a generated corpus."""
    params: Dict[str, Any]
    start: int
    end: int
    ticks: int
    instances: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    events: List[Dict[str, Any]] = field(default_factory=list)
    deployments: Dict[str, int] = field(default_factory=dict)
    text_posts: int = 0

    @property
    def controversial(self) -> List[str]:
        return sorted(d for d, info in self.instances.items() if info["controversial"])

    @property
    def delays(self) -> List[float]:
        """Every sampled delay in days; policies present from the start have none."""
        return [e["delay_days"] for e in self.events if e["delay_days"] is not None]

    @property
    def labels(self) -> Dict[str, int]:
        return {d: info["label"] for d, info in sorted(self.instances.items())}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "generator": GENERATOR_NAME,
            "params": self.params,
            "start": self.start,
            "end": self.end,
            "ticks": self.ticks,
            "instances": self.instances,
            "events": self.events,
            "delays": self.delays,
            "deployments": self.deployments,
            "text_posts": self.text_posts,
        }

    def save(self, path: Union[str, Path]) -> Path:
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CorpusManifest":
        """Read a manifest written by ``save``.

        Raises:
            FedwatchConfigError: If the file is not a corpus manifest
        """
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise FedwatchConfigError(f"Cannot read manifest {path}: {e}") from e
        if not isinstance(data, dict) or data.get("generator") != GENERATOR_NAME:
            raise FedwatchConfigError(f"{path} is not a corpus manifest")
        return cls(
            params=data["params"],
            start=data["start"],
            end=data["end"],
            ticks=data["ticks"],
            instances=data["instances"],
            events=data["events"],
            deployments=data["deployments"],
            text_posts=data["text_posts"],
        )


def apportion(weights: Mapping[int, float], total: int) -> Dict[int, int]:
    """Split ``total`` into integer counts proportional to ``weights`` (largest remainder)."""
    keys = sorted(weights)
    quotas = {k: weights[k] * total for k in keys}
    counts = {k: int(math.floor(quotas[k])) for k in keys}
    leftover = total - sum(counts.values())
    by_remainder = sorted(keys, key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in by_remainder[:leftover]:
        counts[k] += 1
    return counts


def banner(version: str) -> str:
    return f"2.7.2 (compatible; Pleroma {version})"


class _Generator:
    """One generation run; holds the draws shared between the phases."""

    def __init__(self, params: CorpusParams, lexicon: HateLexicon):
        self.params = params
        self.lexicon = lexicon
        self.rng = np.random.default_rng(params.seed)
        n = params.n_instances
        width = max(3, len(str(n - 1)))
        self.domains = [InstanceRef(f"inst{i:0{width}d}.synth.example") for i in range(n)]
        self.ticks = list(range(params.start, params.start + params.span_seconds, params.cadence_seconds))

    def _day_tick(self, timestamp: float) -> int:
        """Index of the first tick at or after ``timestamp``."""
        return max(0, math.ceil((timestamp - self.params.start) / self.params.cadence_seconds))

    # Population

    def draw_population(self) -> None:
        p, rng, n = self.params, self.rng, self.params.n_instances
        self.posts = np.clip(np.rint(rng.lognormal(p.posts_log_mean, p.posts_log_sigma, n)),
                             p.min_posts, p.max_posts).astype(int)
        self.users = np.maximum(1, np.rint(rng.lognormal(p.users_log_mean, p.users_log_sigma, n))).astype(int)
        weights = self.posts / self.posts.sum()

        k = int(round(p.controversial_fraction * n))
        self.controversial: Set[int] = set(int(i) for i in rng.choice(n, size=k, replace=False))
        benign = [i for i in range(n) if i not in self.controversial]

        m = min(int(round(p.moderating_fraction * n)), len(benign))
        self.moderating: Set[int] = set()
        if m:
            w = weights[benign] / weights[benign].sum()
            self.moderating = set(int(i) for i in rng.choice(benign, size=m, replace=False, p=w))

        self.size_targets: Set[int] = set()
        if benign:
            cutoff = np.quantile(self.posts[benign], p.size_target_quantile)
            self.size_targets = {i for i in benign if self.posts[i] >= cutoff}

        hideable = [i for i in benign if i not in self.moderating and i not in self.size_targets]
        u = min(int(round(p.unexposed_fraction * n)), len(hideable))
        self.unexposed: Set[int] = set(int(i) for i in rng.choice(hideable, size=u, replace=False)) if u else set()

    def draw_peers(self) -> None:
        p, rng, n = self.params, self.rng, self.params.n_instances
        self.peers: Dict[int, Set[int]] = {i: set() for i in range(n)}
        self.edge_tick: Dict[Tuple[int, int], int] = {}
        if n < 2:
            return
        ranks = np.argsort(np.argsort(self.posts, kind="stable"), kind="stable") / max(n - 1, 1)
        for i in range(n):
            k = min(n - 1, p.peers_min + int(round((p.peers_max - p.peers_min) * ranks[i])))
            others = np.array([j for j in range(n) if j != i])
            w = self.posts[others] / self.posts[others].sum()
            for j in rng.choice(others, size=k, replace=False, p=w):
                self.peers[i].add(int(j))
                self.peers[int(j)].add(i)
        for i in sorted(self.controversial | self.size_targets):
            responders = sorted(self.moderating - {i})
            if responders and not (self.peers[i] & self.moderating):
                j = int(rng.choice(responders))
                self.peers[i].add(j)
                self.peers[j].add(i)

        last = len(self.ticks) - 1
        latest = self._day_tick(self.params.start + p.span_seconds - 4 * p.delay_mean_days * SECONDS_PER_DAY)
        latest = min(max(1, latest), last)
        for a in range(n):
            for b in sorted(self.peers[a]):
                if b < a:
                    continue
                pre = last == 0 or rng.random() < p.pre_window_fraction
                tick = 0 if pre else int(rng.integers(1, latest + 1))
                self.edge_tick[(a, b)] = self.edge_tick[(b, a)] = tick

    # Policies

    def large(self, i: int) -> bool:
        return int(self.posts[i]) * self.params.post_multiplier > LARGE_INSTANCE_POSTS

    def draw_events(self) -> None:
        p, rng = self.params, self.rng
        actions = sorted(SYNTH_ACTION_WEIGHTS)
        action_p = np.array([SYNTH_ACTION_WEIGHTS[a] for a in actions])
        action_p = action_p / action_p.sum()
        chosen: Dict[int, List[Tuple[int, str]]] = {}
        for s in sorted(self.moderating):
            respond = p.response_probability if self.large(s) else p.response_probability * p.small_response_factor
            for t in sorted(self.peers[s]):
                if t in self.controversial and rng.random() < respond:
                    chosen.setdefault(t, []).append((s, "controversial"))
                elif t in self.size_targets and t not in self.controversial and rng.random() < p.size_response_probability:
                    chosen.setdefault(t, []).append((s, "size"))
        for t in sorted(self.controversial | self.size_targets):
            if t in chosen:
                continue
            responders = sorted(self.peers[t] & self.moderating)
            if responders:
                reason = "controversial" if t in self.controversial else "size"
                chosen[t] = [(int(rng.choice(responders)), reason)]

        self.events: List[Dict[str, Any]] = []
        for t in sorted(chosen):
            for s, reason in sorted(chosen[t]):
                fed_tick = self.edge_tick[(s, t)]
                action = actions[int(rng.choice(len(actions), p=action_p))]
                if fed_tick == 0 and rng.random() < p.preexisting_policy_fraction:
                    delay, tick = None, 0
                else:
                    delay = float(rng.gamma(p.delay_shape, p.delay_mean_days / p.delay_shape))
                    tick = self._day_tick(self.ticks[fed_tick] + delay * SECONDS_PER_DAY)
                landed = tick < len(self.ticks)
                self.events.append({
                    "source": self.domains[s].domain,
                    "target": self.domains[t].domain,
                    "action": action,
                    "reason": reason,
                    "federated_at": self.ticks[fed_tick],
                    "pre_window": fed_tick == 0,
                    "delay_days": delay,
                    "policy_at": self.ticks[tick] if landed else None,
                    "_s": s, "_t": t, "_tick": tick if landed else None,
                })

    def draw_staff_and_versions(self) -> None:
        p, rng, n = self.params, self.rng, self.params.n_instances
        last = len(self.ticks) - 1
        counts = apportion({int(k): v for k, v in p.admin_distribution.items()}, n)
        pool = [k for k in sorted(counts) for _ in range(counts[k])]
        self.admins = [int(a) for a in rng.permutation(pool)]
        g = int(round(p.admin_growth_fraction * n)) if last else 0
        self.admin_growth: Dict[int, int] = {
            int(i): int(rng.integers(1, last + 1)) for i in sorted(rng.choice(n, size=g, replace=False))
        } if g else {}
        d = int(round(p.moderator_fraction * n))
        self.dedicated = set(int(i) for i in rng.choice(n, size=d, replace=False)) if d else set()

        self.install_new = rng.random(n) < p.new_install_fraction
        self.upgrade_tick: Dict[int, int] = {}
        for i in range(n):
            if not self.install_new[i] and last and rng.random() < p.upgrade_fraction:
                self.upgrade_tick[i] = int(rng.integers(1, last + 1))

    def draw_deployments(self) -> None:
        p, rng, n = self.params, self.rng, self.params.n_instances
        last = len(self.ticks) - 1
        self.enabled: Dict[int, Set[str]] = {}
        self.rules: Dict[int, HashtagRules] = {}
        for i in range(n):
            version = p.new_version if self.install_new[i] else p.old_version
            names = set(defaults_for(version))
            for name in sorted(p.policy_adoption):
                if rng.random() < p.policy_adoption[name]:
                    names.add(name)
            if i in self.moderating:
                names.add(SIMPLE_POLICY)
            self.enabled[i] = names
            if "HashtagPolicy" in names:
                a, b, c = (int(v) for v in rng.integers(0, 4, size=3))
                self.rules[i] = HashtagRules(a, b, c)

        exposed = [i for i in range(n) if i not in self.unexposed]
        initial = sum(len(policy_names(PolicyConfig(enabled_policies=frozenset(self.enabled[i])))) for i in exposed)
        wanted = int(round(p.policy_growth * initial))
        catalog = sorted((set(p.policy_adoption) | POST_THRESHOLD_DEFAULTS) - {NOOP_POLICY})
        self.additions: List[Tuple[int, str, int]] = []
        final = {i: set(self.enabled[i]) for i in exposed}
        if wanted and not last:
            logger.warning("Corpus has a single tick; no policy growth can be planted")
            wanted = 0
        while len(self.additions) < wanted:
            open_instances = [i for i in exposed if set(catalog) - final[i]]
            if not open_instances:
                logger.warning("Policy catalog exhausted after %d of %d additions", len(self.additions), wanted)
                break
            i = open_instances[int(rng.integers(len(open_instances)))]
            missing = sorted(set(catalog) - final[i])
            name = missing[int(rng.integers(len(missing)))]
            final[i].add(name)
            self.additions.append((i, name, int(rng.integers(1, last + 1))))
        self.deployments = {"initial": initial, "added": len(self.additions)}

    # Posts

    def draw_posts(self) -> List[List[Post]]:
        p, rng, n = self.params, self.rng, self.params.n_instances
        end = p.start + p.span_seconds
        self.author_stats: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        posts: List[List[Post]] = []
        for i in range(n):
            hot = i in self.controversial
            count = int(self.posts[i])
            times = np.sort(rng.integers(p.start, end, size=count))
            authors_n = int(max(1, min(self.users[i], math.ceil(count / 5))))
            followers = rng.integers(0, 200, size=authors_n)
            following = rng.integers(0, 200, size=authors_n)
            self.author_stats[i] = (followers, following)
            url_rate = rng.uniform(0.05, 0.6)
            tag_rate = rng.uniform(0.05, 0.5)
            mention_rate = (p.mention_rate_controversial if hot else p.mention_rate_benign) * rng.uniform(0.25, 1.75)
            mentions = rng.poisson(mention_rate, count)
            hashtags = rng.poisson(tag_rate, count)
            urls = rng.poisson(url_rate, count)
            hate = rng.poisson(p.hate_rate_controversial if hot else p.hate_rate_benign, count)
            reblogs = rng.poisson(1.0, count)
            replies = rng.poisson(0.5, count)
            author = rng.integers(0, authors_n, size=count)
            domain = self.domains[i].domain
            keys = [anonymize_account(f"user{a}", domain) for a in range(authors_n)]
            posts.append([
                Post(
                    instance=self.domains[i],
                    post_id=f"{j + 1:08d}",
                    created_at=int(times[j]),
                    mentions=int(mentions[j]),
                    hashtags=int(hashtags[j]),
                    urls=int(urls[j]),
                    hate_hits=int(hate[j]),
                    reblogs_count=int(reblogs[j]),
                    replies_count=int(replies[j]),
                    author_key=keys[author[j]],
                    author_followers=int(followers[author[j]]),
                    author_following=int(following[author[j]]),
                )
                for j in range(count)
            ])
        return posts

    def draw_text_posts(self, posts: List[List[Post]]) -> int:
        """Add statuses with real bodies, reduced through the crawler's normaliser."""
        p, rng, n = self.params, self.rng, self.params.n_instances
        terms = sorted(self.lexicon.terms)
        added = 0
        for k in range(p.text_posts):
            i = int(rng.integers(n))
            domain = self.domains[i].domain
            words = [str(w) for w in rng.choice(SYNTH_TEXT_WORDS, size=6)]
            hot_rate = 0.5 if i in self.controversial else 0.05
            if terms and rng.random() < hot_rate:
                words.insert(int(rng.integers(len(words) + 1)), terms[int(rng.integers(len(terms)))])
            parts = [" ".join(words)]
            peers = sorted(self.peers[i])
            if peers and rng.random() < 0.5:
                parts.append(f"@user{k}@{self.domains[peers[int(rng.integers(len(peers)))]].domain}")
            if rng.random() < 0.3:
                parts.append(f"#{words[0]}")
            if rng.random() < 0.3:
                parts.append(f"https://{domain}/notice/{k}")
            followers, following = self.author_stats[i]
            a = int(rng.integers(len(followers)))
            created = int(rng.integers(p.start, p.start + p.span_seconds))
            raw = {
                "id": f"t{k:06d}",
                "created_at": format_timestamp(created),
                "content": "<p>" + " ".join(parts) + "</p>",
                "reblogs_count": int(rng.poisson(1.0)),
                "replies_count": int(rng.poisson(0.5)),
                "account": {
                    "id": f"user{a}",
                    "followers_count": int(followers[a]),
                    "following_count": int(following[a]),
                },
            }
            post = normalize_post(raw, self.domains[i], self.lexicon)
            bucket = posts[i]
            bucket.insert(int(np.searchsorted([x.created_at for x in bucket], post.created_at, side="right")), post)
            added += 1
        return added

    # Emission

    def _config(self, i: int, tick: int) -> PolicyConfig:
        if i in self.unexposed:
            return PolicyConfig.unexposed()
        names = set(self.enabled[i]) | {name for name, at in self.additions_by.get(i, ()) if at <= tick}
        targets = tuple(sorted(
            SimplePolicyTarget(SimpleAction(e["action"]), self.domains[e["_t"]])
            for e in self.events_by_source.get(i, ()) if e["_tick"] is not None and e["_tick"] <= tick
        ))
        return PolicyConfig(
            enabled_policies=frozenset(names),
            simple_targets=targets,
            hashtag_rules=self.rules.get(i, HashtagRules()),
        )

    def emit(self, store: Store, posts: List[List[Post]]) -> None:
        p, n = self.params, self.params.n_instances
        self.events_by_source: Dict[int, List[Dict[str, Any]]] = {}
        self.additions_by: Dict[int, List[Tuple[str, int]]] = {}
        for i, name, at in self.additions:
            self.additions_by.setdefault(i, []).append((name, at))
        for e in self.events:
            self.events_by_source.setdefault(e["_s"], []).append(e)
        post_times = [[x.created_at for x in bucket] for bucket in posts]
        new_peers: Dict[Tuple[int, int], List[int]] = {}
        for (a, b), tick in self.edge_tick.items():
            new_peers.setdefault((a, tick), []).append(b)
        seen: Dict[int, Set[InstanceRef]] = {i: set() for i in range(n)}
        last = len(self.ticks) - 1
        with store.bulk():
            for tick, at in enumerate(self.ticks):
                frac = tick / last if last else 1.0
                for i in range(n):
                    inst = self.domains[i]
                    users = int(math.floor(self.users[i] * (0.8 + 0.2 * frac)))
                    upgraded = i in self.upgrade_tick and self.upgrade_tick[i] <= tick
                    version = p.new_version if self.install_new[i] or upgraded else p.old_version
                    admins = self.admins[i] + (1 if self.admin_growth.get(i, last + 1) <= tick else 0)
                    admin_names = frozenset(f"admin{a + 1}" for a in range(admins))
                    moderators = frozenset({"mod1"}) if i in self.dedicated else frozenset({"admin1"})
                    stored = int(np.searchsorted(post_times[i], at, side="right"))
                    store.append_snapshot(InstanceSnapshot(
                        instance=inst,
                        observed_at=at,
                        user_count=users,
                        post_count=stored * p.post_multiplier,
                        active_month=users // 4,
                        active_halfyear=users // 2,
                        version=banner(version),
                        admins=admin_names,
                        moderators=moderators,
                        policy_config=self._config(i, tick),
                    ))
                    fresh = new_peers.get((i, tick))
                    if fresh:
                        current = seen[i] | {self.domains[j] for j in fresh}
                        for edge in store.diff_edges(inst, seen[i], current, at):
                            store.append_edge(edge)
                        seen[i] = current
            for bucket in posts:
                store.append_posts(bucket)

    def manifest(self, posts: List[List[Post]], text_posts: int) -> CorpusManifest:
        p = self.params
        targeted = {e["_t"] for e in self.events if e["_tick"] is not None}
        instances = {}
        for i, inst in enumerate(self.domains):
            counters = PostCounters.from_posts(posts[i])
            instances[inst.domain] = {
                "controversial": i in self.controversial,
                "moderating": i in self.moderating,
                "large": self.large(i),
                "size_target": i in self.size_targets,
                "unexposed": i in self.unexposed,
                "label": int(i in targeted),
                "users": int(self.users[i]),
                "admins": self.admins[i],
                "dedicated_moderators": i in self.dedicated,
                "install_version": p.new_version if self.install_new[i] else p.old_version,
                "peers": sorted(self.domains[j].domain for j in self.peers[i]),
                "totals": {
                    "posts": counters.posts,
                    "hate_count": counters.hate_count,
                    "url_count": counters.url_count,
                    "mentions_count": counters.mentions_count,
                    "hashtags_count": counters.hashtags_count,
                    "reblogs_count": counters.reblogs_count,
                    "replies_count": counters.replies_count,
                    "followers": counters.followers,
                    "following": counters.following,
                },
            }
        events = [{k: v for k, v in e.items() if not k.startswith("_")} for e in self.events]
        return CorpusManifest(
            params=p.to_dict(),
            start=p.start,
            end=self.ticks[-1],
            ticks=len(self.ticks),
            instances=instances,
            events=events,
            deployments=dict(self.deployments),
            text_posts=text_posts,
        )


def _has_records(root: Path) -> bool:
    return any((root / name).exists() and (root / name).stat().st_size
               for name in (SNAPSHOTS_FILE, EDGES_FILE, POSTS_FILE))


def generate_corpus(params: CorpusParams, out: Union[str, Path],
                    lexicon: Optional[HateLexicon] = None) -> Tuple[Store, CorpusManifest]:
    """Generate a synthetic store under ``out`` and write its manifest beside it.

    Args:
        params: Generator parameters
        out: Store directory; must not already hold records
        lexicon: Lexicon for the textual sub-corpus; ``params.lexicon_terms`` by default

    Returns:
        The open store and the ground-truth manifest

    Raises:
        FedwatchConfigError: If the parameters are invalid or ``out`` already holds a store
    """
    params.validate()
    root = Path(out)
    if root.exists() and _has_records(root):
        raise FedwatchConfigError(f"{root} already holds a store; refusing to overwrite it")
    lexicon = lexicon or HateLexicon.from_terms(params.lexicon_terms)
    gen = _Generator(params, lexicon)
    gen.draw_population()
    gen.draw_peers()
    gen.draw_events()
    gen.draw_staff_and_versions()
    gen.draw_deployments()
    posts = gen.draw_posts()
    text_posts = gen.draw_text_posts(posts) if len(lexicon) else 0

    store = Store(root, fsync=False)
    store.update_meta(created_at=params.start, corpus_start=params.start, generator=GENERATOR_NAME,
                      seed=params.seed)
    gen.emit(store, posts)
    manifest = gen.manifest(posts, text_posts)
    manifest.save(root / MANIFEST_FILE)
    logger.info("Generated %d instances over %d ticks: %d planted events, %d controversial",
                params.n_instances, len(gen.ticks), len(manifest.events), len(manifest.controversial))
    return store, manifest
