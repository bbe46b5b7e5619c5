"""Longitudinal fediverse crawler.

This module provides the high-level crawl API. It handles:
- Fetching peers, metadata (instance + nodeinfo) and local timeline pages
- Discovery: peers found in one cycle are attempted in the next; a
  discovered peer that fails before its first snapshot is not rediscovered
- Pleroma-compatibility gating: other software is only an edge target
- Turning timeline statuses into anonymous post counters
- Feeding snapshots, edges and posts to the store through one lock

Every fetch failure is classified into a FetchOutcome and tallied; no
single failure aborts a cycle. There are no intra-cycle retries.
"""

import asyncio
import logging
import time
from typing import Any, Dict, List, Optional, Set, Tuple

import httpx

from .constants import (
    INSTANCE_PATH,
    NODEINFO_WELL_KNOWN_PATH,
    PEERS_PATH,
    TIMELINE_PAGE_LIMIT,
    TIMELINE_PATH,
)
from .exceptions import FetchError, PolicyParseError, StoreError
from .features import HateLexicon, lexicon_hits
from .models import (
    CrawlConfig,
    CrawlReport,
    FetchOutcome,
    InstanceRef,
    InstanceSnapshot,
    MetadataDocument,
    Post,
)
from .policy import is_pleroma_compatible, parse_metadata
from .store import Store
from .transport import HttpTransport
from .utils import anonymize_account, parse_timestamp, utc_now

logger = logging.getLogger(__name__)

_PENDING_META_KEY = "crawl_pending"
_NON_COMPATIBLE_META_KEY = "crawl_non_compatible"
_UNREACHABLE_META_KEY = "crawl_unreachable"


def normalize_post(raw: Dict[str, Any], instance: InstanceRef,
                   lexicon: Optional[HateLexicon] = None) -> Optional[Post]:
    """Reduce a timeline status to anonymous counters; the text is dropped.

    Returns:
        The Post, or None if the status lacks an id or creation time
    """
    try:
        post_id = str(raw["id"])
        created_at = parse_timestamp(raw["created_at"])
    except (KeyError, TypeError, ValueError) as e:
        logger.debug("Dropping malformed status from %s: %s", instance, e)
        return None
    tokenized, hits = lexicon_hits(raw.get("content") or "", lexicon)
    account = raw.get("account") or {}
    author_id = str(account.get("id") or account.get("acct") or "")
    return Post(
        instance=instance,
        post_id=post_id,
        created_at=created_at,
        mentions=tokenized.mention_count,
        hashtags=tokenized.hashtag_count,
        urls=tokenized.url_count,
        hate_hits=hits,
        reblogs_count=max(int(raw.get("reblogs_count") or 0), 0),
        replies_count=max(int(raw.get("replies_count") or 0), 0),
        author_key=anonymize_account(author_id, instance.domain) if author_id else "",
        author_followers=max(int(account.get("followers_count") or 0), 0),
        author_following=max(int(account.get("following_count") or 0), 0),
    )


class Crawler:
    """Crawls a set of instances into a store, one cycle at a time."""

    def __init__(self, config: CrawlConfig, store: Store,
                 transport: Optional[httpx.AsyncBaseTransport] = None,
                 lexicon: Optional[HateLexicon] = None):
        """Initialize the crawler.

        Args:
            config: Crawl configuration; validated here
            store: Store receiving snapshots, edges and posts
            transport: Optional httpx transport (tests pass a MockFediverse)
            lexicon: Hate lexicon for post counters; hate hits are 0 without one
        """
        config.validate()
        self.config = config
        self.store = store
        self.lexicon = lexicon
        self.http = HttpTransport(config, transport)
        self._store_lock = asyncio.Lock()
        self.seeds: Set[InstanceRef] = set(config.seed_instances)
        meta = store.meta
        self.pending: Set[InstanceRef] = {InstanceRef(d) for d in meta.get(_PENDING_META_KEY, [])}
        self.non_compatible: Set[InstanceRef] = {InstanceRef(d) for d in meta.get(_NON_COMPATIBLE_META_KEY, [])}
        self.unreachable: Set[InstanceRef] = {InstanceRef(d) for d in meta.get(_UNREACHABLE_META_KEY, [])}
        if lexicon is None:
            logger.warning("No hate lexicon configured; hate_hits will be 0")

    async def connect(self) -> None:
        await self.http.connect()

    async def disconnect(self) -> None:
        await self.http.disconnect()

    async def __aenter__(self):
        """Async context manager entry."""
        await self.connect()
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        """Async context manager exit."""
        await self.disconnect()

    # Attempt set

    def known_pleroma(self) -> Set[InstanceRef]:
        """Instances that answered as Pleroma at least once."""
        return {s.instance for s in self.store.snapshots() if s.ok}

    def attempt_set(self) -> List[InstanceRef]:
        """Instances the next cycle will attempt, sorted by domain."""
        return sorted((self.seeds | self.known_pleroma() | self.pending) - self.non_compatible - self.unreachable)

    # Fetches

    async def _fetch(self, report: Optional[CrawlReport], coro):
        try:
            result = await coro
        except FetchError as e:
            if report is not None:
                report.record_fetch(e.outcome)
            raise
        if report is not None:
            report.record_fetch(FetchOutcome.OK)
        return result

    async def fetch_peers(self, instance: InstanceRef, report: Optional[CrawlReport] = None) -> Set[InstanceRef]:
        """Fetch the peer list of an instance.

        Returns:
            Lowercased, deduplicated peers; malformed entries are dropped

        Raises:
            FetchError: On any failure, including a body that is not a list
        """
        body, _ = await self._fetch(report, self.http.get_json(instance.domain, PEERS_PATH, expect=list))
        peers = set()
        for entry in body:
            if not isinstance(entry, str):
                continue
            try:
                peer = InstanceRef(entry)
            except ValueError:
                logger.debug("Dropping malformed peer %r of %s", entry, instance)
                continue
            if peer != instance:
                peers.add(peer)
        return peers

    async def fetch_metadata(self, instance: InstanceRef, report: Optional[CrawlReport] = None) -> MetadataDocument:
        """Fetch the instance document and, when advertised, its nodeinfo.

        The bodies are returned verbatim. A missing or failing nodeinfo
        leaves ``nodeinfo`` empty; only the instance endpoint decides failure.

        Raises:
            FetchError: If the instance endpoint fails
        """
        _, body = await self._fetch(report, self.http.get_json(instance.domain, INSTANCE_PATH))
        nodeinfo: Optional[bytes] = None
        try:
            links, _ = await self._fetch(report, self.http.get_json(instance.domain, NODEINFO_WELL_KNOWN_PATH))
            href = _nodeinfo_href(links)
            if href:
                _, nodeinfo = await self._fetch(report, self.http.get_absolute(href))
        except FetchError as e:
            logger.debug("No nodeinfo for %s: %s", instance, e)
        return MetadataDocument(instance=body, nodeinfo=nodeinfo)

    async def fetch_timeline_page(self, instance: InstanceRef, cursor: Optional[str] = None,
                                  report: Optional[CrawlReport] = None) -> Tuple[List[Dict[str, Any]], Optional[str]]:
        """Fetch one page of the local public timeline.

        Returns:
            (statuses, next cursor); the cursor is None once a short page
            signals the timeline is exhausted

        Raises:
            FetchError: As for metadata; a non-list body is class ``other``
        """
        params: Dict[str, Any] = {"local": "true", "limit": TIMELINE_PAGE_LIMIT}
        if cursor is not None:
            params["max_id"] = cursor
        page, _ = await self._fetch(
            report, self.http.get_json(instance.domain, TIMELINE_PATH, params=params, expect=list)
        )
        statuses = [s for s in page if isinstance(s, dict)]
        next_cursor = None
        if len(page) >= TIMELINE_PAGE_LIMIT and statuses and "id" in statuses[-1]:
            next_cursor = str(statuses[-1]["id"])
        return statuses, next_cursor

    # Cycle

    async def crawl_cycle(self) -> CrawlReport:
        """Attempt every known instance once and feed the store.

        Returns:
            Outcome tallies and counts of new snapshots, edges and posts
        """
        at = utc_now()
        report = CrawlReport(started_at=at)
        targets = self.attempt_set()
        self.pending = set()
        logger.info("Crawl cycle at %d: %d instances", at, len(targets))
        await asyncio.gather(*(self._crawl_instance(instance, at, report) for instance in targets))

        attempted = set(targets)
        stored = set(self.store.instances())
        for edge in self.store.edges():
            peer = edge.target
            if (peer in attempted or peer in stored or peer in self.seeds
                    or peer in self.non_compatible or peer in self.unreachable):
                continue
            if peer not in self.pending:
                self.pending.add(peer)
                report.discovered.append(peer.domain)
        self.store.update_meta(**{
            _PENDING_META_KEY: sorted(p.domain for p in self.pending),
            _NON_COMPATIBLE_META_KEY: sorted(p.domain for p in self.non_compatible),
            _UNREACHABLE_META_KEY: sorted(p.domain for p in self.unreachable),
        })
        logger.info("Cycle done: %s; %d new edges, %d new snapshots, %d new posts, %d discovered",
                    report.tally(), report.new_edges, report.new_snapshots, report.new_posts,
                    len(report.discovered))
        return report

    async def _crawl_instance(self, instance: InstanceRef, at: int, report: CrawlReport) -> None:
        try:
            document = await self.fetch_metadata(instance, report)
        except FetchError as e:
            report.record(instance, e.outcome)
            logger.debug("%s: %s (%s)", instance, e.outcome.value, e.reason)
            if instance in self.seeds or self.store.latest_snapshot(instance) is not None:
                await self._append_snapshot(InstanceSnapshot(instance, at, fetch_status=e.outcome), report)
            else:
                self._mark_unreachable(instance)
            return
        report.record(instance, FetchOutcome.OK)

        try:
            compatible = is_pleroma_compatible(document)
        except PolicyParseError as e:
            compatible = False
            report.parse_errors[instance.domain] = str(e)
        if not compatible:
            self.non_compatible.add(instance)
            report.non_compatible.append(instance.domain)
            return

        try:
            snapshot = parse_metadata(document, instance, at)
        except PolicyParseError as e:
            logger.warning("Cannot parse metadata of %s: %s", instance, e)
            report.parse_errors[instance.domain] = str(e)
            if instance not in self.seeds and self.store.latest_snapshot(instance) is None:
                self._mark_unreachable(instance)
        else:
            await self._append_snapshot(snapshot, report)

        try:
            peers = await self.fetch_peers(instance, report)
        except FetchError as e:
            logger.debug("Peers of %s: %s", instance, e)
        else:
            async with self._store_lock:
                report.new_edges += len(self.store.record_peers(instance, peers, at))

        await self._crawl_timeline(instance, report)

    def _mark_unreachable(self, instance: InstanceRef) -> None:
        # A discovered peer that never yielded a snapshot is not rediscovered.
        self.unreachable.add(instance)
        logger.info("Discovered peer %s is unreachable; not rediscovering it", instance)

    async def _crawl_timeline(self, instance: InstanceRef, report: CrawlReport) -> None:
        cursor: Optional[str] = None
        for _ in range(self.config.max_timeline_pages):
            try:
                statuses, cursor = await self.fetch_timeline_page(instance, cursor, report)
            except FetchError as e:
                logger.debug("Timeline of %s: %s", instance, e)
                return
            posts = [p for p in (normalize_post(s, instance, self.lexicon) for s in statuses) if p is not None]
            async with self._store_lock:
                added = self.store.append_posts(posts)
            report.new_posts += added
            if cursor is None or (posts and added == 0):
                return

    async def _append_snapshot(self, snapshot: InstanceSnapshot, report: CrawlReport) -> None:
        async with self._store_lock:
            try:
                if self.store.append_snapshot(snapshot):
                    report.new_snapshots += 1
            except StoreError as e:
                logger.error("Snapshot of %s rejected: %s", snapshot.instance, e)

    async def run_forever(self, cycles: Optional[int] = None) -> List[CrawlReport]:
        """Run cycles every ``cadence_seconds``; ``cycles`` bounds the loop."""
        reports = []
        while cycles is None or len(reports) < cycles:
            started = time.monotonic()
            reports.append(await self.crawl_cycle())
            if cycles is not None and len(reports) >= cycles:
                break
            await asyncio.sleep(max(self.config.cadence_seconds - (time.monotonic() - started), 0))
        return reports


def _nodeinfo_href(links: Any) -> Optional[str]:
    """Pick the newest schema link from a well-known nodeinfo document."""
    if not isinstance(links, dict) or not isinstance(links.get("links"), list):
        return None
    candidates = [
        link for link in links["links"]
        if isinstance(link, dict) and isinstance(link.get("href"), str)
        and "nodeinfo" in str(link.get("rel", ""))
    ]
    if not candidates:
        return None
    return max(candidates, key=lambda link: str(link.get("rel")))["href"]


async def crawl_cycle(config: CrawlConfig, store: Store,
                      transport: Optional[httpx.AsyncBaseTransport] = None,
                      lexicon: Optional[HateLexicon] = None) -> CrawlReport:
    """Run one crawl cycle with a fresh crawler; discovery state persists in the store."""
    async with Crawler(config, store, transport=transport, lexicon=lexicon) as crawler:
        return await crawler.crawl_cycle()
