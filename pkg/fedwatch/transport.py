"""Async HTTP transport layer for fedwatch.

This module provides the low-level HTTP layer the crawler talks through,
built on httpx. It handles:
- Async client lifecycle (connect/disconnect)
- Per-host politeness: requests to one host are serialised and spaced
  at least ``per_host_min_interval_ms`` apart
- Bounded parallelism across hosts with a semaphore
- Classification of every failure into exactly one FetchOutcome
- Redirection of all traffic to a fixture server (``mock_base_url``)

It also ships ``MockFediverse``, an in-process fake fediverse served
through ``httpx.MockTransport`` that keeps a request log for politeness
and concurrency checks.
"""

import asyncio
import json
import logging
import socket
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import httpx

from .constants import INSTANCE_PATH, NODEINFO_WELL_KNOWN_PATH, PEERS_PATH, TIMELINE_PATH
from .exceptions import FetchError
from .models import CrawlConfig, FetchOutcome

logger = logging.getLogger(__name__)

STATUS_OUTCOMES = {
    403: FetchOutcome.PRIVATE_403,
    404: FetchOutcome.NOT_FOUND_404,
    410: FetchOutcome.GONE_410,
    502: FetchOutcome.BAD_GATEWAY_502,
    503: FetchOutcome.UNAVAILABLE_503,
}

_DNS_MARKERS = (
    "name or service not known",
    "nodename nor servname",
    "no address associated",
    "getaddrinfo failed",
    "temporary failure in name resolution",
)


def _is_dns_failure(error: BaseException) -> bool:
    seen = set()
    current: Optional[BaseException] = error
    while current is not None and id(current) not in seen:
        seen.add(id(current))
        if isinstance(current, socket.gaierror):
            return True
        if any(marker in str(current).lower() for marker in _DNS_MARKERS):
            return True
        current = current.__cause__ or current.__context__
    return False


def classify_response(status_code: int) -> FetchOutcome:
    """Map an HTTP status code to its fetch outcome."""
    if 200 <= status_code < 300:
        return FetchOutcome.OK
    return STATUS_OUTCOMES.get(status_code, FetchOutcome.OTHER)


class HttpTransport:
    """Async HTTP transport with per-host politeness and bounded concurrency."""

    def __init__(self, config: CrawlConfig, transport: Optional[httpx.AsyncBaseTransport] = None):
        """Initialize transport.

        Args:
            config: Crawl configuration (timeouts, politeness, concurrency)
            transport: Optional httpx transport, e.g. ``MockFediverse().transport()``
        """
        self.config = config
        self._transport = transport
        self.client: Optional[httpx.AsyncClient] = None
        self._semaphore = asyncio.Semaphore(config.max_concurrency)
        self._host_locks: Dict[str, asyncio.Lock] = defaultdict(asyncio.Lock)
        self._last_finish: Dict[str, float] = {}
        self.request_count = 0

    @property
    def is_connected(self) -> bool:
        return self.client is not None

    async def connect(self) -> None:
        if self.client is not None:
            return
        self.client = httpx.AsyncClient(
            transport=self._transport,
            timeout=self.config.timeout_ms / 1000,
            headers={"User-Agent": self.config.user_agent, "Accept": "application/json"},
            follow_redirects=True,
        )

    async def disconnect(self) -> None:
        if self.client is not None:
            await self.client.aclose()
            self.client = None

    async def __aenter__(self):
        await self.connect()
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        await self.disconnect()

    def url_for(self, domain: str, path: str) -> str:
        """Build the request URL; with ``mock_base_url`` every host is a path prefix."""
        if self.config.mock_base_url:
            return f"{self.config.mock_base_url.rstrip('/')}/{domain}{path}"
        return f"https://{domain}{path}"

    async def _polite_wait(self, domain: str) -> None:
        interval = self.config.per_host_min_interval_ms / 1000
        last = self._last_finish.get(domain)
        if last is None:
            return
        wait = last + interval - time.monotonic()
        if wait > 0:
            logger.debug("Politeness delay %.3fs for %s", wait, domain)
            await asyncio.sleep(wait)

    async def get(self, domain: str, path: str, params: Optional[Mapping[str, Any]] = None) -> httpx.Response:
        """GET ``path`` on ``domain``.

        Returns:
            The 2xx response

        Raises:
            FetchError: Carrying the classified outcome for any failure
        """
        if self.client is None:
            raise FetchError("Transport not connected", FetchOutcome.OTHER, reason="not connected")
        url = self.url_for(domain, path)
        async with self._host_locks[domain]:
            await self._polite_wait(domain)
            try:
                async with self._semaphore:
                    self.request_count += 1
                    logger.debug("GET %s params=%s", url, dict(params or {}))
                    response = await asyncio.wait_for(
                        self.client.get(url, params=params),
                        timeout=self.config.timeout_ms / 1000,
                    )
            except (asyncio.TimeoutError, httpx.TimeoutException) as e:
                raise FetchError(f"{domain}{path}: timed out", FetchOutcome.OTHER, reason="timeout") from e
            except httpx.HTTPError as e:
                if _is_dns_failure(e):
                    raise FetchError(
                        f"{domain}: name does not resolve", FetchOutcome.NON_EXISTENT_DOMAIN, reason="dns"
                    ) from e
                raise FetchError(f"{domain}{path}: {e}", FetchOutcome.OTHER, reason=type(e).__name__) from e
            finally:
                self._last_finish[domain] = time.monotonic()
        outcome = classify_response(response.status_code)
        if outcome is not FetchOutcome.OK:
            raise FetchError(
                f"{domain}{path}: HTTP {response.status_code}", outcome, reason=f"http {response.status_code}"
            )
        return response

    async def get_json(self, domain: str, path: str, params: Optional[Mapping[str, Any]] = None,
                       expect: Optional[type] = None) -> Tuple[Any, bytes]:
        """GET and decode a JSON body; returns (decoded, verbatim bytes).

        Args:
            expect: Required type of the decoded body (e.g. ``list``)

        Raises:
            FetchError: Class ``other`` when the body is not JSON or not ``expect``
        """
        response = await self.get(domain, path, params=params)
        body = response.content
        try:
            decoded = json.loads(body)
        except ValueError as e:
            raise FetchError(f"{domain}{path}: malformed JSON body", FetchOutcome.OTHER, reason="malformed body") from e
        if expect is not None and not isinstance(decoded, expect):
            raise FetchError(
                f"{domain}{path}: expected a JSON {expect.__name__}, got {type(decoded).__name__}",
                FetchOutcome.OTHER,
                reason="malformed body",
            )
        return decoded, body

    async def get_absolute(self, url: str) -> Tuple[Any, bytes]:
        """GET an absolute URL advertised by an instance (e.g. a nodeinfo href)."""
        parsed = httpx.URL(url)
        path = parsed.raw_path.decode("ascii") or "/"
        return await self.get_json(parsed.host, path)


# Fixture server


@dataclass
class RequestLogEntry:
    host: str
    path: str
    params: Dict[str, str]
    started: float


@dataclass
class MockInstance:
    """One fake instance served by ``MockFediverse``.

    ``status`` forces every path to answer with that code; ``path_status``
    does so per path. ``raw`` overrides the body of a path verbatim.
    """
    domain: str
    instance: Optional[Dict[str, Any]] = None
    nodeinfo: Optional[Dict[str, Any]] = None
    peers: List[str] = field(default_factory=list)
    timeline: List[Dict[str, Any]] = field(default_factory=list)
    status: Optional[int] = None
    path_status: Dict[str, int] = field(default_factory=dict)
    raw: Dict[str, bytes] = field(default_factory=dict)
    dns_failure: bool = False
    timeout: bool = False
    delay: float = 0.0


def pleroma_instance(domain: str, version: str = "2.4.2", users: int = 10, posts: int = 100,
                     federation: Optional[Dict[str, Any]] = None,
                     admins: Tuple[str, ...] = ("admin",)) -> MockInstance:
    """Build a Pleroma-looking ``MockInstance`` with metadata and nodeinfo."""
    metadata: Dict[str, Any] = {"staffAccounts": [f"https://{domain}/users/{a}" for a in admins]}
    if federation is not None:
        metadata["federation"] = federation
    return MockInstance(
        domain=domain,
        instance={
            "uri": f"https://{domain}",
            "title": domain,
            "version": f"2.7.2 (compatible; Pleroma {version})",
            "stats": {"user_count": users, "status_count": posts, "domain_count": 0},
            "pleroma": {"metadata": {"federation": federation}} if federation is not None else {},
        },
        nodeinfo={
            "version": "2.0",
            "software": {"name": "pleroma", "version": version},
            "usage": {"users": {"total": users, "activeMonth": users // 2, "activeHalfyear": users},
                      "localPosts": posts},
            "metadata": metadata,
        },
    )


class MockFediverse:
    """In-process fake fediverse for ``httpx.MockTransport``.

    Hosts that were never added behave as non-existent domains.
    """

    def __init__(self):
        self.instances: Dict[str, MockInstance] = {}
        self.requests: List[RequestLogEntry] = []
        self.in_flight = 0
        self.peak_in_flight = 0

    def add(self, instance: MockInstance) -> MockInstance:
        self.instances[instance.domain] = instance
        return instance

    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handle)

    def requests_to(self, host: str) -> List[RequestLogEntry]:
        return [r for r in self.requests if r.host == host]

    def min_gap(self, host: str) -> Optional[float]:
        """Smallest spacing in seconds between two requests to ``host``."""
        starts = sorted(r.started for r in self.requests_to(host))
        if len(starts) < 2:
            return None
        return min(b - a for a, b in zip(starts, starts[1:]))

    def _route(self, request: httpx.Request) -> Tuple[str, str]:
        host, path = request.url.host, request.url.path
        if host not in self.instances:
            parts = path.lstrip("/").split("/", 1)
            if parts[0] in self.instances:
                host, path = parts[0], "/" + (parts[1] if len(parts) > 1 else "")
        return host, path.rstrip("/") or "/"

    async def handle(self, request: httpx.Request) -> httpx.Response:
        host, path = self._route(request)
        params = dict(request.url.params)
        self.requests.append(RequestLogEntry(host, path, params, time.monotonic()))
        fake = self.instances.get(host)
        if fake is None or fake.dns_failure:
            raise httpx.ConnectError(f"[Errno -2] Name or service not known: {host}", request=request)
        self.in_flight += 1
        self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        try:
            if fake.timeout:
                await asyncio.sleep(3600)
            await asyncio.sleep(fake.delay)
            return self._respond(fake, path, params)
        finally:
            self.in_flight -= 1

    def _respond(self, fake: MockInstance, path: str, params: Dict[str, str]) -> httpx.Response:
        status = fake.path_status.get(path, fake.status)
        if status is not None:
            return httpx.Response(status, json={"error": f"HTTP {status}"})
        if path in fake.raw:
            return httpx.Response(200, content=fake.raw[path])
        if path == PEERS_PATH:
            return httpx.Response(200, json=fake.peers)
        if path == INSTANCE_PATH:
            if fake.instance is None:
                return httpx.Response(404, json={"error": "Not found"})
            return httpx.Response(200, json=fake.instance)
        if path == NODEINFO_WELL_KNOWN_PATH:
            if fake.nodeinfo is None:
                return httpx.Response(404, json={"error": "Not found"})
            return httpx.Response(200, json={"links": [{
                "rel": "http://nodeinfo.diaspora.software/ns/schema/2.0",
                "href": f"https://{fake.domain}/nodeinfo/2.0.json",
            }]})
        if path == "/nodeinfo/2.0.json" and fake.nodeinfo is not None:
            return httpx.Response(200, json=fake.nodeinfo)
        if path == TIMELINE_PATH:
            return httpx.Response(200, json=self._timeline_page(fake, params))
        return httpx.Response(404, json={"error": "Not found"})

    @staticmethod
    def _timeline_page(fake: MockInstance, params: Dict[str, str]) -> List[Dict[str, Any]]:
        statuses = fake.timeline
        if params.get("local") == "true":
            statuses = [s for s in statuses if "@" not in s.get("account", {}).get("acct", "")]
        start = 0
        if "max_id" in params:
            ids = [s["id"] for s in statuses]
            start = ids.index(params["max_id"]) + 1 if params["max_id"] in ids else len(ids)
        limit = int(params.get("limit", 20))
        return statuses[start:start + limit]
