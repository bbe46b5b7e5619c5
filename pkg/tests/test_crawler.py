"""Tests for the crawler against the mock fediverse."""

from unittest.mock import patch

import pytest

from fedwatch.constants import INSTANCE_PATH, NODEINFO_WELL_KNOWN_PATH, PEERS_PATH, TIMELINE_PATH
from fedwatch.crawler import Crawler, crawl_cycle, normalize_post
from fedwatch.exceptions import FetchError
from fedwatch.features import HateLexicon
from fedwatch.models import CrawlConfig, FetchOutcome, InstanceRef
from fedwatch.store import Store
from fedwatch.transport import MockInstance, pleroma_instance

A = InstanceRef("a.example")
B = InstanceRef("b.example")
C = InstanceRef("c.example")


def make_config(*seeds, **overrides):
    values = {
        "seed_instances": [InstanceRef(s) for s in seeds],
        "cadence_seconds": 1,
        "per_host_min_interval_ms": 10,
        "timeout_ms": 2000,
    }
    values.update(overrides)
    return CrawlConfig(**values)


def statuses(n, content="<p>hello world</p>"):
    return [
        {
            "id": f"{i:04d}",
            "created_at": "2021-03-01T12:00:00Z",
            "content": content,
            "reblogs_count": 1,
            "replies_count": 0,
            "account": {"id": str(i % 3), "acct": f"user{i % 3}", "followers_count": 5, "following_count": 2},
        }
        for i in range(n)
    ]


def test_endpoint_paths():
    """Test the federation API paths are byte exact."""
    assert PEERS_PATH == "/api/v1/instance/peers"
    assert INSTANCE_PATH == "/api/v1/instance"
    assert TIMELINE_PATH == "/api/v1/timelines/public"
    assert NODEINFO_WELL_KNOWN_PATH == "/.well-known/nodeinfo"


@pytest.mark.asyncio
async def test_cycle_outcome_tallies(fediverse, store):
    """Test every attempted instance lands in exactly one outcome class."""
    fediverse.add(pleroma_instance("a.example"))
    fediverse.add(pleroma_instance("b.example"))
    fediverse.add(MockInstance("c.example", status=404))
    fediverse.add(MockInstance("d.example", dns_failure=True))
    fediverse.add(MockInstance("e.example", status=403))
    config = make_config("a.example", "b.example", "c.example", "d.example", "e.example")

    report = await crawl_cycle(config, store, transport=fediverse.transport())

    assert report.tally() == {"non_existent_domain": 1, "not_found_404": 1, "ok": 2, "private_403": 1}
    assert report.new_snapshots == 5
    failed = store.latest_snapshot(C, ok_only=False)
    assert failed.fetch_status is FetchOutcome.NOT_FOUND_404
    assert store.latest_snapshot(C) is None
    assert store.latest_snapshot(A).ok


@pytest.mark.asyncio
async def test_requests_hit_exact_paths(fediverse, store):
    """Test the crawler asks for exactly the documented endpoints."""
    fediverse.add(pleroma_instance("a.example"))
    await crawl_cycle(make_config("a.example"), store, transport=fediverse.transport())

    paths = {r.path for r in fediverse.requests_to("a.example")}
    assert paths == {
        "/api/v1/instance",
        "/.well-known/nodeinfo",
        "/nodeinfo/2.0.json",
        "/api/v1/instance/peers",
        "/api/v1/timelines/public",
    }
    timeline = [r for r in fediverse.requests_to("a.example") if r.path == TIMELINE_PATH]
    assert timeline[0].params == {"local": "true", "limit": "40"}


@pytest.mark.asyncio
async def test_snapshot_contents(fediverse, store):
    """Test a crawled snapshot carries the parsed metadata."""
    federation = {"mrf_policies": ["ObjectAgePolicy", "SimplePolicy"], "mrf_simple": {"reject": ["gab.com"]}}
    fediverse.add(pleroma_instance("a.example", users=7, posts=70, federation=federation, admins=("x", "y")))
    with patch("fedwatch.crawler.utc_now", return_value=1234):
        await crawl_cycle(make_config("a.example"), store, transport=fediverse.transport())

    snapshot = store.latest_snapshot(A)
    assert snapshot.observed_at == 1234
    assert snapshot.user_count == 7
    assert snapshot.post_count == 70
    assert len(snapshot.admins) == 2
    assert snapshot.policy_config.enabled_policies == {"ObjectAgePolicy", "SimplePolicy"}
    assert snapshot.policy_config.target_domains() == {InstanceRef("gab.com")}


@pytest.mark.asyncio
async def test_discovery(fediverse, store):
    """Test a newly listed peer is attempted in the next cycle."""
    a = fediverse.add(pleroma_instance("a.example"))
    a.peers = ["b.example"]
    fediverse.add(pleroma_instance("b.example"))

    with patch("fedwatch.crawler.utc_now", side_effect=[1000, 2000]):
        async with Crawler(make_config("a.example"), store, transport=fediverse.transport()) as crawler:
            first = await crawler.crawl_cycle()
            assert first.attempted == ["a.example"]
            assert first.discovered == ["b.example"]
            assert B in crawler.attempt_set()
            second = await crawler.crawl_cycle()

    assert sorted(second.attempted) == ["a.example", "b.example"]
    assert store.latest_snapshot(B).observed_at == 2000


@pytest.mark.asyncio
async def test_discovery_survives_restart(fediverse, store):
    """Test pending peers are persisted in the store meta."""
    a = fediverse.add(pleroma_instance("a.example"))
    a.peers = ["b.example"]
    await crawl_cycle(make_config("a.example"), store, transport=fediverse.transport())

    crawler = Crawler(make_config("a.example"), Store(store.root, create=False))
    assert crawler.attempt_set() == [A, B]


@pytest.mark.asyncio
async def test_failed_discovered_peer_is_not_rediscovered(fediverse, store):
    """Test a discovered peer that fails is attempted once and never counted as discovered again."""
    a = fediverse.add(pleroma_instance("a.example"))
    a.peers = ["dead.example"]
    fediverse.add(MockInstance("dead.example", dns_failure=True))

    with patch("fedwatch.crawler.utc_now", side_effect=[1000, 2000, 3000, 4000, 5000]):
        async with Crawler(make_config("a.example"), store, transport=fediverse.transport()) as crawler:
            reports = [await crawler.crawl_cycle() for _ in range(5)]

    assert reports[0].discovered == ["dead.example"]
    assert sorted(reports[1].attempted) == ["a.example", "dead.example"]
    assert all(r.discovered == [] for r in reports[1:])
    assert all(r.attempted == ["a.example"] for r in reports[2:])
    assert store.meta["crawl_unreachable"] == ["dead.example"]

    restarted = Crawler(make_config("a.example"), Store(store.root, create=False))
    assert restarted.attempt_set() == [A]


@pytest.mark.asyncio
async def test_unchanged_world_adds_no_edges(fediverse, store):
    """Test a second cycle over the same peers writes no edges."""
    a = fediverse.add(pleroma_instance("a.example"))
    a.peers = ["b.example", "c.example"]
    a.timeline = statuses(3)
    fediverse.add(pleroma_instance("b.example"))
    fediverse.add(pleroma_instance("c.example"))
    config = make_config("a.example", "b.example", "c.example")

    with patch("fedwatch.crawler.utc_now", side_effect=[1000, 2000]):
        async with Crawler(config, store, transport=fediverse.transport()) as crawler:
            first = await crawler.crawl_cycle()
            second = await crawler.crawl_cycle()

    assert first.new_edges == 2
    assert first.new_posts == 3
    assert second.new_edges == 0
    assert second.new_posts == 0
    assert second.new_snapshots == 3
    assert all(edge.pre_window for edge in store.edges())


@pytest.mark.asyncio
async def test_new_peer_edge_is_in_window(fediverse, store):
    """Test a peer appearing after the first observation gets a dated edge."""
    a = fediverse.add(pleroma_instance("a.example"))
    a.peers = ["b.example"]
    config = make_config("a.example")

    with patch("fedwatch.crawler.utc_now", side_effect=[1000, 2000]):
        async with Crawler(config, store, transport=fediverse.transport()) as crawler:
            await crawler.crawl_cycle()
            a.peers = ["b.example", "c.example"]
            report = await crawler.crawl_cycle()

    assert report.new_edges == 1
    edges = {e.target: e for e in store.edges_from(A)}
    assert edges[B].pre_window
    assert not edges[C].pre_window
    assert edges[C].first_seen == 2000


@pytest.mark.asyncio
async def test_non_compatible_instance(fediverse, store):
    """Test other software is never stored and never attempted again."""
    fediverse.add(MockInstance(
        "m.example",
        instance={"uri": "https://m.example", "version": "3.4.1"},
        nodeinfo={"version": "2.0", "software": {"name": "mastodon", "version": "3.4.1"}},
    ))
    async with Crawler(make_config("m.example"), store, transport=fediverse.transport()) as crawler:
        report = await crawler.crawl_cycle()
        assert report.non_compatible == ["m.example"]
        assert crawler.attempt_set() == []
    assert store.instances() == []


@pytest.mark.asyncio
async def test_politeness_and_concurrency(fediverse, store):
    """Test the request log respects the per-host interval and the concurrency bound."""
    domains = [f"h{i}.example" for i in range(6)]
    for domain in domains:
        instance = fediverse.add(pleroma_instance(domain))
        instance.delay = 0.02
    config = make_config(*domains, max_concurrency=2, per_host_min_interval_ms=30)

    await crawl_cycle(config, store, transport=fediverse.transport())

    assert fediverse.peak_in_flight <= 2
    for domain in domains:
        assert fediverse.min_gap(domain) >= 0.03 - 1e-3


@pytest.mark.asyncio
async def test_fetch_peers_normalises(fediverse, store):
    """Test peers are case-folded, deduplicated and cleaned."""
    c = fediverse.add(pleroma_instance("c.example"))
    c.peers = ["A.example", "a.example", "b.example", 5, "bad host!", "c.example"]
    async with Crawler(make_config("c.example"), store, transport=fediverse.transport()) as crawler:
        peers = await crawler.fetch_peers(C)
    assert peers == {A, B}


@pytest.mark.asyncio
async def test_fetch_peers_not_a_list(fediverse, store):
    """Test a peers body that is not a list is class other."""
    fediverse.add(MockInstance("a.example", raw={PEERS_PATH: b'{"peers": []}'}))
    async with Crawler(make_config("a.example"), store, transport=fediverse.transport()) as crawler:
        with pytest.raises(FetchError) as excinfo:
            await crawler.fetch_peers(A)
    assert excinfo.value.outcome is FetchOutcome.OTHER


@pytest.mark.asyncio
async def test_fetch_metadata_without_nodeinfo(fediverse, store):
    """Test a failing nodeinfo leaves only the instance document."""
    instance = fediverse.add(pleroma_instance("a.example"))
    instance.path_status = {NODEINFO_WELL_KNOWN_PATH: 404}
    async with Crawler(make_config("a.example"), store, transport=fediverse.transport()) as crawler:
        document = await crawler.fetch_metadata(A)
    assert document.nodeinfo is None
    assert document.instance_json()["uri"] == "https://a.example"


@pytest.mark.asyncio
async def test_timeline_pagination(fediverse, store):
    """Test three pages drain 100 statuses and the last returns no cursor."""
    instance = fediverse.add(pleroma_instance("a.example"))
    instance.timeline = statuses(100)
    seen = []
    async with Crawler(make_config("a.example"), store, transport=fediverse.transport()) as crawler:
        page, cursor = await crawler.fetch_timeline_page(A)
        seen.extend(page)
        assert cursor == "0039"
        page, cursor = await crawler.fetch_timeline_page(A, cursor)
        seen.extend(page)
        page, cursor = await crawler.fetch_timeline_page(A, cursor)
        seen.extend(page)
    assert cursor is None
    assert len({s["id"] for s in seen}) == 100


@pytest.mark.asyncio
async def test_timeline_empty(fediverse, store):
    """Test an empty timeline is one empty page."""
    fediverse.add(pleroma_instance("a.example"))
    async with Crawler(make_config("a.example"), store, transport=fediverse.transport()) as crawler:
        assert await crawler.fetch_timeline_page(A) == ([], None)


@pytest.mark.asyncio
async def test_timeline_private(fediverse, store):
    """Test a hidden public timeline is private_403."""
    instance = fediverse.add(pleroma_instance("a.example"))
    instance.path_status = {TIMELINE_PATH: 403}
    async with Crawler(make_config("a.example"), store, transport=fediverse.transport()) as crawler:
        with pytest.raises(FetchError) as excinfo:
            await crawler.fetch_timeline_page(A)
    assert excinfo.value.outcome is FetchOutcome.PRIVATE_403


@pytest.mark.asyncio
async def test_posts_keep_counters_only(fediverse, store, fixtures_dir):
    """Test post text and account ids never reach the store."""
    instance = fediverse.add(pleroma_instance("a.example"))
    instance.timeline = statuses(2, content="<p>you scum @bob@x.example see https://x.example/p #tag</p>")
    lexicon = HateLexicon.from_file(fixtures_dir / "hate_lexicon.txt")

    await crawl_cycle(make_config("a.example"), store, transport=fediverse.transport(), lexicon=lexicon)

    posts = store.posts(A)
    assert len(posts) == 2
    assert (posts[0].hate_hits, posts[0].mentions, posts[0].urls, posts[0].hashtags) == (1, 1, 1, 1)
    raw = store.path_for("post").read_text()
    assert "scum" not in raw
    assert "bob" not in raw
    assert "user1" not in raw


def test_normalize_post():
    """Test status reduction and malformed statuses."""
    raw = statuses(1)[0]
    raw["reblogs_count"] = -3
    post = normalize_post(raw, A)
    assert post.post_id == "0000"
    assert post.reblogs_count == 0
    assert post.hate_hits == 0
    assert post.author_followers == 5
    assert post.author_key and post.author_key != "0"

    del raw["created_at"]
    assert normalize_post(raw, A) is None
