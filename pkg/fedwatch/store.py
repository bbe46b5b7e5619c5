"""Append-only persistence for crawl snapshots, federation edges and posts.

A store is a directory holding one newline-delimited JSON file per record
kind (``snapshots.ndjson``, ``edges.ndjson``, ``posts.ndjson``) plus a
``meta.json`` document. Every line is a self-describing object carrying
``kind`` and ``schema_version``. Records are only ever appended:
- snapshots are idempotent on (instance, observed_at) and must not go back
  in time per instance
- edges are idempotent on (source, target); the first one written wins,
  so ``first_seen`` is minimal
- posts are idempotent on (instance, post_id) and hold counters only

Writers funnel through one ``Store`` object whose appends are serialised
by a lock. Readers skip a trailing partial line, so they always see a
consistent prefix of what the writer produced.
"""

import bisect
import json
import logging
import os
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Set, Tuple, Union

from .constants import EDGES_FILE, META_FILE, POSTS_FILE, SCHEMA_VERSION, SNAPSHOTS_FILE
from .exceptions import InsufficientDataError, StoreError, TimestampRegressionError
from .models import FederationEdge, InstanceRef, InstanceSnapshot, Post, TimeWindow
from .utils import utc_now

logger = logging.getLogger(__name__)

_FILES = {"snapshot": SNAPSHOTS_FILE, "edge": EDGES_FILE, "post": POSTS_FILE}


def encode_record(kind: str, payload: Mapping[str, Any]) -> bytes:
    """Serialise one record to its canonical line (newline included)."""
    record = dict(payload)
    record["kind"] = kind
    record["schema_version"] = SCHEMA_VERSION
    line = json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return (line + "\n").encode("utf-8")


class Store:
    """Append-only NDJSON store rooted at a directory."""

    def __init__(self, root: Union[str, Path], create: bool = True, fsync: bool = True):
        """Open (or create) a store.

        Args:
            root: Store directory
            create: Create the directory and meta document when missing
            fsync: Flush appends to disk before returning

        Raises:
            StoreError: If the directory is missing and ``create`` is False,
                or meta.json declares a newer schema
        """
        self.root = Path(root)
        self.fsync = fsync
        if not self.root.exists():
            if not create:
                raise StoreError(f"No store at {self.root}")
            self.root.mkdir(parents=True)
        self._lock = threading.RLock()
        self._meta = self._load_meta()
        self._pending: Optional[Dict[str, List[bytes]]] = None
        self._loaded = False
        self._snapshots: Dict[InstanceRef, List[InstanceSnapshot]] = {}
        self._snapshot_keys: Set[Tuple[InstanceRef, int]] = set()
        self._edges: Dict[Tuple[InstanceRef, InstanceRef], FederationEdge] = {}
        self._post_times: Dict[InstanceRef, List[int]] = {}
        self._posts: Dict[InstanceRef, List[Post]] = {}
        self._post_keys: Set[Tuple[InstanceRef, str]] = set()

    # Meta

    def _load_meta(self) -> Dict[str, Any]:
        path = self.root / META_FILE
        if not path.exists():
            meta = {"schema_version": SCHEMA_VERSION, "created_at": utc_now()}
            self._write_meta(meta)
            return meta
        try:
            meta = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as e:
            raise StoreError(f"Corrupt {path}: {e}") from e
        if meta.get("schema_version", 0) > SCHEMA_VERSION:
            raise StoreError(
                f"Store schema {meta['schema_version']} is newer than supported {SCHEMA_VERSION}"
            )
        return meta

    def _write_meta(self, meta: Mapping[str, Any]) -> None:
        path = self.root / META_FILE
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)

    @property
    def meta(self) -> Dict[str, Any]:
        return dict(self._meta)

    def update_meta(self, **values: Any) -> None:
        """Merge values into meta.json."""
        with self._lock:
            self._meta.update(values)
            self._write_meta(self._meta)

    # Raw record I/O

    def path_for(self, kind: str) -> Path:
        return self.root / _FILES[kind]

    def iter_records(self, kind: str) -> Iterator[Dict[str, Any]]:
        """Yield decoded records of one kind in append order.

        A trailing line without newline is an in-progress append and is skipped.

        Raises:
            StoreError: If a complete line is not a valid record
        """
        path = self.path_for(kind)
        if not path.exists():
            return
        with open(path, "rb") as fh:
            for number, raw in enumerate(fh, start=1):
                if not raw.endswith(b"\n"):
                    logger.debug("Skipping partial trailing line %d of %s", number, path.name)
                    break
                try:
                    record = json.loads(raw)
                except ValueError as e:
                    raise StoreError(f"{path.name}:{number}: invalid JSON ({e})") from e
                if record.get("kind") != kind:
                    raise StoreError(f"{path.name}:{number}: expected kind {kind!r}")
                if record.get("schema_version", 0) > SCHEMA_VERSION:
                    raise StoreError(f"{path.name}:{number}: unsupported schema version")
                yield record

    def _append(self, kind: str, payload: Mapping[str, Any]) -> None:
        line = encode_record(kind, payload)
        if self._pending is not None:
            self._pending.setdefault(kind, []).append(line)
            return
        self._write_lines(kind, [line])

    def _write_lines(self, kind: str, lines: List[bytes]) -> None:
        with open(self.path_for(kind), "ab") as fh:
            fh.write(b"".join(lines))
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())

    @contextmanager
    def bulk(self):
        """Buffer appends and write each file once on exit.

        Used by bulk producers (corpus generation); a failure inside the
        block discards the buffered lines and the in-memory index is reloaded.
        """
        with self._lock:
            self._ensure_loaded()
            self._pending = {}
            try:
                yield self
            except BaseException:
                self._pending = None
                self._loaded = False
                raise
            pending, self._pending = self._pending, None
            for kind, lines in pending.items():
                self._write_lines(kind, lines)

    # Index

    def _ensure_loaded(self) -> None:
        if self._loaded:
            return
        with self._lock:
            self._snapshots, self._snapshot_keys = {}, set()
            self._edges = {}
            self._post_times, self._posts, self._post_keys = {}, {}, set()
            for record in self.iter_records("snapshot"):
                self._index_snapshot(InstanceSnapshot.from_dict(record))
            for record in self.iter_records("edge"):
                edge = FederationEdge.from_dict(record)
                self._edges.setdefault((edge.source, edge.target), edge)
            for record in self.iter_records("post"):
                self._index_post(Post.from_dict(record))
            self._loaded = True

    def reload(self) -> None:
        """Drop the in-memory index; the next read re-scans the files."""
        with self._lock:
            self._loaded = False

    def _index_snapshot(self, snapshot: InstanceSnapshot) -> None:
        self._snapshots.setdefault(snapshot.instance, []).append(snapshot)
        self._snapshot_keys.add((snapshot.instance, snapshot.observed_at))

    def _index_post(self, post: Post) -> None:
        key = (post.instance, post.post_id)
        if key in self._post_keys:
            return
        times = self._post_times.setdefault(post.instance, [])
        posts = self._posts.setdefault(post.instance, [])
        index = bisect.bisect_right(times, post.created_at)
        times.insert(index, post.created_at)
        posts.insert(index, post)
        self._post_keys.add(key)

    # Appends

    def append_snapshot(self, snapshot: InstanceSnapshot) -> bool:
        """Append one snapshot.

        Returns:
            True if written, False if (instance, observed_at) was already stored

        Raises:
            ValueError: If the snapshot violates its type invariants
            TimestampRegressionError: If it is older than the instance's last snapshot
        """
        snapshot.validate()
        with self._lock:
            self._ensure_loaded()
            key = (snapshot.instance, snapshot.observed_at)
            if key in self._snapshot_keys:
                logger.debug("Snapshot %s@%d already stored", snapshot.instance, snapshot.observed_at)
                return False
            history = self._snapshots.get(snapshot.instance)
            if history and snapshot.observed_at < history[-1].observed_at:
                raise TimestampRegressionError(
                    f"Snapshot for {snapshot.instance} at {snapshot.observed_at} is older than "
                    f"the last stored observation at {history[-1].observed_at}",
                    domain=snapshot.instance.domain,
                    last=history[-1].observed_at,
                    given=snapshot.observed_at,
                )
            self._append("snapshot", snapshot.to_dict())
            self._index_snapshot(snapshot)
            return True

    def append_edge(self, edge: FederationEdge) -> bool:
        """Append one federation edge; returns False if the pair is already known."""
        with self._lock:
            self._ensure_loaded()
            key = (edge.source, edge.target)
            if key in self._edges:
                return False
            self._append("edge", edge.to_dict())
            self._edges[key] = edge
            return True

    def append_post(self, post: Post) -> bool:
        """Append one post's counters; returns False if the post is already stored."""
        post.validate()
        with self._lock:
            self._ensure_loaded()
            if (post.instance, post.post_id) in self._post_keys:
                return False
            self._append("post", post.to_dict())
            self._index_post(post)
            return True

    def append_posts(self, posts: Iterable[Post]) -> int:
        """Append many posts; returns how many were new."""
        return sum(1 for post in posts if self.append_post(post))

    # Federation edges

    def diff_edges(
        self,
        instance: InstanceRef,
        prev_peers: Iterable[InstanceRef],
        new_peers: Iterable[InstanceRef],
        at: int,
    ) -> List[FederationEdge]:
        """Return one edge per peer in ``new_peers`` but not ``prev_peers``.

        Edges found at the instance's first successful observation are
        marked ``pre_window``: their real federation date is unknowable.
        """
        self._ensure_loaded()
        fresh = set(new_peers) - set(prev_peers)
        fresh.discard(instance)
        earlier = any(s.ok and s.observed_at < at for s in self._snapshots.get(instance, ()))
        return [
            FederationEdge(source=instance, target=peer, first_seen=at, pre_window=not earlier)
            for peer in sorted(fresh)
        ]

    def record_peers(self, instance: InstanceRef, peers: Iterable[InstanceRef], at: int) -> List[FederationEdge]:
        """Diff ``peers`` against the stored peer set and append the new edges."""
        with self._lock:
            edges = self.diff_edges(instance, self.known_peers(instance), peers, at)
            return [edge for edge in edges if self.append_edge(edge)]

    def known_peers(self, instance: InstanceRef) -> Set[InstanceRef]:
        self._ensure_loaded()
        return {target for (source, target) in self._edges if source == instance}

    def edges(self) -> List[FederationEdge]:
        self._ensure_loaded()
        return list(self._edges.values())

    def edges_from(self, instance: InstanceRef) -> List[FederationEdge]:
        self._ensure_loaded()
        return [edge for (source, _), edge in self._edges.items() if source == instance]

    # Snapshots

    def instances(self) -> List[InstanceRef]:
        """Instances with at least one stored snapshot, sorted by domain."""
        self._ensure_loaded()
        return sorted(self._snapshots)

    def snapshots(self, instance: Optional[InstanceRef] = None) -> List[InstanceSnapshot]:
        self._ensure_loaded()
        if instance is not None:
            return list(self._snapshots.get(instance, ()))
        return [s for inst in sorted(self._snapshots) for s in self._snapshots[inst]]

    def latest_snapshot(
        self,
        instance: InstanceRef,
        at: Optional[int] = None,
        window: Optional[TimeWindow] = None,
        ok_only: bool = True,
    ) -> Optional[InstanceSnapshot]:
        """Return the last snapshot at or before ``at`` (or inside ``window``)."""
        self._ensure_loaded()
        for snapshot in reversed(self._snapshots.get(instance, ())):
            if ok_only and not snapshot.ok:
                continue
            if at is not None and snapshot.observed_at > at:
                continue
            if window is not None:
                if snapshot.observed_at >= window.end:
                    continue
                if snapshot.observed_at < window.start:
                    return None
            return snapshot
        return None

    def snapshots_at(self, at: int) -> Dict[InstanceRef, InstanceSnapshot]:
        """Latest successful snapshot of every instance at or before ``at``."""
        self._ensure_loaded()
        result = {}
        for instance in sorted(self._snapshots):
            snapshot = self.latest_snapshot(instance, at=at)
            if snapshot is not None:
                result[instance] = snapshot
        return result

    def time_range(self) -> Tuple[int, int]:
        """First and last ``observed_at`` over successful snapshots.

        Raises:
            InsufficientDataError: If the store holds no successful snapshot
        """
        self._ensure_loaded()
        times = [s.observed_at for history in self._snapshots.values() for s in history if s.ok]
        if not times:
            raise InsufficientDataError(f"Store {self.root} holds no successful snapshots")
        return min(times), max(times)

    @property
    def corpus_start(self) -> int:
        """Start of month 1; meta.json may pin it, otherwise the first observation."""
        if "corpus_start" in self._meta:
            return int(self._meta["corpus_start"])
        return self.time_range()[0]

    # Posts

    def posts(self, instance: Optional[InstanceRef] = None, window: Optional[TimeWindow] = None) -> List[Post]:
        """Posts of one instance (or all), optionally restricted to a window."""
        self._ensure_loaded()
        instances = [instance] if instance is not None else sorted(self._posts)
        result: List[Post] = []
        for inst in instances:
            posts = self._posts.get(inst, [])
            if window is None:
                result.extend(posts)
                continue
            times = self._post_times[inst] if inst in self._post_times else []
            lo = bisect.bisect_left(times, window.start)
            hi = bisect.bisect_left(times, window.end)
            result.extend(posts[lo:hi])
        return result
