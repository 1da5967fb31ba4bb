"""Feed polling and the on-disk snapshot store.

Raw payloads are archived verbatim as ``<root>/YYYYMMDD-HHMMSS.json``, named
after the payload's own executionTime. Payloads that do not parse go to
``<root>/quarantine/`` so outages leave a trace.
"""

import enum
import logging
import os
import re
import tempfile
import time
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import requests

from .feedmodel import FeedError, parse_execution_time, parse_snapshot
from .validation import check_int, check_positive

logger = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "http://citibikenyc.com/stations/json"
ENDPOINT_ENV = "BSS_FEED_ENDPOINT"
DEFAULT_INTERVAL = 600
FILENAME_FORMAT = "%Y%m%d-%H%M%S"
QUARANTINE_DIR = "quarantine"

_EXECUTION_TIME_RE = re.compile(rb'"executionTime"\s*:\s*"([^"]*)"')


class PollError(RuntimeError):
    """The endpoint could not be reached within the retry budget."""


class PayloadError(RuntimeError):
    def __init__(self, message, quarantine_path):
        self.quarantine_path = quarantine_path
        super().__init__(message)


class PollResult(enum.Enum):
    STORED = "stored"
    SKIPPED_DUPLICATE = "skipped_duplicate"


def default_endpoint():
    return os.environ.get(ENDPOINT_ENV) or DEFAULT_ENDPOINT


class SnapshotStore:
    def __init__(self, root):
        self.root = Path(root)

    def __repr__(self):
        return f"SnapshotStore({str(self.root)!r})"

    @property
    def quarantine_dir(self):
        return self.root / QUARANTINE_DIR

    def path_for(self, taken_at):
        return self.root / f"{taken_at.strftime(FILENAME_FORMAT)}.json"

    def __contains__(self, taken_at):
        return self.path_for(taken_at).exists()

    def snapshot_files(self):
        return sorted(p for p in self.root.glob("*.json") if p.is_file())

    def store(self, taken_at, raw):
        """Write ``raw`` for ``taken_at`` unless a file already exists.

        Returns False when the timestamp is already present. The write goes
        through a temp file and a hard link so a concurrent writer can never
        replace an existing snapshot.
        """
        self.root.mkdir(parents=True, exist_ok=True)
        target = self.path_for(taken_at)
        if target.exists():
            return False
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(raw)
            try:
                os.link(tmp, target)
            except FileExistsError:
                return False
        finally:
            os.unlink(tmp)
        return True

    def quarantine(self, raw, polled_at=None):
        polled_at = polled_at or datetime.now()
        self.quarantine_dir.mkdir(parents=True, exist_ok=True)
        stamp = polled_at.strftime(FILENAME_FORMAT)
        path = self.quarantine_dir / f"{stamp}.bad"
        suffix = 1
        while path.exists():
            path = self.quarantine_dir / f"{stamp}-{suffix}.bad"
            suffix += 1
        path.write_bytes(raw)
        return path


@dataclass
class CollectorConfig:
    endpoint: str
    store: SnapshotStore
    interval: float = DEFAULT_INTERVAL
    max_retries: int = 3
    timeout: float = 30.0
    retry_delay: float = 5.0

    def __post_init__(self):
        check_positive(self.interval, "interval")
        check_int(self.max_retries, "max_retries", minimum=0)
        if not isinstance(self.store, SnapshotStore):
            self.store = SnapshotStore(self.store)


def fetch_payload(config, session=None):
    """GET the endpoint, retrying up to ``max_retries`` extra times."""
    http = session or requests
    last_error = None
    for attempt in range(config.max_retries + 1):
        try:
            response = http.get(config.endpoint, timeout=config.timeout)
            response.raise_for_status()
            return response.content
        except requests.RequestException as exc:
            last_error = exc
            logger.warning("poll attempt %d/%d failed: %s", attempt + 1, config.max_retries + 1, exc)
            if attempt < config.max_retries and config.retry_delay > 0:
                time.sleep(config.retry_delay)
    raise PollError(f"could not fetch {config.endpoint}: {last_error}")


def poll_once(config, fetch=None):
    """Fetch one payload and archive it.

    ``fetch`` may replace the HTTP call; it receives the config and returns
    the raw payload bytes.
    """
    raw = (fetch or fetch_payload)(config)
    if isinstance(raw, str):
        raw = raw.encode("utf-8")
    try:
        snapshot = parse_snapshot(raw)
    except FeedError as exc:
        path = config.store.quarantine(raw)
        raise PayloadError(f"unusable payload quarantined at {path}: {exc}", path) from exc
    if config.store.store(snapshot.taken_at, raw):
        logger.info("stored snapshot %s (%d stations)", snapshot.taken_at, len(snapshot))
        return PollResult.STORED
    logger.info("snapshot %s already stored", snapshot.taken_at)
    return PollResult.SKIPPED_DUPLICATE


def schedule_ticks(duration, interval):
    """Number of polls over ``duration`` seconds, counting the one at t = 0."""
    check_positive(interval, "interval")
    if duration < 0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    return int(duration // interval) + 1


def run_collector(config, polls=None, sleep=time.sleep, fetch=None):
    """Poll forever (or ``polls`` times) on the configured cadence.

    Failed polls are logged and do not stop the loop. Returns a count per
    outcome.
    """
    counts = {"stored": 0, "skipped_duplicate": 0, "failed": 0}
    done = 0
    while polls is None or done < polls:
        started = time.monotonic()
        try:
            counts[poll_once(config, fetch=fetch).value] += 1
        except (PollError, PayloadError) as exc:
            counts["failed"] += 1
            logger.error("%s", exc)
        done += 1
        if polls is not None and done >= polls:
            break
        sleep(max(0.0, config.interval - (time.monotonic() - started)))
    return counts


def _peek_execution_time(raw):
    match = _EXECUTION_TIME_RE.search(raw)
    if match is None:
        return None
    try:
        return parse_execution_time(match.group(1).decode("utf-8"))
    except (FeedError, UnicodeDecodeError):
        return None


def load_corpus(store):
    """Yield stored snapshots in strictly ascending ``taken_at`` order.

    Files are ordered by the executionTime inside them, not by their name,
    so a misnamed file still lands in the right place (with a warning).
    Only one parsed snapshot is held at a time.
    """
    if not isinstance(store, SnapshotStore):
        store = SnapshotStore(store)
    if not store.root.is_dir():
        raise NotADirectoryError(f"snapshot store not found: {store.root}")

    keyed = []
    for path in store.snapshot_files():
        taken_at = _peek_execution_time(path.read_bytes())
        if taken_at is None:
            logger.warning("skipping %s: no readable executionTime", path.name)
            continue
        if path.name != store.path_for(taken_at).name:
            logger.warning("integrity: %s holds executionTime %s", path.name, taken_at)
        keyed.append((taken_at, path.name, path))
    keyed.sort()

    previous = None
    for _, _, path in keyed:
        try:
            snapshot = parse_snapshot(path.read_bytes())
        except FeedError as exc:
            logger.warning("skipping %s: %s", path.name, exc)
            continue
        if previous is not None and snapshot.taken_at <= previous:
            logger.warning("skipping %s: duplicate executionTime %s", path.name, snapshot.taken_at)
            continue
        previous = snapshot.taken_at
        yield snapshot
