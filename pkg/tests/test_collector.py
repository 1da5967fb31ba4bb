import copy
import json
import logging
import os
import threading
from datetime import datetime
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from bbssforge.collector import (
    CollectorConfig,
    PayloadError,
    PollError,
    PollResult,
    SnapshotStore,
    default_endpoint,
    load_corpus,
    poll_once,
    run_collector,
    schedule_ticks,
)
from bbssforge.feedmodel import parse_snapshot, snapshot_to_document

from conftest import PAPER_LISTING, make_obs, make_snapshot


class FeedServer:
    """Serves whatever body/status is currently set."""

    def __init__(self):
        self.body = b""
        self.status = 200
        self.hits = 0
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):
                outer.hits += 1
                self.send_response(outer.status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(outer.body)))
                self.end_headers()
                self.wfile.write(outer.body)

            def log_message(self, *args):
                pass

        self.httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_port}/stations/json"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def server():
    srv = FeedServer()
    yield srv
    srv.close()


def _payload(when="2013-09-02 12:00:00 AM"):
    payload = copy.deepcopy(PAPER_LISTING)
    payload["executionTime"] = when
    return json.dumps(payload).encode()


@pytest.fixture
def config(server, tmp_path):
    return CollectorConfig(server.url, SnapshotStore(tmp_path / "store"), max_retries=1, retry_delay=0)


class TestPollOnce:
    def test_stores_fresh_snapshot(self, server, config):
        server.body = _payload()
        assert poll_once(config) is PollResult.STORED
        path = config.store.root / "20130902-000000.json"
        assert path.read_bytes() == server.body

    def test_duplicate_execution_time_skipped(self, server, config):
        server.body = _payload()
        poll_once(config)
        before = sorted(p.name for p in config.store.root.iterdir())
        assert poll_once(config) is PollResult.SKIPPED_DUPLICATE
        assert sorted(p.name for p in config.store.root.iterdir()) == before

    def test_bad_payload_quarantined(self, server, config):
        payload = copy.deepcopy(PAPER_LISTING)
        del payload["stationBeanList"]
        server.body = json.dumps(payload).encode()
        with pytest.raises(PayloadError) as err:
            poll_once(config)
        assert err.value.quarantine_path.parent == config.store.quarantine_dir
        assert err.value.quarantine_path.suffix == ".bad"
        assert err.value.quarantine_path.read_bytes() == server.body
        assert list(config.store.root.glob("*.json")) == []

    def test_network_failure_after_retries(self, server, config):
        server.status = 503
        server.body = b"busy"
        with pytest.raises(PollError):
            poll_once(config)
        assert server.hits == config.max_retries + 1

    def test_stored_file_round_trips(self, server, config):
        server.body = _payload("2013-09-02 01:10:00 PM")
        validated = parse_snapshot(server.body)
        poll_once(config)
        assert list(load_corpus(config.store)) == [validated]

    def test_injected_fetch(self, config):
        assert poll_once(config, fetch=lambda cfg: _payload()) is PollResult.STORED


def test_run_collector_counts_outcomes(config):
    bodies = iter([_payload("2013-09-02 12:00:00 AM"), _payload("2013-09-02 12:00:00 AM"), b"junk",
                   _payload("2013-09-02 12:10:00 AM")])
    sleeps = []
    counts = run_collector(config, polls=4, sleep=sleeps.append, fetch=lambda cfg: next(bodies))
    assert counts == {"stored": 2, "skipped_duplicate": 1, "failed": 1}
    assert len(sleeps) == 3


class TestScheduleTicks:
    @pytest.mark.parametrize("duration,interval,expected", [(1800, 600, 4), (0, 600, 1), (86400, 600, 145), (599, 600, 1)])
    def test_counts(self, duration, interval, expected):
        assert schedule_ticks(duration, interval) == expected

    @pytest.mark.parametrize("interval", [0, -600])
    def test_bad_interval(self, interval):
        with pytest.raises(ValueError):
            schedule_ticks(600, interval)


def test_config_rejects_zero_interval(tmp_path):
    with pytest.raises(ValueError):
        CollectorConfig("http://x", SnapshotStore(tmp_path), interval=0)


def test_endpoint_env_override(monkeypatch):
    monkeypatch.setenv("BSS_FEED_ENDPOINT", "http://example.invalid/feed")
    assert default_endpoint() == "http://example.invalid/feed"
    monkeypatch.delenv("BSS_FEED_ENDPOINT")
    assert default_endpoint().startswith("http")


def _write(store, snapshot, name=None):
    store.root.mkdir(parents=True, exist_ok=True)
    path = store.root / (name or store.path_for(snapshot.taken_at).name)
    path.write_text(snapshot_to_document(snapshot))
    return path


class TestLoadCorpus:
    def test_ascending(self, tmp_path):
        store = SnapshotStore(tmp_path)
        late = make_snapshot("2013-09-02T00:10:00", make_obs(1))
        early = make_snapshot("2013-09-02T00:00:00", make_obs(1))
        _write(store, late)
        _write(store, early)
        assert [s.taken_at for s in load_corpus(store)] == [early.taken_at, late.taken_at]

    def test_empty(self, tmp_path):
        assert list(load_corpus(tmp_path)) == []

    def test_quarantine_skipped(self, tmp_path):
        store = SnapshotStore(tmp_path)
        store.quarantine(b"garbage")
        _write(store, make_snapshot("2013-09-02T00:00:00", make_obs(1)))
        assert len(list(load_corpus(store))) == 1

    def test_missing_directory(self, tmp_path):
        with pytest.raises(OSError):
            list(load_corpus(tmp_path / "nope"))

    def test_misnamed_file_warns_and_orders_by_content(self, tmp_path, caplog):
        store = SnapshotStore(tmp_path)
        a = make_snapshot("2013-09-02T00:00:00", make_obs(1))
        b = make_snapshot("2013-09-02T00:20:00", make_obs(1))
        c = make_snapshot("2013-09-02T00:10:00", make_obs(1))
        _write(store, a)
        _write(store, b)
        _write(store, c, name="20130901-000000.json")
        with caplog.at_level(logging.WARNING, logger="bbssforge.collector"):
            loaded = [s.taken_at for s in load_corpus(store)]
        assert loaded == [a.taken_at, c.taken_at, b.taken_at]
        assert any("integrity" in r.message for r in caplog.records)

    def test_strictly_increasing_with_duplicate_content(self, tmp_path):
        store = SnapshotStore(tmp_path)
        a = make_snapshot("2013-09-02T00:00:00", make_obs(1))
        _write(store, a)
        _write(store, a, name="20130902-000500.json")
        assert [s.taken_at for s in load_corpus(store)] == [a.taken_at]

    def test_streams_lazily(self, tmp_path):
        store = SnapshotStore(tmp_path)
        _write(store, make_snapshot("2013-09-02T00:00:00", make_obs(1)))
        corpus = load_corpus(store)
        assert next(corpus).taken_at == datetime(2013, 9, 2)


def test_store_never_overwrites(tmp_path):
    store = SnapshotStore(tmp_path)
    moment = datetime(2013, 9, 2)
    assert store.store(moment, b"first")
    assert not store.store(moment, b"second")
    assert store.path_for(moment).read_bytes() == b"first"
    assert not [p for p in os.listdir(tmp_path) if p.endswith(".tmp")]
