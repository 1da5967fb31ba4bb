"""Travel distance and time matrices between stations.

Matrices are square, integer valued, and carry the depot at index 0. Pairs
are resolved through a routing provider: ``OfflineProvider`` uses
great-circle distance at a fixed speed, ``LiveProvider`` asks an HTTP
distance-matrix service. Resolved pairs can be kept in an append-only CSV
cache (``from_id,to_id,meters,seconds``).
"""

import csv
import json
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np
import requests

from .validation import check_positive

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000
DEFAULT_SPEED_KMH = 20


class MatrixError(RuntimeError):
    def __init__(self, message, pair=None):
        self.pair = pair
        super().__init__(message)


def _round_half_up(value):
    return math.floor(value + Fraction(1, 2)) if isinstance(value, Fraction) else math.floor(value + 0.5)


def haversine_meters(a, b):
    """Great-circle distance in whole meters between two ``(lat, lon)`` pairs.

    Rounded up, not to nearest: ceil(x + y) <= ceil(x) + ceil(y), so the
    integer distances still obey the triangle inequality.
    """
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return math.ceil(2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h))))


def travel_seconds(meters, speed_kmh):
    check_positive(speed_kmh, "speed_kmh")
    if meters < 0:
        raise ValueError(f"meters must be >= 0, got {meters}")
    speed = Fraction(str(speed_kmh)) if isinstance(speed_kmh, float) else Fraction(speed_kmh)
    return _round_half_up(Fraction(meters) * Fraction(36, 10) / speed)


class DistanceMatrix:
    """Meters and seconds between ``ids``; ``ids[0]`` is the depot."""

    def __init__(self, ids, meters, seconds):
        self.ids = tuple(int(i) for i in ids)
        self.meters = np.asarray(meters, dtype=np.int64).reshape(len(self.ids), len(self.ids))
        self.seconds = np.asarray(seconds, dtype=np.int64).reshape(len(self.ids), len(self.ids))

    @property
    def depot_id(self):
        return self.ids[0]

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, DistanceMatrix):
            return NotImplemented
        return (
            self.ids == other.ids
            and np.array_equal(self.meters, other.meters)
            and np.array_equal(self.seconds, other.seconds)
        )

    __hash__ = None

    def __repr__(self):
        return f"DistanceMatrix(ids={self.ids!r})"

    def index(self, station_id):
        return self.ids.index(station_id)

    def subset(self, ids):
        """Matrix restricted to ``ids`` in that order."""
        position = {sid: i for i, sid in enumerate(self.ids)}
        missing = [sid for sid in ids if sid not in position]
        if missing:
            raise KeyError(f"stations not in matrix: {missing}")
        rows = [position[sid] for sid in ids]
        grid = np.ix_(rows, rows)
        return DistanceMatrix(ids, self.meters[grid], self.seconds[grid])

    def to_json(self):
        return json.dumps({
            "ids": list(self.ids),
            "meters": self.meters.tolist(),
            "seconds": self.seconds.tolist(),
        })

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(data["ids"], data["meters"], data["seconds"])


def _location(station):
    return (station.latitude, station.longitude)


class RoutingProvider:
    """Resolves one directed pair of locations to ``(meters, seconds)``."""

    mode = "abstract"

    def __init__(self):
        self.queries = 0
        self._count_lock = threading.Lock()

    def query(self, origin, destination):
        with self._count_lock:
            self.queries += 1
        return self._resolve(origin, destination)

    def _resolve(self, origin, destination):
        raise NotImplementedError


class OfflineProvider(RoutingProvider):
    mode = "offline"

    def __init__(self, speed_kmh=DEFAULT_SPEED_KMH):
        super().__init__()
        self.speed_kmh = check_positive(speed_kmh, "speed_kmh")

    def _resolve(self, origin, destination):
        meters = haversine_meters(origin, destination)
        return meters, travel_seconds(meters, self.speed_kmh)


class LiveProvider(RoutingProvider):
    """Client for a Google-style distance matrix endpoint.

    Sends ``origins``/``destinations`` as ``lat,lon`` and reads
    ``rows[0].elements[0].distance.value`` (meters) and
    ``...duration.value`` (seconds).
    """

    mode = "live"

    def __init__(self, endpoint, api_key=None, max_retries=3, requests_per_second=10.0,
                 timeout=30.0, retry_delay=1.0, session=None):
        super().__init__()
        self.endpoint = endpoint
        self.api_key = api_key
        self.max_retries = max_retries
        self.timeout = timeout
        self.retry_delay = retry_delay
        self.session = session or requests.Session()
        self._min_gap = 1.0 / requests_per_second if requests_per_second else 0.0
        self._rate_lock = threading.Lock()
        self._next_slot = 0.0

    def _wait_for_slot(self):
        with self._rate_lock:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + self._min_gap
        if wait > 0:
            time.sleep(wait)

    def _resolve(self, origin, destination):
        params = {
            "origins": f"{origin[0]},{origin[1]}",
            "destinations": f"{destination[0]},{destination[1]}",
        }
        if self.api_key:
            params["key"] = self.api_key
        last_error = None
        for attempt in range(self.max_retries + 1):
            self._wait_for_slot()
            try:
                response = self.session.get(self.endpoint, params=params, timeout=self.timeout)
                response.raise_for_status()
                element = response.json()["rows"][0]["elements"][0]
                if element.get("status", "OK") != "OK":
                    raise ValueError(f"element status {element['status']}")
                meters = element["distance"]["value"]
                seconds = element["duration"]["value"]
                if meters < 0 or seconds < 0:
                    raise ValueError("negative travel value")
                return _round_half_up(meters), _round_half_up(seconds)
            except (requests.RequestException, KeyError, IndexError, TypeError, ValueError) as exc:
                last_error = exc
                if attempt < self.max_retries and self.retry_delay > 0:
                    time.sleep(self.retry_delay)
        raise MatrixError(f"routing failed: {last_error}")


class DistanceCache:
    """Append-only CSV of resolved pairs. Appends are serialized."""

    def __init__(self, path):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()

    def load(self):
        entries = {}
        if self.path is None or not self.path.exists():
            return entries
        with open(self.path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                try:
                    origin, destination, meters, seconds = (int(v) for v in row)
                except ValueError:
                    logger.warning("%s:%d: ignoring malformed cache line", self.path, lineno)
                    continue
                entries[(origin, destination)] = (meters, seconds)
        return entries

    def append(self, resolved):
        if self.path is None or not resolved:
            return
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                for (origin, destination), (meters, seconds) in resolved:
                    writer.writerow([origin, destination, meters, seconds])


def build_matrix(stations, depot_id, provider, cache=None, jobs=1):
    """Full matrix over ``stations`` with the depot moved to index 0.

    ``stations`` are objects with ``station_id``, ``latitude`` and
    ``longitude``; non-depot stations keep their given order. Pairs already
    in ``cache`` (a path) are not queried again; new ones are appended.
    """
    by_id = {}
    for station in stations:
        by_id.setdefault(station.station_id, station)
    if depot_id not in by_id:
        raise ValueError(f"depot {depot_id} is not among the stations")
    ids = [depot_id] + [sid for sid in by_id if sid != depot_id]

    store = DistanceCache(cache)
    known = store.load()
    pairs = [(a, b) for a in ids for b in ids if a != b]
    todo = [pair for pair in pairs if pair not in known]

    def resolve(pair):
        try:
            return pair, provider.query(_location(by_id[pair[0]]), _location(by_id[pair[1]]))
        except MatrixError as exc:
            raise MatrixError(f"pair {pair[0]} -> {pair[1]}: {exc}", pair=pair) from exc

    resolved = []
    try:
        if jobs > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                for item in pool.map(resolve, todo):
                    resolved.append(item)
        else:
            for pair in todo:
                resolved.append(resolve(pair))
    finally:
        # keep whatever was resolved before a failure
        store.append(resolved)
    known.update(resolved)

    n = len(ids)
    meters = np.zeros((n, n), dtype=np.int64)
    seconds = np.zeros((n, n), dtype=np.int64)
    for i, a in enumerate(ids):
        for j, b in enumerate(ids):
            if i != j:
                meters[i, j], seconds[i, j] = known[(a, b)]
    return DistanceMatrix(ids, meters, seconds)


def _pairwise_haversine(stations):
    n = len(stations)
    grid = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            grid[i, j] = grid[j, i] = haversine_meters(_location(stations[i]), _location(stations[j]))
    return grid


def select_depot(stations, matrix=None, override_id=None):
    """Pick the depot: ``override_id`` if given, else the medoid station.

    The medoid minimizes the summed meters to all other stations (matrix
    rows when ``matrix`` is given, haversine otherwise); ties go to the
    smallest id.
    """
    stations = sorted({s.station_id: s for s in stations}.values(), key=lambda s: s.station_id)
    if not stations:
        raise ValueError("need at least one station")
    ids = [s.station_id for s in stations]
    if override_id is not None:
        if override_id not in ids:
            raise ValueError(f"depot override {override_id} is not among the stations")
        return override_id
    if matrix is not None:
        grid = matrix.subset(ids).meters
    else:
        grid = _pairwise_haversine(stations)
    totals = grid.sum(axis=1)
    return ids[int(np.argmin(totals))]
