"""Typed view of station-feed snapshots.

A feed payload is a JSON document with an ``executionTime`` header in
12-hour clock form and a ``stationBeanList`` with one record per station.
Only the fields the pipeline needs are kept; anything else is ignored.
"""

import json
from dataclasses import dataclass, field
from datetime import datetime
from numbers import Integral, Real

EXECUTION_TIME_FORMAT = "%Y-%m-%d %I:%M:%S %p"

#: statusKey of an operational station in the CitiBike feed.
OPERATIONAL_STATUS = 1


class FeedError(ValueError):
    """Base class for everything that makes a payload unusable."""


class FeedParseError(FeedError):
    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class HeaderError(FeedParseError):
    """The executionTime header is missing or unreadable."""


class DuplicateStationError(FeedError):
    def __init__(self, station_id):
        self.station_id = station_id
        super().__init__(f"duplicate station id {station_id}")


@dataclass(frozen=True, slots=True)
class StationObservation:
    station_id: int
    available_docks: int
    total_docks: int
    available_bikes: int
    status_key: int
    is_test: bool
    latitude: float
    longitude: float
    address: str = ""


@dataclass(frozen=True)
class Snapshot:
    taken_at: datetime
    observations: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations.values())

    def get(self, station_id):
        return self.observations.get(station_id)


@dataclass(frozen=True, slots=True)
class CapacityReport:
    station_id: int
    usable_capacity: int
    dock_displacement: int


def usable_capacity(obs):
    """Capacity a station can really offer: free docks plus parked bikes.

    The feed's ``totalDocks`` is usually one more than that sum; the gap is
    reported as ``dock_displacement`` instead of being assumed.
    """
    usable = obs.available_docks + obs.available_bikes
    return CapacityReport(obs.station_id, usable, obs.total_docks - usable)


def is_usable(obs, operational_status=OPERATIONAL_STATUS):
    return obs.status_key == operational_status and not obs.is_test


def parse_execution_time(text):
    if not isinstance(text, str):
        raise HeaderError(f"expected a string, got {text!r}", field="executionTime")
    try:
        return datetime.strptime(text.strip(), EXECUTION_TIME_FORMAT)
    except ValueError:
        raise HeaderError(f"unreadable timestamp {text!r}", field="executionTime") from None


def format_execution_time(moment):
    return moment.strftime(EXECUTION_TIME_FORMAT)


def _count(record, key):
    value = record.get(key)
    if value is None:
        raise FeedParseError("missing", field=key)
    if isinstance(value, bool) or not isinstance(value, Integral):
        raise FeedParseError(f"expected an integer, got {value!r}", field=key)
    if value < 0:
        raise FeedParseError(f"negative value {value}", field=key)
    return int(value)


def _degrees(record, key, limit):
    value = record.get(key)
    if value is None:
        raise FeedParseError("missing", field=key)
    if isinstance(value, bool) or not isinstance(value, Real):
        raise FeedParseError(f"expected a number, got {value!r}", field=key)
    if not -limit <= value <= limit:
        raise FeedParseError(f"{value} outside [-{limit}, {limit}]", field=key)
    return float(value)


def parse_observation(record):
    """Build one observation from a ``stationBeanList`` entry."""
    if not isinstance(record, dict):
        raise FeedParseError(f"station record is not an object: {record!r}", field="stationBeanList")
    station_id = record.get("id")
    if isinstance(station_id, bool) or not isinstance(station_id, Integral):
        raise FeedParseError(f"expected an integer id, got {station_id!r}", field="id")
    is_test = record.get("testStation", False)
    if not isinstance(is_test, bool):
        raise FeedParseError(f"expected a boolean, got {is_test!r}", field="testStation")
    status = record.get("statusKey")
    if isinstance(status, bool) or not isinstance(status, Integral):
        raise FeedParseError(f"expected an integer, got {status!r}", field="statusKey")
    address = record.get("stAddress1", "")
    if not isinstance(address, str):
        raise FeedParseError(f"expected a string, got {address!r}", field="stAddress1")

    obs = StationObservation(
        station_id=int(station_id),
        available_docks=_count(record, "availableDocks"),
        total_docks=_count(record, "totalDocks"),
        available_bikes=_count(record, "availableBikes"),
        status_key=int(status),
        is_test=is_test,
        latitude=_degrees(record, "latitude", 90.0),
        longitude=_degrees(record, "longitude", 180.0),
        address=address,
    )
    if obs.available_docks + obs.available_bikes > obs.total_docks:
        raise FeedParseError(
            f"station {obs.station_id}: availableDocks + availableBikes "
            f"({obs.available_docks} + {obs.available_bikes}) exceeds {obs.total_docks}",
            field="totalDocks",
        )
    return obs


def parse_snapshot(document):
    """Parse a raw feed payload (``str`` or ``bytes``) into a :class:`Snapshot`.

    Any invalid station record rejects the whole snapshot.
    """
    try:
        payload = json.loads(document)
    except (ValueError, UnicodeDecodeError) as exc:
        raise FeedParseError(f"not valid JSON ({exc})", field="document") from None
    if not isinstance(payload, dict):
        raise FeedParseError("top level is not an object", field="document")
    if "executionTime" not in payload:
        raise HeaderError("missing", field="executionTime")
    taken_at = parse_execution_time(payload["executionTime"])

    records = payload.get("stationBeanList")
    if not isinstance(records, list):
        raise FeedParseError("missing or not a list", field="stationBeanList")

    observations = {}
    for record in records:
        obs = parse_observation(record)
        if obs.station_id in observations:
            raise DuplicateStationError(obs.station_id)
        observations[obs.station_id] = obs
    return Snapshot(taken_at, observations)


def observation_to_record(obs):
    return {
        "id": obs.station_id,
        "availableDocks": obs.available_docks,
        "totalDocks": obs.total_docks,
        "availableBikes": obs.available_bikes,
        "statusKey": obs.status_key,
        "testStation": obs.is_test,
        "latitude": obs.latitude,
        "longitude": obs.longitude,
        "stAddress1": obs.address,
    }


def snapshot_to_document(snapshot, indent=None):
    """Render a snapshot in the feed's own JSON layout."""
    payload = {
        "executionTime": format_execution_time(snapshot.taken_at),
        "stationBeanList": [observation_to_record(obs) for obs in snapshot],
    }
    return json.dumps(payload, indent=indent)
