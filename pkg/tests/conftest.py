import json
from datetime import datetime

import pytest

from bbssforge.feedmodel import Snapshot, StationObservation

PAPER_LISTING = {
    "executionTime": "2013-11-04 12:09:01 AM",
    "stationBeanList": [
        {
            "availableDocks": 21,
            "totalDocks": 39,
            "longitude": -73.99392888,
            "testStation": False,
            "stAddress1": "W 52 St & 11 Ave",
            "stationName": "W 52 St & 11 Ave",
            "landMark": "",
            "latitude": 40.76727216,
            "statusKey": 1,
            "availableBikes": 17,
            "id": 72,
        }
    ],
}


@pytest.fixture
def paper_document():
    return json.dumps(PAPER_LISTING, indent=4)


def make_obs(station_id=1, bikes=5, capacity=10, status=1, test=False, lat=40.75, lon=-73.98, total=None):
    return StationObservation(
        station_id=station_id,
        available_docks=capacity - bikes,
        total_docks=capacity + 1 if total is None else total,
        available_bikes=bikes,
        status_key=status,
        is_test=test,
        latitude=lat,
        longitude=lon,
        address=f"station {station_id}",
    )


def make_snapshot(taken_at, *observations):
    if isinstance(taken_at, str):
        taken_at = datetime.fromisoformat(taken_at)
    return Snapshot(taken_at, {obs.station_id: obs for obs in observations})


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
