"""Synthetic snapshot corpora with planted daily occupancy patterns.

Each station follows a piecewise-constant level per hour of day plus
seeded uniform integer noise, so quartiles of a noise-free corpus are known
exactly. ``totalDocks`` is always one more than the usable capacity, as in
the real feed.

Spec file lines::

    station <id> <capacity> source <day_low> <night_high> <noise> <lat> <lon>
    station <id> <capacity> sink <day_high> <night_low> <noise> <lat> <lon>
    station <id> <capacity> flat <level> <noise> <lat> <lon>
    station <id> <capacity> step <jump_hour> <jump_size> <noise> <lat> <lon>
"""

from dataclasses import dataclass
from datetime import date, datetime, timedelta

import numpy as np

from .feedmodel import OPERATIONAL_STATUS, Snapshot, StationObservation, snapshot_to_document
from .validation import check_int

DAY_HOURS = range(7, 19)
PATTERN_ARITY = {"source": 2, "sink": 2, "flat": 1, "step": 2}
DEFAULT_START = date(2013, 9, 1)
SECONDS_PER_DAY = 86_400


@dataclass(frozen=True)
class SyntheticStationSpec:
    station_id: int
    capacity: int
    pattern: str
    args: tuple
    noise: int = 0
    latitude: float = 40.75
    longitude: float = -73.98

    def __post_init__(self):
        check_int(self.station_id, "station_id")
        check_int(self.capacity, "capacity", minimum=1)
        check_int(self.noise, "noise", minimum=0)
        if self.pattern not in PATTERN_ARITY:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if len(self.args) != PATTERN_ARITY[self.pattern]:
            raise ValueError(f"{self.pattern} takes {PATTERN_ARITY[self.pattern]} arguments, got {self.args!r}")
        for value in self.args:
            check_int(value, f"{self.pattern} argument")
        if self.pattern == "step":
            jump_hour, jump_size = self.args
            if not 1 <= jump_hour <= 23:
                raise ValueError(f"jump_hour must be in 1..23, got {jump_hour}")
            if abs(jump_size) > self.capacity:
                raise ValueError(f"jump_size {jump_size} exceeds capacity {self.capacity}")
        levels = self.hourly_levels()
        if min(levels) < 0 or max(levels) > self.capacity:
            raise ValueError(f"station {self.station_id}: pattern levels outside [0, {self.capacity}]")
        if not (-90 <= self.latitude <= 90 and -180 <= self.longitude <= 180):
            raise ValueError(f"station {self.station_id}: coordinates out of range")

    def hourly_levels(self):
        kind, args = self.pattern, self.args
        if kind == "flat":
            return [args[0]] * 24
        if kind == "step":
            jump_hour, jump_size = args
            base = (self.capacity - jump_size) // 2
            return [base if hour < jump_hour else base + jump_size for hour in range(24)]
        day, night = args
        return [day if hour in DAY_HOURS else night for hour in range(24)]


def synth_corpus(specs, days, cadence=600, seed=0, start=DEFAULT_START, weekend_noise=1.0):
    """Yield snapshots from ``start`` 00:00, one every ``cadence`` seconds, for ``days`` days.

    Weekend days use noise scaled by ``weekend_noise``. Every day draws from
    its own generator seeded by ``(seed, day)``.
    """
    specs = list(specs)
    check_int(days, "days", minimum=1)
    check_int(cadence, "cadence", minimum=1)
    ids = [s.station_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate station ids in specs")

    capacity = np.array([s.capacity for s in specs], dtype=np.int64)
    noise = np.array([s.noise for s in specs], dtype=np.int64)
    weekend = np.rint(noise * weekend_noise).astype(np.int64)
    levels = np.array([s.hourly_levels() for s in specs], dtype=np.int64).T.reshape(24, len(specs))
    ticks = -(-SECONDS_PER_DAY // cadence)
    offsets_s = np.arange(ticks) * cadence
    tick_hours = offsets_s // 3600
    addresses = [f"Synthetic station {sid}" for sid in ids]

    for day in range(days):
        day_start = datetime.combine(start + timedelta(days=day), datetime.min.time())
        spread = weekend if day_start.weekday() >= 5 else noise
        rng = np.random.default_rng([seed, day])
        draws = rng.random((ticks, len(specs)))
        jitter = np.floor(draws * (2 * spread + 1)).astype(np.int64) - spread
        bikes = np.clip(levels[tick_hours] + jitter, 0, capacity)
        docks = capacity - bikes
        for tick in range(ticks):
            row_bikes = bikes[tick].tolist()
            row_docks = docks[tick].tolist()
            observations = {
                spec.station_id: StationObservation(
                    spec.station_id, row_docks[i], spec.capacity + 1, row_bikes[i],
                    OPERATIONAL_STATUS, False, spec.latitude, spec.longitude, addresses[i],
                )
                for i, spec in enumerate(specs)
            }
            yield Snapshot(day_start + timedelta(seconds=int(offsets_s[tick])), observations)


def write_corpus(snapshots, store):
    """Archive snapshots in a :class:`~bbssforge.collector.SnapshotStore`; returns files written."""
    written = 0
    for snapshot in snapshots:
        if store.store(snapshot.taken_at, snapshot_to_document(snapshot).encode("utf-8")):
            written += 1
    return written


def parse_spec_file(text):
    specs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] != "station" or len(parts) < 4:
                raise ValueError("expected 'station <id> <capacity> <pattern> ...'")
            pattern = parts[3]
            if pattern not in PATTERN_ARITY:
                raise ValueError(f"unknown pattern {pattern!r}")
            arity = PATTERN_ARITY[pattern]
            if len(parts) != 4 + arity + 3:
                raise ValueError(f"{pattern} line needs {4 + arity + 3} fields, got {len(parts)}")
            specs.append(SyntheticStationSpec(
                station_id=int(parts[1]),
                capacity=int(parts[2]),
                pattern=pattern,
                args=tuple(int(v) for v in parts[4:4 + arity]),
                noise=int(parts[4 + arity]),
                latitude=float(parts[5 + arity]),
                longitude=float(parts[6 + arity]),
            ))
        except (ValueError, TypeError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return specs


def format_spec_file(specs):
    lines = []
    for s in specs:
        args = " ".join(str(v) for v in s.args)
        lines.append(f"station {s.station_id} {s.capacity} {s.pattern} {args} {s.noise} {s.latitude!r} {s.longitude!r}")
    return "\n".join(lines) + "\n"


def random_specs(n_stations, seed=0, noise=0, min_margin=5, first_id=1,
                 mix=(0.4, 0.4, 0.1, 0.1), center=(40.74, -73.99), spread_deg=0.04):
    """A mixed population of stations with planted patterns.

    Sources and sinks are drawn so their planted displacement has magnitude
    at least ``min_margin``. ``mix`` gives the source/sink/flat/step shares.
    Station ids are consecutive from ``first_id``.
    """
    rng = np.random.default_rng(seed)
    kinds = rng.choice(["source", "sink", "flat", "step"], size=n_stations, p=np.asarray(mix) / sum(mix))
    specs = []
    for offset, kind in enumerate(kinds.tolist()):
        capacity = int(rng.integers(max(19, 2 * min_margin + 1), max(48, 2 * min_margin + 20)))
        if kind in ("source", "sink"):
            while True:
                low = int(rng.integers(0, capacity // 3 + 1))
                high = int(rng.integers(low, capacity + 1))
                if (capacity - high - low) // 2 >= min_margin:
                    break
            # a sink is the mirror image of a source band: (day_high, night_low)
            args = (low, high) if kind == "source" else (capacity - low, capacity - high)
        elif kind == "flat":
            args = (int(rng.integers(0, capacity + 1)),)
        else:
            args = (int(rng.integers(1, 7)), int(rng.integers(4, capacity // 2 + 1)))
        lat = center[0] + float(rng.uniform(-spread_deg, spread_deg))
        lon = center[1] + float(rng.uniform(-spread_deg, spread_deg))
        specs.append(SyntheticStationSpec(
            first_id + offset, capacity, kind, args, noise, round(lat, 6), round(lon, 6),
        ))
    return specs
