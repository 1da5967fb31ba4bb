"""Hourly occupancy statistics and target displacement per station.

For every station the weekday bike counts are bucketed by hour of day. The
lowest hourly first quartile (``min_s``) and the highest hourly third
quartile (``max_s``) describe the band the station lives in; the
displacement is the integer shift that centers that band inside
``[0, capacity]``.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .feedmodel import OPERATIONAL_STATUS, is_usable, usable_capacity
from .validation import check_bounds, check_positive

logger = logging.getLogger(__name__)

HOURS = 24
SOURCE, SINK, NEUTRAL = "source", "sink", "neutral"
# flip to -1 to swap which displacement sign counts as a source
SOURCE_SIGN = 1
DEFAULT_STEP_WINDOW = (0, 6)

PROFILE_FIELDS = ["station_id", "capacity", "min_s", "max_s", "disp", "class"]
BOX_FIELDS = ["station_id", "hour", "n", "min", "q1", "median", "q3", "max"]


class InsufficientDataError(ValueError):
    def __init__(self, station_id):
        self.station_id = station_id
        super().__init__(f"station {station_id} has no usable weekday observations")


@dataclass
class HourlyDistribution:
    station_id: int
    samples: list = field(default_factory=lambda: [[] for _ in range(HOURS)])
    capacity: int = 0

    @property
    def sample_count(self):
        return [len(bucket) for bucket in self.samples]

    def is_empty(self):
        return not any(self.samples)

    def add(self, hour, bikes, capacity):
        self.samples[hour].append(bikes)
        if capacity > self.capacity:
            self.capacity = capacity


@dataclass(frozen=True)
class StationProfile:
    station_id: int
    capacity: int
    min_s: int
    max_s: int
    disp: int
    station_class: str


@dataclass(frozen=True)
class BoxSummary:
    hour: int
    min: int
    q1: int
    median: int
    q3: int
    max: int
    n: int


def _accepts(snapshot, weekdays_only):
    return not (weekdays_only and snapshot.taken_at.weekday() >= 5)


def collect_distributions(corpus, weekdays_only=True, operational_status=OPERATIONAL_STATUS,
                          station_ids=None):
    """One pass over ``corpus`` building every station's hourly distribution.

    Samples are ``available_bikes`` of usable observations. The corpus can
    be any iterable, including a one-shot generator.
    """
    wanted = set(station_ids) if station_ids is not None else None
    distributions = {}
    for snapshot in corpus:
        if not _accepts(snapshot, weekdays_only):
            continue
        hour = snapshot.taken_at.hour
        for obs in snapshot:
            if wanted is not None and obs.station_id not in wanted:
                continue
            if not is_usable(obs, operational_status):
                continue
            dist = distributions.get(obs.station_id)
            if dist is None:
                dist = distributions[obs.station_id] = HourlyDistribution(obs.station_id)
            dist.add(hour, obs.available_bikes, obs.available_docks + obs.available_bikes)
    return distributions


def hourly_distributions(corpus, station_id, weekdays_only=True, operational_status=OPERATIONAL_STATUS):
    found = collect_distributions(corpus, weekdays_only, operational_status, station_ids=[station_id])
    return found.get(station_id, HourlyDistribution(station_id))


def _nearest_rank(ordered, numerator, denominator):
    # 1-based rank ceil(p * n) with p = numerator / denominator
    n = len(ordered)
    rank = -(-numerator * n // denominator)
    return ordered[max(rank, 1) - 1]


def quartiles(samples):
    """Nearest-rank first and third quartile of a non-empty multiset."""
    ordered = sorted(samples)
    if not ordered:
        raise ValueError("quartiles of an empty sample")
    return _nearest_rank(ordered, 1, 4), _nearest_rank(ordered, 3, 4)


def median(samples):
    ordered = sorted(samples)
    if not ordered:
        raise ValueError("median of an empty sample")
    return _nearest_rank(ordered, 1, 2)


def station_extrema(dist):
    """``(min_s, max_s)``: lowest hourly q1 and highest hourly q3."""
    low = high = None
    for bucket in dist.samples:
        if not bucket:
            continue
        q1, q3 = quartiles(bucket)
        low = q1 if low is None else min(low, q1)
        high = q3 if high is None else max(high, q3)
    if low is None:
        raise InsufficientDataError(dist.station_id)
    return low, high


def displacement(capacity, min_s, max_s):
    """Shift that moves the band ``[min_s, max_s]`` to the middle of ``[0, capacity]``.

    ``floor(C - (C - (max_s - min_s)) / 2) - max_s``, evaluated in integers
    (the inner expression doubled, then floor-divided).
    """
    check_bounds(min_s, max_s, capacity)
    return (2 * capacity - (capacity - (max_s - min_s))) // 2 - max_s


def classify(disp):
    """Positive displacement means the band sits low and the station drains: a source."""
    signed = disp * SOURCE_SIGN
    if signed > 0:
        return SOURCE
    if signed < 0:
        return SINK
    return NEUTRAL


def detect_overnight_step(dist, threshold, window=DEFAULT_STEP_WINDOW):
    """Hours ``h`` in ``[window[0], window[1])`` whose median jumps by at least ``threshold`` at ``h + 1``."""
    check_positive(threshold, "threshold")
    start, end = window
    steps = []
    for hour in range(start, end):
        here, after = dist.samples[hour % HOURS], dist.samples[(hour + 1) % HOURS]
        if here and after and abs(median(after) - median(here)) >= threshold:
            steps.append(hour)
    return steps


def box_stats(dist):
    rows = []
    for hour, bucket in enumerate(dist.samples):
        if not bucket:
            continue
        ordered = sorted(bucket)
        rows.append(BoxSummary(
            hour=hour,
            min=ordered[0],
            q1=_nearest_rank(ordered, 1, 4),
            median=_nearest_rank(ordered, 1, 2),
            q3=_nearest_rank(ordered, 3, 4),
            max=ordered[-1],
            n=len(ordered),
        ))
    return rows


def build_profile(dist):
    min_s, max_s = station_extrema(dist)
    disp = displacement(dist.capacity, min_s, max_s)
    return StationProfile(dist.station_id, dist.capacity, min_s, max_s, disp, classify(disp))


def compute_profiles(distributions):
    """Profiles keyed by station id; stations without data are left out with a warning."""
    profiles = {}
    for station_id in sorted(distributions):
        try:
            profiles[station_id] = build_profile(distributions[station_id])
        except InsufficientDataError:
            logger.warning("station %s: no usable weekday data, no profile", station_id)
    return profiles


class StationProfiler(TransformerMixin, BaseEstimator):
    """Fit station profiles on a snapshot corpus, then turn snapshots into targets.

    ``fit`` consumes an iterable of snapshots once. ``transform`` takes one
    snapshot and returns an int array with one row per profiled, usable
    station: ``station_id, capacity, current, target``.
    """

    def __init__(self, weekdays_only=True, operational_status=OPERATIONAL_STATUS):
        self.weekdays_only = weekdays_only
        self.operational_status = operational_status

    def fit(self, X, y=None):
        self.distributions_ = collect_distributions(X, self.weekdays_only, self.operational_status)
        self.profiles_ = compute_profiles(self.distributions_)
        return self

    def transform(self, X):
        from .instgen import compute_target

        check_is_fitted(self, "profiles_")
        rows = []
        for station_id, profile in self.profiles_.items():
            obs = X.get(station_id)
            if obs is None or not is_usable(obs, self.operational_status):
                continue
            capacity = usable_capacity(obs).usable_capacity
            current = obs.available_bikes
            rows.append((station_id, capacity, current, compute_target(current, profile.disp, capacity)))
        return np.array(rows, dtype=np.int64).reshape(-1, 4)

    def get_feature_names_out(self, input_features=None):
        return np.array(["station_id", "capacity", "current", "target"], dtype=object)

    def box_stats(self, station_id):
        check_is_fitted(self, "distributions_")
        return box_stats(self.distributions_[station_id])

    def overnight_steps(self, threshold, window=DEFAULT_STEP_WINDOW):
        check_is_fitted(self, "distributions_")
        found = {}
        for station_id, dist in sorted(self.distributions_.items()):
            hours = detect_overnight_step(dist, threshold, window)
            if hours:
                found[station_id] = hours
        return found


def write_profiles_csv(profiles, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(PROFILE_FIELDS)
    for p in profiles:
        writer.writerow([p.station_id, p.capacity, p.min_s, p.max_s, p.disp, p.station_class])


def read_profiles_csv(fh):
    reader = csv.DictReader(fh)
    if reader.fieldnames != PROFILE_FIELDS:
        raise ValueError(f"unexpected profile header: {reader.fieldnames}")
    profiles = {}
    for row in reader:
        profile = StationProfile(
            station_id=int(row["station_id"]),
            capacity=int(row["capacity"]),
            min_s=int(row["min_s"]),
            max_s=int(row["max_s"]),
            disp=int(row["disp"]),
            station_class=row["class"],
        )
        if profile.station_class not in (SOURCE, SINK, NEUTRAL):
            raise ValueError(f"unknown class {profile.station_class!r}")
        profiles[profile.station_id] = profile
    return profiles


def write_boxes_csv(distributions, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(BOX_FIELDS)
    for station_id in sorted(distributions):
        for box in box_stats(distributions[station_id]):
            writer.writerow([station_id, box.hour, box.n, box.min, box.q1, box.median, box.q3, box.max])
