"""Instance assembly: starting snapshots, station sampling, targets."""

import calendar
import hashlib
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import time as dtime

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .distances import DEFAULT_SPEED_KMH, DistanceMatrix, OfflineProvider, build_matrix, select_depot
from .feedmodel import OPERATIONAL_STATUS, is_usable, usable_capacity
from .stats import NEUTRAL, SINK, SOURCE, StationProfiler
from .validation import check_int, check_positive

logger = logging.getLogger(__name__)

MIDNIGHT_WINDOW_END = dtime(0, 30)
DEFAULT_SIZES = (40, 80, 120, 160, 200, 240)


class GenerationError(RuntimeError):
    def __init__(self, message, shortfall=0):
        self.shortfall = shortfall
        super().__init__(message)


class SamplingError(ValueError):
    def __init__(self, message, shortfall):
        self.shortfall = shortfall
        super().__init__(message)


@dataclass(frozen=True)
class VehicleParams:
    count: int = 3
    capacities: tuple = (20, 20, 20)
    time_budget: int = 7200

    @classmethod
    def uniform(cls, count=3, capacity=20, time_budget=7200):
        check_int(count, "vehicles", minimum=1)
        check_int(capacity, "vehicle capacity", minimum=1)
        check_int(time_budget, "time budget", minimum=1)
        return cls(count, (capacity,) * count, time_budget)


@dataclass(frozen=True)
class InstanceStation:
    station_id: int
    capacity: int
    current: int
    target: int


@dataclass(frozen=True)
class Instance:
    name: str
    stations: tuple
    depot_id: int
    vehicles: VehicleParams
    matrix: DistanceMatrix

    @property
    def station_ids(self):
        return [s.station_id for s in self.stations]


@dataclass
class BatchResult:
    instances: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.errors


def select_midnight_snapshots(corpus, year_month):
    """Earliest snapshot in [00:00, 00:30) for each day of ``year_month`` (``"YYYY-MM"``)."""
    year, month = (int(part) for part in year_month.split("-"))
    picked = {}
    for snapshot in corpus:
        moment = snapshot.taken_at
        if (moment.year, moment.month) != (year, month) or moment.time() >= MIDNIGHT_WINDOW_END:
            continue
        if moment.day not in picked or moment < picked[moment.day].taken_at:
            picked[moment.day] = snapshot
    if not picked:
        raise LookupError(f"no midnight snapshots in {year_month}")
    missing = [day for day in range(1, calendar.monthrange(year, month)[1] + 1) if day not in picked]
    if missing:
        logger.warning("%s: no midnight snapshot for day(s) %s", year_month, ", ".join(map(str, missing)))
    return [picked[day] for day in sorted(picked)]


def _pools(profiles, depot_id):
    pools = {SOURCE: [], SINK: [], NEUTRAL: []}
    for station_id in sorted(profiles):
        if station_id != depot_id:
            pools[profiles[station_id].station_class].append(station_id)
    return pools


def sample_stations(profiles, size, depot_id, seed, accept=None):
    """Draw ``size`` station ids, alternating source and sink pools.

    Each draw is uniform without replacement from its pool. When one pool
    runs dry the other one continues; neutral stations only fill what is
    left after both are empty. A drawn station rejected by ``accept`` is
    discarded and redrawn from the same pool. Returns ids in draw order.
    """
    check_int(size, "size", minimum=1)
    if isinstance(profiles, dict):
        profiles = dict(profiles)
    else:
        profiles = {p.station_id: p for p in profiles}
    pools = _pools(profiles, depot_id)
    eligible = sum(len(pool) for pool in pools.values())
    if size > eligible:
        raise SamplingError(f"size {size} exceeds the {eligible} eligible stations", size - eligible)

    rng = random.Random(seed)

    def draw(kind):
        pool = pools[kind]
        while pool:
            candidate = pool.pop(rng.randrange(len(pool)))
            if accept is None or accept(candidate):
                return candidate
            logger.debug("station %s rejected, redrawing from %s pool", candidate, kind)
        return None

    chosen = []
    turn = 0
    order = (SOURCE, SINK)
    while len(chosen) < size:
        preferred = order[turn % 2]
        turn += 1
        picked = None
        for kind in (preferred, order[turn % 2], NEUTRAL):
            picked = draw(kind)
            if picked is not None:
                break
        if picked is None:
            raise SamplingError(
                f"ran out of acceptable stations: {len(chosen)} of {size} drawn",
                size - len(chosen),
            )
        chosen.append(picked)
    return chosen


def compute_target(current, disp, capacity):
    """Target fill: the current count shifted by the displacement, kept within ``[0, capacity]``."""
    if not 0 <= current <= capacity:
        raise ValueError(f"need 0 <= current <= capacity, got {current}, {capacity}")
    return min(max(current + disp, 0), capacity)


def _as_profile_map(profiles):
    return profiles if isinstance(profiles, dict) else {p.station_id: p for p in profiles}


def generate_instance(snapshot, profiles, matrix_source, depot_id, vehicles, size, seed, name,
                      operational_status=OPERATIONAL_STATUS):
    """Build one instance starting from ``snapshot``.

    ``matrix_source`` is either a precomputed :class:`DistanceMatrix` that
    covers the candidates (it gets sliced) or a callable taking the ordered
    id list and returning a matrix.
    """
    profiles = _as_profile_map(profiles)
    if vehicles.count < 1 or len(vehicles.capacities) != vehicles.count:
        raise GenerationError(f"invalid vehicle parameters: {vehicles}")

    in_matrix = set(matrix_source.ids) if isinstance(matrix_source, DistanceMatrix) else None

    def acceptable(station_id):
        obs = snapshot.get(station_id)
        if obs is None or not is_usable(obs, operational_status):
            return False
        return in_matrix is None or station_id in in_matrix

    try:
        chosen = sample_stations(profiles, size, depot_id, seed, accept=acceptable)
    except SamplingError as exc:
        raise GenerationError(f"{name}: {exc} (short by {exc.shortfall})", exc.shortfall) from exc

    stations = []
    for station_id in chosen:
        obs = snapshot.get(station_id)
        capacity = usable_capacity(obs).usable_capacity
        current = obs.available_bikes
        stations.append(InstanceStation(
            station_id, capacity, current, compute_target(current, profiles[station_id].disp, capacity),
        ))

    ids = [depot_id] + chosen
    if isinstance(matrix_source, DistanceMatrix):
        matrix = matrix_source.subset(ids)
    else:
        matrix = matrix_source(ids)
    return Instance(name, tuple(stations), depot_id, vehicles, matrix)


def derive_seed(seed, day, size):
    digest = hashlib.sha256(f"{seed}:{day}:{size}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def instance_name(day, size, seed):
    return f"{day}-n{size}-s{seed}"


def generate_batch(snapshots, profiles, matrix, depot_id, vehicles, sizes, seed, jobs=1,
                   operational_status=OPERATIONAL_STATUS):
    """One instance per (starting snapshot, size), named ``<date>-n<size>-s<seed>``.

    Failures are collected in ``errors`` and the rest of the batch goes on.
    Output order is snapshot order then size order regardless of ``jobs``.
    """
    profiles = _as_profile_map(profiles)
    tasks = [(snapshot, size) for snapshot in snapshots for size in sizes]

    def build(task):
        snapshot, size = task
        day = snapshot.taken_at.date().isoformat()
        name = instance_name(day, size, seed)
        try:
            return generate_instance(
                snapshot, profiles, matrix, depot_id, vehicles, size,
                derive_seed(seed, day, size), name, operational_status,
            ), None
        except (GenerationError, KeyError, ValueError) as exc:
            logger.error("%s: %s", name, exc)
            return None, (name, str(exc))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(build, tasks))
    else:
        outcomes = [build(task) for task in tasks]

    result = BatchResult()
    for instance, error in outcomes:
        if error is None:
            result.instances.append(instance)
        else:
            result.errors.append(error)
    return result


def latest_observations(snapshots):
    """Most recent observation of every station across ``snapshots``."""
    latest = {}
    for snapshot in snapshots:
        for obs in snapshot:
            latest[obs.station_id] = obs
    return [latest[sid] for sid in sorted(latest)]


class InstanceGenerator(BaseEstimator):
    """Profiles a corpus and produces instance batches from starting snapshots.

    ``fit`` learns station profiles; ``generate`` picks the depot (unless
    ``depot_id`` is set), builds an offline matrix over every station seen
    in the starting snapshots when none is supplied, and returns a
    :class:`BatchResult`.
    """

    def __init__(self, sizes=DEFAULT_SIZES, depot_id=None, n_vehicles=3, vehicle_capacity=20,
                 time_budget=7200, seed=0, weekdays_only=True, operational_status=OPERATIONAL_STATUS,
                 speed_kmh=DEFAULT_SPEED_KMH, jobs=1):
        self.sizes = sizes
        self.depot_id = depot_id
        self.n_vehicles = n_vehicles
        self.vehicle_capacity = vehicle_capacity
        self.time_budget = time_budget
        self.seed = seed
        self.weekdays_only = weekdays_only
        self.operational_status = operational_status
        self.speed_kmh = speed_kmh
        self.jobs = jobs

    def fit(self, X, y=None):
        check_positive(self.speed_kmh, "speed_kmh")
        self.vehicles_ = VehicleParams.uniform(self.n_vehicles, self.vehicle_capacity, self.time_budget)
        profiler = StationProfiler(self.weekdays_only, self.operational_status).fit(X)
        self.profiles_ = profiler.profiles_
        return self

    def generate(self, snapshots, matrix=None):
        check_is_fitted(self, "profiles_")
        snapshots = list(snapshots)
        stations = latest_observations(snapshots)
        if matrix is None:
            depot = select_depot(stations, override_id=self.depot_id)
            matrix = build_matrix(stations, depot, OfflineProvider(self.speed_kmh), jobs=1)
        else:
            covered = set(matrix.ids)
            stations = [s for s in stations if s.station_id in covered]
            depot = select_depot(stations, matrix=matrix, override_id=self.depot_id)
        self.depot_id_ = depot
        return generate_batch(
            snapshots, self.profiles_, matrix, depot, self.vehicles_, list(self.sizes), self.seed,
            jobs=self.jobs, operational_status=self.operational_status,
        )
