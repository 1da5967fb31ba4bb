"""Benchmark instance generation for static bike-sharing rebalancing."""

from .distances import DistanceMatrix, LiveProvider, OfflineProvider, build_matrix, haversine_meters, select_depot
from .feedmodel import Snapshot, StationObservation, is_usable, parse_snapshot, usable_capacity
from .instformat import parse_instance, validate_instance, write_instance
from .instgen import (
    Instance,
    InstanceGenerator,
    InstanceStation,
    VehicleParams,
    compute_target,
    generate_batch,
    generate_instance,
    sample_stations,
    select_midnight_snapshots,
)
from .stats import StationProfiler, displacement, quartiles

__version__ = "0.1.0"
