"""Command line entry point: ``bbssforge <subcommand> ...``.

Exit codes: 0 success, 1 data or validation error, 2 usage error.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from . import collector, distances, instformat, instgen, stats, synthcorpus
from .feedmodel import OPERATIONAL_STATUS, FeedError
from .validation import parse_sizes

logger = logging.getLogger("bbssforge")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2
ROUTING_KEY_ENV = "ROUTING_API_KEY"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _sizes(text):
    try:
        return parse_sizes(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _month(text):
    parts = text.split("-")
    if len(parts) != 2 or not all(p.isdigit() for p in parts) or not 1 <= int(parts[1]) <= 12:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM, got {text!r}")
    return text


def _default_jobs():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def build_parser():
    parser = _Parser(prog="bbssforge", description="Build static bike-sharing rebalancing instances.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output")
    parser.add_argument("--jobs", type=int, default=_default_jobs(), help="worker threads")
    # same flags after the subcommand; SUPPRESS keeps them from clobbering the top-level values
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("collect", parents=[common], help="poll a station feed into a snapshot store")
    p.add_argument("--endpoint", default=collector.default_endpoint())
    p.add_argument("--interval", type=float, default=collector.DEFAULT_INTERVAL)
    p.add_argument("--store", required=True, type=Path)
    p.add_argument("--once", action="store_true", help="poll a single time and exit")
    p.add_argument("--max-retries", type=int, default=3)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic snapshot store")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--spec", type=Path, help="station spec file")
    source.add_argument("--random-stations", type=int, metavar="N", help="random mixed population of N stations")
    p.add_argument("--noise", type=int, default=0, help="noise for --random-stations")
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--cadence", type=int, default=600)
    p.add_argument("--start", default=synthcorpus.DEFAULT_START.isoformat(), help="first day, YYYY-MM-DD")
    p.add_argument("--weekend-noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("distances", parents=[common], help="build the travel matrix for the stations in a store")
    p.add_argument("--store", required=True, type=Path)
    p.add_argument("--depot", type=int, help="depot station id (default: medoid)")
    p.add_argument("--mode", choices=["offline", "live"], default="offline")
    p.add_argument("--cache", type=Path)
    p.add_argument("--speed", type=float, default=distances.DEFAULT_SPEED_KMH, help="offline speed in km/h")
    p.add_argument("--routing-endpoint")
    p.add_argument("--rate", type=float, default=10.0, help="live requests per second")
    p.add_argument("--out", type=Path, help="matrix JSON (default: stdout)")

    p = sub.add_parser("stats", parents=[common], help="per-station profiles and hourly box data")
    p.add_argument("--store", required=True, type=Path)
    p.add_argument("--out", type=Path, help="directory for profiles.csv and boxes.csv (default: profiles to stdout)")
    p.add_argument("--include-weekends", action="store_true")
    p.add_argument("--operational-status", type=int, default=OPERATIONAL_STATUS)
    p.add_argument("--step-threshold", type=int, default=4, help="median jump reported as overnight step")

    p = sub.add_parser("generate", parents=[common], help="generate an instance batch")
    p.add_argument("--store", required=True, type=Path)
    p.add_argument("--month", required=True, type=_month, help="YYYY-MM of the starting snapshots")
    p.add_argument("--sizes", type=_sizes, default=list(instgen.DEFAULT_SIZES))
    p.add_argument("--vehicles", type=int, default=3)
    p.add_argument("--vehicle-cap", type=int, default=20)
    p.add_argument("--time-budget", type=int, default=7200)
    p.add_argument("--depot", type=int, help="depot station id (default: medoid)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--profiles", type=Path, help="profiles.csv from the stats command")
    p.add_argument("--matrix", type=Path, help="matrix JSON from the distances command")
    p.add_argument("--speed", type=float, default=distances.DEFAULT_SPEED_KMH)
    p.add_argument("--operational-status", type=int, default=OPERATIONAL_STATUS)

    p = sub.add_parser("validate", parents=[common], help="check instance files")
    p.add_argument("files", nargs="+", type=Path)
    return parser


def cmd_collect(args):
    config = collector.CollectorConfig(args.endpoint, collector.SnapshotStore(args.store),
                                       interval=args.interval, max_retries=args.max_retries)
    if args.once:
        try:
            result = collector.poll_once(config)
        except (collector.PollError, collector.PayloadError) as exc:
            logger.error("%s", exc)
            return EXIT_DATA
        print(result.value)
        return EXIT_OK
    collector.run_collector(config)
    return EXIT_OK


def cmd_synth(args):
    from datetime import date

    start = date.fromisoformat(args.start)
    if args.spec is not None:
        specs = synthcorpus.parse_spec_file(args.spec.read_text())
    else:
        specs = synthcorpus.random_specs(args.random_stations, seed=args.seed, noise=args.noise)
    corpus = synthcorpus.synth_corpus(specs, args.days, args.cadence, args.seed, start, args.weekend_noise)
    written = synthcorpus.write_corpus(corpus, collector.SnapshotStore(args.out))
    logger.info("wrote %d snapshots to %s", written, args.out)
    return EXIT_OK


def cmd_distances(args):
    stations = instgen.latest_observations(collector.load_corpus(args.store))
    if not stations:
        logger.error("no snapshots in %s", args.store)
        return EXIT_DATA
    if args.mode == "live":
        if not args.routing_endpoint:
            raise UsageError("--routing-endpoint is required with --mode live")
        provider = distances.LiveProvider(args.routing_endpoint, os.environ.get(ROUTING_KEY_ENV),
                                          requests_per_second=args.rate)
    else:
        provider = distances.OfflineProvider(args.speed)
    depot = distances.select_depot(stations, override_id=args.depot)
    matrix = distances.build_matrix(stations, depot, provider, cache=args.cache, jobs=args.jobs)
    _emit(matrix.to_json() + "\n", args.out)
    logger.info("matrix over %d stations, depot %s, %d queries", len(matrix), depot, provider.queries)
    return EXIT_OK


def _emit(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def cmd_stats(args):
    profiler = stats.StationProfiler(not args.include_weekends, args.operational_status)
    profiler.fit(collector.load_corpus(args.store))
    if not profiler.profiles_:
        logger.error("no station has usable data in %s", args.store)
        return EXIT_DATA
    for station_id, hours in profiler.overnight_steps(args.step_threshold).items():
        logger.info("station %s: overnight step after hour(s) %s", station_id, hours)
    profiles = list(profiler.profiles_.values())
    if args.out is None:
        stats.write_profiles_csv(profiles, sys.stdout)
        return EXIT_OK
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "profiles.csv", "w", newline="") as fh:
        stats.write_profiles_csv(profiles, fh)
    with open(args.out / "boxes.csv", "w", newline="") as fh:
        stats.write_boxes_csv(profiler.distributions_, fh)
    return EXIT_OK


def cmd_generate(args):
    try:
        vehicles = instgen.VehicleParams.uniform(args.vehicles, args.vehicle_cap, args.time_budget)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None

    if args.profiles is not None:
        with open(args.profiles, newline="") as fh:
            profiles = stats.read_profiles_csv(fh)
    else:
        profiler = stats.StationProfiler(operational_status=args.operational_status)
        profiles = profiler.fit(collector.load_corpus(args.store)).profiles_

    snapshots = instgen.select_midnight_snapshots(collector.load_corpus(args.store), args.month)
    stations = instgen.latest_observations(snapshots)
    if args.matrix is not None:
        matrix = distances.DistanceMatrix.from_json(args.matrix.read_text())
        covered = set(matrix.ids)
        depot = distances.select_depot([s for s in stations if s.station_id in covered],
                                       matrix=matrix, override_id=args.depot)
    else:
        depot = distances.select_depot(stations, override_id=args.depot)
        matrix = distances.build_matrix(stations, depot, distances.OfflineProvider(args.speed))

    batch = instgen.generate_batch(snapshots, profiles, matrix, depot, vehicles, args.sizes, args.seed,
                                   jobs=args.jobs, operational_status=args.operational_status)
    args.out.mkdir(parents=True, exist_ok=True)
    for instance in batch.instances:
        (args.out / f"{instance.name}.bbss").write_text(instformat.write_instance(instance))
    logger.info("wrote %d instances to %s (depot %s)", len(batch.instances), args.out, depot)
    for name, message in batch.errors:
        logger.error("%s failed: %s", name, message)
    return EXIT_OK if batch.ok else EXIT_DATA


def cmd_validate(args):
    status = EXIT_OK
    for path in args.files:
        try:
            instance = instformat.parse_instance(path.read_text())
        except instformat.InstanceFormatError as exc:
            print(f"{path}: parse error: {exc}", file=sys.stderr)
            status = EXIT_DATA
            continue
        report = instformat.validate_instance(instance)
        for v in report.violations:
            where = f" station {v.station_id}" if v.station_id is not None else ""
            print(f"{path}: {v.code}{where}: {v.message}", file=sys.stderr)
        if not report.is_valid:
            status = EXIT_DATA
        else:
            print(f"{path}: ok")
    return status


COMMANDS = {
    "collect": cmd_collect,
    "synth": cmd_synth,
    "distances": cmd_distances,
    "stats": cmd_stats,
    "generate": cmd_generate,
    "validate": cmd_validate,
}


def _configure_logging(verbosity):
    for handler in [h for h in logger.handlers if getattr(h, "_bbssforge", False)]:
        logger.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler._bbssforge = True
    logger.addHandler(handler)
    logger.setLevel(logging.WARNING - 10 * min(verbosity, 2))


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    _configure_logging(args.verbose)
    if args.jobs < 1:
        print("bbssforge: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bbssforge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FeedError, LookupError, ValueError, RuntimeError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


def main():
    sys.exit(run())
