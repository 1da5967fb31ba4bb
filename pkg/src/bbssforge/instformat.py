"""Text format for static rebalancing instances.

::

    bbss 1
    # travel times and distances exclude loading/unloading time
    name <name>
    stations <N>
    vehicles <V>
    timebudget <seconds>
    vehiclecap <c_1> ... <c_V>
    depot <depot id>
    station <id> <capacity> <current> <target>     (N lines)
    matrix seconds                                  (then N+1 rows)
    matrix meters                                   (then N+1 rows)
    end

Row and column 0 of both matrices belong to the depot, row ``i`` to the
``i``-th station line. Lines starting with ``#`` are comments.
"""

from dataclasses import dataclass, field

import numpy as np

from .distances import DistanceMatrix
from .instgen import Instance, InstanceStation, VehicleParams

FORMAT_VERSION = 1
HEADER_COMMENT = "# travel times and distances exclude loading/unloading time"


class InstanceFormatError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SerializationError(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    code: str
    station_id: int | None
    message: str


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def is_valid(self):
        return not self.violations

    @property
    def codes(self):
        return [v.code for v in self.violations]

    def add(self, code, message, station_id=None):
        self.violations.append(Violation(code, station_id, message))


def validate_instance(instance):
    """Check every structural rule and report all violations found."""
    report = ValidationReport()
    vehicles = instance.vehicles
    if vehicles.count < 1:
        report.add("NO_VEHICLES", f"vehicle count {vehicles.count} < 1")
    if len(vehicles.capacities) != vehicles.count:
        report.add("VEHICLE_COUNT_MISMATCH",
                   f"{len(vehicles.capacities)} capacities for {vehicles.count} vehicles")
    if any(c <= 0 for c in vehicles.capacities):
        report.add("NONPOSITIVE_VEHICLE_CAPACITY", f"vehicle capacities {list(vehicles.capacities)}")
    if vehicles.time_budget <= 0:
        report.add("NONPOSITIVE_TIME_BUDGET", f"time budget {vehicles.time_budget}")

    seen = set()
    for s in instance.stations:
        sid = s.station_id
        if sid in seen:
            report.add("DUPLICATE_STATION", f"station {sid} listed twice", sid)
        seen.add(sid)
        if sid == instance.depot_id:
            report.add("DEPOT_AMONG_STATIONS", f"depot {sid} is also listed as a station", sid)
        if s.capacity < 0:
            report.add("NEGATIVE_CAPACITY", f"capacity {s.capacity}", sid)
        if s.current < 0:
            report.add("CURRENT_NEGATIVE", f"current {s.current}", sid)
        elif s.current > s.capacity:
            report.add("CURRENT_EXCEEDS_CAPACITY", f"current {s.current} > capacity {s.capacity}", sid)
        if s.target < 0:
            report.add("TARGET_NEGATIVE", f"target {s.target}", sid)
        elif s.target > s.capacity:
            report.add("TARGET_EXCEEDS_CAPACITY", f"target {s.target} > capacity {s.capacity}", sid)

    matrix = instance.matrix
    n = len(instance.stations) + 1
    expected_ids = (instance.depot_id,) + tuple(s.station_id for s in instance.stations)
    if matrix.ids != expected_ids:
        report.add("MATRIX_IDS", "matrix ids are not the depot followed by the stations in order")
    for label, grid in (("meters", matrix.meters), ("seconds", matrix.seconds)):
        if grid.shape != (n, n):
            report.add("MATRIX_SHAPE", f"{label} matrix is {grid.shape}, expected {(n, n)}")
            continue
        for i in np.flatnonzero(np.diagonal(grid)).tolist():
            report.add("NONZERO_DIAGONAL", f"{label}[{i}][{i}] = {int(grid[i, i])}",
                       expected_ids[i])
        rows, cols = np.nonzero(grid < 0)
        for i, j in zip(rows.tolist(), cols.tolist()):
            report.add("NEGATIVE_DISTANCE", f"{label}[{i}][{j}] = {int(grid[i, j])}", expected_ids[i])
    return report


def write_instance(instance):
    report = validate_instance(instance)
    if not report.is_valid:
        first = report.violations[0]
        raise SerializationError(
            f"instance {instance.name!r} is invalid: {first.code} {first.message}"
            + (f" (+{len(report.violations) - 1} more)" if len(report.violations) > 1 else "")
        )
    if not instance.name or any(ch.isspace() for ch in instance.name):
        raise SerializationError(f"instance name must be non-empty without spaces: {instance.name!r}")

    v = instance.vehicles
    lines = [
        f"bbss {FORMAT_VERSION}",
        HEADER_COMMENT,
        f"name {instance.name}",
        f"stations {len(instance.stations)}",
        f"vehicles {v.count}",
        f"timebudget {v.time_budget}",
        "vehiclecap " + " ".join(str(c) for c in v.capacities),
        f"depot {instance.depot_id}",
    ]
    lines += [f"station {s.station_id} {s.capacity} {s.current} {s.target}" for s in instance.stations]
    for label, grid in (("seconds", instance.matrix.seconds), ("meters", instance.matrix.meters)):
        lines.append(f"matrix {label}")
        lines += [" ".join(str(x) for x in row) for row in grid.tolist()]
    lines.append("end")
    return "\n".join(lines) + "\n"


class _Lines:
    def __init__(self, text):
        self._items = [
            (lineno, raw.strip())
            for lineno, raw in enumerate(text.splitlines(), start=1)
            if raw.strip() and not raw.lstrip().startswith("#")
        ]
        self._pos = 0
        self.last_line = len(text.splitlines())

    def next(self, what):
        if self._pos >= len(self._items):
            raise InstanceFormatError(f"unexpected end of file, expected {what}", self.last_line)
        item = self._items[self._pos]
        self._pos += 1
        return item

    def remaining(self):
        return self._items[self._pos:]


def _ints(tokens, lineno):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise InstanceFormatError(f"non-integer field in {' '.join(tokens)!r}", lineno) from None


KEYWORDS = ("bbss", "name", "stations", "vehicles", "timebudget", "vehiclecap", "depot",
            "station", "matrix", "end")


def _keyword(lines, expected):
    lineno, line = lines.next(expected)
    tokens = line.split()
    if tokens[0] != expected:
        if tokens[0] in KEYWORDS:
            raise InstanceFormatError(f"section order: expected '{expected}', found '{tokens[0]}'", lineno)
        raise InstanceFormatError(f"unknown keyword '{tokens[0]}'", lineno)
    return lineno, tokens[1:]


def _single(lines, keyword):
    lineno, args = _keyword(lines, keyword)
    if len(args) != 1:
        raise InstanceFormatError(f"'{keyword}' takes one value", lineno)
    return lineno, args[0]


def parse_instance(text):
    lines = _Lines(text)
    lineno, version = _single(lines, "bbss")
    if _ints([version], lineno)[0] != FORMAT_VERSION:
        raise InstanceFormatError(f"unsupported format version {version}", lineno)
    _, name = _single(lines, "name")
    lineno, value = _single(lines, "stations")
    n = _ints([value], lineno)[0]
    lineno, value = _single(lines, "vehicles")
    count = _ints([value], lineno)[0]
    lineno, value = _single(lines, "timebudget")
    budget = _ints([value], lineno)[0]
    lineno, caps = _keyword(lines, "vehiclecap")
    capacities = tuple(_ints(caps, lineno))
    if len(capacities) != count:
        raise InstanceFormatError(f"{len(capacities)} vehicle capacities for {count} vehicles", lineno)
    lineno, value = _single(lines, "depot")
    depot = _ints([value], lineno)[0]

    stations = []
    for _ in range(n):
        lineno, fields = _keyword(lines, "station")
        if len(fields) != 4:
            raise InstanceFormatError("station line needs id, capacity, current, target", lineno)
        stations.append(InstanceStation(*_ints(fields, lineno)))

    grids = {}
    for label in ("seconds", "meters"):
        lineno, args = _keyword(lines, "matrix")
        if args != [label]:
            raise InstanceFormatError(f"section order: expected 'matrix {label}', found 'matrix {' '.join(args)}'", lineno)
        rows = []
        for _ in range(n + 1):
            lineno, row = lines.next(f"{label} matrix row")
            tokens = row.split()
            if tokens[0] in KEYWORDS:
                raise InstanceFormatError(f"{label} matrix has {len(rows)} rows, expected {n + 1}", lineno)
            if len(tokens) != n + 1:
                raise InstanceFormatError(f"dimension: {label} row has {len(tokens)} entries, expected {n + 1}", lineno)
            rows.append(_ints(tokens, lineno))
        grids[label] = rows

    lineno, args = _keyword(lines, "end")
    if args:
        raise InstanceFormatError("'end' takes no values", lineno)
    extra = lines.remaining()
    if extra:
        raise InstanceFormatError("content after 'end'", extra[0][0])

    ids = [depot] + [s.station_id for s in stations]
    matrix = DistanceMatrix(ids, np.array(grids["meters"], dtype=np.int64).reshape(n + 1, n + 1),
                            np.array(grids["seconds"], dtype=np.int64).reshape(n + 1, n + 1))
    return Instance(name, tuple(stations), depot, VehicleParams(count, capacities, budget), matrix)
