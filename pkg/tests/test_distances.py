import itertools
import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbssforge.distances import (
    DistanceMatrix,
    LiveProvider,
    MatrixError,
    OfflineProvider,
    build_matrix,
    haversine_meters,
    select_depot,
    travel_seconds,
)

from conftest import make_obs

R = 6_371_000

coords = st.tuples(st.floats(-90, 90, allow_nan=False), st.floats(-180, 180, allow_nan=False))


class TestHaversine:
    def test_identity(self):
        p = (40.76727216, -73.99392888)
        assert haversine_meters(p, p) == 0

    def test_one_degree_of_equator(self):
        assert haversine_meters((0, 0), (0, 1)) == 111_195
        assert abs(haversine_meters((0, 0), (0, 1)) - 2 * math.pi * R / 360) <= 1

    def test_quarter_meridian(self):
        # pi * R / 2 = 10_007_543.4, rounded up
        assert haversine_meters((0, 0), (90, 0)) == 10_007_544
        assert abs(haversine_meters((0, 0), (90, 0)) - math.pi * R / 2) <= 1

    @given(coords, coords)
    def test_symmetric_nonnegative(self, a, b):
        d = haversine_meters(a, b)
        assert d == haversine_meters(b, a)
        assert d >= 0

    @given(coords, coords, coords)
    def test_triangle(self, a, b, c):
        assert haversine_meters(a, c) <= haversine_meters(a, b) + haversine_meters(b, c)

    def test_rounding_keeps_triangle(self):
        # true legs 1849661.45 + 6716128.39 >= 8565789.78; nearest rounding would break this
        a, b, c = (-67.91698452068115, 83.39886981185111), (-72.1533454319085, 132.06126343548976), \
            (-25.199769830117432, -156.5849939900008)
        assert haversine_meters(a, c) <= haversine_meters(a, b) + haversine_meters(b, c)

    @given(coords)
    def test_zero_iff_identical(self, a):
        assert haversine_meters(a, a) == 0
        # ~0.1 m apart is still a whole meter once rounded up
        assert haversine_meters(a, (a[0] + 1e-6 if a[0] < 0 else a[0] - 1e-6, a[1])) == 1


class TestTravelSeconds:
    @pytest.mark.parametrize("meters,speed,expected", [(0, 20, 0), (0, 7.5, 0), (1000, 20, 180), (500, 20, 90),
                                                       (25, 18, 5), (1, 7.2, 1)])
    def test_values(self, meters, speed, expected):
        assert travel_seconds(meters, speed) == expected

    def test_half_rounds_up(self):
        # 125 m at 36 km/h is exactly 12.5 s
        assert travel_seconds(125, 36) == 13

    @pytest.mark.parametrize("speed", [0, -5])
    def test_bad_speed(self, speed):
        with pytest.raises(ValueError):
            travel_seconds(100, speed)


def _stations(*points):
    return [make_obs(station_id=i + 1, lat=lat, lon=lon) for i, (lat, lon) in enumerate(points)]


class TestBuildMatrix:
    def test_offline_three_by_three(self):
        stations = _stations((40.75, -73.99), (40.76, -73.98), (40.74, -73.97))
        matrix = build_matrix(stations, 2, OfflineProvider(20))
        assert matrix.ids == (2, 1, 3)
        assert matrix.meters.shape == matrix.seconds.shape == (3, 3)
        assert not np.diagonal(matrix.meters).any() and not np.diagonal(matrix.seconds).any()
        assert np.array_equal(matrix.meters, matrix.meters.T)
        assert matrix.meters[0, 1] == haversine_meters((40.76, -73.98), (40.75, -73.99))
        assert matrix.seconds[0, 1] == travel_seconds(int(matrix.meters[0, 1]), 20)

    def test_degenerate(self):
        matrix = build_matrix(_stations((40.75, -73.99)), 1, OfflineProvider())
        assert matrix.ids == (1,)
        assert matrix.meters.tolist() == [[0]] and matrix.seconds.tolist() == [[0]]

    def test_depot_absent(self):
        with pytest.raises(ValueError):
            build_matrix(_stations((40.75, -73.99)), 99, OfflineProvider())

    def test_cache_is_reused(self, tmp_path):
        cache = tmp_path / "pairs.csv"
        stations = _stations((40.75, -73.99), (40.76, -73.98), (40.74, -73.97))
        cold_provider = OfflineProvider()
        cold = build_matrix(stations, 1, cold_provider, cache=cache)
        assert cold_provider.queries == 6
        lines = cache.read_text().splitlines()
        assert len(lines) == 6 and all(len(line.split(",")) == 4 for line in lines)

        warm_provider = OfflineProvider()
        warm = build_matrix(stations, 1, warm_provider, cache=cache)
        assert warm_provider.queries == 0
        assert warm == cold
        assert len(cache.read_text().splitlines()) == 6

    def test_cache_partial_hit(self, tmp_path):
        cache = tmp_path / "pairs.csv"
        build_matrix(_stations((40.75, -73.99), (40.76, -73.98)), 1, OfflineProvider(), cache=cache)
        provider = OfflineProvider()
        build_matrix(_stations((40.75, -73.99), (40.76, -73.98), (40.74, -73.97)), 1, provider, cache=cache)
        assert provider.queries == 4

    def test_parallel_matches_serial(self):
        stations = _stations(*[(40.7 + 0.01 * i, -74.0 + 0.007 * i) for i in range(6)])
        assert build_matrix(stations, 3, OfflineProvider(), jobs=4) == build_matrix(stations, 3, OfflineProvider())

    def test_subset_and_json(self):
        stations = _stations((40.75, -73.99), (40.76, -73.98), (40.74, -73.97))
        full = build_matrix(stations, 1, OfflineProvider())
        sub = full.subset([3, 2])
        assert sub.meters[0, 1] == full.meters[2, 1]
        assert DistanceMatrix.from_json(full.to_json()) == full


class RoutingServer:
    """Fake distance matrix service; meters scale with latitude difference."""

    def __init__(self, fail_after=None):
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):
                query = parse_qs(urlparse(self.path).query)
                outer.requests.append(query)
                if fail_after is not None and len(outer.requests) > fail_after:
                    self.send_response(500)
                    self.end_headers()
                    return
                (olat, olon) = map(float, query["origins"][0].split(","))
                (dlat, dlon) = map(float, query["destinations"][0].split(","))
                # directional on purpose
                meters = round(abs(dlat - olat) * 100_000) + (0.5 if dlat > olat else 0)
                body = json.dumps({"rows": [{"elements": [{
                    "status": "OK",
                    "distance": {"value": meters},
                    "duration": {"value": meters / 10},
                }]}]}).encode()
                self.send_response(200)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self.httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_port}/matrix"
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


class TestLiveProvider:
    def test_matrix_is_asymmetric_and_rounded(self):
        server = RoutingServer()
        try:
            provider = LiveProvider(server.url, api_key="secret", requests_per_second=None, retry_delay=0)
            stations = _stations((40.75, -73.99), (40.76, -73.98))
            matrix = build_matrix(stations, 1, provider)
        finally:
            server.close()
        # 1000 m plus 0.5 going north rounds up to 1001
        assert matrix.meters[0, 1] == 1001
        assert matrix.meters[1, 0] == 1000
        assert matrix.seconds[0, 1] == 100  # 100.05
        assert server.requests[0]["key"] == ["secret"]

    def test_failure_names_pair(self):
        server = RoutingServer(fail_after=0)
        try:
            provider = LiveProvider(server.url, max_retries=1, requests_per_second=None, retry_delay=0)
            with pytest.raises(MatrixError) as err:
                build_matrix(_stations((40.75, -73.99), (40.76, -73.98)), 1, provider)
        finally:
            server.close()
        assert err.value.pair in {(1, 2), (2, 1)}
        assert "1" in str(err.value) and "2" in str(err.value)
        assert len(server.requests) == 2


def brute_force_medoid(stations):
    best = None
    for s in stations:
        total = sum(haversine_meters((s.latitude, s.longitude), (o.latitude, o.longitude)) for o in stations)
        key = (total, s.station_id)
        if best is None or key < best:
            best = key
    return best[1]


class TestSelectDepot:
    def test_override(self):
        stations = [make_obs(294), make_obs(72, lat=40.7)]
        assert select_depot(stations, override_id=294) == 294

    def test_override_absent(self):
        with pytest.raises(ValueError):
            select_depot([make_obs(1)], override_id=294)

    def test_collinear_middle(self):
        assert select_depot(_stations((0, 0), (0, 1), (0, 2))) == 2
        assert select_depot(_stations((0, 2), (0, 0), (0, 1))) == 3

    def test_tie_smallest_id(self):
        assert select_depot(_stations((0, 0), (0, 1))) == 1

    def test_uses_matrix(self):
        stations = _stations((0, 0), (0, 1), (0, 2))
        matrix = DistanceMatrix([1, 2, 3], [[0, 1, 1], [50, 0, 50], [50, 50, 0]], np.zeros((3, 3)))
        assert select_depot(stations, matrix=matrix) == 1

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.floats(40.6, 40.9), st.floats(-74.1, -73.8)), min_size=6, max_size=6),
           st.randoms(use_true_random=False))
    def test_six_random_matches_brute_force_and_permutation(self, points, rnd):
        stations = _stations(*points)
        expected = brute_force_medoid(stations)
        assert select_depot(stations) == expected
        shuffled = stations[:]
        rnd.shuffle(shuffled)
        assert select_depot(shuffled) == expected
