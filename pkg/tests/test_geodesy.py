import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geofindr.geodesy import (
    EARTH_RADIUS_KM,
    GeoPoint,
    destination_point,
    great_circle_km,
    initial_bearing,
    interpolate,
)

HALF = math.pi * EARTH_RADIUS_KM

lats = st.floats(-90, 90, allow_nan=False)
lons = st.floats(-180, 180, allow_nan=False, exclude_max=True)
points = st.builds(GeoPoint, lats, lons)


def law_of_cosines_km(a, b):
    # independent of the haversine route; fine away from tiny distances
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(math.radians(b.lon - a.lon))
    return EARTH_RADIUS_KM * math.acos(max(-1.0, min(1.0, c)))


class TestGeoPoint:
    def test_longitude_wraps(self):
        assert GeoPoint(10, 190) == GeoPoint(10, -170)
        assert GeoPoint(10, 180).lon == -180.0
        assert GeoPoint(0, -540).lon == -180.0

    def test_in_range_longitude_untouched(self):
        assert GeoPoint(48.6239, 2.4407).lon == 2.4407

    def test_latitude_rejected(self):
        with pytest.raises(ValueError):
            GeoPoint(95, 0)
        with pytest.raises(ValueError):
            GeoPoint(float("nan"), 0)

    def test_hash_matches_equality(self):
        assert len({GeoPoint(1, 359), GeoPoint(1, -1)}) == 1

    def test_folded_over_pole(self):
        p = GeoPoint.folded(100.0, 10.0)
        assert p.lat == pytest.approx(80.0)
        assert p.lon == pytest.approx(-170.0)

    def test_parse(self):
        assert GeoPoint.parse("48.62,2.43") == GeoPoint(48.62, 2.43)
        with pytest.raises(ValueError):
            GeoPoint.parse("48.62")


class TestGreatCircle:
    def test_identity(self):
        assert great_circle_km(GeoPoint(48.85, 2.35), GeoPoint(48.85, 2.35)) == 0.0

    def test_antipodal_equator(self):
        assert great_circle_km(GeoPoint(0, 0), GeoPoint(0, 180)) == pytest.approx(HALF, rel=1e-12)
        assert HALF == pytest.approx(20015.09, abs=0.01)

    def test_paris_london(self):
        # 343.556 km from a 30-digit spherical law of cosines evaluation
        d = great_circle_km(GeoPoint(48.8566, 2.3522), GeoPoint(51.5074, -0.1278))
        assert d == pytest.approx(343.556, abs=1.0)
        assert d == pytest.approx(343.5560603, abs=1e-5)

    @given(points, points)
    def test_symmetric(self, a, b):
        assert great_circle_km(a, b) == great_circle_km(b, a)

    @given(points, points)
    def test_bounded(self, a, b):
        assert 0.0 <= great_circle_km(a, b) <= HALF + 1e-9

    @given(points, points, points)
    def test_triangle_inequality(self, a, b, c):
        assert great_circle_km(a, c) <= great_circle_km(a, b) + great_circle_km(b, c) + 1e-9

    @given(points, points)
    def test_agrees_with_law_of_cosines(self, a, b):
        d = great_circle_km(a, b)
        if d > 1.0:
            assert d == pytest.approx(law_of_cosines_km(a, b), abs=1e-3)

    @given(points)
    def test_zero_only_for_equal(self, a):
        assert great_circle_km(a, GeoPoint(a.lat, a.lon)) == 0.0


class TestDestination:
    def test_zero_distance(self):
        assert destination_point(GeoPoint(0, 0), 0, 0) == GeoPoint(0, 0)

    def test_quarter_circle_east(self):
        p = destination_point(GeoPoint(0, 0), 90, HALF / 2)
        assert p.lat == pytest.approx(0.0, abs=1e-9)
        assert p.lon == pytest.approx(90.0, abs=1e-9)

    def test_negative_distance(self):
        with pytest.raises(ValueError):
            destination_point(GeoPoint(0, 0), 0, -1)

    @settings(max_examples=300)
    @given(st.floats(-89, 89), lons, st.floats(0, 360, exclude_max=True), st.floats(0.001, 15000))
    def test_round_trip(self, lat, lon, bearing, distance):
        origin = GeoPoint(lat, lon)
        back = great_circle_km(origin, destination_point(origin, bearing, distance))
        assert back == pytest.approx(distance, rel=1e-6)

    def test_bearing_north(self):
        assert initial_bearing(GeoPoint(0, 0), GeoPoint(10, 0)) == pytest.approx(0.0)
        assert initial_bearing(GeoPoint(0, 0), GeoPoint(0, 10)) == pytest.approx(90.0)

    def test_interpolate_midpoint(self):
        a, b = GeoPoint(0, 0), GeoPoint(0, 10)
        assert interpolate(a, b, 0.5).lon == pytest.approx(5.0)
