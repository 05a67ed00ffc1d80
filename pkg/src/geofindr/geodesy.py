"""Spherical-earth geometry: positions, great-circle distance, forward azimuth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0
HALF_CIRCUMFERENCE_KM = math.pi * EARTH_RADIUS_KM


def normalize_lon(lon: float) -> float:
    """Wrap a longitude into [-180, 180)."""
    if -180.0 <= lon < 180.0:
        return lon
    lon = math.fmod(lon + 180.0, 360.0)
    if lon < 0:
        lon += 360.0
    return lon - 180.0


@dataclass(frozen=True, order=True)
class GeoPoint:
    """A latitude/longitude pair in degrees.

    Longitude is wrapped into [-180, 180) on construction so that equality
    and hashing behave; latitude outside [-90, 90] is rejected.
    """

    lat: float
    lon: float

    def __post_init__(self):
        lat = float(self.lat)
        lon = float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError(f"non-finite coordinates ({self.lat}, {self.lon})")
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat} outside [-90, 90]")
        if abs(lat) == 90.0:
            # every meridian meets at a pole
            lon = 0.0
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", normalize_lon(lon))

    @classmethod
    def folded(cls, lat: float, lon: float) -> "GeoPoint":
        """Build a point from unconstrained coordinates, reflecting over the poles."""
        if -90.0 <= lat <= 90.0:
            return cls(lat, lon)
        phi = math.radians(lat)
        lmb = math.radians(lon)
        x = math.cos(phi) * math.cos(lmb)
        y = math.cos(phi) * math.sin(lmb)
        z = math.sin(phi)
        return cls(math.degrees(math.atan2(z, math.hypot(x, y))), math.degrees(math.atan2(y, x)))

    @classmethod
    def parse(cls, text: str) -> "GeoPoint":
        """Parse ``"lat,lon"``."""
        parts = text.split(",")
        if len(parts) != 2:
            raise ValueError(f"expected 'lat,lon', got {text!r}")
        return cls(float(parts[0]), float(parts[1]))

    def as_list(self) -> list[float]:
        return [self.lat, self.lon]

    def __str__(self):
        return f"({self.lat:.4f}, {self.lon:.4f})"


def great_circle_km(a: GeoPoint, b: GeoPoint) -> float:
    """Haversine distance in kilometres between two points."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    # Clamp: rounding can push h a hair past 1 for antipodes.
    h = min(1.0, max(0.0, h))
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def great_circle_km_many(lat, lon, lats, lons):
    """Vectorised haversine from one (lat, lon) to arrays of positions, in km."""
    phi1 = np.radians(lat)
    phi2 = np.radians(lats)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lons) - lon)
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def initial_bearing(a: GeoPoint, b: GeoPoint) -> float:
    """Forward azimuth from ``a`` towards ``b`` in degrees, clockwise from north."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dlmb = math.radians(b.lon - a.lon)
    y = math.sin(dlmb) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlmb)
    return math.degrees(math.atan2(y, x)) % 360.0


def destination_point(origin: GeoPoint, bearing: float, distance: float) -> GeoPoint:
    """Point reached by travelling ``distance`` km from ``origin`` along ``bearing``."""
    if distance < 0:
        raise ValueError("distance must be non-negative")
    delta = distance / EARTH_RADIUS_KM
    theta = math.radians(bearing)
    phi1 = math.radians(origin.lat)
    lmb1 = math.radians(origin.lon)

    sin_phi2 = math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta)
    sin_phi2 = min(1.0, max(-1.0, sin_phi2))
    phi2 = math.asin(sin_phi2)
    y = math.sin(theta) * math.sin(delta) * math.cos(phi1)
    x = math.cos(delta) - math.sin(phi1) * sin_phi2
    lmb2 = lmb1 + math.atan2(y, x)
    return GeoPoint(math.degrees(phi2), math.degrees(lmb2))


def interpolate(a: GeoPoint, b: GeoPoint, fraction: float) -> GeoPoint:
    """Point ``fraction`` of the way from ``a`` to ``b`` along the great circle."""
    d = great_circle_km(a, b)
    if d == 0.0:
        return a
    return destination_point(a, initial_bearing(a, b), fraction * d)


def spherical_centroid(points, weights=None) -> GeoPoint:
    """Normalised mean of unit vectors; falls back to the first point if they cancel."""
    points = list(points)
    if not points:
        raise ValueError("no points")
    w = np.ones(len(points)) if weights is None else np.asarray(weights, dtype=float)
    lat = np.radians([p.lat for p in points])
    lon = np.radians([p.lon for p in points])
    x = np.sum(w * np.cos(lat) * np.cos(lon))
    y = np.sum(w * np.cos(lat) * np.sin(lon))
    z = np.sum(w * np.sin(lat))
    norm = math.sqrt(x * x + y * y + z * z)
    if norm < 1e-12:
        return points[0]
    return GeoPoint(math.degrees(math.asin(z / norm)), math.degrees(math.atan2(y, x)))
