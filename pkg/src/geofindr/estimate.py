"""Position estimation from similar landmarks and the VM's delays to them.

Delays are normalised to weights in (0, 1]; a single distance scale ``s``
turns each weight into a circle radius ``s * w``. The estimate is the point
``p`` (and scale) minimising the squared gaps between ``p`` and the circles:

    J(p, s) = sum_i (d(p, lm_i) - s * w_i) ** 2

``smre_km = sqrt(J / n)`` at the optimum, zero meaning the circles meet.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .geodesy import (
    EARTH_RADIUS_KM,
    GeoPoint,
    great_circle_km,
    great_circle_km_many,
    interpolate,
    spherical_centroid,
)

log = logging.getLogger(__name__)

MAX_EVALUATIONS = 10_000
STATIONARY_KM2 = 1e-4
KM_PER_DEGREE = math.pi * EARTH_RADIUS_KM / 180.0


@dataclass(frozen=True)
class PositionEstimate:
    position: GeoPoint
    smre_km: float
    scale_km_per_unit: float
    contributing: tuple[tuple[str, float], ...] = ()
    converged: bool = True
    low_confidence: bool = False
    evaluations: int = 0


def normalize_delays(delays: Mapping[str, float] | Iterable[tuple[str, float]]) -> list[tuple[str, float]]:
    """Divide every delay by the largest one. Output is ordered by landmark id."""
    items = list(delays.items()) if isinstance(delays, Mapping) else list(delays)
    if not items:
        raise ValueError("no delays to normalise")
    if any(not rtt > 0 for _, rtt in items):
        raise ValueError("delays must be positive")
    top = max(rtt for _, rtt in items)
    return sorted(((lm_id, rtt / top) for lm_id, rtt in items), key=lambda t: t[0])


def objective(position: GeoPoint, scale: float, points: Sequence[GeoPoint], weights: Sequence[float]) -> float:
    """J(p, s), computed point by point."""
    return sum((great_circle_km(position, q) - scale * w) ** 2 for q, w in zip(points, weights))


def smre(position: GeoPoint, scale: float, points: Sequence[GeoPoint], weights: Sequence[float]) -> float:
    return math.sqrt(objective(position, scale, points, weights) / len(points))


@dataclass
class _Problem:
    lats: np.ndarray
    lons: np.ndarray
    weights: np.ndarray
    evaluations: int = 0
    best: tuple = field(default=(math.inf, None))

    def __call__(self, x) -> float:
        self.evaluations += 1
        lat, lon, u = x
        if not -90.0 <= lat <= 90.0:
            p = GeoPoint.folded(lat, lon)
            lat, lon = p.lat, p.lon
        d = great_circle_km_many(lat, lon, self.lats, self.lons)
        r = d - math.exp(min(u, 50.0)) * self.weights
        j = float(r @ r)
        if j < self.best[0]:
            self.best = (j, np.array(x, dtype=float))
        return j

    def start_scale(self, p: GeoPoint) -> float:
        d = great_circle_km_many(p.lat, p.lon, self.lats, self.lons)
        s0 = float(np.mean(d / self.weights))
        return math.log(max(s0, 1e-3))


def _simplex(x0: np.ndarray, step_deg: float, step_u: float) -> np.ndarray:
    simplex = np.tile(x0, (4, 1))
    simplex[1, 0] += step_deg
    simplex[2, 1] += step_deg
    simplex[3, 2] += step_u
    return simplex


def _fallback(points, weights, ids) -> PositionEstimate:
    contributing = tuple(zip(ids, weights))
    distinct = {(p.lat, p.lon) for p in points}
    if len(points) == 1 or len(distinct) == 1:
        return PositionEstimate(points[0], smre(points[0], 0.0, points[:1], [0.0]), 0.0,
                                contributing, True, True, 0)
    a, b = points
    wa, wb = weights
    gap = great_circle_km(a, b)
    # circles of radius s*wa and s*wb touching on the arc between a and b
    position = interpolate(a, b, wa / (wa + wb))
    scale = gap / (wa + wb)
    return PositionEstimate(position, smre(position, scale, points, weights), scale,
                            contributing, True, True, 0)


def fit(lms: Sequence[tuple[GeoPoint, float]], initial_guess: GeoPoint,
        ids: Sequence[str] | None = None, max_evaluations: int = MAX_EVALUATIONS) -> PositionEstimate:
    """Least-squares circle fit with a free distance scale.

    Nelder-Mead over ``(lat, lon, log s)`` from ``initial_guess`` and from the
    landmarks' centroid (plus each landmark on small instances); the best
    local optimum is restarted once with a fresh simplex. Fewer than three
    distinct landmarks use closed-form fallbacks flagged ``low_confidence``.
    """
    if not lms:
        raise ValueError("need at least one landmark")
    points = [p for p, _ in lms]
    weights = [float(w) for _, w in lms]
    if any(not w > 0 for w in weights):
        raise ValueError("weights must be positive")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(points))]

    distinct = {(p.lat, p.lon) for p in points}
    if len(points) < 3 or len(distinct) == 1:
        return _fallback(points, weights, ids)

    prob = _Problem(np.array([p.lat for p in points]), np.array([p.lon for p in points]),
                    np.array(weights))
    centroid = spherical_centroid(points)
    spread_km = max(great_circle_km(centroid, p) for p in points)
    step = max(spread_km / KM_PER_DEGREE / 4.0, 0.01)

    starts = [initial_guess, centroid, spherical_centroid(points, [1.0 / w for w in weights])]
    if len(points) <= 10:
        starts.extend(points)

    budget = max(200, max_evaluations // (len(starts) + 1))
    options = {"xatol": 1e-8, "fatol": 1e-9, "maxfev": budget}
    best = None
    for start in starts:
        x0 = np.array([start.lat, start.lon, prob.start_scale(start)])
        res = minimize(prob, x0, method="Nelder-Mead",
                       options={**options, "initial_simplex": _simplex(x0, step, 0.2)})
        if best is None or res.fun < best.fun:
            best = res
        if prob.evaluations >= max_evaluations - budget:
            break

    res = minimize(prob, best.x, method="Nelder-Mead",
                   options={**options, "initial_simplex": _simplex(best.x, step / 10.0, 0.05)})
    if res.fun <= best.fun:
        best = res
    x = prob.best[1] if prob.best[1] is not None else best.x
    simplex_values = best.final_simplex[1]
    converged = bool(simplex_values.max() - simplex_values.min() <= STATIONARY_KM2)
    if not converged:
        log.warning("circle fit stopped after %d evaluations without converging", prob.evaluations)

    position = GeoPoint.folded(float(x[0]), float(x[1]))
    scale = math.exp(float(x[2]))
    return PositionEstimate(position, smre(position, scale, points, weights), scale,
                            tuple(zip(ids, weights)), converged, False, prob.evaluations)
