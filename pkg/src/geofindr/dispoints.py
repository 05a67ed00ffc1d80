"""Greedy selection of m mutually distant points out of n, in Θ(n·m)."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Hashable, Sequence, TypeVar

from .catalog import Catalog, Landmark
from .geodesy import GeoPoint, great_circle_km

T = TypeVar("T")


@dataclass(frozen=True)
class DispersionSelection:
    selected: tuple[Landmark, ...]
    dispersion_score: float

    @property
    def ids(self) -> list[str]:
        return [lm.id for lm in self.selected]


def dispersion_score(points: Sequence[T], distance: Callable[[T, T], float]) -> float:
    """Sum of pairwise distances."""
    return sum(distance(a, b) for a, b in combinations(points, 2))


def select_dispersed(points: Sequence[T], m: int, distance: Callable[[T, T], float],
                     key: Callable[[T], Hashable] | None = None) -> list[T]:
    """Pick ``m`` dispersed items from ``points``.

    The first ``m`` points seed the selection. Every later point challenges
    the selected point closest to it: that point is set aside and whichever
    of the two has the larger distance sum to the rest of the selection is
    kept (the incumbent wins ties). Ties for "closest" go to the smallest
    ``key`` (defaults to position in ``points``).
    """
    n = len(points)
    if m < 1:
        raise ValueError("m must be at least 1")
    if m > n:
        raise ValueError(f"cannot select {m} points out of {n}")

    rank = (lambda i: i) if key is None else (lambda i: key(points[i]))
    selected = list(range(m))
    if m == n:
        return [points[i] for i in selected]

    for p in range(m, n):
        point = points[p]
        dists = [distance(point, points[s]) for s in selected]
        nearest_pos = min(range(m), key=lambda j: (dists[j], rank(selected[j])))
        nearest = selected.pop(nearest_pos)
        del dists[nearest_pos]

        p_sum = sum(dists)
        nearest_sum = sum(distance(points[nearest], points[s]) for s in selected)
        selected.append(p if p_sum > nearest_sum else nearest)

    return [points[i] for i in selected]


def dispoints(candidates: Catalog | Sequence[Landmark], m: int,
              distance: Callable[[GeoPoint, GeoPoint], float] | None = None) -> DispersionSelection:
    """Dispersed subset of landmarks, compared by ``distance`` on their positions."""
    landmarks = list(candidates)
    distance = distance or great_circle_km

    def lm_distance(a: Landmark, b: Landmark) -> float:
        return distance(a.position, b.position)

    chosen = select_dispersed(landmarks, m, lm_distance, key=lambda lm: lm.id)
    return DispersionSelection(tuple(chosen), dispersion_score(chosen, lm_distance))

