"""Find landmarks whose delay profile towards the audit set resembles the VM's."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .catalog import Catalog, Landmark, MeshMatrix


class SectorizationError(Exception):
    """No landmark matched any audit landmark's delay interval."""


@dataclass
class SimilarityTally:
    occurrences: Counter = field(default_factory=Counter)
    contributing_audits: int = 0
    audits: int = 0

    def add(self, similar: Iterable[str]) -> None:
        similar = set(similar)
        self.audits += 1
        if similar:
            self.contributing_audits += 1
            self.occurrences.update(similar)


def delay_interval(measured_delay_ms: float, interval_percent: float) -> tuple[float, float]:
    """Relative tolerance band around a delay; the lower edge never goes below zero."""
    frac = interval_percent / 100.0
    return max(0.0, measured_delay_ms * (1.0 - frac)), measured_delay_ms * (1.0 + frac)


def similar_for_one(mesh: MeshMatrix, audit_lm: Landmark | str, measured_delay_ms: float,
                    interval_percent: float) -> set[str]:
    """Landmarks whose mesh RTT to ``audit_lm`` falls inside the VM's delay band (inclusive)."""
    if not measured_delay_ms > 0:
        raise ValueError("measured_delay_ms must be positive")
    if not interval_percent > 0:
        raise ValueError("interval_percent must be positive")
    audit_id = audit_lm if isinstance(audit_lm, str) else audit_lm.id
    lo, hi = delay_interval(measured_delay_ms, interval_percent)
    return {other for other, rtt in mesh.row(audit_id).items()
            if other != audit_id and lo <= rtt <= hi}


def tally(mesh: MeshMatrix, delays: Mapping[str, float], interval_percent: float) -> SimilarityTally:
    """Accumulate similar-landmark occurrences over every measured audit landmark."""
    result = SimilarityTally()
    for audit_id in sorted(delays):
        result.add(similar_for_one(mesh, audit_id, delays[audit_id], interval_percent))
    return result


def select_lms(tallies: SimilarityTally | Mapping[str, int] | Iterable[Mapping[str, int]],
               catalog: Catalog) -> list[Landmark]:
    """All landmarks sharing the highest occurrence count, ordered by id.

    Accepts a :class:`SimilarityTally`, a single ``{id: count}`` mapping, or
    several mappings that are summed.
    """
    if isinstance(tallies, SimilarityTally):
        counts = Counter(tallies.occurrences)
    elif isinstance(tallies, Mapping):
        counts = Counter(tallies)
    else:
        counts = Counter()
        for t in tallies:
            counts.update(t.occurrences if isinstance(t, SimilarityTally) else t)
    counts = +counts  # drop zero counts
    if not counts:
        raise SectorizationError("no similar landmarks found for any audit landmark")
    top = max(counts.values())
    return [catalog[lm_id] for lm_id in sorted(counts) if counts[lm_id] == top and lm_id in catalog]
