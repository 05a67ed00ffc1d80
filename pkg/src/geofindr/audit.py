"""The audit loop: zone selection, dispersed audit landmarks, sectorization, estimation.

The loop body always runs once; it repeats while the newly estimated sector
moved by at least ``tolerance_km`` from the position the iteration started
at, up to ``max_iterations``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import statistics
import time
from dataclasses import dataclass, field

from .catalog import Catalog, MeshMatrix, near
from .dispoints import dispoints
from .estimate import PositionEstimate, fit, normalize_delays
from .geodesy import GeoPoint, great_circle_km
from .probe import DelaySample, InCloudReading, ProbePermissionError, measure_in_cloud, measure_many
from .sectorize import SectorizationError, select_lms, tally

log = logging.getLogger(__name__)

SATISFACTORY_KM = 50.0
MIN_AUDIT_SAMPLES = 3
ZONE_GROWTH = 2.0

EXIT_CONVERGED = 0
EXIT_LIE_DETECTED = 2
EXIT_NOT_CONVERGED = 3
EXIT_FATAL = 4


class AuditError(Exception):
    """An audit iteration could not complete."""


@dataclass(frozen=True)
class AuditConfig:
    declared_position: GeoPoint
    tolerance_km: float = 100.0
    zone_size_km: float = 1000.0
    nb_lm: int = 16
    interval_percent: float = 35.0
    max_iterations: int = 20
    backend: str = "sim"
    proxy_address: str | None = None
    interval_step_percent: float = 10.0
    interval_retries: int = 3
    workers: int = 1

    def __post_init__(self):
        if not isinstance(self.declared_position, GeoPoint):
            raise ValueError("declared_position must be a GeoPoint")
        for name in ("tolerance_km", "zone_size_km", "interval_percent"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.nb_lm < 1:
            raise ValueError("nb_lm must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.interval_retries < 0 or self.interval_step_percent < 0:
            raise ValueError("interval widening parameters must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class IterationTrace:
    index: int
    initial_position: GeoPoint
    zone_steps_km: tuple[float, ...]
    effective_zone_km: float
    lm_a_ids: tuple[str, ...]
    lm_a_samples: tuple[DelaySample, ...]
    lm_s_ids: tuple[str, ...]
    lm_s_samples: tuple[DelaySample, ...]
    interval_percent_used: float
    estimate: PositionEstimate
    step_km: float
    in_cloud: InCloudReading
    failures: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AccuracyRecord:
    distance_real_estimated_km: float
    distance_real_declared_km: float
    distance_estimated_declared_km: float
    satisfactory: bool
    lie_detected: bool


@dataclass(frozen=True)
class AuditReport:
    config: AuditConfig
    estimated_position: GeoPoint
    converged: bool
    status: str
    nb_iterations: int
    audit_time_s: float
    distance_estimated_declared_km: float
    lie_detected: bool
    smre_km: float | None
    in_cloud: InCloudReading | None
    traces: tuple[IterationTrace, ...]
    diagnostics: tuple[str, ...] = ()
    distance_real_estimated_km: float | None = None
    distance_real_declared_km: float | None = None
    satisfactory: bool | None = None

    @property
    def exit_code(self) -> int:
        if self.status == "error":
            return EXIT_FATAL
        if not self.converged:
            return EXIT_NOT_CONVERGED
        return EXIT_LIE_DETECTED if self.lie_detected else EXIT_CONVERGED

    def to_dict(self, include_time: bool = True) -> dict:
        data = dataclasses.asdict(self)
        if not include_time:
            data.pop("audit_time_s")
        return data

    def to_json(self, include_time: bool = True, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(include_time), indent=indent)

    def with_truth(self, true_position: GeoPoint) -> "AuditReport":
        acc = evaluate_against_truth(self, true_position)
        return dataclasses.replace(
            self,
            distance_real_estimated_km=acc.distance_real_estimated_km,
            distance_real_declared_km=acc.distance_real_declared_km,
            satisfactory=acc.satisfactory,
        )

    def summary(self) -> str:
        lines = [
            f"status:               {self.status.replace('_', ' ')} (exit {self.exit_code})",
            f"declared position:    {self.config.declared_position}",
            f"estimated position:   {self.estimated_position}",
            f"estimated-declared:   {self.distance_estimated_declared_km:.1f} km"
            f" (tolerance {self.config.tolerance_km:g} km)",
            f"lie detected:         {'yes' if self.lie_detected else 'no'}",
            f"iterations:           {self.nb_iterations}",
            f"audit time:           {self.audit_time_s:.2f} s",
        ]
        if self.smre_km is not None:
            lines.append(f"smre:                 {self.smre_km:.2f} km")
        if self.in_cloud is not None:
            proxy = "n/a" if self.in_cloud.proxy_rtt_ms is None else f"{self.in_cloud.proxy_rtt_ms:.3f} ms"
            lines.append(f"in-cloud:             loopback {self.in_cloud.loopback_rtt_ms:.3f} ms, proxy {proxy}")
        if self.distance_real_estimated_km is not None:
            lines.append(f"real-estimated:       {self.distance_real_estimated_km:.1f} km")
            lines.append(f"real-declared:        {self.distance_real_declared_km:.1f} km")
        lines.extend(f"diagnostic:           {d}" for d in self.diagnostics)
        return "\n".join(lines)


def evaluate_against_truth(report: AuditReport, true_position: GeoPoint) -> AccuracyRecord:
    """Accuracy and lie-extent metrics, for controlled runs where the truth is known."""
    real_est = great_circle_km(true_position, report.estimated_position)
    real_decl = great_circle_km(true_position, report.config.declared_position)
    est_decl = great_circle_km(report.estimated_position, report.config.declared_position)
    return AccuracyRecord(
        distance_real_estimated_km=real_est,
        distance_real_declared_km=real_decl,
        distance_estimated_declared_km=est_decl,
        satisfactory=real_est < SATISFACTORY_KM,
        lie_detected=est_decl > report.config.tolerance_km,
    )


def _select_zone(catalog: Catalog, center: GeoPoint, zone_km: float, needed: int):
    steps = [zone_km]
    found = near(catalog, center, zone_km)
    while len(found) < needed:
        zone_km *= ZONE_GROWTH
        steps.append(zone_km)
        found = near(catalog, center, zone_km)
    return found, steps


def _sectorize(config: AuditConfig, mesh: MeshMatrix, catalog: Catalog, delays: dict):
    interval = config.interval_percent
    for attempt in range(config.interval_retries + 1):
        try:
            return select_lms(tally(mesh, delays, interval), catalog), interval
        except SectorizationError:
            if attempt == config.interval_retries:
                raise
            interval += config.interval_step_percent
            log.info("no similar landmarks, widening interval to %g%%", interval)


def _iteration(index: int, config: AuditConfig, catalog: Catalog, mesh: MeshMatrix,
               backend, initial: GeoPoint) -> IterationTrace:
    near_lms, zones = _select_zone(catalog, initial, config.zone_size_km, config.nb_lm)
    lm_a = dispoints(near_lms, config.nb_lm).selected

    samples, failures = measure_many(backend, lm_a, config.workers)
    needed = min(MIN_AUDIT_SAMPLES, config.nb_lm)
    if len(samples) < needed:
        raise AuditError(f"iteration {index}: only {len(samples)} of {len(lm_a)} audit landmarks answered")

    delays = {s.landmark_id: s.rtt_ms for s in samples}
    try:
        lm_s, interval = _sectorize(config, mesh, catalog, delays)
    except SectorizationError as exc:
        raise AuditError(f"iteration {index}: {exc} after widening the interval "
                         f"{config.interval_retries} times") from exc

    s_samples, s_failures = measure_many(backend, lm_s, config.workers)
    if not s_samples:
        raise AuditError(f"iteration {index}: none of the {len(lm_s)} similar landmarks answered")
    failures.update({k: v for k, v in s_failures.items() if k not in failures})

    weights = normalize_delays((s.landmark_id, s.rtt_ms) for s in s_samples)
    estimate = fit([(catalog[lm_id].position, w) for lm_id, w in weights], initial,
                   ids=[lm_id for lm_id, _ in weights])
    in_cloud = measure_in_cloud(backend, config.proxy_address)

    return IterationTrace(
        index=index,
        initial_position=initial,
        zone_steps_km=tuple(zones),
        effective_zone_km=zones[-1],
        lm_a_ids=tuple(lm.id for lm in lm_a),
        lm_a_samples=tuple(samples),
        lm_s_ids=tuple(lm.id for lm in lm_s),
        lm_s_samples=tuple(s_samples),
        interval_percent_used=interval,
        estimate=estimate,
        step_km=great_circle_km(initial, estimate.position),
        in_cloud=in_cloud,
        failures=dict(sorted(failures.items())),
    )


def _median_in_cloud(traces) -> InCloudReading | None:
    if not traces:
        return None
    loop = statistics.median(t.in_cloud.loopback_rtt_ms for t in traces)
    proxies = [t.in_cloud.proxy_rtt_ms for t in traces if t.in_cloud.proxy_rtt_ms is not None]
    return InCloudReading(loop, statistics.median(proxies) if proxies else None)


def run_audit(config: AuditConfig, catalog: Catalog, mesh: MeshMatrix, backend,
              true_position: GeoPoint | None = None, clock=time.perf_counter) -> AuditReport:
    """Run the audit loop and return a full report; failures end up in ``diagnostics``."""
    started = clock()
    traces: list[IterationTrace] = []
    diagnostics: list[str] = []
    status = "not_converged"
    sector = config.declared_position

    if len(catalog) < config.nb_lm:
        diagnostics.append(f"landmark starvation: catalog has {len(catalog)} landmarks, "
                           f"nb_lm is {config.nb_lm}")
        status = "error"
    elif len(mesh) == 0:
        diagnostics.append("empty mesh")
        status = "error"
    else:
        for index in range(config.max_iterations):
            initial = sector
            try:
                trace = _iteration(index, config, catalog, mesh, backend, initial)
            except ProbePermissionError as exc:
                diagnostics.append(f"measurement privilege failure: {exc}")
                status = "error"
                break
            except AuditError as exc:
                diagnostics.append(str(exc))
                status = "error"
                break
            traces.append(trace)
            sector = trace.estimate.position
            if trace.step_km < config.tolerance_km:
                status = "converged"
                break
        else:
            diagnostics.append(f"no convergence after {config.max_iterations} iterations")

    elapsed = clock() - started
    final = traces[-1].estimate if traces else None
    est_decl = great_circle_km(sector, config.declared_position)
    report = AuditReport(
        config=config,
        estimated_position=sector,
        converged=status == "converged",
        status=status,
        nb_iterations=len(traces),
        audit_time_s=elapsed,
        distance_estimated_declared_km=est_decl,
        lie_detected=est_decl > config.tolerance_km,
        smre_km=final.smre_km if final else None,
        in_cloud=_median_in_cloud(traces),
        traces=tuple(traces),
        diagnostics=tuple(diagnostics),
    )
    if true_position is not None:
        report = report.with_truth(true_position)
    return report
