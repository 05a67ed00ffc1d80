"""Delay-based self-geolocation audit for cloud instances."""

from .audit import AuditConfig, AuditReport, evaluate_against_truth, run_audit
from .catalog import Catalog, Landmark, MeshMatrix, exclude_zone, load_catalog, load_mesh, near
from .dispoints import dispoints
from .estimate import fit, normalize_delays
from .geodesy import GeoPoint, destination_point, great_circle_km
from .probe import SimulatedBackend, SimWorld
from .world import DensitySpec, generate_world

__version__ = "0.1.0"

__all__ = [
    "AuditConfig", "AuditReport", "Catalog", "DensitySpec", "GeoPoint", "Landmark", "MeshMatrix",
    "SimWorld", "SimulatedBackend", "destination_point", "dispoints", "evaluate_against_truth",
    "exclude_zone", "fit", "generate_world", "great_circle_km", "load_catalog", "load_mesh", "near",
    "normalize_delays", "run_audit",
]
