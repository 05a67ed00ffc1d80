"""Synthetic worlds for the simulator and the reference declared-position list."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .catalog import Catalog, Landmark, MeshMatrix, exclude_zone, load_catalog, load_mesh, write_catalog, write_mesh
from .geodesy import EARTH_RADIUS_KM, GeoPoint, destination_point
from .probe import SimWorld

EVRY = GeoPoint(48.6239, 2.4407)
PARIS = GeoPoint(48.8566, 2.3522)


@dataclass(frozen=True)
class Cluster:
    center: GeoPoint
    radius_km: float
    count: int


@dataclass(frozen=True)
class DensitySpec:
    """How to scatter landmarks: a uniform square box plus dense city clusters.

    Node offsets are drawn uniformly from ``offset_mean_ms ± offset_spread_ms``
    (clipped at zero); a zero spread gives homogeneous offsets. The VM gets
    its own draw unless ``vm_offset_ms`` is set.
    """

    vm_position: GeoPoint = EVRY
    box_center: GeoPoint = GeoPoint(48.0, 5.0)
    box_size_km: float = 2000.0
    uniform_count: int = 200
    clusters: tuple[Cluster, ...] = (
        Cluster(PARIS, 30.0, 40),
        Cluster(GeoPoint(51.5074, -0.1278), 30.0, 20),
        Cluster(GeoPoint(52.3676, 4.9041), 30.0, 20),
        Cluster(GeoPoint(50.1109, 8.6821), 30.0, 20),
    )
    offset_mean_ms: float = 0.1
    offset_spread_ms: float = 0.1
    vm_offset_ms: float | None = None
    speed_km_per_ms: float = 100.0
    jitter_fraction: float = 0.1
    seed: int = 0
    exclusion_radius_km: float = 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "DensitySpec":
        data = dict(data)
        for key in ("vm_position", "box_center"):
            if key in data:
                data[key] = GeoPoint(*data[key])
        if "clusters" in data:
            data["clusters"] = tuple(
                Cluster(GeoPoint(*c["center"]), float(c["radius_km"]), int(c["count"]))
                for c in data["clusters"]
            )
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown density spec keys: {sorted(unknown)}")
        return cls(**data)

    @property
    def size(self) -> int:
        return self.uniform_count + sum(c.count for c in self.clusters)


def _box_point(rng: random.Random, center: GeoPoint, size_km: float) -> GeoPoint:
    dy = rng.uniform(-size_km / 2, size_km / 2)
    dx = rng.uniform(-size_km / 2, size_km / 2)
    lat = center.lat + math.degrees(dy / EARTH_RADIUS_KM)
    lat = max(-89.9, min(89.9, lat))
    lon = center.lon + math.degrees(dx / (EARTH_RADIUS_KM * math.cos(math.radians(lat))))
    return GeoPoint(lat, lon)


def _disk_point(rng: random.Random, center: GeoPoint, radius_km: float) -> GeoPoint:
    # sqrt for uniform density over the disk
    return destination_point(center, rng.uniform(0, 360), radius_km * math.sqrt(rng.random()))


def generate_world(spec: DensitySpec) -> SimWorld:
    """Build a SimWorld; landmark ids are ``lm0000``, ``lm0001`` ... in generation order."""
    rng = random.Random(spec.seed)
    positions = [_box_point(rng, spec.box_center, spec.box_size_km) for _ in range(spec.uniform_count)]
    for cluster in spec.clusters:
        positions.extend(_disk_point(rng, cluster.center, cluster.radius_km) for _ in range(cluster.count))
    width = max(4, len(str(len(positions))))
    landmarks = [Landmark(f"lm{i:0{width}d}", p, f"198.18.{i // 250}.{i % 250 + 1}")
                 for i, p in enumerate(positions)]
    catalog = Catalog(tuple(landmarks), source="synthetic")

    def draw() -> float:
        return max(0.0, spec.offset_mean_ms + rng.uniform(-spec.offset_spread_ms, spec.offset_spread_ms))

    offsets = {lm.id: draw() for lm in catalog}
    vm_offset = draw() if spec.vm_offset_ms is None else spec.vm_offset_ms
    if spec.exclusion_radius_km > 0:
        catalog = exclude_zone(catalog, spec.vm_position, spec.exclusion_radius_km)
        offsets = {k: v for k, v in offsets.items() if k in catalog}
    return SimWorld(
        true_vm_position=spec.vm_position,
        landmarks=catalog,
        speed_km_per_ms=spec.speed_km_per_ms,
        per_node_offset_ms=offsets,
        vm_offset_ms=vm_offset,
        jitter_fraction=spec.jitter_fraction,
        seed=spec.seed,
    )


@dataclass
class Scenario:
    """A SimWorld with its landmark catalog and mesh, as stored on disk."""

    world: SimWorld
    mesh: MeshMatrix
    paths: dict = field(default_factory=dict)

    @property
    def catalog(self) -> Catalog:
        return self.world.landmarks


def save_scenario(world: SimWorld, directory, mesh: MeshMatrix | None = None,
                  name: str = "world") -> dict:
    """Write ``<name>.json``, ``<name>.landmarks.jsonl`` and ``<name>.mesh.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mesh = mesh or world.build_mesh()
    paths = {
        "scenario": directory / f"{name}.json",
        "catalog": directory / f"{name}.landmarks.jsonl",
        "mesh": directory / f"{name}.mesh.csv",
    }
    write_catalog(world.landmarks, paths["catalog"])
    write_mesh(mesh, paths["mesh"])
    data = world.to_scenario()
    data["catalog"] = paths["catalog"].name
    data["mesh"] = paths["mesh"].name
    paths["scenario"].write_text(json.dumps(data, indent=2) + "\n")
    return paths


def load_scenario(path, catalog_path=None, mesh_path=None) -> Scenario:
    """Read a scenario file; catalog/mesh paths default to those it names (relative to it)."""
    path = Path(path)
    data = json.loads(path.read_text())
    base = path.parent
    catalog_path = catalog_path or (base / data["catalog"] if "catalog" in data else None)
    mesh_path = mesh_path or (base / data["mesh"] if "mesh" in data else None)
    if catalog_path is None:
        raise ValueError(f"{path}: no landmark catalog given")
    catalog = load_catalog(catalog_path)
    world = SimWorld.from_scenario(data, catalog)
    mesh = load_mesh(mesh_path, catalog) if mesh_path else world.build_mesh()
    return Scenario(world, mesh, {"scenario": path, "catalog": catalog_path, "mesh": mesh_path})


def declared_positions() -> list[tuple[str, GeoPoint]]:
    """The 24 reference declared positions; the first is the true VM site (Evry)."""
    text = resources.files("geofindr").joinpath("data/capitals.json").read_text()
    return [(p["name"], GeoPoint(p["lat"], p["lon"])) for p in json.loads(text)["positions"]]
