"""Landmark catalogs and landmark-to-landmark RTT meshes.

Catalogs are stored as JSON lines (``{"id", "lat", "lon", "ip"}``), meshes
as CSV with a ``src_id,dst_id,rtt_ms`` header. Both can also be pulled from
the RIPE Atlas REST API through :class:`AtlasClient`.
"""

from __future__ import annotations

import csv
import ipaddress
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import requests

from .geodesy import GeoPoint, great_circle_km

log = logging.getLogger(__name__)

ATLAS_URL_ENV = "GEOFINDR_ATLAS_URL"
DEFAULT_ATLAS_URL = "https://atlas.ripe.net/api/v2"
MESH_HEADER = ("src_id", "dst_id", "rtt_ms")


class CatalogError(Exception):
    """Raised when a landmark or mesh source is unusable."""


@dataclass(frozen=True)
class Landmark:
    id: str
    position: GeoPoint
    address: str | None = None

    def to_record(self) -> dict:
        rec = {"id": self.id, "lat": self.position.lat, "lon": self.position.lon}
        if self.address:
            rec["ip"] = self.address
        return rec


@dataclass(frozen=True)
class Catalog:
    """Immutable set of landmarks, always ordered by id."""

    landmarks: tuple[Landmark, ...]
    source: str = "synthetic"
    rejected: int = 0

    def __post_init__(self):
        ordered = tuple(sorted(self.landmarks, key=lambda lm: lm.id))
        ids = [lm.id for lm in ordered]
        if len(set(ids)) != len(ids):
            raise CatalogError("duplicate landmark ids in catalog")
        object.__setattr__(self, "landmarks", ordered)
        object.__setattr__(self, "_by_id", {lm.id: lm for lm in ordered})

    def __len__(self) -> int:
        return len(self.landmarks)

    def __iter__(self) -> Iterator[Landmark]:
        return iter(self.landmarks)

    def __contains__(self, landmark_id: str) -> bool:
        return landmark_id in self._by_id

    def __getitem__(self, landmark_id: str) -> Landmark:
        return self._by_id[landmark_id]

    def ids(self) -> list[str]:
        return [lm.id for lm in self.landmarks]

    def replace(self, landmarks: Iterable[Landmark]) -> "Catalog":
        return Catalog(tuple(landmarks), source=self.source, rejected=self.rejected)


@dataclass(frozen=True)
class MeshMatrix:
    """Directed landmark-to-landmark RTTs in milliseconds. Holes are allowed."""

    entries: Mapping[tuple[str, str], float]
    rejected: int = 0
    _rows: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        for (src, dst), rtt in self.entries.items():
            if not rtt > 0 or not math.isfinite(rtt):
                raise CatalogError(f"non-positive RTT {rtt} for {src}->{dst}")

    def __len__(self) -> int:
        return len(self.entries)

    def rtt(self, src: str, dst: str) -> float | None:
        """RTT for ``src -> dst``, falling back to ``dst -> src``."""
        value = self.entries.get((src, dst))
        if value is None:
            value = self.entries.get((dst, src))
        return value

    def row(self, src: str) -> dict[str, float]:
        """All landmarks reachable from ``src`` with their RTT (reverse entries fill holes)."""
        if not self._rows:
            self._build_rows()
        return self._rows.get(src, {})

    def _build_rows(self):
        rows: dict[str, dict[str, float]] = {}
        for (src, dst), rtt in self.entries.items():
            if src == dst:
                continue
            rows.setdefault(dst, {}).setdefault(src, rtt)
        for (src, dst), rtt in self.entries.items():
            if src == dst:
                continue
            # forward direction wins over the reverse fallback
            rows.setdefault(src, {})[dst] = rtt
        self._rows.update(rows)

    def restrict(self, catalog: Catalog) -> "MeshMatrix":
        kept = {k: v for k, v in self.entries.items() if k[0] in catalog and k[1] in catalog}
        return MeshMatrix(kept, rejected=self.rejected)


def _parse_landmark(rec: Mapping) -> Landmark:
    lm_id = rec.get("id")
    if lm_id is None or str(lm_id) == "":
        raise ValueError("missing id")
    position = GeoPoint(float(rec["lat"]), float(rec["lon"]))
    address = rec.get("ip") or None
    if address is not None:
        ipaddress.IPv4Address(address)
    return Landmark(str(lm_id), position, address)


def landmarks_from_records(records: Iterable[Mapping], source: str) -> Catalog:
    """Validate raw records into a Catalog; bad or duplicate records are counted."""
    seen: dict[str, Landmark] = {}
    rejected = 0
    for rec in records:
        try:
            lm = _parse_landmark(rec)
        except (KeyError, TypeError, ValueError) as exc:
            rejected += 1
            log.warning("rejected landmark record %r: %s", rec, exc)
            continue
        if lm.id in seen:
            rejected += 1
            log.warning("duplicate landmark id %s ignored", lm.id)
            continue
        seen[lm.id] = lm
    if not seen:
        raise CatalogError(f"no valid landmarks in {source} ({rejected} rejected)")
    if rejected:
        log.warning("%d landmark record(s) rejected from %s", rejected, source)
    return Catalog(tuple(seen.values()), source=source, rejected=rejected)


def _is_remote(source) -> bool:
    text = str(source)
    return text == "atlas" or text.startswith(("http://", "https://"))


def load_catalog(source, client: "AtlasClient | None" = None) -> Catalog:
    """Load landmarks from a JSON-lines file, or from RIPE Atlas.

    ``source`` is a path, ``"atlas"`` (base URL from the environment) or an
    explicit API base URL.
    """
    if _is_remote(source):
        client = client or AtlasClient(None if str(source) == "atlas" else str(source))
        return landmarks_from_records(client.anchor_records(), source="ripe-atlas")

    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CatalogError(f"cannot read catalog {path}: {exc}") from exc
    records = []
    rejected = 0
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            rejected += 1
            log.warning("%s:%d: not valid JSON", path, lineno)
    catalog = landmarks_from_records(records, source="file")
    return Catalog(catalog.landmarks, source="file", rejected=catalog.rejected + rejected)


def mesh_from_rows(rows: Iterable[tuple], catalog: Catalog) -> MeshMatrix:
    """Keep rows whose endpoints are both catalogued and whose RTT is positive.

    Duplicate pairs keep the smallest RTT.
    """
    if len(catalog) == 0:
        raise CatalogError("empty catalog")
    entries: dict[tuple[str, str], float] = {}
    rejected = 0
    for row in rows:
        try:
            src, dst, rtt = str(row[0]), str(row[1]), float(row[2])
        except (IndexError, TypeError, ValueError):
            rejected += 1
            continue
        if src not in catalog or dst not in catalog or src == dst:
            rejected += 1
            continue
        if not (rtt > 0 and math.isfinite(rtt)):
            rejected += 1
            continue
        key = (src, dst)
        entries[key] = min(rtt, entries.get(key, math.inf))
    if not entries:
        raise CatalogError(f"mesh has no usable entries ({rejected} rejected)")
    if rejected:
        log.warning("%d mesh row(s) rejected", rejected)
    log.info("mesh loaded with %d entries", len(entries))
    return MeshMatrix(entries, rejected=rejected)


def load_mesh(source, catalog: Catalog, client: "AtlasClient | None" = None,
              limit: int | None = None) -> MeshMatrix:
    """Load a mesh from a ``src_id,dst_id,rtt_ms`` CSV file or from RIPE Atlas."""
    if len(catalog) == 0:
        raise CatalogError("empty catalog")
    if _is_remote(source):
        client = client or AtlasClient(None if str(source) == "atlas" else str(source))
        return mesh_from_rows(client.mesh_rows(catalog, limit=limit), catalog)

    path = Path(source)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != MESH_HEADER:
                raise CatalogError(f"{path}: expected header {','.join(MESH_HEADER)}")
            rows = list(reader)
    except OSError as exc:
        raise CatalogError(f"cannot read mesh {path}: {exc}") from exc
    return mesh_from_rows(rows, catalog)


def write_catalog(catalog: Catalog, path) -> None:
    with open(path, "w") as fh:
        for lm in catalog:
            fh.write(json.dumps(lm.to_record()) + "\n")


def write_mesh(mesh: MeshMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MESH_HEADER)
        for (src, dst) in sorted(mesh.entries):
            writer.writerow([src, dst, repr(mesh.entries[(src, dst)])])


def near(catalog: Catalog, center: GeoPoint, radius_km: float) -> Catalog:
    """Landmarks strictly closer than ``radius_km`` to ``center``."""
    if not radius_km > 0:
        raise ValueError("radius_km must be positive")
    return catalog.replace(lm for lm in catalog if great_circle_km(center, lm.position) < radius_km)


def exclude_zone(catalog: Catalog, center: GeoPoint, radius_km: float) -> Catalog:
    """Catalog with every landmark closer than ``radius_km`` to ``center`` removed."""
    if radius_km < 0:
        raise ValueError("radius_km must be non-negative")
    if radius_km == 0:
        return catalog
    return catalog.replace(lm for lm in catalog if great_circle_km(center, lm.position) >= radius_km)


class AtlasClient:
    """Minimal RIPE Atlas v2 REST client for anchors and anchor-mesh pings."""

    def __init__(self, base_url: str | None = None, session: requests.Session | None = None,
                 timeout: float = 30.0):
        self.base_url = (base_url or os.environ.get(ATLAS_URL_ENV) or DEFAULT_ATLAS_URL).rstrip("/")
        self.session = session or requests.Session()
        self.timeout = timeout

    def _get(self, url: str, params: dict | None = None):
        try:
            resp = self.session.get(url, params=params, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise CatalogError(f"RIPE Atlas request failed: {url}: {exc}") from exc

    def _paged(self, path: str, params: dict) -> Iterator[dict]:
        url = f"{self.base_url}/{path.lstrip('/')}"
        while url:
            page = self._get(url, params)
            params = None  # "next" links carry their own query string
            if isinstance(page, list):
                yield from page
                return
            yield from page.get("results", [])
            url = page.get("next")

    def anchors(self) -> list[dict]:
        return list(self._paged("anchors/", {"format": "json", "page_size": 500}))

    def anchor_records(self) -> list[dict]:
        """Anchors as catalog records (id, lat, lon, ip); disabled anchors skipped."""
        records = []
        for anchor in self.anchors():
            if anchor.get("is_disabled"):
                continue
            coords = (anchor.get("geometry") or {}).get("coordinates") or [None, None]
            records.append({
                "id": str(anchor.get("id")),
                "lat": coords[1],
                "lon": coords[0],
                "ip": anchor.get("ip_v4"),
                "probe": anchor.get("probe"),
            })
        self._probe_to_anchor = {
            str(r["probe"]): r["id"] for r in records if r.get("probe") is not None
        }
        return records

    def mesh_measurements(self, anchor_id: str) -> list[int]:
        """IPv4 ping mesh measurement ids targeting one anchor."""
        ids = []
        for item in self._paged("anchor-measurements/",
                                {"format": "json", "target": anchor_id, "page_size": 100}):
            if not item.get("is_mesh", True):
                continue
            if item.get("type", "ping") != "ping":
                continue
            msm = item.get("measurement")
            if isinstance(msm, str):
                msm = msm.rstrip("/").rsplit("/", 1)[-1]
            try:
                ids.append(int(msm))
            except (TypeError, ValueError):
                continue
        return ids

    def latest_results(self, measurement_id: int) -> list[dict]:
        data = self._get(f"{self.base_url}/measurements/{measurement_id}/latest/",
                         {"format": "json"})
        return data if isinstance(data, list) else data.get("results", [])

    def mesh_rows(self, catalog: Catalog, limit: int | None = None) -> Iterator[tuple[str, str, float]]:
        """Yield ``(src_anchor, dst_anchor, rtt_ms)`` from the latest mesh results.

        RTT per pair is the minimum over the latest result set.
        """
        if not getattr(self, "_probe_to_anchor", None):
            self.anchor_records()
        probe_to_anchor = self._probe_to_anchor
        targets = catalog.ids() if limit is None else catalog.ids()[:limit]
        for target in targets:
            for msm in self.mesh_measurements(target):
                for result in self.latest_results(msm):
                    if result.get("af", 4) != 4:
                        continue
                    src = probe_to_anchor.get(str(result.get("prb_id")))
                    if src is None:
                        continue
                    rtt = _min_rtt(result)
                    if rtt is not None:
                        yield (src, target, rtt)


def _min_rtt(result: Mapping) -> float | None:
    value = result.get("min")
    if isinstance(value, (int, float)) and value > 0:
        return float(value)
    rtts = [r["rtt"] for r in result.get("result", []) if isinstance(r, dict)
            and isinstance(r.get("rtt"), (int, float)) and r["rtt"] > 0]
    return min(rtts) if rtts else None
