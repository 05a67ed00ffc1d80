"""RTT measurement backends: live ICMP, recorded replays, and a seeded simulator.

Every backend exposes ``measure(landmark) -> DelaySample`` plus
``loopback_rtt()`` / ``proxy_rtt(address)`` for the in-cloud readings.
"""

from __future__ import annotations

import json
import logging
import os
import random
import select
import socket
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .catalog import Catalog, Landmark, MeshMatrix
from .geodesy import GeoPoint, great_circle_km

log = logging.getLogger(__name__)

RTT_FLOOR_MS = 0.01
PINGS_PER_MEASUREMENT = 3
PAYLOAD_BYTES = 64
PING_TIMEOUT_S = 2.0
SIM_LOOPBACK_MS = 0.05
SIM_PROXY_MS = 0.5
VM_ID = "__vm__"


class MeasurementError(Exception):
    """A single landmark could not be measured. Not fatal to an audit."""


class ProbePermissionError(Exception):
    """The host refuses to open ICMP sockets."""


@dataclass(frozen=True)
class DelaySample:
    landmark_id: str
    rtt_ms: float
    attempts: int = PINGS_PER_MEASUREMENT
    timestamp: float = 0.0

    def __post_init__(self):
        if not self.rtt_ms > 0:
            raise ValueError(f"rtt_ms must be positive, got {self.rtt_ms}")
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")


@dataclass(frozen=True)
class InCloudReading:
    loopback_rtt_ms: float
    proxy_rtt_ms: float | None = None


# --------------------------------------------------------------------------
# simulator


@dataclass(frozen=True)
class SimWorld:
    """Deterministic stand-in for the Internet.

    One ping between nodes ``a`` and ``b`` takes
    ``offset(a) + offset(b) + distance / speed`` plus a uniform jitter of at
    most ``jitter_fraction`` of that base, floored at :data:`RTT_FLOOR_MS`.
    A measurement is the minimum of three pings. All randomness is derived
    from ``seed`` and the query coordinates, never from global state.
    """

    true_vm_position: GeoPoint
    landmarks: Catalog
    speed_km_per_ms: float = 100.0
    per_node_offset_ms: Mapping[str, float] = field(default_factory=dict)
    vm_offset_ms: float = 0.0
    jitter_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.speed_km_per_ms > 0:
            raise ValueError("speed_km_per_ms must be positive")
        if not 0.0 <= self.jitter_fraction < 1.0:
            raise ValueError("jitter_fraction must lie in [0, 1)")
        if self.vm_offset_ms < 0 or any(v < 0 for v in self.per_node_offset_ms.values()):
            raise ValueError("offsets must be non-negative")

    def offset(self, node_id: str) -> float:
        if node_id == VM_ID:
            return self.vm_offset_ms
        return self.per_node_offset_ms.get(node_id, 0.0)

    def _rtt(self, a_id: str, a_pos: GeoPoint, b_id: str, b_pos: GeoPoint, query_index: int) -> float:
        base = self.offset(a_id) + self.offset(b_id) + great_circle_km(a_pos, b_pos) / self.speed_km_per_ms
        if self.jitter_fraction == 0.0:
            return max(base, RTT_FLOOR_MS)
        rng = random.Random(f"{self.seed}|{a_id}|{b_id}|{query_index}")
        j = self.jitter_fraction
        best = min(base + rng.uniform(-j, j) * base for _ in range(PINGS_PER_MEASUREMENT))
        return max(best, RTT_FLOOR_MS)

    def vm_rtt(self, landmark_id: str, query_index: int = 0, vm_position: GeoPoint | None = None) -> float:
        lm = self.landmarks[landmark_id]
        vm = vm_position or self.true_vm_position
        return self._rtt(VM_ID, vm, lm.id, lm.position, query_index)

    def pair_rtt(self, src_id: str, dst_id: str, query_index: int = 0) -> float:
        a = self.landmarks[src_id]
        b = self.landmarks[dst_id]
        return self._rtt(a.id, a.position, b.id, b.position, query_index)

    def build_mesh(self, catalog: Catalog | None = None) -> MeshMatrix:
        """Full directed landmark mesh (one measurement per ordered pair)."""
        ids = (catalog or self.landmarks).ids()
        entries = {(a, b): self.pair_rtt(a, b) for a in ids for b in ids if a != b}
        return MeshMatrix(entries)

    def to_scenario(self) -> dict:
        return {
            "true_vm_position": self.true_vm_position.as_list(),
            "speed_km_per_ms": self.speed_km_per_ms,
            "jitter_fraction": self.jitter_fraction,
            "seed": self.seed,
            "vm_offset_ms": self.vm_offset_ms,
            "per_node_offset_ms": dict(sorted(self.per_node_offset_ms.items())),
        }

    @classmethod
    def from_scenario(cls, data: Mapping, landmarks: Catalog) -> "SimWorld":
        lat, lon = data["true_vm_position"]
        return cls(
            true_vm_position=GeoPoint(lat, lon),
            landmarks=landmarks,
            speed_km_per_ms=float(data.get("speed_km_per_ms", 100.0)),
            per_node_offset_ms={str(k): float(v) for k, v in data.get("per_node_offset_ms", {}).items()},
            vm_offset_ms=float(data.get("vm_offset_ms", 0.0)),
            jitter_fraction=float(data.get("jitter_fraction", 0.1)),
            seed=int(data.get("seed", 0)),
        )


class SimulatedBackend:
    """Measures from a VM placed in a :class:`SimWorld`.

    Each landmark keeps its own query counter, so the n-th measurement of a
    landmark is the same no matter how measurements are interleaved. A sample's
    ``timestamp`` is that per-landmark query index; ``clock_ms`` accumulates
    the simulated time spent on the wire.
    """

    name = "sim"

    def __init__(self, world: SimWorld, vm_position: GeoPoint | None = None,
                 loopback_ms: float = SIM_LOOPBACK_MS, proxy_ms: float = SIM_PROXY_MS,
                 unreachable: Iterable[str] = ()):
        self.world = world
        self.vm_position = vm_position or world.true_vm_position
        self.loopback_ms = loopback_ms
        self.proxy_ms = proxy_ms
        self.unreachable = frozenset(unreachable)
        self._queries: dict[str, int] = {}
        self._lock = threading.Lock()
        self.clock_ms = 0.0

    def measure(self, landmark: Landmark) -> DelaySample:
        with self._lock:
            index = self._queries.get(landmark.id, 0)
            self._queries[landmark.id] = index + 1
        if landmark.id in self.unreachable or landmark.id not in self.world.landmarks:
            raise MeasurementError(f"{landmark.id}: request timed out")
        rtt = self.world.vm_rtt(landmark.id, index, self.vm_position)
        with self._lock:
            self.clock_ms += PINGS_PER_MEASUREMENT * rtt
        return DelaySample(landmark.id, rtt, PINGS_PER_MEASUREMENT, float(index))

    def loopback_rtt(self) -> float:
        return self.loopback_ms

    def proxy_rtt(self, address: str) -> float:
        return self.proxy_ms


# --------------------------------------------------------------------------
# replay


class ReplayBackend:
    """Serves recorded RTTs from a JSON fixture.

    Fixture layout: ``{"rtt_ms": {id: value | [values...]}, "loopback_rtt_ms": x,
    "proxy_rtt_ms": y}``. Lists are consumed in order and cycle.
    """

    name = "replay"

    def __init__(self, recordings: Mapping):
        self.rtts = {str(k): (v if isinstance(v, list) else [v]) for k, v in recordings.get("rtt_ms", {}).items()}
        self.loopback = recordings.get("loopback_rtt_ms", SIM_LOOPBACK_MS)
        self.proxy = recordings.get("proxy_rtt_ms")
        self._queries: dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path) -> "ReplayBackend":
        return cls(json.loads(Path(path).read_text()))

    def measure(self, landmark: Landmark) -> DelaySample:
        values = self.rtts.get(landmark.id)
        if not values:
            raise MeasurementError(f"{landmark.id}: no recording")
        with self._lock:
            index = self._queries.get(landmark.id, 0)
            self._queries[landmark.id] = index + 1
        value = values[index % len(values)]
        if value is None:
            raise MeasurementError(f"{landmark.id}: recorded timeout")
        return DelaySample(landmark.id, max(float(value), RTT_FLOOR_MS), PINGS_PER_MEASUREMENT, float(index))

    def loopback_rtt(self) -> float:
        return float(self.loopback)

    def proxy_rtt(self, address: str) -> float:
        if self.proxy is None:
            raise MeasurementError(f"{address}: no proxy recording")
        return float(self.proxy)


# --------------------------------------------------------------------------
# live ICMP

ICMP_ECHO_REQUEST = 8
ICMP_ECHO_REPLY = 0
_socket_lock = threading.Lock()


def icmp_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    total = (total >> 16) + (total & 0xFFFF)
    total += total >> 16
    return ~total & 0xFFFF


def echo_request(ident: int, seq: int, payload: bytes) -> bytes:
    header = struct.pack("!BBHHH", ICMP_ECHO_REQUEST, 0, 0, ident, seq)
    csum = icmp_checksum(header + payload)
    return struct.pack("!BBHHH", ICMP_ECHO_REQUEST, 0, csum, ident, seq) + payload


def parse_echo_reply(packet: bytes, raw: bool) -> tuple[int, int, int] | None:
    """Return ``(type, ident, seq)`` of an ICMP packet, skipping the IP header on raw sockets."""
    if raw:
        if len(packet) < 20:
            return None
        packet = packet[(packet[0] & 0x0F) * 4:]
    if len(packet) < 8:
        return None
    icmp_type, _code, _csum, ident, seq = struct.unpack("!BBHHH", packet[:8])
    return icmp_type, ident, seq


def open_icmp_socket() -> tuple[socket.socket, bool]:
    """Unprivileged datagram ICMP if the kernel allows it, else a raw socket."""
    with _socket_lock:
        try:
            return socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_ICMP), False
        except (PermissionError, OSError):
            pass
        try:
            return socket.socket(socket.AF_INET, socket.SOCK_RAW, socket.IPPROTO_ICMP), True
        except PermissionError as exc:
            raise ProbePermissionError(
                "cannot open an ICMP socket; run as root, grant CAP_NET_RAW "
                "(setcap cap_net_raw+ep $(readlink -f $(which python3))), or widen "
                "net.ipv4.ping_group_range"
            ) from exc


class IcmpBackend:
    """ICMP echo over IPv4: three 64-byte pings per landmark, minimum RTT kept."""

    name = "icmp"

    def __init__(self, count: int = PINGS_PER_MEASUREMENT, payload_bytes: int = PAYLOAD_BYTES,
                 timeout_s: float = PING_TIMEOUT_S):
        self.count = count
        self.payload = bytes((i & 0xFF) for i in range(payload_bytes))
        self.timeout_s = timeout_s
        self._ident = os.getpid() & 0xFFFF
        self._seq = 0
        self._lock = threading.Lock()

    def _next_seq(self) -> int:
        with self._lock:
            self._seq = (self._seq + 1) & 0xFFFF
            return self._seq

    def _one_ping(self, sock: socket.socket, raw: bool, address: str) -> float | None:
        seq = self._next_seq()
        sock.sendto(echo_request(self._ident, seq, self.payload), (address, 0))
        sent = time.perf_counter()
        deadline = sent + self.timeout_s
        while True:
            remaining = deadline - time.perf_counter()
            if remaining <= 0:
                return None
            ready, _, _ = select.select([sock], [], [], remaining)
            if not ready:
                return None
            packet, _peer = sock.recvfrom(2048)
            received = time.perf_counter()
            parsed = parse_echo_reply(packet, raw)
            if parsed is None:
                continue
            icmp_type, ident, r_seq = parsed
            # datagram sockets rewrite the identifier; match on sequence only
            if icmp_type == ICMP_ECHO_REPLY and r_seq == seq and (not raw or ident == self._ident):
                return (received - sent) * 1000.0

    def ping(self, address: str) -> tuple[float, int]:
        """Minimum RTT over ``count`` echo requests, and number of attempts."""
        sock, raw = open_icmp_socket()
        try:
            replies = []
            for _ in range(self.count):
                try:
                    rtt = self._one_ping(sock, raw, address)
                except OSError as exc:
                    log.debug("ping %s failed: %s", address, exc)
                    rtt = None
                if rtt is not None:
                    replies.append(rtt)
        finally:
            sock.close()
        if not replies:
            raise MeasurementError(f"{address}: all {self.count} pings timed out")
        return max(min(replies), RTT_FLOOR_MS), self.count

    def measure(self, landmark: Landmark) -> DelaySample:
        if not landmark.address:
            raise MeasurementError(f"{landmark.id}: no IPv4 address")
        rtt, attempts = self.ping(landmark.address)
        return DelaySample(landmark.id, rtt, attempts, time.monotonic())

    def loopback_rtt(self) -> float:
        return self.ping("127.0.0.1")[0]

    def proxy_rtt(self, address: str) -> float:
        return self.ping(address)[0]


# --------------------------------------------------------------------------


def measure(backend, target: Landmark) -> DelaySample:
    return backend.measure(target)


def measure_many(backend, targets: Iterable[Landmark], workers: int = 1
                 ) -> tuple[list[DelaySample], dict[str, str]]:
    """Measure several landmarks; returns samples sorted by id and per-id failure reasons.

    :class:`ProbePermissionError` propagates.
    """
    targets = list(targets)

    def one(lm):
        try:
            return lm.id, backend.measure(lm), None
        except MeasurementError as exc:
            return lm.id, None, str(exc)

    if workers > 1 and len(targets) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, targets))
    else:
        results = [one(lm) for lm in targets]

    samples = sorted((s for _, s, _ in results if s is not None), key=lambda s: s.landmark_id)
    failures = {lm_id: err for lm_id, s, err in sorted(results, key=lambda r: r[0]) if s is None}
    return samples, failures


def measure_in_cloud(backend, proxy_address: str | None = None) -> InCloudReading:
    loopback = backend.loopback_rtt()
    proxy = None
    if proxy_address:
        try:
            proxy = backend.proxy_rtt(proxy_address)
        except MeasurementError as exc:
            log.warning("proxy %s unreachable: %s", proxy_address, exc)
    return InCloudReading(max(loopback, 0.0), proxy)

