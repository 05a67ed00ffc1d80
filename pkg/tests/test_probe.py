import socket
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geofindr import probe
from geofindr.catalog import Catalog, Landmark
from geofindr.geodesy import GeoPoint, destination_point
from geofindr.probe import (
    DelaySample,
    IcmpBackend,
    MeasurementError,
    ProbePermissionError,
    ReplayBackend,
    SimulatedBackend,
    SimWorld,
    echo_request,
    icmp_checksum,
    measure_in_cloud,
    measure_many,
    parse_echo_reply,
)

VM = GeoPoint(48.6239, 2.4407)


def ideal_world(distances, **kw):
    lms = [Landmark(f"lm{i:02d}", destination_point(VM, 37.0 * i, d)) for i, d in enumerate(distances)]
    return SimWorld(VM, Catalog(tuple(lms)), jitter_fraction=kw.pop("jitter_fraction", 0.0), **kw)


class TestSimulator:
    def test_500_km_is_5_ms(self):
        world = ideal_world([500.0])
        assert world.vm_rtt("lm00") == pytest.approx(5.0, abs=1e-9)

    def test_co_located_hits_floor(self):
        assert ideal_world([0.0]).vm_rtt("lm00") == 0.01

    def test_offsets_add(self):
        world = ideal_world([500.0], per_node_offset_ms={"lm00": 0.3}, vm_offset_ms=0.2)
        assert world.vm_rtt("lm00") == pytest.approx(5.5)

    def test_jitter_bounded_and_seeded(self):
        world = ideal_world([1000.0], jitter_fraction=0.1, seed=7)
        values = [world.vm_rtt("lm00", q) for q in range(200)]
        assert all(9.0 <= v <= 11.0 for v in values)
        assert len(set(values)) > 100
        assert values == [world.vm_rtt("lm00", q) for q in range(200)]
        other = ideal_world([1000.0], jitter_fraction=0.1, seed=8)
        assert values != [other.vm_rtt("lm00", q) for q in range(200)]

    def test_same_query_same_sample(self):
        world = ideal_world([100.0, 200.0], jitter_fraction=0.1, seed=1)
        a = SimulatedBackend(world)
        b = SimulatedBackend(world)
        lm = world.landmarks["lm01"]
        assert a.measure(lm) == b.measure(lm)
        # a second query is a new draw, also reproducible
        assert a.measure(lm) == b.measure(lm)

    @settings(max_examples=50)
    @given(st.lists(st.floats(1.0, 15000.0), min_size=2, max_size=10, unique=True))
    def test_monotone_in_distance(self, distances):
        world = ideal_world(sorted(distances))
        rtts = [world.vm_rtt(lm_id) for lm_id in world.landmarks.ids()]
        assert all(x < y for x, y in zip(rtts, rtts[1:]))

    def test_mesh_is_full_and_directed(self):
        world = ideal_world([100.0, 200.0, 300.0])
        mesh = world.build_mesh()
        assert len(mesh) == 6

    def test_scenario_round_trip(self):
        world = ideal_world([100.0, 200.0], per_node_offset_ms={"lm00": 0.5}, seed=4)
        again = SimWorld.from_scenario(world.to_scenario(), world.landmarks)
        assert again == world

    def test_validation(self):
        with pytest.raises(ValueError):
            ideal_world([1.0], jitter_fraction=1.0)
        with pytest.raises(ValueError):
            ideal_world([1.0], per_node_offset_ms={"lm00": -1.0})
        with pytest.raises(ValueError):
            DelaySample("x", 0.0)

    def test_unreachable_reported(self):
        world = ideal_world([100.0, 200.0, 300.0])
        backend = SimulatedBackend(world, unreachable={"lm01"})
        samples, failures = measure_many(backend, list(world.landmarks))
        assert [s.landmark_id for s in samples] == ["lm00", "lm02"]
        assert list(failures) == ["lm01"]


class TestInCloud:
    def test_simulated_defaults(self):
        backend = SimulatedBackend(ideal_world([1.0]))
        assert measure_in_cloud(backend, "10.0.0.1") == probe.InCloudReading(0.05, 0.5)

    def test_no_proxy(self):
        assert measure_in_cloud(SimulatedBackend(ideal_world([1.0]))).proxy_rtt_ms is None

    def test_unreachable_proxy_is_absent(self):
        reading = measure_in_cloud(ReplayBackend({"rtt_ms": {}}), "10.0.0.1")
        assert reading.proxy_rtt_ms is None


class TestReplay:
    def test_sequence_and_timeouts(self, tmp_path):
        path = tmp_path / "r.json"
        path.write_text('{"rtt_ms": {"a": [1.5, null], "b": 0.0}, "loopback_rtt_ms": 0.02, "proxy_rtt_ms": 0.7}')
        backend = ReplayBackend.from_file(path)
        a, b = Landmark("a", VM), Landmark("b", VM)
        assert backend.measure(a).rtt_ms == 1.5
        with pytest.raises(MeasurementError):
            backend.measure(a)
        assert backend.measure(a).rtt_ms == 1.5
        assert backend.measure(b).rtt_ms == 0.01
        with pytest.raises(MeasurementError):
            backend.measure(Landmark("c", VM))
        assert measure_in_cloud(backend, "x") == probe.InCloudReading(0.02, 0.7)


class TestParallel:
    def test_order_independent(self, small_world):
        lms = list(small_world.landmarks)[:40]
        seq, _ = measure_many(SimulatedBackend(small_world), lms[::-1], workers=1)
        par, _ = measure_many(SimulatedBackend(small_world), lms, workers=8)
        assert seq == par
        assert [s.landmark_id for s in par] == sorted(lm.id for lm in lms)


class TestIcmp:
    def test_checksum_known_vector(self):
        header = bytes([8, 0, 0, 0, 0x12, 0x34, 0x00, 0x01])
        assert icmp_checksum(header) == 0xE5CA

    def test_request_checksums_to_zero(self):
        packet = echo_request(0x1234, 7, bytes(range(64)))
        assert len(packet) == 72
        assert icmp_checksum(packet) == 0
        assert parse_echo_reply(packet, raw=False) == (8, 0x1234, 7)

    def test_odd_length(self):
        assert icmp_checksum(echo_request(1, 1, b"abc")) == 0

    def test_raw_skips_ip_header(self):
        ip = bytes([0x45]) + bytes(19)
        assert parse_echo_reply(ip + echo_request(5, 6, b""), raw=True) == (8, 5, 6)
        assert parse_echo_reply(b"\x45\x00", raw=True) is None

    def test_permission_error_has_hint(self, monkeypatch):
        def deny(*args, **kwargs):
            raise PermissionError("denied")

        monkeypatch.setattr(probe.socket, "socket", deny)
        with pytest.raises(ProbePermissionError, match="CAP_NET_RAW"):
            IcmpBackend().ping("192.0.2.1")

    def test_silent_target_bounded_by_timeouts(self, monkeypatch):
        quiet, _other = socket.socketpair()

        class Mute:
            def sendto(self, data, addr):
                return len(data)

            def fileno(self):
                return quiet.fileno()

            def close(self):
                pass

        monkeypatch.setattr(probe, "open_icmp_socket", lambda: (Mute(), False))
        backend = IcmpBackend(timeout_s=0.05)
        started = time.perf_counter()
        with pytest.raises(MeasurementError, match="timed out"):
            backend.ping("192.0.2.1")
        assert time.perf_counter() - started < 3 * 0.05 + 0.5
        quiet.close()
        _other.close()

    def test_landmark_without_address(self):
        with pytest.raises(MeasurementError):
            IcmpBackend().measure(Landmark("a", VM))


@pytest.mark.live
def test_live_loopback():
    try:
        rtt = IcmpBackend().loopback_rtt()
    except ProbePermissionError as exc:
        pytest.skip(str(exc))
    assert 0 < rtt < 5
