"""Simulator engine: hand-enumerated oracles, determinism, conservation,
and the per-kind fault semantics."""

from __future__ import annotations

from pathlib import Path

import pytest

from chaoslab.errors import ConflictError, ScopeError, StaleHandle, TopologyError
from chaoslab.model import (
    ApiErrorInjection,
    BandwidthThrottle,
    CacheInvalidation,
    CpuStress,
    DbConnectionTermination,
    DiskIoSaturation,
    DnsFailure,
    InstanceKill,
    MemoryExhaustion,
    NetworkLatency,
    PacketLoss,
    ServiceDependencyFailure,
    StorageCorruption,
)
from chaoslab.simworld import build_world
from chaoslab.topology import RetryPolicy, ServiceSpec, Topology, TrafficModel

from conftest import chain_topology, single_service_topology


def events_of(trace, kind, service=None):
    return [
        e
        for e in trace.events
        if e.kind == kind and (service is None or e.service == service)
    ]


def check_conservation_prefixes(trace):
    arrivals = completions = failures = drops = 0
    for e in trace.events:
        if e.kind == "arrival":
            arrivals += 1
        elif e.detail.get("call") == "request":
            if e.kind == "complete":
                completions += 1
            elif e.kind == "fail":
                failures += 1
            elif e.kind == "drop":
                drops += 1
        in_flight = arrivals - completions - failures - drops
        assert in_flight >= 0, "conservation violated at a prefix"
    return arrivals, completions, failures, drops


class TestBuild:
    def test_initial_state(self):
        world = build_world(single_service_topology(replicas=2), 42)
        assert world.now == 0
        assert world.up_instances() == ["api-0", "api-1"]

    def test_bad_topology(self):
        topo = Topology(
            services=(
                ServiceSpec(name="a", replicas=1, service_time_us=1, concurrency=1, queue_capacity=0, timeout_us=1),
            ),
            edges=(("a", "ghost"),),
            traffic=TrafficModel(entry_service="a", requests_per_sec=1),
        )
        with pytest.raises(TopologyError):
            build_world(topo, 1)

    def test_same_seed_same_initial_rng(self):
        a = build_world(single_service_topology(), 42)
        b = build_world(single_service_topology(), 42)
        assert a.rng.state == b.rng.state
        assert list(a.instances) == list(b.instances)


class TestRunOracle:
    def test_ten_rps_hand_enumerated(self):
        # 10 rps, 1000 us service time, no contention: the event queue is
        # enumerable by hand. Arrivals land every 100 ms starting at t=0;
        # each completes 1000 us later, before the next arrival.
        world = build_world(single_service_topology(service_time_us=1000, rps=10), 42)
        trace = world.run(1000)
        arrivals = events_of(trace, "arrival")
        completes = events_of(trace, "complete")
        fails = events_of(trace, "fail")
        assert [e.t_us for e in arrivals] == [i * 100_000 for i in range(10)]
        assert [e.t_us for e in completes] == [i * 100_000 + 1000 for i in range(10)]
        assert all(e.detail["latency_us"] == 1000 for e in completes)
        assert fails == []

    def test_run_twice_identical_digest(self):
        t1 = build_world(chain_topology(jitter_us=500), 7).run(2000)
        t2 = build_world(chain_topology(jitter_us=500), 7).run(2000)
        assert t1.digest() == t2.digest()

    def test_chunked_run_equals_single_run(self):
        w1 = build_world(chain_topology(jitter_us=300), 11)
        w1.run(500)
        w1.run(500)
        w1.run(1000)
        w2 = build_world(chain_topology(jitter_us=300), 11)
        w2.run(2000)
        assert w1.trace().digest() == w2.trace().digest()

    def test_monotone_timestamps(self):
        trace = build_world(chain_topology(), 3).run(1500)
        times = [e.t_us for e in trace.events]
        assert times == sorted(times)

    def test_overload_drops_not_errors(self):
        topo = single_service_topology(service_time_us=300_000, rps=100, concurrency=1, queue_capacity=0)
        trace = build_world(topo, 5).run(1000)
        summary = trace.summary()
        assert summary["drops"] > 0
        check_conservation_prefixes(trace)

    def test_conservation_across_configs(self):
        configs = [
            (single_service_topology(), 1),
            (single_service_topology(service_time_us=300_000, rps=100, queue_capacity=1), 2),
            (chain_topology(jitter_us=1000), 3),
            (chain_topology(rps=100, frontend_retries=2), 4),
        ]
        for topo, seed in configs:
            trace = build_world(topo, seed).run(2000)
            a, c, f, d = check_conservation_prefixes(trace)
            assert a == c + f + d + trace.summary()["in_flight"]


class TestIdentityFaults:
    def test_zero_probability_and_unit_factor_are_identity(self):
        base = build_world(chain_topology(jitter_us=200), 13).run(1500)
        world = build_world(chain_topology(jitter_us=200), 13)
        world.apply_fault(PacketLoss(prob_bp=0), ["backend-0", "backend-1"])
        world.apply_fault(CpuStress(service_time_factor_pct=100), ["frontend-0"])
        faulted = world.run(1500)
        stripped = [e for e in faulted.events if not e.kind.startswith("fault_")]
        assert stripped == list(base.events)

    def test_total_ingress_loss(self):
        world = build_world(single_service_topology(), 21)
        world.apply_fault(PacketLoss(prob_bp=10000), ["api-0"])
        trace = world.run(1000)
        summary = trace.summary()
        assert summary["completions"] == 0
        assert summary["failures"] == summary["arrivals"] == 10


class TestFaultSemantics:
    def test_network_latency_additive(self):
        world = build_world(single_service_topology(), 1)
        world.apply_fault(NetworkLatency(delay_us=100_000, jitter_us=0), ["api-0"])
        trace = world.run(500)
        first = events_of(trace, "complete")[0]
        assert first.t_us == 100_000 + 1000
        assert first.detail["latency_us"] == 101_000

    def test_cpu_stress_scales_service_time(self):
        world = build_world(single_service_topology(), 1)
        world.apply_fault(CpuStress(service_time_factor_pct=200), ["api-0"])
        trace = world.run(200)
        assert events_of(trace, "complete")[0].detail["latency_us"] == 2000

    def test_bandwidth_throttle_serialization_delay(self):
        world = build_world(single_service_topology(), 1)
        world.apply_fault(BandwidthThrottle(bytes_per_sec=1_000_000), ["api-0"])
        trace = world.run(200)
        # 1024-byte message at 1 MB/s serializes in 1024 us.
        assert events_of(trace, "complete")[0].detail["latency_us"] == 1024 + 1000

    def test_instance_kill_down_then_up(self):
        world = build_world(single_service_topology(replicas=2), 1)
        world.apply_fault(InstanceKill(down_for_ms=500), ["api-0"])
        trace = world.run(1000)
        downs = events_of(trace, "instance_down")
        ups = events_of(trace, "instance_up")
        assert downs[0].t_us == 0 and downs[0].instance == "api-0"
        assert ups[0].t_us == 500_000 and ups[0].detail["cause"] == "timer"

    def test_instance_kill_revert_restarts_early(self):
        world = build_world(single_service_topology(replicas=2), 1)
        handle = world.apply_fault(InstanceKill(down_for_ms=600_000), ["api-0"])
        world.run(100)
        world.revert_fault(handle)
        trace = world.run(100)
        ups = events_of(trace, "instance_up")
        assert len(ups) == 1 and ups[0].detail["cause"] == "revert"
        assert world.up_instances() == ["api-0", "api-1"]

    def test_memory_exhaustion_crashes_later(self):
        world = build_world(single_service_topology(replicas=1), 1)
        handle = world.apply_fault(MemoryExhaustion(crash_after_ms=300), ["api-0"])
        world.run(200)
        assert world.up_instances() == ["api-0"]  # accepts work normally first
        world.run(200)
        assert world.up_instances() == []
        world.revert_fault(handle)
        assert world.up_instances() == ["api-0"]  # restart only via revert

    def test_dns_failure_fails_instantly(self):
        world = build_world(single_service_topology(), 1)
        world.apply_fault(DnsFailure(), ["api-0"])
        trace = world.run(500)
        fails = events_of(trace, "fail")
        assert fails and all(e.detail["reason"] == "dns_failure" for e in fails)
        assert fails[0].t_us == 0  # no timeout wait

    def test_service_dependency_failure_blocks_caller(self):
        world = build_world(chain_topology(frontend_retries=0), 1)
        world.apply_fault(
            ServiceDependencyFailure(dependency="backend"), ["frontend-0", "frontend-1"]
        )
        trace = world.run(500)
        assert events_of(trace, "dispatch", "backend") == []
        entry_fails = [e for e in events_of(trace, "fail", "frontend") if e.detail["call"] == "request"]
        assert entry_fails and all(e.detail["reason"] == "dependency_failed" for e in entry_fails)

    def test_packet_loss_timeout_then_retry(self):
        world = build_world(chain_topology(frontend_retries=1, rps=10), 1)
        world.apply_fault(PacketLoss(prob_bp=10000), ["backend-0", "backend-1"])
        trace = world.run(1000)
        backend_fails = events_of(trace, "fail", "backend")
        assert backend_fails and all(e.detail["reason"] == "timeout" for e in backend_fails)
        # each request: first attempt + one retry, both lost
        requests = {e.request_id for e in events_of(trace, "arrival")}
        per_request = {r: sum(1 for e in backend_fails if e.request_id == r) for r in requests}
        assert all(n == 2 for r, n in per_request.items() if trace_finished(trace, r))

    def test_api_error_injection_4xx_no_retry_5xx_retry(self):
        for code, attempts in ((404, 1), (503, 2)):
            world = build_world(chain_topology(frontend_retries=1, rps=10), 1)
            world.apply_fault(
                ApiErrorInjection(prob_bp=10000, error_code=code), ["backend-0", "backend-1"]
            )
            trace = world.run(500)
            first_request = events_of(trace, "arrival")[0].request_id
            backend_fails = [e for e in events_of(trace, "fail", "backend") if e.request_id == first_request]
            assert len(backend_fails) == attempts
            assert all(e.detail["reason"] == f"api_error_{code}" for e in backend_fails)

    def test_storage_corruption_needs_storage_tag(self):
        world = build_world(chain_topology(backend_tags=frozenset({"storage"}), frontend_retries=0), 1)
        world.apply_fault(StorageCorruption(prob_bp=10000), ["backend-0", "backend-1"])
        trace = world.run(500)
        fails = events_of(trace, "fail", "backend")
        assert fails and all(e.detail["reason"] == "corrupt_response" for e in fails)

        untagged = build_world(chain_topology(frontend_retries=0), 1)
        untagged.apply_fault(StorageCorruption(prob_bp=10000), ["backend-0", "backend-1"])
        clean = untagged.run(500)
        assert events_of(clean, "fail") == []

    def test_disk_io_saturation_needs_storage_tag(self):
        tagged = build_world(chain_topology(backend_tags=frozenset({"storage"})), 1)
        tagged.apply_fault(DiskIoSaturation(io_factor_pct=300), ["backend-0", "backend-1"])
        t1 = tagged.run(300)
        lat = [e for e in events_of(t1, "complete", "backend")][0]
        assert lat.detail["latency_us"] == 15_000  # 5000 * 3

        untagged = build_world(chain_topology(), 1)
        untagged.apply_fault(DiskIoSaturation(io_factor_pct=300), ["backend-0", "backend-1"])
        t2 = untagged.run(300)
        assert events_of(t2, "complete", "backend")[0].detail["latency_us"] == 5000

    def test_cache_invalidation_scales_cache_tagged(self):
        tagged = build_world(chain_topology(backend_tags=frozenset({"cache"})), 1)
        tagged.apply_fault(CacheInvalidation(miss_factor_pct=400), ["backend-0", "backend-1"])
        trace = tagged.run(300)
        assert events_of(trace, "complete", "backend")[0].detail["latency_us"] == 20_000

    def test_db_connection_termination_one_shot(self):
        topo = chain_topology(backend_tags=frozenset({"db"}), frontend_retries=1)
        world = build_world(topo, 1)
        world.run(4)  # request r0 arrives at t=0, is in flight at the backend by 4 ms
        world.apply_fault(DbConnectionTermination(), ["backend-0", "backend-1"])
        trace = world.run(500)
        killed = [e for e in events_of(trace, "fail", "backend") if e.detail["reason"] == "connection_terminated"]
        assert killed and killed[0].t_us == 4000
        # retry recovers the request afterwards
        assert trace.summary()["failures"] == 0


def trace_finished(trace, request_id):
    return any(
        e.request_id == request_id and e.detail.get("call") == "request"
        for e in trace.events
        if e.kind in ("complete", "fail", "drop")
    )


class TestApplyRevert:
    def test_scope_error(self):
        world = build_world(single_service_topology(), 1)
        with pytest.raises(ScopeError):
            world.apply_fault(DnsFailure(), ["ghost-0"])

    def test_conflict_same_kind_same_instance(self):
        world = build_world(single_service_topology(), 1)
        world.apply_fault(NetworkLatency(delay_us=10), ["api-0"])
        with pytest.raises(ConflictError):
            world.apply_fault(NetworkLatency(delay_us=20), ["api-0"])

    def test_stale_handle(self):
        world = build_world(single_service_topology(), 1)
        handle = world.apply_fault(DnsFailure(), ["api-0"])
        world.revert_fault(handle)
        with pytest.raises(StaleHandle):
            world.revert_fault(handle)

    def test_revert_all_counts(self):
        world = build_world(chain_topology(), 1)
        world.apply_fault(NetworkLatency(delay_us=10), ["backend-0"])
        world.apply_fault(PacketLoss(prob_bp=100), ["backend-0"])
        world.apply_fault(CpuStress(service_time_factor_pct=150), ["frontend-0"])
        assert world.revert_all() == 3
        assert world.revert_all() == 0
        assert world.active_handles() == []
        trace = world.trace()
        assert len(events_of(trace, "fault_reverted")) == 3

    def test_apply_then_revert_matches_never_applied(self):
        base = build_world(chain_topology(), 17).run(1500)
        world = build_world(chain_topology(), 17)
        handle = world.apply_fault(NetworkLatency(delay_us=50_000, jitter_us=0), ["backend-0"])
        world.revert_fault(handle)
        trace = world.run(1500)
        stripped = [e for e in trace.events if not e.kind.startswith("fault_")]
        assert stripped == list(base.events)

    def test_post_revert_window_matches_baseline(self):
        # Delay-only faults consume no randomness, so once pre-revert work
        # drains, the remaining schedule must match a never-faulted world.
        base_world = build_world(chain_topology(rps=10), 23)
        base_world.run(3000)
        base_events = [e for e in base_world.trace().events if e.t_us >= 1_500_000]

        world = build_world(chain_topology(rps=10), 23)
        handle = world.apply_fault(NetworkLatency(delay_us=30_000, jitter_us=0), ["backend-0"])
        world.run(1000)
        world.revert_fault(handle)
        world.run(2000)
        events = [
            e
            for e in world.trace().events
            if e.t_us >= 1_500_000 and not e.kind.startswith("fault_")
        ]
        assert events == base_events


class TestIntegerPipeline:
    def test_no_floats_or_transcendentals_in_event_pipeline(self):
        import io
        import tokenize

        src_dir = Path(__file__).resolve().parents[1] / "src" / "chaoslab"
        for name in ("simworld.py", "rng.py", "trace.py"):
            text = (src_dir / name).read_text()
            assert "import math" not in text
            assert "import random" not in text
            for tok in tokenize.generate_tokens(io.StringIO(text).readline):
                if tok.type == tokenize.NUMBER:
                    try:
                        int(tok.string, 0)
                    except ValueError:
                        raise AssertionError(f"non-integer literal {tok.string!r} in {name}") from None
