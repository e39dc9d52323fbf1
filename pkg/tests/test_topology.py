"""Topology parsing and structural invariants."""

import pytest

from chaoslab.errors import SchemaError, TopologyError
from chaoslab.topology import (
    RetryPolicy,
    ServiceSpec,
    Topology,
    TrafficModel,
    check_topology,
    parse_topology,
)

from conftest import chain_topology, single_service_topology


def _svc(name, **kw):
    defaults = dict(replicas=1, service_time_us=1000, concurrency=1, queue_capacity=4, timeout_us=5000)
    defaults.update(kw)
    return ServiceSpec(name=name, **defaults)


def test_round_trip():
    topo = chain_topology()
    text = __import__("json").dumps(topo.to_dict())
    again = parse_topology(text)
    assert again == topo


def test_edge_to_missing_service():
    topo = Topology(
        services=(_svc("a"),),
        edges=(("a", "ghost"),),
        traffic=TrafficModel(entry_service="a", requests_per_sec=1),
    )
    with pytest.raises(TopologyError):
        check_topology(topo)


def test_cycle_detected():
    topo = Topology(
        services=(_svc("a"), _svc("b")),
        edges=(("a", "b"), ("b", "a")),
        traffic=TrafficModel(entry_service="a", requests_per_sec=1),
    )
    with pytest.raises(TopologyError):
        check_topology(topo)


def test_missing_entry_service():
    topo = Topology(
        services=(_svc("a"),),
        edges=(),
        traffic=TrafficModel(entry_service="nope", requests_per_sec=1),
    )
    with pytest.raises(TopologyError):
        check_topology(topo)


def test_duplicate_names():
    topo = Topology(
        services=(_svc("a"), _svc("a")),
        edges=(),
        traffic=TrafficModel(entry_service="a", requests_per_sec=1),
    )
    with pytest.raises(TopologyError):
        check_topology(topo)


def test_timeout_warning():
    topo = Topology(
        services=(_svc("a", timeout_us=500, service_time_us=1000),),
        edges=(),
        traffic=TrafficModel(entry_service="a", requests_per_sec=1),
    )
    check_topology(topo)  # warning, not an error
    assert any("timeout" in w for w in topo.warnings())
    assert single_service_topology().warnings() == []


def test_unknown_tag_rejected():
    doc = single_service_topology().to_dict()
    doc["services"][0]["tags"] = ["gpu"]
    with pytest.raises(SchemaError):
        parse_topology(__import__("json").dumps(doc))


def test_dependencies_ordered():
    topo = Topology(
        services=(_svc("a"), _svc("b"), _svc("c")),
        edges=(("a", "c"), ("a", "b")),
        traffic=TrafficModel(entry_service="a", requests_per_sec=1),
    )
    check_topology(topo)
    assert topo.dependencies("a") == ["c", "b"]


def test_base_interval_truncates():
    assert TrafficModel(entry_service="a", requests_per_sec=3).base_interval_us == 333_333


def test_retry_defaults():
    assert RetryPolicy() == RetryPolicy(max_retries=0, backoff_us=0)
