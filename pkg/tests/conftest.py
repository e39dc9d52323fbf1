"""Shared fixtures: topologies, experiment documents, and builders."""

from __future__ import annotations

import copy
import json
from typing import Any

import pytest

from chaoslab.model import parse_experiment_dict
from chaoslab.topology import RetryPolicy, ServiceSpec, Topology, TrafficModel


def single_service_topology(
    service_time_us: int = 1000,
    rps: int = 10,
    replicas: int = 1,
    concurrency: int = 1,
    queue_capacity: int = 10,
    jitter_us: int = 0,
) -> Topology:
    return Topology(
        services=(
            ServiceSpec(
                name="api",
                replicas=replicas,
                service_time_us=service_time_us,
                concurrency=concurrency,
                queue_capacity=queue_capacity,
                timeout_us=100_000,
                retry=RetryPolicy(0, 0),
            ),
        ),
        edges=(),
        traffic=TrafficModel(entry_service="api", requests_per_sec=rps, jitter_us=jitter_us),
    )


def chain_topology(
    rps: int = 20,
    frontend_retries: int = 1,
    backend_replicas: int = 2,
    backend_tags: frozenset[str] = frozenset(),
    jitter_us: int = 0,
) -> Topology:
    return Topology(
        services=(
            ServiceSpec(
                name="frontend",
                replicas=2,
                service_time_us=2000,
                concurrency=8,
                queue_capacity=32,
                timeout_us=500_000,
                retry=RetryPolicy(frontend_retries, 1000),
            ),
            ServiceSpec(
                name="backend",
                replicas=backend_replicas,
                service_time_us=5000,
                concurrency=8,
                queue_capacity=32,
                timeout_us=200_000,
                retry=RetryPolicy(0, 0),
                tags=backend_tags,
            ),
        ),
        edges=(("frontend", "backend"),),
        traffic=TrafficModel(entry_service="frontend", requests_per_sec=rps, jitter_us=jitter_us),
    )


BASE_EXP_DOC: dict[str, Any] = {
    "id": "latency-demo",
    "name": "Latency stays under tolerance",
    "target": {"service": "frontend", "instance_fraction_bp": 10000},
    "hypothesis": {
        "probes": [
            {
                "metric": {"service": "frontend", "kind": "latency_mean_us"},
                "window_ms": 1000,
                "tolerance": {"max": 200_000},
            },
            {
                "metric": {"service": "frontend", "kind": "error_rate_bp"},
                "window_ms": 1000,
                "tolerance": {"max": 2000},
            },
        ],
        "baseline_window_ms": 2000,
        "evaluation_interval_ms": 500,
    },
    "stages": [
        {
            "fault": {"kind": "network_latency", "delay_us": 100_000, "jitter_us": 0},
            "scope": {"service": "backend", "instance_fraction_bp": 1000},
            "duration_ms": 2000,
        },
        {
            "fault": {"kind": "network_latency", "delay_us": 100_000, "jitter_us": 0},
            "scope": {"service": "backend", "instance_fraction_bp": 10000},
            "duration_ms": 2000,
        },
    ],
    "rollback": {"recovery_checks": 2, "recovery_timeout_ms": 8000},
    "abort": {"max_consecutive_violations": 1},
    "compliance": {"data_class": "synthetic", "max_scope_bp": 10000},
    "seed": 42,
}


def exp_doc(**overrides: Any) -> dict[str, Any]:
    doc = copy.deepcopy(BASE_EXP_DOC)
    doc.update(overrides)
    return doc


def make_experiment(**overrides: Any):
    return parse_experiment_dict(exp_doc(**overrides))


# The 2-stage latency experiment can't run two faults of the same kind on
# overlapping instances, so the default ramp keeps stage scopes on the same
# service but the stages run sequentially (stage 0 reverts before stage 1).


@pytest.fixture
def topo_single() -> Topology:
    return single_service_topology()


@pytest.fixture
def topo_chain() -> Topology:
    return chain_topology()


def write_json(path, obj) -> str:
    path.write_text(json.dumps(obj))
    return str(path)


def topology_doc(topo: Topology) -> dict[str, Any]:
    return topo.to_dict()
