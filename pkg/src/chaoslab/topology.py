"""Service-mesh topology for the simulator: services, replicas, dependency
edges, and the external traffic model. Loaded from `.topo.json`."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .errors import DocumentSyntaxError, SchemaError, TopologyError
from .model import _check_keys, _expect_obj, _get, _get_int, _get_str

VALID_TAGS = {"db", "cache", "storage"}


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 0
    backoff_us: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"max_retries": self.max_retries, "backoff_us": self.backoff_us}


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    replicas: int
    service_time_us: int
    concurrency: int
    queue_capacity: int
    timeout_us: int
    retry: RetryPolicy = RetryPolicy()
    tags: frozenset[str] = frozenset()

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "replicas": self.replicas,
            "service_time_us": self.service_time_us,
            "concurrency": self.concurrency,
            "queue_capacity": self.queue_capacity,
            "timeout_us": self.timeout_us,
            "retry": self.retry.to_dict(),
            "tags": sorted(self.tags),
        }


@dataclass(frozen=True)
class TrafficModel:
    entry_service: str
    requests_per_sec: int
    jitter_us: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "entry_service": self.entry_service,
            "requests_per_sec": self.requests_per_sec,
            "jitter_us": self.jitter_us,
        }

    @property
    def base_interval_us(self) -> int:
        return 1_000_000 // self.requests_per_sec


@dataclass(frozen=True)
class Topology:
    services: tuple[ServiceSpec, ...]
    edges: tuple[tuple[str, str], ...]
    traffic: TrafficModel

    def to_dict(self) -> dict[str, Any]:
        return {
            "services": [s.to_dict() for s in self.services],
            "edges": [list(e) for e in self.edges],
            "traffic": self.traffic.to_dict(),
        }

    def service(self, name: str) -> ServiceSpec:
        for s in self.services:
            if s.name == name:
                return s
        raise TopologyError(f"unknown service {name!r}")

    def dependencies(self, caller: str) -> list[str]:
        """Callee names in declared call order."""
        return [callee for c, callee in self.edges if c == caller]

    def warnings(self) -> list[str]:
        out = []
        for s in self.services:
            if s.timeout_us <= s.service_time_us:
                out.append(
                    f"service {s.name!r}: timeout_us {s.timeout_us} <= service_time_us"
                    f" {s.service_time_us}; calls will time out under any load"
                )
        return out


def check_topology(topo: Topology) -> None:
    """Raise TopologyError unless the topology invariants hold."""
    names = [s.name for s in topo.services]
    if len(set(names)) != len(names):
        raise TopologyError("duplicate service names")
    name_set = set(names)
    for s in topo.services:
        if s.replicas < 1:
            raise TopologyError(f"service {s.name!r}: replicas must be >= 1")
    for caller, callee in topo.edges:
        if caller not in name_set or callee not in name_set:
            raise TopologyError(f"edge {caller!r} -> {callee!r} references unknown service")
    if topo.traffic.entry_service not in name_set:
        raise TopologyError(f"entry service {topo.traffic.entry_service!r} does not exist")

    # Cycle check: DFS over the call graph.
    adjacent: dict[str, list[str]] = {n: [] for n in name_set}
    for caller, callee in topo.edges:
        adjacent[caller].append(callee)
    state: dict[str, int] = {}  # 1 = on stack, 2 = done

    def visit(node: str) -> None:
        state[node] = 1
        for nxt in adjacent[node]:
            mark = state.get(nxt)
            if mark == 1:
                raise TopologyError(f"dependency cycle through {nxt!r}")
            if mark is None:
                visit(nxt)
        state[node] = 2

    for n in names:
        if n not in state:
            visit(n)


def parse_topology_dict(doc: Any) -> Topology:
    doc = _expect_obj(doc, "$")
    _check_keys(doc, {"services", "edges", "traffic"}, "$")

    raw_services = _get(doc, "services", "$")
    if not isinstance(raw_services, list) or not raw_services:
        raise SchemaError("$.services", "expected nonempty list")
    services = []
    for i, raw in enumerate(raw_services):
        path = f"$.services[{i}]"
        obj = _expect_obj(raw, path)
        _check_keys(
            obj,
            {"name", "replicas", "service_time_us", "concurrency", "queue_capacity", "timeout_us", "retry", "tags"},
            path,
        )
        retry = RetryPolicy()
        if "retry" in obj:
            r_obj = _expect_obj(obj["retry"], f"{path}.retry")
            _check_keys(r_obj, {"max_retries", "backoff_us"}, f"{path}.retry")
            retry = RetryPolicy(
                max_retries=_get_int(r_obj, "max_retries", f"{path}.retry", 0),
                backoff_us=_get_int(r_obj, "backoff_us", f"{path}.retry", 0),
            )
        tags: frozenset[str] = frozenset()
        if "tags" in obj:
            raw_tags = obj["tags"]
            if not isinstance(raw_tags, list) or not all(isinstance(t, str) for t in raw_tags):
                raise SchemaError(f"{path}.tags", "expected list of strings")
            bad = set(raw_tags) - VALID_TAGS
            if bad:
                raise SchemaError(f"{path}.tags", f"unknown tag(s): {', '.join(sorted(bad))}")
            tags = frozenset(raw_tags)
        services.append(
            ServiceSpec(
                name=_get_str(obj, "name", path),
                replicas=_get_int(obj, "replicas", path, 1),
                service_time_us=_get_int(obj, "service_time_us", path, 1),
                concurrency=_get_int(obj, "concurrency", path, 1),
                queue_capacity=_get_int(obj, "queue_capacity", path, 0),
                timeout_us=_get_int(obj, "timeout_us", path, 1),
                retry=retry,
                tags=tags,
            )
        )

    raw_edges = _get(doc, "edges", "$")
    if not isinstance(raw_edges, list):
        raise SchemaError("$.edges", "expected list")
    edges = []
    for i, raw in enumerate(raw_edges):
        if not (isinstance(raw, list) and len(raw) == 2 and all(isinstance(x, str) for x in raw)):
            raise SchemaError(f"$.edges[{i}]", "expected [caller, callee] pair")
        edges.append((raw[0], raw[1]))

    t_obj = _expect_obj(_get(doc, "traffic", "$"), "$.traffic")
    _check_keys(t_obj, {"entry_service", "requests_per_sec", "jitter_us"}, "$.traffic")
    traffic = TrafficModel(
        entry_service=_get_str(t_obj, "entry_service", "$.traffic"),
        requests_per_sec=_get_int(t_obj, "requests_per_sec", "$.traffic", 1),
        jitter_us=_get_int(t_obj, "jitter_us", "$.traffic", 0) if "jitter_us" in t_obj else 0,
    )

    topo = Topology(services=tuple(services), edges=tuple(edges), traffic=traffic)
    check_topology(topo)
    return topo


def parse_topology(document: str) -> Topology:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise DocumentSyntaxError(f"malformed JSON: {exc}") from exc
    return parse_topology_dict(doc)
