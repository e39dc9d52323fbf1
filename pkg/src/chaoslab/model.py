"""Experiment domain types, the canonical `.chaos.json` format, and parsing.

Everything is integers in base units: microseconds, milliseconds, basis
points. No floats anywhere in an experiment document, which keeps the
canonical byte form (and therefore every audit hash) stable across
producers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Any

from . import canon
from .errors import DocumentSyntaxError, RangeError, SchemaError

_ID_RE = re.compile(r"^[a-z0-9-]+$")


class MetricKind(str, Enum):
    LATENCY_P95_US = "latency_p95_us"
    LATENCY_MEAN_US = "latency_mean_us"
    ERROR_RATE_BP = "error_rate_bp"
    THROUGHPUT_RPM = "throughput_rpm"
    AVAILABILITY_BP = "availability_bp"


class FaultKind(str, Enum):
    NETWORK_LATENCY = "network_latency"
    PACKET_LOSS = "packet_loss"
    BANDWIDTH_THROTTLE = "bandwidth_throttle"
    DNS_FAILURE = "dns_failure"
    CPU_STRESS = "cpu_stress"
    MEMORY_EXHAUSTION = "memory_exhaustion"
    DISK_IO_SATURATION = "disk_io_saturation"
    STORAGE_CORRUPTION = "storage_corruption"
    SERVICE_DEPENDENCY_FAILURE = "service_dependency_failure"
    API_ERROR_INJECTION = "api_error_injection"
    DB_CONNECTION_TERMINATION = "db_connection_termination"
    CACHE_INVALIDATION = "cache_invalidation"
    INSTANCE_KILL = "instance_kill"


class DataClass(str, Enum):
    SYNTHETIC = "synthetic"
    MASKED = "masked"
    PRODUCTION = "production"


@dataclass(frozen=True)
class MetricSelector:
    service: str
    kind: MetricKind

    def to_dict(self) -> dict[str, Any]:
        return {"service": self.service, "kind": self.kind.value}


@dataclass(frozen=True)
class Tolerance:
    """Inclusive bounds; at least one must be present."""

    min: int | None = None
    max: int | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if self.min is not None:
            out["min"] = self.min
        if self.max is not None:
            out["max"] = self.max
        return out

    def contains(self, value: int) -> bool:
        if self.min is not None and value < self.min:
            return False
        if self.max is not None and value > self.max:
            return False
        return True


@dataclass(frozen=True)
class Probe:
    metric: MetricSelector
    window_ms: int
    tolerance: Tolerance

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric.to_dict(),
            "window_ms": self.window_ms,
            "tolerance": self.tolerance.to_dict(),
        }


@dataclass(frozen=True)
class SteadyStateHypothesis:
    probes: tuple[Probe, ...]
    baseline_window_ms: int
    evaluation_interval_ms: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "probes": [p.to_dict() for p in self.probes],
            "baseline_window_ms": self.baseline_window_ms,
            "evaluation_interval_ms": self.evaluation_interval_ms,
        }


# ---------------------------------------------------------------------------
# Fault actions: tagged union over the thirteen kinds.


@dataclass(frozen=True)
class FaultAction:
    """Base for all fault variants. `kind` identifies the variant."""

    kind: FaultKind = field(init=False)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value}
        for f in fields(self):
            if f.name == "kind":
                continue
            out[f.name] = getattr(self, f.name)
        return out


def _variant(kind: FaultKind):
    def apply(cls):
        cls.kind = kind
        return cls

    return apply


@_variant(FaultKind.NETWORK_LATENCY)
@dataclass(frozen=True)
class NetworkLatency(FaultAction):
    delay_us: int = 0
    jitter_us: int = 0


@_variant(FaultKind.PACKET_LOSS)
@dataclass(frozen=True)
class PacketLoss(FaultAction):
    prob_bp: int = 0


@_variant(FaultKind.BANDWIDTH_THROTTLE)
@dataclass(frozen=True)
class BandwidthThrottle(FaultAction):
    bytes_per_sec: int = 1


@_variant(FaultKind.DNS_FAILURE)
@dataclass(frozen=True)
class DnsFailure(FaultAction):
    pass


@_variant(FaultKind.CPU_STRESS)
@dataclass(frozen=True)
class CpuStress(FaultAction):
    service_time_factor_pct: int = 100


@_variant(FaultKind.MEMORY_EXHAUSTION)
@dataclass(frozen=True)
class MemoryExhaustion(FaultAction):
    crash_after_ms: int = 0


@_variant(FaultKind.DISK_IO_SATURATION)
@dataclass(frozen=True)
class DiskIoSaturation(FaultAction):
    io_factor_pct: int = 100


@_variant(FaultKind.STORAGE_CORRUPTION)
@dataclass(frozen=True)
class StorageCorruption(FaultAction):
    prob_bp: int = 0


@_variant(FaultKind.SERVICE_DEPENDENCY_FAILURE)
@dataclass(frozen=True)
class ServiceDependencyFailure(FaultAction):
    dependency: str = ""


@_variant(FaultKind.API_ERROR_INJECTION)
@dataclass(frozen=True)
class ApiErrorInjection(FaultAction):
    prob_bp: int = 0
    error_code: int = 500


@_variant(FaultKind.DB_CONNECTION_TERMINATION)
@dataclass(frozen=True)
class DbConnectionTermination(FaultAction):
    pass


@_variant(FaultKind.CACHE_INVALIDATION)
@dataclass(frozen=True)
class CacheInvalidation(FaultAction):
    miss_factor_pct: int = 100


@_variant(FaultKind.INSTANCE_KILL)
@dataclass(frozen=True)
class InstanceKill(FaultAction):
    down_for_ms: int = 0


FAULT_TYPES: dict[FaultKind, type[FaultAction]] = {
    FaultKind.NETWORK_LATENCY: NetworkLatency,
    FaultKind.PACKET_LOSS: PacketLoss,
    FaultKind.BANDWIDTH_THROTTLE: BandwidthThrottle,
    FaultKind.DNS_FAILURE: DnsFailure,
    FaultKind.CPU_STRESS: CpuStress,
    FaultKind.MEMORY_EXHAUSTION: MemoryExhaustion,
    FaultKind.DISK_IO_SATURATION: DiskIoSaturation,
    FaultKind.STORAGE_CORRUPTION: StorageCorruption,
    FaultKind.SERVICE_DEPENDENCY_FAILURE: ServiceDependencyFailure,
    FaultKind.API_ERROR_INJECTION: ApiErrorInjection,
    FaultKind.DB_CONNECTION_TERMINATION: DbConnectionTermination,
    FaultKind.CACHE_INVALIDATION: CacheInvalidation,
    FaultKind.INSTANCE_KILL: InstanceKill,
}

# (field name, minimum, maximum or None) per variant, used by the parser.
_FAULT_RANGES: dict[FaultKind, list[tuple[str, int, int | None]]] = {
    FaultKind.NETWORK_LATENCY: [("delay_us", 0, None), ("jitter_us", 0, None)],
    FaultKind.PACKET_LOSS: [("prob_bp", 0, 10000)],
    FaultKind.BANDWIDTH_THROTTLE: [("bytes_per_sec", 1, None)],
    FaultKind.DNS_FAILURE: [],
    FaultKind.CPU_STRESS: [("service_time_factor_pct", 100, None)],
    FaultKind.MEMORY_EXHAUSTION: [("crash_after_ms", 0, None)],
    FaultKind.DISK_IO_SATURATION: [("io_factor_pct", 100, None)],
    FaultKind.STORAGE_CORRUPTION: [("prob_bp", 0, 10000)],
    FaultKind.SERVICE_DEPENDENCY_FAILURE: [],
    FaultKind.API_ERROR_INJECTION: [("prob_bp", 0, 10000), ("error_code", 100, 599)],
    FaultKind.DB_CONNECTION_TERMINATION: [],
    FaultKind.CACHE_INVALIDATION: [("miss_factor_pct", 100, None)],
    FaultKind.INSTANCE_KILL: [("down_for_ms", 0, None)],
}


@dataclass(frozen=True)
class ScopeSelector:
    """Blast radius: either a fraction of a service's instances or an
    explicit instance-id list, never both."""

    service: str
    instance_fraction_bp: int | None = None
    instances: tuple[str, ...] | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"service": self.service}
        if self.instance_fraction_bp is not None:
            out["instance_fraction_bp"] = self.instance_fraction_bp
        if self.instances is not None:
            out["instances"] = list(self.instances)
        return out


@dataclass(frozen=True)
class Stage:
    fault: FaultAction
    scope: ScopeSelector
    duration_ms: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "fault": self.fault.to_dict(),
            "scope": self.scope.to_dict(),
            "duration_ms": self.duration_ms,
        }


@dataclass(frozen=True)
class RollbackPolicy:
    recovery_checks: int
    recovery_timeout_ms: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "recovery_checks": self.recovery_checks,
            "recovery_timeout_ms": self.recovery_timeout_ms,
        }


@dataclass(frozen=True)
class AbortPolicy:
    max_consecutive_violations: int = 1

    def to_dict(self) -> dict[str, Any]:
        return {"max_consecutive_violations": self.max_consecutive_violations}


@dataclass(frozen=True)
class ComplianceMetadata:
    data_class: DataClass
    max_scope_bp: int
    approved_by: str | None = None
    approval_role: str | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "data_class": self.data_class.value,
            "max_scope_bp": self.max_scope_bp,
        }
        if self.approved_by is not None:
            out["approved_by"] = self.approved_by
        if self.approval_role is not None:
            out["approval_role"] = self.approval_role
        return out


@dataclass(frozen=True)
class Experiment:
    id: str
    name: str
    target: ScopeSelector
    hypothesis: SteadyStateHypothesis
    stages: tuple[Stage, ...]
    rollback: RollbackPolicy
    abort: AbortPolicy
    compliance: ComplianceMetadata
    seed: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "target": self.target.to_dict(),
            "hypothesis": self.hypothesis.to_dict(),
            "stages": [s.to_dict() for s in self.stages],
            "rollback": self.rollback.to_dict(),
            "abort": self.abort.to_dict(),
            "compliance": self.compliance.to_dict(),
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# Parsing. Every accessor threads the JSON path so errors point at the field.


def _expect_obj(value: Any, path: str) -> dict[str, Any]:
    if not isinstance(value, dict):
        raise SchemaError(path, f"expected object, got {type(value).__name__}")
    return value


def _check_keys(obj: dict[str, Any], allowed: set[str], path: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError(path, f"unknown key(s): {', '.join(sorted(unknown))}")


def _get(obj: dict[str, Any], key: str, path: str) -> Any:
    if key not in obj:
        raise SchemaError(f"{path}.{key}", "missing required field")
    return obj[key]


def _get_int(obj: dict[str, Any], key: str, path: str, lo: int | None = None, hi: int | None = None) -> int:
    v = _get(obj, key, path)
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"{path}.{key}", "expected integer")
    if lo is not None and v < lo:
        raise RangeError(f"{path}.{key}", f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise RangeError(f"{path}.{key}", f"must be <= {hi}, got {v}")
    return v


def _get_str(obj: dict[str, Any], key: str, path: str) -> str:
    v = _get(obj, key, path)
    if not isinstance(v, str):
        raise SchemaError(f"{path}.{key}", "expected string")
    return v


def parse_fault(obj: Any, path: str) -> FaultAction:
    obj = _expect_obj(obj, path)
    kind_str = _get_str(obj, "kind", path)
    try:
        kind = FaultKind(kind_str)
    except ValueError:
        raise SchemaError(f"{path}.kind", f"unknown fault kind {kind_str!r}") from None
    ranges = _FAULT_RANGES[kind]
    allowed = {"kind"} | {name for name, _, _ in ranges}
    if kind == FaultKind.SERVICE_DEPENDENCY_FAILURE:
        allowed.add("dependency")
    _check_keys(obj, allowed, path)
    kwargs: dict[str, Any] = {}
    for name, lo, hi in ranges:
        kwargs[name] = _get_int(obj, name, path, lo, hi)
    if kind == FaultKind.SERVICE_DEPENDENCY_FAILURE:
        dep = _get_str(obj, "dependency", path)
        if not dep:
            raise RangeError(f"{path}.dependency", "must be nonempty")
        kwargs["dependency"] = dep
    return FAULT_TYPES[kind](**kwargs)


def parse_scope(obj: Any, path: str) -> ScopeSelector:
    obj = _expect_obj(obj, path)
    _check_keys(obj, {"service", "instance_fraction_bp", "instances"}, path)
    service = _get_str(obj, "service", path)
    if not service:
        raise RangeError(f"{path}.service", "must be nonempty")
    has_fraction = "instance_fraction_bp" in obj
    has_list = "instances" in obj
    if has_fraction == has_list:
        raise SchemaError(path, "exactly one of instance_fraction_bp or instances required")
    if has_fraction:
        fraction = _get_int(obj, "instance_fraction_bp", path, 1, 10000)
        return ScopeSelector(service=service, instance_fraction_bp=fraction)
    raw = obj["instances"]
    if not isinstance(raw, list) or not raw or not all(isinstance(x, str) and x for x in raw):
        raise SchemaError(f"{path}.instances", "expected nonempty list of instance ids")
    return ScopeSelector(service=service, instances=tuple(raw))


def parse_tolerance(obj: Any, path: str) -> Tolerance:
    obj = _expect_obj(obj, path)
    _check_keys(obj, {"min", "max"}, path)
    lo = _get_int(obj, "min", path) if "min" in obj else None
    hi = _get_int(obj, "max", path) if "max" in obj else None
    if lo is None and hi is None:
        raise SchemaError(path, "at least one of min or max required")
    if lo is not None and hi is not None and lo > hi:
        raise RangeError(path, f"min {lo} exceeds max {hi}")
    return Tolerance(min=lo, max=hi)


def parse_probe(obj: Any, path: str) -> Probe:
    obj = _expect_obj(obj, path)
    _check_keys(obj, {"metric", "window_ms", "tolerance"}, path)
    metric_obj = _expect_obj(_get(obj, "metric", path), f"{path}.metric")
    _check_keys(metric_obj, {"service", "kind"}, f"{path}.metric")
    service = _get_str(metric_obj, "service", f"{path}.metric")
    kind_str = _get_str(metric_obj, "kind", f"{path}.metric")
    try:
        kind = MetricKind(kind_str)
    except ValueError:
        raise SchemaError(f"{path}.metric.kind", f"unknown metric kind {kind_str!r}") from None
    window_ms = _get_int(obj, "window_ms", path, 1)
    tolerance = parse_tolerance(_get(obj, "tolerance", path), f"{path}.tolerance")
    return Probe(metric=MetricSelector(service, kind), window_ms=window_ms, tolerance=tolerance)


def parse_hypothesis(obj: Any, path: str) -> SteadyStateHypothesis:
    obj = _expect_obj(obj, path)
    _check_keys(obj, {"probes", "baseline_window_ms", "evaluation_interval_ms"}, path)
    raw_probes = _get(obj, "probes", path)
    if not isinstance(raw_probes, list) or not raw_probes:
        raise SchemaError(f"{path}.probes", "expected nonempty list")
    probes = tuple(parse_probe(p, f"{path}.probes[{i}]") for i, p in enumerate(raw_probes))
    baseline = _get_int(obj, "baseline_window_ms", path, 1)
    interval = _get_int(obj, "evaluation_interval_ms", path, 1)
    if interval > baseline:
        raise RangeError(
            f"{path}.evaluation_interval_ms",
            f"interval {interval} exceeds baseline window {baseline}",
        )
    return SteadyStateHypothesis(probes=probes, baseline_window_ms=baseline, evaluation_interval_ms=interval)


def parse_experiment_dict(doc: Any) -> Experiment:
    """Build an Experiment from a decoded JSON document."""
    doc = _expect_obj(doc, "$")
    _check_keys(
        doc,
        {"id", "name", "target", "hypothesis", "stages", "rollback", "abort", "compliance", "seed"},
        "$",
    )
    exp_id = _get_str(doc, "id", "$")
    if not _ID_RE.match(exp_id):
        raise RangeError("$.id", f"must match [a-z0-9-]+, got {exp_id!r}")
    name = _get_str(doc, "name", "$")
    target = parse_scope(_get(doc, "target", "$"), "$.target")
    hypothesis = parse_hypothesis(_get(doc, "hypothesis", "$"), "$.hypothesis")

    raw_stages = _get(doc, "stages", "$")
    if not isinstance(raw_stages, list) or not raw_stages:
        raise SchemaError("$.stages", "expected nonempty list")
    stages = []
    for i, raw in enumerate(raw_stages):
        path = f"$.stages[{i}]"
        obj = _expect_obj(raw, path)
        _check_keys(obj, {"fault", "scope", "duration_ms"}, path)
        fault = parse_fault(_get(obj, "fault", path), f"{path}.fault")
        scope = parse_scope(_get(obj, "scope", path), f"{path}.scope")
        duration = _get_int(obj, "duration_ms", path, 1)
        if duration < hypothesis.evaluation_interval_ms:
            raise RangeError(
                f"{path}.duration_ms",
                f"stage shorter than evaluation interval ({duration} < {hypothesis.evaluation_interval_ms})",
            )
        stages.append(Stage(fault=fault, scope=scope, duration_ms=duration))

    rb_obj = _expect_obj(_get(doc, "rollback", "$"), "$.rollback")
    _check_keys(rb_obj, {"recovery_checks", "recovery_timeout_ms"}, "$.rollback")
    rollback = RollbackPolicy(
        recovery_checks=_get_int(rb_obj, "recovery_checks", "$.rollback", 1),
        recovery_timeout_ms=_get_int(rb_obj, "recovery_timeout_ms", "$.rollback", 1),
    )

    ab_obj = _expect_obj(_get(doc, "abort", "$"), "$.abort")
    _check_keys(ab_obj, {"max_consecutive_violations"}, "$.abort")
    abort = AbortPolicy(
        max_consecutive_violations=_get_int(ab_obj, "max_consecutive_violations", "$.abort", 1)
    )

    co_obj = _expect_obj(_get(doc, "compliance", "$"), "$.compliance")
    _check_keys(co_obj, {"approved_by", "approval_role", "data_class", "max_scope_bp"}, "$.compliance")
    dc_str = _get_str(co_obj, "data_class", "$.compliance")
    try:
        data_class = DataClass(dc_str)
    except ValueError:
        raise SchemaError("$.compliance.data_class", f"unknown data class {dc_str!r}") from None
    compliance = ComplianceMetadata(
        data_class=data_class,
        max_scope_bp=_get_int(co_obj, "max_scope_bp", "$.compliance", 1, 10000),
        approved_by=_get_str(co_obj, "approved_by", "$.compliance") if "approved_by" in co_obj else None,
        approval_role=_get_str(co_obj, "approval_role", "$.compliance") if "approval_role" in co_obj else None,
    )

    seed = _get_int(doc, "seed", "$", 0)
    if seed >= 1 << 64:
        raise RangeError("$.seed", "must fit in 64 bits")

    return Experiment(
        id=exp_id,
        name=name,
        target=target,
        hypothesis=hypothesis,
        stages=tuple(stages),
        rollback=rollback,
        abort=abort,
        compliance=compliance,
        seed=seed,
    )


def parse_experiment(document: str) -> Experiment:
    """Parse the canonical JSON experiment format."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise DocumentSyntaxError(f"malformed JSON: {exc}") from exc
    return parse_experiment_dict(doc)


def canonicalize(exp: Experiment) -> bytes:
    """Deterministic canonical bytes; equal experiments yield equal bytes."""
    return canon.dumps_bytes(exp.to_dict())
