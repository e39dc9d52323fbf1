"""Predefined chaos scenarios, backlog prioritization, and the maturity
assessment.

The maturity rubric (two axes: sophistication and adoption, four levels
each) is this toolkit's own operationalization of the classic maturity-model
idea; treat the levels as working guidance, not an external standard.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from .errors import DocumentSyntaxError, ParamRangeError, RangeError, SchemaError, UnknownScenario
from .model import Experiment, parse_experiment_dict
from .store import RunSummary


@dataclass(frozen=True)
class Param:
    name: str
    unit: str
    default: Any
    min: int | None = None
    max: int | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "unit": self.unit, "default": self.default}
        if self.min is not None:
            out["min"] = self.min
        if self.max is not None:
            out["max"] = self.max
        return out


@dataclass(frozen=True)
class Scenario:
    id: str
    title: str
    description: str
    params: tuple[Param, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "description": self.description,
            "params": [p.to_dict() for p in self.params],
            "template": _build_doc(self.id, {p.name: p.default for p in self.params}),
        }


def _probes(service: str, max_latency_us: int, max_error_bp: int) -> list[dict[str, Any]]:
    return [
        {
            "metric": {"service": service, "kind": "latency_mean_us"},
            "window_ms": 1000,
            "tolerance": {"max": max_latency_us},
        },
        {
            "metric": {"service": service, "kind": "error_rate_bp"},
            "window_ms": 1000,
            "tolerance": {"max": max_error_bp},
        },
    ]


def _doc(scenario_id: str, name: str, service: str, probes, stages, seed: int) -> dict[str, Any]:
    return {
        "id": scenario_id,
        "name": name,
        "target": {"service": service, "instance_fraction_bp": 10000},
        "hypothesis": {
            "probes": probes,
            "baseline_window_ms": 2000,
            "evaluation_interval_ms": 500,
        },
        "stages": stages,
        "rollback": {"recovery_checks": 2, "recovery_timeout_ms": 8000},
        "abort": {"max_consecutive_violations": 2},
        "compliance": {"data_class": "synthetic", "max_scope_bp": 10000},
        "seed": seed,
    }


def _stage(fault: dict[str, Any], service: str, scope_bp: int, duration_ms: int) -> dict[str, Any]:
    return {
        "fault": fault,
        "scope": {"service": service, "instance_fraction_bp": scope_bp},
        "duration_ms": duration_ms,
    }


def _build_doc(scenario_id: str, p: dict[str, Any]) -> dict[str, Any]:
    if scenario_id == "network-latency":
        svc = p["service"]
        fault = {"kind": "network_latency", "delay_us": p["delay_us"], "jitter_us": p["jitter_us"]}
        stages = [_stage(fault, svc, bp, p["stage_duration_ms"]) for bp in (1000, 2500, 5000)]
        return _doc(scenario_id, "Ramped network latency", svc, _probes(svc, p["max_latency_us"], 9000), stages, p["seed"])
    if scenario_id == "packet-loss":
        svc = p["service"]
        fault = {"kind": "packet_loss", "prob_bp": p["prob_bp"]}
        stages = [_stage(fault, svc, bp, p["stage_duration_ms"]) for bp in (1000, 2500)]
        return _doc(scenario_id, "Ramped packet loss", svc, _probes(svc, p["max_latency_us"], p["max_error_bp"]), stages, p["seed"])
    if scenario_id == "instance-kill":
        svc = p["service"]
        fault = {"kind": "instance_kill", "down_for_ms": p["down_for_ms"]}
        stages = [_stage(fault, svc, 1000, p["stage_duration_ms"])]
        return _doc(scenario_id, "Kill an instance", svc, _probes(svc, 10_000_000, 9500), stages, p["seed"])
    if scenario_id == "cpu-stress":
        svc = p["service"]
        fault = {"kind": "cpu_stress", "service_time_factor_pct": p["factor_pct"]}
        stages = [_stage(fault, svc, bp, p["stage_duration_ms"]) for bp in (1000, 5000)]
        return _doc(scenario_id, "CPU stress", svc, _probes(svc, p["max_latency_us"], 9000), stages, p["seed"])
    if scenario_id == "memory-exhaustion":
        svc = p["service"]
        fault = {"kind": "memory_exhaustion", "crash_after_ms": p["crash_after_ms"]}
        stages = [_stage(fault, svc, 1000, p["stage_duration_ms"])]
        return _doc(scenario_id, "Memory exhaustion crash", svc, _probes(svc, 10_000_000, 9500), stages, p["seed"])
    if scenario_id == "dependency-failure":
        svc = p["service"]
        fault = {"kind": "service_dependency_failure", "dependency": p["dependency"]}
        stages = [_stage(fault, svc, 1000, p["stage_duration_ms"])]
        return _doc(scenario_id, "Dependency blackout", svc, _probes(svc, 10_000_000, 9500), stages, p["seed"])
    raise UnknownScenario(scenario_id)


_COMMON = (
    Param("service", "name", "frontend"),
    Param("stage_duration_ms", "ms", 2000, 500, 600_000),
    Param("seed", "u64", 42, 0, (1 << 64) - 1),
)

SCENARIOS: tuple[Scenario, ...] = (
    Scenario(
        "network-latency",
        "Ramped network latency",
        "Adds fixed delay (plus optional jitter) to every message toward the target service, widening the blast radius over three stages.",
        _COMMON
        + (
            Param("delay_us", "us", 100_000, 1000, 10_000_000),
            Param("jitter_us", "us", 0, 0, 1_000_000),
            Param("max_latency_us", "us", 1_000_000, 1, 60_000_000),
        ),
    ),
    Scenario(
        "packet-loss",
        "Ramped packet loss",
        "Drops messages toward the target service with the given probability; callers observe timeouts and retry.",
        _COMMON
        + (
            Param("prob_bp", "bp", 500, 0, 10000),
            Param("max_latency_us", "us", 1_000_000, 1, 60_000_000),
            Param("max_error_bp", "bp", 9000, 0, 10000),
        ),
    ),
    Scenario(
        "instance-kill",
        "Kill an instance",
        "Takes one instance of the target service down for the stage (the pod-failure analog); reverting restarts it.",
        (
            Param("service", "name", "backend"),
            Param("stage_duration_ms", "ms", 2000, 500, 600_000),
            Param("seed", "u64", 42, 0, (1 << 64) - 1),
            Param("down_for_ms", "ms", 60_000, 100, 600_000),
        ),
    ),
    Scenario(
        "cpu-stress",
        "CPU stress",
        "Multiplies the target's service time, modelling CPU contention, over a two-stage ramp.",
        _COMMON
        + (
            Param("factor_pct", "pct", 300, 100, 10000),
            Param("max_latency_us", "us", 1_000_000, 1, 60_000_000),
        ),
    ),
    Scenario(
        "memory-exhaustion",
        "Memory exhaustion crash",
        "The instance accepts work normally, then crashes after the configured delay; only the revert restarts it.",
        (
            Param("service", "name", "backend"),
            Param("stage_duration_ms", "ms", 2000, 500, 600_000),
            Param("seed", "u64", 42, 0, (1 << 64) - 1),
            Param("crash_after_ms", "ms", 500, 0, 60_000),
        ),
    ),
    Scenario(
        "dependency-failure",
        "Dependency blackout",
        "All calls from the target service to the named dependency fail instantly.",
        (
            Param("service", "name", "frontend"),
            Param("stage_duration_ms", "ms", 2000, 500, 600_000),
            Param("seed", "u64", 42, 0, (1 << 64) - 1),
            Param("dependency", "name", "backend"),
        ),
    ),
)


def list_scenarios() -> tuple[Scenario, ...]:
    return SCENARIOS


def get_scenario(scenario_id: str) -> Scenario:
    for s in SCENARIOS:
        if s.id == scenario_id:
            return s
    raise UnknownScenario(scenario_id)


def instantiate(scenario_id: str, params: dict[str, Any] | None = None) -> Experiment:
    """Scenario template with params substituted; the result satisfies every
    experiment invariant or this raises."""
    scenario = get_scenario(scenario_id)
    declared = {p.name: p for p in scenario.params}
    merged = {p.name: p.default for p in scenario.params}
    for name, value in (params or {}).items():
        if name not in declared:
            raise ParamRangeError(name, "unknown parameter")
        decl = declared[name]
        if decl.min is not None or decl.max is not None:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ParamRangeError(name, "expected integer")
            if decl.min is not None and value < decl.min:
                raise ParamRangeError(name, f"must be >= {decl.min}, got {value}")
            if decl.max is not None and value > decl.max:
                raise ParamRangeError(name, f"must be <= {decl.max}, got {value}")
        merged[name] = value
    return parse_experiment_dict(_build_doc(scenario_id, merged))


# ---------------------------------------------------------------------------
# Backlog prioritization.


@dataclass(frozen=True)
class BacklogEntry:
    id: str
    component: str
    impact: int
    likelihood: int
    notes: str = ""

    @property
    def score(self) -> int:
        return self.impact * self.likelihood

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "component": self.component,
            "impact": self.impact,
            "likelihood": self.likelihood,
            "notes": self.notes,
            "score": self.score,
        }


def parse_backlog(document: str) -> list[BacklogEntry]:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise DocumentSyntaxError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise SchemaError("$", "expected a list of backlog entries")
    entries = []
    for i, raw in enumerate(doc):
        path = f"$[{i}]"
        if not isinstance(raw, dict):
            raise SchemaError(path, "expected object")
        for key in ("id", "component", "impact", "likelihood"):
            if key not in raw:
                raise SchemaError(f"{path}.{key}", "missing required field")
        impact, likelihood = raw["impact"], raw["likelihood"]
        for key, value in (("impact", impact), ("likelihood", likelihood)):
            if not isinstance(value, int) or not 1 <= value <= 5:
                raise RangeError(f"{path}.{key}", f"must be an integer in 1..5, got {value!r}")
        entries.append(
            BacklogEntry(
                id=str(raw["id"]),
                component=str(raw["component"]),
                impact=impact,
                likelihood=likelihood,
                notes=str(raw.get("notes", "")),
            )
        )
    return entries


def prioritize_backlog(entries: list[BacklogEntry]) -> list[BacklogEntry]:
    """Descending impact x likelihood; ties broken by id ascending."""
    return sorted(entries, key=lambda e: (-e.score, e.id))


# ---------------------------------------------------------------------------
# Maturity assessment.


@dataclass(frozen=True)
class MaturityAssessment:
    sophistication_level: int
    adoption_level: int
    phase: str
    evidence: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "sophistication_level": self.sophistication_level,
            "adoption_level": self.adoption_level,
            "phase": self.phase,
            "evidence": list(self.evidence),
        }


_EXECUTED = {"hypothesis_held", "hypothesis_violated", "aborted"}


def assess_maturity(history: list[RunSummary]) -> MaturityAssessment:
    """Two-axis level climb over stored run summaries."""
    runs = [r for r in history if r.status in _EXECUTED]
    evidence = []

    soph = 1
    if runs:
        evidence.append(f"{len(runs)} executed run(s)")
        recent = sorted(runs, key=lambda r: r.started_at_us)[-10:]
        if all(r.has_rollback_records for r in recent):
            soph = 2
            evidence.append("recent runs carry hypothesis and rollback records")
            if any(r.stage_count >= 2 for r in runs):
                soph = 3
                evidence.append("multi-stage ramped blast radius in use")
                if len({r.driver for r in runs}) >= 2:
                    soph = 4
                    evidence.append("runs against multiple drivers")

    services = {s for r in runs for s in r.services}
    configs = {r.config_digest for r in runs}
    recurring = any(
        sum(1 for r in runs if r.recurring_key == key) >= 3 for key in {r.recurring_key for r in runs}
    )
    adoption = 1
    if services:
        evidence.append(f"{len(services)} service(s) targeted")
        if len(services) >= 3:
            adoption = 2
            if len(configs) >= 2:
                adoption = 3
                evidence.append(f"{len(configs)} distinct target configurations")
                if len(services) >= 5 and recurring:
                    adoption = 4
                    evidence.append("five or more services with recurring runs")

    if not runs:
        phase = "Discovery"
    elif adoption >= 3:
        phase = "Expansion"
    elif soph >= 3:
        phase = "Sophistication"
    else:
        phase = "Implementation"
    return MaturityAssessment(
        sophistication_level=soph,
        adoption_level=adoption,
        phase=phase,
        evidence=tuple(evidence),
    )
