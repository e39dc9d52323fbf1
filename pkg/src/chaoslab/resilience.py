"""Resilience metrics from traces: incident detection with debounced
closure, MTTR/MTTD, availability in basis points, and SLO verdicts.

MTTR runs from failure onset to debounced recovery, the stricter of the two
common conventions. All means are truncated integer means.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .model import MetricKind, MetricSelector, Tolerance
from .trace import MetricSample, Trace, nearest_rank_p95


@dataclass(frozen=True)
class HealthRule:
    """Per-tick health predicate. A tick with no traffic is healthy: absence
    of evidence is not an outage (error-rate and latency terms only)."""

    service: str | None = None  # None = the trace's entry service
    max_error_rate_bp: int | None = 1000
    max_latency_p95_us: int | None = None
    tick_ms: int = 1000
    debounce_ticks: int = 3

    def resolve_service(self, trace: Trace) -> str:
        return self.service or trace.entry_service


@dataclass(frozen=True)
class Incident:
    t_fail_us: int
    t_recover_us: int | None  # None: still open at trace end
    t_detect_us: int | None  # None: no watcher evaluation caught it

    def to_dict(self) -> dict[str, Any]:
        return {
            "t_fail_us": self.t_fail_us,
            "t_recover_us": self.t_recover_us,
            "t_detect_us": self.t_detect_us,
        }


@dataclass(frozen=True)
class SloTarget:
    metric: MetricSelector
    objective: Tolerance
    window: tuple[int, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric.to_dict(),
            "objective": self.objective.to_dict(),
            "window": list(self.window),
        }


@dataclass(frozen=True)
class SloVerdict:
    target: SloTarget
    measured: int
    empty: bool
    passed: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "target": self.target.to_dict(),
            "measured": self.measured,
            "empty": self.empty,
            "passed": self.passed,
        }


def health_ticks(trace: Trace, rule: HealthRule, window: tuple[int, int]) -> list[bool]:
    """Health bit per full tick inside the window."""
    t0, t1 = window
    tick_us = rule.tick_ms * 1000
    n = (t1 - t0) // tick_us
    service = rule.resolve_service(trace)

    completions: list[list[int]] = [[] for _ in range(n)]
    failures = [0 for _ in range(n)]
    for e in trace.events:
        if e.service != service or not (t0 <= e.t_us < t0 + n * tick_us):
            continue
        idx = (e.t_us - t0) // tick_us
        if e.kind == "complete":
            completions[idx].append(e.detail["latency_us"])
        elif e.kind == "fail":
            failures[idx] += 1

    bits = []
    for i in range(n):
        healthy = True
        denom = len(completions[i]) + failures[i]
        if rule.max_error_rate_bp is not None and denom > 0:
            if 10000 * failures[i] // denom > rule.max_error_rate_bp:
                healthy = False
        if healthy and rule.max_latency_p95_us is not None and completions[i]:
            if nearest_rank_p95(sorted(completions[i])) > rule.max_latency_p95_us:
                healthy = False
        bits.append(healthy)
    return bits


def incidents_from_bits(bits: list[bool], debounce_ticks: int) -> list[tuple[int, int | None]]:
    """Maximal unhealthy intervals with debounced closure, as
    (fail_tick, recover_tick | None) pairs. An incident closes at the start
    of the first healthy run of at least debounce_ticks ticks."""
    incidents = []
    i = 0
    n = len(bits)
    while i < n:
        if bits[i]:
            i += 1
            continue
        fail = i
        recover = None
        j = i + 1
        while j < n:
            if bits[j]:
                run = 0
                while j + run < n and bits[j + run]:
                    run += 1
                if run >= debounce_ticks:
                    recover = j
                    break
                j += run
            else:
                j += 1
        incidents.append((fail, recover))
        if recover is None:
            break
        i = recover + debounce_ticks
    return incidents


def detect_incidents(
    trace: Trace,
    rule: HealthRule,
    watcher_records: list[tuple[int, bool]] | tuple[tuple[int, bool], ...] = (),
    window: tuple[int, int] | None = None,
) -> list[Incident]:
    """Incidents under the health rule; detection times joined from watcher
    evaluations (t_us, passed)."""
    if window is None:
        window = trace.span()
    t0, _ = window
    tick_us = rule.tick_ms * 1000
    bits = health_ticks(trace, rule, window)
    failing = sorted(t for t, passed in watcher_records if not passed)

    out = []
    for fail_tick, recover_tick in incidents_from_bits(bits, rule.debounce_ticks):
        t_fail = t0 + fail_tick * tick_us
        t_recover = t0 + recover_tick * tick_us if recover_tick is not None else None
        t_detect = None
        for t in failing:
            if t >= t_fail and (t_recover is None or t < t_recover):
                t_detect = t
                break
        out.append(Incident(t_fail_us=t_fail, t_recover_us=t_recover, t_detect_us=t_detect))
    return out


def summarize(incidents: list[Incident]) -> dict[str, Any]:
    """Truncated-mean MTTR over closed incidents and MTTD over detected ones."""
    recoveries = [i.t_recover_us - i.t_fail_us for i in incidents if i.t_recover_us is not None]
    detections = [i.t_detect_us - i.t_fail_us for i in incidents if i.t_detect_us is not None]
    return {
        "count": len(incidents),
        "mttr_us": sum(recoveries) // len(recoveries) if recoveries else None,
        "mttd_us": sum(detections) // len(detections) if detections else None,
    }


def availability(trace: Trace, rule: HealthRule, window: tuple[int, int]) -> MetricSample:
    """Healthy-tick fraction over the window, in basis points."""
    bits = health_ticks(trace, rule, window)
    if not bits:
        return MetricSample(0, True)
    return MetricSample(10000 * sum(bits) // len(bits), False)


def evaluate_slos(trace: Trace, targets: list[SloTarget]) -> list[SloVerdict]:
    from .steady import reading_passes
    from .trace import sample_metric

    verdicts = []
    for target in targets:
        sample = sample_metric(trace, target.metric, target.window)
        dev = reading_passes(target.metric.kind, target.objective, sample.value, sample.empty)
        verdicts.append(
            SloVerdict(target=target, measured=sample.value, empty=sample.empty, passed=dev is None)
        )
    return verdicts
