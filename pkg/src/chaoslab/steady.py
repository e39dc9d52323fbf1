"""Steady-state hypothesis work: baseline measurement, tolerance evaluation,
and deviation watching during injection.

Evaluation windows trail the evaluation instant. Empty windows pass by
default (no traffic is not evidence of unhealth), except throughput probes
with a min bound, where silence means zero throughput and is judged as such.
An unavailable metric source never counts as a pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Protocol

from .errors import InsufficientData, SourceError
from .model import MetricKind, MetricSelector, Probe, SteadyStateHypothesis, Tolerance
from .trace import MetricSample


class MetricSource(Protocol):
    """Where probe values come from: a sim world or live proxy counters."""

    def now_us(self) -> int: ...

    def advance(self, duration_ms: int) -> None:
        """Let duration_ms of target time pass (sim time or wall clock)."""

    def sample(self, selector: MetricSelector, window: tuple[int, int]) -> MetricSample: ...


@dataclass(frozen=True)
class ProbeReading:
    probe_index: int
    value: int
    empty: bool

    def to_dict(self) -> dict[str, Any]:
        return {"probe_index": self.probe_index, "value": self.value, "empty": self.empty}


@dataclass(frozen=True)
class SteadyStateSnapshot:
    taken_at_us: int
    window: tuple[int, int]
    readings: tuple[ProbeReading, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "taken_at_us": self.taken_at_us,
            "window": list(self.window),
            "readings": [r.to_dict() for r in self.readings],
        }


@dataclass(frozen=True)
class Deviation:
    probe_index: int
    value: int
    bound: str  # "min" | "max" | "source_error"
    magnitude: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "probe_index": self.probe_index,
            "value": self.value,
            "bound": self.bound,
            "magnitude": self.magnitude,
        }


@dataclass(frozen=True)
class EvaluationVerdict:
    passed: bool
    deviations: tuple[Deviation, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "deviations": [d.to_dict() for d in self.deviations]}


def reading_passes(kind: MetricKind, tolerance: Tolerance, value: int, empty: bool) -> Deviation | None:
    """None when within tolerance; otherwise the deviation."""
    if empty and not (kind is MetricKind.THROUGHPUT_RPM and tolerance.min is not None):
        return None
    if tolerance.min is not None and value < tolerance.min:
        return Deviation(0, value, "min", tolerance.min - value)
    if tolerance.max is not None and value > tolerance.max:
        return Deviation(0, value, "max", value - tolerance.max)
    return None


def evaluate(hypothesis: SteadyStateHypothesis, readings: list[ProbeReading]) -> EvaluationVerdict:
    """Inclusive-bound check of one reading per probe."""
    deviations = []
    for probe, reading in zip(hypothesis.probes, readings):
        dev = reading_passes(probe.metric.kind, probe.tolerance, reading.value, reading.empty)
        if dev is not None:
            deviations.append(
                Deviation(reading.probe_index, reading.value, dev.bound, dev.magnitude)
            )
    return EvaluationVerdict(passed=not deviations, deviations=tuple(deviations))


def read_probes(probes: tuple[Probe, ...], source: MetricSource, end_us: int, window_us: int | None = None) -> tuple[ProbeReading, ...]:
    readings = []
    for i, probe in enumerate(probes):
        span = window_us if window_us is not None else probe.window_ms * 1000
        sample = source.sample(probe.metric, (max(0, end_us - span), end_us))
        readings.append(ProbeReading(probe_index=i, value=sample.value, empty=sample.empty))
    return tuple(readings)


def measure_baseline(probes: tuple[Probe, ...], source: MetricSource, baseline_window_ms: int) -> SteadyStateSnapshot:
    """Snapshot every probe over the trailing baseline window. The caller is
    responsible for warming the source up first."""
    now = source.now_us()
    window_us = baseline_window_ms * 1000
    if now < window_us:
        raise InsufficientData(
            f"source covers {now} us, baseline window needs {window_us} us"
        )
    readings = read_probes(probes, source, now, window_us=window_us)
    return SteadyStateSnapshot(taken_at_us=now, window=(now - window_us, now), readings=readings)


@dataclass(frozen=True)
class WatchRecord:
    t_us: int
    verdict: EvaluationVerdict
    readings: tuple[ProbeReading, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "t_us": self.t_us,
            "verdict": self.verdict.to_dict(),
            "readings": [r.to_dict() for r in self.readings],
        }


@dataclass(frozen=True)
class Violation:
    at_us: int
    eval_index: int
    consecutive: int
    source_error: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "at_us": self.at_us,
            "eval_index": self.eval_index,
            "consecutive": self.consecutive,
            "source_error": self.source_error,
        }


@dataclass(frozen=True)
class WatchOutcome:
    records: tuple[WatchRecord, ...]
    violation: Violation | None

    @property
    def clean(self) -> bool:
        return self.violation is None


def watch(
    hypothesis: SteadyStateHypothesis,
    source: MetricSource,
    abort_policy,
    duration_ms: int,
) -> WatchOutcome:
    """Observe for duration_ms, evaluating every evaluation interval over
    trailing probe windows. Stops at the first point where consecutive
    violations reach the abort threshold; otherwise advances the full
    duration and reports every verdict."""
    interval = hypothesis.evaluation_interval_ms
    evaluations = duration_ms // interval
    threshold = abort_policy.max_consecutive_violations
    records: list[WatchRecord] = []
    consecutive = 0

    for k in range(evaluations):
        source.advance(interval)
        t = source.now_us()
        try:
            readings = read_probes(hypothesis.probes, source, t)
            verdict = evaluate(hypothesis, readings)
        except SourceError:
            # Fail-safe: an unreadable metric is a violation, never a pass.
            readings = ()
            verdict = EvaluationVerdict(passed=False, deviations=(Deviation(-1, 0, "source_error", 0),))
        records.append(WatchRecord(t_us=t, verdict=verdict, readings=readings))
        consecutive = 0 if verdict.passed else consecutive + 1
        if consecutive >= threshold:
            source_error = any(d.bound == "source_error" for d in verdict.deviations)
            return WatchOutcome(
                records=tuple(records),
                violation=Violation(at_us=t, eval_index=k, consecutive=consecutive, source_error=source_error),
            )

    remainder = duration_ms - evaluations * interval
    if remainder:
        source.advance(remainder)
    return WatchOutcome(records=tuple(records), violation=None)
