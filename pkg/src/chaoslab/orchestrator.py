"""Experiment lifecycle state machine.

Validate -> Baseline -> per-stage Inject/Observe -> Revert -> Recovery check
-> terminal. A watch violation aborts: everything active is reverted at once
and remaining stages never run. Every transition and injection is audited,
and revert_all executes on every exit path, including internal errors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable

from .audit import AuditChain
from .drivers.base import DriverContract
from .errors import ChaosError, DriverIoError, PlanError, ScopeError, SourceError
from .model import Experiment, MetricKind, MetricSelector
from .planner import StagePlan, plan_stages
from .resilience import HealthRule, Incident, SloTarget, availability, detect_incidents, evaluate_slos, summarize
from .steady import (
    EvaluationVerdict,
    MetricSource,
    SteadyStateSnapshot,
    Violation,
    WatchOutcome,
    evaluate,
    measure_baseline,
    read_probes,
    watch,
)
from .trace import sample_metric
from .validate import BASELINE_NOT_STEADY, Finding, ValidationContext, ValidationReport, validate_experiment

ACTOR = "orchestrator"


class LifecycleState(str, Enum):
    VALIDATING = "validating"
    MEASURING_BASELINE = "measuring_baseline"
    INJECTING = "injecting"
    OBSERVING = "observing"
    REVERTING = "reverting"
    VERIFYING_RECOVERY = "verifying_recovery"
    COMPLETED = "completed"
    ABORTED = "aborted"
    FAILED = "failed"


TERMINAL_STATES = {LifecycleState.COMPLETED, LifecycleState.ABORTED, LifecycleState.FAILED}

LEGAL_TRANSITIONS = {
    LifecycleState.VALIDATING: {LifecycleState.MEASURING_BASELINE, LifecycleState.REVERTING},
    LifecycleState.MEASURING_BASELINE: {LifecycleState.INJECTING, LifecycleState.REVERTING},
    LifecycleState.INJECTING: {LifecycleState.OBSERVING, LifecycleState.REVERTING},
    LifecycleState.OBSERVING: {LifecycleState.INJECTING, LifecycleState.REVERTING},
    LifecycleState.REVERTING: {LifecycleState.VERIFYING_RECOVERY} | TERMINAL_STATES,
    LifecycleState.VERIFYING_RECOVERY: TERMINAL_STATES,
}


class ExperimentStatus(str, Enum):
    HYPOTHESIS_HELD = "hypothesis_held"
    HYPOTHESIS_VIOLATED = "hypothesis_violated"
    ABORTED = "aborted"
    CONFIG_INVALID = "config_invalid"
    DRIVER_FAILED = "driver_failed"


@dataclass(frozen=True)
class StageRecord:
    index: int
    fault_kind: str
    scope: dict[str, Any]
    records: tuple[Any, ...]  # WatchRecord per evaluation
    violation: Violation | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "fault_kind": self.fault_kind,
            "scope": self.scope,
            "evaluations": [r.to_dict() for r in self.records],
            "violation": self.violation.to_dict() if self.violation else None,
        }


@dataclass(frozen=True)
class ResilienceSummary:
    incident_count: int
    mttr_us: int | None
    mttd_us: int | None
    availability_bp: int | None
    error_rate_bp: int | None
    incidents: tuple[Incident, ...]
    slos: tuple[Any, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "incident_count": self.incident_count,
            "mttr_us": self.mttr_us,
            "mttd_us": self.mttd_us,
            "availability_bp": self.availability_bp,
            "error_rate_bp": self.error_rate_bp,
            "incidents": [i.to_dict() for i in self.incidents],
            "slos": [s.to_dict() for s in self.slos],
        }


@dataclass(frozen=True)
class ExperimentResult:
    experiment_id: str
    status: ExperimentStatus
    driver: str
    seed: int
    started_at_us: int
    ended_at_us: int
    baseline: SteadyStateSnapshot | None
    stages: tuple[StageRecord, ...]
    resilience: ResilienceSummary | None
    audit_head: str
    trace_digest: str | None
    findings: tuple[Finding, ...]
    recovered: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "experiment_id": self.experiment_id,
            "status": self.status.value,
            "driver": self.driver,
            "seed": self.seed,
            "started_at_us": self.started_at_us,
            "ended_at_us": self.ended_at_us,
            "baseline": self.baseline.to_dict() if self.baseline else None,
            "stages": [s.to_dict() for s in self.stages],
            "resilience": self.resilience.to_dict() if self.resilience else None,
            "audit_head": self.audit_head,
            "trace_digest": self.trace_digest,
            "findings": [f.to_dict() for f in self.findings],
            "recovered": self.recovered,
        }


def dry_run(
    exp: Experiment,
    driver: DriverContract,
    audit: AuditChain | None = None,
    context: ValidationContext | None = None,
) -> tuple[ValidationReport, StagePlan | None]:
    """Validation plus the stage plan; never touches the target."""
    report = validate_experiment(exp, driver.capabilities(), context)
    plan = None
    if report.passed:
        try:
            plan = plan_stages(exp, driver)
        except (PlanError, ScopeError) as exc:
            code = exc.code if isinstance(exc, PlanError) else "SCOPE_RESOLUTION"
            report = ValidationReport(
                passed=False,
                findings=report.findings + (Finding(code, "error", str(exc)),),
            )
    if audit is not None:
        audit.append(ACTOR, "dry_run", {"experiment": exp.id, "passed": report.passed})
    return report, plan


class _Run:
    def __init__(
        self,
        exp: Experiment,
        driver: DriverContract,
        source: MetricSource,
        audit: AuditChain,
        driver_name: str,
        context: ValidationContext | None,
        clock: Callable[[], int] | None,
        on_transition: Callable[[LifecycleState], None] | None,
        health_rule: HealthRule | None,
    ):
        self.exp = exp
        self.driver = driver
        self.source = source
        self.audit = audit
        self.driver_name = driver_name
        self.context = context or ValidationContext()
        self.clock = clock or (lambda: time.time_ns() // 1000)
        self.on_transition = on_transition
        self.health_rule = health_rule or HealthRule()

        self.state: LifecycleState | None = None
        self.baseline: SteadyStateSnapshot | None = None
        self.stage_records: list[StageRecord] = []
        self.watcher_records: list[tuple[int, bool]] = []
        self.findings: list[Finding] = []
        self.aborted = False
        self.violations = 0
        self.recovered = False
        self.started_at = self.clock()

    # -- state machine ------------------------------------------------------

    def _transition(self, state: LifecycleState, **detail: Any) -> None:
        if self.state is not None and state not in LEGAL_TRANSITIONS.get(self.state, set()):
            raise ChaosError(f"illegal transition {self.state.value} -> {state.value}")
        self.state = state
        self.audit.append(ACTOR, "state_transition", {"state": state.value, **detail})
        if self.on_transition is not None:
            self.on_transition(state)

    def execute(self) -> ExperimentResult:
        try:
            return self._execute()
        except BaseException:
            # Cleanup guarantee: whatever broke, nothing stays injected.
            try:
                count = self.driver.revert_all()
                self.audit.append(ACTOR, "revert_all", {"count": count, "cause": "exception"})
            except Exception as cleanup_exc:
                try:
                    self.audit.append(ACTOR, "alarm", {"cause": f"cleanup failed: {cleanup_exc}"})
                except Exception:
                    pass
            raise

    def _execute(self) -> ExperimentResult:
        self._transition(LifecycleState.VALIDATING)
        report = validate_experiment(self.exp, self.driver.capabilities(), self.context)
        self.audit.append(
            ACTOR,
            "validated",
            {"experiment": self.exp.id, "passed": report.passed, "findings": [f.to_dict() for f in report.findings]},
        )
        self.findings.extend(report.findings)
        if not report.passed:
            return self._finish(ExperimentStatus.CONFIG_INVALID, verify_recovery=False)

        try:
            plan = plan_stages(self.exp, self.driver)
        except PlanError as exc:
            self.findings.append(Finding(exc.code, "error", str(exc)))
            return self._finish(ExperimentStatus.CONFIG_INVALID, verify_recovery=False)
        except ScopeError as exc:
            self.findings.append(Finding("SCOPE_RESOLUTION", "error", str(exc)))
            return self._finish(ExperimentStatus.DRIVER_FAILED, verify_recovery=False)

        self._transition(LifecycleState.MEASURING_BASELINE)
        hyp = self.exp.hypothesis
        self.source.advance(hyp.baseline_window_ms)
        self.baseline = measure_baseline(hyp.probes, self.source, hyp.baseline_window_ms)
        baseline_verdict = evaluate(hyp, list(self.baseline.readings))
        self.audit.append(
            ACTOR,
            "baseline",
            {"taken_at_us": self.baseline.taken_at_us, "passed": baseline_verdict.passed},
        )
        if not baseline_verdict.passed:
            # Injecting into an already-unhealthy system is refused.
            self.findings.append(
                Finding(BASELINE_NOT_STEADY, "error", "steady state violated before any injection")
            )
            return self._finish(ExperimentStatus.CONFIG_INVALID, verify_recovery=False)

        for planned in plan.stages:
            stage = planned.stage
            self._transition(LifecycleState.INJECTING, stage=planned.index)
            try:
                handle = self.driver.inject(stage.fault, planned.instances)
            except ChaosError as exc:
                self.findings.append(Finding("INJECT_FAILED", "error", str(exc)))
                return self._finish(ExperimentStatus.DRIVER_FAILED)
            self.audit.append(
                ACTOR,
                "inject",
                {
                    "stage": planned.index,
                    "fault": stage.fault.kind.value,
                    "handle": handle.handle_id,
                    "instances": list(planned.instances),
                },
            )

            self._transition(LifecycleState.OBSERVING, stage=planned.index)
            outcome = watch(hyp, self.source, self.exp.abort, stage.duration_ms)
            self._record_stage(planned.index, stage, outcome)
            if outcome.violation is not None:
                self.audit.append(
                    ACTOR,
                    "abort",
                    {"stage": planned.index, "at_us": outcome.violation.at_us},
                )
                self.aborted = True
                break

            try:
                self.driver.revert(handle)
            except ChaosError as exc:
                self.findings.append(Finding("REVERT_FAILED", "error", str(exc)))
                return self._finish(ExperimentStatus.DRIVER_FAILED)
            self.audit.append(ACTOR, "revert", {"stage": planned.index, "handle": handle.handle_id})

        return self._finish(None)

    def _record_stage(self, index: int, stage, outcome: WatchOutcome) -> None:
        self.stage_records.append(
            StageRecord(
                index=index,
                fault_kind=stage.fault.kind.value,
                scope=stage.scope.to_dict(),
                records=outcome.records,
                violation=outcome.violation,
            )
        )
        for rec in outcome.records:
            self.watcher_records.append((rec.t_us, rec.verdict.passed))
            if not rec.verdict.passed:
                self.violations += 1

    def _finish(self, forced_status: ExperimentStatus | None, verify_recovery: bool = True) -> ExperimentResult:
        self._transition(LifecycleState.REVERTING)
        reverts_ok = True
        try:
            count = self.driver.revert_all()
            self.audit.append(ACTOR, "revert_all", {"count": count})
        except DriverIoError as exc:
            reverts_ok = False
            self.audit.append(ACTOR, "alarm", {"cause": str(exc), "remaining": exc.remaining})

        status = forced_status
        if not reverts_ok:
            status = ExperimentStatus.DRIVER_FAILED
        elif status is None:
            if verify_recovery:
                self._transition(LifecycleState.VERIFYING_RECOVERY)
                self.recovered = self._verify_recovery()
            if not self.recovered:
                # Reverts succeeded but the system did not return to steady
                # state in time: the hypothesis did not hold.
                status = ExperimentStatus.HYPOTHESIS_VIOLATED
            elif self.aborted:
                status = ExperimentStatus.ABORTED
            elif self.violations > 0:
                status = ExperimentStatus.HYPOTHESIS_VIOLATED
            else:
                status = ExperimentStatus.HYPOTHESIS_HELD

        terminal = {
            ExperimentStatus.HYPOTHESIS_HELD: LifecycleState.COMPLETED,
            ExperimentStatus.HYPOTHESIS_VIOLATED: LifecycleState.COMPLETED,
            ExperimentStatus.ABORTED: LifecycleState.ABORTED,
            ExperimentStatus.CONFIG_INVALID: LifecycleState.FAILED,
            ExperimentStatus.DRIVER_FAILED: LifecycleState.FAILED,
        }[status]
        self._transition(terminal, status=status.value)
        return self._result(status)

    def _verify_recovery(self) -> bool:
        hyp = self.exp.hypothesis
        interval = hyp.evaluation_interval_ms
        timeout = self.exp.rollback.recovery_timeout_ms
        needed = self.exp.rollback.recovery_checks
        consecutive = 0
        elapsed = 0
        while elapsed + interval <= timeout:
            self.source.advance(interval)
            elapsed += interval
            t = self.source.now_us()
            try:
                readings = read_probes(hyp.probes, self.source, t)
                verdict = evaluate(hyp, list(readings))
            except SourceError:
                verdict = EvaluationVerdict(passed=False, deviations=())
            self.watcher_records.append((t, verdict.passed))
            self.audit.append(ACTOR, "check_run", {"recovery_eval_us": t, "passed": verdict.passed})
            consecutive = consecutive + 1 if verdict.passed else 0
            if consecutive >= needed:
                return True
        return False

    def _result(self, status: ExperimentStatus) -> ExperimentResult:
        resilience = None
        trace_digest = None
        trace_fn = getattr(self.source, "trace", None)
        if trace_fn is not None:
            trace = trace_fn()
            trace_digest = trace.digest()
            window = (0, self.source.now_us())
            if window[1] > 0:
                incidents = detect_incidents(trace, self.health_rule, self.watcher_records, window)
                stats = summarize(incidents)
                avail = availability(trace, self.health_rule, window)
                err = sample_metric(
                    trace, MetricSelector(trace.entry_service, MetricKind.ERROR_RATE_BP), window
                )
                slos = evaluate_slos(
                    trace,
                    [SloTarget(p.metric, p.tolerance, window) for p in self.exp.hypothesis.probes],
                )
                resilience = ResilienceSummary(
                    incident_count=stats["count"],
                    mttr_us=stats["mttr_us"],
                    mttd_us=stats["mttd_us"],
                    availability_bp=None if avail.empty else avail.value,
                    error_rate_bp=None if err.empty else err.value,
                    incidents=tuple(incidents),
                    slos=tuple(slos),
                )
        return ExperimentResult(
            experiment_id=self.exp.id,
            status=status,
            driver=self.driver_name,
            seed=self.exp.seed,
            started_at_us=self.started_at,
            ended_at_us=self.clock(),
            baseline=self.baseline,
            stages=tuple(self.stage_records),
            resilience=resilience,
            audit_head=self.audit.head_hash,
            trace_digest=trace_digest,
            findings=tuple(self.findings),
            recovered=self.recovered,
        )


def run_experiment(
    exp: Experiment,
    driver: DriverContract,
    source: MetricSource,
    audit: AuditChain,
    *,
    driver_name: str = "sim",
    context: ValidationContext | None = None,
    clock: Callable[[], int] | None = None,
    on_transition: Callable[[LifecycleState], None] | None = None,
    health_rule: HealthRule | None = None,
) -> ExperimentResult:
    """Run the full lifecycle; failures come back encoded in the status."""
    run = _Run(exp, driver, source, audit, driver_name, context, clock, on_transition, health_rule)
    return run.execute()
