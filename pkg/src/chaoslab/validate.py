"""Pre-execution validation gate.

Four check families: every fault reversible by the driver, scopes safe
(within policy and nondecreasing), execution transparent (audit sink
configured), and impact minimal (narrow first stage unless acknowledged).
Always returns a report; never raises.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .model import Experiment

# Finding codes
UNSUPPORTED_FAULT = "UNSUPPORTED_FAULT"
NONDECREASING_SCOPE = "NONDECREASING_SCOPE"
SCOPE_EXCEEDS_POLICY = "SCOPE_EXCEEDS_POLICY"
NO_AUDIT_SINK = "NO_AUDIT_SINK"
WIDE_FIRST_STAGE = "WIDE_FIRST_STAGE"
BASELINE_NOT_STEADY = "BASELINE_NOT_STEADY"

# First-stage blast radius above this is flagged unless acknowledged.
FIRST_STAGE_WARN_BP = 1000


@dataclass(frozen=True)
class Finding:
    code: str
    severity: str  # "error" | "warning"
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {"code": self.code, "severity": self.severity, "message": self.message}


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    findings: tuple[Finding, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "findings": [f.to_dict() for f in self.findings]}


@dataclass(frozen=True)
class ValidationContext:
    """Run-site facts the gate needs beyond the experiment itself."""

    audit_sink_configured: bool = True
    acknowledge_wide_first_stage: bool = False


def _scope_fraction_bp(stage_scope) -> int | None:
    return stage_scope.instance_fraction_bp


def validate_experiment(exp: Experiment, caps, context: ValidationContext | None = None) -> ValidationReport:
    """Gate an experiment against driver capabilities and compliance policy."""
    context = context or ValidationContext()
    findings: list[Finding] = []

    # Reversible: every fault kind must be one the driver can undo.
    for i, stage in enumerate(exp.stages):
        if stage.fault.kind not in caps.reversible_kinds:
            findings.append(
                Finding(
                    UNSUPPORTED_FAULT,
                    "error",
                    f"stages[{i}]: driver cannot revert fault kind {stage.fault.kind.value!r}",
                )
            )

    # Safe: fractional scopes within policy and nondecreasing.
    for i, stage in enumerate(exp.stages):
        fraction = _scope_fraction_bp(stage.scope)
        if fraction is not None and fraction > exp.compliance.max_scope_bp:
            findings.append(
                Finding(
                    SCOPE_EXCEEDS_POLICY,
                    "error",
                    f"stages[{i}]: scope {fraction} bp exceeds policy max {exp.compliance.max_scope_bp} bp",
                )
            )
    fractions = [(i, f) for i, s in enumerate(exp.stages) if (f := _scope_fraction_bp(s.scope)) is not None]
    for (i, prev), (j, cur) in zip(fractions, fractions[1:]):
        if cur < prev:
            findings.append(
                Finding(
                    NONDECREASING_SCOPE,
                    "error",
                    f"stages[{j}]: scope {cur} bp narrower than stages[{i}] ({prev} bp); ramp must widen",
                )
            )

    # Transparent: run must be auditable.
    if not context.audit_sink_configured:
        findings.append(Finding(NO_AUDIT_SINK, "error", "no audit sink configured"))

    # Minimal impact: first stage should start small.
    first_fraction = _scope_fraction_bp(exp.stages[0].scope)
    if (
        first_fraction is not None
        and first_fraction > FIRST_STAGE_WARN_BP
        and not context.acknowledge_wide_first_stage
    ):
        findings.append(
            Finding(
                WIDE_FIRST_STAGE,
                "warning",
                f"first stage scope {first_fraction} bp exceeds {FIRST_STAGE_WARN_BP} bp; start smaller",
            )
        )

    passed = not any(f.severity == "error" for f in findings)
    return ValidationReport(passed=passed, findings=tuple(findings))
