"""Blast-radius stage planner: resolve fractional scopes to concrete
instances and reject plans whose affected count ever shrinks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .drivers.base import DriverContract
from .errors import PlanError
from .model import Experiment, Stage

NONDECREASING_SCOPE = "NONDECREASING_SCOPE"


@dataclass(frozen=True)
class PlannedStage:
    index: int
    stage: Stage
    instances: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "fault": self.stage.fault.to_dict(),
            "scope": self.stage.scope.to_dict(),
            "duration_ms": self.stage.duration_ms,
            "instances": list(self.instances),
        }


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[PlannedStage, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"stages": [s.to_dict() for s in self.stages]}


def plan_stages(exp: Experiment, driver: DriverContract) -> StagePlan:
    """Resolve every stage scope; affected counts must not decrease per service."""
    planned = []
    last_count: dict[str, int] = {}
    for i, stage in enumerate(exp.stages):
        instances = driver.resolve_scope(stage.scope)
        service = stage.scope.service
        count = len(instances)
        if service in last_count and count < last_count[service]:
            raise PlanError(
                NONDECREASING_SCOPE,
                f"stage {i} affects {count} instance(s) of {service!r}, "
                f"fewer than the previous stage ({last_count[service]})",
            )
        last_count[service] = count
        planned.append(PlannedStage(index=i, stage=stage, instances=instances))
    return StagePlan(stages=tuple(planned))
