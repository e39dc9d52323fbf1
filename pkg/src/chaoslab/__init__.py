"""chaoslab: declarative chaos experiments against a deterministic
service-mesh simulator or a real TCP fault proxy."""

from .audit import AuditChain, BUILTIN_CHECKS, compliance_report, run_checks, verify
from .catalog import assess_maturity, instantiate, list_scenarios, prioritize_backlog
from .model import Experiment, FaultKind, canonicalize, parse_experiment
from .orchestrator import ExperimentResult, ExperimentStatus, LifecycleState, dry_run, run_experiment
from .planner import plan_stages
from .resilience import HealthRule, availability, detect_incidents, evaluate_slos, summarize
from .simworld import World, build_world
from .steady import evaluate, measure_baseline, watch
from .store import ResultStore
from .topology import Topology, parse_topology
from .trace import Trace, sample_metric
from .validate import ValidationReport, validate_experiment

__version__ = "0.1.0"

__all__ = [
    "AuditChain",
    "BUILTIN_CHECKS",
    "Experiment",
    "ExperimentResult",
    "ExperimentStatus",
    "FaultKind",
    "HealthRule",
    "LifecycleState",
    "ResultStore",
    "Topology",
    "Trace",
    "ValidationReport",
    "World",
    "assess_maturity",
    "availability",
    "build_world",
    "canonicalize",
    "compliance_report",
    "detect_incidents",
    "dry_run",
    "evaluate",
    "evaluate_slos",
    "instantiate",
    "list_scenarios",
    "measure_baseline",
    "parse_experiment",
    "parse_topology",
    "plan_stages",
    "prioritize_backlog",
    "run_checks",
    "run_experiment",
    "sample_metric",
    "summarize",
    "validate_experiment",
    "verify",
    "watch",
]
