"""Lifecycle state machine: status mapping, abort semantics, rollback
totality, audit ordering, and dry runs."""

from __future__ import annotations

import json

import pytest

from chaoslab.audit import AuditChain, verify
from chaoslab.drivers.sim import SimDriver, SimMetricSource
from chaoslab.model import parse_experiment_dict
from chaoslab.orchestrator import (
    LEGAL_TRANSITIONS,
    ExperimentStatus,
    LifecycleState,
    dry_run,
    run_experiment,
)
from chaoslab.simworld import build_world

from conftest import chain_topology, exp_doc


class Interrupt(BaseException):
    """Simulated crash delivered through the transition hook."""


def run_fixture(tmp_path, doc_overrides=None, topo=None, on_transition=None, name="chain.jsonl"):
    doc = exp_doc(**(doc_overrides or {}))
    exp = parse_experiment_dict(doc)
    world = build_world(topo or chain_topology(), exp.seed)
    driver = SimDriver(world)
    source = SimMetricSource(world)
    audit = AuditChain(tmp_path / name)
    try:
        result = run_experiment(exp, driver, source, audit, on_transition=on_transition)
    finally:
        audit.close()
    return result, (tmp_path / name).read_bytes(), driver


def chain_actions(chain_bytes):
    return [json.loads(line)["action"] for line in chain_bytes.splitlines()]


class TestStatuses:
    def test_within_tolerance_hypothesis_held(self, tmp_path):
        result, chain, driver = run_fixture(tmp_path)
        assert result.status is ExperimentStatus.HYPOTHESIS_HELD
        assert driver.active_handles() == []
        assert result.recovered
        assert len(result.stages) == 2
        assert all(r.verdict.passed for s in result.stages for r in s.records)
        assert verify(chain).ok
        assert result.trace_digest is not None
        assert result.resilience is not None and result.resilience.incident_count == 0

    def test_latency_beyond_tolerance_aborts_first_stage(self, tmp_path):
        overrides = {
            "hypothesis": {
                "probes": [
                    {
                        "metric": {"service": "frontend", "kind": "latency_mean_us"},
                        "window_ms": 1000,
                        "tolerance": {"max": 20_000},
                    }
                ],
                "baseline_window_ms": 2000,
                "evaluation_interval_ms": 500,
            }
        }
        result, chain, driver = run_fixture(tmp_path, overrides)
        assert result.status is ExperimentStatus.ABORTED
        assert driver.active_handles() == []
        assert len(result.stages) == 1  # stage 1 never ran
        assert result.stages[0].violation is not None
        actions = chain_actions(chain)
        assert actions.count("inject") == 1  # no later-stage inject records
        assert "abort" in actions

    def test_invalid_config_nothing_injected(self, tmp_path):
        doc = exp_doc()
        doc["stages"][0]["scope"]["instance_fraction_bp"] = 5000
        doc["stages"][1]["scope"]["instance_fraction_bp"] = 1000  # decreasing ramp
        result, chain, driver = run_fixture(tmp_path, doc_overrides=doc)
        assert result.status is ExperimentStatus.CONFIG_INVALID
        assert chain_actions(chain).count("inject") == 0
        assert driver.active_handles() == []
        assert result.baseline is None

    def test_unknown_service_driver_failed(self, tmp_path):
        doc = exp_doc()
        doc["stages"][0]["scope"] = {"service": "ghost", "instance_fraction_bp": 1000}
        doc["stages"][1]["scope"] = {"service": "ghost", "instance_fraction_bp": 1000}
        result, chain, _ = run_fixture(tmp_path, doc_overrides=doc)
        assert result.status is ExperimentStatus.DRIVER_FAILED
        assert chain_actions(chain).count("inject") == 0

    def test_violations_without_abort_is_hypothesis_violated(self, tmp_path):
        overrides = {
            "hypothesis": {
                "probes": [
                    {
                        "metric": {"service": "frontend", "kind": "latency_mean_us"},
                        "window_ms": 1000,
                        "tolerance": {"max": 20_000},
                    }
                ],
                "baseline_window_ms": 2000,
                "evaluation_interval_ms": 500,
            },
            "abort": {"max_consecutive_violations": 100},
        }
        result, _, _ = run_fixture(tmp_path, overrides)
        assert result.status is ExperimentStatus.HYPOTHESIS_VIOLATED
        assert result.recovered  # system healed, but deviations were observed

    def test_baseline_not_steady_refuses_to_inject(self, tmp_path):
        overrides = {
            "hypothesis": {
                "probes": [
                    {
                        "metric": {"service": "frontend", "kind": "latency_mean_us"},
                        "window_ms": 1000,
                        "tolerance": {"max": 1000},  # below the healthy baseline
                    }
                ],
                "baseline_window_ms": 2000,
                "evaluation_interval_ms": 500,
            }
        }
        result, chain, _ = run_fixture(tmp_path, overrides)
        assert result.status is ExperimentStatus.CONFIG_INVALID
        assert any(f.code == "BASELINE_NOT_STEADY" for f in result.findings)
        assert chain_actions(chain).count("inject") == 0

    def test_recovery_window_too_small_times_out(self, tmp_path):
        result, _, _ = run_fixture(
            tmp_path, {"rollback": {"recovery_checks": 2, "recovery_timeout_ms": 400}}
        )
        # Stages were clean, but recovery could never be verified in 400 ms
        # with 500 ms evaluation intervals.
        assert result.status is ExperimentStatus.HYPOTHESIS_VIOLATED
        assert not result.recovered


class TestStateMachine:
    def test_observed_transitions_are_legal(self, tmp_path):
        seen = []
        run_fixture(tmp_path, on_transition=seen.append)
        assert seen[0] is LifecycleState.VALIDATING
        for prev, cur in zip(seen, seen[1:]):
            assert cur in LEGAL_TRANSITIONS[prev], f"{prev} -> {cur}"
        assert seen[-1] in (LifecycleState.COMPLETED, LifecycleState.ABORTED, LifecycleState.FAILED)

    def test_stage_order_inject_revert_interleaving(self, tmp_path):
        _, chain, _ = run_fixture(tmp_path)
        actions = chain_actions(chain)
        first_inject = actions.index("inject")
        first_revert = actions.index("revert")
        second_inject = actions.index("inject", first_inject + 1)
        assert first_inject < first_revert < second_inject

    def test_every_inject_reverted_before_terminal(self, tmp_path):
        _, chain, _ = run_fixture(tmp_path)
        records = [json.loads(line) for line in chain.splitlines()]
        terminal_idx = max(
            i
            for i, r in enumerate(records)
            if r["action"] == "state_transition"
        )
        injects = [i for i, r in enumerate(records) if r["action"] == "inject"]
        reverts = [i for i, r in enumerate(records) if r["action"] in ("revert", "revert_all")]
        assert len(injects) == 2
        for idx in injects:
            assert any(r > idx and r < terminal_idx for r in reverts)

    def test_recovery_gate_last_checks_pass(self, tmp_path):
        result, chain, _ = run_fixture(tmp_path)
        assert result.status is ExperimentStatus.HYPOTHESIS_HELD
        checks = [json.loads(l) for l in chain.splitlines() if json.loads(l)["action"] == "check_run"]
        assert len(checks) >= 2  # recovery_checks = 2 consecutive passes audited


class TestRollbackTotality:
    @pytest.mark.parametrize("interrupt_at", range(9))
    def test_interrupted_runs_leave_zero_injections(self, tmp_path, interrupt_at):
        for _ in [0]:
            doc = exp_doc()
            exp = parse_experiment_dict(doc)
            world = build_world(chain_topology(), exp.seed)
            driver = SimDriver(world)
            source = SimMetricSource(world)
            audit = AuditChain(tmp_path / f"k{interrupt_at}.jsonl")
            count = {"n": 0}

            def hook(state):
                if count["n"] == interrupt_at:
                    raise Interrupt(str(state))
                count["n"] += 1

            try:
                run_experiment(exp, driver, source, audit, on_transition=hook)
            except Interrupt:
                pass
            finally:
                audit.close()
            assert driver.active_handles() == [], f"interrupt {interrupt_at} left injections"
            assert world.active_handles() == []


class TestDryRun:
    def test_valid_experiment(self, tmp_path):
        exp = parse_experiment_dict(exp_doc())
        driver = SimDriver(build_world(chain_topology(), 1))
        audit = AuditChain(tmp_path / "dry.jsonl")
        report, plan = dry_run(exp, driver, audit)
        audit.close()
        assert report.passed and plan is not None and len(plan.stages) == 2
        assert chain_actions((tmp_path / "dry.jsonl").read_bytes()) == ["dry_run"]

    def test_purity_and_no_side_effects(self):
        exp = parse_experiment_dict(exp_doc())
        world = build_world(chain_topology(), 1)
        driver = SimDriver(world)
        before_now, before_events = world.now, len(world.trace().events)
        r1, p1 = dry_run(exp, driver)
        r2, p2 = dry_run(exp, driver)
        assert (r1, p1) == (r2, p2)
        assert driver.active_handles() == []
        assert (world.now, len(world.trace().events)) == (before_now, before_events)

    def test_invalid_plan_reported(self):
        doc = exp_doc()
        doc["stages"][0]["scope"] = {"service": "ghost", "instance_fraction_bp": 1000}
        exp = parse_experiment_dict(doc)
        report, plan = dry_run(exp, SimDriver(build_world(chain_topology(), 1)))
        assert not report.passed and plan is None
