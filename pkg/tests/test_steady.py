"""Baseline measurement, tolerance evaluation, and the deviation watcher."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaoslab.drivers.sim import SimMetricSource
from chaoslab.errors import InsufficientData, SourceError
from chaoslab.model import (
    AbortPolicy,
    MetricKind,
    MetricSelector,
    Probe,
    SteadyStateHypothesis,
    Tolerance,
)
from chaoslab.simworld import build_world
from chaoslab.steady import ProbeReading, evaluate, measure_baseline, watch
from chaoslab.trace import MetricSample, sample_metric

from conftest import single_service_topology


def _hypothesis(tolerances, interval_ms=100, baseline_ms=500, kinds=None):
    probes = tuple(
        Probe(
            metric=MetricSelector("api", kinds[i] if kinds else MetricKind.LATENCY_MEAN_US),
            window_ms=100,
            tolerance=t,
        )
        for i, t in enumerate(tolerances)
    )
    return SteadyStateHypothesis(
        probes=probes, baseline_window_ms=baseline_ms, evaluation_interval_ms=interval_ms
    )


def _readings(*values, empty=False):
    return [ProbeReading(probe_index=i, value=v, empty=empty) for i, v in enumerate(values)]


class TestEvaluate:
    def test_above_max_deviates(self):
        verdict = evaluate(_hypothesis([Tolerance(max=100_000)]), _readings(120_000))
        assert not verdict.passed
        assert verdict.deviations[0].bound == "max"
        assert verdict.deviations[0].magnitude == 20_000

    def test_boundary_inclusive(self):
        verdict = evaluate(_hypothesis([Tolerance(max=100_000)]), _readings(100_000))
        assert verdict.passed
        verdict = evaluate(_hypothesis([Tolerance(min=5)]), _readings(5))
        assert verdict.passed

    def test_all_within(self):
        verdict = evaluate(
            _hypothesis([Tolerance(max=10), Tolerance(min=1, max=3)]), _readings(9, 2)
        )
        assert verdict.passed and verdict.deviations == ()

    def test_empty_passes_by_default(self):
        verdict = evaluate(_hypothesis([Tolerance(max=10)]), _readings(99, empty=True))
        assert verdict.passed

    def test_empty_throughput_with_min_bound_fails(self):
        hyp = _hypothesis([Tolerance(min=100)], kinds=[MetricKind.THROUGHPUT_RPM])
        verdict = evaluate(hyp, _readings(0, empty=True))
        assert not verdict.passed  # total outage is not masked

    @settings(max_examples=60, deadline=None)
    @given(
        value=st.integers(-(10**6), 10**6),
        lo=st.integers(-(10**6), 10**6),
        span=st.integers(0, 10**6),
        widen=st.integers(0, 10**5),
    )
    def test_widening_never_flips_pass_to_fail(self, value, lo, span, widen):
        narrow = Tolerance(min=lo, max=lo + span)
        wide = Tolerance(min=lo - widen, max=lo + span + widen)
        narrow_pass = evaluate(_hypothesis([narrow]), _readings(value)).passed
        wide_pass = evaluate(_hypothesis([wide]), _readings(value)).passed
        if narrow_pass:
            assert wide_pass


class TestBaseline:
    def test_matches_sample_metric_over_same_window(self):
        world = build_world(single_service_topology(), 42)
        source = SimMetricSource(world)
        source.advance(5000)
        snap = measure_baseline(_hypothesis([Tolerance(max=10**9)]).probes, source, 5000)
        expected = sample_metric(
            world.trace(), MetricSelector("api", MetricKind.LATENCY_MEAN_US), (0, 5_000_000)
        )
        assert snap.readings[0].value == expected.value
        assert snap.window == (0, 5_000_000)

    def test_insufficient_data(self):
        world = build_world(single_service_topology(), 42)
        source = SimMetricSource(world)
        source.advance(100)
        with pytest.raises(InsufficientData):
            measure_baseline(_hypothesis([Tolerance(max=1)]).probes, source, 5000)

    def test_zero_traffic_window_empty_flag(self):
        world = build_world(single_service_topology(rps=1), 42)
        source = SimMetricSource(world)
        source.advance(400)  # first request arrives at t=0 and completes fast
        snap = measure_baseline(_hypothesis([Tolerance(max=1)]).probes, source, 100)
        assert snap.readings[0].empty  # the trailing 100 ms saw nothing

    def test_purity_same_window_same_snapshot(self):
        world = build_world(single_service_topology(), 42)
        source = SimMetricSource(world)
        source.advance(3000)
        probes = _hypothesis([Tolerance(max=10**9)]).probes
        assert measure_baseline(probes, source, 2000) == measure_baseline(probes, source, 2000)


class ScriptedSource:
    """Metric source driven by a list of per-evaluation values."""

    def __init__(self, values, interval_ms=100, error_at=None):
        self.values = values
        self.t = 0
        self.calls = 0
        self.interval_ms = interval_ms
        self.error_at = error_at or set()

    def now_us(self) -> int:
        return self.t

    def advance(self, duration_ms: int) -> None:
        self.t += duration_ms * 1000

    def sample(self, selector, window):
        idx = min(self.calls, len(self.values) - 1)
        self.calls += 1
        if idx in self.error_at:
            raise SourceError("metric source down")
        return MetricSample(self.values[idx], False)


def brute_force_violation_index(passes: list[bool], threshold: int) -> int | None:
    """First index where the trailing run of failures reaches the threshold."""
    run = 0
    for i, ok in enumerate(passes):
        run = 0 if ok else run + 1
        if run >= threshold:
            return i
    return None


class TestWatch:
    HYP = _hypothesis([Tolerance(max=100)], interval_ms=100)

    def test_counting_rule_example(self):
        # verdicts pass, fail, pass, fail, fail with threshold 2 -> 5th evaluation
        source = ScriptedSource([50, 200, 50, 200, 200, 50])
        outcome = watch(self.HYP, source, AbortPolicy(max_consecutive_violations=2), 600)
        assert outcome.violation is not None
        assert outcome.violation.eval_index == 4
        assert outcome.violation.consecutive == 2
        assert len(outcome.records) == 5

    def test_clean_run_evaluation_count(self):
        source = ScriptedSource([50] * 20)
        outcome = watch(self.HYP, source, AbortPolicy(max_consecutive_violations=1), 750)
        assert outcome.clean
        assert len(outcome.records) == 7  # floor(750 / 100)
        assert source.t == 750_000  # remainder still advanced

    def test_source_error_is_fail_safe(self):
        source = ScriptedSource([50, 50], error_at={0})
        outcome = watch(self.HYP, source, AbortPolicy(max_consecutive_violations=1), 300)
        assert outcome.violation is not None
        assert outcome.violation.eval_index == 0
        assert outcome.violation.source_error

    def test_violation_matches_brute_force_on_random_sequences(self):
        rng = random.Random(4242)
        for _ in range(1000):
            n = rng.randint(1, 12)
            threshold = rng.randint(1, 4)
            values = [rng.choice([50, 200]) for _ in range(n)]
            source = ScriptedSource(values)
            outcome = watch(
                self.HYP, source, AbortPolicy(max_consecutive_violations=threshold), n * 100
            )
            expected = brute_force_violation_index([v <= 100 for v in values], threshold)
            actual = outcome.violation.eval_index if outcome.violation else None
            assert actual == expected
