"""Deterministic discrete-event service-mesh simulator.

Requests arrive at the entry service, occupy instance concurrency slots,
make sequential dependency calls with per-call timeouts and retries, and
complete or fail. Every fault kind has an exact integer-arithmetic effect,
so a (topology, seed, fault schedule, duration) tuple always produces the
same byte-identical trace.

Event order is total: (sim time, insertion sequence). The RNG (splitmix64)
is consumed only while processing events, and degenerate draws (zero
probability, zero jitter) are skipped entirely, which makes identity faults
byte-identical to no fault at all.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Any, Callable

from .errors import ConflictError, ScopeError, StaleHandle
from .model import (
    FaultAction,
    FaultKind,
    InstanceKill,
    MemoryExhaustion,
    NetworkLatency,
)
from .rng import Splitmix64
from .topology import ServiceSpec, Topology, check_topology
from .trace import Trace, TraceEvent

MESSAGE_SIZE_BYTES = 1024  # fixed message size for bandwidth throttling


@dataclass
class _Effect:
    handle_id: str
    fault: FaultAction
    service: str
    instances: tuple[str, ...]
    applied_at: int
    active: bool = True


@dataclass
class _Request:
    id: str
    arrived_at: int
    terminal: bool = False


@dataclass
class _Call:
    """One logical dependency call (or the external ingress call) with its
    retry budget. Each attempt is a separate message."""

    request: _Request
    caller_job: "_Job | None"  # None for the external ingress call
    callee: str
    attempts_used: int = 0


@dataclass
class _Attempt:
    id: int
    call: _Call
    sent_at: int
    target_instance: str | None = None
    resolved: bool = False

    @property
    def is_external(self) -> bool:
        return self.call.caller_job is None


@dataclass
class _Job:
    """An attempt being served by an instance: local work, then the
    service's dependency calls in declared order, then the response."""

    id: int
    attempt: _Attempt
    service: str
    instance: str
    dep_index: int = 0
    alive: bool = True


class _InstanceState:
    __slots__ = ("id", "service", "index", "up", "busy", "queue", "running", "effects", "epoch", "down_by")

    def __init__(self, id: str, service: str, index: int):
        self.id = id
        self.service = service
        self.index = index
        self.up = True
        self.busy = 0
        self.queue: list[_Attempt] = []
        self.running: list[_Job] = []
        self.effects: dict[FaultKind, _Effect] = {}
        self.epoch = 0
        self.down_by: str | None = None


class World:
    """Single-threaded simulator state; advance with run()."""

    def __init__(self, topology: Topology, seed: int):
        check_topology(topology)
        self.topology = topology
        self.seed = seed
        self.rng = Splitmix64(seed)
        self.now = 0
        self._seq = itertools.count()
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._events: list[TraceEvent] = []
        self._effects: dict[str, _Effect] = {}
        self._handle_counter = itertools.count()
        self._request_counter = itertools.count()
        self._attempt_counter = itertools.count()
        self._job_counter = itertools.count()

        self.instances: dict[str, _InstanceState] = {}
        self._service_instances: dict[str, list[_InstanceState]] = {}
        self._rr: dict[str, int] = {}
        for spec in topology.services:
            row = []
            for i in range(spec.replicas):
                inst = _InstanceState(f"{spec.name}-{i}", spec.name, i)
                self.instances[inst.id] = inst
                row.append(inst)
            self._service_instances[spec.name] = row
            self._rr[spec.name] = 0

        self._schedule(0, self._arrival)

    # -- event plumbing ----------------------------------------------------

    def _schedule(self, t: int, thunk: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (t, next(self._seq), thunk))

    def _emit(self, kind: str, request_id: str = "", service: str = "", instance: str = "", **detail: Any) -> None:
        self._events.append(
            TraceEvent(t_us=self.now, kind=kind, request_id=request_id, service=service, instance=instance, detail=detail)
        )

    def run(self, duration_ms: int) -> Trace:
        """Advance by duration_ms, processing events in (time, seq) order.
        Returns the cumulative trace; events at exactly the end boundary wait
        for the next run."""
        if duration_ms <= 0:
            raise ValueError("duration_ms must be positive")
        t_end = self.now + duration_ms * 1000
        while self._heap and self._heap[0][0] < t_end:
            t, _, thunk = heapq.heappop(self._heap)
            self.now = t
            thunk()
        self.now = t_end
        return self.trace()

    def trace(self) -> Trace:
        return Trace(events=tuple(self._events), entry_service=self.topology.traffic.entry_service)

    # -- traffic -----------------------------------------------------------

    def _arrival(self) -> None:
        traffic = self.topology.traffic
        # Schedule the successor first so the jitter draw order is fixed.
        gap = traffic.base_interval_us
        if traffic.jitter_us > 0:
            gap += self.rng.below(traffic.jitter_us + 1)
        self._schedule(self.now + gap, self._arrival)

        request = _Request(id=f"r{next(self._request_counter)}", arrived_at=self.now)
        self._emit("arrival", request_id=request.id, service=traffic.entry_service)
        self._start_call(_Call(request=request, caller_job=None, callee=traffic.entry_service))

    # -- calls and attempts ------------------------------------------------

    def _service_spec(self, name: str) -> ServiceSpec:
        return self.topology.service(name)

    def _start_call(self, call: _Call) -> None:
        self._send_attempt(call)

    def _send_attempt(self, call: _Call) -> None:
        call.attempts_used += 1
        attempt = _Attempt(id=next(self._attempt_counter), call=call, sent_at=self.now)

        caller_job = call.caller_job
        if caller_job is not None:
            blocker = self.instances[caller_job.instance].effects.get(FaultKind.SERVICE_DEPENDENCY_FAILURE)
            if blocker is not None and blocker.fault.dependency == call.callee:
                self._fail_attempt(attempt, "dependency_failure", retryable=True)
                return

        # Deterministic rotor over every instance, up or not; retries move on.
        row = self._service_instances[call.callee]
        idx = self._rr[call.callee] % len(row)
        self._rr[call.callee] += 1
        target = row[idx]
        attempt.target_instance = target.id

        if FaultKind.DNS_FAILURE in target.effects:
            self._fail_attempt(attempt, "dns_failure", retryable=True)
            return

        delay = 0
        latency_effect = target.effects.get(FaultKind.NETWORK_LATENCY)
        if latency_effect is not None:
            fault: NetworkLatency = latency_effect.fault
            delay += fault.delay_us
            if fault.jitter_us > 0:
                delay += self.rng.below(fault.jitter_us + 1)
        throttle = target.effects.get(FaultKind.BANDWIDTH_THROTTLE)
        if throttle is not None:
            delay += MESSAGE_SIZE_BYTES * 1_000_000 // throttle.fault.bytes_per_sec

        lost = False
        loss = target.effects.get(FaultKind.PACKET_LOSS)
        if loss is not None:
            lost = self.rng.chance_bp(loss.fault.prob_bp)

        if not attempt.is_external:
            timeout = self._service_spec(call.caller_job.service).timeout_us
            self._schedule(self.now + timeout, lambda: self._attempt_timeout(attempt))
            if lost:
                return  # message vanishes; the timeout will notice
        elif lost:
            # No external client timeout is modeled: a lost ingress message
            # fails the request on the spot.
            self._fail_attempt(attempt, "ingress_lost", retryable=False)
            return

        self._schedule(self.now + delay, lambda: self._deliver(attempt))

    def _attempt_timeout(self, attempt: _Attempt) -> None:
        if not attempt.resolved:
            self._fail_attempt(attempt, "timeout", retryable=True)

    def _deliver(self, attempt: _Attempt) -> None:
        if attempt.resolved:
            return  # caller already gave up; the message is ignored
        target = self.instances[attempt.target_instance]
        if not target.up:
            self._fail_attempt(attempt, "instance_down", retryable=True)
            return
        self._admit(attempt, target)

    def _admit(self, attempt: _Attempt, target: _InstanceState) -> None:
        spec = self._service_spec(target.service)
        if target.busy < spec.concurrency:
            self._begin_job(attempt, target)
        elif len(target.queue) < spec.queue_capacity:
            target.queue.append(attempt)
        elif attempt.is_external:
            attempt.resolved = True
            attempt.call.request.terminal = True
            self._emit(
                "drop",
                request_id=attempt.call.request.id,
                service=target.service,
                instance=target.id,
                call="request",
            )
        else:
            self._fail_attempt(attempt, "queue_full", retryable=True)

    def _begin_job(self, attempt: _Attempt, target: _InstanceState) -> None:
        target.busy += 1
        job = _Job(id=next(self._job_counter), attempt=attempt, service=target.service, instance=target.id)
        target.running.append(job)
        self._emit(
            "dispatch",
            request_id=attempt.call.request.id,
            service=target.service,
            instance=target.id,
            attempt=attempt.id,
        )
        work = self._effective_service_time(target)
        self._schedule(self.now + work, lambda: self._work_done(job))

    def _effective_service_time(self, inst: _InstanceState) -> int:
        spec = self._service_spec(inst.service)
        work = spec.service_time_us
        for effect in inst.effects.values():
            kind = effect.fault.kind
            if kind is FaultKind.CPU_STRESS:
                work = work * effect.fault.service_time_factor_pct // 100
            elif kind is FaultKind.DISK_IO_SATURATION and "storage" in spec.tags:
                work = work * effect.fault.io_factor_pct // 100
            elif kind is FaultKind.CACHE_INVALIDATION and "cache" in spec.tags:
                work = work * effect.fault.miss_factor_pct // 100
        return work

    def _work_done(self, job: _Job) -> None:
        if not job.alive:
            return
        self._continue_job(job)

    def _continue_job(self, job: _Job) -> None:
        deps = self.topology.dependencies(job.service)
        if job.dep_index < len(deps):
            callee = deps[job.dep_index]
            self._start_call(_Call(request=job.attempt.call.request, caller_job=job, callee=callee))
        else:
            self._respond(job, ok=True)

    def _call_finished(self, job: _Job, ok: bool) -> None:
        if not job.alive:
            return
        if ok:
            job.dep_index += 1
            self._continue_job(job)
        else:
            self._respond(job, ok=False)

    def _respond(self, job: _Job, ok: bool) -> None:
        inst = self.instances[job.instance]
        job.alive = False
        if job in inst.running:
            inst.running.remove(job)
            inst.busy -= 1
            self._drain_queue(inst)

        attempt = job.attempt
        if not ok:
            # Definitive application failure: the caller does not retry it.
            self._fail_attempt(attempt, "dependency_failed", retryable=False)
            return

        # Response-path faults at the serving instance, in fixed order:
        # injected API errors originate first, corruption hits good responses.
        api = inst.effects.get(FaultKind.API_ERROR_INJECTION)
        if api is not None and self.rng.chance_bp(api.fault.prob_bp):
            code = api.fault.error_code
            self._fail_attempt(attempt, f"api_error_{code}", retryable=code >= 500)
            return
        spec = self._service_spec(inst.service)
        corrupt = inst.effects.get(FaultKind.STORAGE_CORRUPTION)
        if corrupt is not None and "storage" in spec.tags and self.rng.chance_bp(corrupt.fault.prob_bp):
            self._fail_attempt(attempt, "corrupt_response", retryable=True)
            return
        self._complete_attempt(attempt)

    def _drain_queue(self, inst: _InstanceState) -> None:
        spec = self._service_spec(inst.service)
        while inst.queue and inst.busy < spec.concurrency and inst.up:
            self._begin_job(inst.queue.pop(0), inst)

    # -- attempt resolution --------------------------------------------------

    def _complete_attempt(self, attempt: _Attempt) -> None:
        if attempt.resolved:
            return
        attempt.resolved = True
        call = attempt.call
        is_request = attempt.is_external
        self._emit(
            "complete",
            request_id=call.request.id,
            service=call.callee,
            instance=attempt.target_instance or "",
            latency_us=self.now - attempt.sent_at,
            call="request" if is_request else "dep",
        )
        if is_request:
            call.request.terminal = True
        else:
            self._call_finished(call.caller_job, ok=True)

    def _fail_attempt(self, attempt: _Attempt, reason: str, retryable: bool) -> None:
        if attempt.resolved:
            return
        attempt.resolved = True
        call = attempt.call
        is_request = attempt.is_external
        self._emit(
            "fail",
            request_id=call.request.id,
            service=call.callee,
            instance=attempt.target_instance or "",
            reason=reason,
            call="request" if is_request else "dep",
        )
        if is_request:
            call.request.terminal = True
            return

        job = call.caller_job
        if not job.alive:
            return
        retry = self._service_spec(job.service).retry
        if retryable and call.attempts_used <= retry.max_retries:
            self._schedule(self.now + retry.backoff_us, lambda: self._retry_call(call))
        else:
            self._call_finished(job, ok=False)

    def _retry_call(self, call: _Call) -> None:
        job = call.caller_job
        if job is None or not job.alive:
            return
        self._send_attempt(call)

    # -- instance lifecycle --------------------------------------------------

    def _instance_down(self, inst: _InstanceState, cause: str, handle_id: str | None) -> None:
        if not inst.up:
            return
        inst.up = False
        inst.epoch += 1
        inst.down_by = handle_id
        self._emit("instance_down", service=inst.service, instance=inst.id, cause=cause)
        self._abort_instance_work(inst, reason="instance_down")

    def _abort_instance_work(self, inst: _InstanceState, reason: str) -> None:
        running, inst.running = inst.running, []
        inst.busy = 0
        queued, inst.queue = inst.queue, []
        for job in running:
            job.alive = False
            self._fail_attempt(job.attempt, reason, retryable=True)
        for attempt in queued:
            self._fail_attempt(attempt, reason, retryable=True)

    def _instance_up(self, inst: _InstanceState, cause: str) -> None:
        if inst.up:
            return
        inst.up = True
        inst.epoch += 1
        inst.down_by = None
        self._emit("instance_up", service=inst.service, instance=inst.id, cause=cause)

    def up_instances(self, service: str | None = None) -> list[str]:
        if service is None:
            rows = list(self.instances.values())
        else:
            rows = self._service_instances[service]
        return [i.id for i in rows if i.up]

    def all_up(self) -> bool:
        return all(i.up for i in self.instances.values())

    # -- faults ---------------------------------------------------------------

    def apply_fault(self, fault: FaultAction, scope: list[str] | tuple[str, ...]) -> str:
        """Activate a fault on the given instance ids; returns the handle id."""
        if not scope:
            raise ScopeError("empty scope")
        insts = []
        for inst_id in scope:
            if inst_id not in self.instances:
                raise ScopeError(f"unknown instance {inst_id!r}")
            insts.append(self.instances[inst_id])
        services = {i.service for i in insts}
        if len(services) != 1:
            raise ScopeError("a fault scope must stay within one service")
        for inst in insts:
            if fault.kind in inst.effects:
                raise ConflictError(f"{fault.kind.value} already active on {inst.id}")

        handle_id = f"h{next(self._handle_counter)}"
        effect = _Effect(
            handle_id=handle_id,
            fault=fault,
            service=insts[0].service,
            instances=tuple(i.id for i in insts),
            applied_at=self.now,
        )
        self._effects[handle_id] = effect
        for inst in insts:
            inst.effects[fault.kind] = effect
        self._emit(
            "fault_applied",
            service=effect.service,
            fault=fault.kind.value,
            handle=handle_id,
            instances=",".join(effect.instances),
        )

        if isinstance(fault, InstanceKill):
            for inst in insts:
                self._instance_down(inst, cause=fault.kind.value, handle_id=handle_id)
                epoch = inst.epoch
                self._schedule(
                    self.now + fault.down_for_ms * 1000,
                    lambda inst=inst, epoch=epoch: self._auto_restart(inst, epoch),
                )
        elif isinstance(fault, MemoryExhaustion):
            for inst in insts:
                epoch = inst.epoch
                self._schedule(
                    self.now + fault.crash_after_ms * 1000,
                    lambda inst=inst, epoch=epoch, h=handle_id: self._memory_crash(inst, epoch, h),
                )
        elif fault.kind is FaultKind.DB_CONNECTION_TERMINATION:
            # One-shot: running work on db-tagged scoped instances dies now.
            for inst in insts:
                if "db" in self._service_spec(inst.service).tags:
                    running, inst.running = inst.running, []
                    inst.busy = 0
                    for job in running:
                        job.alive = False
                        self._fail_attempt(job.attempt, "connection_terminated", retryable=True)
                    self._drain_queue(inst)
        return handle_id

    def _auto_restart(self, inst: _InstanceState, epoch: int) -> None:
        if not inst.up and inst.epoch == epoch:
            self._instance_up(inst, cause="timer")

    def _memory_crash(self, inst: _InstanceState, epoch: int, handle_id: str) -> None:
        effect = self._effects.get(handle_id)
        if effect is None or not effect.active:
            return
        if inst.up and inst.epoch == epoch:
            self._instance_down(inst, cause="memory_exhaustion", handle_id=handle_id)

    def revert_fault(self, handle_id: str) -> None:
        effect = self._effects.get(handle_id)
        if effect is None or not effect.active:
            raise StaleHandle(f"handle {handle_id!r} is not active")
        effect.active = False
        for inst_id in effect.instances:
            inst = self.instances[inst_id]
            if inst.effects.get(effect.fault.kind) is effect:
                del inst.effects[effect.fault.kind]
        self._emit(
            "fault_reverted",
            service=effect.service,
            fault=effect.fault.kind.value,
            handle=handle_id,
            instances=",".join(effect.instances),
        )
        if effect.fault.kind in (FaultKind.INSTANCE_KILL, FaultKind.MEMORY_EXHAUSTION):
            for inst_id in effect.instances:
                inst = self.instances[inst_id]
                if not inst.up and inst.down_by == handle_id:
                    self._instance_up(inst, cause="revert")

    def revert_all(self) -> int:
        handles = [h for h, e in self._effects.items() if e.active]
        for h in handles:
            self.revert_fault(h)
        return len(handles)

    def active_handles(self) -> list[str]:
        return [h for h, e in self._effects.items() if e.active]


def build_world(topology: Topology, seed: int) -> World:
    """World at t=0, every instance up, splitmix64 stream seeded."""
    return World(topology, seed)
