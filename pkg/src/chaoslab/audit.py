"""Hash-chained audit log, chain verification, compliance checks, and the
compliance report.

Each record seals (seq, ts, actor, action, payload-hash) against the
previous record's hash, so any byte of tampering breaks every later link.
Appends are durable (flushed and fsynced) before they return; a run that
cannot log must not keep injecting.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from . import canon
from .errors import ChaosIoError

ACTIONS = (
    "validated",
    "dry_run",
    "baseline",
    "inject",
    "revert",
    "revert_all",
    "abort",
    "state_transition",
    "alarm",
    "check_run",
    "report_emitted",
)

GENESIS = b"\x00" * 32
_KEYS = ("seq", "ts_us", "actor", "action", "details_hash", "prev_hash", "hash")


def record_hash(seq: int, ts_us: int, actor: str, action: str, details_hash: bytes, prev_hash: bytes) -> bytes:
    preimage = (
        struct.pack(">Q", seq)
        + struct.pack(">Q", ts_us)
        + actor.encode("utf-8")
        + b"\x00"
        + action.encode("utf-8")
        + b"\x00"
        + details_hash
        + prev_hash
    )
    return hashlib.sha256(preimage).digest()


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    ts_us: int
    actor: str
    action: str
    details_hash: str  # hex
    prev_hash: str  # hex
    hash: str  # hex

    def to_line(self) -> str:
        obj = {k: getattr(self, k) for k in _KEYS}
        return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def _seal(seq: int, ts_us: int, actor: str, action: str, payload: Any, prev_hash_hex: str) -> AuditRecord:
    details = hashlib.sha256(canon.dumps_bytes(payload)).digest()
    h = record_hash(seq, ts_us, actor, action, details, bytes.fromhex(prev_hash_hex))
    return AuditRecord(
        seq=seq,
        ts_us=ts_us,
        actor=actor,
        action=action,
        details_hash=details.hex(),
        prev_hash=prev_hash_hex,
        hash=h.hex(),
    )


class AuditChain:
    """Append-only chain writer bound to one JSONL file."""

    def __init__(self, path: str | Path, clock: Callable[[], int] | None = None):
        import time

        self.path = Path(path)
        self._clock = clock or (lambda: time.time_ns() // 1000)
        self._next_seq = 0
        self._head = GENESIS.hex()
        if self.path.exists() and self.path.stat().st_size > 0:
            result = verify(self.path.read_bytes())
            if not result.ok:
                raise ChaosIoError(f"existing chain is broken at seq {result.first_bad_seq}")
            last = self.path.read_bytes().splitlines()[-1]
            obj = json.loads(last)
            self._next_seq = obj["seq"] + 1
            self._head = obj["hash"]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self._fh = open(self.path, "a", encoding="utf-8")
        except OSError as exc:
            raise ChaosIoError(f"cannot open audit chain {self.path}: {exc}") from exc

    @property
    def head_hash(self) -> str:
        return self._head

    @property
    def length(self) -> int:
        return self._next_seq

    def append(self, actor: str, action: str, payload: Any) -> AuditRecord:
        if action not in ACTIONS:
            raise ValueError(f"unknown audit action {action!r}")
        record = _seal(self._next_seq, self._clock(), actor, action, payload, self._head)
        try:
            self._fh.write(record.to_line() + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
        except OSError as exc:
            raise ChaosIoError(f"audit append failed: {exc}") from exc
        self._next_seq += 1
        self._head = record.hash
        return record

    def close(self) -> None:
        self._fh.close()

    def read_bytes(self) -> bytes:
        return self.path.read_bytes()


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    first_bad_seq: int | None = None
    records: int = 0


def verify(chain: bytes) -> VerifyResult:
    """Recompute every hash and link. Reports the first sequence number whose
    record is malformed, out of order, or altered."""
    prev = GENESIS.hex()
    seq = 0
    lines = chain.decode("utf-8", errors="replace").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for line in lines:
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("not an object")
            if list(obj.keys()) != list(_KEYS):
                raise ValueError("wrong keys")
            record = AuditRecord(**obj)
            # The stored form must be byte-exact canonical, so any surviving
            # single-byte mutation is visible even if JSON-equivalent.
            if record.to_line() != line:
                raise ValueError("not canonical")
            details = bytes.fromhex(record.details_hash)
            prev_bytes = bytes.fromhex(record.prev_hash)
            if len(details) != 32 or len(prev_bytes) != 32:
                raise ValueError("bad hash length")
        except (ValueError, TypeError, KeyError):
            return VerifyResult(ok=False, first_bad_seq=seq)
        if record.seq != seq or record.prev_hash != prev:
            return VerifyResult(ok=False, first_bad_seq=seq)
        expected = record_hash(record.seq, record.ts_us, record.actor, record.action, details, prev_bytes)
        if expected.hex() != record.hash:
            return VerifyResult(ok=False, first_bad_seq=seq)
        prev = record.hash
        seq += 1
    return VerifyResult(ok=True, records=seq)


# ---------------------------------------------------------------------------
# Compliance checks and reporting.


@dataclass(frozen=True)
class CheckOutcome:
    check_id: str
    description: str
    passed: bool
    evidence: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "check_id": self.check_id,
            "description": self.description,
            "passed": self.passed,
            "evidence": self.evidence,
        }


@dataclass(frozen=True)
class ComplianceCheck:
    id: str
    description: str
    evaluator: Callable[["CheckContext"], tuple[bool, str]]


@dataclass(frozen=True)
class CheckContext:
    experiment: Any
    result: Any
    chain_bytes: bytes
    store_encrypted: bool


def _chain_intact(ctx: CheckContext) -> tuple[bool, str]:
    res = verify(ctx.chain_bytes)
    if res.ok:
        return True, f"chain verified, {res.records} record(s)"
    return False, f"first_bad_seq={res.first_bad_seq}"


def _scope_within_policy(ctx: CheckContext) -> tuple[bool, str]:
    limit = ctx.experiment.compliance.max_scope_bp
    worst = max(
        (s.scope.instance_fraction_bp for s in ctx.experiment.stages if s.scope.instance_fraction_bp is not None),
        default=0,
    )
    if worst <= limit:
        return True, f"widest stage scope {worst} bp within policy {limit} bp"
    return False, f"stage scope {worst} bp exceeds policy {limit} bp"


def _approval_present(ctx: CheckContext) -> tuple[bool, str]:
    c = ctx.experiment.compliance
    if c.data_class.value == "synthetic":
        return True, "synthetic data class is exempt from approval"
    if c.approved_by and c.approval_role:
        return True, f"approved by {c.approved_by} ({c.approval_role})"
    return False, f"data class {c.data_class.value!r} requires approved_by and approval_role"


def _store_encrypted(ctx: CheckContext) -> tuple[bool, str]:
    if ctx.store_encrypted:
        return True, "result store reports encryption at rest"
    return False, "result store does not report encryption at rest"


BUILTIN_CHECKS = (
    ComplianceCheck("CHAIN_INTACT", "audit chain verifies end to end", _chain_intact),
    ComplianceCheck("SCOPE_WITHIN_POLICY", "every stage scope within compliance policy", _scope_within_policy),
    ComplianceCheck("APPROVAL_PRESENT", "non-synthetic experiments carry an approval", _approval_present),
    ComplianceCheck("STORE_ENCRYPTED", "result store encrypts at rest", _store_encrypted),
)

_RESOLUTIONS = {
    "CHAIN_INTACT": "treat the run as untrusted; investigate log storage and re-run",
    "SCOPE_WITHIN_POLICY": "narrow the stage scopes or raise the policy with approval",
    "APPROVAL_PRESENT": "obtain approver sign-off before running on non-synthetic data",
    "STORE_ENCRYPTED": "move the result store onto encrypted storage",
}


def run_checks(
    checks: tuple[ComplianceCheck, ...],
    experiment: Any,
    result: Any,
    chain_bytes: bytes,
    store_encrypted: bool = False,
) -> list[CheckOutcome]:
    ctx = CheckContext(experiment=experiment, result=result, chain_bytes=chain_bytes, store_encrypted=store_encrypted)
    outcomes = []
    for check in checks:
        try:
            passed, evidence = check.evaluator(ctx)
        except Exception as exc:  # a crashing check is a failing check
            passed, evidence = False, f"check crashed: {exc!r}"
        outcomes.append(CheckOutcome(check.id, check.description, passed, evidence))
    return outcomes


@dataclass(frozen=True)
class ComplianceReport:
    experiment_id: str
    status: str
    generated_at_us: int
    chain_head: str
    checks: tuple[CheckOutcome, ...]
    issues: tuple[dict[str, str], ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "experiment_id": self.experiment_id,
            "status": self.status,
            "generated_at_us": self.generated_at_us,
            "chain_head": self.chain_head,
            "checks": [c.to_dict() for c in self.checks],
            "issues": [dict(i) for i in self.issues],
        }

    def to_json(self) -> str:
        return canon.dumps(self.to_dict())

    def to_markdown(self) -> str:
        lines = [
            f"# Compliance report: {self.experiment_id}",
            "",
            f"- result status: {self.status}",
            f"- generated_at_us: {self.generated_at_us}",
            f"- audit chain head: `{self.chain_head}`",
            "",
            "| check | outcome | evidence |",
            "|---|---|---|",
        ]
        for c in self.checks:
            lines.append(f"| {c.check_id} | {'pass' if c.passed else 'FAIL'} | {c.evidence} |")
        lines.append("")
        if self.issues:
            lines.append("## Issues and resolutions")
            for issue in self.issues:
                lines.append(f"- **{issue['check_id']}**: {issue['evidence']}")
                lines.append(f"  - resolution: {issue['resolution']}")
        else:
            lines.append("No issues.")
        lines.append("")
        return "\n".join(lines)


def compliance_report(
    experiment: Any,
    result: Any,
    outcomes: list[CheckOutcome],
    chain_bytes: bytes,
    generated_at_us: int,
) -> ComplianceReport:
    res = verify(chain_bytes)
    head = GENESIS.hex()
    if res.ok and res.records > 0:
        head = json.loads(chain_bytes.splitlines()[-1])["hash"]
    issues = tuple(
        {
            "check_id": o.check_id,
            "evidence": o.evidence,
            "resolution": _RESOLUTIONS.get(o.check_id, "investigate and re-run"),
        }
        for o in outcomes
        if not o.passed
    )
    return ComplianceReport(
        experiment_id=experiment.id,
        status=result.status.value if hasattr(result.status, "value") else str(result.status),
        generated_at_us=generated_at_us,
        chain_head=head,
        checks=tuple(outcomes),
        issues=issues,
    )
