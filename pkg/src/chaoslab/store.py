"""File-backed result store.

Layout under the root: `runs/{run_id}.json` (canonical run documents),
`index.json`, `audit/{run_id}.jsonl`, `reports/{run_id}.report.{json,md}`.
Single writer (exclusive lock file), any number of readers. The
encryption-at-rest flag is capability metadata consumed by compliance
checks, not cryptography performed here.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from filelock import FileLock

from . import canon
from .errors import ChaosIoError, DuplicateRunId


@dataclass(frozen=True)
class RunSummary:
    run_id: str
    experiment_id: str
    started_at_us: int
    status: str
    driver: str
    services: tuple[str, ...]
    stage_count: int
    config_digest: str
    has_rollback_records: bool
    recurring_key: str
    tags: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "experiment_id": self.experiment_id,
            "started_at_us": self.started_at_us,
            "status": self.status,
            "driver": self.driver,
            "services": list(self.services),
            "stage_count": self.stage_count,
            "config_digest": self.config_digest,
            "has_rollback_records": self.has_rollback_records,
            "recurring_key": self.recurring_key,
            "tags": list(self.tags),
        }


def _summary_from_dict(obj: dict[str, Any]) -> RunSummary:
    return RunSummary(
        run_id=obj["run_id"],
        experiment_id=obj["experiment_id"],
        started_at_us=obj["started_at_us"],
        status=obj["status"],
        driver=obj["driver"],
        services=tuple(obj["services"]),
        stage_count=obj["stage_count"],
        config_digest=obj["config_digest"],
        has_rollback_records=obj["has_rollback_records"],
        recurring_key=obj["recurring_key"],
        tags=tuple(obj.get("tags", [])),
    )


class ResultStore:
    def __init__(self, root: str | Path, encryption_at_rest: bool = False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "runs").mkdir(exist_ok=True)
        (self.root / "audit").mkdir(exist_ok=True)
        (self.root / "reports").mkdir(exist_ok=True)
        self._lock = FileLock(str(self.root / ".lock"))
        meta_path = self.root / "store.json"
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            self.encryption_at_rest = bool(meta.get("encryption_at_rest", False))
        else:
            self.encryption_at_rest = encryption_at_rest
            meta_path.write_text(canon.dumps({"encryption_at_rest": encryption_at_rest}) + "\n")

    # -- paths ---------------------------------------------------------------

    def run_path(self, run_id: str) -> Path:
        return self.root / "runs" / f"{run_id}.json"

    def audit_path(self, run_id: str) -> Path:
        return self.root / "audit" / f"{run_id}.jsonl"

    def report_path(self, run_id: str, fmt: str) -> Path:
        return self.root / "reports" / f"{run_id}.report.{fmt}"

    # -- index ---------------------------------------------------------------

    def _read_index(self) -> list[dict[str, Any]]:
        path = self.root / "index.json"
        if not path.exists():
            return []
        return json.loads(path.read_text())["runs"]

    def _write_index(self, rows: list[dict[str, Any]]) -> None:
        path = self.root / "index.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(canon.dumps({"runs": rows}) + "\n")
        os.replace(tmp, path)

    # -- operations ------------------------------------------------------------

    def save(
        self,
        result,
        experiment_doc: dict[str, Any],
        topology_doc: dict[str, Any] | None = None,
        routes_doc: list[dict[str, Any]] | None = None,
        tags: tuple[str, ...] = (),
    ) -> str:
        """Persist a run document; returns the run id
        `{experiment id}-{started_at}-{short hash}`."""
        result_dict = result.to_dict()
        document = {
            "experiment": experiment_doc,
            "result": result_dict,
            "topology": topology_doc,
            "routes": routes_doc,
        }
        short = hashlib.sha256(canon.dumps_bytes(result_dict)).hexdigest()[:8]
        run_id = f"{result_dict['experiment_id']}-{result_dict['started_at_us']}-{short}"

        with self._lock:
            path = self.run_path(run_id)
            if path.exists():
                raise DuplicateRunId(run_id)
            try:
                tmp = path.with_suffix(".json.tmp")
                tmp.write_text(canon.dumps(document) + "\n")
                os.replace(tmp, path)
            except OSError as exc:
                raise ChaosIoError(f"cannot write run document: {exc}") from exc

            config_digest = canon.digest(topology_doc if topology_doc is not None else routes_doc or {})
            services = sorted(
                {experiment_doc["target"]["service"]}
                | {s["scope"]["service"] for s in experiment_doc["stages"]}
            )
            summary = RunSummary(
                run_id=run_id,
                experiment_id=result_dict["experiment_id"],
                started_at_us=result_dict["started_at_us"],
                status=result_dict["status"],
                driver=result_dict["driver"],
                services=tuple(services),
                stage_count=len(experiment_doc["stages"]),
                config_digest=config_digest,
                has_rollback_records=True,
                recurring_key=result_dict["experiment_id"],
                tags=tags,
            )
            rows = self._read_index()
            rows.append(summary.to_dict())
            self._write_index(rows)
        return run_id

    def load(self, run_id: str) -> dict[str, Any]:
        path = self.run_path(run_id)
        if not path.exists():
            raise ChaosIoError(f"no run {run_id!r} in store")
        return json.loads(path.read_text())

    def query(
        self,
        experiment_id: str | None = None,
        status: str | None = None,
        time_range: tuple[int, int] | None = None,
        tags: tuple[str, ...] | None = None,
    ) -> list[RunSummary]:
        """Matching run summaries, newest first (run id breaks ties)."""
        rows = [_summary_from_dict(r) for r in self._read_index()]
        out = []
        for row in rows:
            if experiment_id is not None and row.experiment_id != experiment_id:
                continue
            if status is not None and row.status != status:
                continue
            if time_range is not None and not (time_range[0] <= row.started_at_us < time_range[1]):
                continue
            if tags is not None and not set(tags) <= set(row.tags):
                continue
            out.append(row)
        out.sort(key=lambda r: (-r.started_at_us, r.run_id))
        return out

    def summaries(self) -> list[RunSummary]:
        return self.query()
