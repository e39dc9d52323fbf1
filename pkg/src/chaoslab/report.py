"""Experiment reports: canonical JSON, markdown with per-stage verdict
tables, and a probe-readings CSV for spreadsheet work."""

from __future__ import annotations

import csv
import io
from typing import Any


def report_view(run_doc: dict[str, Any], run_id: str) -> dict[str, Any]:
    """The report-facing projection of a stored run document."""
    result = run_doc["result"]
    exp = run_doc["experiment"]
    return {
        "run_id": run_id,
        "experiment_id": result["experiment_id"],
        "name": exp["name"],
        "status": result["status"],
        "driver": result["driver"],
        "seed": result["seed"],
        "started_at_us": result["started_at_us"],
        "ended_at_us": result["ended_at_us"],
        "baseline": result["baseline"],
        "stages": result["stages"],
        "probes": exp["hypothesis"]["probes"],
        "resilience": result["resilience"],
        "audit_head": result["audit_head"],
        "trace_digest": result["trace_digest"],
        "findings": result["findings"],
        "recovered": result["recovered"],
    }


def render_json(run_doc: dict[str, Any], run_id: str) -> str:
    from . import canon

    return canon.dumps(report_view(run_doc, run_id))


def _probe_label(probe: dict[str, Any]) -> str:
    return f"{probe['metric']['service']}.{probe['metric']['kind']}"


def _tolerance_label(tol: dict[str, Any]) -> str:
    lo = tol.get("min", "")
    hi = tol.get("max", "")
    return f"[{lo}..{hi}]"


def render_markdown(run_doc: dict[str, Any], run_id: str) -> str:
    view = report_view(run_doc, run_id)
    probes = view["probes"]
    lines = [
        f"# Experiment report: {view['experiment_id']}",
        "",
        f"- run: `{view['run_id']}`",
        f"- name: {view['name']}",
        f"- status: **{view['status']}**",
        f"- driver: {view['driver']}, seed: {view['seed']}",
        f"- recovered: {view['recovered']}",
        f"- audit chain head: `{view['audit_head']}`",
    ]
    if view["trace_digest"]:
        lines.append(f"- trace digest: `{view['trace_digest']}`")
    if view["findings"]:
        lines += ["", "## Validation findings"]
        for f in view["findings"]:
            lines.append(f"- {f['severity']}: {f['code']} — {f['message']}")

    if view["baseline"]:
        lines += ["", "## Baseline", "", "| probe | tolerance | value |", "|---|---|---|"]
        for reading in view["baseline"]["readings"]:
            probe = probes[reading["probe_index"]]
            value = "(no data)" if reading["empty"] else str(reading["value"])
            lines.append(f"| {_probe_label(probe)} | {_tolerance_label(probe['tolerance'])} | {value} |")

    for stage in view["stages"]:
        lines += [
            "",
            f"## Stage {stage['index']}: {stage['fault_kind']} on {stage['scope']['service']}",
            "",
            "| evaluation t_us | probe | value | verdict |",
            "|---|---|---|---|",
        ]
        for ev in stage["evaluations"]:
            deviating = {d["probe_index"] for d in ev["verdict"]["deviations"]}
            for reading in ev["readings"]:
                probe = probes[reading["probe_index"]]
                verdict = "VIOLATION" if reading["probe_index"] in deviating else "ok"
                value = "(no data)" if reading["empty"] else str(reading["value"])
                lines.append(f"| {ev['t_us']} | {_probe_label(probe)} | {value} | {verdict} |")
        if stage["violation"]:
            lines.append("")
            lines.append(
                f"Aborted at {stage['violation']['at_us']} us after "
                f"{stage['violation']['consecutive']} consecutive violation(s)."
            )

    res = view["resilience"]
    if res:
        lines += [
            "",
            "## Resilience",
            "",
            f"- incidents: {res['incident_count']}",
            f"- MTTR: {res['mttr_us']} us" if res["mttr_us"] is not None else "- MTTR: n/a",
            f"- MTTD: {res['mttd_us']} us" if res["mttd_us"] is not None else "- MTTD: n/a",
            f"- availability: {res['availability_bp']} bp" if res["availability_bp"] is not None else "- availability: n/a",
            f"- error rate: {res['error_rate_bp']} bp" if res["error_rate_bp"] is not None else "- error rate: n/a",
        ]
        if res["incidents"]:
            lines += ["", "| incident | t_fail_us | t_recover_us | t_detect_us |", "|---|---|---|---|"]
            for i, inc in enumerate(res["incidents"]):
                lines.append(
                    f"| {i} | {inc['t_fail_us']} | {inc['t_recover_us']} | {inc['t_detect_us']} |"
                )
        if res["slos"]:
            lines += ["", "## SLO verdicts", "", "| metric | objective | measured | verdict |", "|---|---|---|---|"]
            for slo in res["slos"]:
                verdict = "pass" if slo["passed"] else "VIOLATION"
                measured = "(no data)" if slo["empty"] else str(slo["measured"])
                lines.append(
                    f"| {slo['target']['metric']['service']}.{slo['target']['metric']['kind']}"
                    f" | {_tolerance_label(slo['target']['objective'])} | {measured} | {verdict} |"
                )
    lines.append("")
    return "\n".join(lines)


def render_report(run_doc: dict[str, Any], run_id: str, fmt: str) -> str:
    if fmt == "json":
        return render_json(run_doc, run_id)
    if fmt in ("md", "markdown"):
        return render_markdown(run_doc, run_id)
    raise ValueError(f"unknown report format {fmt!r}")


def readings_csv(run_doc: dict[str, Any]) -> str:
    """Delimited per-evaluation probe readings: one row per (stage,
    evaluation, probe)."""
    exp = run_doc["experiment"]
    result = run_doc["result"]
    probes = exp["hypothesis"]["probes"]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["phase", "stage", "t_us", "probe", "value", "empty", "passed"])
    baseline = result["baseline"]
    if baseline:
        for r in baseline["readings"]:
            writer.writerow(
                ["baseline", "", baseline["taken_at_us"], _probe_label(probes[r["probe_index"]]), r["value"], r["empty"], True]
            )
    for stage in result["stages"]:
        for ev in stage["evaluations"]:
            deviating = {d["probe_index"] for d in ev["verdict"]["deviations"]}
            for r in ev["readings"]:
                writer.writerow(
                    [
                        "stage",
                        stage["index"],
                        ev["t_us"],
                        _probe_label(probes[r["probe_index"]]),
                        r["value"],
                        r["empty"],
                        r["probe_index"] not in deviating,
                    ]
                )
    return buf.getvalue()
