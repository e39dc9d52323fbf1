"""Report figures rendered to files alongside the JSON/markdown output."""

from __future__ import annotations

from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def _probe_series(run_doc: dict[str, Any]) -> dict[int, tuple[list[int], list[int]]]:
    """Per-probe (t_us, value) series across baseline and stage evaluations."""
    result = run_doc["result"]
    series: dict[int, tuple[list[int], list[int]]] = {}
    baseline = result["baseline"]
    if baseline:
        for r in baseline["readings"]:
            if not r["empty"]:
                series.setdefault(r["probe_index"], ([], []))
                series[r["probe_index"]][0].append(baseline["taken_at_us"])
                series[r["probe_index"]][1].append(r["value"])
    for stage in result["stages"]:
        for ev in stage["evaluations"]:
            for r in ev["readings"]:
                if not r["empty"]:
                    series.setdefault(r["probe_index"], ([], []))
                    series[r["probe_index"]][0].append(ev["t_us"])
                    series[r["probe_index"]][1].append(r["value"])
    return series


def plot_probe_timelines(run_doc: dict[str, Any], path: Path) -> Path:
    """One subplot per probe: readings over time with the tolerance band."""
    probes = run_doc["experiment"]["hypothesis"]["probes"]
    series = _probe_series(run_doc)
    n = max(1, len(probes))
    fig, axes = plt.subplots(n, 1, figsize=(8, 2.2 * n), sharex=True, squeeze=False)
    for i, probe in enumerate(probes):
        ax = axes[i][0]
        times, values = series.get(i, ([], []))
        label = f"{probe['metric']['service']}.{probe['metric']['kind']}"
        ax.plot([t / 1000 for t in times], values, marker="o", markersize=3, lw=1, label=label)
        tol = probe["tolerance"]
        if "max" in tol:
            ax.axhline(tol["max"], color="tab:red", lw=0.8, ls="--", label="max")
        if "min" in tol:
            ax.axhline(tol["min"], color="tab:orange", lw=0.8, ls="--", label="min")
        ax.set_ylabel(probe["metric"]["kind"], fontsize=8)
        ax.legend(fontsize=7, loc="upper left")
        ax.set_title(label, fontsize=9)
    axes[-1][0].set_xlabel("t (ms)")
    for stage in run_doc["result"]["stages"]:
        for ax_row in axes:
            evs = stage["evaluations"]
            if evs:
                ax_row[0].axvspan(
                    evs[0]["t_us"] / 1000, evs[-1]["t_us"] / 1000, color="tab:gray", alpha=0.12
                )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_incidents(run_doc: dict[str, Any], path: Path) -> Path | None:
    """Horizontal bars of incident spans; None when the run had no incidents."""
    res = run_doc["result"]["resilience"]
    if not res or not res["incidents"]:
        return None
    incidents = res["incidents"]
    fig, ax = plt.subplots(figsize=(8, 1.0 + 0.5 * len(incidents)))
    end_us = run_doc["result"]["stages"][-1]["evaluations"][-1]["t_us"] if run_doc["result"]["stages"] else 0
    for i, inc in enumerate(incidents):
        t0 = inc["t_fail_us"] / 1000
        t1 = (inc["t_recover_us"] if inc["t_recover_us"] is not None else max(end_us, inc["t_fail_us"])) / 1000
        ax.barh(i, max(t1 - t0, 1), left=t0, height=0.5, color="tab:red", alpha=0.7)
        if inc["t_detect_us"] is not None:
            ax.plot(inc["t_detect_us"] / 1000, i, marker="v", color="black", markersize=6)
    ax.set_yticks(range(len(incidents)))
    ax.set_yticklabels([f"incident {i}" for i in range(len(incidents))], fontsize=8)
    ax.set_xlabel("t (ms)")
    ax.set_title("Incidents (marker = detection)", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_figures(run_doc: dict[str, Any], run_id: str, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [plot_probe_timelines(run_doc, out_dir / f"{run_id}.probes.png")]
    incident_path = plot_incidents(run_doc, out_dir / f"{run_id}.incidents.png")
    if incident_path is not None:
        paths.append(incident_path)
    return paths
