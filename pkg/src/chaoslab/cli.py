"""Command-line entry point for unattended and CI execution.

Exit codes: 0 hypothesis held, 1 hypothesis violated, 2 aborted/rolled back,
3 invalid configuration or usage, 4 driver/capability error, 5 internal
error. Every document printed to stdout is canonical JSON.
"""

from __future__ import annotations

import json
import os
import sys
import tempfile
import time
from pathlib import Path

import click

from . import canon
from .audit import AuditChain, BUILTIN_CHECKS, compliance_report, run_checks, verify
from .catalog import (
    assess_maturity,
    get_scenario,
    instantiate,
    list_scenarios,
    parse_backlog,
    prioritize_backlog,
)
from .drivers.proxy import PROXY_CAPABILITIES, ProxyDriver, ProxyMetricSource
from .drivers.sim import SIM_CAPABILITIES, SimDriver, SimMetricSource
from .errors import (
    BindError,
    ChaosError,
    ChaosIoError,
    DocumentSyntaxError,
    DriverIoError,
    DuplicateRunId,
    ParamRangeError,
    RangeError,
    SchemaError,
    ScopeError,
    TopologyError,
    UnknownRoute,
    UnknownScenario,
    UnsupportedFault,
)
from .figures import render_figures
from .model import parse_experiment
from .orchestrator import ExperimentStatus, run_experiment
from .proxy import ProxyRoute, start_proxy
from .report import readings_csv, render_report
from .simworld import build_world
from .store import ResultStore
from .topology import parse_topology
from .validate import validate_experiment

EXIT_BY_STATUS = {
    ExperimentStatus.HYPOTHESIS_HELD: 0,
    ExperimentStatus.HYPOTHESIS_VIOLATED: 1,
    ExperimentStatus.ABORTED: 2,
    ExperimentStatus.CONFIG_INVALID: 3,
    ExperimentStatus.DRIVER_FAILED: 4,
}

CONFIG_ERRORS = (
    DocumentSyntaxError,
    SchemaError,
    RangeError,
    TopologyError,
    ParamRangeError,
    UnknownScenario,
    DuplicateRunId,
)
DRIVER_ERRORS = (BindError, DriverIoError, UnsupportedFault, ScopeError, UnknownRoute, ChaosIoError)


def _echo_json(obj) -> None:
    click.echo(canon.dumps(obj))


def _parse_hostport(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise SchemaError("$", f"expected host:port, got {text!r}")
    return host, int(port)


def _load_routes(path: str) -> list[ProxyRoute]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DocumentSyntaxError(f"malformed JSON: {exc}") from exc
    rows = doc["routes"] if isinstance(doc, dict) and "routes" in doc else doc
    if not isinstance(rows, list) or not rows:
        raise SchemaError("$", "expected a nonempty list of routes")
    routes = []
    for i, row in enumerate(rows):
        for key in ("name", "listen", "upstream"):
            if key not in row:
                raise SchemaError(f"$[{i}].{key}", "missing required field")
        routes.append(
            ProxyRoute(
                name=row["name"],
                listen=_parse_hostport(row["listen"]),
                upstream=_parse_hostport(row["upstream"]),
            )
        )
    return routes


@click.group()
def cli() -> None:
    """Chaos experiments against a deterministic mesh simulator or a TCP fault proxy."""


@cli.command()
@click.argument("exp_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--driver", "driver_name", type=click.Choice(["sim", "proxy"]), default="sim")
def validate(exp_file: str, driver_name: str) -> int:
    """Validate an experiment file; exit 0 when it passes, 3 otherwise."""
    exp = parse_experiment(Path(exp_file).read_text())
    caps = SIM_CAPABILITIES if driver_name == "sim" else PROXY_CAPABILITIES
    report = validate_experiment(exp, caps)
    _echo_json(report.to_dict())
    return 0 if report.passed else 3


@cli.command()
@click.argument("exp_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--driver", "driver_name", type=click.Choice(["sim", "proxy"]), default="sim")
@click.option("--topology", "topology_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--routes", "routes_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--store", "store_dir", envvar="CHAOS_STORE", required=True, type=click.Path(file_okay=False))
@click.option("--store-encrypted", is_flag=True, help="Mark the store as encrypted at rest.")
@click.option("--figures", is_flag=True, help="Also render PNG figures for the report.")
def run(
    exp_file: str,
    driver_name: str,
    topology_file: str | None,
    routes_file: str | None,
    store_dir: str,
    store_encrypted: bool,
    figures: bool,
) -> int:
    """Execute an experiment end to end and persist result, audit, and reports."""
    exp = parse_experiment(Path(exp_file).read_text())
    store = ResultStore(store_dir, encryption_at_rest=store_encrypted)

    proxy = None
    topo_doc = None
    routes_doc = None
    if driver_name == "sim":
        if not topology_file:
            raise click.UsageError("--topology is required with --driver sim")
        topo_doc = json.loads(Path(topology_file).read_text())
        topo = parse_topology(Path(topology_file).read_text())
        world = build_world(topo, exp.seed)
        driver = SimDriver(world)
        source = SimMetricSource(world)
    else:
        if not routes_file:
            raise click.UsageError("--routes is required with --driver proxy")
        routes_doc = json.loads(Path(routes_file).read_text())
        routes = _load_routes(routes_file)
        proxy = start_proxy(routes)
        driver = ProxyDriver(proxy)
        source = ProxyMetricSource(proxy)

    chain_path = store.root / "audit" / f".active-{os.getpid()}-{time.time_ns()}.jsonl"
    audit = AuditChain(chain_path)
    try:
        result = run_experiment(exp, driver, source, audit, driver_name=driver_name)
    finally:
        audit.close()
        if proxy is not None:
            proxy.stop()

    run_id = store.save(result, exp.to_dict(), topology_doc=topo_doc, routes_doc=routes_doc)
    os.replace(chain_path, store.audit_path(run_id))

    run_doc = store.load(run_id)
    store.report_path(run_id, "json").write_text(render_report(run_doc, run_id, "json") + "\n")
    store.report_path(run_id, "md").write_text(render_report(run_doc, run_id, "md"))
    (store.root / "reports" / f"{run_id}.readings.csv").write_text(readings_csv(run_doc))

    chain_bytes = store.audit_path(run_id).read_bytes()
    outcomes = run_checks(BUILTIN_CHECKS, exp, result, chain_bytes, store_encrypted=store.encryption_at_rest)
    comp = compliance_report(exp, result, outcomes, chain_bytes, generated_at_us=time.time_ns() // 1000)
    (store.root / "reports" / f"{run_id}.compliance.json").write_text(comp.to_json() + "\n")
    (store.root / "reports" / f"{run_id}.compliance.md").write_text(comp.to_markdown())

    reopened = AuditChain(store.audit_path(run_id))
    reopened.append("cli", "report_emitted", {"run_id": run_id, "formats": ["json", "md", "compliance"]})
    reopened.close()

    if figures:
        render_figures(run_doc, run_id, store.root / "reports")

    _echo_json(
        {
            "run_id": run_id,
            "status": result.status.value,
            "report_json": str(store.report_path(run_id, "json")),
            "report_md": str(store.report_path(run_id, "md")),
        }
    )
    return EXIT_BY_STATUS[result.status]


@cli.group()
def sim() -> None:
    """Standalone simulator operations."""


@sim.command(name="run")
@click.option("--topology", "topology_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--duration-ms", required=True, type=int)
@click.option("--seed", required=True, type=int)
@click.option("--out", "out_file", required=True, type=click.Path(dir_okay=False))
def sim_run(topology_file: str, duration_ms: int, seed: int, out_file: str) -> int:
    """Run the simulator with no faults and export the trace as JSON Lines."""
    topo = parse_topology(Path(topology_file).read_text())
    world = build_world(topo, seed)
    trace = world.run(duration_ms)
    Path(out_file).write_bytes(trace.to_jsonl())
    _echo_json({"digest": trace.digest(), "events": len(trace.events), **trace.summary()})
    return 0


@cli.group()
def catalog() -> None:
    """Predefined chaos scenarios."""


@catalog.command(name="list")
def catalog_list() -> int:
    _echo_json([{"id": s.id, "title": s.title, "description": s.description} for s in list_scenarios()])
    return 0


@catalog.command(name="show")
@click.argument("scenario_id")
def catalog_show(scenario_id: str) -> int:
    _echo_json(get_scenario(scenario_id).to_dict())
    return 0


@catalog.command(name="new")
@click.argument("scenario_id")
@click.option("--param", "params", multiple=True, help="k=v override; repeatable.")
@click.option("--out", "out_file", type=click.Path(dir_okay=False))
def catalog_new(scenario_id: str, params: tuple[str, ...], out_file: str | None) -> int:
    """Instantiate a scenario into a runnable experiment document."""
    scenario = get_scenario(scenario_id)
    declared = {p.name: p for p in scenario.params}
    overrides = {}
    for item in params:
        if "=" not in item:
            raise click.UsageError(f"--param expects k=v, got {item!r}")
        key, _, raw = item.partition("=")
        decl = declared.get(key)
        if decl is not None and isinstance(decl.default, int):
            try:
                overrides[key] = int(raw)
            except ValueError:
                raise ParamRangeError(key, f"expected integer, got {raw!r}") from None
        else:
            overrides[key] = raw
    exp = instantiate(scenario_id, overrides)
    text = canon.dumps(exp.to_dict())
    if out_file:
        Path(out_file).write_text(text + "\n")
    click.echo(text)
    return 0


@cli.command()
@click.argument("run_id")
@click.option("--store", "store_dir", envvar="CHAOS_STORE", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--format", "fmt", type=click.Choice(["json", "md"]), default="json")
@click.option("--figures", is_flag=True, help="Also render PNG figures and the readings CSV.")
def report(run_id: str, store_dir: str, fmt: str, figures: bool) -> int:
    """Render a stored run as a report document."""
    store = ResultStore(store_dir)
    run_doc = store.load(run_id)
    rendered = render_report(run_doc, run_id, fmt)
    store.report_path(run_id, fmt).write_text(rendered + ("\n" if fmt == "json" else ""))
    if figures:
        (store.root / "reports" / f"{run_id}.readings.csv").write_text(readings_csv(run_doc))
        render_figures(run_doc, run_id, store.root / "reports")
    click.echo(rendered)
    return 0


@cli.group(name="audit")
def audit_group() -> None:
    """Audit chain operations."""


@audit_group.command(name="verify")
@click.argument("chain_file", type=click.Path(exists=True, dir_okay=False))
def audit_verify(chain_file: str) -> int:
    """Exit 0 when the chain verifies, 1 when tampered (prints first_bad_seq)."""
    result = verify(Path(chain_file).read_bytes())
    _echo_json({"ok": result.ok, "first_bad_seq": result.first_bad_seq, "records": result.records})
    return 0 if result.ok else 1


@cli.group()
def backlog() -> None:
    """Discovery-phase experiment backlog."""


@backlog.command(name="prioritize")
@click.argument("backlog_file", type=click.Path(exists=True, dir_okay=False))
def backlog_prioritize(backlog_file: str) -> int:
    entries = parse_backlog(Path(backlog_file).read_text())
    _echo_json([e.to_dict() for e in prioritize_backlog(entries)])
    return 0


@cli.command()
@click.option("--store", "store_dir", envvar="CHAOS_STORE", required=True, type=click.Path(exists=True, file_okay=False))
def maturity(store_dir: str) -> int:
    """Assess practice maturity from the store's run history."""
    store = ResultStore(store_dir)
    _echo_json(assess_maturity(store.summaries()).to_dict())
    return 0


@cli.command()
@click.argument("run_id")
@click.option("--store", "store_dir", envvar="CHAOS_STORE", required=True, type=click.Path(exists=True, file_okay=False))
def replay(run_id: str, store_dir: str) -> int:
    """Re-execute a stored sim run; its trace digest must reproduce."""
    store = ResultStore(store_dir)
    run_doc = store.load(run_id)
    if run_doc["result"]["driver"] != "sim" or run_doc["topology"] is None:
        raise DriverIoError("replay requires a sim run with a stored topology")
    from .model import parse_experiment_dict
    from .topology import parse_topology_dict

    exp = parse_experiment_dict(run_doc["experiment"])
    topo = parse_topology_dict(run_doc["topology"])
    world = build_world(topo, exp.seed)
    driver = SimDriver(world)
    source = SimMetricSource(world)
    with tempfile.TemporaryDirectory() as tmp:
        audit = AuditChain(Path(tmp) / "replay.jsonl")
        try:
            result = run_experiment(exp, driver, source, audit, driver_name="sim")
        finally:
            audit.close()
    original = run_doc["result"]["trace_digest"]
    _echo_json(
        {
            "run_id": run_id,
            "original_digest": original,
            "replay_digest": result.trace_digest,
            "match": result.trace_digest == original,
            "status": result.status.value,
        }
    )
    if result.trace_digest != original:
        return 5
    return EXIT_BY_STATUS[result.status]


def main(argv: list[str] | None = None) -> int:
    """Run the CLI; returns the process exit code."""
    try:
        rv = cli.main(args=argv, standalone_mode=False)
        return rv if isinstance(rv, int) else 0
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 3
    except click.ClickException as exc:
        exc.show()
        return 3
    except CONFIG_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    except DRIVER_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 4
    except ChaosError as exc:
        click.echo(f"error: {exc}", err=True)
        return 5
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit 5
        click.echo(f"internal error: {exc!r}", err=True)
        return 5


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
