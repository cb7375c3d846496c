"""Thin command-line client: argument parsing only, all work delegated to the
library and the service layer. `serve` hosts the same FastAPI app the analyst
console consumes."""

from __future__ import annotations

import json
import os
import sys

import click

from .audit import load_events, replay_final_records, verify_audit_chain
from .config import env_data_dir, env_port, load_config
from .evalsuite import ExperimentProfile, VARIANTS, load_report, render_table1, run_experiment, write_report
from .evidence import build_index
from .model import canonical_json_bytes
from .pipeline import TriageService
from .simgen import WorldConfig, build_case_memory, generate_world, load_split, load_world, save_world, time_split


def _world_dir(data_dir: str) -> str:
    return os.path.join(data_dir, "world")


def _service(data_dir: str, config_path: str | None) -> TriageService:
    world = load_world(_world_dir(data_dir))
    split = load_split(_world_dir(data_dir))
    config = load_config(config_path)
    return TriageService(
        world, split, config, audit_path=os.path.join(data_dir, "audit.jsonl")
    )


@click.group()
def main():
    """Evidence-constrained AML alert triage."""


@main.command()
@click.option("--seed", default=7, type=int, show_default=True)
@click.option("--accounts", default=60, type=int, show_default=True)
@click.option("--days", default=30, type=int, show_default=True)
@click.option("--structuring", default=3, type=int, show_default=True)
@click.option("--rapid-movement", default=3, type=int, show_default=True)
@click.option("--high-risk-counterparty", default=3, type=int, show_default=True)
@click.option("--fan-in", default=3, type=int, show_default=True)
@click.option("--noise-rate", default=0.5, type=float, show_default=True)
@click.option("--data", "data_dir", default=None, help="data directory (or AMLTRIAGE_DATA_DIR)")
def gen(seed, accounts, days, structuring, rapid_movement, high_risk_counterparty, fan_in, noise_rate, data_dir):
    """Generate a synthetic world, split it, build case memory, write JSONL files."""
    data_dir = data_dir or env_data_dir()
    config = WorldConfig(
        seed=seed,
        n_accounts=accounts,
        n_days=days,
        typology_counts={
            "structuring": structuring,
            "rapid_movement": rapid_movement,
            "high_risk_counterparty": high_risk_counterparty,
            "fan_in": fan_in,
        },
        noise_alert_rate=noise_rate,
    )
    world = generate_world(config)
    split = time_split(world.alerts)
    world.evidence_corpus.extend(build_case_memory(split, world))
    save_world(world, split, _world_dir(data_dir))
    click.echo(
        f"world: {len(world.alerts)} alerts ({sum(1 for a in world.alerts if a.label == 'suspicious')} suspicious), "
        f"{len(world.transactions)} transactions, {len(world.evidence_corpus)} evidence items -> {_world_dir(data_dir)}"
    )


@main.command()
@click.option("--data", "data_dir", default=None)
def index(data_dir):
    """Build the evidence index file from evidence.jsonl."""
    data_dir = data_dir or env_data_dir()
    world = load_world(_world_dir(data_dir))
    idx = build_index(world.evidence_corpus)
    path = os.path.join(data_dir, "evidence.index.json")
    idx.save(path)
    click.echo(f"indexed {idx.doc_count} evidence items -> {path}")


@main.command()
@click.option("--alert", "alert_id", default=None, help="triage one alert")
@click.option("--all", "triage_all", is_flag=True, help="triage every alert")
@click.option("--variant", default="full", show_default=True)
@click.option("--data", "data_dir", default=None)
@click.option("--config", "config_path", default=None)
def triage(alert_id, triage_all, variant, data_dir, config_path):
    """Run the pipeline; append to the audit log; snapshot outcomes."""
    if not alert_id and not triage_all:
        raise click.UsageError("pass --alert <id> or --all")
    data_dir = data_dir or env_data_dir()
    service = _service(data_dir, config_path)
    overrides = {"variant_tag": variant}
    ids = [alert_id] if alert_id else [a.id for a in service.world.alerts]
    for aid in ids:
        outcome = service.triage_alert(aid, overrides=overrides)
        click.echo(f"{aid}: {outcome.record.disposition} ({outcome.status})")
    service.save_outcomes(os.path.join(data_dir, "outcomes.json"))


def _write_table(out_dir: str) -> str | None:
    reports = []
    for tag in VARIANTS:
        path = os.path.join(out_dir, f"report.{tag}.json")
        if os.path.exists(path):
            reports.append(load_report(path))
    if not reports:
        return None
    path = os.path.join(out_dir, "table1.md")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_table1(reports))
    return path


@main.command("eval")
@click.option("--variant", type=click.Choice(list(VARIANTS) + ["all"]), default="all", show_default=True)
@click.option("--data", "data_dir", default=None)
@click.option("--out", "out_dir", default=None, help="report directory (default <data>/reports)")
def eval_cmd(variant, data_dir, out_dir):
    """Run the metric suite; write report JSONs, PR-curve CSVs, and table1.md."""
    data_dir = data_dir or env_data_dir()
    out_dir = out_dir or os.path.join(data_dir, "reports")
    world = load_world(_world_dir(data_dir))
    split = load_split(_world_dir(data_dir))
    profile = ExperimentProfile()
    variants = list(VARIANTS) if variant == "all" else [variant]
    for tag in variants:
        report = run_experiment(world, split, tag, profile)
        path = write_report(report, out_dir)
        click.echo(f"{tag}: {path}")
    table_path = _write_table(out_dir)
    if table_path:
        click.echo(table_path)


@main.command()
@click.option("--data", "data_dir", default=None)
@click.option("--out", "out_dir", default=None)
def report(data_dir, out_dir):
    """Combine report.<variant>.json files into table1.md."""
    data_dir = data_dir or env_data_dir()
    out_dir = out_dir or os.path.join(data_dir, "reports")
    path = _write_table(out_dir)
    if path is None:
        raise click.ClickException(f"no report.<variant>.json files in {out_dir}; run `eval` first")
    click.echo(path)


@main.command()
@click.option("--port", default=None, type=int, help="port (or AMLTRIAGE_PORT, default 8008)")
@click.option("--data", "data_dir", default=None)
@click.option("--config", "config_path", default=None)
def serve(port, data_dir, config_path):
    """Serve the HTTP API for the analyst console."""
    import uvicorn

    from .api import create_app

    data_dir = data_dir or env_data_dir()
    service = _service(data_dir, config_path)
    app = create_app(service)
    uvicorn.run(app, host="127.0.0.1", port=port or env_port())


@main.command("audit-verify")
@click.option("--data", "data_dir", default=None)
@click.option("--replay", is_flag=True, help="also reconstruct final records from the log")
def audit_verify(data_dir, replay):
    """Verify the audit hash chain end to end."""
    data_dir = data_dir or env_data_dir()
    path = os.path.join(data_dir, "audit.jsonl")
    if not os.path.exists(path):
        raise click.ClickException(f"no audit log at {path}")
    events = load_events(path)
    ok, broken = verify_audit_chain(events)
    if ok:
        click.echo(f"audit chain OK ({len(events)} events)")
    else:
        click.echo(f"audit chain BROKEN at seq {broken}")
        sys.exit(1)
    if replay:
        records = replay_final_records(events)
        out = {aid: blob.decode("utf-8") for aid, blob in sorted(records.items())}
        click.echo(canonical_json_bytes({"replayed": len(out)}).decode("utf-8"))
        replay_path = os.path.join(data_dir, "replayed_records.json")
        with open(replay_path, "w", encoding="utf-8") as fh:
            json.dump(out, fh, indent=0, sort_keys=True)
        click.echo(replay_path)


if __name__ == "__main__":
    main()
