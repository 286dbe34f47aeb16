"""Operator CLI: evaluate a duty store, run simulations, validate protocol
messages, classify/route inbound mail, and launch the gateway.

Every command takes its "current time" from --at so runs are reproducible;
the wall clock is only the fallback. Exit codes: 0 ok, 1 validation
failures, 2 store/scenario/system errors.
"""

from __future__ import annotations

import json
import sys
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import click

from . import ace, aria, sim
from .duties import (
    CorruptStoreError,
    DutyModelError,
    DutyRegistry,
    StoreIOError,
    duty_to_obj,
)
from .engine import DEFAULT_ENGINE_CONFIG, evaluate_cycle
from .gateway import create_app
from .signals import EngagementContext, EngagementHistory
from .timefmt import parse_rfc3339


def _now(at: str | None) -> datetime:
    if at:
        try:
            return parse_rfc3339(at)
        except ValueError as exc:
            raise click.ClickException(f"bad --at timestamp: {exc}")
    return datetime.now(timezone.utc)


def _open_store(path: str) -> DutyRegistry:
    try:
        return DutyRegistry.open(path)
    except (CorruptStoreError, StoreIOError) as exc:
        click.echo(f"store error: {exc.__class__.__name__}: {exc}", err=True)
        sys.exit(2)


@click.group()
def main():
    """Duty-aware wake scheduling at desk scale."""


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

@main.command()
@click.option("--store", envvar="JAGARIN_STORE", required=True, help="Duty store directory.")
@click.option("--at", default=None, help="Evaluation time (RFC-3339); default now.")
@click.option("--hour", type=click.IntRange(0, 23), default=None, help="Context hour override.")
@click.option("--charging", is_flag=True)
@click.option("--wifi", is_flag=True)
@click.option("--ignore-streak", type=click.IntRange(min=0), default=0)
@click.option("--format", "fmt", type=click.Choice(["table", "structured"]), default="table")
def evaluate(store, at, hour, charging, wifi, ignore_streak, fmt):
    """Score every active duty and print the breakdown."""
    registry = _open_store(store)
    now = _now(at)
    try:
        snap = registry.snapshot(now)
    except DutyModelError as exc:
        click.echo(f"store error: {exc}", err=True)
        sys.exit(2)
    if not snap.duties:
        click.echo("no active duties")
        return
    ctx = EngagementContext.neutral(now)
    if hour is not None or charging or wifi or ignore_streak:
        ctx = EngagementContext(
            at=now,
            hour=hour if hour is not None else ctx.hour,
            weekday=ctx.weekday,
            charging=charging,
            wifi=wifi,
            ignore_streak=ignore_streak,
            hours_since_last_open=1.0,
        )
    decisions = evaluate_cycle(snap, ctx, EngagementHistory.empty(), DEFAULT_ENGINE_CONFIG, now)
    thresholds = snap.thresholds

    if fmt == "structured":
        items = []
        for d in decisions:
            th = thresholds[d.duty_id]
            items.append({
                "duty_id": d.duty_id,
                "t_days": d.t_days,
                "toc": d.signals.toc,
                "bep": d.signals.bep,
                "vdi": d.signals.vdi,
                "cdr": d.signals.cdr,
                "score": d.score,
                "theta1": th.theta1,
                "theta2": th.theta2,
                "zone": d.zone.name,
                "zone_reason": d.zone_reason.value,
                "defer_days": d.defer_days,
                "message": d.message,
            })
        click.echo(json.dumps(items, indent=2, sort_keys=True))
        return

    header = (
        f"{'duty':<14} {'t_days':>7} {'toc':>6} {'bep':>6} {'vdi':>6} {'cdr':>6} "
        f"{'S':>6} {'θ1/θ2':>11} {'zone':<8} {'reason':<13} {'defer':<6}"
    )
    click.echo(header)
    click.echo("-" * len(header))
    for d in decisions:
        th = thresholds[d.duty_id]
        defer = "now" if d.defer_days == 0 else f"+{d.defer_days}d"
        click.echo(
            f"{d.duty_id:<14.14} {d.t_days:>7.1f} {d.signals.toc:>6.3f} {d.signals.bep:>6.3f} "
            f"{d.signals.vdi:>6.3f} {d.signals.cdr:>6.3f} {d.score:>6.3f} "
            f"{th.theta1:>5.2f}/{th.theta2:<5.2f} {d.zone.name:<8} {d.zone_reason.value:<13} {defer:<6}"
        )


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def default_scenario_path() -> Path:
    return Path(str(resources.files("jagarin").joinpath("data/default_scenario.json")))


@main.command()
@click.option("--scenario", type=click.Path(), default=None, help="Scenario file; default is the shipped one.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", type=click.Path(), required=True, help="Output directory.")
def simulate(scenario, seed, out):
    """Run the seeded policy comparison and write report + metrics."""
    path = Path(scenario) if scenario else default_scenario_path()
    try:
        cfg = sim.load_scenario(path, seed_override=seed)
    except (OSError, json.JSONDecodeError, sim.InvalidConfigError) as exc:
        click.echo(f"scenario error: {exc}", err=True)
        sys.exit(2)
    result = sim.run(cfg)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = sim.report(result)
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    sim.write_metrics(result, out_dir / "metrics.json")
    click.echo(text)


# ---------------------------------------------------------------------------
# ace
# ---------------------------------------------------------------------------

@main.group("ace")
def ace_group():
    """Protocol message tools."""


def _read_file(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        sys.exit(2)


@ace_group.command("validate")
@click.argument("file", type=click.Path())
def ace_validate(file):
    """Print every validation error in FILE (exit 1 if any)."""
    errors = ace.validate(_read_file(file))
    if not errors:
        click.echo("valid")
        return
    for err in errors:
        click.echo(f"{err.code} {err.path}: {err.detail}")
    sys.exit(1)


@ace_group.command("to-duty")
@click.argument("file", type=click.Path())
@click.option("--at", default=None, help="Registration time (RFC-3339).")
def ace_to_duty(file, at):
    """Map an envelope to a duty record, or report NotADuty."""
    text = _read_file(file)
    try:
        envelope = ace.decode(text)
    except ace.AceValidationError as exc:
        for err in exc.errors:
            click.echo(f"{err.code} {err.path}: {err.detail}")
        sys.exit(1)
    try:
        duty = ace.to_duty(envelope, now=_now(at))
    except ace.MappingFailureError as exc:
        click.echo(f"mapping failure: {exc}")
        sys.exit(1)
    if duty is None:
        click.echo("NotADuty")
        return
    click.echo(json.dumps(duty_to_obj(duty), indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# aria
# ---------------------------------------------------------------------------

@main.group("aria")
def aria_group():
    """Inbound message tools."""


@aria_group.command("classify")
@click.argument("file", type=click.Path())
@click.option("--at", default=None, help="Received time fallback (RFC-3339).")
def aria_classify(file, at):
    """Print the message category for a plain-text message fixture."""
    msg = aria.parse_message_text(_read_file(file), default_received_at=_now(at))
    click.echo(aria.classify(msg).value)


@aria_group.command("route")
@click.argument("file", type=click.Path())
@click.option("--store", envvar="JAGARIN_STORE", required=True)
@click.option("--at", default=None, help="Routing time (RFC-3339).")
@click.option("--bep", type=float, default=0.5, help="Engagement score at ingest.")
@click.option("--ppm", "ppm_path", type=click.Path(), default=None, help="Purchase history JSON.")
def aria_route(file, store, at, bep, ppm_path):
    """Classify, route, and apply the action against the duty store."""
    registry = _open_store(store)
    now = _now(at)
    msg = aria.parse_message_text(_read_file(file), default_received_at=now)
    ppm = aria.PurchasePatternModel()
    if ppm_path:
        try:
            obj = json.loads(_read_file(ppm_path))
            purchases = [
                aria.Purchase(
                    merchant=p["merchant"],
                    category_tag=p["category_tag"],
                    amount_minor=int(p["amount_minor"]),
                    currency=p.get("currency", "USD"),
                    at=parse_rfc3339(p["at"]),
                )
                for p in obj["purchases"]
            ]
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            click.echo(f"bad ppm file: {exc}", err=True)
            sys.exit(2)
        ppm = aria.PurchasePatternModel.from_purchases(purchases)
    action = aria.route(msg, ppm, bep_at_ingest=bep, now=now)
    if action.kind is aria.ActionKind.REGISTER_DUTY and action.duty is not None:
        try:
            duty_id = registry.register_duty(action.duty, now=now)
        except DutyModelError as exc:
            click.echo(f"register failed: {exc}", err=True)
            sys.exit(2)
        click.echo(f"{action.kind.value} duty_id={duty_id}")
        return
    if action.kind is aria.ActionKind.ARCHIVE_SILENTLY:
        click.echo("archived (silent)")
        return
    click.echo(action.kind.value + (f" [{action.detail}]" if action.detail else ""))


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------

@main.command()
@click.option("--port", envvar="JAGARIN_PORT", type=int, default=8420)
@click.option("--host", default="127.0.0.1")
@click.option("--store", envvar="JAGARIN_STORE", required=True)
def serve(port, host, store):
    """Run the ingest gateway until interrupted."""
    import logging

    import uvicorn

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    app = create_app(store_dir=store)
    try:
        uvicorn.run(app, host=host, port=port, log_level="info")
    except OSError as exc:
        click.echo(f"serve failed: {exc}", err=True)
        sys.exit(2)
    except SystemExit:
        click.echo(f"serve failed: could not start on {host}:{port} (port busy?)", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
