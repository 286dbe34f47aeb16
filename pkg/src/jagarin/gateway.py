"""HTTP ingest surface bridging institutional traffic onto the duty registry.

Push delivery is modeled as an in-process event sink with a pluggable
transport hook; events are also appended to the store directory so tests
and operators can inspect exactly what would have been delivered. All
registry mutations funnel through one lock (the registry is single-writer);
reads evaluate immutable snapshots.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from . import ace
from .aria import ActionKind, InboundMessage, PurchasePatternModel, classify, route
from .duties import (
    DutyRegistry,
    DuplicateIdError,
    InteractionEvent,
    InteractionOutcome,
    UnknownDutyError,
    Zone,
    duty_to_obj,
)
from .engine import DEFAULT_ENGINE_CONFIG, EngineConfig, WakeDecision, evaluate_cycle
from .signals import EngagementContext, EngagementHistory
from .timefmt import format_rfc3339, parse_rfc3339

log = logging.getLogger("jagarin.gateway")

PUSH_EVENT_LOG_FILE = "push_events.log"


class PushEventKind(Enum):
    DUTY_REGISTERED = "DUTY_REGISTERED"
    NUDGE = "NUDGE"
    ACT_NOW = "ACT_NOW"
    LOW_PRIORITY_OFFER = "LOW_PRIORITY_OFFER"
    SOCIAL_NOTIFY = "SOCIAL_NOTIFY"


@dataclass(frozen=True)
class PushEvent:
    kind: PushEventKind
    body: str
    at: datetime
    duty_id: str | None = None

    def to_obj(self) -> dict:
        obj = {"kind": self.kind.value, "body": self.body, "at": format_rfc3339(self.at)}
        if self.duty_id is not None:
            obj["duty_id"] = self.duty_id
        return obj


class EventSink:
    """In-process stand-in for push delivery, with a transport seam."""

    def __init__(
        self,
        log_path: Path | None = None,
        transport: Callable[[PushEvent], None] | None = None,
    ):
        self.events: list[PushEvent] = []
        self._log_path = log_path
        self._transport = transport

    def emit(self, event: PushEvent) -> None:
        self.events.append(event)
        if self._transport is not None:
            self._transport(event)
        if self._log_path is not None:
            with open(self._log_path, "a", encoding="utf-8") as fp:
                fp.write(json.dumps(event.to_obj(), sort_keys=True, separators=(",", ":")) + "\n")

    def of_kind(self, kind: PushEventKind) -> list[PushEvent]:
        return [e for e in self.events if e.kind is kind]


class InboundBody(BaseModel):
    sender_address: str
    sender_domain: str = ""
    subject: str = ""
    body_text: str = ""
    received_at: str | None = None
    bep_at_ingest: float = 0.5


class InteractionBody(BaseModel):
    outcome: str
    fired_zone: str
    score: float
    at: str | None = None


def _decision_to_obj(decision: WakeDecision) -> dict:
    return {
        "duty_id": decision.duty_id,
        "t_days": decision.t_days,
        "signals": {
            "toc": decision.signals.toc,
            "bep": decision.signals.bep,
            "vdi": decision.signals.vdi,
            "cdr": decision.signals.cdr,
            "cdr_partner": decision.signals.cdr_partner,
        },
        "score": decision.score,
        "zone": decision.zone.name,
        "zone_reason": decision.zone_reason.value,
        "message": decision.message,
        "defer_days": decision.defer_days,
    }


def create_app(
    store_dir: Path | str | None = None,
    *,
    registry: DutyRegistry | None = None,
    sink: EventSink | None = None,
    config: EngineConfig = DEFAULT_ENGINE_CONFIG,
    ppm: PurchasePatternModel | None = None,
    ace_registry: ace.ExtensionRegistry = ace.DEFAULT_REGISTRY,
    clock: Callable[[], datetime] | None = None,
) -> FastAPI:
    if registry is None:
        registry = DutyRegistry.open(store_dir) if store_dir is not None else DutyRegistry()
    if sink is None:
        log_path = Path(store_dir) / PUSH_EVENT_LOG_FILE if store_dir is not None else None
        sink = EventSink(log_path=log_path)
    ppm = ppm or PurchasePatternModel()
    now_fn = clock or (lambda: datetime.now(timezone.utc))

    app = FastAPI(title="jagarin gateway", version="0.1.0")
    app.state.registry = registry
    app.state.sink = sink
    app.state.lock = threading.Lock()
    card_bytes = ace.agent_card_bytes(ace_registry)

    @app.exception_handler(RequestValidationError)
    async def malformed_body(_request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"errors": [str(exc)]})

    def _register(duty, body: str) -> tuple[str, bool]:
        """Register under the lock; duplicate ids are idempotent re-sends."""
        with app.state.lock:
            try:
                duty_id = registry.register_duty(duty, now=now_fn())
            except DuplicateIdError:
                return duty.id, True
        sink.emit(PushEvent(PushEventKind.DUTY_REGISTERED, body, now_fn(), duty_id=duty_id))
        return duty_id, False

    @app.post("/ace/ingest")
    async def ace_ingest(request: Request):
        raw = (await request.body()).decode("utf-8", errors="replace")
        try:
            envelope = ace.decode(raw, ace_registry)
        except ace.AceValidationError as exc:
            return JSONResponse(status_code=400, content={"errors": [e.to_obj() for e in exc.errors]})
        try:
            duty = ace.to_duty(envelope, now=now_fn())
        except ace.MappingFailureError as exc:
            return JSONResponse(status_code=422, content={"reason": str(exc)})
        if duty is None:
            log.info("ace ingest message_id=%s category=%s result=no_duty",
                     envelope.message_id, envelope.category.value)
            return {"category": envelope.category.value, "duty_id": None, "result": "no_duty"}
        duty_id, duplicate = _register(duty, f"New duty from {envelope.sender.institution_name}")
        log.info("ace ingest message_id=%s duty_id=%s duplicate=%s",
                 envelope.message_id, duty_id, duplicate)
        return {"category": envelope.category.value, "duty_id": duty_id, "duplicate": duplicate}

    @app.get("/ace/.well-known/agent.json")
    async def agent_card():
        return Response(content=card_bytes, media_type="application/json")

    @app.post("/aria/inbound")
    async def aria_inbound(body: InboundBody):
        received = parse_rfc3339(body.received_at) if body.received_at else now_fn()
        domain = body.sender_domain or (
            body.sender_address.rsplit("@", 1)[1] if "@" in body.sender_address else ""
        )
        msg = InboundMessage(
            sender_address=body.sender_address,
            sender_domain=domain,
            subject=body.subject,
            body_text=body.body_text,
            received_at=received,
        )
        category = classify(msg)
        action = route(msg, ppm, bep_at_ingest=body.bep_at_ingest, now=now_fn())
        duty_id = None
        if action.kind is ActionKind.REGISTER_DUTY and action.duty is not None:
            duty_id, _ = _register(action.duty, f"New duty from {action.duty.counterparty}")
        elif action.kind is ActionKind.STORE_AND_NOTIFY_LOW_PRIORITY:
            sink.emit(PushEvent(PushEventKind.LOW_PRIORITY_OFFER, msg.subject, now_fn()))
        elif action.kind is ActionKind.NOTIFY_ONLY:
            sink.emit(PushEvent(PushEventKind.SOCIAL_NOTIFY, msg.subject, now_fn()))
        # ARCHIVE_SILENTLY, UPDATE_REWARDS_GRAPH, MANUAL_REVIEW: no push events.
        log.info("aria inbound from=%s category=%s action=%s duty_id=%s",
                 msg.sender_domain, category.value, action.kind.value, duty_id)
        return {"category": category.value, "action": action.kind.value, "duty_id": duty_id}

    @app.get("/duties")
    async def list_duties(
        state: str | None = None,
        at: str | None = None,
        hour: int | None = Query(default=None, ge=0, le=23),
        charging: bool = False,
        wifi: bool = False,
        ignore_streak: int = Query(default=0, ge=0),
    ):
        now = parse_rfc3339(at) if at else now_fn()
        with app.state.lock:
            snap = registry.snapshot(now)
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
        decisions = evaluate_cycle(snap, ctx, EngagementHistory.empty(), config, now)
        by_id = {d.id: d for d in snap.duties}
        items = []
        for decision in decisions:
            if state is not None and decision.zone.name != state.upper():
                continue
            items.append({
                "duty": duty_to_obj(by_id[decision.duty_id]),
                "decision": _decision_to_obj(decision),
            })
        return items

    @app.post("/duties/{duty_id}/interaction")
    async def record_interaction(duty_id: str, body: InteractionBody):
        try:
            event = InteractionEvent(
                duty_id=duty_id,
                fired_zone=Zone[body.fired_zone.upper()],
                score_at_fire=body.score,
                outcome=InteractionOutcome(body.outcome.upper()),
                at=parse_rfc3339(body.at) if body.at else now_fn(),
            )
        except (KeyError, ValueError) as exc:
            return JSONResponse(status_code=400, content={"errors": [str(exc)]})
        with app.state.lock:
            try:
                thresholds = registry.record_interaction(event)
            except UnknownDutyError:
                return JSONResponse(status_code=404, content={"errors": [f"unknown duty {duty_id}"]})
        return {"theta1": thresholds.theta1, "theta2": thresholds.theta2}

    return app
