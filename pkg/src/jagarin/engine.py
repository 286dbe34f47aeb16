"""Composite wake scoring and everything gated by it.

Turns the four signals into a single score, classifies the three-way zone
(with the near-deadline urgency floor and the pickup cap), adapts the
per-duty thresholds from notification interactions, picks act-now vs defer,
upgrades messages to batch opportunities, and renders the offline
escalation templates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Mapping

from .duties import (
    THETA_MIN,
    THETA_MAX,
    THETA_MIN_GAP,
    CurveKind,
    DutyRecord,
    DutyThresholds,
    DutyType,
    InteractionEvent,
    InteractionOutcome,
    RegistrySnapshot,
    Zone,
)
from .signals import (
    EngagementContext,
    EngagementHistory,
    SignalBreakdown,
    bep,
    cdr_from_features,
    duty_cdr_features,
    toc,
    toc_value,
    vdi,
)
from .timefmt import days_between

__all__ = [
    "EngineConfig",
    "Zone",
    "ZoneReason",
    "WakeDecision",
    "EscalationResult",
    "EscalationUnavailableError",
    "PreconditionError",
    "composite_score",
    "classify_zone",
    "adapt_threshold",
    "defer_schedule",
    "evaluate_cycle",
    "batch_message",
    "escalate",
]

DEFAULT_URGENCY_FLOOR_DAYS = 7.0


class PreconditionError(Exception):
    pass


class EscalationUnavailableError(Exception):
    pass


class ZoneReason(Enum):
    SCORED = "SCORED"
    URGENCY_FLOOR = "URGENCY_FLOOR"
    BOPIS_CAP = "BOPIS_CAP"


def _default_urgency_floors() -> dict[DutyType, float]:
    # Pickup duties get no floor: their zone is capped at NUDGE anyway.
    return {
        t: DEFAULT_URGENCY_FLOOR_DAYS for t in DutyType if t is not DutyType.BOPIS_PICKUP
    }


@dataclass(frozen=True)
class EngineConfig:
    """Composite weights, adaptation constants, and zone-override knobs."""

    weights: tuple[float, float, float, float] = (0.35, 0.25, 0.25, 0.15)
    alpha: float = 0.05
    theta_bounds: tuple[float, float] = (THETA_MIN, THETA_MAX)
    batch_threshold: float = 0.6
    urgency_floor_days: Mapping[DutyType, float] = field(default_factory=_default_urgency_floors)
    defer_horizons_days: tuple[int, ...] = (1, 3, 7)

    def __post_init__(self):
        if math.fsum(self.weights) != 1.0:
            raise ValueError("composite weights must sum to 1.0")
        lo, hi = self.theta_bounds
        if not lo < hi:
            raise ValueError("theta_bounds must be ordered")
        if any(b <= a for a, b in zip(self.defer_horizons_days, self.defer_horizons_days[1:])):
            raise ValueError("defer_horizons_days must be strictly increasing")


DEFAULT_ENGINE_CONFIG = EngineConfig()


@dataclass(frozen=True)
class WakeDecision:
    """One duty's evaluation result for one wake cycle.

    ``defer_days`` of 0 means act now; otherwise it is the recommended wait
    from the defer schedule.
    """

    duty_id: str
    t_days: float
    signals: SignalBreakdown
    score: float
    zone: Zone
    zone_reason: ZoneReason
    message: str
    defer_days: int


@dataclass(frozen=True)
class EscalationResult:
    recommendation: str
    action_points: tuple[str, ...]
    draft_message: str


# ---------------------------------------------------------------------------
# Scoring and zoning
# ---------------------------------------------------------------------------

def composite_score(signals: SignalBreakdown, cfg: EngineConfig = DEFAULT_ENGINE_CONFIG) -> float:
    w_toc, w_bep, w_vdi, w_cdr = cfg.weights
    return w_toc * signals.toc + w_bep * signals.bep + w_vdi * signals.vdi + w_cdr * signals.cdr


def classify_zone(
    score: float,
    thresholds: DutyThresholds,
    duty: DutyRecord,
    t_days: float,
    cfg: EngineConfig = DEFAULT_ENGINE_CONFIG,
) -> tuple[Zone, ZoneReason]:
    """Threshold zones, then the urgency floor, then the pickup cap (which wins)."""
    if score < thresholds.theta1:
        zone = Zone.SLEEP
    elif score < thresholds.theta2:
        zone = Zone.NUDGE
    else:
        zone = Zone.ACT_NOW
    reason = ZoneReason.SCORED

    floor = cfg.urgency_floor_days.get(duty.duty_type)
    if floor is not None and 0.0 <= t_days <= floor and zone < Zone.ACT_NOW:
        zone = Zone.ACT_NOW
        reason = ZoneReason.URGENCY_FLOOR

    if duty.duty_type is DutyType.BOPIS_PICKUP and zone > Zone.NUDGE:
        zone = Zone.NUDGE
        reason = ZoneReason.BOPIS_CAP
    return zone, reason


def adapt_threshold(
    th: DutyThresholds,
    event: InteractionEvent,
    cfg: EngineConfig = DEFAULT_ENGINE_CONFIG,
) -> DutyThresholds:
    """EMA update of the threshold that gated the fired notification.

    Responded pulls the threshold toward the fired score; ignored pushes it
    toward 1. Values are clamped to the configured bounds and the minimum
    gap is restored by pushing the non-updated threshold.
    """
    lo, hi = cfg.theta_bounds
    alpha = th.alpha
    nudge_fired = event.fired_zone is Zone.NUDGE
    current = th.theta1 if nudge_fired else th.theta2
    if event.outcome is InteractionOutcome.RESPONDED:
        updated = current - alpha * (current - event.score_at_fire)
    else:
        updated = current + alpha * (1.0 - current)
    updated = min(max(updated, lo), hi)

    if nudge_fired:
        t1, t2 = updated, th.theta2
        if t2 - t1 < THETA_MIN_GAP:
            t2 = t1 + THETA_MIN_GAP
        if t2 > hi:
            t2 = hi
            t1 = min(t1, t2 - THETA_MIN_GAP)
    else:
        t1, t2 = th.theta1, updated
        if t2 - t1 < THETA_MIN_GAP:
            t1 = t2 - THETA_MIN_GAP
        if t1 < lo:
            t1 = lo
            t2 = max(t2, t1 + THETA_MIN_GAP)
    return replace(th, theta1=t1, theta2=t2)


def defer_schedule(
    duty: DutyRecord, t_days: float, cfg: EngineConfig = DEFAULT_ENGINE_CONFIG
) -> int:
    """Days to wait (0 = act now) that maximize opportunity value.

    Candidates past the deadline are skipped; ties prefer the longer wait
    (waiting is free when value is unchanged). Step curves always act now.
    """
    params = duty.resolved_toc_params
    if params.curve_kind is CurveKind.STEP:
        return 0
    best_days = 0
    best_value = toc(t_days, params)
    for d in cfg.defer_horizons_days:
        if t_days - d < 0:
            continue
        value = toc(t_days - d, params)
        if value >= best_value:
            best_value = value
            best_days = d
    return best_days


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------

_DUTY_PHRASES: dict[DutyType, str] = {
    DutyType.INSURANCE_RENEWAL: "policy renewal",
    DutyType.PRESCRIPTION_REFILL: "prescription refill",
    DutyType.WELLNESS_VISIT: "wellness visit",
    DutyType.SUBSCRIPTION_RENEWAL: "subscription renewal",
    DutyType.VEHICLE_SERVICE: "vehicle service",
    DutyType.RETURN_DEADLINE: "return window",
    DutyType.LICENSE_RENEWAL: "license renewal",
    DutyType.SUPPORT_FOLLOW_UP: "support follow-up",
    DutyType.TAX_DEADLINE: "tax filing",
    DutyType.TRAVEL_CHECK_IN: "travel check-in",
    DutyType.CUSTOM: "deadline",
    DutyType.BOPIS_PICKUP: "order pickup",
}


def _deadline_phrase(t_days: float) -> str:
    days = int(round(t_days))
    if days < 0:
        return f"overdue by {-days} day{'s' if days != -1 else ''}"
    if days == 0:
        return "due today"
    return f"due in {days} day{'s' if days != 1 else ''}"


def _zone_message(duty: DutyRecord, zone: Zone, t_days: float) -> str:
    phrase = _DUTY_PHRASES[duty.duty_type]
    when = _deadline_phrase(t_days)
    if zone is Zone.ACT_NOW:
        return f"Act now: {duty.counterparty} {phrase} is {when}."
    if zone is Zone.NUDGE:
        return f"Gentle reminder: {duty.counterparty} {phrase} is {when}."
    return f"{duty.counterparty} {phrase} is {when}; nothing to do yet."


def batch_message(
    a: DutyRecord, b: DutyRecord, cfg: EngineConfig = DEFAULT_ENGINE_CONFIG
) -> str:
    """One-sentence batching pitch naming both counterparties and the window."""
    from .signals import cdr_pair  # local: avoid polluting module surface

    if cdr_pair(a, b) < cfg.batch_threshold:
        raise PreconditionError("pair resonance below batch threshold")
    gap_days = abs(days_between(a.deadline, b.deadline))
    weeks = max(1, math.ceil(gap_days / 7.0))
    if a.counterparty_domain.strip().lower() == "insurance" == b.counterparty_domain.strip().lower():
        return (
            f"Your {a.counterparty} and {b.counterparty} policies both renew within "
            f"{weeks} weeks - bundling them typically saves 12-18%."
        )
    return (
        f"{a.counterparty} and {b.counterparty} both need attention within "
        f"{weeks} weeks - one errand can cover both."
    )


# ---------------------------------------------------------------------------
# Full cycle
# ---------------------------------------------------------------------------

def evaluate_cycle(
    snap: RegistrySnapshot,
    ctx: EngagementContext,
    hist: EngagementHistory,
    cfg: EngineConfig = DEFAULT_ENGINE_CONFIG,
    now: datetime | None = None,
) -> list[WakeDecision]:
    """Score every active duty once; emits a decision per duty, SLEEP included.

    Pure in all inputs; one context serves the whole cycle (one wake, one
    context). Pair features are computed once per duty so the resonance pass
    stays cheap at a hundred duties.
    """
    now = now or snap.taken_at
    duties = snap.duties
    feats = {d.id: duty_cdr_features(d) for d in duties}
    by_id = {d.id: d for d in duties}
    ordered_ids = sorted(by_id)
    bep_value = bep(ctx, hist)

    decisions: list[WakeDecision] = []
    for duty in duties:
        t_days = days_between(duty.deadline, now)
        params = duty.resolved_toc_params
        toc_v = toc_value(t_days, params)
        vdi_v = vdi(t_days, params)

        best = 0.0
        partner: str | None = None
        mine = feats[duty.id]
        for other_id in ordered_ids:
            if other_id == duty.id:
                continue
            score = cdr_from_features(mine, feats[other_id])
            if score > best:
                best = score
                partner = other_id

        signals = SignalBreakdown(toc=toc_v, bep=bep_value, vdi=vdi_v, cdr=best, cdr_partner=partner)
        score = composite_score(signals, cfg)
        zone, reason = classify_zone(score, snap.thresholds_for(duty.id), duty, t_days, cfg)
        message = _zone_message(duty, zone, t_days)
        if partner is not None and best >= cfg.batch_threshold:
            message = batch_message(duty, by_id[partner], cfg)
        decisions.append(
            WakeDecision(
                duty_id=duty.id,
                t_days=t_days,
                signals=signals,
                score=score,
                zone=zone,
                zone_reason=reason,
                message=message,
                defer_days=defer_schedule(duty, t_days, cfg),
            )
        )
    return decisions


# ---------------------------------------------------------------------------
# Escalation (stateless, template-driven offline fallback)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _EscalationTemplate:
    recommendation: str
    action_points: tuple[str, ...]
    request_line: str


_ESCALATION_TEMPLATES: dict[DutyType, _EscalationTemplate] = {
    DutyType.INSURANCE_RENEWAL: _EscalationTemplate(
        "Shop the renewal before it locks in automatically.",
        (
            "Compare the renewal quote against at least 3 competitors",
            "Ask the current insurer to match the best competing quote",
            "Check for bundling discounts across your other policies",
        ),
        "the renewal quote and any bundling or loyalty discounts",
    ),
    DutyType.PRESCRIPTION_REFILL: _EscalationTemplate(
        "Request the refill before the remaining supply runs out.",
        (
            "Confirm remaining refills on the prescription",
            "Ask whether a 90-day fill lowers the copay",
        ),
        "a refill confirmation and pickup or delivery options",
    ),
    DutyType.WELLNESS_VISIT: _EscalationTemplate(
        "Book the visit while convenient slots are still open.",
        (
            "Request the earliest morning or weekend slot",
            "Confirm insurance coverage for the visit",
        ),
        "available appointment times in the next two weeks",
    ),
    DutyType.SUBSCRIPTION_RENEWAL: _EscalationTemplate(
        "Decide whether this subscription still earns its fee.",
        (
            "Review usage over the last three months",
            "Check for a cheaper tier or an annual discount",
            "Cancel or downgrade before the renewal charge",
        ),
        "current plan options and the cancellation procedure",
    ),
    DutyType.VEHICLE_SERVICE: _EscalationTemplate(
        "Schedule the service before the recommended interval lapses.",
        (
            "Compare the dealer quote with two independent shops",
            "Bundle any outstanding recalls into the same visit",
        ),
        "a service appointment and an itemized estimate",
    ),
    DutyType.RETURN_DEADLINE: _EscalationTemplate(
        "Start the return before the window closes.",
        (
            "Generate the return label now",
            "Photograph the item and packaging before shipping",
        ),
        "a return authorization and prepaid label",
    ),
    DutyType.LICENSE_RENEWAL: _EscalationTemplate(
        "Renew before late fees or retesting apply.",
        (
            "Check online renewal eligibility",
            "Gather the required identity documents",
        ),
        "renewal requirements and processing times",
    ),
    DutyType.SUPPORT_FOLLOW_UP: _EscalationTemplate(
        "Chase the open ticket before it goes stale.",
        (
            "Ask for a concrete resolution date",
            "Request escalation to a supervisor if unanswered",
        ),
        "a status update on the open ticket",
    ),
    DutyType.TAX_DEADLINE: _EscalationTemplate(
        "File ahead of the deadline to avoid penalties.",
        (
            "Collect outstanding income and deduction documents",
            "File an extension if the documents cannot arrive in time",
        ),
        "confirmation of required forms and filing options",
    ),
    DutyType.TRAVEL_CHECK_IN: _EscalationTemplate(
        "Check in as soon as the window opens for better options.",
        (
            "Complete online check-in",
            "Verify travel documents and arrival logistics",
        ),
        "check-in confirmation and any itinerary changes",
    ),
    DutyType.CUSTOM: _EscalationTemplate(
        "Handle this obligation inside its optimal window.",
        (
            "Confirm what completing it requires",
            "Block time before the deadline",
        ),
        "what is needed to complete this ahead of the deadline",
    ),
}


def _deadline_text(deadline: datetime) -> str:
    return f"{deadline:%B} {deadline.day}, {deadline.year}"


def escalate(duty: DutyRecord) -> EscalationResult:
    """Render the stateless recommendation/action/draft bundle for one duty.

    Pickup duties are refused: they need physical presence, which no
    escalation can supply. Nothing is retained after the result is returned.
    """
    if duty.duty_type is DutyType.BOPIS_PICKUP:
        raise EscalationUnavailableError("pickup duties require physical presence")
    template = _ESCALATION_TEMPLATES[duty.duty_type]
    phrase = _DUTY_PHRASES[duty.duty_type]
    deadline_text = _deadline_text(duty.deadline)

    lines = [f"Hello {duty.counterparty},", ""]
    sentence = f"My {phrase} is due on {deadline_text}."
    if duty.reference_number:
        sentence += f" Reference: {duty.reference_number}."
    lines.append(sentence)
    lines.append(f"Please send {template.request_line} before that date.")
    lines.extend(["", "Thank you."])

    return EscalationResult(
        recommendation=template.recommendation,
        action_points=template.action_points,
        draft_message="\n".join(lines),
    )
