"""The four wake signals: opportunity curve, engagement, decay urgency, resonance.

Everything here is a pure function of its inputs, so evaluators may call
into this module from any number of threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from datetime import datetime, timedelta

from .duties import CurveKind, DutyRecord, TocParams
from .timefmt import UTC

# Cross-duty resonance predicate weights and windows.
CDR_W_DOMAIN = 0.5
CDR_W_WINDOW = 0.3
CDR_W_CAPABILITY = 0.2
CDR_W_CYCLE = 0.1
CDR_WINDOW_OVERLAP_DAYS = 14.0
CDR_CYCLE_PHASE_DAYS = 30

_STOPWORDS = frozenset(
    {"a", "an", "and", "at", "by", "for", "in", "of", "on", "or", "the", "to", "via", "with"}
)
_TOKEN_RE = re.compile(r"[a-z0-9]+")


# ---------------------------------------------------------------------------
# Temporal opportunity curve
# ---------------------------------------------------------------------------

def toc(t_days: float, params: TocParams) -> float:
    """Asymmetric Gaussian opportunity value at ``t_days`` before deadline.

    Approach side (t > mu) uses sigma_pre, urgency side uses sigma_post;
    continuous with value 1 at the peak. Negative t (past deadline) is valid.
    """
    if params.curve_kind is not CurveKind.GAUSSIAN:
        raise ValueError("toc() is defined for Gaussian curves; use toc_step()")
    d = t_days - params.mu_days
    sigma = params.sigma_pre_days if d > 0 else params.sigma_post_days
    return math.exp(-(d * d) / (2.0 * sigma * sigma))


def toc_step(t_days: float, pickup_window_days: float) -> float:
    """Step opportunity: 1 inside the pickup window, 0 early or past deadline."""
    return 1.0 if 0.0 <= t_days <= pickup_window_days else 0.0


def toc_value(t_days: float, params: TocParams) -> float:
    """Curve-kind dispatching opportunity value."""
    if params.curve_kind is CurveKind.STEP:
        return toc_step(t_days, params.pickup_window_days or 0.0)
    return toc(t_days, params)


def dtoc_dt(t_days: float, params: TocParams) -> float:
    """Analytic derivative of the opportunity curve; 0 at the peak."""
    if params.curve_kind is not CurveKind.GAUSSIAN:
        raise ValueError("dtoc_dt() is defined for Gaussian curves")
    d = t_days - params.mu_days
    if d == 0.0:
        return 0.0
    sigma = params.sigma_pre_days if d > 0 else params.sigma_post_days
    return -(d / (sigma * sigma)) * toc(t_days, params)


def vdi(t_days: float, params: TocParams) -> float:
    """Normalized positive decay rate: the per-day cost of further delay.

    Zero through the whole approach phase; rescaled so the urgency-side
    derivative maximum (at t = mu - sigma_post) is exactly 1 regardless of
    the curve width. Step curves report 1 inside the window, else 0.
    """
    if params.curve_kind is CurveKind.STEP:
        return toc_step(t_days, params.pickup_window_days or 0.0)
    rate = dtoc_dt(t_days, params)
    if rate <= 0.0:
        return 0.0
    value = rate * params.sigma_post_days * math.exp(0.5)
    return min(value, 1.0)


# ---------------------------------------------------------------------------
# Behavioral engagement predictor (rule-based)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BepRules:
    """Multiplier table for the rule-based engagement model."""

    charging_wifi_boost: float = 1.2
    ignore_dampener: float = 0.8
    stale_open_penalty: float = 0.7
    stale_open_hours: float = 48.0
    floor: float = 0.01
    ceiling: float = 1.0


DEFAULT_BEP_RULES = BepRules()


class EngagementHistory:
    """Per-(weekday, hour) responded/total counts."""

    __slots__ = ("_grid",)

    def __init__(self, grid: list[list[list[int]]] | None = None):
        self._grid = grid if grid is not None else [[[0, 0] for _ in range(24)] for _ in range(7)]

    @classmethod
    def empty(cls) -> "EngagementHistory":
        return cls()

    def record(self, weekday: int, hour: int, responded: bool) -> None:
        cell = self._grid[weekday][hour]
        cell[1] += 1
        if responded:
            cell[0] += 1

    def counts(self, weekday: int, hour: int) -> tuple[int, int]:
        cell = self._grid[weekday][hour]
        return cell[0], cell[1]


@dataclass(frozen=True)
class EngagementContext:
    """Device/user context for one wake cycle."""

    at: datetime
    hour: int
    weekday: int
    charging: bool = False
    wifi: bool = False
    ignore_streak: int = 0
    hours_since_last_open: float = 0.0

    @classmethod
    def from_time(
        cls,
        at: datetime,
        tz_offset_hours: float = 0.0,
        *,
        charging: bool = False,
        wifi: bool = False,
        ignore_streak: int = 0,
        hours_since_last_open: float = 0.0,
    ) -> "EngagementContext":
        local = at.astimezone(UTC) + timedelta(hours=tz_offset_hours)
        return cls(
            at=at,
            hour=local.hour,
            weekday=local.weekday(),
            charging=charging,
            wifi=wifi,
            ignore_streak=ignore_streak,
            hours_since_last_open=hours_since_last_open,
        )

    @classmethod
    def neutral(cls, at: datetime) -> "EngagementContext":
        """No-modifier context: empty-history BEP evaluates to 0.5."""
        return cls.from_time(at, hours_since_last_open=1.0)


def apply_bep_modifiers(
    base: float,
    charging: bool,
    wifi: bool,
    ignore_streak: int,
    hours_since_last_open: float,
    rules: BepRules = DEFAULT_BEP_RULES,
) -> float:
    p = base
    if charging and wifi:
        p *= rules.charging_wifi_boost
    if ignore_streak > 0:
        p *= rules.ignore_dampener ** ignore_streak
    if hours_since_last_open > rules.stale_open_hours:
        p *= rules.stale_open_penalty
    return min(max(p, rules.floor), rules.ceiling)


def bep(ctx: EngagementContext, hist: EngagementHistory, rules: BepRules = DEFAULT_BEP_RULES) -> float:
    """P(user responds | context): Laplace-smoothed cell rate times the rule table."""
    responded, total = hist.counts(ctx.weekday, ctx.hour)
    base = (responded + 1) / (total + 2)
    return apply_bep_modifiers(
        base, ctx.charging, ctx.wifi, ctx.ignore_streak, ctx.hours_since_last_open, rules
    )


# ---------------------------------------------------------------------------
# Cross-duty resonance
# ---------------------------------------------------------------------------

def capability_tokens(text: str | None) -> frozenset[str]:
    if not text:
        return frozenset()
    return frozenset(t for t in _TOKEN_RE.findall(text.lower()) if t not in _STOPWORDS)


def duty_cdr_features(duty: DutyRecord) -> tuple[str, float, int, frozenset[str]]:
    """Static pair-scoring features: (domain, peak epoch-day, deadline day-of-year, tokens)."""
    params = duty.resolved_toc_params
    deadline = duty.deadline.astimezone(UTC)
    epoch_days = deadline.timestamp() / 86400.0
    return (
        duty.counterparty_domain.strip().lower(),
        epoch_days - params.mu_days,
        deadline.timetuple().tm_yday,
        capability_tokens(duty.escalation_capability),
    )


def cdr_from_features(
    a: tuple[str, float, int, frozenset[str]], b: tuple[str, float, int, frozenset[str]]
) -> float:
    score = 0.0
    if a[0] and a[0] == b[0]:
        score += CDR_W_DOMAIN
    if abs(a[1] - b[1]) <= CDR_WINDOW_OVERLAP_DAYS:
        score += CDR_W_WINDOW
    if a[3] and b[3] and not a[3].isdisjoint(b[3]):
        score += CDR_W_CAPABILITY
    doy_gap = abs(a[2] - b[2]) % 365
    if min(doy_gap, 365 - doy_gap) <= CDR_CYCLE_PHASE_DAYS:
        score += CDR_W_CYCLE
    return min(score, 1.0)


def cdr_pair(a: DutyRecord, b: DutyRecord) -> float:
    """Pairwise batch-opportunity score; symmetric, in [0, 1]."""
    return cdr_from_features(duty_cdr_features(a), duty_cdr_features(b))


def cdr_signal(duty: DutyRecord, others: list[DutyRecord]) -> tuple[float, str | None]:
    """Best resonance over the other active duties; ties go to the smaller id."""
    feats = duty_cdr_features(duty)
    best = 0.0
    partner: str | None = None
    for other in sorted(others, key=lambda d: d.id):
        if other.id == duty.id:
            continue
        score = cdr_from_features(feats, duty_cdr_features(other))
        if score > best:
            best = score
            partner = other.id
    return best, partner


@dataclass(frozen=True)
class SignalBreakdown:
    """The four composite inputs for one duty at one wake cycle."""

    toc: float
    bep: float
    vdi: float
    cdr: float
    cdr_partner: str | None = None
