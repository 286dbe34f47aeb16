"""Commercial inbox routing: classify, score against purchase history, and
extract duties from institutional email.

Classification is a fixed-precedence rule cascade (rewards, then temporal
obligations, then commercial offers, then platform updates) so messages
carrying keywords from several buckets resolve deterministically. Duty
extraction is the keyword/regex tier; a pluggable second-tier extractor
seam exists for smarter parsers and declines everything by default.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import Mapping, Protocol

from .duties import DutyRecord, DutySource, DutyType, Money, TocParams
from .timefmt import UTC, days_between, parse_rfc3339

# Routing gates and rewards constants.
PPM_NOTIFY_GATE = 0.5
SOCIAL_BEP_GATE = 0.5
REWARDS_VALUE_THRESHOLD_MINOR = 500
REWARDS_REDEMPTION_WINDOW_DAYS = 14.0

# Purchase-pattern scoring constants.
RECENT_PURCHASE_DAYS = 90.0
RECENCY_DECAY_DAYS = 90.0
RECENCY_WEIGHT = 0.7
AFFINITY_WEIGHT = 0.3


class AriaError(Exception):
    pass


class ExtractionFailedError(AriaError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class MessageCategory(Enum):
    TEMPORAL_OBLIGATION = "TEMPORAL_OBLIGATION"
    COMMERCIAL_OPPORTUNITY = "COMMERCIAL_OPPORTUNITY"
    REWARDS_SIGNAL = "REWARDS_SIGNAL"
    SOCIAL_PLATFORM_UPDATE = "SOCIAL_PLATFORM_UPDATE"


class ActionKind(Enum):
    REGISTER_DUTY = "REGISTER_DUTY"
    STORE_AND_NOTIFY_LOW_PRIORITY = "STORE_AND_NOTIFY_LOW_PRIORITY"
    ARCHIVE_SILENTLY = "ARCHIVE_SILENTLY"
    NOTIFY_ONLY = "NOTIFY_ONLY"
    UPDATE_REWARDS_GRAPH = "UPDATE_REWARDS_GRAPH"
    MANUAL_REVIEW = "MANUAL_REVIEW"


@dataclass(frozen=True)
class InboundMessage:
    """One already-decoded commercial message (plain text only)."""

    sender_address: str
    sender_domain: str
    subject: str
    body_text: str
    received_at: datetime

    @property
    def text(self) -> str:
        return f"{self.subject}\n{self.body_text}"


@dataclass(frozen=True)
class RoutingAction:
    kind: ActionKind
    duty: DutyRecord | None = None
    detail: str = ""


@dataclass(frozen=True)
class RewardsSignal:
    program: str
    points_balance: int
    redeemable_value_minor: int
    currency: str
    points_expiry: datetime | None = None


@dataclass(frozen=True)
class Purchase:
    merchant: str
    category_tag: str
    amount_minor: int
    currency: str
    at: datetime


def parse_message_text(text: str, default_received_at: datetime | None = None) -> InboundMessage:
    """Parse the plain-text fixture format: From/Subject/Date headers, blank line, body."""
    headers: dict[str, str] = {}
    lines = text.splitlines()
    body_start = len(lines)
    for i, line in enumerate(lines):
        if not line.strip():
            body_start = i + 1
            break
        if ":" in line:
            key, _, value = line.partition(":")
            headers[key.strip().lower()] = value.strip()
    sender = headers.get("from", "")
    domain = sender.rsplit("@", 1)[1].strip(" >") if "@" in sender else sender
    received = (
        parse_rfc3339(headers["date"]) if "date" in headers
        else default_received_at or datetime.now(UTC)
    )
    return InboundMessage(
        sender_address=sender,
        sender_domain=domain,
        subject=headers.get("subject", ""),
        body_text="\n".join(lines[body_start:]),
        received_at=received,
    )


# ---------------------------------------------------------------------------
# Deadline parsing
# ---------------------------------------------------------------------------

_ISO_DATE_RE = re.compile(r"\b(\d{4})-(\d{2})-(\d{2})\b")
_MONTHS = {
    m.lower(): i + 1
    for i, m in enumerate(
        ["January", "February", "March", "April", "May", "June", "July",
         "August", "September", "October", "November", "December"]
    )
}
_MONTHS.update({m[:3]: i for m, i in list(_MONTHS.items())})
_MONTH_DATE_RE = re.compile(
    r"\b(Jan(?:uary)?|Feb(?:ruary)?|Mar(?:ch)?|Apr(?:il)?|May|Jun(?:e)?|Jul(?:y)?|"
    r"Aug(?:ust)?|Sep(?:tember)?|Oct(?:ober)?|Nov(?:ember)?|Dec(?:ember)?)\.?\s+"
    r"(\d{1,2})(?:st|nd|rd|th)?(?:,?\s+(\d{4}))?\b",
)
_RELATIVE_RE = re.compile(r"\b(?:in|within|hold(?:s|ing)? for|held for|valid for)\s+(\d{1,3})\s+days?\b", re.I)


def find_deadline(text: str, received_at: datetime) -> datetime | None:
    """First parseable deadline: ISO date, then month-name date, then relative days.

    Month-name dates without a year roll forward to the next occurrence
    after the received date. Absolute dates resolve to UTC midnight.
    """
    m = _ISO_DATE_RE.search(text)
    if m:
        try:
            return datetime(int(m.group(1)), int(m.group(2)), int(m.group(3)), tzinfo=UTC)
        except ValueError:
            pass
    m = _MONTH_DATE_RE.search(text)
    if m:
        month = _MONTHS[m.group(1)[:3].lower()]
        day = int(m.group(2))
        try:
            if m.group(3):
                return datetime(int(m.group(3)), month, day, tzinfo=UTC)
            candidate = datetime(received_at.year, month, day, tzinfo=UTC)
            if candidate.date() < received_at.date():
                candidate = candidate.replace(year=received_at.year + 1)
            return candidate
        except ValueError:
            pass
    m = _RELATIVE_RE.search(text)
    if m:
        return received_at + timedelta(days=int(m.group(1)))
    return None


def find_relative_window_days(text: str) -> float | None:
    m = _RELATIVE_RE.search(text)
    return float(m.group(1)) if m else None


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

_BALANCE_RE = re.compile(r"\b\d[\d,]*\s*(?:points|pts|miles)\b", re.I)
_TIER_RE = re.compile(r"\btier\b", re.I)
_TIER_EVENT_RE = re.compile(r"\b(upgrade|upgraded|status)\b", re.I)
_POINTS_RE = re.compile(r"\b(points|miles)\b", re.I)
_EXPIRY_RE = re.compile(r"\bexpir", re.I)
_OBLIGATION_RE = re.compile(
    r"\b(renew(?:s|al|ed|ing)?|expires?|expiring|due|pick\s?up|return by|"
    r"check[- ]?in|refill|appointment|deadline)\b",
    re.I,
)
_PROMO_RE = re.compile(r"\b(sale|%\s?off|percent off|offer|deal|discount|promo|coupon|save)\b", re.I)
_SOCIAL_RE = re.compile(
    r"\b(followers?|mentioned|mentions?|community|milestone|commented|friend request|trending)\b", re.I
)


def classify(msg: InboundMessage) -> MessageCategory:
    """Fixed-precedence cascade; total (every message gets exactly one category)."""
    text = msg.text
    if _looks_rewards(text):
        return MessageCategory.REWARDS_SIGNAL
    if _OBLIGATION_RE.search(text) and find_deadline(text, msg.received_at) is not None:
        return MessageCategory.TEMPORAL_OBLIGATION
    if _PROMO_RE.search(text):
        return MessageCategory.COMMERCIAL_OPPORTUNITY
    if _SOCIAL_RE.search(text):
        return MessageCategory.SOCIAL_PLATFORM_UPDATE
    return MessageCategory.COMMERCIAL_OPPORTUNITY


def _looks_rewards(text: str) -> bool:
    if _BALANCE_RE.search(text):
        return True
    if _TIER_RE.search(text) and _TIER_EVENT_RE.search(text):
        return True
    return bool(_POINTS_RE.search(text) and _EXPIRY_RE.search(text))


# ---------------------------------------------------------------------------
# Tier-1 extraction
# ---------------------------------------------------------------------------

# Known sender domains: registrable name -> (display name, counterparty tag).
DEFAULT_SENDER_MAP: dict[str, tuple[str, str]] = {
    "statefarm.example": ("State Farm", "insurance"),
    "allstate.example": ("Allstate", "insurance"),
    "cvs.example": ("CVS Pharmacy", "pharmacy"),
    "walgreens.example": ("Walgreens", "pharmacy"),
    "honda.example": ("Honda Service Center", "auto-service"),
    "dmv.example": ("State DMV", "government"),
    "citybooks.example": ("City Books", "retail"),
}

_TYPE_DOMAIN_TAGS: dict[DutyType, str] = {
    DutyType.INSURANCE_RENEWAL: "insurance",
    DutyType.PRESCRIPTION_REFILL: "pharmacy",
    DutyType.WELLNESS_VISIT: "healthcare",
    DutyType.SUBSCRIPTION_RENEWAL: "subscription",
    DutyType.VEHICLE_SERVICE: "auto-service",
    DutyType.RETURN_DEADLINE: "retail",
    DutyType.LICENSE_RENEWAL: "government",
    DutyType.SUPPORT_FOLLOW_UP: "support",
    DutyType.TAX_DEADLINE: "tax",
    DutyType.TRAVEL_CHECK_IN: "travel",
    DutyType.CUSTOM: "general",
    DutyType.BOPIS_PICKUP: "retail",
}

# Ordered keyword map; first hit wins.
_TYPE_KEYWORDS: tuple[tuple[DutyType, re.Pattern], ...] = (
    (DutyType.PRESCRIPTION_REFILL, re.compile(r"\b(prescription|refill|pharmacy)\b", re.I)),
    (DutyType.INSURANCE_RENEWAL, re.compile(r"\b(insurance|policy)\b", re.I)),
    (DutyType.WELLNESS_VISIT, re.compile(r"\b(wellness|check-?up|annual visit|physical exam)\b", re.I)),
    (DutyType.SUBSCRIPTION_RENEWAL, re.compile(r"\b(subscription|membership)\b", re.I)),
    (DutyType.VEHICLE_SERVICE, re.compile(r"\b(vehicle|oil change|service (?:appointment|interval|due))\b", re.I)),
    (DutyType.RETURN_DEADLINE, re.compile(r"\breturn\b", re.I)),
    (DutyType.LICENSE_RENEWAL, re.compile(r"\blicense\b", re.I)),
    (DutyType.TAX_DEADLINE, re.compile(r"\btax\b", re.I)),
    (DutyType.TRAVEL_CHECK_IN, re.compile(r"\b(check[- ]?in|flight|boarding)\b", re.I)),
    (DutyType.BOPIS_PICKUP, re.compile(r"\b(pick\s?up|ready for collection)\b", re.I)),
    (DutyType.SUPPORT_FOLLOW_UP, re.compile(r"\b(ticket|support|case)\b", re.I)),
)

_REFERENCE_RE = re.compile(
    r"(?:policy|order|ref(?:erence)?|ticket|case|confirmation)\s*(?:number|no\.?|#)?\s*:?\s*#?\s*"
    r"([A-Z][A-Z0-9-]{2,}|\d{4,})"
)

_DEFAULT_BOPIS_WINDOW_DAYS = 3.0


def _prettify_domain(domain: str) -> str:
    stem = domain.split(".", 1)[0]
    return " ".join(part.capitalize() for part in re.split(r"[-_]+", stem) if part)


def _sender_identity(
    msg: InboundMessage, duty_type: DutyType, senders: Mapping[str, tuple[str, str]]
) -> tuple[str, str]:
    known = senders.get(msg.sender_domain.lower())
    if known:
        return known
    return _prettify_domain(msg.sender_domain), _TYPE_DOMAIN_TAGS[duty_type]


def _duty_id_for(msg: InboundMessage, deadline: datetime) -> str:
    digest = hashlib.sha256(
        f"{msg.sender_domain}|{msg.subject}|{deadline.isoformat()}".encode("utf-8")
    ).hexdigest()
    return f"aria:{digest[:12]}"


def tier1_extract(
    msg: InboundMessage,
    senders: Mapping[str, tuple[str, str]] = DEFAULT_SENDER_MAP,
) -> DutyRecord:
    """Keyword/regex duty extraction; raises when no deadline can be parsed."""
    text = msg.text
    deadline = find_deadline(text, msg.received_at)
    if deadline is None:
        raise ExtractionFailedError("no parseable deadline")

    duty_type = DutyType.CUSTOM
    for candidate, pattern in _TYPE_KEYWORDS:
        if pattern.search(text):
            duty_type = candidate
            break

    counterparty, domain_tag = _sender_identity(msg, duty_type, senders)
    ref = _REFERENCE_RE.search(text)

    toc_params = None
    if duty_type is DutyType.BOPIS_PICKUP:
        window = find_relative_window_days(text) or _DEFAULT_BOPIS_WINDOW_DAYS
        toc_params = TocParams.step(window)

    return DutyRecord(
        id=_duty_id_for(msg, deadline),
        duty_type=duty_type,
        counterparty=counterparty,
        counterparty_domain=domain_tag,
        deadline=deadline,
        toc_params=toc_params,
        reference_number=ref.group(1) if ref else None,
        source=DutySource.ARIA,
        created_at=msg.received_at,
    )


class Tier2Extractor(Protocol):
    """Second-tier extractor seam for messages the keyword tier cannot parse."""

    def extract(self, msg: InboundMessage, category: MessageCategory) -> DutyRecord | None: ...


class DecliningExtractor:
    """Default second tier: declines everything (smart extraction is a plug-in)."""

    def extract(self, msg: InboundMessage, category: MessageCategory) -> DutyRecord | None:
        return None


DECLINE_TIER2 = DecliningExtractor()


# ---------------------------------------------------------------------------
# Purchase pattern model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PurchasePatternModel:
    """On-record purchase history plus the derived per-category affinity cache."""

    purchases: tuple[Purchase, ...] = ()
    category_affinity: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def from_purchases(cls, purchases: list[Purchase] | tuple[Purchase, ...]) -> "PurchasePatternModel":
        items = tuple(purchases)
        return cls(purchases=items, category_affinity=_affinities(items))

    def days_since_last(self, category_tag: str, now: datetime) -> float | None:
        stamps = [p.at for p in self.purchases if p.category_tag == category_tag]
        if not stamps:
            return None
        return days_between(now, max(stamps))

    def affinity(self, category_tag: str) -> float:
        return self.category_affinity.get(category_tag, 0.0)

    def infer_category(self, msg: InboundMessage) -> str | None:
        """Category of the merchant matching the sender, else a tag named in the text."""
        domain_token = re.sub(r"[^a-z0-9]", "", msg.sender_domain.lower())
        for purchase in sorted(self.purchases, key=lambda p: p.at, reverse=True):
            merchant_token = re.sub(r"[^a-z0-9]", "", purchase.merchant.lower())
            # Very short tokens would match almost any domain.
            if len(merchant_token) >= 3 and merchant_token in domain_token:
                return purchase.category_tag
        text_tokens = set(re.findall(r"[a-z0-9]+", msg.text.lower()))
        for tag in sorted(self.category_affinity):
            if tag.lower() in text_tokens:
                return tag
        return None


def _affinities(purchases: tuple[Purchase, ...]) -> dict[str, float]:
    if not purchases:
        return {}
    counts: dict[str, int] = {}
    for p in purchases:
        counts[p.category_tag] = counts.get(p.category_tag, 0) + 1
    total = len(purchases)
    return {tag: n / total for tag, n in counts.items()}


def update_ppm(ppm: PurchasePatternModel, purchase: Purchase) -> PurchasePatternModel:
    """Append one purchase and refresh the affinity cache; duplicates are no-ops."""
    for existing in ppm.purchases:
        if (
            existing.merchant == purchase.merchant
            and existing.at == purchase.at
            and existing.amount_minor == purchase.amount_minor
        ):
            return ppm
    return PurchasePatternModel.from_purchases(ppm.purchases + (purchase,))


def ppm_score(msg: InboundMessage, ppm: PurchasePatternModel, now: datetime) -> float:
    """Relevance of a commercial offer: recency-dominated, affinity-adjusted.

    A category purchased inside the recent window scores full recency; older
    purchases decay exponentially; unknown brands/categories score 0.
    """
    category = ppm.infer_category(msg)
    if category is None:
        return 0.0
    days_since = ppm.days_since_last(category, now)
    if days_since is None:
        return 0.0
    if days_since <= RECENT_PURCHASE_DAYS:
        recency = 1.0
    else:
        recency = math.exp(-(days_since - RECENT_PURCHASE_DAYS) / RECENCY_DECAY_DAYS)
    score = RECENCY_WEIGHT * recency + AFFINITY_WEIGHT * ppm.affinity(category)
    return min(score, 1.0)


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------

_POINTS_BALANCE_RE = re.compile(r"\b([\d,]+)\s*(?:points|pts|miles)\b", re.I)
_DOLLAR_VALUE_RE = re.compile(r"\$\s?(\d+(?:\.\d{1,2})?)")


def parse_rewards_signal(msg: InboundMessage) -> RewardsSignal | None:
    balance_match = _POINTS_BALANCE_RE.search(msg.text)
    if balance_match is None:
        return None
    value_match = _DOLLAR_VALUE_RE.search(msg.text)
    redeemable = 0
    if value_match:
        redeemable = int(round(float(value_match.group(1)) * 100))
    return RewardsSignal(
        program=_prettify_domain(msg.sender_domain),
        points_balance=int(balance_match.group(1).replace(",", "")),
        redeemable_value_minor=redeemable,
        currency="USD",
        points_expiry=find_deadline(msg.text, msg.received_at),
    )


def rewards_to_duty(
    sig: RewardsSignal,
    threshold_minor: int = REWARDS_VALUE_THRESHOLD_MINOR,
    now: datetime | None = None,
    *,
    window_days: float = REWARDS_REDEMPTION_WINDOW_DAYS,
) -> DutyRecord | None:
    """Cliff duty for expiring value strictly above the threshold, else nothing."""
    if sig.points_expiry is None or sig.redeemable_value_minor <= threshold_minor:
        return None
    digest = hashlib.sha256(
        f"{sig.program}|{sig.points_expiry.isoformat()}|{sig.redeemable_value_minor}".encode("utf-8")
    ).hexdigest()
    return DutyRecord(
        id=f"aria:rewards:{digest[:12]}",
        duty_type=DutyType.CUSTOM,
        counterparty=sig.program,
        counterparty_domain="rewards",
        deadline=sig.points_expiry,
        toc_params=TocParams.step(window_days),
        value_estimate=Money(sig.redeemable_value_minor, sig.currency),
        source=DutySource.ARIA,
        created_at=now,
    )


# ---------------------------------------------------------------------------
# Routing
# ---------------------------------------------------------------------------

def route(
    msg: InboundMessage,
    ppm: PurchasePatternModel,
    bep_at_ingest: float = 0.5,
    now: datetime | None = None,
    *,
    tier2: Tier2Extractor = DECLINE_TIER2,
    rewards_threshold_minor: int = REWARDS_VALUE_THRESHOLD_MINOR,
    senders: Mapping[str, tuple[str, str]] = DEFAULT_SENDER_MAP,
) -> RoutingAction:
    """Category-conformant routing; opportunity/platform traffic never registers duties."""
    now = now or msg.received_at
    category = classify(msg)

    if category is MessageCategory.TEMPORAL_OBLIGATION:
        try:
            return RoutingAction(ActionKind.REGISTER_DUTY, duty=tier1_extract(msg, senders))
        except ExtractionFailedError as exc:
            duty = tier2.extract(msg, category)
            if duty is not None:
                return RoutingAction(ActionKind.REGISTER_DUTY, duty=duty, detail="tier2")
            return RoutingAction(ActionKind.MANUAL_REVIEW, detail=exc.reason)

    if category is MessageCategory.COMMERCIAL_OPPORTUNITY:
        score = ppm_score(msg, ppm, now)
        if score >= PPM_NOTIFY_GATE:
            return RoutingAction(ActionKind.STORE_AND_NOTIFY_LOW_PRIORITY, detail=f"ppm={score:.3f}")
        return RoutingAction(ActionKind.ARCHIVE_SILENTLY, detail=f"ppm={score:.3f}")

    if category is MessageCategory.REWARDS_SIGNAL:
        sig = parse_rewards_signal(msg)
        duty = rewards_to_duty(sig, rewards_threshold_minor, now) if sig else None
        if duty is not None:
            return RoutingAction(ActionKind.REGISTER_DUTY, duty=duty)
        return RoutingAction(ActionKind.UPDATE_REWARDS_GRAPH)

    if bep_at_ingest >= SOCIAL_BEP_GATE:
        return RoutingAction(ActionKind.NOTIFY_ONLY, detail=f"bep={bep_at_ingest:.3f}")
    return RoutingAction(ActionKind.ARCHIVE_SILENTLY, detail=f"bep={bep_at_ingest:.3f}")
