"""Agent-Centric Exchange codec: decode, validate, canonically encode, and
map institution-to-agent envelopes onto duty records.

The wire form is JSON with snake_case keys. Canonical encoding sorts keys,
strips insignificant whitespace, and renders timestamps as RFC-3339 UTC
with a trailing Z, so two encodes of the same envelope are byte-identical.
Decoding collects every violation instead of failing fast, and unknown
top-level fields ride along for re-encoding.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Mapping, Sequence

from .aria import REWARDS_REDEMPTION_WINDOW_DAYS, REWARDS_VALUE_THRESHOLD_MINOR, MessageCategory
from .duties import DutyRecord, DutySource, DutyType, Money, TocParams
from .timefmt import days_between, format_rfc3339, parse_rfc3339

ACE_VERSION = "0.1"
INGEST_PATH = "/ace/ingest"
AGENT_CARD_PATH = "/ace/.well-known/agent.json"

# Error codes carried by validation results.
MALFORMED_SYNTAX = "MALFORMED_SYNTAX"
MANDATORY_SCHEMA_MISSING = "MANDATORY_SCHEMA_MISSING"
SCHEMA_INVARIANT_VIOLATION = "SCHEMA_INVARIANT_VIOLATION"
UNKNOWN_EXTENSION_DOMAIN = "UNKNOWN_EXTENSION_DOMAIN"

# The four mandatory core schemas: wire key -> schema name.
MANDATORY_SECTIONS = {
    "ace_temp": "ACE-TEMP",
    "ace_value": "ACE-VALUE",
    "ace_scope": "ACE-SCOPE",
    "ace_trust": "ACE-TRUST",
}

_TOP_LEVEL_KEYS = (
    "ace_version",
    "message_id",
    "sender",
    "category",
    "ace_temp",
    "ace_value",
    "ace_scope",
    "ace_trust",
    "extension",
)


class AceCodecError(Exception):
    pass


class AceValidationError(AceCodecError):
    def __init__(self, errors: list["AceError"]):
        super().__init__("; ".join(f"{e.code} at {e.path}: {e.detail}" for e in errors))
        self.errors = list(errors)


class InvalidEnvelopeError(AceValidationError):
    pass


class MappingFailureError(AceCodecError):
    pass


@dataclass(frozen=True)
class AceError:
    code: str
    path: str
    detail: str

    def to_obj(self) -> dict:
        return {"code": self.code, "path": self.path, "detail": self.detail}


class UrgencyClass(Enum):
    LOW = "LOW"
    NORMAL = "NORMAL"
    HIGH = "HIGH"
    CRITICAL = "CRITICAL"


@dataclass(frozen=True)
class AceSender:
    institution_name: str
    domain_tag: str


@dataclass(frozen=True)
class AceTemp:
    deadline: datetime
    optimal_window_start: datetime
    optimal_window_end: datetime
    urgency_class: UrgencyClass


@dataclass(frozen=True)
class AceValue:
    amount_minor: int
    currency: str
    benefit_type: str
    return_rule: str | None = None


@dataclass(frozen=True)
class AceScope:
    permitted_actions: tuple[str, ...]
    requires_approval_above_minor: int | None = None


@dataclass(frozen=True)
class AceTrust:
    commission_disclosed: bool
    affiliate_disclosure: str | None = None
    recommendation_basis: str | None = None


@dataclass(frozen=True)
class AceExtension:
    domain: str
    payload: Mapping[str, Any]


@dataclass(frozen=True)
class AceEnvelope:
    ace_version: str
    message_id: str
    sender: AceSender
    category: MessageCategory
    temp: AceTemp
    value: AceValue
    scope: AceScope
    trust: AceTrust
    extension: AceExtension
    extra: Mapping[str, Any] = field(default_factory=dict)


class ExtensionRegistry:
    """The registered extension domains and their required payload keys.

    Each built-in domain requires a single discriminator key; extra domains
    can be loaded from configuration without touching the core schemas.
    """

    BUILTIN: dict[str, tuple[str, ...]] = {
        "FINANCIAL": ("account_kind",),
        "HEALTHCARE": ("care_kind",),
        "RETAIL": ("fulfillment",),
        "SUPPORT": ("ticket_ref",),
        "SERVICES": ("service_kind",),
        "GOVERNMENT": ("agency",),
        "TRAVEL": ("itinerary_ref",),
        "PROFESSIONAL": ("license_kind",),
        "COMMUNITY": ("group_name",),
        "SOCIAL-PLATFORM": ("platform",),
        "ECOMMERCE": ("order_ref",),
    }

    def __init__(self, extra: Mapping[str, Sequence[str]] | None = None):
        self._domains: dict[str, tuple[str, ...]] = dict(self.BUILTIN)
        for name, keys in (extra or {}).items():
            self._domains[name] = tuple(keys)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(sorted(self._domains))

    def __contains__(self, name: str) -> bool:
        return name in self._domains

    def required_keys(self, name: str) -> tuple[str, ...]:
        return self._domains.get(name, ())


DEFAULT_REGISTRY = ExtensionRegistry()


# ---------------------------------------------------------------------------
# Decode
# ---------------------------------------------------------------------------

def _want_str(obj: dict, key: str, path: str, errors: list[AceError], required: bool = True) -> str | None:
    if key not in obj or obj[key] is None:
        if required:
            errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, f"{path}.{key}", "missing required field"))
        return None
    if not isinstance(obj[key], str):
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, f"{path}.{key}", "must be a string"))
        return None
    return obj[key]


def _want_timestamp(obj: dict, key: str, path: str, errors: list[AceError]) -> datetime | None:
    raw = _want_str(obj, key, path, errors)
    if raw is None:
        return None
    try:
        return parse_rfc3339(raw)
    except ValueError as exc:
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, f"{path}.{key}", f"bad timestamp: {exc}"))
        return None


def _parse_temp(obj: Any, errors: list[AceError]) -> AceTemp | None:
    path = "ace_temp"
    if not isinstance(obj, dict):
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, path, "must be an object"))
        return None
    deadline = _want_timestamp(obj, "deadline", path, errors)
    ws = _want_timestamp(obj, "optimal_window_start", path, errors)
    we = _want_timestamp(obj, "optimal_window_end", path, errors)
    urgency_raw = _want_str(obj, "urgency_class", path, errors)
    urgency = None
    if urgency_raw is not None:
        try:
            urgency = UrgencyClass(urgency_raw)
        except ValueError:
            errors.append(
                AceError(
                    SCHEMA_INVARIANT_VIOLATION,
                    f"{path}.urgency_class",
                    f"must be one of {[u.value for u in UrgencyClass]}",
                )
            )
    if None in (deadline, ws, we, urgency):
        return None
    if not (ws <= we <= deadline):
        errors.append(
            AceError(
                SCHEMA_INVARIANT_VIOLATION,
                f"{path}.optimal_window_start",
                "window must satisfy start <= end <= deadline",
            )
        )
        return None
    return AceTemp(deadline, ws, we, urgency)


def _parse_value(obj: Any, errors: list[AceError]) -> AceValue | None:
    path = "ace_value"
    if not isinstance(obj, dict):
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, path, "must be an object"))
        return None
    ok = True
    amount = obj.get("amount_minor")
    if not isinstance(amount, int) or isinstance(amount, bool) or amount < 0:
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, f"{path}.amount_minor", "must be an integer >= 0"))
        ok = False
    currency = _want_str(obj, "currency", path, errors)
    if currency is not None and not (len(currency) == 3 and currency.isalpha() and currency.isupper()):
        errors.append(
            AceError(SCHEMA_INVARIANT_VIOLATION, f"{path}.currency", "must be a 3-letter uppercase code")
        )
        ok = False
    benefit = _want_str(obj, "benefit_type", path, errors)
    return_rule = _want_str(obj, "return_rule", path, errors, required=False)
    if not ok or currency is None or benefit is None:
        return None
    return AceValue(amount, currency, benefit, return_rule)


def _parse_scope(obj: Any, errors: list[AceError]) -> AceScope | None:
    path = "ace_scope"
    if not isinstance(obj, dict):
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, path, "must be an object"))
        return None
    actions = obj.get("permitted_actions")
    if not isinstance(actions, list):
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, f"{path}.permitted_actions", "must be a list"))
        return None
    tokens: list[str] = []
    ok = True
    for i, token in enumerate(actions):
        if not isinstance(token, str) or not token or token != token.lower():
            errors.append(
                AceError(
                    SCHEMA_INVARIANT_VIOLATION,
                    f"{path}.permitted_actions[{i}]",
                    "tokens must be non-empty lowercase strings",
                )
            )
            ok = False
        else:
            tokens.append(token)
    approval = obj.get("requires_approval_above_minor")
    if approval is not None and (not isinstance(approval, int) or isinstance(approval, bool) or approval < 0):
        errors.append(
            AceError(
                SCHEMA_INVARIANT_VIOLATION,
                f"{path}.requires_approval_above_minor",
                "must be an integer >= 0 when present",
            )
        )
        ok = False
    if not ok:
        return None
    return AceScope(tuple(tokens), approval)


def _parse_trust(obj: Any, errors: list[AceError]) -> AceTrust | None:
    path = "ace_trust"
    if not isinstance(obj, dict):
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, path, "must be an object"))
        return None
    disclosed = obj.get("commission_disclosed")
    if not isinstance(disclosed, bool):
        errors.append(
            AceError(SCHEMA_INVARIANT_VIOLATION, f"{path}.commission_disclosed", "must be a boolean")
        )
        return None
    affiliate = _want_str(obj, "affiliate_disclosure", path, errors, required=False)
    basis = _want_str(obj, "recommendation_basis", path, errors, required=False)
    if disclosed and not affiliate:
        errors.append(
            AceError(
                SCHEMA_INVARIANT_VIOLATION,
                f"{path}.affiliate_disclosure",
                "required when commission_disclosed is true",
            )
        )
        return None
    return AceTrust(disclosed, affiliate, basis)


def _parse_extension(obj: Any, registry: ExtensionRegistry, errors: list[AceError]) -> AceExtension | None:
    path = "extension"
    if not isinstance(obj, dict):
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, path, "must be an object"))
        return None
    domain = _want_str(obj, "domain", path, errors)
    payload = obj.get("payload")
    if not isinstance(payload, dict):
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, f"{path}.payload", "must be an object"))
        return None
    if domain is None:
        return None
    if domain not in registry:
        errors.append(AceError(UNKNOWN_EXTENSION_DOMAIN, f"{path}.domain", f"unregistered domain {domain!r}"))
        return None
    ok = True
    for key in registry.required_keys(domain):
        if key not in payload:
            errors.append(
                AceError(
                    SCHEMA_INVARIANT_VIOLATION,
                    f"{path}.payload.{key}",
                    f"required by the {domain} extension",
                )
            )
            ok = False
    return AceExtension(domain, payload) if ok else None


def validate(text: str, registry: ExtensionRegistry = DEFAULT_REGISTRY) -> list[AceError]:
    """All violations in the wire text; empty list means a valid envelope."""
    try:
        decode(text, registry)
        return []
    except AceValidationError as exc:
        return exc.errors


def decode(text: str, registry: ExtensionRegistry = DEFAULT_REGISTRY) -> AceEnvelope:
    """Parse and fully validate one envelope, collecting every violation."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AceValidationError([AceError(MALFORMED_SYNTAX, "$", str(exc))]) from exc
    if not isinstance(obj, dict):
        raise AceValidationError([AceError(MALFORMED_SYNTAX, "$", "top level must be an object")])

    errors: list[AceError] = []
    for key, name in MANDATORY_SECTIONS.items():
        if key not in obj:
            errors.append(AceError(MANDATORY_SCHEMA_MISSING, key, f"mandatory core schema {name} missing"))

    version = _want_str(obj, "ace_version", "$", errors)
    if version is not None and version != ACE_VERSION:
        errors.append(
            AceError(SCHEMA_INVARIANT_VIOLATION, "$.ace_version", f"unsupported version {version!r}")
        )
    message_id = _want_str(obj, "message_id", "$", errors)
    if message_id is not None and not message_id:
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, "$.message_id", "must be non-empty"))

    sender = None
    sender_obj = obj.get("sender")
    if not isinstance(sender_obj, dict):
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, "sender", "must be an object"))
    else:
        name = _want_str(sender_obj, "institution_name", "sender", errors)
        tag = _want_str(sender_obj, "domain_tag", "sender", errors)
        if name is not None and tag is not None:
            sender = AceSender(name, tag)

    category = None
    category_raw = _want_str(obj, "category", "$", errors)
    if category_raw is not None:
        try:
            category = MessageCategory(category_raw)
        except ValueError:
            errors.append(
                AceError(
                    SCHEMA_INVARIANT_VIOLATION,
                    "$.category",
                    f"must be one of {[c.value for c in MessageCategory]}",
                )
            )

    temp = _parse_temp(obj["ace_temp"], errors) if "ace_temp" in obj else None
    value = _parse_value(obj["ace_value"], errors) if "ace_value" in obj else None
    scope = _parse_scope(obj["ace_scope"], errors) if "ace_scope" in obj else None
    trust = _parse_trust(obj["ace_trust"], errors) if "ace_trust" in obj else None

    extension = None
    if "extension" not in obj:
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, "extension", "missing required field"))
    else:
        extension = _parse_extension(obj["extension"], registry, errors)

    if errors:
        raise AceValidationError(errors)

    extra = {k: v for k, v in obj.items() if k not in _TOP_LEVEL_KEYS}
    return AceEnvelope(
        ace_version=version,
        message_id=message_id,
        sender=sender,
        category=category,
        temp=temp,
        value=value,
        scope=scope,
        trust=trust,
        extension=extension,
        extra=extra,
    )


# ---------------------------------------------------------------------------
# Encode
# ---------------------------------------------------------------------------

def envelope_violations(env: AceEnvelope) -> list[AceError]:
    errors: list[AceError] = []
    if env.ace_version != ACE_VERSION:
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, "$.ace_version", "unsupported version"))
    if not env.message_id:
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, "$.message_id", "must be non-empty"))
    if not (env.temp.optimal_window_start <= env.temp.optimal_window_end <= env.temp.deadline):
        errors.append(
            AceError(
                SCHEMA_INVARIANT_VIOLATION,
                "ace_temp.optimal_window_start",
                "window must satisfy start <= end <= deadline",
            )
        )
    if env.value.amount_minor < 0:
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, "ace_value.amount_minor", "must be >= 0"))
    c = env.value.currency
    if not (len(c) == 3 and c.isalpha() and c.isupper()):
        errors.append(AceError(SCHEMA_INVARIANT_VIOLATION, "ace_value.currency", "bad currency code"))
    for i, token in enumerate(env.scope.permitted_actions):
        if not token or token != token.lower():
            errors.append(
                AceError(
                    SCHEMA_INVARIANT_VIOLATION,
                    f"ace_scope.permitted_actions[{i}]",
                    "tokens must be non-empty lowercase",
                )
            )
    if env.trust.commission_disclosed and not env.trust.affiliate_disclosure:
        errors.append(
            AceError(
                SCHEMA_INVARIANT_VIOLATION,
                "ace_trust.affiliate_disclosure",
                "required when commission_disclosed is true",
            )
        )
    return errors


def encode(env: AceEnvelope, registry: ExtensionRegistry = DEFAULT_REGISTRY) -> str:
    """Canonical wire text; decode(encode(env)) == env."""
    errors = envelope_violations(env)
    if env.extension.domain not in registry:
        errors.append(
            AceError(UNKNOWN_EXTENSION_DOMAIN, "extension.domain", f"unregistered {env.extension.domain!r}")
        )
    if errors:
        raise InvalidEnvelopeError(errors)

    temp = {
        "deadline": format_rfc3339(env.temp.deadline),
        "optimal_window_start": format_rfc3339(env.temp.optimal_window_start),
        "optimal_window_end": format_rfc3339(env.temp.optimal_window_end),
        "urgency_class": env.temp.urgency_class.value,
    }
    value: dict[str, Any] = {
        "amount_minor": env.value.amount_minor,
        "currency": env.value.currency,
        "benefit_type": env.value.benefit_type,
    }
    if env.value.return_rule is not None:
        value["return_rule"] = env.value.return_rule
    scope: dict[str, Any] = {"permitted_actions": list(env.scope.permitted_actions)}
    if env.scope.requires_approval_above_minor is not None:
        scope["requires_approval_above_minor"] = env.scope.requires_approval_above_minor
    trust: dict[str, Any] = {"commission_disclosed": env.trust.commission_disclosed}
    if env.trust.affiliate_disclosure is not None:
        trust["affiliate_disclosure"] = env.trust.affiliate_disclosure
    if env.trust.recommendation_basis is not None:
        trust["recommendation_basis"] = env.trust.recommendation_basis

    obj: dict[str, Any] = {
        "ace_version": env.ace_version,
        "message_id": env.message_id,
        "sender": {
            "institution_name": env.sender.institution_name,
            "domain_tag": env.sender.domain_tag,
        },
        "category": env.category.value,
        "ace_temp": temp,
        "ace_value": value,
        "ace_scope": scope,
        "ace_trust": trust,
        "extension": {"domain": env.extension.domain, "payload": dict(env.extension.payload)},
    }
    obj.update(env.extra)
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# ---------------------------------------------------------------------------
# Duty mapping
# ---------------------------------------------------------------------------

_REFERENCE_PAYLOAD_KEYS = (
    "reference",
    "reference_number",
    "order_ref",
    "ticket_ref",
    "itinerary_ref",
    "policy_ref",
    "case_ref",
)

_SIGMA_FLOOR_DAYS = 0.5


def _infer_duty_type(env: AceEnvelope) -> DutyType:
    domain = env.extension.domain
    payload = env.extension.payload
    if domain == "FINANCIAL":
        if "insurance" in env.value.benefit_type.lower():
            return DutyType.INSURANCE_RENEWAL
        return DutyType.CUSTOM
    if domain == "HEALTHCARE":
        kind = payload.get("care_kind")
        if not isinstance(kind, str):
            raise MappingFailureError("HEALTHCARE care_kind must be a string")
        if kind == "prescription":
            return DutyType.PRESCRIPTION_REFILL
        if kind == "wellness":
            return DutyType.WELLNESS_VISIT
        return DutyType.CUSTOM
    if domain in ("RETAIL", "ECOMMERCE"):
        kind = payload.get("fulfillment")
        if kind is not None and not isinstance(kind, str):
            raise MappingFailureError(f"{domain} fulfillment must be a string")
        if kind == "pickup":
            return DutyType.BOPIS_PICKUP
        if kind == "return":
            return DutyType.RETURN_DEADLINE
        return DutyType.CUSTOM
    return DutyType.CUSTOM


def _reference_from_payload(payload: Mapping[str, Any]) -> str | None:
    for key in _REFERENCE_PAYLOAD_KEYS:
        ref = payload.get(key)
        if isinstance(ref, str) and ref:
            return ref
    return None


def to_duty(
    env: AceEnvelope,
    type_hint: DutyType | None = None,
    now: datetime | None = None,
    *,
    rewards_threshold_minor: int = REWARDS_VALUE_THRESHOLD_MINOR,
    rewards_window_days: float = REWARDS_REDEMPTION_WINDOW_DAYS,
) -> DutyRecord | None:
    """Map an envelope to a duty record, or None when the category yields none.

    Temporal obligations become Gaussian duties whose optimal window spans
    the peak plus/minus one sigma. Rewards signals above the value cliff
    become step-curve duties on the expiry. Opportunity and platform
    categories never register duties.
    """
    duty_id = f"ace:{env.message_id}"
    base = dict(
        id=duty_id,
        counterparty=env.sender.institution_name,
        counterparty_domain=env.sender.domain_tag,
        deadline=env.temp.deadline,
        reference_number=_reference_from_payload(env.extension.payload),
        escalation_capability=" ".join(env.scope.permitted_actions) or None,
        value_estimate=Money(env.value.amount_minor, env.value.currency),
        source=DutySource.ACE,
        created_at=now,
    )

    if env.category is MessageCategory.REWARDS_SIGNAL:
        if env.value.amount_minor > rewards_threshold_minor:
            return DutyRecord(
                duty_type=DutyType.CUSTOM,
                toc_params=TocParams.step(rewards_window_days),
                **base,
            )
        return None
    if env.category is not MessageCategory.TEMPORAL_OBLIGATION:
        return None

    t_start = days_between(env.temp.deadline, env.temp.optimal_window_start)
    t_end = days_between(env.temp.deadline, env.temp.optimal_window_end)
    duty_type = type_hint or _infer_duty_type(env)
    if duty_type is DutyType.BOPIS_PICKUP:
        params = TocParams.step(max(t_start, _SIGMA_FLOOR_DAYS))
    else:
        mu = (t_start + t_end) / 2.0
        sigma = max((t_start - t_end) / 2.0, _SIGMA_FLOOR_DAYS)
        params = TocParams.gaussian(mu, sigma, sigma)
    return DutyRecord(duty_type=duty_type, toc_params=params, **base)


# ---------------------------------------------------------------------------
# Discovery document
# ---------------------------------------------------------------------------

def agent_card(
    registry: ExtensionRegistry = DEFAULT_REGISTRY, *, agent_name: str = "jagarin"
) -> dict:
    return {
        "agent": agent_name,
        "ace_version": ACE_VERSION,
        "categories": [c.value for c in MessageCategory],
        "extensions": list(registry.names),
        "ingest_path": INGEST_PATH,
    }


def agent_card_bytes(
    registry: ExtensionRegistry = DEFAULT_REGISTRY, *, agent_name: str = "jagarin"
) -> bytes:
    card = agent_card(registry, agent_name=agent_name)
    return json.dumps(card, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def envelope_fingerprint(text: str) -> str:
    """Stable digest of wire text, handy for idempotence bookkeeping."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
