"""Duty records, adaptive thresholds, and the file-backed duty registry.

The registry is the single writer for all duty state. Wake evaluation never
touches it directly: callers take an immutable snapshot and score against
that, so any number of evaluators can run concurrently against one writer.

On-disk state is an append-only event log plus a checkpoint snapshot, both
newline-delimited JSON, guarded by a checksum. An at-rest cipher seam wraps
every byte written; the default cipher is identity (plaintext).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterator, Mapping, Protocol

from .timefmt import days_between, format_rfc3339, parse_rfc3339

THETA_MIN = 0.15
THETA_MAX = 0.75
THETA_MIN_GAP = 0.05
DEFAULT_THETA1 = 0.35
DEFAULT_THETA2 = 0.60
DEFAULT_ALPHA = 0.05
EXPIRY_GRACE_DAYS = 1.0

STORE_FORMAT = "jagarin-store/1"
SNAPSHOT_FILE = "snapshot.json"
EVENT_LOG_FILE = "events.log"


class DutyModelError(Exception):
    """Base class for duty-model failures."""


class DuplicateIdError(DutyModelError):
    pass


class UnknownDutyError(DutyModelError):
    pass


class IllegalTransitionError(DutyModelError):
    pass


class InvalidRecordError(DutyModelError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class StoreIOError(DutyModelError):
    pass


class CorruptStoreError(DutyModelError):
    pass


class DutyType(Enum):
    INSURANCE_RENEWAL = "INSURANCE_RENEWAL"
    PRESCRIPTION_REFILL = "PRESCRIPTION_REFILL"
    WELLNESS_VISIT = "WELLNESS_VISIT"
    SUBSCRIPTION_RENEWAL = "SUBSCRIPTION_RENEWAL"
    VEHICLE_SERVICE = "VEHICLE_SERVICE"
    RETURN_DEADLINE = "RETURN_DEADLINE"
    LICENSE_RENEWAL = "LICENSE_RENEWAL"
    SUPPORT_FOLLOW_UP = "SUPPORT_FOLLOW_UP"
    TAX_DEADLINE = "TAX_DEADLINE"
    TRAVEL_CHECK_IN = "TRAVEL_CHECK_IN"
    CUSTOM = "CUSTOM"
    BOPIS_PICKUP = "BOPIS_PICKUP"


class CurveKind(Enum):
    GAUSSIAN = "GAUSSIAN"
    STEP = "STEP"


class DutySource(Enum):
    MANUAL = "MANUAL"
    ARIA = "ARIA"
    ACE = "ACE"


class DutyStatus(Enum):
    ACTIVE = "ACTIVE"
    COMPLETED = "COMPLETED"
    EXPIRED = "EXPIRED"


class Zone(IntEnum):
    """Wake outcome, totally ordered: SLEEP < NUDGE < ACT_NOW."""

    SLEEP = 0
    NUDGE = 1
    ACT_NOW = 2


class InteractionOutcome(Enum):
    RESPONDED = "RESPONDED"
    IGNORED = "IGNORED"


@dataclass(frozen=True)
class TocParams:
    """Opportunity-curve shape for one duty.

    The curve is an asymmetric Gaussian peaked ``mu_days`` before the
    deadline: the approach side (t > mu) uses ``sigma_pre_days``, the urgency
    side (t < mu) uses ``sigma_post_days``. Pickup-style duties use a step
    curve over ``pickup_window_days`` instead.
    """

    mu_days: float
    sigma_pre_days: float
    sigma_post_days: float
    curve_kind: CurveKind = CurveKind.GAUSSIAN
    pickup_window_days: float | None = None

    def __post_init__(self):
        # Normalize to float so canonical serialization is stable.
        object.__setattr__(self, "mu_days", float(self.mu_days))
        object.__setattr__(self, "sigma_pre_days", float(self.sigma_pre_days))
        object.__setattr__(self, "sigma_post_days", float(self.sigma_post_days))
        if self.pickup_window_days is not None:
            object.__setattr__(self, "pickup_window_days", float(self.pickup_window_days))

    @classmethod
    def gaussian(cls, mu: float, sigma_pre: float, sigma_post: float) -> "TocParams":
        return cls(mu, sigma_pre, sigma_post, CurveKind.GAUSSIAN, None)

    @classmethod
    def step(cls, pickup_window_days: float, mu: float = 0.0) -> "TocParams":
        return cls(mu, 1.0, 1.0, CurveKind.STEP, pickup_window_days)

    def violations(self) -> list[str]:
        out = []
        if self.mu_days < 0:
            out.append("toc_params.mu_days must be >= 0")
        if self.sigma_pre_days <= 0:
            out.append("toc_params.sigma_pre_days must be > 0")
        if self.sigma_post_days <= 0:
            out.append("toc_params.sigma_post_days must be > 0")
        if self.curve_kind is CurveKind.STEP:
            if self.pickup_window_days is None or self.pickup_window_days < 0:
                out.append("step curve requires pickup_window_days >= 0")
        return out


# Per-type defaults; overridable on any individual record.
DEFAULT_TOC_PARAMS: dict[DutyType, TocParams] = {
    DutyType.INSURANCE_RENEWAL: TocParams.gaussian(30, 12, 7),
    DutyType.PRESCRIPTION_REFILL: TocParams.gaussian(14, 10, 5),
    DutyType.WELLNESS_VISIT: TocParams.gaussian(21, 14, 14),
    DutyType.SUBSCRIPTION_RENEWAL: TocParams.gaussian(7, 5, 3),
    DutyType.VEHICLE_SERVICE: TocParams.gaussian(14, 10, 7),
    DutyType.RETURN_DEADLINE: TocParams.gaussian(7, 4, 3),
    DutyType.LICENSE_RENEWAL: TocParams.gaussian(30, 14, 10),
    DutyType.SUPPORT_FOLLOW_UP: TocParams.gaussian(3, 2, 2),
    DutyType.TAX_DEADLINE: TocParams.gaussian(21, 10, 5),
    DutyType.TRAVEL_CHECK_IN: TocParams.gaussian(1, 0.5, 0.5),
    DutyType.CUSTOM: TocParams.gaussian(14, 7, 7),
    DutyType.BOPIS_PICKUP: TocParams.step(3),
}


@dataclass(frozen=True)
class Money:
    amount_minor: int
    currency: str

    def violations(self) -> list[str]:
        out = []
        if self.amount_minor < 0:
            out.append("value_estimate.amount_minor must be >= 0")
        if not (len(self.currency) == 3 and self.currency.isalpha() and self.currency.isupper()):
            out.append("value_estimate.currency must be a 3-letter uppercase code")
        return out


@dataclass(frozen=True)
class DutyRecord:
    """One registered obligation.

    ``created_at`` records when the duty became known, which may postdate
    the deadline (the engine evaluates negative days-remaining and the
    snapshot expiry pass retires such duties after the grace period).
    Non-pickup types may carry a step curve (e.g. rewards-expiry cliffs);
    BOPIS_PICKUP must carry one.
    """

    id: str
    duty_type: DutyType
    counterparty: str
    counterparty_domain: str
    deadline: datetime
    toc_params: TocParams | None = None
    reference_number: str | None = None
    escalation_capability: str | None = None
    value_estimate: Money | None = None
    source: DutySource = DutySource.MANUAL
    created_at: datetime | None = None
    status: DutyStatus = DutyStatus.ACTIVE

    def violations(self) -> list[str]:
        out = []
        if not self.id:
            out.append("id must be non-empty")
        if not self.counterparty:
            out.append("counterparty must be non-empty")
        if self.deadline.tzinfo is None:
            out.append("deadline must be timezone-aware")
        if self.created_at is not None and self.created_at.tzinfo is None:
            out.append("created_at must be timezone-aware")
        if self.toc_params is not None:
            out.extend(self.toc_params.violations())
            if (
                self.duty_type is DutyType.BOPIS_PICKUP
                and self.toc_params.curve_kind is not CurveKind.STEP
            ):
                out.append("BOPIS_PICKUP requires a step curve")
        if self.value_estimate is not None:
            out.extend(self.value_estimate.violations())
        return out

    @property
    def resolved_toc_params(self) -> TocParams:
        return self.toc_params if self.toc_params is not None else DEFAULT_TOC_PARAMS[self.duty_type]


@dataclass(frozen=True)
class DutyThresholds:
    """Per-duty adaptive zone thresholds with their learning rate."""

    theta1: float = DEFAULT_THETA1
    theta2: float = DEFAULT_THETA2
    alpha: float = DEFAULT_ALPHA

    def violations(self) -> list[str]:
        out = []
        if not THETA_MIN <= self.theta1:
            out.append(f"theta1 below {THETA_MIN}")
        if not self.theta2 <= THETA_MAX:
            out.append(f"theta2 above {THETA_MAX}")
        if not self.theta1 < self.theta2:
            out.append("theta1 must be < theta2")
        if self.theta2 - self.theta1 < THETA_MIN_GAP - 1e-12:
            out.append(f"threshold gap below {THETA_MIN_GAP}")
        if not 0 < self.alpha < 1:
            out.append("alpha must be in (0, 1)")
        return out


@dataclass(frozen=True)
class InteractionEvent:
    """One notification interaction: what fired, at what score, and the outcome."""

    duty_id: str
    fired_zone: Zone
    score_at_fire: float
    outcome: InteractionOutcome
    at: datetime

    def violations(self) -> list[str]:
        out = []
        if self.fired_zone is Zone.SLEEP:
            out.append("fired_zone can never be SLEEP")
        if not 0.0 <= self.score_at_fire <= 1.0:
            out.append("score_at_fire must be in [0, 1]")
        return out


@dataclass(frozen=True)
class RegistrySnapshot:
    """Immutable view of the active duties and their thresholds."""

    duties: tuple[DutyRecord, ...]
    thresholds: Mapping[str, DutyThresholds]
    taken_at: datetime

    def thresholds_for(self, duty_id: str) -> DutyThresholds:
        return self.thresholds[duty_id]


# ---------------------------------------------------------------------------
# Wire/store serialization (field names shared with the gateway formats)
# ---------------------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def toc_params_to_obj(p: TocParams) -> dict:
    obj = {
        "mu_days": p.mu_days,
        "sigma_pre_days": p.sigma_pre_days,
        "sigma_post_days": p.sigma_post_days,
        "curve_kind": p.curve_kind.value,
    }
    if p.pickup_window_days is not None:
        obj["pickup_window_days"] = p.pickup_window_days
    return obj


def toc_params_from_obj(obj: dict) -> TocParams:
    return TocParams(
        mu_days=float(obj["mu_days"]),
        sigma_pre_days=float(obj["sigma_pre_days"]),
        sigma_post_days=float(obj["sigma_post_days"]),
        curve_kind=CurveKind(obj["curve_kind"]),
        pickup_window_days=(
            float(obj["pickup_window_days"]) if obj.get("pickup_window_days") is not None else None
        ),
    )


def duty_to_obj(d: DutyRecord) -> dict:
    obj = {
        "id": d.id,
        "duty_type": d.duty_type.value,
        "counterparty": d.counterparty,
        "counterparty_domain": d.counterparty_domain,
        "deadline": format_rfc3339(d.deadline),
        "source": d.source.value,
        "status": d.status.value,
    }
    if d.toc_params is not None:
        obj["toc_params"] = toc_params_to_obj(d.toc_params)
    if d.reference_number is not None:
        obj["reference_number"] = d.reference_number
    if d.escalation_capability is not None:
        obj["escalation_capability"] = d.escalation_capability
    if d.value_estimate is not None:
        obj["value_estimate"] = {
            "amount_minor": d.value_estimate.amount_minor,
            "currency": d.value_estimate.currency,
        }
    if d.created_at is not None:
        obj["created_at"] = format_rfc3339(d.created_at)
    return obj


def duty_from_obj(obj: dict) -> DutyRecord:
    value = obj.get("value_estimate")
    return DutyRecord(
        id=obj["id"],
        duty_type=DutyType(obj["duty_type"]),
        counterparty=obj["counterparty"],
        counterparty_domain=obj["counterparty_domain"],
        deadline=parse_rfc3339(obj["deadline"]),
        toc_params=toc_params_from_obj(obj["toc_params"]) if "toc_params" in obj else None,
        reference_number=obj.get("reference_number"),
        escalation_capability=obj.get("escalation_capability"),
        value_estimate=Money(int(value["amount_minor"]), value["currency"]) if value else None,
        source=DutySource(obj.get("source", "MANUAL")),
        created_at=parse_rfc3339(obj["created_at"]) if "created_at" in obj else None,
        status=DutyStatus(obj.get("status", "ACTIVE")),
    )


def thresholds_to_obj(t: DutyThresholds) -> dict:
    return {"theta1": t.theta1, "theta2": t.theta2, "alpha": t.alpha}


def thresholds_from_obj(obj: dict) -> DutyThresholds:
    return DutyThresholds(float(obj["theta1"]), float(obj["theta2"]), float(obj["alpha"]))


def interaction_to_obj(e: InteractionEvent) -> dict:
    return {
        "duty_id": e.duty_id,
        "fired_zone": e.fired_zone.name,
        "score_at_fire": e.score_at_fire,
        "outcome": e.outcome.value,
        "at": format_rfc3339(e.at),
    }


def interaction_from_obj(obj: dict) -> InteractionEvent:
    return InteractionEvent(
        duty_id=obj["duty_id"],
        fired_zone=Zone[obj["fired_zone"]],
        score_at_fire=float(obj["score_at_fire"]),
        outcome=InteractionOutcome(obj["outcome"]),
        at=parse_rfc3339(obj["at"]),
    )


# ---------------------------------------------------------------------------
# At-rest cipher seam
# ---------------------------------------------------------------------------

class CipherSeam(Protocol):
    """At-rest transform applied to store bytes.

    Log lines are transformed individually, so a real cipher must emit
    newline-free output (e.g. base64-wrap). The default is identity.
    """

    def encrypt(self, data: bytes) -> bytes: ...

    def decrypt(self, data: bytes) -> bytes: ...


class IdentityCipher:
    def encrypt(self, data: bytes) -> bytes:
        return data

    def decrypt(self, data: bytes) -> bytes:
        return data


def _now_utc() -> datetime:
    return datetime.now(timezone.utc)


class DutyRegistry:
    """Single-writer registry of duties, thresholds, and interaction history.

    When bound to a store directory every mutation is appended to the event
    log immediately; ``persist()`` writes a checkpoint snapshot so restores
    don't replay the full history.
    """

    def __init__(self, store_dir: Path | str | None = None, cipher: CipherSeam | None = None):
        self._duties: dict[str, DutyRecord] = {}
        self._thresholds: dict[str, DutyThresholds] = {}
        self._interactions: list[InteractionEvent] = []
        self._seq = 0
        self._cipher: CipherSeam = cipher or IdentityCipher()
        self._store_dir: Path | None = None
        if store_dir is not None:
            self._bind(Path(store_dir))

    # -- construction ------------------------------------------------------

    @classmethod
    def open(cls, store_dir: Path | str, cipher: CipherSeam | None = None) -> "DutyRegistry":
        """Open (creating if needed) a store directory and load its state."""
        path = Path(store_dir)
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreIOError(f"cannot create store dir {path}: {exc}") from exc
        if (path / SNAPSHOT_FILE).exists() or (path / EVENT_LOG_FILE).exists():
            reg = cls.restore(path, cipher)
            reg._bind(path)
            return reg
        return cls(path, cipher)

    @classmethod
    def restore(cls, store_dir: Path | str, cipher: CipherSeam | None = None) -> "DutyRegistry":
        """Rebuild a registry from snapshot + event log. Unbound: open() rebinds."""
        path = Path(store_dir)
        if not path.is_dir():
            raise StoreIOError(f"store dir not found: {path}")
        reg = cls(cipher=cipher)
        watermark = 0
        snap_path = path / SNAPSHOT_FILE
        if snap_path.exists():
            try:
                raw = reg._cipher.decrypt(snap_path.read_bytes()).decode("utf-8")
                obj = json.loads(raw)
            except (OSError, UnicodeDecodeError) as exc:
                raise StoreIOError(f"cannot read snapshot: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise CorruptStoreError(f"snapshot is not valid JSON: {exc}") from exc
            if obj.get("format") != STORE_FORMAT:
                raise CorruptStoreError(f"unknown store format: {obj.get('format')!r}")
            payload = obj.get("payload")
            if payload is None or obj.get("checksum") != _checksum(payload):
                raise CorruptStoreError("snapshot checksum mismatch")
            reg._load_payload(payload)
            watermark = int(obj.get("seq", 0))
            reg._seq = watermark
        log_path = path / EVENT_LOG_FILE
        if log_path.exists():
            try:
                lines = log_path.read_bytes().split(b"\n")
            except OSError as exc:
                raise StoreIOError(f"cannot read event log: {exc}") from exc
            for line in lines:
                if not line.strip():
                    continue
                try:
                    entry = json.loads(reg._cipher.decrypt(line).decode("utf-8"))
                except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                    raise CorruptStoreError(f"corrupt event log line: {exc}") from exc
                if int(entry.get("seq", 0)) > watermark:
                    reg._replay(entry)
                    reg._seq = int(entry["seq"])
        return reg

    def _bind(self, path: Path) -> None:
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreIOError(f"cannot create store dir {path}: {exc}") from exc
        self._store_dir = path

    # -- views -------------------------------------------------------------

    @property
    def store_dir(self) -> Path | None:
        return self._store_dir

    def duties(self) -> Iterator[DutyRecord]:
        return iter(self._duties.values())

    def get_duty(self, duty_id: str) -> DutyRecord:
        try:
            return self._duties[duty_id]
        except KeyError:
            raise UnknownDutyError(duty_id) from None

    def thresholds_for(self, duty_id: str) -> DutyThresholds:
        try:
            return self._thresholds[duty_id]
        except KeyError:
            raise UnknownDutyError(duty_id) from None

    def interactions(self) -> list[InteractionEvent]:
        return list(self._interactions)

    def __len__(self) -> int:
        return len(self._duties)

    # -- mutations ---------------------------------------------------------

    def register_duty(self, record: DutyRecord, now: datetime | None = None) -> str:
        violations = record.violations()
        if violations:
            raise InvalidRecordError(violations)
        if record.id in self._duties:
            raise DuplicateIdError(record.id)
        resolved = replace(
            record,
            toc_params=record.resolved_toc_params,
            created_at=record.created_at or now or _now_utc(),
            status=DutyStatus.ACTIVE,
        )
        self._duties[resolved.id] = resolved
        self._thresholds[resolved.id] = DutyThresholds()
        self._append_log({"kind": "register", "record": duty_to_obj(resolved)})
        return resolved.id

    def record_interaction(self, event: InteractionEvent) -> DutyThresholds:
        violations = event.violations()
        if violations:
            raise InvalidRecordError(violations)
        if event.duty_id not in self._duties or event.duty_id not in self._thresholds:
            raise UnknownDutyError(event.duty_id)
        updated = self._adapt(event)
        self._append_log({"kind": "interaction", "event": interaction_to_obj(event)})
        return updated

    def _adapt(self, event: InteractionEvent) -> DutyThresholds:
        from .engine import adapt_threshold  # late: engine depends on this module

        self._interactions.append(event)
        updated = adapt_threshold(self._thresholds[event.duty_id], event)
        self._thresholds[event.duty_id] = updated
        return updated

    def complete_duty(self, duty_id: str) -> None:
        duty = self.get_duty(duty_id)
        if duty.status is not DutyStatus.ACTIVE:
            raise IllegalTransitionError(f"{duty_id} is {duty.status.value}, not ACTIVE")
        self._set_status(duty_id, DutyStatus.COMPLETED)
        self._append_log({"kind": "status", "duty_id": duty_id, "status": "COMPLETED"})

    def _set_status(self, duty_id: str, status: DutyStatus) -> None:
        self._duties[duty_id] = replace(self._duties[duty_id], status=status)
        # Thresholds live only as long as the duty is active.
        self._thresholds.pop(duty_id, None)

    def snapshot(self, now: datetime | None = None) -> RegistrySnapshot:
        """Expire overdue duties (deadline + grace behind `now`), then freeze a view."""
        now = now or _now_utc()
        for duty in list(self._duties.values()):
            if duty.status is DutyStatus.ACTIVE and days_between(now, duty.deadline) > EXPIRY_GRACE_DAYS:
                self._set_status(duty.id, DutyStatus.EXPIRED)
                self._append_log({"kind": "status", "duty_id": duty.id, "status": "EXPIRED"})
        active = tuple(d for d in self._duties.values() if d.status is DutyStatus.ACTIVE)
        return RegistrySnapshot(
            duties=active,
            thresholds={d.id: self._thresholds[d.id] for d in active},
            taken_at=now,
        )

    # -- persistence -------------------------------------------------------

    def persist(self, store_dir: Path | str | None = None) -> Path:
        """Write a checkpoint snapshot; binds the registry to the dir if unbound."""
        target = Path(store_dir) if store_dir is not None else self._store_dir
        if target is None:
            raise StoreIOError("no store directory given and registry is unbound")
        try:
            target.mkdir(parents=True, exist_ok=True)
            payload = self._payload_obj()
            obj = {
                "format": STORE_FORMAT,
                "seq": self._seq,
                "checksum": _checksum(payload),
                "payload": payload,
            }
            (target / SNAPSHOT_FILE).write_bytes(self._cipher.encrypt(canonical_json(obj).encode("utf-8")))
        except OSError as exc:
            raise StoreIOError(f"cannot write snapshot: {exc}") from exc
        if self._store_dir is None:
            self._store_dir = target
        return target / SNAPSHOT_FILE

    def canonical_form(self) -> str:
        return canonical_json(self._payload_obj())

    def _payload_obj(self) -> dict:
        return {
            "duties": [duty_to_obj(d) for d in self._duties.values()],
            "thresholds": {i: thresholds_to_obj(t) for i, t in self._thresholds.items()},
            "interactions": [interaction_to_obj(e) for e in self._interactions],
        }

    def _load_payload(self, payload: dict) -> None:
        try:
            for obj in payload["duties"]:
                duty = duty_from_obj(obj)
                self._duties[duty.id] = duty
            for duty_id, obj in payload["thresholds"].items():
                self._thresholds[duty_id] = thresholds_from_obj(obj)
            for obj in payload["interactions"]:
                self._interactions.append(interaction_from_obj(obj))
        except (KeyError, ValueError, TypeError) as exc:
            raise CorruptStoreError(f"malformed snapshot payload: {exc}") from exc

    def _replay(self, entry: dict) -> None:
        try:
            kind = entry["kind"]
            if kind == "register":
                duty = duty_from_obj(entry["record"])
                self._duties[duty.id] = duty
                if duty.status is DutyStatus.ACTIVE:
                    self._thresholds[duty.id] = DutyThresholds()
            elif kind == "interaction":
                self._adapt(interaction_from_obj(entry["event"]))
            elif kind == "status":
                self._set_status(entry["duty_id"], DutyStatus(entry["status"]))
            else:
                raise CorruptStoreError(f"unknown log entry kind: {kind!r}")
        except (KeyError, ValueError, TypeError) as exc:
            raise CorruptStoreError(f"malformed log entry: {exc}") from exc

    def _append_log(self, entry: dict) -> None:
        self._seq += 1
        if self._store_dir is None:
            return
        entry = {"seq": self._seq, **entry}
        line = self._cipher.encrypt(canonical_json(entry).encode("utf-8"))
        try:
            with open(self._store_dir / EVENT_LOG_FILE, "ab") as fp:
                fp.write(line + b"\n")
        except OSError as exc:
            raise StoreIOError(f"cannot append event log: {exc}") from exc


def _checksum(payload: dict) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()
