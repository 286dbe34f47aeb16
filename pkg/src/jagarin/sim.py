"""Seeded Monte Carlo harness comparing the wake engine against fixed
reminder baselines over synthetic duty streams and synthetic users.

Determinism: a single documented PRNG (SplitMix64) with substreams derived
from (seed, user index, stream label), so runs are bit-identical across
platforms and users could be simulated in parallel without reordering
draws. Duty arrivals and user profiles come from a per-user stream shared
by every policy, so policies are compared on identical workloads; response
draws come from per-policy streams.

User model: one notification is one Bernoulli trial with success
probability hourly_receptivity x weekday_modifier x base_response_rate.
A response acts the duty at that tick (captured value = opportunity curve
there) and resets the global ignore streak; an ignore increments it.
"hours since last open" is hours since the last response. Charging/wifi
follow a simple day-night schedule (evening top-up charging, home-hours
wifi), drawn per evaluated tick.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .duties import (
    DEFAULT_TOC_PARAMS,
    CurveKind,
    DutyRecord,
    DutyThresholds,
    DutyType,
    InteractionEvent,
    InteractionOutcome,
)
from .engine import DEFAULT_ENGINE_CONFIG, EngineConfig, adapt_threshold, classify_zone
from .signals import (
    apply_bep_modifiers,
    cdr_from_features,
    duty_cdr_features,
    toc_value,
    vdi,
)

SIM_EPOCH = datetime(2026, 1, 5, tzinfo=timezone.utc)  # a Monday, so day % 7 == weekday

# Synthetic-user defaults (documented, deliberately diurnal).
HOURLY_RECEPTIVITY = (
    [0.05] * 7       # 00-06 asleep
    + [0.5, 0.5]     # 07-08 morning routine
    + [0.25] * 8     # 09-16 at work
    + [0.8] * 5      # 17-21 evening, settled
    + [0.3, 0.3]     # 22-23 winding down
)
WEEKDAY_MODIFIER = (0.9, 0.9, 0.9, 0.9, 0.9, 1.0, 1.0)

# Day-night context schedule: probability of charging / wifi by hour.
def _charging_prob(hour: int) -> float:
    return 0.8 if 17 <= hour <= 22 else 0.15


def _wifi_prob(hour: int) -> float:
    return 0.9 if hour >= 17 or hour <= 8 else 0.3


# Largest BEP the synthetic users can see (empty history base 0.5 times the
# charging+wifi boost); used by the sound skip-ahead bound below.
_SIM_BEP_UPPER_BOUND = 0.6

_NOTIFY_COOLDOWN_HOURS = 21.0

_MASK64 = (1 << 64) - 1


class InvalidConfigError(Exception):
    pass


class SplitMix64:
    """Tiny 64-bit PRNG with full cross-platform determinism."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()


def _stream_seed(seed: int, *labels: int | str) -> int:
    # FNV-1a over the label tuple, then one splitmix scramble.
    h = 0xCBF29CE484222325
    for label in labels:
        data = label.to_bytes(8, "little", signed=False) if isinstance(label, int) else str(label).encode()
        for byte in data:
            h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return SplitMix64(seed ^ h).next_u64()


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimUserProfile:
    hourly_receptivity: tuple[float, ...]
    weekday_modifier: tuple[float, ...]
    base_response_rate: float

    def response_prob(self, hour: int, weekday: int) -> float:
        p = self.hourly_receptivity[hour] * self.weekday_modifier[weekday] * self.base_response_rate
        return min(max(p, 0.0), 1.0)


@dataclass(frozen=True)
class SimConfig:
    seed: int
    n_users: int
    horizon_days: int
    duty_mix: dict[DutyType, float]
    policies: tuple[str, ...]
    tick_minutes: int = 15
    name: str = "scenario"

    def validate(self) -> None:
        if self.n_users <= 0 or self.horizon_days <= 0:
            raise InvalidConfigError("n_users and horizon_days must be positive")
        if self.tick_minutes < 15:
            raise InvalidConfigError("tick_minutes must be >= 15")
        if any(rate < 0 for rate in self.duty_mix.values()):
            raise InvalidConfigError("duty arrival rates must be >= 0")
        if not self.policies:
            raise InvalidConfigError("at least one policy required")
        for policy in self.policies:
            _parse_policy(policy)

    @classmethod
    def from_dict(cls, obj: dict) -> "SimConfig":
        try:
            mix = {}
            for name, rate in obj["duty_mix"].items():
                try:
                    mix[DutyType(name)] = float(rate)
                except ValueError:
                    raise InvalidConfigError(f"unknown duty type {name!r}") from None
            cfg = cls(
                seed=int(obj["seed"]),
                n_users=int(obj["n_users"]),
                horizon_days=int(obj["horizon_days"]),
                duty_mix=mix,
                policies=tuple(obj["policies"]),
                tick_minutes=int(obj.get("tick_minutes", 15)),
                name=str(obj.get("name", "scenario")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfigError(f"bad scenario: {exc}") from exc
        cfg.validate()
        return cfg


def load_scenario(path: Path | str, seed_override: int | None = None) -> SimConfig:
    with open(path, encoding="utf-8") as fp:
        obj = json.load(fp)
    if seed_override is not None:
        obj["seed"] = seed_override
    return SimConfig.from_dict(obj)


@dataclass
class SimMetrics:
    notifications_sent: int = 0
    notifications_ignored: int = 0
    duties_acted: int = 0
    duties_missed: int = 0
    duties_still_active: int = 0
    captured_toc_sum: float = 0.0

    @property
    def ignore_rate(self) -> float:
        return self.notifications_ignored / self.notifications_sent if self.notifications_sent else 0.0

    @property
    def mean_captured_toc(self) -> float:
        return self.captured_toc_sum / self.duties_acted if self.duties_acted else 0.0

    def mean_notifications_per_duty(self, total_duties: int) -> float:
        return self.notifications_sent / total_duties if total_duties else 0.0

    def to_obj(self, total_duties: int) -> dict:
        return {
            "mean_captured_toc": self.mean_captured_toc,
            "notifications_sent": self.notifications_sent,
            "ignore_rate": self.ignore_rate,
            "duties_missed": self.duties_missed,
            "mean_notifications_per_duty": self.mean_notifications_per_duty(total_duties),
            "duties_acted": self.duties_acted,
            "duties_still_active": self.duties_still_active,
            "captured_toc_sum": self.captured_toc_sum,
            "notifications_ignored": self.notifications_ignored,
        }


@dataclass
class SimResult:
    scenario_name: str
    seed: int
    total_duties: int
    metrics: dict[str, SimMetrics]
    threshold_samples: list[tuple[float, float]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

def _parse_policy(spec: str):
    name, _, args = spec.partition(":")
    if name == "dawn":
        return ("dawn",)
    if name == "fixed_interval":
        days = tuple(float(d) for d in args.split(",")) if args else (7.0, 3.0, 1.0)
        if not days or any(d <= 0 for d in days):
            raise InvalidConfigError(f"bad fixed_interval days: {spec!r}")
        return ("fixed_interval", tuple(sorted(days, reverse=True)))
    if name == "countdown":
        threshold = float(args) if args else 2.0
        if threshold <= 0:
            raise InvalidConfigError(f"bad countdown threshold: {spec!r}")
        return ("countdown", threshold)
    raise InvalidConfigError(f"unknown policy {spec!r}")


# ---------------------------------------------------------------------------
# Workload generation (shared across policies)
# ---------------------------------------------------------------------------

_DOMAIN_TAGS = {
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


class GenDuty:
    """One generated duty: static record plus its sim-time coordinates."""

    __slots__ = ("record", "registered_t", "deadline_t", "params", "features", "floor_days")

    def __init__(self, record: DutyRecord, registered_t: float, deadline_t: float, floor_days):
        self.record = record
        self.registered_t = registered_t
        self.deadline_t = deadline_t
        self.params = record.resolved_toc_params
        self.features = duty_cdr_features(record)
        self.floor_days = floor_days


def _generate_user(
    cfg: SimConfig, user_idx: int, engine_cfg: EngineConfig
) -> tuple[SimUserProfile, list[GenDuty]]:
    rng = SplitMix64(_stream_seed(cfg.seed, user_idx, "workload"))
    profile = SimUserProfile(
        hourly_receptivity=tuple(HOURLY_RECEPTIVITY),
        weekday_modifier=WEEKDAY_MODIFIER,
        base_response_rate=rng.uniform(0.45, 0.7),
    )
    duties: list[GenDuty] = []
    mix = sorted(cfg.duty_mix.items(), key=lambda kv: kv[0].value)
    counter = 0
    for day in range(cfg.horizon_days):
        for duty_type, rate in mix:
            if rate <= 0 or rng.random() >= rate:
                continue
            registered_t = day + rng.random()
            params = DEFAULT_TOC_PARAMS[duty_type]
            if params.curve_kind is CurveKind.STEP:
                offset = rng.uniform(1.0, 4.0)
            else:
                offset = rng.uniform(
                    params.mu_days + 0.5 * params.sigma_pre_days,
                    params.mu_days + 2.0 * params.sigma_pre_days,
                )
            deadline_t = registered_t + offset
            record = DutyRecord(
                id=f"u{user_idx}-d{counter}",
                duty_type=duty_type,
                counterparty=f"{_DOMAIN_TAGS[duty_type].title()} #{counter}",
                counterparty_domain=_DOMAIN_TAGS[duty_type],
                deadline=SIM_EPOCH + timedelta(days=deadline_t),
                toc_params=params,
                created_at=SIM_EPOCH + timedelta(days=registered_t),
            )
            duties.append(
                GenDuty(record, registered_t, deadline_t, engine_cfg.urgency_floor_days.get(duty_type))
            )
            counter += 1
    return profile, duties


# ---------------------------------------------------------------------------
# DAWN policy
# ---------------------------------------------------------------------------

class _DawnState:
    __slots__ = ("gen", "theta", "cooldown_until", "last_zone", "cdr", "wake_from")

    def __init__(self, gen: GenDuty):
        self.gen = gen
        self.theta = DutyThresholds()
        self.cooldown_until = -1.0
        self.last_zone = 0
        self.cdr = 0.0
        self.wake_from = 0.0


def _wake_from_day(gen: GenDuty, cdr_value: float, weights, theta1_init: float) -> float:
    """First sim-day at which the duty can possibly leave SLEEP.

    Sound because: (a) per-duty thresholds start at theta1_init and NUDGE
    interactions can only hold or raise theta1 before the duty's own first
    notification; (b) on the approach side (t > mu) the decay signal is 0;
    (c) synthetic BEP never exceeds _SIM_BEP_UPPER_BOUND; (d) resonance is
    bounded by the duty's current best pair score, which only changes on
    registry composition changes (recomputed there).
    """
    w_toc, w_bep, _w_vdi, w_cdr = weights
    params = gen.params
    if params.curve_kind is CurveKind.STEP:
        start_t = params.pickup_window_days or 0.0
    else:
        margin = theta1_init - w_bep * _SIM_BEP_UPPER_BOUND - w_cdr * cdr_value
        if margin <= 0.0:
            return gen.registered_t
        toc_needed = margin / w_toc
        if toc_needed >= 1.0:
            start_t = params.mu_days
        else:
            start_t = params.mu_days + params.sigma_pre_days * math.sqrt(-2.0 * math.log(toc_needed))
    if gen.floor_days is not None:
        start_t = max(start_t, gen.floor_days)
    return max(gen.deadline_t - start_t, gen.registered_t)


def _recompute_cdr(states: list[_DawnState], weights, theta1_init: float) -> None:
    for st in states:
        best = 0.0
        mine = st.gen.features
        for other in states:
            if other is st:
                continue
            score = cdr_from_features(mine, other.gen.features)
            if score > best:
                best = score
        st.cdr = best
        st.wake_from = _wake_from_day(st.gen, best, weights, theta1_init)


def _run_dawn_user(
    cfg: SimConfig,
    engine_cfg: EngineConfig,
    profile: SimUserProfile,
    duties: list[GenDuty],
    rng: SplitMix64,
    metrics: SimMetrics,
    threshold_samples: list[tuple[float, float]] | None,
) -> None:
    if not duties:
        return
    w_toc, w_bep, w_vdi, w_cdr = engine_cfg.weights
    weights = engine_cfg.weights
    theta1_init = DutyThresholds().theta1
    day_frac = cfg.tick_minutes / 1440.0
    cooldown = _NOTIFY_COOLDOWN_HOURS / 24.0
    horizon = float(cfg.horizon_days)
    hourly = profile.hourly_receptivity
    weekmod = profile.weekday_modifier
    base_rate = profile.base_response_rate

    pending = sorted(duties, key=lambda g: g.registered_t)
    n_pending = len(pending)
    idx = 0
    active: list[_DawnState] = []
    ignore_streak = 0
    last_open_day = 0.0

    tick = _align_tick(pending[0].registered_t, day_frac)
    while True:
        now = tick * day_frac
        if now > horizon:
            break
        if not active and idx < n_pending and now < pending[idx].registered_t:
            tick = max(tick, _align_tick(pending[idx].registered_t, day_frac))
            now = tick * day_frac
        changed = False
        while idx < n_pending and pending[idx].registered_t <= now:
            active.append(_DawnState(pending[idx]))
            idx += 1
            changed = True
        if changed:
            _recompute_cdr(active, weights, theta1_init)
        if not active:
            if idx >= n_pending:
                break
            tick += 1
            continue

        hour = int(now * 24.0) % 24
        weekday = int(now) % 7
        bep_value: float | None = None
        removed = False

        for st in active:
            gen = st.gen
            t_days = gen.deadline_t - now
            if t_days < 0.0:
                metrics.duties_missed += 1
                st.last_zone = -1  # mark for removal
                removed = True
                continue
            if now < st.wake_from:
                continue
            if bep_value is None:
                charging = rng.random() < _charging_prob(hour)
                wifi = rng.random() < _wifi_prob(hour)
                bep_value = apply_bep_modifiers(
                    0.5, charging, wifi, ignore_streak, (now - last_open_day) * 24.0
                )
            params = gen.params
            toc_v = toc_value(t_days, params)
            vdi_v = vdi(t_days, params)
            score = w_toc * toc_v + w_bep * bep_value + w_vdi * vdi_v + w_cdr * st.cdr
            zone, _reason = classify_zone(score, st.theta, gen.record, t_days, engine_cfg)
            zone_i = int(zone)
            if zone_i == 0:
                continue
            if now < st.cooldown_until and zone_i <= st.last_zone:
                continue
            # Notify.
            metrics.notifications_sent += 1
            st.cooldown_until = now + cooldown
            st.last_zone = zone_i
            responded = rng.random() < hourly[hour] * weekmod[weekday] * base_rate
            event = InteractionEvent(
                duty_id=gen.record.id,
                fired_zone=zone,
                score_at_fire=score,
                outcome=InteractionOutcome.RESPONDED if responded else InteractionOutcome.IGNORED,
                at=SIM_EPOCH + timedelta(days=now),
            )
            st.theta = adapt_threshold(st.theta, event, engine_cfg)
            if threshold_samples is not None:
                threshold_samples.append((st.theta.theta1, st.theta.theta2))
            if responded:
                metrics.duties_acted += 1
                metrics.captured_toc_sum += toc_v
                ignore_streak = 0
                last_open_day = now
                st.last_zone = -1
                removed = True
            else:
                metrics.notifications_ignored += 1
                ignore_streak += 1

        if removed:
            active = [st for st in active if st.last_zone >= 0]
            _recompute_cdr(active, weights, theta1_init)
        tick += 1
        if not active and idx >= n_pending:
            break

    metrics.duties_still_active += len(active)


# ---------------------------------------------------------------------------
# Baseline policies
# ---------------------------------------------------------------------------

def _align_tick(t: float, day_frac: float) -> int:
    return int(math.ceil(t / day_frac - 1e-12))


def _run_fixed_interval_user(
    cfg: SimConfig,
    days_before: tuple[float, ...],
    profile: SimUserProfile,
    duties: list[GenDuty],
    rng: SplitMix64,
    metrics: SimMetrics,
) -> None:
    day_frac = cfg.tick_minutes / 1440.0
    horizon = float(cfg.horizon_days)
    for gen in duties:
        acted = False
        for d in days_before:
            shot_t = gen.deadline_t - d
            if shot_t < gen.registered_t:
                continue
            tick = _align_tick(shot_t, day_frac)
            now = tick * day_frac
            if now > horizon or now > gen.deadline_t:
                continue
            metrics.notifications_sent += 1
            hour = int(now * 24.0) % 24
            weekday = int(now) % 7
            if rng.random() < profile.response_prob(hour, weekday):
                metrics.duties_acted += 1
                metrics.captured_toc_sum += toc_value(gen.deadline_t - now, gen.params)
                acted = True
                break
            metrics.notifications_ignored += 1
        if not acted:
            if gen.deadline_t <= horizon:
                metrics.duties_missed += 1
            else:
                metrics.duties_still_active += 1


def _run_countdown_user(
    cfg: SimConfig,
    threshold_days: float,
    profile: SimUserProfile,
    duties: list[GenDuty],
    rng: SplitMix64,
    metrics: SimMetrics,
) -> None:
    day_frac = cfg.tick_minutes / 1440.0
    horizon = float(cfg.horizon_days)
    for gen in duties:
        acted = False
        start = max(gen.deadline_t - threshold_days, gen.registered_t)
        tick = _align_tick(start, day_frac)
        while True:
            now = tick * day_frac
            if now > horizon or now > gen.deadline_t:
                break
            metrics.notifications_sent += 1
            hour = int(now * 24.0) % 24
            weekday = int(now) % 7
            if rng.random() < profile.response_prob(hour, weekday):
                metrics.duties_acted += 1
                metrics.captured_toc_sum += toc_value(gen.deadline_t - now, gen.params)
                acted = True
                break
            metrics.notifications_ignored += 1
            tick += 1
        if not acted:
            if gen.deadline_t <= horizon:
                metrics.duties_missed += 1
            else:
                metrics.duties_still_active += 1


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------

def run(
    cfg: SimConfig,
    engine_cfg: EngineConfig = DEFAULT_ENGINE_CONFIG,
    *,
    collect_thresholds: bool = False,
) -> SimResult:
    """Deterministic full run: every policy over every user's workload."""
    cfg.validate()
    parsed = [(spec, _parse_policy(spec)) for spec in cfg.policies]
    result = SimResult(cfg.name, cfg.seed, 0, {spec: SimMetrics() for spec in cfg.policies})
    samples = result.threshold_samples if collect_thresholds else None

    for user_idx in range(cfg.n_users):
        profile, duties = _generate_user(cfg, user_idx, engine_cfg)
        result.total_duties += len(duties)
        for spec, policy in parsed:
            metrics = result.metrics[spec]
            rng = SplitMix64(_stream_seed(cfg.seed, user_idx, spec))
            if policy[0] == "dawn":
                _run_dawn_user(cfg, engine_cfg, profile, duties, rng, metrics, samples)
            elif policy[0] == "fixed_interval":
                _run_fixed_interval_user(cfg, policy[1], profile, duties, rng, metrics)
            else:
                _run_countdown_user(cfg, policy[1], profile, duties, rng, metrics)

    for spec, metrics in result.metrics.items():
        balance = metrics.duties_acted + metrics.duties_missed + metrics.duties_still_active
        if balance != result.total_duties:
            raise AssertionError(
                f"{spec}: acted+missed+active = {balance} != total {result.total_duties}"
            )
    return result


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

_REPORT_COLUMNS = (
    ("mean_captured_toc", "captured_toc"),
    ("notifications_sent", "notifs"),
    ("ignore_rate", "ignore_rate"),
    ("duties_missed", "missed"),
    ("mean_notifications_per_duty", "notifs/duty"),
)


def result_to_obj(result: SimResult) -> dict:
    return {
        "scenario": result.scenario_name,
        "seed": result.seed,
        "total_duties": result.total_duties,
        "policies": {spec: m.to_obj(result.total_duties) for spec, m in result.metrics.items()},
    }


def write_metrics(result: SimResult, path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(result_to_obj(result), fp, indent=2, sort_keys=True)
        fp.write("\n")


def read_metrics(path: Path | str) -> dict:
    with open(path, encoding="utf-8") as fp:
        return json.load(fp)


def report(result: SimResult) -> str:
    """Fixed-column comparison table with deltas against the first policy."""
    rows = []
    header = ["policy"] + [label for _, label in _REPORT_COLUMNS]
    rows.append(header)
    baseline_obj = None
    for spec in result.metrics:
        obj = result.metrics[spec].to_obj(result.total_duties)
        if baseline_obj is None:
            baseline_obj = obj
            rows.append([spec] + [_fmt(obj[key]) for key, _ in _REPORT_COLUMNS])
        else:
            cells = []
            for key, _ in _REPORT_COLUMNS:
                cells.append(f"{_fmt(obj[key])} ({_delta(obj[key], baseline_obj[key])})")
            rows.append([spec] + cells)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * widths[j] for j in range(len(header))))
    lines.append("")
    lines.append(f"total duties: {result.total_duties}  seed: {result.seed}  scenario: {result.scenario_name}")
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _delta(value, base) -> str:
    if base == 0:
        return "n/a"
    pct = (value - base) / base * 100.0
    return f"{pct:+.1f}%"
