"""RFC-3339 timestamp helpers shared by the store, codec, and gateway."""

from __future__ import annotations

from datetime import datetime, timezone

UTC = timezone.utc


def parse_rfc3339(text: str) -> datetime:
    """Parse an RFC-3339 timestamp; naive (offset-less) input is rejected."""
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp missing UTC offset: {text!r}")
    return dt.astimezone(UTC)


def format_rfc3339(dt: datetime) -> str:
    """Canonical UTC form: trailing Z, fractional seconds only when nonzero."""
    if dt.tzinfo is None:
        raise ValueError("naive datetime cannot be formatted as RFC-3339")
    dt = dt.astimezone(UTC)
    out = dt.strftime("%Y-%m-%dT%H:%M:%S")
    if dt.microsecond:
        out += f".{dt.microsecond:06d}"
    return out + "Z"


def days_between(later: datetime, earlier: datetime) -> float:
    """Fractional days from `earlier` to `later` (negative if out of order)."""
    return (later - earlier).total_seconds() / 86400.0
