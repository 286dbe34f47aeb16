from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from jagarin.duties import DutyRecord, DutyRegistry, DutyType

UTC = timezone.utc

GOLDEN_DIR = Path(__file__).parent / "golden"
NOW = datetime(2026, 3, 1, 12, 0, tzinfo=UTC)


def make_duty(
    duty_id: str,
    duty_type: DutyType,
    days_out: float,
    counterparty: str = "Counterparty",
    domain: str = "general",
    now: datetime = NOW,
    **kwargs,
) -> DutyRecord:
    return DutyRecord(
        id=duty_id,
        duty_type=duty_type,
        counterparty=counterparty,
        counterparty_domain=domain,
        deadline=now + timedelta(days=days_out),
        created_at=now,
        **kwargs,
    )


@pytest.fixture
def figure2_registry() -> DutyRegistry:
    """The three-duty showcase: service far out, refill mid-window, renewal at the wire."""
    reg = DutyRegistry()
    reg.register_duty(
        make_duty("honda", DutyType.VEHICLE_SERVICE, 60, "Honda Service Center", "auto-service"),
        now=NOW,
    )
    reg.register_duty(
        make_duty("cvs", DutyType.PRESCRIPTION_REFILL, 22, "CVS Pharmacy", "pharmacy"),
        now=NOW,
    )
    reg.register_duty(
        make_duty(
            "statefarm",
            DutyType.INSURANCE_RENEWAL,
            7,
            "State Farm",
            "insurance",
            reference_number="POL-98234",
        ),
        now=NOW,
    )
    return reg
