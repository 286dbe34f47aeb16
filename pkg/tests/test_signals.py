"""Signal math: curve values, derivative agreement, engagement rules, resonance."""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jagarin.duties import DutyType, TocParams
from jagarin.signals import (
    EngagementContext,
    EngagementHistory,
    bep,
    capability_tokens,
    cdr_pair,
    cdr_signal,
    dtoc_dt,
    toc,
    toc_step,
    vdi,
)

from conftest import NOW, make_duty


class TestToc:
    def test_peak_value_is_one(self):
        assert toc(30, TocParams.gaussian(30, 12, 7)) == 1.0

    def test_approach_side_example(self):
        assert toc(45, TocParams.gaussian(30, 10, 10)) == pytest.approx(math.exp(-1.125))

    def test_urgency_side_example(self):
        assert toc(20, TocParams.gaussian(30, 10, 10)) == pytest.approx(math.exp(-0.5))

    def test_negative_t_allowed(self):
        assert 0 < toc(-3, TocParams.gaussian(7, 4, 3)) < 1

    def test_continuity_at_peak(self):
        params = TocParams.gaussian(30, 12, 7)
        eps = 1e-9
        assert toc(30 + eps, params) == pytest.approx(1.0, abs=1e-12)
        assert toc(30 - eps, params) == pytest.approx(1.0, abs=1e-12)

    def test_argmax_at_mu(self):
        params = TocParams.gaussian(21, 10, 5)
        grid = [i * 0.05 for i in range(-200, 1600)]
        best = max(grid, key=lambda t: toc(t, params))
        assert best == pytest.approx(21, abs=0.05)

    def test_step_examples(self):
        assert toc_step(2, 3) == 1
        assert toc_step(5, 3) == 0
        assert toc_step(-1, 3) == 0


class TestDerivative:
    def test_zero_at_peak(self):
        assert dtoc_dt(30, TocParams.gaussian(30, 10, 10)) == 0.0

    def test_urgency_side_value(self):
        assert dtoc_dt(20, TocParams.gaussian(30, 10, 10)) == pytest.approx(0.1 * math.exp(-0.5))

    def test_approach_side_value(self):
        assert dtoc_dt(45, TocParams.gaussian(30, 10, 10)) == pytest.approx(-0.15 * math.exp(-1.125))

    def test_matches_central_differences(self):
        params = TocParams.gaussian(30, 12, 7)
        rng = random.Random(1301)
        h = 1e-4
        for _ in range(1000):
            # Stay off the sigma switch at t = mu.
            t = 30 + rng.uniform(1e-3, 6 * 12)
            fd = (toc(t + h, params) - toc(t - h, params)) / (2 * h)
            assert abs(fd - dtoc_dt(t, params)) < 1e-6
        for _ in range(1000):
            t = 30 - rng.uniform(1e-3, 6 * 7)
            fd = (toc(t + h, params) - toc(t - h, params)) / (2 * h)
            assert abs(fd - dtoc_dt(t, params)) < 1e-6


class TestVdi:
    def test_zero_on_approach_side(self):
        params = TocParams.gaussian(30, 12, 7)
        for t in (30, 30.001, 45, 90, 500):
            assert vdi(t, params) == 0.0

    def test_insurance_far_out_is_zero(self):
        assert vdi(90, TocParams.gaussian(30, 12, 7)) == 0.0

    def test_maximum_is_one_at_mu_minus_sigma_post(self):
        assert vdi(20, TocParams.gaussian(30, 10, 10)) == pytest.approx(1.0, abs=1e-9)

    def test_positive_inside_urgency_phase(self):
        params = TocParams.gaussian(30, 12, 7)
        for t in (29, 25, 20, 10, 30 - 6 * 7 + 0.1):
            assert 0 < vdi(t, params) <= 1

    def test_continuity_at_peak(self):
        params = TocParams.gaussian(30, 12, 7)
        assert vdi(30 - 1e-9, params) == pytest.approx(0.0, abs=1e-6)

    def test_step_cliff(self):
        params = TocParams.step(3)
        assert vdi(5, params) == 0
        assert vdi(2, params) == 1
        assert vdi(-1, params) == 0


class TestBep:
    def test_empty_history_neutral(self):
        ctx = EngagementContext.neutral(NOW)
        assert bep(ctx, EngagementHistory.empty()) == pytest.approx(0.5)

    def test_ignore_streak_dampener(self):
        ctx = EngagementContext.from_time(NOW, ignore_streak=3, hours_since_last_open=1)
        assert bep(ctx, EngagementHistory.empty()) == pytest.approx(0.5 * 0.8**3)

    def test_charging_wifi_boost_clamped(self):
        hist = EngagementHistory.empty()
        for _ in range(10):
            hist.record(NOW.weekday(), NOW.hour, responded=True)
        ctx = EngagementContext.from_time(NOW, charging=True, wifi=True, hours_since_last_open=1)
        assert bep(ctx, hist) == 1.0

    def test_stale_open_penalty(self):
        ctx = EngagementContext.from_time(NOW, hours_since_last_open=72)
        assert bep(ctx, EngagementHistory.empty()) == pytest.approx(0.35)

    def test_floor(self):
        ctx = EngagementContext.from_time(NOW, ignore_streak=40, hours_since_last_open=100)
        assert bep(ctx, EngagementHistory.empty()) == 0.01

    @given(st.integers(min_value=0, max_value=30), st.integers(min_value=0, max_value=30))
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_ignore_streak(self, k1, k2):
        lo, hi = sorted((k1, k2))
        ctx_lo = EngagementContext.from_time(NOW, ignore_streak=lo, hours_since_last_open=1)
        ctx_hi = EngagementContext.from_time(NOW, ignore_streak=hi, hours_since_last_open=1)
        hist = EngagementHistory.empty()
        assert bep(ctx_hi, hist) <= bep(ctx_lo, hist)


class TestCdr:
    def test_all_predicates_capped_at_one(self):
        a = make_duty("a", DutyType.INSURANCE_RENEWAL, 30, "Auto Ins", "insurance",
                      escalation_capability="compare quotes")
        b = make_duty("b", DutyType.INSURANCE_RENEWAL, 32, "Home Ins", "insurance",
                      escalation_capability="compare quotes")
        assert cdr_pair(a, b) == 1.0

    def test_domain_only(self):
        a = make_duty("a", DutyType.INSURANCE_RENEWAL, 30, domain="insurance")
        b = make_duty("b", DutyType.WELLNESS_VISIT, 150, domain="insurance")
        # Same domain only: peaks 0 vs 129 days, deadlines 120 days apart.
        assert cdr_pair(a, b) == pytest.approx(0.5)

    def test_no_shared_attributes(self):
        a = make_duty("a", DutyType.INSURANCE_RENEWAL, 30, domain="insurance")
        b = make_duty("b", DutyType.WELLNESS_VISIT, 150, domain="pharmacy")
        assert cdr_pair(a, b) == 0.0

    def test_cycle_phase_wraps_year_end(self):
        # Deadlines a year-and-a-week apart: day-of-year phase matches across
        # the wrap while peaks stay far apart.
        a = make_duty("a", DutyType.CUSTOM, 0, domain="x",
                      now=NOW.replace(month=12, day=28))
        b = make_duty("b", DutyType.CUSTOM, 0, domain="y",
                      now=NOW.replace(year=2028, month=1, day=4))
        assert cdr_pair(a, b) == pytest.approx(0.1)

    def test_signal_empty_others(self):
        duty = make_duty("a", DutyType.CUSTOM, 10)
        assert cdr_signal(duty, []) == (0.0, None)

    def test_signal_max_and_partner(self):
        duty = make_duty("a", DutyType.INSURANCE_RENEWAL, 30, domain="insurance")
        weak = make_duty("weak", DutyType.CUSTOM, 31, domain="other")  # window overlap only
        strong = make_duty("strong", DutyType.INSURANCE_RENEWAL, 33, domain="insurance")
        score, partner = cdr_signal(duty, [weak, strong])
        assert partner == "strong"
        assert score > cdr_pair(duty, weak)

    def test_tie_breaks_to_smaller_id(self):
        duty = make_duty("a", DutyType.CUSTOM, 10, domain="zeta")
        t1 = make_duty("m1", DutyType.CUSTOM, 11, domain="zeta")
        t2 = make_duty("m2", DutyType.CUSTOM, 11, domain="zeta")
        _, partner = cdr_signal(duty, [t2, t1])
        assert partner == "m1"

    @given(
        st.sampled_from(list(DutyType)),
        st.sampled_from(list(DutyType)),
        st.floats(min_value=0, max_value=200, allow_nan=False),
        st.floats(min_value=0, max_value=200, allow_nan=False),
        st.sampled_from(["insurance", "pharmacy", "retail"]),
        st.sampled_from(["insurance", "pharmacy", "retail"]),
    )
    @settings(max_examples=200, deadline=None)
    def test_symmetry_and_range(self, ta, tb, da, db, doma, domb):
        a = make_duty("a", ta, da, domain=doma, escalation_capability="compare renewal quotes")
        b = make_duty("b", tb, db, domain=domb, escalation_capability="pay the renewal")
        assert cdr_pair(a, b) == cdr_pair(b, a)
        assert 0.0 <= cdr_pair(a, b) <= 1.0

    def test_capability_tokens_drop_stopwords(self):
        assert capability_tokens("Compare the quotes, and request a renewal") == {
            "compare", "quotes", "request", "renewal",
        }
