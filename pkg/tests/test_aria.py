"""Router behavior: classification cascade, extraction, scoring, routing table."""

import json
import math
import random
from datetime import datetime, timedelta, timezone

import pytest

from jagarin import aria
from jagarin.aria import (
    ActionKind,
    DECLINE_TIER2,
    ExtractionFailedError,
    InboundMessage,
    MessageCategory,
    Purchase,
    PurchasePatternModel,
    RewardsSignal,
    classify,
    parse_message_text,
    ppm_score,
    rewards_to_duty,
    route,
    tier1_extract,
    update_ppm,
)
from jagarin.duties import CurveKind, DutyType

from conftest import GOLDEN_DIR, NOW

UTC = timezone.utc
ARIA_GOLDEN = GOLDEN_DIR / "aria"


def msg(subject: str, body: str = "", domain: str = "sender.example", received=NOW) -> InboundMessage:
    return InboundMessage(
        sender_address=f"news@{domain}",
        sender_domain=domain,
        subject=subject,
        body_text=body,
        received_at=received,
    )


def corpus_ppm() -> PurchasePatternModel:
    obj = json.loads((ARIA_GOLDEN / "ppm.json").read_text())
    return PurchasePatternModel.from_purchases([
        Purchase(
            p["merchant"], p["category_tag"], p["amount_minor"], p["currency"],
            datetime.fromisoformat(p["at"].replace("Z", "+00:00")),
        )
        for p in obj["purchases"]
    ])


class TestClassify:
    def test_renewal_with_date_is_temporal(self):
        assert classify(msg("Your policy renews on March 10")) is MessageCategory.TEMPORAL_OBLIGATION

    def test_flash_sale_is_commercial(self):
        assert classify(msg("Flash sale: 40% off this weekend")) is MessageCategory.COMMERCIAL_OPPORTUNITY

    def test_points_expiring_is_rewards(self):
        assert classify(msg("500 points expiring June 1")) is MessageCategory.REWARDS_SIGNAL

    def test_follower_update_is_social(self):
        assert classify(msg("You have 3 new followers")) is MessageCategory.SOCIAL_PLATFORM_UPDATE

    def test_rewards_beats_temporal(self):
        # Carries both an expiry date and rewards keywords; rewards wins.
        assert classify(msg("1,200 points expire on 2026-04-01")) is MessageCategory.REWARDS_SIGNAL

    def test_obligation_without_date_falls_through(self):
        assert classify(msg("Renew soon for a great deal")) is MessageCategory.COMMERCIAL_OPPORTUNITY

    def test_default_is_commercial(self):
        assert classify(msg("A note from our founder")) is MessageCategory.COMMERCIAL_OPPORTUNITY

    def test_total_over_random_text(self):
        rng = random.Random(7)
        words = ["renew", "sale", "points", "follower", "hello", "deadline", "due",
                 "March 10", "50% off", "miles", "community", "2026-05-01", "tier"]
        for _ in range(500):
            text = " ".join(rng.choices(words, k=rng.randint(1, 8)))
            assert classify(msg(text)) in MessageCategory


class TestTier1Extract:
    def test_figure_insurance_message(self):
        m = msg("Policy renewal", "Your policy POL-98234 renews March 10, 2026.",
                domain="statefarm.example")
        duty = tier1_extract(m)
        assert duty.duty_type is DutyType.INSURANCE_RENEWAL
        assert duty.counterparty == "State Farm"
        assert duty.reference_number == "POL-98234"
        assert duty.deadline == datetime(2026, 3, 10, tzinfo=UTC)

    def test_no_date_raises(self):
        with pytest.raises(ExtractionFailedError):
            tier1_extract(msg("Your policy renews soon"))

    def test_bopis_relative_window(self):
        m = msg("Order ready", "Your order ORD-7 is ready for pickup, hold for 3 days.")
        duty = tier1_extract(m)
        assert duty.duty_type is DutyType.BOPIS_PICKUP
        assert duty.toc_params.curve_kind is CurveKind.STEP
        assert duty.toc_params.pickup_window_days == 3.0
        assert duty.deadline == NOW + timedelta(days=3)
        assert duty.reference_number == "ORD-7"

    def test_unknown_sender_prettified(self):
        m = msg("Subscription renews", "Your subscription renews 2026-04-02.",
                domain="acme-streaming.example")
        duty = tier1_extract(m)
        assert duty.counterparty == "Acme Streaming"
        assert duty.counterparty_domain == "subscription"

    def test_iso_date_wins_over_relative(self):
        m = msg("Due", "Payment due 2026-03-20, or in 5 days with the app.")
        assert tier1_extract(m).deadline == datetime(2026, 3, 20, tzinfo=UTC)

    def test_monthname_without_year_rolls_forward(self):
        m = msg("Due", "Renewal due January 15.")  # received March 1st
        assert tier1_extract(m).deadline == datetime(2027, 1, 15, tzinfo=UTC)

    def test_deterministic_id(self):
        m = msg("Policy renewal", "Your policy renews March 10, 2026.", domain="statefarm.example")
        assert tier1_extract(m).id == tier1_extract(m).id


class TestPpmScore:
    def test_recent_purchase_scores_high(self):
        ppm = PurchasePatternModel.from_purchases([
            Purchase("Peak Beans", "coffee", 1500, "USD", NOW - timedelta(days=30)),
            Purchase("Peak Beans", "coffee", 1500, "USD", NOW - timedelta(days=50)),
            Purchase("Other", "books", 1000, "USD", NOW - timedelta(days=10)),
            Purchase("Other", "books", 1000, "USD", NOW - timedelta(days=20)),
            Purchase("Other2", "misc", 1000, "USD", NOW - timedelta(days=15)),
        ])
        # coffee affinity 0.4, recency window hit: 0.7 + 0.3*0.4 = 0.82
        score = ppm_score(msg("Espresso this weekend", domain="peakbeans.example"), ppm, NOW)
        assert score == pytest.approx(0.82)

    def test_unknown_brand_scores_zero(self):
        ppm = PurchasePatternModel.from_purchases(
            [Purchase("Peak Beans", "coffee", 1500, "USD", NOW - timedelta(days=30))]
        )
        assert ppm_score(msg("Mystery gadget offer", domain="mystery.example"), ppm, NOW) == 0.0

    def test_old_purchase_decays(self):
        others = [
            Purchase(f"Merchant{i}", f"cat{i}", 1, "USD", NOW) for i in range(9)
        ]
        ppm = PurchasePatternModel.from_purchases(
            [Purchase("Trail Gear", "outdoor", 8900, "USD", NOW - timedelta(days=180))] + others
        )
        score = ppm_score(msg("Tent deals", domain="trailgear.example"), ppm, NOW)
        assert score == pytest.approx(0.7 * math.exp(-1) + 0.3 * 0.1)

    def test_monotone_in_staleness(self):
        def score_at(days):
            ppm = PurchasePatternModel.from_purchases(
                [Purchase("Shop", "stuff", 100, "USD", NOW - timedelta(days=days))]
            )
            return ppm_score(msg("Sale", domain="shop.example"), ppm, NOW)

        scores = [score_at(d) for d in (10, 60, 90, 120, 200, 400)]
        assert all(a >= b for a, b in zip(scores, scores[1:]))
        assert all(0 <= s <= 1 for s in scores)

    def test_category_tag_match_in_text(self):
        ppm = PurchasePatternModel.from_purchases(
            [Purchase("Peak Beans", "coffee", 1500, "USD", NOW - timedelta(days=5))]
        )
        assert ppm_score(msg("Best coffee deals in town", domain="somebrand.example"), ppm, NOW) > 0.5


class TestUpdatePpm:
    def test_first_purchase_full_affinity(self):
        ppm = update_ppm(PurchasePatternModel(), Purchase("Cafe", "coffee", 100, "USD", NOW))
        assert ppm.affinity("coffee") == 1.0

    def test_count_share(self):
        ppm = PurchasePatternModel()
        for i in range(3):
            ppm = update_ppm(ppm, Purchase("Cafe", "coffee", 100 + i, "USD", NOW + timedelta(days=i)))
        ppm = update_ppm(ppm, Purchase("Store", "grocery", 500, "USD", NOW))
        assert ppm.affinity("coffee") == pytest.approx(0.75)

    def test_duplicate_is_noop(self):
        purchase = Purchase("Cafe", "coffee", 100, "USD", NOW)
        ppm = update_ppm(PurchasePatternModel(), purchase)
        assert update_ppm(ppm, purchase) == ppm


class TestRewards:
    def test_value_above_cliff_with_expiry(self):
        sig = RewardsSignal("Rewardly", 2400, 1200, "USD", NOW + timedelta(days=20))
        duty = rewards_to_duty(sig, now=NOW)
        assert duty is not None
        assert duty.toc_params.curve_kind is CurveKind.STEP
        assert duty.toc_params.pickup_window_days == 14.0
        assert duty.deadline == sig.points_expiry

    def test_low_value_none(self):
        assert rewards_to_duty(RewardsSignal("R", 300, 300, "USD", NOW), now=NOW) is None

    def test_threshold_is_strict(self):
        assert rewards_to_duty(RewardsSignal("R", 500, 500, "USD", NOW), now=NOW) is None
        assert rewards_to_duty(RewardsSignal("R", 501, 501, "USD", NOW), now=NOW) is not None

    def test_no_expiry_none_even_for_high_value(self):
        assert rewards_to_duty(RewardsSignal("R", 9999, 5000, "USD", None), now=NOW) is None


class TestRoute:
    def test_promo_above_gate_notifies(self):
        ppm = PurchasePatternModel.from_purchases(
            [Purchase("Peak Beans", "coffee", 1500, "USD", NOW - timedelta(days=10))]
        )
        action = route(msg("20% off espresso", domain="peakbeans.example"), ppm, now=NOW)
        assert action.kind is ActionKind.STORE_AND_NOTIFY_LOW_PRIORITY

    def test_promo_below_gate_archives(self):
        action = route(msg("Big sale on widgets", domain="widgets.example"),
                       PurchasePatternModel(), now=NOW)
        assert action.kind is ActionKind.ARCHIVE_SILENTLY

    def test_social_gate_on_bep(self):
        m = msg("You have new followers")
        assert route(m, PurchasePatternModel(), bep_at_ingest=0.6, now=NOW).kind is ActionKind.NOTIFY_ONLY
        assert route(m, PurchasePatternModel(), bep_at_ingest=0.5, now=NOW).kind is ActionKind.NOTIFY_ONLY
        assert route(m, PurchasePatternModel(), bep_at_ingest=0.49, now=NOW).kind is ActionKind.ARCHIVE_SILENTLY

    def test_tier1_handles_parseable_obligation(self):
        m = msg("Policy renews March 10, 2026", domain="statefarm.example")
        action = route(m, PurchasePatternModel(), now=NOW, tier2=DECLINE_TIER2)
        assert action.kind is ActionKind.REGISTER_DUTY

    def test_declined_extraction_queues_manual_review(self, monkeypatch):
        m = msg("Policy renews March 10, 2026", domain="statefarm.example")

        def failing_tier1(_msg, _senders=None):
            raise ExtractionFailedError("forced")

        monkeypatch.setattr(aria, "tier1_extract", failing_tier1)
        action = route(m, PurchasePatternModel(), now=NOW)
        assert action.kind is ActionKind.MANUAL_REVIEW
        assert action.detail == "forced"

    def test_tier2_duty_beats_manual_review(self, monkeypatch):
        m = msg("Policy renews March 10, 2026", domain="statefarm.example")
        real_duty = tier1_extract(m)

        def failing_tier1(_msg, _senders=None):
            raise ExtractionFailedError("forced")

        class StubTier2:
            def extract(self, message, category):
                assert category is MessageCategory.TEMPORAL_OBLIGATION
                return real_duty

        monkeypatch.setattr(aria, "tier1_extract", failing_tier1)
        action = route(m, PurchasePatternModel(), now=NOW, tier2=StubTier2())
        assert action.kind is ActionKind.REGISTER_DUTY
        assert action.duty == real_duty
        assert action.detail == "tier2"

    def test_rewards_route_duty_vs_graph(self):
        duty_msg = msg("Points expiring", "2,400 points worth $12.00 expire on 2026-03-20.")
        graph_msg = msg("Points expiring", "300 points worth $3.00 expire on 2026-03-25.")
        assert route(duty_msg, PurchasePatternModel(), now=NOW).kind is ActionKind.REGISTER_DUTY
        assert route(graph_msg, PurchasePatternModel(), now=NOW).kind is ActionKind.UPDATE_REWARDS_GRAPH

    def test_routing_table_conformance_fuzz(self):
        rng = random.Random(0xA51A)
        ppm = corpus_ppm()
        allowed = {
            MessageCategory.TEMPORAL_OBLIGATION: {ActionKind.REGISTER_DUTY, ActionKind.MANUAL_REVIEW},
            MessageCategory.COMMERCIAL_OPPORTUNITY: {
                ActionKind.STORE_AND_NOTIFY_LOW_PRIORITY, ActionKind.ARCHIVE_SILENTLY,
            },
            MessageCategory.REWARDS_SIGNAL: {ActionKind.REGISTER_DUTY, ActionKind.UPDATE_REWARDS_GRAPH},
            MessageCategory.SOCIAL_PLATFORM_UPDATE: {ActionKind.NOTIFY_ONLY, ActionKind.ARCHIVE_SILENTLY},
        }
        fragments = [
            "renews", "due", "pick up", "return by", "expires", "sale", "% off", "deal",
            "offer", "points", "miles", "tier upgraded", "followers", "mentioned you",
            "community", "March 10, 2026", "2026-04-01", "in 5 days", "$12.00",
            "2,400 points", "policy POL-1234", "order ORD-9", "hello there", "coffee",
        ]
        domains = ["statefarm.example", "peakbeans.example", "chirper.example",
                   "unknown.example", "trailgear.example"]
        for i in range(1000):
            text = " ".join(rng.choices(fragments, k=rng.randint(1, 7)))
            m = msg(f"fuzz {i}", text, domain=rng.choice(domains))
            bep = rng.random()
            category = classify(m)
            action = route(m, ppm, bep_at_ingest=bep, now=NOW)
            assert action.kind in allowed[category], (text, category, action.kind)
            if category in (MessageCategory.COMMERCIAL_OPPORTUNITY,
                            MessageCategory.SOCIAL_PLATFORM_UPDATE):
                assert action.duty is None


class TestGoldenCorpus:
    def _entries(self):
        return sorted(ARIA_GOLDEN.glob("*.txt"))

    def test_corpus_size(self):
        assert len(self._entries()) == 40

    @pytest.mark.parametrize("path", sorted(ARIA_GOLDEN.glob("*.txt")), ids=lambda p: p.stem)
    def test_corpus_label_agreement(self, path):
        expected = json.loads(path.with_name(path.stem + ".expected.json").read_text())
        m = parse_message_text(path.read_text(encoding="utf-8"))
        assert classify(m).value == expected["category"]
        action = route(
            m, corpus_ppm(), bep_at_ingest=expected.get("bep_at_ingest", 0.5), now=NOW
        )
        assert action.kind.value == expected["action"]
        if "duty_type" in expected:
            assert action.duty is not None
            assert action.duty.duty_type.value == expected["duty_type"]


class TestParseMessageText:
    def test_headers_and_body(self):
        m = parse_message_text("From: a@b.example\nSubject: Hi\nDate: 2026-03-01T09:00:00Z\n\nBody line.\n")
        assert m.sender_domain == "b.example"
        assert m.subject == "Hi"
        assert m.body_text.strip() == "Body line."
        assert m.received_at == datetime(2026, 3, 1, 9, tzinfo=UTC)

    def test_missing_date_uses_default(self):
        m = parse_message_text("From: a@b.example\nSubject: Hi\n\nBody.\n", default_received_at=NOW)
        assert m.received_at == NOW
