"""CLI surface: exit codes, output shapes, determinism."""

import json

import pytest
from click.testing import CliRunner

from jagarin.cli import main
from jagarin.duties import DutyRegistry, DutyType, SNAPSHOT_FILE

from conftest import GOLDEN_DIR, NOW, make_duty

AT = "2026-03-01T12:00:00Z"


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def figure2_store(tmp_path, figure2_registry):
    store = tmp_path / "store"
    figure2_registry.persist(store)
    return str(store)


class TestEvaluate:
    def test_figure2_table(self, runner, figure2_store):
        result = runner.invoke(main, ["evaluate", "--store", figure2_store, "--at", AT])
        assert result.exit_code == 0, result.output
        lines = result.output.splitlines()
        assert any("honda" in l and "SLEEP" in l for l in lines)
        assert any("cvs" in l and "NUDGE" in l for l in lines)
        assert any("statefarm" in l and "ACT_NOW" in l and "URGENCY_FLOOR" in l for l in lines)

    def test_empty_store(self, runner, tmp_path):
        result = runner.invoke(main, ["evaluate", "--store", str(tmp_path / "empty"), "--at", AT])
        assert result.exit_code == 0
        assert "no active duties" in result.output

    def test_corrupt_store_exit_2(self, runner, tmp_path):
        store = tmp_path / "store"
        reg = DutyRegistry()
        reg.register_duty(make_duty("a", DutyType.CUSTOM, 10), now=NOW)
        reg.persist(store)
        snap = store / SNAPSHOT_FILE
        snap.write_bytes(snap.read_bytes()[:-10])
        result = runner.invoke(main, ["evaluate", "--store", str(store), "--at", AT])
        assert result.exit_code == 2
        assert "CorruptStore" in result.output

    def test_structured_output_round_trips(self, runner, figure2_store):
        result = runner.invoke(
            main, ["evaluate", "--store", figure2_store, "--at", AT, "--format", "structured"]
        )
        assert result.exit_code == 0
        items = json.loads(result.output)
        assert {i["duty_id"] for i in items} == {"honda", "cvs", "statefarm"}
        assert all(0 <= i["score"] <= 1 for i in items)

    def test_store_from_env(self, runner, figure2_store, monkeypatch):
        monkeypatch.setenv("JAGARIN_STORE", figure2_store)
        result = runner.invoke(main, ["evaluate", "--at", AT])
        assert result.exit_code == 0

    def test_deterministic_given_at(self, runner, figure2_store):
        args = ["evaluate", "--store", figure2_store, "--at", AT]
        assert runner.invoke(main, args).output == runner.invoke(main, args).output


class TestSimulate:
    def _scenario(self, tmp_path) -> str:
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps({
            "name": "cli-small", "seed": 7, "n_users": 8, "horizon_days": 45,
            "tick_minutes": 60,
            "duty_mix": {"INSURANCE_RENEWAL": 0.02, "PRESCRIPTION_REFILL": 0.02},
            "policies": ["dawn", "fixed_interval:7,3,1"],
        }))
        return str(path)

    def test_writes_report_and_metrics(self, runner, tmp_path):
        out = tmp_path / "out"
        result = runner.invoke(main, [
            "simulate", "--scenario", self._scenario(tmp_path), "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert (out / "report.txt").exists()
        metrics = json.loads((out / "metrics.json").read_text())
        assert set(metrics["policies"]) == {"dawn", "fixed_interval:7,3,1"}

    def test_same_seed_identical_outputs(self, runner, tmp_path):
        scenario = self._scenario(tmp_path)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        runner.invoke(main, ["simulate", "--scenario", scenario, "--out", str(out1)])
        runner.invoke(main, ["simulate", "--scenario", scenario, "--out", str(out2)])
        assert (out1 / "metrics.json").read_bytes() == (out2 / "metrics.json").read_bytes()
        assert (out1 / "report.txt").read_bytes() == (out2 / "report.txt").read_bytes()

    def test_unknown_policy_exit_2(self, runner, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({
            "seed": 1, "n_users": 1, "horizon_days": 5, "tick_minutes": 60,
            "duty_mix": {"CUSTOM": 0.01}, "policies": ["wishful"],
        }))
        result = runner.invoke(main, ["simulate", "--scenario", str(path), "--out", str(tmp_path / "o")])
        assert result.exit_code == 2

    def test_default_scenario_loads(self, runner):
        from jagarin.cli import default_scenario_path
        from jagarin.sim import load_scenario

        cfg = load_scenario(default_scenario_path())
        assert cfg.seed == 42
        assert cfg.n_users == 1000
        assert cfg.horizon_days == 180
        assert cfg.policies[0] == "dawn"


class TestAceCommands:
    def test_validate_golden_ok(self, runner):
        path = GOLDEN_DIR / "ace" / "financial_valid.json"
        result = runner.invoke(main, ["ace", "validate", str(path)])
        assert result.exit_code == 0
        assert "valid" in result.output

    def test_validate_missing_temp(self, runner, tmp_path):
        src = json.loads((GOLDEN_DIR / "ace" / "financial_valid.json").read_text())
        del src["ace_temp"]
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(src))
        result = runner.invoke(main, ["ace", "validate", str(bad)])
        assert result.exit_code == 1
        assert "ACE-TEMP" in result.output

    def test_to_duty_prints_record(self, runner):
        path = GOLDEN_DIR / "ace" / "financial_valid.json"
        result = runner.invoke(main, ["ace", "to-duty", str(path), "--at", AT])
        assert result.exit_code == 0
        duty = json.loads(result.output)
        assert duty["duty_type"] == "INSURANCE_RENEWAL"
        assert duty["id"] == "ace:fin-001"

    def test_to_duty_social_not_a_duty(self, runner):
        path = GOLDEN_DIR / "ace" / "social_platform_valid.json"
        result = runner.invoke(main, ["ace", "to-duty", str(path), "--at", AT])
        assert result.exit_code == 0
        assert "NotADuty" in result.output

    def test_missing_file_exit_2(self, runner):
        result = runner.invoke(main, ["ace", "validate", "/nope/missing.json"])
        assert result.exit_code == 2


class TestServe:
    def test_serve_real_socket(self, tmp_path):
        import socket
        import subprocess
        import time
        import urllib.request

        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        store = tmp_path / "store"  # missing dir: serve must create it
        proc = subprocess.Popen(
            ["jagarin", "serve", "--port", str(port), "--store", str(store)],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
        )
        try:
            card = None
            for _ in range(50):
                try:
                    with urllib.request.urlopen(
                        f"http://127.0.0.1:{port}/ace/.well-known/agent.json", timeout=1
                    ) as resp:
                        card = json.loads(resp.read())
                        break
                except OSError:
                    time.sleep(0.2)
            assert card is not None, "gateway never came up"
            assert len(card["extensions"]) == 11
            assert store.is_dir()
        finally:
            proc.terminate()
            proc.wait(timeout=10)


class TestAriaCommands:
    def test_classify_promo(self, runner):
        path = GOLDEN_DIR / "aria" / "co_03_electronics_notify.txt"
        result = runner.invoke(main, ["aria", "classify", str(path)])
        assert result.exit_code == 0
        assert result.output.strip() == "COMMERCIAL_OPPORTUNITY"

    def test_route_renewal_registers(self, runner, tmp_path):
        path = GOLDEN_DIR / "aria" / "to_01_insurance.txt"
        store = tmp_path / "store"
        result = runner.invoke(main, [
            "aria", "route", str(path), "--store", str(store), "--at", AT,
        ])
        assert result.exit_code == 0, result.output
        assert "REGISTER_DUTY duty_id=" in result.output
        assert len(DutyRegistry.open(store)) == 1

    def test_route_archive_prints_silent_and_emits_nothing(self, runner, tmp_path):
        path = GOLDEN_DIR / "aria" / "co_06_unknown_archive.txt"
        store = tmp_path / "store"
        result = runner.invoke(main, [
            "aria", "route", str(path), "--store", str(store), "--at", AT,
        ])
        assert result.exit_code == 0
        assert "archived (silent)" in result.output
        assert not (store / "push_events.log").exists()
        assert len(DutyRegistry.open(store)) == 0

    def test_route_with_ppm_notifies(self, runner, tmp_path):
        path = GOLDEN_DIR / "aria" / "co_01_coffee_notify.txt"
        result = runner.invoke(main, [
            "aria", "route", str(path), "--store", str(tmp_path / "s"), "--at", AT,
            "--ppm", str(GOLDEN_DIR / "aria" / "ppm.json"),
        ])
        assert result.exit_code == 0
        assert "STORE_AND_NOTIFY_LOW_PRIORITY" in result.output
