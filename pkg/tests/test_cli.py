import json

import numpy as np
import pytest

from mpglab import load_game, validate_game
from mpglab.cli import main


def run_cli(*argv):
    return main(list(argv))


class TestMakeInstance:
    def test_xor_file_validates(self, tmp_path):
        out = tmp_path / "xor.json"
        assert run_cli("make-instance", "xor", "--gamma", "0.9",
                       "--output", str(out)) == 0
        game = load_game(out)
        assert validate_game(game) == []
        assert game.num_states == 2

    def test_congestion_default_is_dense(self, tmp_path):
        out = tmp_path / "congestion.json"
        assert run_cli("make-instance", "congestion", "--agents", "8",
                       "--facilities", "4", "--gamma", "0.99",
                       "--output", str(out)) == 0
        game = load_game(out)
        assert game.num_states == 2
        assert game.num_joint_actions == 65536

    def test_oversized_congestion_writes_flagged_file(self, tmp_path):
        out = tmp_path / "big.json"
        assert run_cli("make-instance", "congestion", "--agents", "16",
                       "--facilities", "5", "--gamma", "0.99",
                       "--output", str(out)) == 0
        data = json.loads(out.read_text())
        assert data["exact_path"] is False
        game = load_game(out)
        assert game.num_agents == 16

    def test_spec_json_fragment(self, tmp_path):
        out = tmp_path / "c.json"
        spec = {"num_agents": 4, "num_facilities": 4, "leak_p": 0.01,
                "leak_q": 0.1}
        assert run_cli("make-instance", "congestion", "--spec-json",
                       json.dumps(spec), "--gamma", "0.9",
                       "--output", str(out)) == 0
        game = load_game(out)
        assert game.meta["spec"]["leak_p"] == 0.01

    def test_unknown_instance_exits_2(self, tmp_path, capsys):
        assert run_cli("make-instance", "nosuch",
                       "--output", str(tmp_path / "x.json")) == 2
        assert "unknown instance" in capsys.readouterr().err

    def test_invalid_parameters_exit_2(self, tmp_path, capsys):
        assert run_cli("make-instance", "chain", "--gamma", "0.0",
                       "--output", str(tmp_path / "x.json")) == 2
        assert capsys.readouterr().err


class TestVerify:
    def test_xor_includes_no_deterministic_nash_finding(self, tmp_path, capsys):
        game_file = tmp_path / "xor.json"
        run_cli("make-instance", "xor", "--gamma", "0.9",
                "--output", str(game_file))
        capsys.readouterr()
        assert run_cli("verify", "--game", str(game_file),
                       "--nash-search") == 0
        data = json.loads(capsys.readouterr().out)
        assert data["certificate"]["verdict"] == "refuted"
        assert data["deterministic_nash"]["count"] == 0
        assert "no deterministic Nash" in data["deterministic_nash"]["finding"]

    def test_blackhole_refuted_with_ordinal_pass(self, tmp_path):
        game_file = tmp_path / "bh.json"
        out_file = tmp_path / "cert.json"
        run_cli("make-instance", "blackhole", "--gamma", "0.9",
                "--output", str(game_file))
        assert run_cli("verify", "--game", str(game_file), "--samples", "60",
                       "--out", str(out_file)) == 0
        data = json.loads(out_file.read_text())
        cert = data["certificate"]
        assert cert["verdict"] == "ordinal-evidence"
        assert abs(cert["witness"]["residual"]) > 1e-6
        assert cert["ordinal"]["passed"] is True

    def test_chain_exact_via_analytic(self, tmp_path, capsys):
        game_file = tmp_path / "chain.json"
        run_cli("make-instance", "chain", "--gamma", "0.9", "--p0", "0.3",
                "--output", str(game_file))
        capsys.readouterr()
        assert run_cli("verify", "--game", str(game_file)) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["certificate"]["verdict"] == "exact-mpg"
        assert data["certificate"]["construction"] == "analytic"

    def test_missing_file_exits_2(self, capsys):
        assert run_cli("verify", "--game", "/nonexistent/game.json") == 2


class TestNashSearch:
    def test_xor_empty(self, tmp_path, capsys):
        game_file = tmp_path / "xor.json"
        run_cli("make-instance", "xor", "--gamma", "0.9",
                "--output", str(game_file))
        capsys.readouterr()
        assert run_cli("nash-search", "--game", str(game_file)) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["count"] == 0

    def test_budget_exceeded_exits_3(self, tmp_path, capsys):
        game_file = tmp_path / "c.json"
        run_cli("make-instance", "congestion", "--agents", "6",
                "--facilities", "3", "--gamma", "0.9",
                "--output", str(game_file))
        assert run_cli("nash-search", "--game", str(game_file),
                       "--budget", "10") == 3


class TestEvaluate:
    def test_uniform_policy_report(self, tmp_path, capsys):
        game_file = tmp_path / "bh.json"
        run_cli("make-instance", "blackhole", "--gamma", "0.9",
                "--output", str(game_file))
        capsys.readouterr()
        assert run_cli("evaluate", "--game", str(game_file), "--full") == 0
        data = json.loads(capsys.readouterr().out)
        assert len(data["values"]) == 2
        assert len(data["occupancy"]) == 2
        assert "q_values" in data


class TestRun:
    def _make_game(self, tmp_path):
        game_file = tmp_path / "c.json"
        run_cli("make-instance", "congestion", "--agents", "4",
                "--facilities", "4", "--gamma", "0.9",
                "--output", str(game_file))
        return game_file

    def test_pga_outputs(self, tmp_path):
        game_file = self._make_game(tmp_path)
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({
            "algorithm": "pga", "step_size": 0.01, "max_iters": 60,
            "epsilon": 1e-3, "log_every": 20}))
        prefix = str(tmp_path / "out")
        assert run_cli("run", "--game", str(game_file), "--config",
                       str(config), "--out-prefix", prefix) == 0
        lines = open(prefix + ".csv").read().splitlines()
        assert lines[0].startswith("iter,nash_gap,mapping_norm,potential,V_0")
        assert lines[0].endswith("l1_accuracy")
        summary = json.loads(open(prefix + ".summary.json").read())
        assert "equilibrium_occupancy" in summary
        assert summary["manifest_file"].endswith(".manifest.json")
        manifest = json.loads(open(prefix + ".manifest.json").read())
        assert manifest["tool_version"]
        assert set(manifest["input_hashes"]) == {"game", "config"}

    def test_psga_rerun_is_byte_identical(self, tmp_path):
        game_file = self._make_game(tmp_path)
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({
            "algorithm": "psga", "step_size": 0.02, "max_iters": 25,
            "batch": 4, "seed": 7, "horizon_mode": "episodic",
            "episode_length": 5, "log_every": 5}))
        first = str(tmp_path / "a")
        second = str(tmp_path / "b")
        assert run_cli("run", "--game", str(game_file), "--config",
                       str(config), "--out-prefix", first) == 0
        assert run_cli("run", "--game", str(game_file), "--config",
                       str(config), "--out-prefix", second) == 0
        assert open(first + ".csv", "rb").read() == open(second + ".csv", "rb").read()
        assert open(first + ".policy.json", "rb").read() \
            == open(second + ".policy.json", "rb").read()

    def test_per_agent_step_sizes_accepted(self, tmp_path):
        game_file = self._make_game(tmp_path)
        rng = np.random.default_rng(0)
        rates = rng.uniform(5e-5, 5e-4, size=4).tolist()
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({
            "algorithm": "pga", "step_size": rates, "max_iters": 40,
            "log_every": 20}))
        prefix = str(tmp_path / "r")
        assert run_cli("run", "--game", str(game_file), "--config",
                       str(config), "--out-prefix", prefix) == 0
        summary = json.loads(open(prefix + ".summary.json").read())
        assert summary["config"]["step_size"] == pytest.approx(rates)
