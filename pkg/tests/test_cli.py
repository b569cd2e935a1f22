import json
import subprocess
import sys

import numpy as np
import pytest

from erpbpnn.cli import main
from erpbpnn.harness import RunConfig, Trainer
from erpbpnn.ppo import PpoConfig

TINY_TOML = """
method = "erp-bpnn"
seeds = [1]
task_links = [2, 3, 4]
episode_length = 10
n_envs = 2
episodes_per_env = 1
k_init = 3
window = 2
hidden_layers = 1
hidden_size = 2
budget_episodes = 42
deterministic_probes = false

[ppo]
epochs = 2
minibatch_size = 16
"""


@pytest.fixture
def tiny_toml(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text(TINY_TOML)
    return path


def fresh_checkpoint(tmp_path, seed=0):
    """Checkpoint of randomly initialized (untrained) networks."""
    cfg = RunConfig(
        task_links=[2, 3, 4], episode_length=10, n_envs=2, episodes_per_env=1,
        k_init=3, window=2, hidden_layers=1, hidden_size=2, budget_episodes=42,
        deterministic_probes=False, ppo=PpoConfig(epochs=1, minibatch_size=16),
    )
    doc = Trainer(cfg, seed=seed, out_dir=None)._checkpoint_doc()
    path = tmp_path / "fresh.json"
    path.write_text(json.dumps(doc))
    return path


class TestTrain:
    def test_produces_run_artifacts(self, tiny_toml, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["train", "--config", str(tiny_toml), "--out", str(out)]) == 0
        run_dir = out / "seed_1"
        for fname in ("metrics.csv", "scheduler.csv", "train_log.jsonl",
                      "run_manifest.json"):
            assert (run_dir / fname).exists(), fname
        assert (run_dir / "checkpoints" / "final.json").exists()
        assert "seed 1" in capsys.readouterr().out

    def test_seed_override_and_determinism(self, tiny_toml, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            assert main(["train", "--config", str(tiny_toml), "--seed", "5",
                         "--out", str(out)]) == 0
        a = (outs[0] / "seed_5" / "metrics.csv").read_bytes()
        b = (outs[1] / "seed_5" / "metrics.csv").read_bytes()
        assert a == b

    def test_method_override(self, tiny_toml, tmp_path):
        out = tmp_path / "out"
        assert main(["train", "--config", str(tiny_toml), "--method", "random-mlp",
                     "--out", str(out)]) == 0
        manifest = json.loads((out / "seed_1" / "run_manifest.json").read_text())
        assert manifest["config"]["method"] == "random-mlp"

    def test_malformed_config_names_field(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("budget_episodes = 5\n")
        assert main(["train", "--config", str(bad)]) == 2
        assert "budget_episodes" in capsys.readouterr().err

    def test_unknown_field_names_field(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("learning_rate = 0.1\n")
        assert main(["train", "--config", str(bad)]) == 2
        assert "learning_rate" in capsys.readouterr().err

    def test_out_root_env_var(self, tiny_toml, tmp_path, monkeypatch):
        monkeypatch.setenv("ERPBPNN_OUT_ROOT", str(tmp_path / "env_out"))
        assert main(["train", "--config", str(tiny_toml)]) == 0
        assert (tmp_path / "env_out" / "seed_1" / "metrics.csv").exists()


class TestEval:
    def test_fresh_random_checkpoint_far_from_goal(self, tmp_path, capsys):
        ckpt = fresh_checkpoint(tmp_path)
        assert main(["eval", "--checkpoint", str(ckpt), "--episodes", "8",
                     "--seed", "3"]) == 0
        result = json.loads(capsys.readouterr().out)
        # An untrained policy's mean distance is far above trained levels
        # (a trained arm gets within a few centimetres of the target).
        assert result["overall"]["mean_distance"] > 0.05
        assert set(result["per_task"]) == {"0", "1", "2"}

    def test_writes_json_file(self, tmp_path, capsys):
        ckpt = fresh_checkpoint(tmp_path)
        out = tmp_path / "metrics.json"
        assert main(["eval", "--checkpoint", str(ckpt), "--out", str(out)]) == 0
        assert json.loads(out.read_text())["overall"]["mean_distance"] > 0.0

    def test_missing_checkpoint(self, tmp_path, capsys):
        assert main(["eval", "--checkpoint", str(tmp_path / "nope.json")]) == 2
        assert "error" in capsys.readouterr().err


class TestReplay:
    def test_trace_schema_and_reward_consistency(self, tmp_path, capsys):
        ckpt = fresh_checkpoint(tmp_path)
        out = tmp_path / "trace.jsonl"
        assert main(["replay", "--checkpoint", str(ckpt), "--out", str(out),
                     "--episodes", "2", "--seed", "4"]) == 0
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(records) == 3 * 2 * 10  # tasks * episodes * steps
        links = {0: 2, 1: 3, 2: 4}
        for rec in records:
            assert set(rec) == {"task", "episode", "step", "obs", "action",
                                "reward", "fingertip", "target"}
            assert len(rec["obs"]) == 16
            assert len(rec["action"]) == links[rec["task"]]
            # Stored reward must equal the reward formula evaluated on the
            # recorded post-step fingertip, target, and clipped action.
            a = np.clip(np.asarray(rec["action"]), -1.0, 1.0)
            dist = np.linalg.norm(np.asarray(rec["fingertip"]) - np.asarray(rec["target"]))
            assert rec["reward"] == pytest.approx(-dist - float(np.sum(a * a)), abs=1e-12)


class TestReport:
    def test_milestone_summary_and_frequencies(self, tiny_toml, tmp_path, capsys):
        out = tmp_path / "out"
        main(["train", "--config", str(tiny_toml), "--out", str(out)])
        assert main(["report", "--run-dir", str(out), "--window", "2"]) == 0
        summary = json.loads((out / "report" / "summary.json").read_text())
        assert summary["milestones"], "expected at least one milestone row"
        entry = summary["milestones"][-1]
        assert entry["episodes"] == 42  # capped at the short run's budget
        assert "mean" in entry["best_return"] and "std" in entry["best_return"]
        freq = (out / "report" / "selection_frequency_seed_1.csv").read_text().splitlines()
        assert freq[0] == "iteration,freq_task0,freq_task1,freq_task2"
        row = freq[1].split(",")
        assert sum(float(v) for v in row[1:]) == pytest.approx(1.0)

    def test_explicit_milestones(self, tiny_toml, tmp_path, capsys):
        out = tmp_path / "out"
        main(["train", "--config", str(tiny_toml), "--out", str(out)])
        assert main(["report", "--run-dir", str(out), "--milestones", "24,42",
                     "--window", "2"]) == 0
        summary = json.loads((out / "report" / "summary.json").read_text())
        assert [e["episodes"] for e in summary["milestones"]] == [24, 42]


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "erpbpnn.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "train" in proc.stdout and "report" in proc.stdout
