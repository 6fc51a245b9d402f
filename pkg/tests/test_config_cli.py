"""Run-config validation and the command line interface."""

import json
import subprocess
import sys

import numpy as np
import pytest

from mopred.config import load_config, validate_config
from mopred.errors import ConfigError

CLI = [sys.executable, "-m", "mopred.cli"]


def run_cli(*args, cwd=None):
    return subprocess.run([*CLI, *args], capture_output=True, text=True, cwd=cwd)


class TestValidateConfig:
    def test_minimal_desk_accepted_with_defaults(self):
        cfg = validate_config({"preset": "desk"})
        assert cfg.model.encoder.d_model == 32
        assert cfg.model.decoder.num_modes == 8
        assert cfg.train.weight_decay == 0.01
        assert cfg.eval.num_select == 6

    def test_paper_defaults(self):
        cfg = validate_config({})
        assert cfg.model.encoder.d_model == 256
        assert cfg.model.encoder.num_layers == 6
        assert cfg.model.decoder.num_modes == 64
        assert cfg.model.decoder.dynamic_map_count == 128
        assert cfg.model.encoder.k_neighbors == 16
        assert cfg.model.max_map_polylines == 768
        assert cfg.train.learning_rate == 1e-4
        assert cfg.eval.nms_threshold == 2.5

    def test_divisibility_error_names_both_fields(self):
        with pytest.raises(ConfigError) as exc:
            validate_config({"model": {"d_model": 30, "num_heads": 4}})
        text = "; ".join(exc.value.problems)
        assert "d_model" in text and "num_heads" in text

    def test_zero_modes_rejected(self):
        with pytest.raises(ConfigError) as exc:
            validate_config({"model": {"num_modes": 0}})
        assert any("num_modes" in p for p in exc.value.problems)

    def test_all_errors_reported_at_once(self):
        with pytest.raises(ConfigError) as exc:
            validate_config({
                "bogus": 1,
                "model": {"mode": "warp", "num_modes": 0},
                "train": {"learning_rate": -1.0},
                "eval": {"nms_threshold": 0.0},
            })
        text = exc.value.problems
        assert len(text) >= 5
        assert any("bogus" in p for p in text)
        assert any("mode" in p for p in text)
        assert any("learning_rate" in p for p in text)
        assert any("nms_threshold" in p for p in text)

    def test_unknown_keys_rejected_everywhere(self):
        for doc in ({"model": {"hidden": 1}}, {"train": {"momentum": 0.9}},
                    {"data": {"generator": {"lanes": 2}}}, {"extra": {}}):
            with pytest.raises(ConfigError):
                validate_config(doc)

    def test_num_select_cannot_exceed_modes(self):
        with pytest.raises(ConfigError):
            validate_config({"preset": "desk", "eval": {"num_select": 9}})

    def test_config_hash_stable_and_sensitive(self):
        a = validate_config({"preset": "desk"}).config_hash()
        b = validate_config({"preset": "desk"}).config_hash()
        c = validate_config({"preset": "desk", "seed": 1}).config_hash()
        assert a == b and a != c

    def test_round_trips_through_raw(self):
        cfg = validate_config({"preset": "desk", "seed": 3,
                               "data": {"generator": {"num_scenes": 7}}})
        again = validate_config(cfg.raw)
        assert again.config_hash() == cfg.config_hash()


class TestCLI:
    @pytest.fixture(scope="class")
    def workdir(self, tmp_path_factory):
        path = tmp_path_factory.mktemp("cli")
        (path / "c.toml").write_text(
            'seed = 7\npreset = "desk"\n'
            '[train]\nepochs = 1\nbatch_size = 8\n'
            '[data.generator]\nnum_scenes = 8\n')
        return path

    def test_gen_data_deterministic(self, workdir):
        r1 = run_cli("gen-data", "--seed", "7", "--scenes", "6",
                     "--out", "d1.jsonl", cwd=workdir)
        r2 = run_cli("gen-data", "--seed", "7", "--scenes", "6",
                     "--out", "d2.jsonl", cwd=workdir)
        assert r1.returncode == 0 and r2.returncode == 0
        assert (workdir / "d1.jsonl").read_bytes() == (workdir / "d2.jsonl").read_bytes()

    def test_train_eval_accounting(self, workdir):
        r = run_cli("gen-data", "--seed", "9", "--scenes", "8",
                    "--out", "d.jsonl", cwd=workdir)
        assert r.returncode == 0
        r = run_cli("train", "--config", "c.toml", "--data", "d.jsonl",
                    "--out", "ckpt.json", "--quiet", cwd=workdir)
        assert r.returncode == 0, r.stderr
        r = run_cli("eval", "--ckpt", "ckpt.json", "--data", "d.jsonl",
                    "--out", "metrics", cwd=workdir)
        assert r.returncode == 0, r.stderr
        doc = json.loads((workdir / "metrics.json").read_text())
        # 8 scenes x 2 focal agents
        assert doc["sample_count"] + doc["excluded_count"] == 16
        assert doc["config_hash"]

    def test_predict_writes_m_trajectories(self, workdir):
        r = run_cli("predict", "--ckpt", "ckpt.json", "--data", "d.jsonl",
                    "--out", "preds.jsonl", cwd=workdir)
        assert r.returncode == 0, r.stderr
        lines = (workdir / "preds.jsonl").read_text().splitlines()
        assert len(lines) == 16
        rec = json.loads(lines[0])
        assert len(rec["trajectories"]) == 6
        assert len(rec["confidences"]) == 6
        assert rec["confidences"] == sorted(rec["confidences"], reverse=True)

    def test_help_exits_zero(self):
        for cmd in ("gen-data", "train", "eval", "predict", "bench"):
            r = run_cli(cmd, "--help")
            assert r.returncode == 0
            assert "usage" in r.stdout.lower()

    def test_malformed_config_exit_2_with_paths(self, workdir):
        (workdir / "bad.toml").write_text('[model]\nd_model = 33\nnum_heads = 4\n')
        r = run_cli("train", "--config", "bad.toml", "--out", "x", cwd=workdir)
        assert r.returncode == 2
        assert "error: config:" in r.stderr
        assert "d_model" in r.stderr

    def test_missing_file_exit_3(self, workdir):
        r = run_cli("train", "--config", "nope.toml", "--out", "x", cwd=workdir)
        assert r.returncode == 3
        r = run_cli("eval", "--ckpt", "ckpt.json", "--data", "nope.jsonl", cwd=workdir)
        assert r.returncode == 3


def test_checkpoint_embeds_config_and_seed(tmp_path):
    wd = tmp_path
    (wd / "c.toml").write_text(
        'seed = 3\npreset = "desk"\n[train]\nepochs = 1\nbatch_size = 8\n'
        '[data.generator]\nnum_scenes = 6\n')
    r = run_cli("train", "--config", "c.toml", "--out", "ckpt.json", cwd=wd)
    assert r.returncode == 0, r.stderr
    doc = json.loads((wd / "ckpt.json").read_text())
    assert doc["rng_seed"] == 3
    assert doc["config_hash"]
    assert "intention_points" in doc["extra"]
    assert doc["extra"]["run_config"]["seed"] == 3
