import csv
import hashlib
import json
import os
import subprocess
import sys

import pytest

from skillseq.cli import (
    ConfigFileError,
    ExperimentConfig,
    OutputDir,
    effect_size,
    load_config,
    main,
    parse_seeds,
)
from skillseq.highlevel import QTable
from skillseq.lowlevel import LowLevelPolicy, TrainConfig


def rows(path):
    with open(path) as f:
        return list(csv.reader(f))


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_one_episode_one_seed(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--out", str(out), "--seeds", "0", "--episodes", "1"]) == 0
    m = manifest(out)
    assert m["command"] == "train" and m["config"]["seeds"] == [0]
    assert len(rows(out / "seed_0" / "episodes.csv")) == 2  # header plus one episode
    for rel, digest in m["files"].items():
        assert hashlib.sha256((out / rel).read_bytes()).hexdigest() == digest
    assert {"summary.csv", "seed_0/qtable.txt", "curves/reward.csv"} <= set(m["files"])


def test_rerun_reproduces_every_hash(tmp_path):
    args = ["train", "--seeds", "3", "--episodes", "25"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert manifest(tmp_path / "a")["files"] == manifest(tmp_path / "b")["files"]


def write_json(path, text):
    path.write_text(text)
    return str(path)


def test_malformed_config_reports_line(tmp_path, capsys):
    cfg = write_json(tmp_path / "bad.json", '{\n  "seeds": [0],\n  "loop": {"max_episode_num": 2,}\n}\n')
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) != 0
    assert "bad.json:3:" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unknown_and_invalid_keys_report_line(tmp_path):
    cfg = write_json(tmp_path / "c.json", '{\n  "seeds": [0],\n  "qlearn": {\n    "gama": 0.9\n  }\n}\n')
    with pytest.raises(ConfigFileError, match="c.json:4: qlearn.gama: unknown key"):
        load_config(cfg)
    cfg = write_json(tmp_path / "d.json", '{\n  "seeds": []\n}\n')
    with pytest.raises(ConfigFileError, match="d.json:2:"):
        load_config(cfg)
    with pytest.raises(ConfigFileError, match=":0:"):
        load_config(tmp_path / "missing.json")


def test_config_json_round_trip(tmp_path):
    cfg = ExperimentConfig()
    path = write_json(tmp_path / "cfg.json", cfg.to_json())
    assert load_config(path) == cfg


@pytest.mark.parametrize("name", ["default.json", "original_hyperparameters.json"])
def test_shipped_configs_load(name):
    root = os.path.join(os.path.dirname(__file__), "..", "configs", name)
    load_config(root).validate()


def test_eval_zero_episodes(tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--out", str(run), "--seeds", "0", "--episodes", "2"]) == 0
    out = tmp_path / "ev"
    assert main(["eval", "--artifacts", str(run / "seed_0"), "--out", str(out), "--episodes", "0"]) == 0
    assert json.loads((out / "eval.json").read_text())["episodes"] == 0


def test_eval_untrained_artifacts_never_solve(tmp_path):
    art = tmp_path / "art"
    art.mkdir()
    QTable(4).save(art / "qtable.txt")
    LowLevelPolicy(TrainConfig(), zero_init=True).save(art / "weights")
    out = tmp_path / "ev"
    assert main(["eval", "--artifacts", str(art), "--out", str(out), "--episodes", "100"]) == 0
    report = json.loads((out / "eval.json").read_text())
    assert report["episodes"] == 100 and report["stage_success_rates"][3] == 0.0


def test_eval_missing_or_corrupt_artifacts(tmp_path):
    assert main(["eval", "--artifacts", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) != 0
    art = tmp_path / "art"
    art.mkdir()
    (art / "qtable.txt").write_text("garbage\n")
    assert main(["eval", "--artifacts", str(art), "--out", str(tmp_path / "o")]) != 0


def test_compare_exploration_writes_pairs(tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare-exploration", "--out", str(out), "--seeds", "1", "--episodes", "1"]) == 0
    files = manifest(out)["files"]
    for mode in ("joint", "alternating"):
        assert f"{mode}/seed_1/episodes.csv" in files
        assert f"{mode}/curves/samples_stage4.csv" in files
    header = rows(out / "summary.csv")[0]
    assert "joint_samples_stage4" in header and "alternating_samples_stage4" in header


def test_ablation_records_flag_and_shares_first_episode(tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate-undersampling", "--out", str(out), "--seeds", "2", "--episodes", "3"]) == 0
    m = manifest(out)
    assert m["variants"] == {"undersample_on": {"undersample": True}, "undersample_off": {"undersample": False}}
    on = rows(out / "undersample_on" / "seed_2" / "episodes.csv")
    off = rows(out / "undersample_off" / "seed_2" / "episodes.csv")
    assert on[1] == off[1]
    labels = [r[0] for r in rows(out / "summary.csv")]
    assert "effect_size" in labels and "median" in labels


def test_writes_stay_inside_output_dir(tmp_path):
    out = OutputDir(tmp_path / "root")
    with pytest.raises(ValueError):
        out.write("../escape.txt", "x")
    assert not (tmp_path / "escape.txt").exists()
    assert main(["train", "--out", str(tmp_path / "root"), "--seeds", "0", "--episodes", "1", "--svg"]) == 0
    assert os.listdir(tmp_path) == ["root"]


def test_plot_and_pseudocode_flag(tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--out", str(run), "--seeds", "0", "--episodes", "4", "--pseudocode-literal"]) == 0
    assert manifest(run)["config"]["loop"]["pseudocode_literal"] is True
    pic = tmp_path / "pic"
    assert main(["plot", str(run / "curves" / "reward.csv"), "--out", str(pic), "--name", "r.svg"]) == 0
    assert (pic / "r.svg").read_text().startswith("<svg")


def test_parse_seeds_and_effect_size():
    assert parse_seeds("0-2,7") == (0, 1, 2, 7)
    assert effect_size([3, 5], [1, 1]) == (3.0, pytest.approx(3.0 / 2 ** 0.5))
    assert effect_size([1], [1]) == (0.0, 0.0)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "skillseq", "train", "--out", str(tmp_path / "m"),
                           "--seeds", "0", "--episodes", "1"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m" / "manifest.json").exists()
