import json

import pytest

from srg import cli
from srg import pipeline as pl
from srg.diffusion import TrainingError
from srg.io import read_instance

GEN = ["gen", "--benchmark", "set_cover", "--scale", "micro", "--n-train", "3", "--n-test", "2",
       "--epochs", "2"]


def test_full_run_under_output_root(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path))
    assert cli.main(GEN + ["--seed", "4", "--k", "2", "--node-limit", "30"]) == cli.OK
    run = tmp_path / "set_cover_micro_s4"
    cfg = pl.ExperimentConfig.load(run)
    assert cfg.master_seed == 4 and cfg.sample.k == 2
    assert cfg.search_limits.node_limit == 30
    flags = ["--out", str(run)]
    for cmd in ("label", "train", "solve", "eval"):
        assert cli.main([cmd] + flags) == cli.OK, cmd
    out = capsys.readouterr().out
    assert "gap improvement" in out
    assert (run / "results" / "metrics.csv").exists()


def test_gen_flags_override_presets(tmp_path):
    out = tmp_path / "r"
    assert cli.main(GEN + ["--out", str(out), "--T", "6", "--t-sample", "3", "--gamma-o", "0.5",
                           "--delta-fraction", "0.4", "--lr", "0.01"]) == cli.OK
    cfg = pl.ExperimentConfig.load(out)
    assert cfg.train.T == 6 and cfg.sample.T_sample == 3 and cfg.train.lr == 0.01
    assert cfg.train.guidance.gamma_o == 0.5 and cfg.train.guidance.gamma_c == 2.0
    assert cfg.delta_fraction == 0.4
    assert cli.main(GEN + ["--out", str(tmp_path / "z"), "--t-sample", "0"]) == cli.OK
    assert pl.ExperimentConfig.load(tmp_path / "z").sample.T_sample is None


def test_config_errors_exit_2(tmp_path, capsys):
    assert cli.main(["label", "--out", str(tmp_path / "nothing")]) == cli.CONFIG_ERROR
    assert "srg gen" in capsys.readouterr().err
    assert cli.main(GEN + ["--out", str(tmp_path / "a"), "--delta-fraction", "2"]) == \
        cli.CONFIG_ERROR
    assert cli.main(GEN + ["--out", str(tmp_path / "b"), "--t-sample", "99"]) == cli.CONFIG_ERROR
    assert cli.main(["gen", "--benchmark", "set_cover", "--scale", "huge",
                     "--out", str(tmp_path / "c")]) == cli.CONFIG_ERROR
    with pytest.raises(SystemExit):
        cli.main(["gen", "--benchmark", "nope"])


def test_fallback_exit_3(tmp_path, monkeypatch):
    cli.main(GEN + ["--out", str(tmp_path)])
    monkeypatch.setattr(pl, "solve_test_set", lambda cfg: {"rows": [], "fallbacks": 1})
    assert cli.main(["solve", "--out", str(tmp_path)]) == cli.FALLBACK


def test_numerical_failure_exit_4(tmp_path, monkeypatch):
    cli.main(GEN + ["--out", str(tmp_path)])

    def boom(cfg, progress=None):
        raise TrainingError("loss is nan at batch 0")

    monkeypatch.setattr(pl, "train_model", boom)
    assert cli.main(["train", "--out", str(tmp_path)]) == cli.NUMERICAL


def test_export_mps(tmp_path):
    path = tmp_path / "sc.mps"
    assert cli.main(["export-mps", str(path), "--benchmark", "mis", "--scale", "micro"]) == cli.OK
    text = path.read_text()
    assert text.startswith("NAME") and "ENDATA" in text and "MARKER" in text
    cli.main(GEN + ["--out", str(tmp_path / "r")])
    inst_path = tmp_path / "r" / "instances" / "test" / "0000.json"
    assert cli.main(["export-mps", str(tmp_path / "t.mps"), "--instance", str(inst_path)]) == \
        cli.OK
    inst = read_instance(inst_path)
    text = (tmp_path / "t.mps").read_text()
    assert f"R{inst.m - 1:07d}" in text and f"R{inst.m:07d}" not in text
    assert f"C{inst.n - 1:07d}" in text and f"C{inst.n:07d}" not in text


def test_toy_subcommand(tmp_path, capsys):
    assert cli.main(["toy", "--out", str(tmp_path), "--n-train", "8", "--epochs", "1",
                     "--samples", "4"]) == cli.OK
    report = json.loads(capsys.readouterr().out)
    assert set(report) >= {"reduction", "monotone_last_25", "optimum"}
    assert (tmp_path / "scatter.svg").exists() and (tmp_path / "distance.csv").exists()
