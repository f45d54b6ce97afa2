import csv
import json

import pytest

from tracelearn.cli import build_parser, main

TINY = """\
[grid]
width = 8
height = 8
count = 1
[dataset]
total = 200
[model]
hidden = 16
layers = 1
heads = 2
max_seq_len = 64
[train]
epochs = 1
[eval]
test_size = 4
[study]
fractions = 0,1.0
k_values = 0.5
drop_fractions = 0.01
token_expert_count = 10
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return path


def run(*argv):
    return main([str(a) for a in argv])


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--help"])
    text = capsys.readouterr().out
    for flag in ("--config", "--out", "--seed", "--scale", "--jobs"):
        assert flag in text


def test_unknown_flag_is_fatal(tmp_path):
    with pytest.raises(SystemExit) as err:
        run("gen-grids", "--out", tmp_path, "--bogus")
    assert err.value.code == 2


def test_gen_grids(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("PIPELINE_SEED", raising=False)
    assert run("gen-grids", "--out", tmp_path / "a", "--count", 3, "--seed", 5) == 0
    assert run("--seed", 5, "gen-grids", "--out", tmp_path / "b", "--count", 3) == 0
    for i in range(3):
        assert (tmp_path / "a" / f"grid_{i}.json").read_bytes() == (tmp_path / "b" / f"grid_{i}.json").read_bytes()
    assert "high_cost" in capsys.readouterr().out
    assert (tmp_path / "a" / "config.ini").exists()


def test_env_seed_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("PIPELINE_SEED", "11")
    run("gen-grids", "--out", tmp_path / "env", "--count", 1, "--seed", 3)
    monkeypatch.delenv("PIPELINE_SEED")
    run("gen-grids", "--out", tmp_path / "flag", "--count", 1, "--seed", 11)
    assert (tmp_path / "env" / "grid_0.json").read_bytes() == (tmp_path / "flag" / "grid_0.json").read_bytes()


def test_small_grid_rejected(tmp_path, capsys):
    assert run("gen-grids", "--out", tmp_path, "--width", 5) == 2
    assert "at least" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nwidth_of_things = 3\n")
    assert run("gen-grids", "--config", bad, "--out", tmp_path) == 2
    assert "model.width_of_things" in capsys.readouterr().err


@pytest.fixture
def pipeline(tmp_path, tiny):
    out = tmp_path / "run"
    assert run("gen-grids", "--config", tiny, "--out", out, "--count", 1) == 0
    grid = out / "grid_0.json"
    assert run("build-dataset", "--config", tiny, "--out", out, "--grid", grid,
               "--fraction-expert", 0.5, "--tagging", "with_source", "--exclude-test", 4) == 0
    return out, grid


def test_build_train_eval(pipeline, tiny, capsys):
    out, grid = pipeline
    manifest = json.loads((out / "dataset.manifest.json").read_text())
    assert manifest["counts"]["expert"] == 100
    assert run("train", "--config", tiny, "--out", out, "--dataset", out / "dataset.jsonl") == 0
    first = (out / "model.ckpt").read_bytes()
    assert run("train", "--config", tiny, "--out", out, "--dataset", out / "dataset.jsonl", "--name", "again") == 0
    assert (out / "again.ckpt").read_bytes() == first
    assert (out / "model.loss.csv").read_text().startswith("epoch,mean_loss")
    assert json.loads((out / "model.ckpt.json").read_text())["provenance"]["dataset_digest"] == manifest["digest"]
    capsys.readouterr()
    assert run("eval", "--config", tiny, "--out", out, "--checkpoint", out / "model.ckpt", "--grid", grid,
               "--trial", "hazardous", "--exclude", out / "dataset.manifest.json") == 0
    assert "held-out check: 0 test pairs" in capsys.readouterr().out
    assert run("eval", "--config", tiny, "--out", out, "--checkpoint", out / "model.ckpt", "--grid", grid,
               "--trial", "recovery", "--elicitation", "no_cue", "--name", "rec") == 0
    rows = list(csv.DictReader(open(out / "rec.csv")))
    assert rows[0]["trial_kind"] == "recovery"
    assert float(rows[0]["exact_match_rate"]) <= float(rows[0]["correct_path_rate"])
    assert (out / "rec.details.jsonl").exists()


def test_missing_dataset(tmp_path, tiny, capsys):
    missing = tmp_path / "nope.jsonl"
    assert run("train", "--config", tiny, "--out", tmp_path, "--dataset", missing) == 2
    assert str(missing) in capsys.readouterr().err


def test_token_budget_flag(pipeline, tiny):
    out, grid = pipeline
    assert run("build-dataset", "--config", tiny, "--out", out, "--grid", grid, "--fraction-expert", 0.1,
               "--total", 20, "--token-budget", 3000, "--name", "budget") == 0
    m = json.loads((out / "budget.manifest.json").read_text())
    assert 0 <= m["total_tokens"] - 3000 < m["max_length"]


def test_bad_fraction(pipeline, tiny, capsys):
    out, grid = pipeline
    assert run("build-dataset", "--config", tiny, "--out", out, "--grid", grid, "--fraction-expert", 1.5) == 2


def test_reproduce_study1(tmp_path, tiny):
    out = tmp_path / "rep"
    code = run("reproduce", "study1", "--config", tiny, "--out", out)
    assert code == 0
    rows = list(csv.DictReader(open(out / "study1" / "metrics.csv")))
    assert {(r["dataset_kind"], r["trial_kind"]) for r in rows} == {
        (k, t) for k in ("expert", "interaction") for t in ("safe", "hazardous", "recovery")
    }
    assert (out / "study1" / "config.ini").exists()
    # second run hits the model cache and produces identical metrics
    first = (out / "study1" / "metrics.csv").read_bytes()
    assert run("reproduce", "study1", "--config", tiny, "--out", out) == 0
    assert (out / "study1" / "metrics.csv").read_bytes() == first


def test_reproduce_assert_fails_nonzero(tmp_path, tiny):
    # an untrained-scale run cannot meet the study thresholds
    assert run("reproduce", "token_control", "--config", tiny, "--out", tmp_path, "--assert") == 1
    assert (tmp_path / "token_control" / "assertions.json").exists()
