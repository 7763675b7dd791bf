import json
import os

import click
import numpy as np
import pytest
from click.testing import CliRunner

from traco import cli
from traco.trainer import load_checkpoint

FAST = """
[hierarchy]
topics = [3, 6]
embed_dim = 16
hidden_dim = 32
n_top = 5

[train]
epochs = 3
batch_size = 100
"""


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    """Empty current directory plus a fast config file outside it."""
    cwd = tmp_path / "cwd"
    cwd.mkdir()
    monkeypatch.chdir(cwd)
    cfg = tmp_path / "fast.toml"
    cfg.write_text(FAST, encoding="utf-8")
    return tmp_path, cfg


def invoke(runner, *args):
    return runner.invoke(cli.main, [str(a) for a in args], catch_exceptions=False)


def pipeline(runner, out, cfg, *extra):
    for cmd in (["preprocess", "--toy"], ["train"], ["eval"]):
        res = invoke(runner, *cmd, "--output-dir", out, "--config", cfg, *extra)
        assert res.exit_code == 0, res.output
    return out


# -- preprocess -----------------------------------------------------------------


def test_preprocess_toy(runner, workdir):
    tmp, cfg = workdir
    res = invoke(runner, "preprocess", "--toy", "--output-dir", tmp / "out")
    assert res.exit_code == 0
    assert "N=500" in res.output
    assert {p.name for p in (tmp / "out" / "corpus").iterdir()} >= {"bow.txt", "vocab.txt"}


def test_preprocess_is_byte_identical(runner, workdir):
    tmp, _ = workdir
    for name in ("a", "b"):
        assert invoke(runner, "preprocess", "--toy", "--output-dir", tmp / name).exit_code == 0
    for f in ("bow.txt", "vocab.txt"):
        assert (tmp / "a" / "corpus" / f).read_bytes() == (tmp / "b" / "corpus" / f).read_bytes()


def test_preprocess_unreadable_input(runner, workdir):
    tmp, _ = workdir
    res = invoke(runner, "preprocess", tmp / "missing.txt", "--output-dir", tmp / "out")
    assert res.exit_code == 2


def test_preprocess_all_stopwords(runner, workdir):
    tmp, _ = workdir
    raw = tmp / "stop.txt"
    raw.write_text("the and with\nthe the and\n", encoding="utf-8")
    res = invoke(runner, "preprocess", raw, "--output-dir", tmp / "out", "--min-doc-freq", 1)
    assert res.exit_code == 3
    assert "error" in res.output


def test_preprocess_custom_options(runner, workdir):
    tmp, _ = workdir
    raw = tmp / "docs.txt"
    raw.write_text("apple banana\napple cherry\napple banana\n", encoding="utf-8")
    res = invoke(runner, "preprocess", raw, "--output-dir", tmp / "out", "--min-doc-freq", 2, "--max-doc-frac", 1.0)
    assert res.exit_code == 0
    assert (tmp / "out" / "corpus" / "vocab.txt").read_text().split() == ["apple", "banana"]


# -- train -----------------------------------------------------------------------


def test_train_writes_outputs(runner, workdir):
    tmp, cfg = workdir
    out = tmp / "out"
    assert invoke(runner, "preprocess", "--toy", "--output-dir", out).exit_code == 0
    res = invoke(runner, "train", "--output-dir", out, "--config", cfg)
    assert res.exit_code == 0, res.output
    assert (out / cli.CHECKPOINT_NAME).exists()
    lines = (out / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,total,tm,tpd" and len(lines) == 4
    echo = (out / "config.toml").read_text()
    assert "lambda_tpd = 20.0" in echo and "epsilon" in echo


def test_train_negative_lambda(runner, workdir):
    tmp, _ = workdir
    bad = tmp / "bad.toml"
    bad.write_text("[train]\nlambda_tpd = -1.0\n", encoding="utf-8")
    res = invoke(runner, "train", "--output-dir", tmp / "out", "--config", bad)
    assert res.exit_code == 2


@pytest.mark.parametrize("body", ["[train]\nbogus = 1\n", "[nonsense]\n", "not toml ===\n"])
def test_train_bad_config(runner, workdir, body):
    tmp, _ = workdir
    bad = tmp / "bad.toml"
    bad.write_text(body, encoding="utf-8")
    assert invoke(runner, "train", "--output-dir", tmp / "out", "--config", bad).exit_code == 2


def test_train_without_corpus(runner, workdir):
    tmp, cfg = workdir
    assert invoke(runner, "train", "--output-dir", tmp / "out", "--config", cfg).exit_code == 2


def test_train_numeric_failure(runner, workdir):
    tmp, _ = workdir
    out = tmp / "out"
    assert invoke(runner, "preprocess", "--toy", "--output-dir", out).exit_code == 0
    boom = tmp / "boom.toml"
    # an enormous step size drives the parameters to infinity
    boom.write_text(FAST + "learning_rate = 1e300\nclip_norm = 0.0\n", encoding="utf-8")
    res = invoke(runner, "train", "--output-dir", out, "--config", boom)
    assert res.exit_code == 4
    assert "epoch" in res.output


def test_ablation_flag_is_recorded(runner, workdir):
    tmp, cfg = workdir
    out = pipeline(runner, tmp / "out", cfg, "--ablation", "disable_tpd")
    cp = load_checkpoint(out / cli.CHECKPOINT_NAME)
    assert cp.config.disable_tpd and not cp.config.disable_cdd
    assert json.loads((out / "metrics.json").read_text())["config"]["train"]["disable_tpd"] is True
    res = invoke(runner, "inspect", "--output-dir", out)
    assert "ablations: disable_tpd" in res.output


def test_seed_flag_overrides_config(runner, workdir):
    tmp, cfg = workdir
    out = tmp / "out"
    assert invoke(runner, "preprocess", "--toy", "--output-dir", out).exit_code == 0
    assert invoke(runner, "train", "--output-dir", out, "--config", cfg, "--seed", 9).exit_code == 0
    assert load_checkpoint(out / cli.CHECKPOINT_NAME).config.seed == 9


# -- eval ------------------------------------------------------------------------


def test_eval_report(runner, workdir):
    tmp, cfg = workdir
    out = pipeline(runner, tmp / "out", cfg)
    report = json.loads((out / "metrics.json").read_text())
    assert set(report["aggregate"]) == {"TC_npmi", "TD", "PCC", "PCD", "SD", "PnCD", "purity", "NMI"}
    first = (out / "metrics.json").read_bytes()
    assert invoke(runner, "eval", "--output-dir", out).exit_code == 0
    assert (out / "metrics.json").read_bytes() == first


def test_eval_vocab_mismatch(runner, workdir):
    tmp, cfg = workdir
    out = pipeline(runner, tmp / "out", cfg)
    raw = tmp / "other.txt"
    raw.write_text("apple banana cherry\napple banana\n", encoding="utf-8")
    other = tmp / "other"
    assert invoke(runner, "preprocess", raw, "--output-dir", other, "--min-doc-freq", 1).exit_code == 0
    res = invoke(runner, "eval", "--output-dir", out, "--corpus", other / "corpus")
    assert res.exit_code == 5


def test_eval_missing_checkpoint(runner, workdir):
    tmp, _ = workdir
    assert invoke(runner, "eval", "--output-dir", tmp / "out").exit_code == 2


def test_full_pipeline_is_deterministic(runner, workdir):
    tmp, cfg = workdir
    a = pipeline(runner, tmp / "a", cfg)
    b = pipeline(runner, tmp / "b", cfg)
    for name in ("metrics.json", "loss.csv", cli.CHECKPOINT_NAME, "config.toml"):
        if name == "config.toml":
            # the echo records the output directory, which differs by design
            continue
        assert (a / name).read_bytes() == (b / name).read_bytes()


# -- export and inspect ---------------------------------------------------------------


def test_export_hierarchy_json(runner, workdir):
    tmp, cfg = workdir
    out = pipeline(runner, tmp / "out", cfg)
    assert invoke(runner, "export", "--output-dir", out, "--n-top", 15).exit_code == 0
    tree = json.loads((out / "hierarchy.json").read_text())
    levels = tree["levels"]
    assert [len(l["topics"]) for l in levels] == [3, 6]
    for level in levels:
        for node in level["topics"]:
            assert len(node["top_words"]) == 15
            scores = [w["score"] for w in node["top_words"]]
            assert scores == sorted(scores, reverse=True)
            if level["level"] == 0:
                assert node["parent"] is None and node["dependency_weight"] is None
            else:
                assert node["parent"] in range(3)
                assert 0 < node["dependency_weight"] <= 1


def test_export_features(runner, workdir):
    tmp, cfg = workdir
    out = pipeline(runner, tmp / "out", cfg)
    res = invoke(runner, "export", "--format", "features-tsv", "--output-dir", out)
    assert res.exit_code == 0
    for l, k in enumerate((3, 6)):
        rows = (out / "features" / f"theta_level{l}.tsv").read_text().splitlines()
        assert rows[0].split("\t") == [f"topic_{i}" for i in range(k)] + ["label"]
        assert len(rows) == 501
        values = np.array([[float(x) for x in r.split("\t")[:k]] for r in rows[1:]])
        assert np.allclose(values.sum(axis=1), 1, atol=0.05)


def test_export_bad_format(runner, workdir):
    tmp, _ = workdir
    res = runner.invoke(cli.main, ["export", "--format", "png", "--output-dir", str(tmp / "out")])
    assert res.exit_code == 2


def test_inspect(runner, workdir):
    tmp, cfg = workdir
    out = pipeline(runner, tmp / "out", cfg)
    res = invoke(runner, "inspect", "--output-dir", out)
    assert res.exit_code == 0
    assert "levels: [3, 6]" in res.output and "ablations: none" in res.output
    assert res.output.count("[1.") == 6 and res.output.count("[0.") == 3


def test_outputs_stay_in_output_dir(runner, workdir):
    tmp, cfg = workdir
    before = set(os.listdir(tmp))
    out = pipeline(runner, tmp / "out", cfg)
    invoke(runner, "export", "--output-dir", out)
    invoke(runner, "export", "--format", "features-tsv", "--output-dir", out)
    assert os.listdir(tmp / "cwd") == []
    assert set(os.listdir(tmp)) == before | {"out"}


def test_thread_cap(runner, workdir, monkeypatch):
    tmp, cfg = workdir
    out = tmp / "out"
    assert invoke(runner, "preprocess", "--toy", "--output-dir", out).exit_code == 0
    monkeypatch.setenv("TRACO_THREADS", "1")
    assert invoke(runner, "train", "--output-dir", out, "--config", cfg).exit_code == 0
    monkeypatch.setenv("TRACO_THREADS", "zero")
    assert invoke(runner, "train", "--output-dir", out, "--config", cfg).exit_code == 2


# -- help -------------------------------------------------------------------------


@pytest.mark.parametrize("command", ["preprocess", "train", "eval", "export", "inspect"])
def test_help_documents_every_flag_default(runner, command):
    res = invoke(runner, command, "--help")
    assert res.exit_code == 0
    cmd = cli.main.commands[command]
    text = " ".join(res.output.split())
    for param in cmd.params:
        if not isinstance(param, click.Option) or param.name == "help":
            continue
        flag = max(param.opts, key=len)
        assert flag in text
        start = text.index(flag)
        nxt = [text.find(max(p.opts, key=len), start + 1) for p in cmd.params if isinstance(p, click.Option) and p is not param]
        nxt = [i for i in nxt if i > start] + [len(text)]
        assert "default" in text[start:min(nxt)].lower(), f"{command} {flag} does not document its default"
