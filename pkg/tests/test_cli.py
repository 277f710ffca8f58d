import json

import pytest
from click.testing import CliRunner

from hypelab import __version__, cli
from hypelab.runner import Runner

DATA = """\
[data]
tasks = ["acceptability"]
n_train = 48
n_dev = 24
corpus_size = 60

[model]
n_layers = 2
d_model = 16
n_heads = 2
d_ff = 32
max_seq_len = 24
"""

FINETUNE = (
    """\
command = "finetune"
name = "smoke"

[train]
technique = "hype-n:both@1e-3"
epochs = 1
batch_size = 16
lr = 1e-3
max_len = 24
"""
    + DATA
)

PRETRAIN = (
    """\
command = "pretrain"

[pretrain]
steps = 3
batch_size = 8
holdout = 12
max_len = 24
"""
    + DATA
)


@pytest.fixture
def runner():
    return CliRunner()


def test_version(runner):
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert f"hypelab, version {__version__}" in result.output


def test_resolve_prints_defaults(runner, write_config):
    path = write_config('command = "finetune"\n')
    result = runner.invoke(cli, ["resolve", "-c", str(path)])
    assert result.exit_code == 0
    resolved = json.loads(result.output)
    assert resolved["command"] == "finetune"
    assert resolved["train"]["technique"] == "hype-n"


def test_resolve_to_file(runner, write_config, tmp_path):
    path = write_config('command = "grid"\n')
    result = runner.invoke(cli, ["resolve", "-c", str(path), "-o", str(tmp_path / "resolved.json")])
    assert result.exit_code == 0
    assert json.loads((tmp_path / "resolved.json").read_text())["grid"]["seeds"] == [0, 1, 2]


def test_malformed_config_exits_2(runner, write_config):
    path = write_config('command = "finetune"\n[train]\nepochz = 3\n')
    result = runner.invoke(cli, ["-c", str(path)])
    assert result.exit_code == 2
    assert "unknown key 'epochz'" in result.output


def test_bad_format_option(runner, write_config):
    path = write_config(FINETUNE)
    result = runner.invoke(cli, ["-c", str(path), "--format", "xml"])
    assert result.exit_code == 2


def test_suite_command(runner, tmp_path):
    out = tmp_path / "suite"
    args = ["suite", "--out", str(out), "-f", "tsv", "--n-train", "20", "--n-dev", "10", "--corpus-size", "30"]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0
    assert "Wrote 7 files" in result.output
    assert len((out / "corpus.txt").read_text().splitlines()) == 30
    assert (out / "similarity.dev.tsv").exists()


def test_finetune_end_to_end(runner, write_config, tmp_path):
    path = write_config(FINETUNE)
    out = tmp_path / "out"
    result = runner.invoke(cli, ["-c", str(path), "--out", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["command"] == "finetune"
    assert report["runs"][0]["status"] == "completed"
    assert report["runs"][0]["config"]["noise"]["position"] == "both"
    assert (out / "resolved_config.json").exists()
    assert (out / "runs.csv").read_text().startswith("task,technique,lr,seed")
    assert len(list((out / "checkpoints").glob("*.ckpt"))) == 1


def test_runs_are_reproducible(runner, write_config, tmp_path):
    path = write_config(FINETUNE)
    for name in ("a", "b"):
        assert runner.invoke(cli, ["-c", str(path), "--out", str(tmp_path / name), "--format", "json"]).exit_code == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    assert not (tmp_path / "a" / "summary.csv").exists()


def test_pretrain_then_probe(runner, write_config, tmp_path):
    out = tmp_path / "pre"
    result = runner.invoke(cli, ["-c", str(write_config(PRETRAIN, "pretrain.cfg")), "--out", str(out)])
    assert result.exit_code == 0, result.output
    pretrain = json.loads((out / "report.json").read_text())["pretrain"]
    assert len(pretrain["history"]) == 3
    assert (out / "backbone.ckpt").exists()

    probe = f'command = "probe"\n[probe]\ncheckpoints = ["{out / "backbone.ckpt"}"]\nlayers = [0, 2]\n' + DATA
    result = runner.invoke(cli, ["-c", str(write_config(probe, "probe.cfg")), "--out", str(tmp_path / "probe")])
    assert result.exit_code == 0, result.output
    layers = (tmp_path / "probe" / "layers.csv").read_text().splitlines()
    assert layers[0] == "series,source,task,layer,value,seed"
    assert len(layers) == 3


def test_bad_checkpoint_writes_failure(runner, write_config, tmp_path):
    (tmp_path / "fake.ckpt").write_bytes(b"not a checkpoint")
    config = FINETUNE.replace("[model]\n", '[model]\ncheckpoint = "fake.ckpt"\n')
    out = tmp_path / "out"
    result = runner.invoke(cli, ["-c", str(write_config(config)), "--out", str(out)])
    assert result.exit_code == 4
    failure = json.loads((out / "failure.json").read_text())
    assert failure["error"] == "FormatError"
    assert (out / "resolved_config.json").exists()


def test_finetune_on_dataset_files(runner, write_config, tmp_path):
    assert runner.invoke(cli, ["suite", "--out", str(tmp_path / "data"), "--n-train", "40", "--n-dev", "20", "--corpus-size", "10"]).exit_code == 0
    config = FINETUNE.split("[data]")[0] + (
        '[data]\ntrain = "data/paraphrase.train.jsonl"\ndev = "data/paraphrase.dev.jsonl"\n'
        'task = "paraphrase"\nmetric = "f1"\n\n[model]\nn_layers = 2\nd_model = 16\nn_heads = 2\nd_ff = 32\nmax_seq_len = 24\n'
    )
    out = tmp_path / "out"
    result = runner.invoke(cli, ["-c", str(write_config(config)), "--out", str(out), "--format", "csv"])
    assert result.exit_code == 0, result.output
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[1].startswith("paraphrase,hype-n:both@1e-3,f1,")


def test_compare_reports_deltas_against_baseline(runner, write_config, tmp_path):
    config = (
        'command = "compare"\n\n[train]\nepochs = 1\nbatch_size = 16\nmax_len = 24\n\n'
        '[grid]\nlrs = [1e-3]\nseeds = [0]\n\n'
        '[compare]\ntechniques = ["vanilla", "hype-n@1e-3"]\nbaseline = "vanilla"\nsimilarity = true\n\n' + DATA
    )
    out = tmp_path / "compare"
    result = runner.invoke(cli, ["-c", str(write_config(config)), "--out", str(out)])
    assert result.exit_code == 0, result.output
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0].endswith(",delta")
    assert [row.split(",")[1] for row in summary[1:]] == ["vanilla", "hype-n@1e-3"]
    assert summary[1].endswith(",0.000000")
    assert summary[2].split(",")[-1] != ""
    layers = (out / "layers.csv").read_text().splitlines()[1:]
    assert {row.split(",")[1] for row in layers} == {"vanilla", "hype-n@1e-3"}
    report = json.loads((out / "report.json").read_text())
    assert [s["technique"] for s in report["top_layer_similarity"]] == ["vanilla", "hype-n@1e-3"]


def test_unexpected_error_becomes_run_failure(runner, write_config, tmp_path, monkeypatch):
    def broken(self):
        raise ValueError("boom")

    monkeypatch.setattr(Runner, "_finetune", broken)
    out = tmp_path / "out"
    result = runner.invoke(cli, ["-c", str(write_config(FINETUNE)), "--out", str(out)])
    assert result.exit_code == 3
    failure = json.loads((out / "failure.json").read_text())
    assert failure["error"] == "RunFailure"
    assert "ValueError: boom" in failure["message"]
