from pathlib import Path

import pytest

from hypelab.config import ExperimentConfig, load_config, parse_config
from hypelab.errors import ConfigError

COMPARE = """\
# low-resource comparison
command = "compare"
name = "low-resource"

[data]
subsample = 1000
tasks = [acceptability, paraphrase]

[model]
preset = "small"

[compare]
techniques = ["vanilla", "hype-n", "hype-u@1e-4"]
baseline = "vanilla"

[grid]
lrs = [1e-5, 2e-5]
seeds = [0, 1, 2, 3, 4]
"""


def test_parse_compare():
    config = parse_config(COMPARE)
    assert config.command == "compare"
    assert config.data.subsample == 1000
    assert config.data.tasks == ("acceptability", "paraphrase")
    assert config.compare.techniques == ("vanilla", "hype-n", "hype-u@1e-4")
    assert config.grid.lrs == (1e-5, 2e-5)
    assert config.grid.seeds == (0, 1, 2, 3, 4)


def test_defaults():
    config = parse_config('command = "finetune"')
    assert config == ExperimentConfig(command="finetune")
    assert config.train.technique == "hype-n"
    assert config.train.eps == 1e-5 and config.train.beta2 == 0.99
    assert config.output.formats == ("json", "csv")


def test_numbers_coerce_to_declared_types():
    config = parse_config('command = finetune\n[train]\nlr = 3e-5\nepochs = 2.0\n[noise]\nsigma = 1\nlayers = [1, 2]\n')
    assert config.train.epochs == 2 and isinstance(config.train.epochs, int)
    assert config.noise.sigma == 1.0 and isinstance(config.noise.sigma, float)
    assert config.noise.layers == (1, 2)


def test_unknown_key_is_positioned():
    with pytest.raises(ConfigError, match="unknown key 'sigmaa'") as info:
        parse_config('command = "finetune"\n\n[noise]\nsigmaa = 1e-5\n')
    assert info.value.pos.line == 4 and info.value.pos.col == 1
    assert info.value.exit_code == 2


def test_wrong_type_is_positioned():
    with pytest.raises(ConfigError, match="expects integer") as info:
        parse_config('command = "finetune"\n[train]\nepochs = "three"\n')
    assert info.value.pos.line == 3 and info.value.pos.col == 10


def test_duplicate_key():
    with pytest.raises(ConfigError, match="set twice"):
        parse_config('command = "finetune"\n[train]\nlr = 1e-5\nlr = 2e-5\n')


def test_duplicate_section():
    with pytest.raises(ConfigError, match="appears twice"):
        parse_config('command = "finetune"\n[train]\n[train]\n')


def test_unknown_section():
    with pytest.raises(ConfigError, match="unknown section 'trian'"):
        parse_config('command = "finetune"\n[trian]\n')


def test_missing_command():
    with pytest.raises(ConfigError, match="missing key 'command'"):
        parse_config('name = "x"\n')


def test_unknown_command():
    with pytest.raises(ConfigError, match="command"):
        parse_config('command = "evaluate"\n')


def test_syntax_error():
    with pytest.raises(ConfigError) as info:
        parse_config('command = "finetune"\n[train\n')
    assert info.value.pos.line == 2


def test_unknown_technique():
    with pytest.raises(ConfigError, match="unknown technique 'hype-x'") as info:
        parse_config('command = "finetune"\n[train]\ntechnique = "hype-x"\n')
    assert info.value.pos.line == 3


def test_baseline_must_be_compared():
    with pytest.raises(ConfigError, match="baseline 'plain'"):
        parse_config('command = "compare"\n[compare]\ntechniques = [vanilla, hype-n]\nbaseline = "plain"\n')


def test_noise_layers_outside_model():
    with pytest.raises(ConfigError, match="layer mask") as info:
        parse_config('command = "finetune"\n[model]\nn_layers = 2\n[noise]\nlayers = [3]\n')
    assert info.value.pos.line == 5


def test_probe_needs_checkpoints():
    with pytest.raises(ConfigError, match="checkpoints"):
        parse_config('command = "probe"\n')


def test_missing_input_file(write_config):
    path = write_config('command = "finetune"\n[data]\ntrain = "nope.jsonl"\ndev = "nope.jsonl"\n')
    with pytest.raises(ConfigError, match="does not exist") as info:
        load_config(path)
    assert info.value.pos.line == 3
    assert load_config(path, check=False).data.train == "nope.jsonl"


def test_paths_resolve_relative_to_config(tmp_path, write_config):
    (tmp_path / "train.jsonl").write_text('{"text_a": "a", "label": "x"}\n')
    path = write_config('command = "finetune"\n[data]\ntrain = "train.jsonl"\ndev = "train.jsonl"\n')
    assert load_config(path).data.train == str(tmp_path / "train.jsonl")


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")


def test_with_seed_pins_every_seed():
    config = parse_config(COMPARE).with_seed(7)
    assert config.grid.seeds == (7,)
    assert config.train.seed == config.pretrain.seed == config.probe.seed == config.model.seed == 7


def test_technique_overrides():
    config = parse_config(
        'command = "finetune"\n[model]\nn_layers = 4\n[noise]\nposition = "both"\nlayers = [3, 4]\n[dropout]\nrate = 0.05\n'
    )
    t = config.technique("hype-u@1e-3")
    assert t.noise.form == "uniform" and t.noise.sigma == 1e-3
    assert t.noise.position == "both"
    assert t.noise.layer_mask == frozenset({3, 4})
    assert t.dropout.rate == 0.05


def test_noise_form_none_clears_sigma():
    config = parse_config('command = "finetune"\n[noise]\nform = "none"\n')
    assert not config.technique("hype-n").noise.active


def test_section_named_keys_are_accepted():
    config = parse_config('command = "compare"\n[compare]\nsimilarity = true\n[data]\ntrain = "t.jsonl"\ndev = "d.jsonl"\n')
    assert config.compare.similarity
    assert config.data.train is not None


def test_shipped_config_loads():
    config = load_config(Path(__file__).parents[1] / "configs" / "low_resource.cfg")
    assert config.command == "compare"
    assert config.compare.similarity


def test_none_still_unsets_optional_values():
    config = parse_config('command = "finetune"\n[noise]\nsigma = none\nform = "uniform"\n')
    assert config.noise.sigma is None
    assert config.noise.form == "uniform"
