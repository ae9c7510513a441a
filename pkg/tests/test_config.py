import math
from pathlib import Path

import pytest
import yaml

from grmp.config import OUTPUT_ENV, ExperimentConfig, config_from_dict, dump_config, load_config, resolve_output_dir
from grmp.errors import ConfigError

ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = ROOT / "configs"


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_mapping_gives_defaults():
    assert config_from_dict({}) == ExperimentConfig()
    assert config_from_dict(None) == ExperimentConfig()


def test_nested_sections_are_parsed(tmp_path):
    cfg = load_config(write(tmp_path, """
seed: 4
agents: 8
attackers: 3
dataset: {dirichlet_alpha: inf, trigger: {dims: [1, 2], magnitude: 2}}
train: {learning_rate: 0.1}
attack: {strategy: naive}
defense: {name: krum, f: 1}
"""))
    assert (cfg.seed, cfg.agents, cfg.attackers) == (4, 8, 3)
    assert cfg.dataset.n_agents == 8
    assert math.isinf(cfg.dataset.dirichlet_alpha)
    assert cfg.dataset.trigger.dims == (1, 2) and cfg.dataset.trigger.magnitude == 2.0
    assert cfg.train.learning_rate == 0.1
    assert cfg.attack.strategy == "naive" and cfg.defense.name == "krum"


@pytest.mark.parametrize("text,fragment", [
    ("rounds: 5\nbogus: 1\n", "bogus"),
    ("attack: {speed: 3}\n", "attack: unknown key(s) speed"),
    ("dataset: {trigger: {colour: red}}\n", "dataset.trigger"),
    ("dataset: {n_agents: 6}\n", "n_agents"),
    ("attackers: 6\n", "attackers"),
    ("rounds: 2.5\n", "rounds"),
    ("dataset: {noise_std: loud}\n", "dataset.noise_std"),
    ("defense: [1, 2]\n", "defense: expected a mapping"),
    ("- 1\n- 2\n", "mapping"),
    ("rounds: [\n", "invalid YAML"),
])
def test_invalid_configs_are_rejected(tmp_path, text, fragment):
    p = write(tmp_path, text)
    with pytest.raises(ConfigError) as info:
        load_config(p)
    assert fragment in str(info.value)
    assert str(p) in str(info.value)


def test_missing_file_names_the_path(tmp_path):
    missing = tmp_path / "nope.yaml"
    with pytest.raises(ConfigError, match="nope.yaml"):
        load_config(missing)


def test_output_dir_precedence(monkeypatch):
    cfg = ExperimentConfig(output_dir="from_config")
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert resolve_output_dir(cfg) == Path("from_config")
    monkeypatch.setenv(OUTPUT_ENV, "from_env")
    assert resolve_output_dir(cfg) == Path("from_env")
    assert resolve_output_dir(cfg, "from_cli") == Path("from_cli")


def test_dump_round_trip(tmp_path):
    cfg = config_from_dict({"seed": 3, "agents": 5, "attackers": 1, "dataset": {"dirichlet_alpha": "inf"}})
    again = load_config(write(tmp_path, dump_config(cfg)))
    assert again == cfg
    assert yaml.safe_load(dump_config(cfg))["dataset"]["dirichlet_alpha"] == "inf"


def test_with_overrides_keeps_agent_count_consistent():
    cfg = ExperimentConfig().with_overrides(agents=9, attackers=1)
    assert cfg.dataset.n_agents == 9
    cfg.validate()
    assert cfg.attacker_ids == [8] and cfg.benign_ids == list(range(8))


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_validate(path):
    cfg = load_config(path)
    assert cfg.rounds == 20 and cfg.agents == 6


def test_readme_config_block_lists_the_defaults():
    text = (ROOT / "README.md").read_text()
    block = text.split("## Configuration", 1)[1].split("```yaml", 1)[1].split("```", 1)[0]
    assert config_from_dict(yaml.safe_load(block)) == ExperimentConfig()
