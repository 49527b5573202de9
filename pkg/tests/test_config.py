from __future__ import annotations

from pathlib import Path

import pytest

from paneitz.config import ExperimentConfig, load_config, read_env, read_ini
from paneitz.errors import ConfigError, DomainError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _ini(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults():
    cfg = load_config(environ={})
    assert cfg.n == 5
    assert cfg.K == "1+0.1*x6"
    assert cfg.mu is None and cfg.l is None
    assert cfg.nodes == 201


def test_shipped_configs_load():
    example = load_config(CONFIGS / "example.ini", environ={})
    assert example.mu is None
    synthetic = load_config(CONFIGS / "perturb_synthetic.ini", environ={})
    assert synthetic.n == 6
    assert synthetic.l == 5
    assert synthetic.rho == 0.3


def test_precedence_ini_env_flags(tmp_path):
    path = _ini(tmp_path, "[experiment]\nn = 6\nseed = 3\n[flow]\nm1 = 0.2\n")
    cfg = load_config(path, {"seed": 9, "K": None}, environ={"PANEITZ_M1": "0.3", "paneitz_n": "7"})
    assert cfg.n == 6
    assert cfg.m1 == 0.3
    assert cfg.seed == 9
    assert cfg.K == "1+0.1*x6"


def test_env_names_are_case_insensitive():
    assert read_env({"PANEITZ_WARM_LAMBDA": "3.5", "OTHER": "x"}) == {"warm_lambda": 3.5}


def test_unknown_env_override():
    with pytest.raises(ConfigError):
        read_env({"PANEITZ_COLOUR": "blue"})


@pytest.mark.parametrize("text", [
    "[experiment]\ncolour = blue\n",
    "[plotting]\ndpi = 300\n",
    "[flow]\nn = 6\n",
    "[experiment]\nn = five\n",
])
def test_bad_ini(tmp_path, text):
    with pytest.raises(ConfigError):
        read_ini(_ini(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        read_ini(tmp_path / "absent.ini")


def test_validation():
    with pytest.raises(DomainError):
        ExperimentConfig(n=4)
    with pytest.raises(ConfigError):
        ExperimentConfig(eta=0.0)
    with pytest.raises(ConfigError):
        ExperimentConfig(lambda0=0.5)
    with pytest.raises(ConfigError):
        ExperimentConfig(pole="east")


def test_hash_ignores_the_output_directory():
    a = ExperimentConfig(out="out/a")
    b = ExperimentConfig(out="out/b")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != ExperimentConfig(seed=1).config_hash()
    assert len(a.config_hash()) == 64
