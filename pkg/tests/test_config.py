import numpy as np
import pytest

from dymoe.config import ConfigError, TrainConfig, build_dataclass, load_train_config, read_config_file, rng_stream


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.weight_decay, cfg.epochs, cfg.batch_size) == (1e-4, 1e-3, 40, 128)
    assert (cfg.embedding_dim, cfg.layer_count, cfg.fanout, cfg.gamma, cfg.delta) == (128, 2, 10, 1.0, 5.0)
    assert cfg.balancing_for("class") == 10 and cfg.balancing_for("instance") == 5
    assert cfg.replace(balancing_epochs=3).balancing_for("class") == 3


@pytest.mark.parametrize("bad", [dict(p=0.0), dict(p=1.0), dict(epochs=0), dict(gamma=-1.0), dict(mode="x")])
def test_invalid_values(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_file_sections_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 4\n# comment\n[train]\nk = 2\nmode = dense\np = 0.2\n[synth]\ndim = 3\n")
    sections = read_config_file(path)
    assert sections[""] == {"seed": "4"} and sections["synth"] == {"dim": "3"}
    cfg = load_train_config(path)
    assert (cfg.seed, cfg.k, cfg.mode, cfg.p) == (4, 2, "dense", 0.2)


def test_unknown_key_is_named(tmp_path):
    with pytest.raises(ConfigError, match="'lerning_rate'"):
        build_dataclass(TrainConfig, {"lerning_rate": "0.1"})
    with pytest.raises(ConfigError, match="'k'"):
        build_dataclass(TrainConfig, {"k": "two"})


def test_rng_streams_are_named_and_reproducible():
    a = rng_stream(1, "train", 2).random(4)
    assert np.array_equal(a, rng_stream(1, "train", 2).random(4))
    assert not np.array_equal(a, rng_stream(1, "train", 3).random(4))
    assert not np.array_equal(a, rng_stream(2, "train", 2).random(4))
