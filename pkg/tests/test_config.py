import pytest

from mtsimplify.config import ConfigError, TrainConfig, apply_overrides, load_config, parse_ratio, write_config


def test_defaults():
    cfg = TrainConfig()
    assert cfg.mixing_ratio == (6, 1, 3) and cfg.n_s == 10 and cfg.clip_norm == 2.0
    assert cfg.bandit_alpha == 0.3 and cfg.bandit_tau == 1.0 and cfg.bandit_q0 == 0.0


def test_file_then_overrides(tmp_path):
    path = tmp_path / "c.conf"
    path.write_text("# comment\nschedule = dynamic\nn_s = 4\nsharing.preset = swapped\ndata.main.train.source = a.txt\n")
    cfg = load_config(path, ["n_s=7"])
    assert cfg.schedule == "dynamic" and cfg.n_s == 7 and cfg.preset == "swapped"
    assert cfg.data == {"data.main.train.source": "a.txt"}


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as info:
        load_config(None, ["foo=1"])
    assert info.value.key == "foo"


@pytest.mark.parametrize(
    "item,key",
    [
        ("mixing_ratio=0:1:1", "mixing_ratio"),
        ("n_s=0", "n_s"),
        ("schedule=weekly", "schedule"),
        ("sharing.lambda=-1", "sharing.lambda"),
        ("batch_size=x", "batch_size"),
    ],
)
def test_invalid_values(item, key):
    with pytest.raises(ConfigError) as info:
        load_config(None, [item])
    assert info.value.key == key


def test_parse_ratio():
    assert parse_ratio("6:1:3") == (6, 1, 3)
    with pytest.raises(ValueError):
        parse_ratio("6:1")


def test_write_and_reload(tmp_path):
    cfg = apply_overrides(TrainConfig(), {"warm_start": "m.npz", "vocab.shared": "true"})
    write_config(cfg, tmp_path / "c.conf")
    assert load_config(tmp_path / "c.conf") == cfg


def test_active_tasks():
    assert load_config(None, ["mixing_ratio=1:0:2"]).active_tasks() == ["main", "para"]
    assert load_config(None, ["schedule=dynamic"]).active_tasks() == ["main", "entail", "para"]
