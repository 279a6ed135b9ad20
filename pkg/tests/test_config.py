import pytest
from hypothesis import given, strategies as st

from aap.config import ConfigError, config_from_dict, load_config, parse_config
from aap.policy import ModelDims

from helpers import tiny_config_text


def test_missing_task_names_the_field():
    with pytest.raises(ConfigError) as err:
        parse_config("[run]\nvariant = aap\n")
    assert err.value.field == "run.task"


@pytest.mark.parametrize("text, field", [
    ("[run]\ntask = particle-pointnav\ncolour = red\n", "run.colour"),
    ("[run]\ntask = particle-pointnav\n[train]\nlearning_rate = 1\n", "train.learning_rate"),
    ("[run]\ntask = particle-pointnav\n[bogus]\nx = 1\n", "bogus"),
    ("[run]\ntask = particle-pointnav\n[train]\nlr = fast\n", "train.lr"),
    ("[run]\ntask = nav2d-pointnav\n[env]\nwarp = 2\n", "env.warp"),
    ("[run]\ntask = mars-rover\n", "run.task"),
    ("[run]\ntask = particle-pointnav\nvariant = oracle\n", "run.variant"),
])
def test_bad_keys_and_values_are_named(text, field):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.field == field
    assert str(err.value).startswith(field)


def test_task_defaults():
    p = parse_config("[run]\ntask = particle-pointnav\n")
    n = parse_config("[run]\ntask = nav2d-pointnav\n")
    assert (p.train.lr, p.train.rollout_length, p.train.total_steps) == (1e-3, 200, 2_000_000)
    assert (n.train.lr, n.train.rollout_length, n.train.total_steps) == (3e-4, 128, 5_000_000)
    assert n.model == ModelDims.nav2d_default()


def test_ini_and_dict_roundtrip(tmp_path):
    run = parse_config(tiny_config_text(task="nav2d-pointnav", seeds="0, 1"))
    assert parse_config(run.to_ini()) == run
    assert config_from_dict(run.to_dict()) == run
    (tmp_path / "c.ini").write_text(run.to_ini())
    assert load_config(tmp_path / "c.ini").config_hash() == run.config_hash()


def test_hash_covers_structure_not_schedule():
    base = parse_config(tiny_config_text())
    assert parse_config(tiny_config_text(total_steps=800)).config_hash() == base.config_hash()
    assert parse_config(tiny_config_text(variant="gru_lac")).config_hash() != base.config_hash()
    wide = tiny_config_text().replace("memory = 16", "memory = 24")
    assert parse_config(wide).config_hash() != base.config_hash()


def test_unreadable_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


@given(st.text(max_size=200))
def test_arbitrary_text_only_raises_config_error(text):
    try:
        parse_config(text)
    except ConfigError:
        pass
