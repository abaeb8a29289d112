import pytest

from dacrl.config import (RunConfig, Seeds, TrainConfig, dump_config, load_config,
                          parse_config_text)
from dacrl.errors import AssumptionViolation, ConfigError


def test_defaults():
    run = parse_config_text("")
    t = run.train
    assert (t.gamma, t.critic_exponent, t.actor_exponent, t.subsample) == (0.9, 0.55, 0.65, 20)
    assert t.topology == "grid:2x3" and t.scheme == "metropolis"
    assert t.features.n_features == 30 and t.warmup == 0
    assert run.trials == 5
    assert t.seeds == Seeds.from_base(0)


def test_sections_and_overrides():
    text = "[train]\nsteps = 100\ngamma = 0.5\n[env]\nkind = toy\ntargets = 1.0, 2.0\n"
    run = parse_config_text(text, ["train.steps=7", "network.topology=complete:2", "run.plot=no"])
    assert run.train.steps == 7 and run.train.gamma == 0.5
    assert run.train.env.targets == (1.0, 2.0)
    assert run.train.topology == "complete:2"
    assert run.plot is False


@pytest.mark.parametrize("text, overrides", [
    ("[bogus]\nx = 1\n", None),
    ("[train]\nstep = 1\n", None),
    ("[train]\nsteps = many\n", None),
    ("", ["train.steps"]),
    ("", ["steps=3"]),
    ("", ["run.plot=maybe"]),
    ("", ["train.gamma=1.0"]),
    ("", ["run.trials=0"]),
    ("not an ini", None),
])
def test_rejected(text, overrides):
    with pytest.raises(ConfigError):
        parse_config_text(text, overrides)


def test_step_size_order_is_an_assumption_violation():
    with pytest.raises(AssumptionViolation) as info:
        parse_config_text("[train]\ncritic_exponent = 0.7\nactor_exponent = 0.6\n")
    assert info.value.assumption == "step_sizes"


def test_dump_round_trip(tmp_path):
    run = parse_config_text("[train]\nseed = 11\ngamma = 0.3\n[env]\nkind = toy\n"
                            "weights = 1 2\n[eval]\ndiscounted = true\n[run]\nworkers = 3\n")
    path = tmp_path / "c.ini"
    path.write_text(dump_config(run))
    assert load_config(path) == run


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.ini")


def test_seed_change_rederives_streams():
    t = TrainConfig(seed=1)
    assert t.replace(seed=2).seeds == Seeds.from_base(2)
    assert t.replace(steps=5).seeds == t.seeds
    assert len(set(Seeds.from_base(0).__dict__.values())) == 5
    assert isinstance(RunConfig().train, TrainConfig)
