import pytest

from pausesim.config import ConfigError, ExperimentConfig, dumps, echo_config, load_config, loads, to_dict


def test_empty_file_gives_small_network_defaults(tmp_path):
    path = tmp_path / "empty.toml"
    path.write_text("")
    cfg = load_config(path)
    assert cfg == ExperimentConfig()
    assert (cfg.population.num_users, cfg.population.m) == (30, 5)
    assert cfg.sa_iters == 50 * 30


def test_large_preset():
    cfg = loads('preset = "large"\n')
    assert (cfg.population.num_users, cfg.population.m) == (300, 15)
    assert (cfg.sa.kappa, cfg.bandit.zeta) == (30.0, 3.0)
    assert (cfg.population.clusters, cfg.reward.delta_tau) == (20, 0.01)
    assert loads('preset = "large"\n[sa]\nkappa = 5\n').sa.kappa == 5.0


@pytest.mark.parametrize(
    "text, key, line",
    [
        ("[privacy]\neps_bar = -1\n", "privacy.eps_bar", 2),
        ("[run]\nrounds = 3\npolicies = ['pause', 'oracle']\n", "run.policies", 3),
        ("\n[reward]\nalpha = 1\nlambda = 2\n", "reward.lambda", 4),
        ("colour = 'red'\n", "colour", 1),
        ("[population]\nm = 'five'\n", "population.m", 2),
        ("[population]\nnum_users = 4\nm = 5\n", "population.m", 3),
        ("[reward]\nphi = 'clustered'\n[run]\npolicies = ['pause_pivot']\n", "run.policies", 4),
        ("[run]\nrounds = 20000\n", "run.rounds", 2),
        ("preset = 'huge'\n", "preset", 1),
    ],
)
def test_validation_names_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as info:
        loads(text)
    assert info.value.key == key
    assert info.value.line == line


def test_parse_error_reports_line():
    with pytest.raises(ConfigError) as info:
        loads("[run]\nrounds = = 3\n")
    assert info.value.line == 2


def test_int_accepted_for_float_but_not_bool():
    assert loads("[privacy]\neps_bar = 10\n").privacy.eps_bar == 10.0
    with pytest.raises(ConfigError):
        loads("[privacy]\neps_bar = true\n")


def test_echo_round_trips(tmp_path):
    cfg = loads('preset = "large"\n[run]\nseeds = [3, 4]\nrounds = 7\n[reward]\nphi = "clustered"\n')
    path = echo_config(cfg, tmp_path / "out")
    again = load_config(path)
    assert again == cfg
    assert to_dict(again) == to_dict(cfg)
    assert dumps(again) == path.read_text()
