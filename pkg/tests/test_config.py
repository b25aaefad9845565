import pytest

from codepth.config import ConfigError, RunConfig, dump_config, load_config, parse_config


def test_defaults():
    c = RunConfig()
    assert (c.lr, c.batch, c.alpha_l, c.gamma) == (1e-4, 1, 0.1, 1e-2)
    assert (c.beta_p, c.beta_ss, c.beta_s) == (0.15, 0.85, 0.1)
    assert (c.beta1, c.beta2) == (0.9, 0.99)
    assert c.method == "proposed" and c.seeds == (0, 1, 2)


@pytest.mark.parametrize(
    "method, gamma, replay",
    [("fine_tune", 0.0, False), ("reg_only", 1e-2, False), ("replay_only", 0.0, True), ("proposed", 1e-2, True)],
)
def test_method_flags(method, gamma, replay):
    c = RunConfig(method=method)
    assert c.effective_gamma == gamma and c.use_replay is replay


def test_unknown_keys_listed():
    with pytest.raises(ConfigError) as e:
        parse_config("lr = 1e-3\nlearning_rate = 2\nbogus = 1\n")
    assert "learning_rate" in str(e.value) and "bogus" in str(e.value)


def test_parse_values_and_aliases():
    c = parse_config("method = rep  # replay only\nreplay_preload = off\nseeds = 3, 4\ngamma = 0.5\n")
    assert c.method == "replay_only" and c.replay_preload is False
    assert c.seeds == (3, 4) and c.gamma == 0.5


@pytest.mark.parametrize("text", ["lr", "lr = fast", "replay_preload = maybe", "batch = 4", "width = 60", "method = sgd"])
def test_bad_values(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_dump_round_trip(tmp_path):
    c = RunConfig(method="reg_only", seed=4, seeds=(4, 5), width=32, height=24, replay_preload=False)
    path = tmp_path / "c.txt"
    path.write_text(dump_config(c))
    assert load_config(str(path)) == c


def test_deviations_echo_changes():
    dev = RunConfig(frames_per_domain=200, gamma=0.1).deviations()
    assert dev["frames_per_domain"] == {"default": 600, "value": 200}
    assert dev["gamma"]["value"] == 0.1
    assert dev["resolution.width"] == {"reference": 320, "value": 64}
    assert "seed" not in dev


def test_overrides_validate():
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(mode="mono")
    assert RunConfig().with_overrides(seed=None, method="fine_tune").method == "fine_tune"
