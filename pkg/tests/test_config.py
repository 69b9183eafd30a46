from pathlib import Path

import pytest

from snaplab import config
from snaplab.errors import ConfigError

ROOT = Path(__file__).resolve().parents[1]


def write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_shipped_configs_load():
    for name in ("toy.ini", "digits.ini", "digits16.ini"):
        cfg = config.load_config(ROOT / "configs" / name)
        assert len(cfg.attack_specs()) == 3
        assert cfg.train_spec().epochs >= 1


def test_defaults_fill_missing_keys(tmp_path):
    cfg = config.load_config(write(tmp_path, "[noise]\np_noise = 2.5\n"))
    assert cfg["noise"]["p_noise"] == 2.5
    assert cfg["train"]["update_freq"] == 10
    assert cfg["eval"]["restarts"] == 10 and cfg["eval"]["n0_samples"] == 8
    specs = cfg.attack_specs()
    assert specs[0].alpha == pytest.approx(0.1 * specs[0].eps)


def test_unknown_key_reports_line(tmp_path):
    p = write(tmp_path, "[train]\nepochs = 3\nlearning_rate = 0.1\n")
    with pytest.raises(ConfigError, match=r"exp\.ini:3.*learning_rate"):
        config.load_config(p)


def test_unknown_section(tmp_path):
    with pytest.raises(ConfigError, match="unknown section"):
        config.load_config(write(tmp_path, "[optimizer]\nlr = 1\n"))


def test_bad_values(tmp_path):
    with pytest.raises(ConfigError, match="noise.dist"):
        config.load_config(write(tmp_path, "[noise]\ndist = cauchy\n"))
    with pytest.raises(ConfigError):
        config.load_config(write(tmp_path, "[train]\nepochs = -1\n"))
    with pytest.raises(ConfigError):
        config.load_config(write(tmp_path, "[noise]\nfrozen = maybe\n"))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        config.load_config(tmp_path / "absent.ini")


def test_missing_idx_path_reports_line(tmp_path):
    text = ("[data]\nsource = idx\ntrain_images = a.idx\ntrain_labels = b.idx\n"
            "test_images = c.idx\ntest_labels = d.idx\n")
    with pytest.raises(ConfigError, match=r"exp\.ini:3: data file not found"):
        config.load_config(write(tmp_path, text))


def test_overrides_and_env(tmp_path, monkeypatch):
    p = write(tmp_path, "[run]\nseed = 1\n")
    cfg = config.load_config(p, ["run.seed=5", "attack.l1_k=3"])
    assert cfg.seed == 5 and cfg["attack"]["l1_k"] == 3
    with pytest.raises(ConfigError):
        config.load_config(p, ["seed=5"])
    with pytest.raises(ConfigError):
        config.load_config(p, ["run.colour=blue"])
    monkeypatch.setenv(config.OUTPUT_ENV, str(tmp_path / "elsewhere"))
    assert config.load_config(p).output_dir == tmp_path / "elsewhere"


def test_relative_output_dir_resolves_against_config(tmp_path):
    cfg = config.load_config(write(tmp_path, "[run]\noutput_dir = out\n"))
    assert cfg.output_dir == tmp_path / "out"


def test_digest_tracks_settings_but_not_output_dir(tmp_path):
    p = write(tmp_path, "[run]\nseed = 1\n")
    a = config.load_config(p)
    assert a.digest() == config.load_config(p, ["run.output_dir=/tmp/x"]).digest()
    assert a.digest() != config.load_config(p, ["run.seed=2"]).digest()


def test_dump_round_trip(tmp_path):
    cfg = config.load_config(ROOT / "configs" / "digits16.ini")
    again = config.load_config(write(tmp_path, config.dump_config(cfg)))
    assert again.digest() == cfg.digest()
