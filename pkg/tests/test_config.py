from pathlib import Path

import pytest

from gustrom.config import (DEFAULT_CONFIG_TEXT, default_config, load_config,
                            parse_config)
from gustrom.exceptions import ConfigError

ROOT = Path(__file__).resolve().parents[1]


def test_shipped_file_matches_builtin_defaults():
    shipped = load_config(ROOT / "configs" / "aerofoil.ini")
    builtin = default_config()
    assert shipped.params == builtin.params
    assert shipped.sweep == builtin.sweep
    assert shipped.gust == builtin.gust


def test_reference_case_settings():
    cfg = default_config()
    assert cfg.params.U_star == 4.5
    assert (cfg.params.K_xi3, cfg.params.K_alpha3) == (1.0, 3.0)
    assert cfg.sweep.velocity_law.fraction == 0.14
    assert (cfg.sweep.Hg_min, cfg.sweep.Hg_max, cfg.sweep.n_sites) == (0.1, 100.0, 1000)
    assert cfg.sweep.rom_order == 3


def test_empty_text_uses_defaults():
    cfg = parse_config("")
    assert cfg.sweep.n_sites == 1000
    assert cfg.workers == 1


def test_unknown_key_names_line_and_field():
    with pytest.raises(ConfigError) as info:
        parse_config("[sweep]\nn_sites = 10\nbogus = 1\n")
    assert info.value.line == 3
    assert info.value.field == "sweep.bogus"


def test_unknown_section():
    with pytest.raises(ConfigError) as info:
        parse_config("# comment\n[extra]\nx = 1\n")
    assert info.value.line == 2


def test_bad_value_type():
    with pytest.raises(ConfigError) as info:
        parse_config("[model]\nmu = heavy\n")
    assert info.value.line == 2
    assert info.value.field == "model.mu"


def test_invalid_value_is_located():
    with pytest.raises(ConfigError) as info:
        parse_config("[model]\n\nmu = -5\n")
    assert info.value.line == 3
    assert "model.mu" in str(info.value)


def test_unknown_velocity_law():
    with pytest.raises(ConfigError) as info:
        parse_config("[gust]\nvelocity_law = tabulated\n")
    assert info.value.field == "gust.velocity_law"


def test_malformed_line():
    with pytest.raises(ConfigError) as info:
        parse_config("[sweep]\nthis is not a key\n")
    assert info.value.line == 2


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        load_config(tmp_path / "absent.ini")


def test_default_text_is_stable():
    assert parse_config(DEFAULT_CONFIG_TEXT) == parse_config(DEFAULT_CONFIG_TEXT)
