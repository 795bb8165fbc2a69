import pytest

from mollibra.config import ConfigError, config_from_dict, load_config, preset


def test_presets():
    tripp = preset("tripp_gp_bo")
    assert tripp.fingerprints.enabled == ("ecfp",) and tripp.gating.mode == "off"
    molleo = preset("molleo")
    assert (molleo.n_batch, molleo.n_cand, molleo.evolve.n_siblings) == (10, 0, 1)
    full = preset("mollibra")
    assert (full.n_init, full.n_batch, full.n_cand, full.budget) == (10, 1, 300, 1000)
    assert (full.evolve.n_elite, full.evolve.n_pairs, full.evolve.n_siblings) == (30, 10, 5)
    assert len(full.fingerprints.enabled) == 6


def test_load_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('preset = "mollibra"\n[run]\nbudget = 50\nseed = 3\n'
                 '[fingerprints]\nenabled = ["ecfp", "boc"]\n[fingerprints.ecfp]\nradius = 3\n'
                 '[gating]\nmode = "llimbo"\n[bench]\nseeds = [0, 1]\n')
    cfg = load_config(p)
    assert cfg.budget == 50 and cfg.seed == 3
    assert cfg.fingerprints.enabled == ("ecfp", "boc") and cfg.fingerprints.ecfp_radius == 3
    assert cfg.gating.mode == "llimbo"


@pytest.mark.parametrize("data", [
    {"run": {"budget": 5}},
    {"run": {"n_batch": 0}},
    {"run": {"colour": 1}},
    {"gating": {"mode": "exp3"}},
    {"fingerprints": {"enabled": ["ecfp", "maccs"]}},
    {"fingerprints": {"enabled": []}},
    {"evolve": {"n_elite": 1}},
    {"critic": {"synthetic_rho": 1.5}},
    {"editor": {"mode": "external"}},
    {"preset": "nope"},
    {"surprise": {}},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[run\nbudget = ")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_hash_ignores_seed_only():
    a = preset("mollibra", seed=1)
    assert a.config_hash() == preset("mollibra", seed=2).config_hash()
    assert a.config_hash() != preset("mollibra", budget=999).config_hash()
