"""
Test suite for scenario configuration.

This module tests behavioral contracts for:
- Resolution order: override, scenario file, defaults
- Unknown keys and type errors
- Cross-key validation
- Stable configuration hashes
"""

import os
import tempfile
from pathlib import Path

import pytest

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def _write_yaml(text):
    f = tempfile.NamedTemporaryFile(mode="w", suffix=".yaml", delete=False)
    f.write(text)
    f.close()
    return f.name


# ============================================================================
# Resolution order
# ============================================================================

def test_every_default_is_a_config_field():
    """Test that DEFAULTS and ScenarioConfig name the same keys."""
    from hdroute.config import DEFAULTS, config_keys

    assert sorted(DEFAULTS) == sorted(config_keys()), "one field per default key"


def test_defaults_used_without_file_or_overrides():
    """Test that resolve() with nothing gives the documented defaults."""
    from hdroute.config import resolve

    config = resolve()

    assert config.n == 1000 and config.m == 3, "BA with N=1000, m=3"
    assert config.buffer == 40 and config.mi_len == 10, "buffer and MI length"
    assert config.beta_set == (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 2.0), "seven-value beta set"
    assert config.strategies == ("SP", "LD", "HD"), "all strategies"


def test_override_supersedes_file_which_supersedes_default():
    """Test the resolution order override > scenario file > default."""
    from hdroute.config import get_setting

    scenario = {"buffer": 20, "mi_len": 5}
    overrides = {"buffer": 30}

    assert get_setting("buffer", overrides, scenario) == 30, "override wins"
    assert get_setting("mi_len", overrides, scenario) == 5, "file beats default"
    assert get_setting("warmup", overrides, scenario) == 500, "default as fallback"


def test_resolve_reads_file_then_applies_overrides():
    """Test resolve() with a scenario file and --set style overrides."""
    from hdroute.config import resolve

    path = _write_yaml("n: 200\nbuffer: 20\nk_list: [5]\n")
    try:
        config = resolve(path, ["buffer=10", "r_over_n=[0.01, 0.02]"])
    finally:
        os.unlink(path)

    assert config.n == 200, "file value"
    assert config.buffer == 10, "override value"
    assert config.r_over_n == (0.01, 0.02), "lists become tuples"


def test_scalar_accepted_for_list_key():
    """Test that a bare scalar becomes a one-element list."""
    from hdroute.config import resolve

    config = resolve(overrides=["seeds=7", "r_over_n=0.5"])

    assert config.seeds == (7,), "scalar seed wrapped in a list"
    assert config.r_over_n == (0.5,), "integer-valued floats allowed"


def test_bundled_scenarios_resolve():
    """Test that every shipped scenario file is valid."""
    from hdroute.config import resolve

    paths = sorted(SCENARIOS.glob("*.yaml"))
    assert paths, "scenarios directory must contain YAML files"
    for path in paths:
        config = resolve(path)
        assert config.n >= 4, f"{path.name} resolved"


# ============================================================================
# Errors
# ============================================================================

def test_unknown_key_in_file_raises():
    """Test that a scenario file with an unknown key is rejected."""
    from hdroute.config import ConfigError, load_config

    path = _write_yaml("n: 100\nbufer: 20\n")
    try:
        with pytest.raises(ConfigError, match="unknown config keys: bufer"):
            load_config(path)
    finally:
        os.unlink(path)


def test_unknown_override_key_raises():
    """Test that an override naming an unknown key is rejected."""
    from hdroute.config import ConfigError, resolve

    with pytest.raises(ConfigError, match="unknown config key: speed"):
        resolve(overrides=["speed=3"])


def test_malformed_override_raises():
    """Test that an override without '=' is rejected."""
    from hdroute.config import ConfigError, parse_override

    with pytest.raises(ConfigError, match="key=value"):
        parse_override("buffer")


def test_missing_or_malformed_file_raises():
    """Test errors for missing files and non-mapping YAML."""
    from hdroute.config import ConfigError, load_config

    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/scenario.yaml")

    path = _write_yaml("- 1\n- 2\n")
    try:
        with pytest.raises(ConfigError, match="mapping"):
            load_config(path)
    finally:
        os.unlink(path)


def test_type_errors_raise():
    """Test that values of the wrong type are rejected."""
    from hdroute.config import ConfigError, resolve

    with pytest.raises(ConfigError, match="must be an integer"):
        resolve(overrides=["buffer=4.5"])
    with pytest.raises(ConfigError, match="true or false"):
        resolve(overrides=["generate_first=1"])
    with pytest.raises(ConfigError, match="must be a number"):
        resolve(overrides=["r_over_n=[fast]"])


def test_missing_edge_list_file_raises():
    """Test that network: edgelist requires an existing file."""
    from hdroute.config import ConfigError, resolve

    with pytest.raises(ConfigError, match="requires edge_list"):
        resolve(overrides=["network=edgelist"])
    with pytest.raises(ConfigError, match="edge_list file not found"):
        resolve(overrides=["network=edgelist", "edge_list=/nonexistent/net.edges"])


def test_k_above_tenth_of_nodes_raises():
    """Test that K may not exceed N/10."""
    from hdroute.config import ConfigError, resolve

    assert resolve(overrides=["n=100", "k_list=[10]"]).k_list == (10,), "K = N/10 is allowed"
    with pytest.raises(ConfigError, match="k_list"):
        resolve(overrides=["n=100", "k_list=[11]"])


def test_value_range_errors_raise():
    """Test range checks on strategies, rates and derived configs."""
    from hdroute.config import ConfigError, resolve

    with pytest.raises(ConfigError, match="strategies"):
        resolve(overrides=["strategies=[SP, OSPF]"])
    with pytest.raises(ConfigError, match="r_over_n"):
        resolve(overrides=["r_over_n=[0.1, 0]"])
    with pytest.raises(ConfigError, match="removal_fraction"):
        resolve(overrides=["removal_fraction=1.5"])
    with pytest.raises(ConfigError, match="gamma"):
        resolve(overrides=["gamma=1.0"])


# ============================================================================
# Hashing and derived configs
# ============================================================================

def test_config_hash_is_stable_and_ignores_run_only_keys():
    """Test that the hash depends only on result-affecting keys."""
    from hdroute.config import resolve

    base = resolve(overrides=["n=200"])

    assert base.config_hash == resolve(overrides=["n=200"]).config_hash, "same config, same hash"
    assert base.config_hash == resolve(overrides=["n=200", "out_dir=elsewhere", "workers=4"]).config_hash, \
        "out_dir and workers do not affect results"
    assert base.config_hash != resolve(overrides=["n=201"]).config_hash, "n changes the hash"
    assert len(base.config_hash) == 64, "SHA-256 hex digest"


def test_derived_configs_carry_scenario_values():
    """Test sim_config, agent_config and degree_spec."""
    from hdroute.config import resolve

    config = resolve(overrides=["network=ce", "ce_a=100.0", "buffer=25", "hidden=[8, 8]", "optimizer=adam"])

    sim = config.sim_config(rate=3.0, strategy="LD", seed=4)
    assert (sim.rate, sim.buffer, sim.strategy, sim.seed) == (3.0, 25, "LD", 4), "sim config"
    agent = config.agent_config()
    assert agent.hidden == (8, 8) and agent.optimizer == "adam", "agent config"
    spec = config.degree_spec()
    assert spec.model == "CE" and spec.a == 100.0, "degree spec"
