# Scenario configuration: defaults, YAML files and command-line overrides
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from hdroute.agent import AgentConfig
from hdroute.graph import DegreeDistributionSpec
from hdroute.routing import DEFAULT_BETA_SET, SUPPORTED_WEIGHTINGS
from hdroute.traffic import REMOVAL_MODES, SUPPORTED_STRATEGIES, SimConfig

NETWORK_KINDS = ("ba", "ce", "er", "edgelist")

# Keys that only affect where and how fast results are produced.
RUN_ONLY_KEYS = ("out_dir", "workers")

DEFAULTS = {
    # network
    "network": "ba",
    "n": 1000,
    "m": 3,
    "ce_j": 3,
    "ce_a": 1000.0,
    "ce_lambda": 0.2,
    "ce_kmin": 0.5,
    "mean_degree": 6.0,
    "edge_list": None,
    "network_seeds": [0, 1, 2],
    # routing
    "beta_set": list(DEFAULT_BETA_SET),
    "bypass_weighting": "bc",
    "bc_samples": 1000,
    # traffic
    "strategies": ["SP", "LD", "HD"],
    "k_list": [10],
    "r_over_n": [0.001],
    "seeds": [0],
    "buffer": 40,
    "mi_len": 10,
    "mis_per_episode": 50,
    "generate_first": True,
    "warmup": 500,
    "window": 1500,
    "rc_threshold": 0.02,
    # agents
    "episodes": 60,
    "census_last": 30,
    "hidden": [64, 64],
    "gamma": 0.9,
    "lr": 1e-3,
    "replay_capacity": 10_000,
    "batch": 32,
    "eps_start": 1.0,
    "eps_end": 0.05,
    "eps_decay_episodes": 20,
    "target_sync": 50,
    "train_start": 10,
    "optimizer": "sgd",
    "peer_queues": False,
    "travel_weight": 1.0,
    "drop_weight": 1.0,
    # link removal
    "removal_modes": ["random", "bc"],
    "removal_fraction": 0.02,
    "removal_at_episode": 20,
    "removal_control": True,
    # reports
    "snapshot_time": 500,
    "report_steps": 2000,
    "report_k": 5,
    "bc_bins": 20,
    # run
    "out_dir": "results",
    "workers": 1,
}


class ConfigError(ValueError):
    """Raised for unknown keys, bad values or missing referenced files."""


def load_config(path) -> dict:
    """
    Read a scenario file: a flat YAML mapping of keys from DEFAULTS.

    Raises:
        ConfigError: If the file is missing, not a mapping, or has unknown keys
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a key-value mapping at top level")

    unknown = sorted(str(k) for k in data if k not in DEFAULTS)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys: {', '.join(unknown)}")
    return data


def parse_override(text) -> tuple:
    """
    Parse a "key=value" override; the value uses YAML scalar/list syntax.

    Raises:
        ConfigError: If the text has no '=' or names an unknown key
    """
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key: {key}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError(f"bad value for {key}: {e}") from None
    return key, value


def get_setting(key, overrides, scenario):
    """
    Resolve one configuration value.

    Resolution order:
    1. Command-line override (if present)
    2. Scenario file value (if present)
    3. DEFAULTS

    Args:
        key: Config key
        overrides: Mapping of command-line overrides
        scenario: Mapping read from the scenario file

    Returns:
        Value coerced to the type of the default

    Raises:
        ConfigError: If key is unknown or the value has the wrong type
    """
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key: {key}")

    if key in overrides:
        value = overrides[key]
    elif key in scenario:
        value = scenario[key]
    else:
        value = DEFAULTS[key]
    return _coerce(key, value)


def _coerce(key, value):
    default = DEFAULTS[key]
    if isinstance(default, list):
        items = value if isinstance(value, (list, tuple)) else [value]
        if default:
            return [_coerce_scalar(key, item, default[0]) for item in items]
        return list(items)
    if default is None:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key} must be a path string, got {value!r}")
        return value
    return _coerce_scalar(key, value, default)


def _coerce_scalar(key, value, like):
    if isinstance(like, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if isinstance(like, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(like, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


@dataclass(frozen=True)
class ScenarioConfig:
    """Resolved scenario: one field per key of DEFAULTS, lists stored as tuples."""

    network: str
    n: int
    m: int
    ce_j: int
    ce_a: float
    ce_lambda: float
    ce_kmin: float
    mean_degree: float
    edge_list: str
    network_seeds: tuple
    beta_set: tuple
    bypass_weighting: str
    bc_samples: int
    strategies: tuple
    k_list: tuple
    r_over_n: tuple
    seeds: tuple
    buffer: int
    mi_len: int
    mis_per_episode: int
    generate_first: bool
    warmup: int
    window: int
    rc_threshold: float
    episodes: int
    census_last: int
    hidden: tuple
    gamma: float
    lr: float
    replay_capacity: int
    batch: int
    eps_start: float
    eps_end: float
    eps_decay_episodes: int
    target_sync: int
    train_start: int
    optimizer: str
    peer_queues: bool
    travel_weight: float
    drop_weight: float
    removal_modes: tuple
    removal_fraction: float
    removal_at_episode: int
    removal_control: bool
    snapshot_time: int
    report_steps: int
    report_k: int
    bc_bins: int
    out_dir: str
    workers: int

    @classmethod
    def from_mapping(cls, values) -> "ScenarioConfig":
        converted = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
        config = cls(**converted)
        config.validate()
        return config

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of every key that affects results."""
        data = {k: v for k, v in self.to_dict().items() if k not in RUN_ONLY_KEYS}
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def validate(self):
        """
        Check value ranges and cross-key constraints.

        Raises:
            ConfigError: On the first invalid value
        """
        if self.network not in NETWORK_KINDS:
            raise ConfigError(f"network must be one of {NETWORK_KINDS}, got {self.network!r}")
        if self.network == "edgelist":
            if not self.edge_list:
                raise ConfigError("network: edgelist requires edge_list")
            if not Path(self.edge_list).is_file():
                raise ConfigError(f"edge_list file not found: {self.edge_list}")
        elif self.n < 4:
            raise ConfigError(f"n must be at least 4, got {self.n}")

        unknown = [s for s in self.strategies if s not in SUPPORTED_STRATEGIES]
        if unknown or not self.strategies:
            raise ConfigError(f"strategies must be a non-empty subset of {SUPPORTED_STRATEGIES}")
        if any(k < 0 for k in self.k_list):
            raise ConfigError("k_list entries must be non-negative")
        # edge-list sizes are only known after loading
        if self.network != "edgelist":
            limit = max(1, self.n // 10)
            if any(k > limit for k in self.k_list):
                raise ConfigError(f"k_list entries must be <= {limit} for n={self.n}")
        if not self.r_over_n or any(r <= 0 for r in self.r_over_n):
            raise ConfigError("r_over_n must be a non-empty list of positive values")
        if not self.seeds or not self.network_seeds:
            raise ConfigError("seeds and network_seeds cannot be empty")
        if not self.beta_set or any(b < 0 for b in self.beta_set):
            raise ConfigError("beta_set must be a non-empty list of non-negative values")
        if self.bypass_weighting not in SUPPORTED_WEIGHTINGS:
            raise ConfigError(f"bypass_weighting must be one of {SUPPORTED_WEIGHTINGS}")
        if any(m not in REMOVAL_MODES for m in self.removal_modes):
            raise ConfigError(f"removal_modes must be a subset of {REMOVAL_MODES}")
        if not 0 < self.removal_fraction < 1:
            raise ConfigError("removal_fraction must be in (0, 1)")
        if self.episodes < 1 or self.census_last < 1:
            raise ConfigError("episodes and census_last must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

        # surface the dataclass checks of the derived configs as config errors
        try:
            self.sim_config(rate=1.0, strategy=self.strategies[0], seed=0)
            self.agent_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def degree_spec(self) -> DegreeDistributionSpec:
        return DegreeDistributionSpec(
            model=self.network.upper(),
            m=self.m,
            J=self.ce_j,
            a=self.ce_a,
            lam=self.ce_lambda,
            mean_degree=self.mean_degree,
            kmin=self.ce_kmin,
        )

    def sim_config(self, rate, strategy, seed) -> SimConfig:
        return SimConfig(
            rate=rate,
            buffer=self.buffer,
            mi_len=self.mi_len,
            mis_per_episode=self.mis_per_episode,
            strategy=strategy,
            seed=seed,
            generate_first=self.generate_first,
            snapshot_time=self.snapshot_time,
        )

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            hidden=self.hidden,
            gamma=self.gamma,
            lr=self.lr,
            replay_capacity=self.replay_capacity,
            batch=self.batch,
            eps_start=self.eps_start,
            eps_end=self.eps_end,
            eps_decay_episodes=self.eps_decay_episodes,
            target_sync=self.target_sync,
            train_start=self.train_start,
            optimizer=self.optimizer,
            peer_queues=self.peer_queues,
            travel_weight=self.travel_weight,
            drop_weight=self.drop_weight,
        )


def resolve(path=None, overrides=()) -> ScenarioConfig:
    """
    Build a validated ScenarioConfig.

    Args:
        path: Optional scenario file
        overrides: Iterable of "key=value" strings, applied last

    Raises:
        ConfigError: On any unknown key or invalid value
    """
    scenario = load_config(path) if path else {}
    parsed = dict(parse_override(text) for text in overrides)
    values = {key: get_setting(key, parsed, scenario) for key in DEFAULTS}
    return ScenarioConfig.from_mapping(values)


def config_keys() -> list:
    return [f.name for f in fields(ScenarioConfig)]
