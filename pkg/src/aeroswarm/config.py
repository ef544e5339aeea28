"""Scenario configuration and its key = value text format.

The on-disk form is an INI-style file with one section per module
(``[scenario]``, ``[channel]``, ``[env]``, ``[reward]``, ``[learner]``).
Every key maps to exactly one :class:`ScenarioConfig` field; an unknown
key or section is rejected so that typos never silently fall back to
defaults.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import math
import os
from dataclasses import dataclass, field
from typing import Any

PHASES = ("Urban", "Suburban", "Rural")
ENV_PREFIX = "AEROSWARM_"


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    # scenario
    area_side_m: float = 2000.0
    n_uavs: int = 4
    n_users_per_phase: dict = field(
        default_factory=lambda: {"Urban": 140, "Suburban": 90, "Rural": 40})
    phase_schedule: list = field(
        default_factory=lambda: [("Urban", 700), ("Suburban", 700), ("Rural", 700)])
    urban_k_clusters: int = 3
    urban_sigma_m: float = 120.0
    suburban_alpha: float = 0.3
    suburban_k_clusters: int = 2
    suburban_sigma_m: float = 200.0
    seed: int = 0

    # channel
    carrier_hz: float = 2e9
    bandwidth_hz: float = 20e6
    noise_dbm_per_hz: float = -174.0
    p_uav_dbm: float = 23.0
    p_gbs_dbm: float = 43.0
    g_uav_dbi: float = 2.0
    g_gbs_dbi: float = 15.0
    gbs_pos: tuple = (1000.0, 1000.0, 25.0)
    a_env: float = 9.61
    b_env: float = 0.16
    eta_los_db: float = 1.0
    eta_nlos_db: float = 20.0
    kappa_gbs: float = 3.8
    d0_m: float = 100.0
    shadow_sigma_db: float = 8.0
    rate_threshold_bps: float = 1e6

    # env
    h_min_m: float = 80.0
    h_max_m: float = 120.0
    d_min_m: float = 100.0
    step_xy_m: float = 50.0
    step_z_m: float = 10.0
    horizon_steps: int = 200
    n_neighbors_obs: int = 3
    n_users_obs: int = 10

    # reward
    reward_weights: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    collision_penalty_eta: float = 5.0
    norm_warmup_min: int = 100
    norm_epsilon: float = 1e-8

    # learner
    actor_hidden: tuple = (64, 64)
    critic_hidden: tuple = (128, 128)
    lr_actor: float = 5e-4
    lr_critic: float = 1e-3
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    minibatch_size: int = 64
    ppo_epochs: int = 4
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    checkpoint_every: int = 100

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.area_side_m > 0:
            raise ConfigError("area_side_m must be positive")
        if self.n_uavs < 1:
            raise ConfigError("n_uavs must be >= 1")
        if not 0 < self.h_min_m < self.h_max_m:
            raise ConfigError("need 0 < h_min_m < h_max_m")
        if not self.d_min_m > 0:
            raise ConfigError("d_min_m must be positive")
        if not self.bandwidth_hz > 0:
            raise ConfigError("bandwidth_hz must be positive")
        if not self.carrier_hz > 0:
            raise ConfigError("carrier_hz must be positive")
        for name in ("p_uav_dbm", "p_gbs_dbm", "g_uav_dbi", "g_gbs_dbi", "noise_dbm_per_hz"):
            # -inf dBm is allowed: it switches a transmitter off
            if math.isnan(getattr(self, name)) or getattr(self, name) == math.inf:
                raise ConfigError(f"{name} must not be NaN or +inf")
        if not self.phase_schedule:
            raise ConfigError("phase_schedule must not be empty")
        for phase, count in self.phase_schedule:
            if phase not in PHASES:
                raise ConfigError(f"unknown phase {phase!r} in phase_schedule")
            if count < 0:
                raise ConfigError("phase episode counts must be >= 0")
        for phase, m in self.n_users_per_phase.items():
            if phase not in PHASES:
                raise ConfigError(f"unknown phase {phase!r} in n_users_per_phase")
            if m < 1:
                raise ConfigError("every phase needs at least one user")
        for phase, _ in self.phase_schedule:
            if phase not in self.n_users_per_phase:
                raise ConfigError(f"no user count configured for phase {phase}")
        if len(self.reward_weights) != 5:
            raise ConfigError("reward_weights needs exactly 5 entries")
        if any(w < 0 for w in self.reward_weights) or not any(w > 0 for w in self.reward_weights):
            raise ConfigError("reward_weights must be >= 0 and not all zero")
        if self.collision_penalty_eta < 0:
            raise ConfigError("collision_penalty_eta must be >= 0")
        if not 0 <= self.suburban_alpha <= 1:
            raise ConfigError("suburban_alpha must lie in [0, 1]")
        if self.horizon_steps < 1:
            raise ConfigError("horizon_steps must be >= 1")
        if len(self.gbs_pos) != 3:
            raise ConfigError("gbs_pos needs three coordinates")

    @property
    def n_nodes(self) -> int:
        return self.n_uavs + 1

    @property
    def total_episodes(self) -> int:
        return sum(count for _, count in self.phase_schedule)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


SECTIONS = {
    "scenario": ("area_side_m", "n_uavs", "n_users_per_phase", "phase_schedule",
                 "urban_k_clusters", "urban_sigma_m", "suburban_alpha",
                 "suburban_k_clusters", "suburban_sigma_m", "seed"),
    "channel": ("carrier_hz", "bandwidth_hz", "noise_dbm_per_hz", "p_uav_dbm", "p_gbs_dbm",
                "g_uav_dbi", "g_gbs_dbi", "gbs_pos", "a_env", "b_env", "eta_los_db",
                "eta_nlos_db", "kappa_gbs", "d0_m", "shadow_sigma_db", "rate_threshold_bps"),
    "env": ("h_min_m", "h_max_m", "d_min_m", "step_xy_m", "step_z_m", "horizon_steps",
            "n_neighbors_obs", "n_users_obs"),
    "reward": ("reward_weights", "collision_penalty_eta", "norm_warmup_min", "norm_epsilon"),
    "learner": ("actor_hidden", "critic_hidden", "lr_actor", "lr_critic", "gamma", "gae_lambda",
                "clip_eps", "minibatch_size", "ppo_epochs", "entropy_coef", "max_grad_norm",
                "checkpoint_every"),
}
_FIELD_TYPES = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
_DEFAULTS = ScenarioConfig()


def _format_value(value: Any) -> str:
    if isinstance(value, dict):
        return ", ".join(f"{k}:{v}" for k, v in value.items())
    if isinstance(value, list):
        return ", ".join(f"{k}:{v}" for k, v in value)
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(key: str, text: str) -> Any:
    default = getattr(_DEFAULTS, key)
    text = text.strip()
    try:
        if isinstance(default, dict):
            pairs = [p.split(":") for p in text.split(",") if p.strip()]
            return {k.strip(): int(v) for k, v in pairs}
        if isinstance(default, list):
            pairs = [p.split(":") for p in text.split(",") if p.strip()]
            return [(k.strip(), int(v)) for k, v in pairs]
        if isinstance(default, tuple):
            elem = type(default[0])
            return tuple(elem(float(v)) if elem is int else elem(v)
                         for v in text.split(",") if v.strip())
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {text!r}: {exc}") from None


def to_text(cfg: ScenarioConfig) -> str:
    parser = configparser.ConfigParser()
    for section, keys in SECTIONS.items():
        parser[section] = {k: _format_value(getattr(cfg, k)) for k in keys}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def from_text(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    changes = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, value in parser[section].items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            changes[key] = _parse_value(key, value)
    return dataclasses.replace(base or ScenarioConfig(), **changes)


def load(path: str | os.PathLike) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return from_text(fh.read())


def save(cfg: ScenarioConfig, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_text(cfg))


def apply_env_overrides(cfg: ScenarioConfig, environ=None) -> ScenarioConfig:
    """Apply ``AEROSWARM_<FIELD>=value`` overrides, e.g. ``AEROSWARM_N_UAVS=2``."""
    environ = os.environ if environ is None else environ
    changes = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown override {name}")
        changes[key] = _parse_value(key, value)
    return dataclasses.replace(cfg, **changes) if changes else cfg
