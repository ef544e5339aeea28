"""Raw multi-objective reward vector and decoupled per-component normalisation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import LinkReport, db_to_linear
from .config import ScenarioConfig

COMPONENTS = ("ee", "fair", "load", "cov", "qos")


@dataclass(frozen=True)
class RewardVector:
    r_ee: float      # Mbps per W
    r_fair: float
    r_load: float
    r_cov: float
    r_qos: float
    collided: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.r_ee, self.r_fair, self.r_load, self.r_cov, self.r_qos])

    def with_collision(self, collided: bool) -> "RewardVector":
        return RewardVector(self.r_ee, self.r_fair, self.r_load, self.r_cov, self.r_qos,
                            bool(collided))


def jain_index(x) -> float:
    """(sum x)^2 / (n sum x^2), defined as 0 for an all-zero vector."""
    x = np.asarray(x, dtype=float)
    sq = float(np.sum(x * x))
    if len(x) == 0 or sq == 0.0:
        return 0.0
    return float(np.sum(x)) ** 2 / (len(x) * sq)


def total_radiated_power_w(cfg: ScenarioConfig) -> float:
    mw = cfg.n_uavs * db_to_linear(cfg.p_uav_dbm) + db_to_linear(cfg.p_gbs_dbm)
    return float(mw) / 1e3


def compute_raw(links: LinkReport, world, cfg: ScenarioConfig) -> RewardVector:
    """Team reward shared by all agents; the collision flag is filled in per agent later."""
    rates = np.asarray(links.rate_bps, dtype=float)
    m = len(rates)
    if m == 0:
        raise ValueError("reward needs at least one user")
    r_ee = rates.sum() / 1e6 / total_radiated_power_w(cfg)
    r_fair = jain_index(rates)
    uav_load = np.asarray(links.node_load[1:], dtype=float)
    r_load = -float(np.std(uav_load)) / max(1.0, m / cfg.n_uavs)
    r_cov = float(np.mean(rates >= cfg.rate_threshold_bps))
    shortfall = (cfg.rate_threshold_bps - rates.min()) / cfg.rate_threshold_bps
    r_qos = -max(0.0, float(shortfall))
    return RewardVector(float(r_ee), r_fair, r_load, r_cov, r_qos)


@dataclass
class NormalizerState:
    """Welford running moments, one slot per reward component."""
    count: np.ndarray = field(default_factory=lambda: np.zeros(len(COMPONENTS)))
    mean: np.ndarray = field(default_factory=lambda: np.zeros(len(COMPONENTS)))
    m2: np.ndarray = field(default_factory=lambda: np.zeros(len(COMPONENTS)))
    warmup_min: int = 100
    epsilon: float = 1e-8

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "NormalizerState":
        return cls(warmup_min=cfg.norm_warmup_min, epsilon=cfg.norm_epsilon)

    def copy(self) -> "NormalizerState":
        return NormalizerState(self.count.copy(), self.mean.copy(), self.m2.copy(),
                               self.warmup_min, self.epsilon)

    @property
    def std(self) -> np.ndarray:
        # population std; zero before the first sample
        return np.sqrt(np.divide(self.m2, self.count, out=np.zeros_like(self.m2),
                                 where=self.count > 0))

    def update(self, raw) -> None:
        raw = np.asarray(raw, dtype=float)
        self.count = self.count + 1
        delta = raw - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (raw - self.mean)

    def normalize(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        z = (raw - self.mean) / (self.std + self.epsilon)
        return np.where(self.count < self.warmup_min, raw, z)


def scalarize(normalized, collided: bool, cfg: ScenarioConfig) -> float:
    w = np.asarray(cfg.reward_weights, dtype=float)
    return float(w @ np.asarray(normalized)) - cfg.collision_penalty_eta * float(collided)


def normalize_and_scalarize(raw: RewardVector, norm: NormalizerState, cfg: ScenarioConfig):
    """Update the running statistics with ``raw`` first, then z-score and weight it.

    Returns ``(R_total, norm)``; ``norm`` is updated in place and returned for
    convenience.
    """
    values = raw.as_array()
    norm.update(values)
    return scalarize(norm.normalize(values), raw.collided, cfg), norm
