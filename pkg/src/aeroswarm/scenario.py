"""Ground-user spatial samplers and the phase (task-chain) schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import PHASES, ScenarioConfig

MAX_REJECTIONS = 10_000


class SamplingError(RuntimeError):
    pass


@dataclass
class UserField:
    positions: np.ndarray  # (M, 2) metres
    phase_id: str

    def __len__(self):
        return len(self.positions)


@dataclass
class UrbanParams:
    k_clusters: int = 3
    sigma_u_m: float = 120.0
    # fixed hotspot centres; drawn from the stream when None
    centers: np.ndarray | None = None


@dataclass
class SuburbanParams:
    alpha: float = 0.3
    k_clusters: int = 2
    weights: np.ndarray | None = None
    means: np.ndarray | None = None
    covariances: np.ndarray | None = None
    sigma_m: float = 200.0

    def resolved(self, area_side: float, rng: np.random.Generator) -> "SuburbanParams":
        k = self.k_clusters
        weights = np.full(k, 1.0 / k) if self.weights is None else np.asarray(self.weights, float)
        means = self.means
        if means is None:
            means = _draw_centers(k, area_side, 2 * self.sigma_m, rng)
        covs = self.covariances
        if covs is None:
            covs = np.repeat(np.eye(2)[None] * self.sigma_m**2, k, axis=0)
        out = SuburbanParams(self.alpha, k, weights, np.asarray(means, float),
                             np.asarray(covs, float), self.sigma_m)
        out.check()
        return out

    def check(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        w = np.asarray(self.weights)
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise ValueError("mixture weights must be non-negative and sum to 1")
        for cov in np.asarray(self.covariances):
            if not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) <= 0):
                raise ValueError("covariances must be symmetric positive definite")


@dataclass
class PhaseParams:
    urban: UrbanParams = field(default_factory=UrbanParams)
    suburban: SuburbanParams = field(default_factory=SuburbanParams)

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "PhaseParams":
        return cls(
            UrbanParams(cfg.urban_k_clusters, cfg.urban_sigma_m),
            SuburbanParams(cfg.suburban_alpha, cfg.suburban_k_clusters,
                           sigma_m=cfg.suburban_sigma_m),
        )


def _draw_centers(k: int, side: float, margin: float, rng: np.random.Generator) -> np.ndarray:
    # keep a margin so a 2-sigma disk fits; degrade to the midpoint for tiny areas
    lo, hi = min(margin, side / 2), max(side - margin, side / 2)
    return rng.uniform(lo, hi, size=(k, 2))


def _gaussian_in_area(mean, chol, side, rng) -> np.ndarray:
    for _ in range(MAX_REJECTIONS):
        p = mean + chol @ rng.standard_normal(2)
        if 0.0 <= p[0] <= side and 0.0 <= p[1] <= side:
            return p
    raise SamplingError(f"rejection sampling exhausted around {mean}")


def _user_count(cfg: ScenarioConfig, phase: str, m: int | None) -> int:
    return cfg.n_users_per_phase[phase] if m is None else m


def sample_urban(cfg: ScenarioConfig, params: PhaseParams, rng: np.random.Generator,
                 m: int | None = None) -> UserField:
    """Thomas cluster process with a fixed user count.

    Each user picks one of K hotspots uniformly and is scattered around it
    with an isotropic Gaussian; out-of-area draws are rejected, not clipped.
    """
    up = params.urban
    if up.k_clusters < 1:
        raise ValueError("k_clusters must be >= 1")
    if up.sigma_u_m < 0:
        raise ValueError("sigma_u_m must be >= 0")
    side = cfg.area_side_m
    m = _user_count(cfg, "Urban", m)
    centers = up.centers
    if centers is None:
        centers = _draw_centers(up.k_clusters, side, 2 * up.sigma_u_m, rng)
    centers = np.asarray(centers, float)
    labels = rng.integers(0, len(centers), size=m)
    chol = np.eye(2) * up.sigma_u_m
    pts = np.empty((m, 2))
    for i, k in enumerate(labels):
        pts[i] = _gaussian_in_area(centers[k], chol, side, rng)
    return UserField(pts, "Urban")


def sample_suburban(cfg: ScenarioConfig, params: PhaseParams, rng: np.random.Generator,
                    m: int | None = None) -> UserField:
    """Gaussian mixture over a uniform background (fraction ``alpha``)."""
    side = cfg.area_side_m
    m = _user_count(cfg, "Suburban", m)
    sp = params.suburban.resolved(side, rng)
    chols = [np.linalg.cholesky(c) for c in sp.covariances]
    background = rng.random(m) < sp.alpha
    labels = rng.choice(sp.k_clusters, size=m, p=sp.weights)
    pts = np.empty((m, 2))
    for i in range(m):
        if background[i]:
            pts[i] = rng.uniform(0.0, side, size=2)
        else:
            k = labels[i]
            pts[i] = _gaussian_in_area(sp.means[k], chols[k], side, rng)
    return UserField(pts, "Suburban")


def sample_rural(cfg: ScenarioConfig, rng: np.random.Generator, m: int | None = None) -> UserField:
    m = _user_count(cfg, "Rural", m)
    return UserField(rng.uniform(0.0, cfg.area_side_m, size=(m, 2)), "Rural")


def sample_phase(cfg: ScenarioConfig, phase: str, rng: np.random.Generator,
                 params: PhaseParams | None = None) -> UserField:
    params = params or PhaseParams.from_config(cfg)
    if phase == "Urban":
        return sample_urban(cfg, params, rng)
    if phase == "Suburban":
        return sample_suburban(cfg, params, rng)
    if phase == "Rural":
        return sample_rural(cfg, rng)
    raise ValueError(f"unknown phase {phase!r}; expected one of {PHASES}")


def phase_for_episode(cfg: ScenarioConfig, episode_index: int) -> str:
    if episode_index < 0:
        raise ValueError("episode_index must be >= 0")
    upper = 0
    for phase, count in cfg.phase_schedule:
        upper += count
        if episode_index < upper:
            return phase
    return cfg.phase_schedule[-1][0]


def phase_start_episodes(cfg: ScenarioConfig) -> list[int]:
    """First episode index of every scheduled phase."""
    starts, acc = [], 0
    for _, count in cfg.phase_schedule:
        starts.append(acc)
        acc += count
    return starts
