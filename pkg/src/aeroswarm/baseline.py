"""Non-learning reference policies: static K-means placement and uniform random moves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig
from .env import N_ACTIONS, clamp_to_box, constraint_violations, with_uavs

ALTITUDE_GRID_M = (80.0, 90.0, 100.0, 110.0, 120.0)


@dataclass
class PlacementSolution:
    uav_pos: np.ndarray
    objective_coverage: float


def wcss(points: np.ndarray, centroids: np.ndarray) -> float:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)
    return float(d2.min(axis=1).sum())


def lloyd(points: np.ndarray, k: int, rng: np.random.Generator, iters: int = 100,
          history: list | None = None) -> np.ndarray:
    """One Lloyd run seeded from k distinct user points."""
    centroids = points[rng.choice(len(points), size=k, replace=False)].copy()
    for _ in range(iters):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)
        labels = d2.argmin(axis=1)
        if history is not None:
            history.append(float(d2.min(axis=1).sum()))
        new = centroids.copy()
        for j in range(k):
            members = points[labels == j]
            # an emptied cluster keeps its previous centroid
            if len(members):
                new[j] = members.mean(axis=0)
        if np.array_equal(new, centroids):
            break
        centroids = new
    return centroids


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator, restarts: int = 20,
           iters: int = 100) -> np.ndarray:
    best, best_cost = None, np.inf
    for _ in range(restarts):
        c = lloyd(points, k, rng, iters)
        cost = wcss(points, c)
        if cost < best_cost:
            best, best_cost = c, cost
    return best


def _covered_by(state, node: int, cfg: ScenarioConfig) -> int:
    links = state.links
    return int(np.count_nonzero((links.serving_node == node)
                                & (links.rate_bps >= cfg.rate_threshold_bps)))


def repair_separation(pos: np.ndarray, anchor_xy: np.ndarray, cfg: ScenarioConfig,
                      max_rounds: int = 1000) -> np.ndarray:
    """Push UAVs apart horizontally until every pair is at least d_min apart.

    In a violating pair the UAV closer to ``anchor_xy`` stays put.
    """
    pos = pos.copy()
    n = len(pos)
    for _ in range(max_rounds):
        moved = False
        for i in range(n):
            for j in range(i + 1, n):
                if np.linalg.norm(pos[i] - pos[j]) >= cfg.d_min_m:
                    continue
                di = np.linalg.norm(pos[i, :2] - anchor_xy)
                dj = np.linalg.norm(pos[j, :2] - anchor_xy)
                stay, go = (i, j) if di <= dj else (j, i)
                pos[go] = _push_away(pos[stay], pos[go], cfg)
                moved = True
        if not moved:
            return pos
    raise RuntimeError("separation repair did not converge")


def _push_away(fixed: np.ndarray, mover: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    dz = mover[2] - fixed[2]
    r_needed = np.sqrt(max(cfg.d_min_m**2 - dz**2, 0.0)) + 1e-6
    sep = mover[:2] - fixed[:2]
    norm = np.linalg.norm(sep)
    base = sep / norm if norm > 0 else np.array([1.0, 0.0])
    # try the separating direction first, then rotate until the box allows it
    for angle in np.linspace(0.0, 2 * np.pi, 16, endpoint=False):
        c, s = np.cos(angle), np.sin(angle)
        direction = np.array([c * base[0] - s * base[1], s * base[0] + c * base[1]])
        cand = mover.copy()
        cand[:2] = fixed[:2] + direction * r_needed
        cand = clamp_to_box(cand[None], cfg)[0]
        if np.linalg.norm(cand - fixed) >= cfg.d_min_m:
            return cand
    raise RuntimeError("no room to separate UAVs")


def kmeans_place(state, cfg: ScenarioConfig, rng: np.random.Generator) -> PlacementSolution:
    """Perfect-information placement for the users in ``state``.

    Horizontal positions are K-means centroids; each UAV then scans the
    altitude grid and keeps the height that maximises its own covered users.
    """
    users = state.users.positions
    n = cfg.n_uavs
    if len(users) < n:
        raise ValueError(f"need at least {n} users for {n} centroids, got {len(users)}")
    centroids = kmeans(users, n, rng)
    mid_z = 0.5 * (cfg.h_min_m + cfg.h_max_m)
    pos = np.column_stack([centroids, np.full(n, mid_z)])
    pos = clamp_to_box(pos, cfg)
    grid = [h for h in ALTITUDE_GRID_M if cfg.h_min_m <= h <= cfg.h_max_m] or [mid_z]
    for i in range(n):
        best_h, best_cov = pos[i, 2], -1
        for h in grid:
            trial = pos.copy()
            trial[i, 2] = h
            cov = _covered_by(with_uavs(state, trial, cfg), i + 1, cfg)
            if cov > best_cov:
                best_h, best_cov = h, cov
        pos[i, 2] = best_h
    pos = repair_separation(pos, users.mean(axis=0), cfg)
    if constraint_violations(pos, cfg):
        raise RuntimeError("K-means placement violates constraints after repair")
    placed = with_uavs(state, pos, cfg)
    cov = float(np.mean(placed.links.rate_bps >= cfg.rate_threshold_bps))
    return PlacementSolution(pos, cov)


def random_policy(state, rng: np.random.Generator, n_uavs: int | None = None) -> np.ndarray:
    n = len(state.uav_pos) if n_uavs is None else n_uavs
    return rng.integers(0, N_ACTIONS, size=n)
