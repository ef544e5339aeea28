"""Multi-UAV downlink environment with hard safety constraints."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import LinkReport, evaluate_links
from .config import ScenarioConfig
from .reward import RewardVector, compute_raw
from .scenario import MAX_REJECTIONS, PhaseParams, UserField, phase_for_episode, sample_phase

N_ACTIONS = 7
ACTION_NAMES = ("+x", "-x", "+y", "-y", "+z", "-z", "hover")
HOVER = 6
GRID_CELLS = 4  # occupancy grid is GRID_CELLS x GRID_CELLS


class InfeasibleLayout(RuntimeError):
    pass


@dataclass
class WorldState:
    uav_pos: np.ndarray        # (N, 3)
    users: UserField
    shadow_table: np.ndarray   # (M, N+1) dB; only the GBS column is drawn
    step_index: int
    phase_id: str
    episode_index: int
    links: LinkReport | None = None
    collided: np.ndarray | None = None


def action_deltas(cfg: ScenarioConfig) -> np.ndarray:
    sxy, sz = cfg.step_xy_m, cfg.step_z_m
    return np.array([
        [sxy, 0, 0], [-sxy, 0, 0],
        [0, sxy, 0], [0, -sxy, 0],
        [0, 0, sz], [0, 0, -sz],
        [0, 0, 0],
    ], dtype=float)


def pairwise_distances(pos: np.ndarray) -> np.ndarray:
    diff = pos[:, None, :] - pos[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def constraint_violations(pos: np.ndarray, cfg: ScenarioConfig) -> list[str]:
    """Names of C1/C2/C3 violations in a UAV layout (empty when feasible)."""
    bad = []
    tol = 1e-9
    z = pos[:, 2]
    if np.any(z < cfg.h_min_m - tol) or np.any(z > cfg.h_max_m + tol):
        bad.append("C1")
    xy = pos[:, :2]
    if np.any(xy < -tol) or np.any(xy > cfg.area_side_m + tol):
        bad.append("C2")
    if len(pos) > 1:
        d = pairwise_distances(pos)
        iu = np.triu_indices(len(pos), 1)
        if np.any(d[iu] < cfg.d_min_m - tol):
            bad.append("C3")
    return bad


def clamp_to_box(pos: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    out = pos.copy()
    out[:, :2] = np.clip(out[:, :2], 0.0, cfg.area_side_m)
    out[:, 2] = np.clip(out[:, 2], cfg.h_min_m, cfg.h_max_m)
    return out


def initial_layout(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    n = cfg.n_uavs
    pos = np.empty((n, 3))
    placed = 0
    for _ in range(MAX_REJECTIONS):
        cand = np.array([rng.uniform(0, cfg.area_side_m), rng.uniform(0, cfg.area_side_m),
                         rng.uniform(cfg.h_min_m, cfg.h_max_m)])
        if placed and np.min(np.linalg.norm(pos[:placed] - cand, axis=1)) < cfg.d_min_m:
            continue
        pos[placed] = cand
        placed += 1
        if placed == n:
            return pos
    raise InfeasibleLayout(f"no layout with d_min={cfg.d_min_m} after {MAX_REJECTIONS} draws")


def draw_shadowing(cfg: ScenarioConfig, m: int, rng: np.random.Generator) -> np.ndarray:
    table = np.zeros((m, cfg.n_nodes))
    table[:, 0] = rng.normal(0.0, cfg.shadow_sigma_db, size=m)
    return table


def observation_dim(cfg: ScenarioConfig) -> int:
    return 3 + 3 * cfg.n_neighbors_obs + 3 * cfg.n_users_obs + 1


def global_state_dim(cfg: ScenarioConfig) -> int:
    return 3 * cfg.n_uavs + cfg.n_nodes + GRID_CELLS**2 + 1


def _normalized_pos(pos: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    out = np.empty_like(pos)
    out[..., :2] = pos[..., :2] / cfg.area_side_m
    out[..., 2] = (pos[..., 2] - cfg.h_min_m) / (cfg.h_max_m - cfg.h_min_m)
    return out


def observations(state: WorldState, cfg: ScenarioConfig) -> list[np.ndarray]:
    """Fixed-length local view of every agent; no phase information."""
    pos = state.uav_pos
    n = len(pos)
    users = state.users.positions
    m = len(users)
    serving = state.links.serving_node
    kn, lu = cfg.n_neighbors_obs, cfg.n_users_obs
    side = cfg.area_side_m
    own = _normalized_pos(pos, cfg)
    dists = pairwise_distances(pos)
    obs = []
    for i in range(n):
        neigh = np.zeros((kn, 3))
        others = [j for j in np.argsort(dists[i], kind="stable") if j != i][:kn]
        for row, j in enumerate(others):
            neigh[row, :2] = (pos[j, :2] - pos[i, :2]) / side
            neigh[row, 2] = (pos[j, 2] - pos[i, 2]) / (cfg.h_max_m - cfg.h_min_m)
        near = np.zeros((lu, 3))
        if m:
            rel = users - pos[i, :2]
            order = np.argsort(np.hypot(rel[:, 0], rel[:, 1]), kind="stable")[:lu]
            near[:len(order), :2] = rel[order] / side
            near[:len(order), 2] = serving[order] == i + 1
        load = np.count_nonzero(serving == i + 1) / max(m, 1)
        obs.append(np.concatenate([own[i], neigh.ravel(), near.ravel(), [load]]))
    return obs


def global_state(state: WorldState, cfg: ScenarioConfig) -> np.ndarray:
    m = len(state.users)
    pos = _normalized_pos(state.uav_pos, cfg).ravel()
    load = np.bincount(state.links.serving_node, minlength=cfg.n_nodes) / max(m, 1)
    cells = np.clip((state.users.positions / cfg.area_side_m * GRID_CELLS).astype(int),
                    0, GRID_CELLS - 1)
    grid = np.bincount(cells[:, 0] * GRID_CELLS + cells[:, 1],
                       minlength=GRID_CELLS**2) / max(m, 1)
    frac = state.step_index / cfg.horizon_steps
    return np.concatenate([pos, load, grid, [frac]])


def reset(cfg: ScenarioConfig, episode_index: int, rng: np.random.Generator,
          params: PhaseParams | None = None):
    phase = phase_for_episode(cfg, episode_index)
    users = sample_phase(cfg, phase, rng, params)
    shadow = draw_shadowing(cfg, len(users), rng)
    uav_pos = initial_layout(cfg, rng)
    state = WorldState(uav_pos, users, shadow, 0, phase, episode_index,
                       collided=np.zeros(cfg.n_uavs, dtype=bool))
    state.links = evaluate_links(state, cfg)
    return state, observations(state, cfg)


def with_uavs(state: WorldState, uav_pos: np.ndarray, cfg: ScenarioConfig) -> WorldState:
    """Copy of ``state`` with UAVs moved (no constraint handling) and links refreshed."""
    new = replace(state, uav_pos=np.asarray(uav_pos, dtype=float).copy(), links=None)
    new.links = evaluate_links(new, cfg)
    return new


def resolve_moves(prev: np.ndarray, tentative: np.ndarray, cfg: ScenarioConfig):
    """Revert every UAV involved in a separation violation until none remain."""
    pos = tentative.copy()
    flagged = np.zeros(len(pos), dtype=bool)
    n = len(pos)
    if n < 2:
        return pos, flagged
    iu, ju = np.triu_indices(n, 1)
    while True:
        d = pairwise_distances(pos)[iu, ju]
        bad = d < cfg.d_min_m
        if not bad.any():
            return pos, flagged
        offenders = np.zeros(n, dtype=bool)
        offenders[iu[bad]] = True
        offenders[ju[bad]] = True
        flagged |= offenders
        pos[offenders] = prev[offenders]


def step(state: WorldState, actions, cfg: ScenarioConfig):
    actions = np.asarray(actions)
    if actions.shape != (cfg.n_uavs,) or not np.issubdtype(actions.dtype, np.integer):
        raise ValueError(f"expected {cfg.n_uavs} integer actions, got {actions!r}")
    if np.any((actions < 0) | (actions >= N_ACTIONS)):
        raise ValueError(f"action index out of range 0..{N_ACTIONS - 1}: {actions!r}")
    prev = state.uav_pos
    tentative = clamp_to_box(prev + action_deltas(cfg)[actions], cfg)
    pos, collided = resolve_moves(prev, tentative, cfg)
    new = WorldState(pos, state.users, state.shadow_table, state.step_index + 1,
                     state.phase_id, state.episode_index, collided=collided)
    new.links = evaluate_links(new, cfg)
    team = compute_raw(new.links, new, cfg)
    rewards = [team.with_collision(c) for c in collided]
    done = new.step_index >= cfg.horizon_steps
    return new, observations(new, cfg), rewards, done
