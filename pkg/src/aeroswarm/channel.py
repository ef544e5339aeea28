"""Radio propagation: GBS and air-to-ground path loss, association, SINR and rate.

All functions broadcast over numpy arrays. Node 0 is always the ground base
station; nodes 1..N are the UAVs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig

SPEED_OF_LIGHT = 299_792_458.0


def db_to_linear(db):
    return np.power(10.0, np.asarray(db, dtype=float) / 10.0)


def linear_to_db(lin):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(lin, dtype=float))


def fspl_db(dist_m, freq_hz):
    """Free-space path loss 20 log10(4 pi d f / c)."""
    dist_m = np.asarray(dist_m, dtype=float)
    freq_hz = np.asarray(freq_hz, dtype=float)
    if np.any(dist_m <= 0) or np.any(freq_hz <= 0):
        raise ValueError("distance and frequency must be positive")
    return 20.0 * np.log10(4.0 * np.pi * dist_m * freq_hz / SPEED_OF_LIGHT)


def p_los(theta_deg, a: float, b: float):
    """Logistic LoS probability in the elevation angle (degrees)."""
    theta_deg = np.asarray(theta_deg, dtype=float)
    return 1.0 / (1.0 + a * np.exp(-b * (theta_deg - a)))


@dataclass
class LinkGeometry:
    horizontal_dist_m: np.ndarray
    altitude_m: np.ndarray
    elevation_deg: np.ndarray
    dist_3d_m: np.ndarray

    @classmethod
    def between(cls, uav_pos, user_xy) -> "LinkGeometry":
        """Geometry of every (user, UAV) pair; arrays come out shaped (M, N)."""
        uav_pos = np.atleast_2d(np.asarray(uav_pos, dtype=float))
        user_xy = np.atleast_2d(np.asarray(user_xy, dtype=float))
        delta = user_xy[:, None, :] - uav_pos[None, :, :2]
        r = np.hypot(delta[..., 0], delta[..., 1])
        h = np.broadcast_to(uav_pos[None, :, 2], r.shape)
        return cls.from_rh(r, h)

    @classmethod
    def from_rh(cls, r, h) -> "LinkGeometry":
        r = np.asarray(r, dtype=float)
        h = np.asarray(h, dtype=float)
        # arctan2 maps r = 0 to exactly 90 degrees
        theta = np.degrees(np.arctan2(h, r))
        return cls(r, h, theta, np.hypot(r, h))


def a2g_pathloss_db(geom: LinkGeometry, cfg: ScenarioConfig):
    """Mean air-to-ground loss: LoS/NLoS excess losses weighted by the LoS probability."""
    fspl = fspl_db(geom.dist_3d_m, cfg.carrier_hz)
    plos = p_los(geom.elevation_deg, cfg.a_env, cfg.b_env)
    return plos * (fspl + cfg.eta_los_db) + (1.0 - plos) * (fspl + cfg.eta_nlos_db)


def gbs_pathloss_db(dist_m, shadow_db, cfg: ScenarioConfig):
    """Log-distance terrestrial loss with frozen log-normal shadowing."""
    d = np.maximum(np.asarray(dist_m, dtype=float), cfg.d0_m)
    pl0 = fspl_db(cfg.d0_m, cfg.carrier_hz)
    return pl0 + 10.0 * cfg.kappa_gbs * np.log10(d / cfg.d0_m) + shadow_db


@dataclass
class LinkReport:
    """Per-user link state, columnar over users.

    ``pathloss_db`` and ``p_los`` have one column per node (GBS first);
    the GBS column of ``p_los`` is zero because that link has no LoS model.
    """
    serving_node: np.ndarray   # (M,) int
    sinr_linear: np.ndarray    # (M,)
    rate_bps: np.ndarray       # (M,)
    pathloss_db: np.ndarray    # (M, N+1)
    p_los: np.ndarray          # (M, N+1)
    rx_power_mw: np.ndarray    # (M, N+1)
    node_load: np.ndarray      # (N+1,) users associated with each node

    def __len__(self):
        return len(self.serving_node)

    @property
    def n_users(self) -> int:
        return len(self.serving_node)


def node_powers_mw(cfg: ScenarioConfig) -> np.ndarray:
    p = np.full(cfg.n_nodes, cfg.p_uav_dbm)
    p[0] = cfg.p_gbs_dbm
    return db_to_linear(p)


def node_gains_dbi(cfg: ScenarioConfig) -> np.ndarray:
    g = np.full(cfg.n_nodes, cfg.g_uav_dbi)
    g[0] = cfg.g_gbs_dbi
    return g


def pathloss_matrix(uav_pos, user_xy, gbs_shadow_db, cfg: ScenarioConfig):
    """Loss of every (user, node) link in dB plus the matching LoS probabilities."""
    user_xy = np.atleast_2d(np.asarray(user_xy, dtype=float))
    m = len(user_xy)
    gx, gy, gz = cfg.gbs_pos
    d_gbs = np.sqrt((user_xy[:, 0] - gx) ** 2 + (user_xy[:, 1] - gy) ** 2 + gz**2)
    geom = LinkGeometry.between(uav_pos, user_xy)
    loss = np.empty((m, cfg.n_nodes))
    loss[:, 0] = gbs_pathloss_db(d_gbs, gbs_shadow_db, cfg)
    loss[:, 1:] = a2g_pathloss_db(geom, cfg)
    plos = np.zeros((m, cfg.n_nodes))
    plos[:, 1:] = p_los(geom.elevation_deg, cfg.a_env, cfg.b_env)
    return loss, plos


def evaluate_links(world, cfg: ScenarioConfig) -> LinkReport:
    """Max-received-power association, SINR and equal-split rates for all users.

    ``world`` needs ``uav_pos`` (N, 3), ``users.positions`` (M, 2) and
    ``shadow_table`` (M, N+1) in dB.
    """
    user_xy = world.users.positions
    shadow = np.asarray(world.shadow_table)
    loss, plos = pathloss_matrix(world.uav_pos, user_xy, shadow[:, 0], cfg)
    # UAV columns of the table are zero by default; they add like the GBS one
    loss[:, 1:] += shadow[:, 1:]
    gain = db_to_linear(node_gains_dbi(cfg)[None, :] - loss)
    rx = node_powers_mw(cfg)[None, :] * gain
    return _links_from_rx(rx, loss, plos, cfg)


def _links_from_rx(rx, loss, plos, cfg: ScenarioConfig) -> LinkReport:
    m, n_nodes = rx.shape
    # first maximum wins, so ties go to the lowest node id
    serving = np.argmax(rx, axis=1)
    load = np.bincount(serving, minlength=n_nodes)
    band = cfg.bandwidth_hz / load[serving]
    noise_mw = db_to_linear(cfg.noise_dbm_per_hz) * band
    signal = rx[np.arange(m), serving]
    others = np.ones_like(rx, dtype=bool)
    others[np.arange(m), serving] = False
    interference = np.where(others, rx, 0.0).sum(axis=1)
    sinr = signal / (noise_mw + interference)
    rate = band * np.log2(1.0 + sinr)
    return LinkReport(serving, sinr, rate, loss, plos, rx, load)
