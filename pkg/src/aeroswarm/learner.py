"""Shared-actor multi-agent PPO with a centralised critic and decoupled reward scaling."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baseline, env
from .config import ScenarioConfig
from .metrics import (MetricsRecord, RewardWindow, compute_metrics, mean_fragments,
                      tail_length)
from .nn import (AdamState, MlpParams, NonFiniteError, backward, clip_by_global_norm,
                 forward, init_mlp)
from .reward import NormalizerState, compute_raw, scalarize
from .scenario import phase_for_episode, phase_start_episodes

log = logging.getLogger(__name__)

# per-episode random streams are keyed by (seed, episode, purpose)
STREAM_ENV, STREAM_ACT, STREAM_PPO, STREAM_RANDOM, STREAM_KMEANS = range(5)
STREAM_INIT = 1_000_003


def episode_rng(seed: int, episode: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, episode, purpose])


# ---------------------------------------------------------------- networks

def actor_input_dim(cfg: ScenarioConfig) -> int:
    return env.observation_dim(cfg) + cfg.n_uavs


def critic_input_dim(cfg: ScenarioConfig) -> int:
    return env.global_state_dim(cfg) + cfg.n_uavs


def with_agent_id(x: np.ndarray, n_agents: int) -> np.ndarray:
    """Append a one-hot agent id to a stack of per-agent rows (row i -> agent i)."""
    return np.concatenate([x, np.eye(n_agents)], axis=1)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def actor_forward(params: MlpParams, obs: np.ndarray):
    """Action probabilities and log-probabilities over the 7 moves."""
    logits, _ = forward(params, np.atleast_2d(obs))
    logp = log_softmax(logits)
    if not np.all(np.isfinite(logp)):
        raise NonFiniteError("actor produced non-finite log-probabilities")
    return np.exp(logp), logp


def critic_forward(params: MlpParams, states: np.ndarray) -> np.ndarray:
    v, _ = forward(params, np.atleast_2d(states))
    if not np.all(np.isfinite(v)):
        raise NonFiniteError("critic produced non-finite values")
    return v[:, 0]


def actor_loss_and_grad(params: MlpParams, obs, actions, old_logp, adv,
                        clip_eps: float, entropy_coef: float):
    """Negative clipped surrogate minus entropy bonus, with its exact gradient."""
    logits, acts = forward(params, obs)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    b = len(actions)
    rows = np.arange(b)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    unclipped_term = ratio * adv
    clipped_term = clipped * adv
    surrogate = np.minimum(unclipped_term, clipped_term)
    entropy = -(probs * logp_all).sum(axis=1)
    loss = -surrogate.mean() - entropy_coef * entropy.mean()
    if not np.isfinite(loss):
        raise NonFiniteError(f"actor loss is {loss}")

    # the min follows the unclipped branch whenever it is the smaller one
    active = unclipped_term <= clipped_term
    coef = np.where(active, unclipped_term, 0.0)
    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    g_logits = -(coef[:, None] * (onehot - probs)) / b
    g_logits += entropy_coef * probs * (logp_all + entropy[:, None]) / b
    grads = backward(params, acts, g_logits)
    stats = {
        "actor_loss": float(loss),
        "surrogate": float(surrogate.mean()),
        "entropy": float(entropy.mean()),
        "ratio_mean": float(ratio.mean()),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
        "approx_kl": float(np.mean(old_logp - logp)),
    }
    return loss, grads, stats


def critic_loss_and_grad(params: MlpParams, states, targets):
    v, acts = forward(params, states)
    err = v[:, 0] - targets
    loss = float(np.mean(err**2))
    if not np.isfinite(loss):
        raise NonFiniteError(f"critic loss is {loss}")
    g = (2.0 / len(targets)) * err[:, None]
    return loss, backward(params, acts, g)


def params_checksum(params: MlpParams) -> str:
    h = hashlib.sha256()
    for a in params.arrays():
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- advantages

def gae(rewards, values, bootstrap_value: float, gamma: float, lam: float):
    """Generalised advantage estimates and value targets for one trajectory.

    ``bootstrap_value`` is V(s_T) for a horizon cut and 0 for a true terminal.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape or rewards.ndim != 1 or len(rewards) < 1:
        raise ValueError("rewards and values must be equal-length non-empty 1-D sequences")
    t_len = len(rewards)
    adv = np.empty(t_len)
    next_value, running = float(bootstrap_value), 0.0
    for t in reversed(range(t_len)):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


# ---------------------------------------------------------------- trainer state

@dataclass
class TrainerState:
    actor: MlpParams
    critic: MlpParams
    actor_opt: AdamState
    critic_opt: AdamState
    norm: NormalizerState
    next_episode: int = 0
    reward_window: RewardWindow = field(default_factory=RewardWindow)

    @classmethod
    def fresh(cls, cfg: ScenarioConfig) -> "TrainerState":
        rng = np.random.default_rng([cfg.seed, STREAM_INIT])
        actor = init_mlp([actor_input_dim(cfg), *cfg.actor_hidden, env.N_ACTIONS], rng, 0.01)
        critic = init_mlp([critic_input_dim(cfg), *cfg.critic_hidden, 1], rng, 1.0)
        return cls(actor, critic, AdamState.for_params(actor, cfg.lr_actor),
                   AdamState.for_params(critic, cfg.lr_critic), NormalizerState.from_config(cfg))


@dataclass
class RolloutBuffer:
    obs: np.ndarray          # (T, N, obs_dim + N)
    states: np.ndarray       # (T, N, state_dim + N)
    actions: np.ndarray      # (T, N)
    logp: np.ndarray         # (T, N)
    values: np.ndarray       # (T, N)
    raw: np.ndarray          # (T, 5) team reward vector
    collided: np.ndarray     # (T, N)
    bootstrap: np.ndarray    # (N,) V(s_T)
    actor_checksum: str
    rewards: np.ndarray | None = None  # (T, N), filled by scalarize_buffer

    def __len__(self):
        return self.actions.shape[0]


def _agent_inputs(state, obs, cfg):
    n = cfg.n_uavs
    o = with_agent_id(np.asarray(obs), n)
    s = with_agent_id(np.tile(env.global_state(state, cfg), (n, 1)), n)
    return o, s


def collect_rollout(cfg: ScenarioConfig, ts: TrainerState, state0, rng: np.random.Generator,
                    on_step=None):
    """Run one episode with the stochastic shared actor.

    Returns the filled buffer and the per-step metric fragments and
    team reward vectors (for episode metrics).
    """
    n, t_len = cfg.n_uavs, cfg.horizon_steps
    od, sd = actor_input_dim(cfg), critic_input_dim(cfg)
    buf = RolloutBuffer(
        np.empty((t_len, n, od)), np.empty((t_len, n, sd)), np.empty((t_len, n), dtype=np.int64),
        np.empty((t_len, n)), np.empty((t_len, n)), np.empty((t_len, 5)),
        np.zeros((t_len, n), dtype=bool), np.zeros(n), params_checksum(ts.actor))
    fragments = []
    state, obs = state0, env.observations(state0, cfg)
    for t in range(t_len):
        o, s = _agent_inputs(state, obs, cfg)
        probs, logp = actor_forward(ts.actor, o)
        # inverse-CDF sampling keeps exactly one uniform draw per agent
        u = rng.random(n)
        cdf = np.cumsum(probs, axis=1)
        actions = np.minimum((cdf < u[:, None]).sum(axis=1), env.N_ACTIONS - 1)
        buf.obs[t], buf.states[t], buf.actions[t] = o, s, actions
        buf.logp[t] = logp[np.arange(n), actions]
        buf.values[t] = critic_forward(ts.critic, s)
        state, obs, rewards, _ = env.step(state, actions, cfg)
        if on_step:
            on_step(state, actions)
        buf.raw[t] = rewards[0].as_array()
        buf.collided[t] = [r.collided for r in rewards]
        fragments.append(compute_metrics(state.links, state, cfg))
    _, s_last = _agent_inputs(state, obs, cfg)
    buf.bootstrap[:] = critic_forward(ts.critic, s_last)
    if params_checksum(ts.actor) != buf.actor_checksum:
        raise RuntimeError("actor parameters changed during rollout")
    return buf, fragments


def scalarize_buffer(buf: RolloutBuffer, norm: NormalizerState, cfg: ScenarioConfig) -> None:
    """Decoupled normalisation in collection order: update statistics, then z-score."""
    t_len, n = buf.actions.shape
    buf.rewards = np.empty((t_len, n))
    for t in range(t_len):
        norm.update(buf.raw[t])
        z = norm.normalize(buf.raw[t])
        for i in range(n):
            buf.rewards[t, i] = scalarize(z, buf.collided[t, i], cfg)


def ppo_update(buf: RolloutBuffer, ts: TrainerState, cfg: ScenarioConfig,
               rng: np.random.Generator) -> dict:
    """GAE, advantage standardisation and clipped-PPO / value updates on one buffer."""
    if buf.rewards is None:
        raise ValueError("buffer rewards must be scalarised before the update")
    t_len, n = buf.actions.shape
    adv = np.empty((t_len, n))
    targets = np.empty((t_len, n))
    for i in range(n):
        adv[:, i], targets[:, i] = gae(buf.rewards[:, i], buf.values[:, i], buf.bootstrap[i],
                                       cfg.gamma, cfg.gae_lambda)
    # flatten (step x agent) into one pool; the actor is shared
    obs = buf.obs.reshape(t_len * n, -1)
    states = buf.states.reshape(t_len * n, -1)
    actions = buf.actions.reshape(-1)
    old_logp = buf.logp.reshape(-1)
    adv = adv.reshape(-1)
    targets = targets.reshape(-1)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    history = []
    size = len(actions)
    for _ in range(cfg.ppo_epochs):
        perm = rng.permutation(size)
        for start in range(0, size, cfg.minibatch_size):
            idx = perm[start:start + cfg.minibatch_size]
            _, g_actor, stats = actor_loss_and_grad(
                ts.actor, obs[idx], actions[idx], old_logp[idx], adv[idx],
                cfg.clip_eps, cfg.entropy_coef)
            g_actor, stats["actor_grad_norm"] = clip_by_global_norm(g_actor, cfg.max_grad_norm)
            ts.actor = ts.actor_opt.step(ts.actor, g_actor)
            v_loss, g_critic = critic_loss_and_grad(ts.critic, states[idx], targets[idx])
            g_critic, stats["critic_grad_norm"] = clip_by_global_norm(g_critic, cfg.max_grad_norm)
            ts.critic = ts.critic_opt.step(ts.critic, g_critic)
            stats["value_loss"] = v_loss
            history.append(stats)
    ts.actor.check_finite()
    ts.critic.check_finite()
    out = {k: float(np.mean([h[k] for h in history])) for k in history[0]}
    out["first_ratio_mean"] = history[0]["ratio_mean"]
    return out


# ---------------------------------------------------------------- episode evaluation

def _tail_record(episode, phase, tag, fragments, rewards, cfg, window) -> MetricsRecord:
    tail = tail_length(cfg.horizon_steps)
    frag = mean_fragments(fragments[-tail:])
    total = float(np.mean(rewards[-tail:]))
    return MetricsRecord(episode, phase, tag, **frag, total_reward=total,
                         reward_variance_window=window.push(tag, total))


def run_policy(cfg: ScenarioConfig, state0, act, norm: NormalizerState, on_step=None):
    """Roll out ``act(state, obs) -> actions`` scoring rewards with frozen statistics."""
    fragments, totals = [], []
    state, obs = state0, env.observations(state0, cfg)
    for _ in range(cfg.horizon_steps):
        actions = act(state, obs)
        state, obs, rewards, _ = env.step(state, actions, cfg)
        if on_step:
            on_step(state, actions)
        z = norm.normalize(rewards[0].as_array())
        totals.append(np.mean([scalarize(z, r.collided, cfg) for r in rewards]))
        fragments.append(compute_metrics(state.links, state, cfg))
    return fragments, totals


def evaluate_baselines(cfg: ScenarioConfig, state0, episode: int, norm: NormalizerState,
                       window: RewardWindow) -> list[MetricsRecord]:
    """K-means and random-policy rows on the same users and shadowing as ``state0``."""
    seed, phase = cfg.seed, state0.phase_id
    sol = baseline.kmeans_place(state0, cfg, episode_rng(seed, episode, STREAM_KMEANS))
    placed = env.with_uavs(state0, sol.uav_pos, cfg)
    z = norm.normalize(compute_raw(placed.links, placed, cfg).as_array())
    frag = compute_metrics(placed.links, placed, cfg)
    k_total = scalarize(z, False, cfg)
    rows = [MetricsRecord(episode, phase, "kmeans", **frag, total_reward=k_total,
                          reward_variance_window=window.push("kmeans", k_total))]
    rng = episode_rng(seed, episode, STREAM_RANDOM)
    fragments, totals = run_policy(cfg, state0, lambda s, o: baseline.random_policy(s, rng), norm)
    rows.append(_tail_record(episode, phase, "random", fragments, totals, cfg, window))
    return rows


def greedy_actor(ts: TrainerState, cfg: ScenarioConfig):
    def act(state, obs):
        probs, _ = actor_forward(ts.actor, with_agent_id(np.asarray(obs), cfg.n_uavs))
        return probs.argmax(axis=1)
    return act


# ---------------------------------------------------------------- training loop

@dataclass
class TrainResult:
    state: TrainerState
    records: list
    update_stats: list


def checkpoint_episodes(cfg: ScenarioConfig) -> set[int]:
    """Episodes after which a checkpoint is written (periodic and phase ends)."""
    marks = {s for s in phase_start_episodes(cfg) if s > 0}
    if cfg.checkpoint_every > 0:
        marks |= set(range(cfg.checkpoint_every, cfg.total_episodes + 1, cfg.checkpoint_every))
    return marks


def train(cfg: ScenarioConfig, episodes: int | None = None, checkpoint_dir=None,
          resume: TrainerState | None = None, baselines: bool = True,
          on_record=None, trace=None) -> TrainResult:
    """Run the task chain from ``resume.next_episode`` (or 0) up to ``episodes``.

    ``on_record`` is called with every MetricsRecord as soon as it exists.
    """
    from .checkpoint import save_checkpoint

    ts = resume if resume is not None else TrainerState.fresh(cfg)
    end = cfg.total_episodes if episodes is None else episodes
    marks = checkpoint_episodes(cfg)
    records, update_stats = [], []
    for episode in range(ts.next_episode, end):
        phase = phase_for_episode(cfg, episode)
        state0, _ = env.reset(cfg, episode, episode_rng(cfg.seed, episode, STREAM_ENV))
        on_step = None if trace is None else (lambda s, a, e=episode: trace(e, s, a))
        buf, fragments = collect_rollout(cfg, ts, state0,
                                         episode_rng(cfg.seed, episode, STREAM_ACT), on_step)
        scalarize_buffer(buf, ts.norm, cfg)
        stats = ppo_update(buf, ts, cfg, episode_rng(cfg.seed, episode, STREAM_PPO))
        update_stats.append(stats)
        rows = [_tail_record(episode, phase, "gmappo", fragments, buf.rewards.mean(axis=1),
                             cfg, ts.reward_window)]
        if baselines:
            rows += evaluate_baselines(cfg, state0, episode, ts.norm, ts.reward_window)
        for r in rows:
            records.append(r)
            if on_record:
                on_record(r)
        ts.next_episode = episode + 1
        log.debug("episode %d %s cov=%.3f", episode, phase, rows[0].coverage)
        if checkpoint_dir is not None and (ts.next_episode in marks or ts.next_episode == end):
            path = Path(checkpoint_dir)
            path.mkdir(parents=True, exist_ok=True)
            save_checkpoint(ts, cfg, path / f"ckpt_{ts.next_episode:06d}.bin")
            save_checkpoint(ts, cfg, path / "latest.bin")
    return TrainResult(ts, records, update_stats)


def evaluate(cfg: ScenarioConfig, ts: TrainerState, episodes: int, baselines: bool = True,
             trace=None) -> list[MetricsRecord]:
    """Greedy rollouts of a trained actor; statistics stay frozen."""
    window = RewardWindow()
    records = []
    act = greedy_actor(ts, cfg)
    for episode in range(episodes):
        phase = phase_for_episode(cfg, episode)
        state0, _ = env.reset(cfg, episode, episode_rng(cfg.seed, episode, STREAM_ENV))
        on_step = None if trace is None else (lambda s, a, e=episode: trace(e, s, a))
        fragments, totals = run_policy(cfg, state0, act, ts.norm, on_step)
        records.append(_tail_record(episode, phase, "gmappo", fragments, totals, cfg, window))
        if baselines:
            records += evaluate_baselines(cfg, state0, episode, ts.norm, window)
    return records


