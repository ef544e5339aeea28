import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aeroswarm import learner
from aeroswarm.checkpoint import load_checkpoint, save_checkpoint
from aeroswarm.config import ScenarioConfig
from aeroswarm.nn import AdamState, MlpParams, NonFiniteError, init_mlp


def scalar_forward(params, x):
    """Loop-only forward pass used as an oracle."""
    h = list(x)
    last = len(params.weights) - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        out = []
        for j in range(w.shape[1]):
            s = b[j]
            for i in range(w.shape[0]):
                s += h[i] * w[i, j]
            out.append(math.tanh(s) if layer < last else s)
        h = out
    mx = max(h)
    e = [math.exp(v - mx) for v in h]
    return [v / sum(e) for v in e]


def brute_gae(rewards, values, bootstrap, gamma, lam):
    t_len = len(rewards)
    v = list(values) + [bootstrap]
    deltas = [rewards[t] + gamma * v[t + 1] - v[t] for t in range(t_len)]
    return [sum((gamma * lam) ** l * deltas[t + l] for l in range(t_len - t)) for t in range(t_len)]


def numeric_grad(loss_fn, params, h=1e-5):
    arrays = [a.copy() for a in params.arrays()]
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + h
            up = loss_fn(MlpParams.from_arrays(arrays))
            a[idx] = orig - h
            down = loss_fn(MlpParams.from_arrays(arrays))
            a[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=1e-7):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


@pytest.fixture
def net():
    return init_mlp([4, 8, 7], np.random.default_rng(3), out_gain=1.0)


def test_zero_weights_give_uniform_policy():
    p = init_mlp([5, 6, 7], np.random.default_rng(0))
    zero = MlpParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])
    probs, logp = learner.actor_forward(zero, np.ones((3, 5)))
    np.testing.assert_allclose(probs, 1 / 7, rtol=1e-15)


def test_logit_shift_invariance(net):
    x = np.random.default_rng(1).normal(size=(5, 4))
    shifted = net.copy()
    shifted.biases[-1] = shifted.biases[-1] + 123.4
    np.testing.assert_allclose(learner.actor_forward(net, x)[0],
                               learner.actor_forward(shifted, x)[0], atol=1e-12)


def test_forward_matches_scalar_oracle(net):
    x = np.random.default_rng(2).normal(size=(6, 4))
    probs, _ = learner.actor_forward(net, x)
    for row, xi in zip(probs, x):
        np.testing.assert_allclose(row, scalar_forward(net, xi), rtol=1e-9, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 20.0))
def test_probabilities_normalised(seed, scale):
    rng = np.random.default_rng(seed)
    p = init_mlp([4, 8, 7], rng, out_gain=scale)
    probs, logp = learner.actor_forward(p, rng.normal(size=(10, 4)) * scale)
    assert np.all(np.abs(probs.sum(axis=1) - 1.0) < 1e-9)
    np.testing.assert_allclose(np.exp(logp), probs)


def test_nan_input_is_hard_error(net):
    with pytest.raises(NonFiniteError):
        learner.actor_forward(net, np.array([[np.nan, 0, 0, 0]]))


# ------------------------------------------------------------------ GAE

def test_gae_single_terminal_step():
    adv, tgt = learner.gae([2.0], [0.5], 0.0, 0.99, 0.95)
    assert adv[0] == 1.5 and tgt[0] == 2.0


def test_gae_lambda_one_is_monte_carlo():
    r = [1.0, -0.5, 2.0, 0.25, 3.0]
    v = [0.3, -0.1, 0.7, 1.1, 0.2]
    gamma = 0.9
    adv, _ = learner.gae(r, v, 0.0, gamma, 1.0)
    mc = [sum(gamma**l * r[t + l] for l in range(5 - t)) - v[t] for t in range(5)]
    np.testing.assert_allclose(adv, mc, rtol=1e-9, atol=1e-12)


def test_gae_lambda_zero_is_td():
    r = np.array([1.0, 2.0, 3.0])
    v = np.array([0.5, 0.1, -0.2])
    adv, _ = learner.gae(r, v, 0.7, 0.9, 0.0)
    np.testing.assert_allclose(adv, r + 0.9 * np.array([0.1, -0.2, 0.7]) - v, rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1), st.floats(0, 1), st.floats(0, 1),
       st.booleans())
def test_gae_matches_double_sum(t_len, seed, gamma, lam, terminal):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=t_len), rng.normal(size=t_len)
    boot = 0.0 if terminal else float(rng.normal())
    adv, tgt = learner.gae(r, v, boot, gamma, lam)
    expected = brute_gae(r, v, boot, gamma, lam)
    np.testing.assert_allclose(adv, expected, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(tgt, np.asarray(expected) + v, rtol=1e-9, atol=1e-9)


def test_gae_length_mismatch():
    with pytest.raises(ValueError):
        learner.gae([1.0, 2.0], [1.0], 0.0, 0.9, 0.9)


# ------------------------------------------------------------------ PPO losses

def actor_fixture(seed=0, perturb=0.0):
    rng = np.random.default_rng(seed)
    p = init_mlp([4, 8, 7], rng, out_gain=1.0)
    obs = rng.normal(size=(6, 4))
    actions = rng.integers(0, 7, size=6)
    _, logp = learner.actor_forward(p, obs)
    old = logp[np.arange(6), actions] + perturb * rng.normal(size=6)
    adv = rng.normal(size=6)
    return p, obs, actions, old, adv


def test_first_batch_ratio_is_one_and_surrogate_is_mean_advantage():
    p, obs, actions, old, adv = actor_fixture()
    _, _, stats = learner.actor_loss_and_grad(p, obs, actions, old, adv, 0.2, 0.0)
    assert stats["ratio_mean"] == 1.0
    assert stats["surrogate"] == pytest.approx(adv.mean(), rel=0, abs=1e-15)


def test_clip_uses_upper_bound_for_positive_advantage():
    p, obs, actions, old, _ = actor_fixture()
    adv = np.ones(6)
    # shift old log-probs so that every ratio equals 1.5
    _, _, stats = learner.actor_loss_and_grad(p, obs, actions, old - math.log(1.5), adv, 0.2, 0.0)
    assert stats["ratio_mean"] == pytest.approx(1.5)
    assert stats["surrogate"] == pytest.approx(1.2)


@pytest.mark.parametrize("perturb", [0.0, 0.4])
def test_actor_gradient_matches_finite_differences(perturb):
    p, obs, actions, old, adv = actor_fixture(seed=4, perturb=perturb)
    args = (obs, actions, old, adv, 0.2, 0.01)
    _, analytic, _ = learner.actor_loss_and_grad(p, *args)
    numeric = numeric_grad(lambda q: learner.actor_loss_and_grad(q, *args)[0], p)
    assert max_rel_err(analytic.arrays(), numeric) < 1e-4


def test_critic_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    p = init_mlp([5, 8, 8, 1], rng)
    states, targets = rng.normal(size=(6, 5)), rng.normal(size=6)
    _, analytic = learner.critic_loss_and_grad(p, states, targets)
    numeric = numeric_grad(lambda q: learner.critic_loss_and_grad(q, states, targets)[0], p)
    assert max_rel_err(analytic.arrays(), numeric) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(-5, 5), st.floats(0.05, 0.5))
def test_surrogate_bound(ratio, adv, eps):
    clipped = min(max(ratio, 1 - eps), 1 + eps)
    s = min(ratio * adv, clipped * adv)
    assert s <= max(ratio * adv, clipped * adv)


def test_adam_first_step_moves_by_lr():
    p = MlpParams([np.array([[1.0]])], [np.array([0.0])])
    g = MlpParams([np.array([[0.3]])], [np.array([-2.0])])
    opt = AdamState.for_params(p, 0.01)
    new = opt.step(p, g)
    assert new.weights[0][0, 0] == pytest.approx(1.0 - 0.01, rel=1e-6)
    assert new.biases[0][0] == pytest.approx(0.01, rel=1e-6)


# ------------------------------------------------------------------ training loop

@pytest.fixture
def tiny_cfg():
    return ScenarioConfig(n_uavs=2, n_users_per_phase={"Urban": 12, "Suburban": 10, "Rural": 8},
                          phase_schedule=[("Urban", 2), ("Suburban", 2), ("Rural", 2)],
                          horizon_steps=16, checkpoint_every=3, norm_warmup_min=5)


def test_single_episode_runs_one_update(tiny_cfg):
    res = learner.train(tiny_cfg, episodes=1)
    assert len(res.update_stats) == 1
    assert res.state.next_episode == 1
    assert [r.policy_tag for r in res.records] == ["gmappo", "kmeans", "random"]
    # 16 steps x 2 agents in minibatches of 64, 4 epochs
    assert res.state.actor_opt.t == 4
    assert res.update_stats[0]["first_ratio_mean"] == 1.0


def test_parameters_shared_within_rollout(tiny_cfg):
    ts = learner.TrainerState.fresh(tiny_cfg)
    from aeroswarm import env
    state0, _ = env.reset(tiny_cfg, 0, np.random.default_rng(0))
    buf, _ = learner.collect_rollout(tiny_cfg, ts, state0, np.random.default_rng(1))
    assert buf.actor_checksum == learner.params_checksum(ts.actor)
    # agents differ only through the one-hot id appended to their inputs
    assert np.array_equal(buf.obs[0, :, -2:], np.eye(2))


def test_training_is_deterministic(tiny_cfg):
    a = learner.train(tiny_cfg, episodes=3)
    b = learner.train(tiny_cfg, episodes=3)
    assert a.records == b.records
    assert all(np.array_equal(x, y) for x, y in zip(a.state.actor.arrays(), b.state.actor.arrays()))


def test_checkpoint_resume_is_exact(tiny_cfg, tmp_path):
    full = learner.train(tiny_cfg, checkpoint_dir=tmp_path / "full")
    first = learner.train(tiny_cfg, episodes=3, checkpoint_dir=tmp_path / "part")
    resumed = load_checkpoint(tmp_path / "part" / "ckpt_000003.bin", tiny_cfg)
    rest = learner.train(tiny_cfg, resume=resumed)
    assert first.records + rest.records == full.records
    for x, y in zip(full.state.critic.arrays(), rest.state.critic.arrays()):
        assert np.array_equal(x, y)
    assert np.array_equal(full.state.norm.m2, rest.state.norm.m2)
    # periodic (3) and phase-boundary (2, 4) checkpoints plus the final one
    names = sorted(p.name for p in (tmp_path / "full").iterdir())
    assert names == ["ckpt_000002.bin", "ckpt_000003.bin", "ckpt_000004.bin",
                     "ckpt_000006.bin", "latest.bin"]


def test_checkpoint_roundtrip_bytes(tiny_cfg, tmp_path):
    res = learner.train(tiny_cfg, episodes=2)
    save_checkpoint(res.state, tiny_cfg, tmp_path / "a.bin")
    again = load_checkpoint(tmp_path / "a.bin", tiny_cfg)
    save_checkpoint(again, tiny_cfg, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
