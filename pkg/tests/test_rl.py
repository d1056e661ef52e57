from __future__ import annotations

import numpy as np
import pytest

from ensemble_follower.cf_models import ACC_LIMIT, make_rule_model
from ensemble_follower.data import SynthConfig, TimeSeriesEvent, synthesize_events
from ensemble_follower.errors import ConfigError
from ensemble_follower.evaluation import evaluate_model
from ensemble_follower.neural import MlpNet
from ensemble_follower.rl import (CloningConfig, DdpgConfig, DdqnConfig, PpoConfig, ReplayBuffer,
                                  Transition, compute_gae, double_q_targets, train_ddpg_lowlevel,
                                  train_ef_ppo, train_rnn_cloning)
from ensemble_follower.rl.cloning import cloning_samples
from ensemble_follower.rl.common import linear_schedule
from ensemble_follower.rl.ddpg import soft_update
from ensemble_follower.rl.ddqn import epsilon_greedy
from ensemble_follower.rl.ppo import (clipped_surrogate, gaussian_log_prob,
                                      ppo_losses_and_grads)


# --- replay ------------------------------------------------------------------


def test_replay_wraparound_keeps_newest():
    buf = ReplayBuffer(3, obs_dim=2)
    for i in range(5):
        buf.add(Transition(np.full(2, i), i % 2, float(i), np.full(2, i + 1), i == 4))
    assert len(buf) == 3 and buf.inserted == 5
    kept = buf.transitions()
    assert [t.reward for t in kept] == [2.0, 3.0, 4.0]
    assert kept[-1].done and not kept[0].done
    assert np.array_equal(kept[0].next_state, [3, 3])


def test_replay_sample_without_replacement(rng):
    buf = ReplayBuffer(10, obs_dim=1)
    buf.add_batch(np.arange(6)[:, None], np.zeros(6), np.arange(6.0), np.arange(6)[:, None],
                  np.zeros(6, dtype=bool))
    states, _, rewards, _, _ = buf.sample(100, rng)
    assert len(rewards) == 6 and sorted(rewards) == list(range(6))
    assert np.array_equal(states[:, 0], rewards)


def test_replay_rejects_non_finite_reward():
    buf = ReplayBuffer(4, obs_dim=1)
    with pytest.raises(ValueError):
        buf.add_batch(np.zeros((1, 1)), np.zeros(1), np.array([np.nan]), np.zeros((1, 1)),
                      np.zeros(1, dtype=bool))


# --- double Q ----------------------------------------------------------------


def test_double_q_hand_table():
    # online picks the action, target scores it
    q_online = np.array([[1.0, 2.0], [5.0, 0.0]])
    q_target = np.array([[10.0, 20.0], [30.0, 40.0]])
    y = double_q_targets(np.array([1.0, -1.0]), np.array([False, False]), q_online, q_target, 0.5)
    assert np.allclose(y, [1.0 + 0.5 * 20.0, -1.0 + 0.5 * 30.0])


def test_double_q_terminal_rows_are_reward_only():
    q = np.array([[3.0, 7.0], [1.0, 2.0]])
    y = double_q_targets(np.array([0.5, 2.0]), np.array([True, False]), q, q, 0.9)
    assert y[0] == 0.5
    assert y[1] == pytest.approx(2.0 + 0.9 * 2.0)


def test_double_q_differs_from_max_target():
    q_online = np.array([[0.0, 1.0]])
    q_target = np.array([[9.0, 1.0]])
    y = double_q_targets(np.array([0.0]), np.array([False]), q_online, q_target, 1.0)
    assert y[0] == 1.0


def test_epsilon_schedule_reaches_final_value():
    cfg = DdqnConfig(total_steps=1000, training_start=0, buffer_size=10, eps_fraction=0.5)
    eps = cfg.epsilon()
    assert eps(0) == 1.0
    assert eps(250) == pytest.approx(0.625)
    assert eps(500) == cfg.eps_final
    assert eps(10_000) == cfg.eps_final
    values = [eps(s) for s in range(0, 600, 16)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_linear_schedule_zero_horizon():
    assert linear_schedule(0.4, 0.0, 0)(0) == 0.0


def test_epsilon_one_is_uniform(rng):
    q = np.tile([[0.0, 100.0, 0.0, 0.0]], (40_000, 1))
    picks = epsilon_greedy(q, 1.0, rng)
    freq = np.bincount(picks, minlength=4) / len(picks)
    assert np.allclose(freq, 0.25, atol=0.01)


def test_epsilon_zero_is_greedy(rng):
    q = rng.normal(size=(50, 5))
    assert np.array_equal(epsilon_greedy(q, 0.0, rng), np.argmax(q, axis=1))


# --- GAE and the clipped surrogate -------------------------------------------


def gae_brute_force(rewards, values, dones, last_value, gamma, lam):
    """Direct sum of discounted TD residuals, cut at episode boundaries."""
    T = len(rewards)
    nxt = np.append(values[1:], last_value)
    deltas = rewards + gamma * (1 - dones) * nxt - values
    adv = np.zeros(T)
    for t in range(T):
        total, scale = 0.0, 1.0
        for l in range(t, T):
            total += scale * deltas[l]
            if dones[l]:
                break
            scale *= gamma * lam
        adv[t] = total
    return adv


@pytest.mark.parametrize("lam", [0.0, 0.5, 0.95, 1.0])
def test_gae_matches_brute_force(rng, lam):
    T = 30
    rewards, values = rng.normal(size=T), rng.normal(size=T)
    dones = (rng.random(T) < 0.15).astype(float)
    last = rng.normal()
    got = compute_gae(rewards, values, dones, last, 0.97, lam)
    assert np.allclose(got, gae_brute_force(rewards, values, dones, last, 0.97, lam), atol=1e-10)


def test_gae_lambda_zero_is_td_residual(rng):
    r, v = rng.normal(size=5), rng.normal(size=5)
    adv = compute_gae(r, v, np.zeros(5), 0.3, 0.9, 0.0)
    nxt = np.append(v[1:], 0.3)
    assert np.allclose(adv, r + 0.9 * nxt - v, atol=1e-12)


def test_gae_vectorised_over_lanes(rng):
    r, v, d = rng.normal(size=(12, 3)), rng.normal(size=(12, 3)), rng.random((12, 3)) < 0.2
    last = rng.normal(size=3)
    adv = compute_gae(r, v, d, last, 0.99, 0.9)
    for j in range(3):
        assert np.allclose(adv[:, j], compute_gae(r[:, j], v[:, j], d[:, j], last[j], 0.99, 0.9))


def test_clipped_surrogate_is_the_minimum(rng):
    ratio = rng.uniform(0.3, 2.0, size=500)
    adv = rng.normal(size=500)
    obj = clipped_surrogate(ratio, adv, 0.2)
    assert np.all(obj <= ratio * adv + 1e-12)
    assert np.all(obj <= np.clip(ratio, 0.8, 1.2) * adv + 1e-12)
    inside = (ratio > 0.8) & (ratio < 1.2)
    assert np.allclose(obj[inside], (ratio * adv)[inside])


def _ppo_batch(rng, n=32, obs_dim=4, k=3):
    actor = MlpNet.init([obs_dim, 8, k], rng)
    critic = MlpNet.init([obs_dim, 8, 1], rng)
    log_std = rng.normal(scale=0.2, size=k)
    obs = rng.normal(size=(n, obs_dim))
    z = actor(obs) + np.exp(log_std) * rng.normal(size=(n, k))
    logp = gaussian_log_prob(z, actor(obs), log_std)
    old_logp = logp + rng.uniform(-0.15, 0.15, size=n)
    return actor, critic, log_std, (obs, z, old_logp, rng.normal(size=n), rng.normal(size=n))


def test_zero_advantage_gives_zero_policy_gradient(rng):
    actor, critic, log_std, batch = _ppo_batch(rng)
    batch = batch[:3] + (np.zeros(32),) + batch[4:]
    cfg = PpoConfig(ent_coef=0.0)
    _, a_grads, d_log_std, _ = ppo_losses_and_grads(actor, log_std, critic, batch, cfg)
    assert all(np.all(g == 0) for g in a_grads.values())
    assert np.all(d_log_std == 0)


def test_ppo_gradients_match_finite_differences(rng):
    actor, critic, log_std, batch = _ppo_batch(rng)
    cfg = PpoConfig(vf_coef=0.25, ent_coef=0.01, clip_eps=0.1)

    def total_loss():
        terms, *_ = ppo_losses_and_grads(actor, log_std, critic, batch, cfg)
        return (terms["policy_loss"] + cfg.vf_coef * terms["value_loss"]
                - cfg.ent_coef * terms["entropy"])

    _, a_grads, d_log_std, c_grads = ppo_losses_and_grads(actor, log_std, critic, batch, cfg)
    h = 1e-6
    for params, grads in ((actor.params, a_grads), (critic.params, c_grads),
                          ({"log_std": log_std}, {"log_std": d_log_std})):
        for name, p in params.items():
            flat = p.reshape(-1)
            for i in rng.choice(flat.size, size=min(6, flat.size), replace=False):
                old = flat[i]
                flat[i] = old + h
                up = total_loss()
                flat[i] = old - h
                down = total_loss()
                flat[i] = old
                assert grads[name].reshape(-1)[i] == pytest.approx((up - down) / (2 * h),
                                                                   rel=1e-4, abs=1e-7), name


# --- DDPG --------------------------------------------------------------------


def test_soft_update_formula(rng):
    a, b = MlpNet.init([3, 4, 1], rng), MlpNet.init([3, 4, 1], rng)
    before = {k: v.copy() for k, v in a.params.items()}
    soft_update(a, b, 0.1)
    for k in a.params:
        assert np.allclose(a.params[k], 0.9 * before[k] + 0.1 * b.params[k])


def test_soft_update_tau_one_is_hard_copy(rng):
    a, b = MlpNet.init([3, 4, 1], rng), MlpNet.init([3, 4, 1], rng)
    soft_update(a, b, 1.0)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])


def test_ddpg_config_validation():
    with pytest.raises(ConfigError):
        DdpgConfig(tau=0.0)
    with pytest.raises(ConfigError):
        DdpgConfig(training_start=10, buffer_size=5)


def test_ddpg_same_seed_same_actor(idm_events):
    cfg = DdpgConfig(total_steps=640, training_start=320, buffer_size=1000, batch_size=32, seed=4)
    m1 = train_ddpg_lowlevel(idm_events, cfg).model
    m2 = train_ddpg_lowlevel(idm_events, cfg).model
    for k in m1.net.params:
        assert np.array_equal(m1.net.params[k], m2.net.params[k])
    r1 = evaluate_model(m1, idm_events[:2])
    r2 = evaluate_model(m1, idm_events[:2])
    assert np.array_equal(r1[0].spacing_sim, r2[0].spacing_sim)
    assert all(abs(a) <= ACC_LIMIT for a in m1.propose(np.zeros((4, 25, 3)) + 10.0))


@pytest.mark.slow
def test_ddpg_training_improves_rmspe():
    events = synthesize_events(SynthConfig(n_events=20, leader_profile="sinusoidal", seed=11))
    untrained = train_ddpg_lowlevel(events, DdpgConfig(total_steps=16, training_start=16,
                                                       buffer_size=5000, seed=0)).model
    trained = train_ddpg_lowlevel(events, DdpgConfig(total_steps=30_000, training_start=5000,
                                                     buffer_size=50_000, train_freq=4,
                                                     seed=0)).model
    before = np.mean([r.rmspe_spacing for r in evaluate_model(untrained, events)])
    after = np.mean([r.rmspe_spacing for r in evaluate_model(trained, events)])
    assert after < before


# --- cloning -----------------------------------------------------------------


def _constant_accel_events(acc=0.5, n=200, count=3):
    t = np.arange(n) * 0.04
    return [TimeSeriesEvent(f"c{i}", np.full(n, 20.0), 8.0 + i + acc * t, np.full(n, 25.0 + i))
            for i in range(count)]


def test_cloning_samples_targets_and_padding():
    events = _constant_accel_events(count=1, n=40)
    windows, targets = cloning_samples(events)
    assert windows.shape == (39, 25, 3) and targets.shape == (39,)
    assert np.allclose(targets, 0.5)
    assert np.all(windows[0] == windows[0, -1])
    assert np.allclose(windows[5, -1], events[0].states()[5])


def test_cloning_targets_are_clipped():
    n = 20
    fv = np.concatenate([[30.0], np.zeros(n - 1)])
    ev = TimeSeriesEvent("brake", np.full(n, 20.0), fv, np.full(n, 25.0))
    _, targets = cloning_samples([ev])
    assert targets.min() == -ACC_LIMIT


def test_cloning_fits_constant_acceleration():
    events = _constant_accel_events()
    res = train_rnn_cloning(events, CloningConfig(epochs=15, batch_size=64, lr=3e-3, width=8))
    assert res.epoch_losses[-1] < res.epoch_losses[0]
    windows, _ = cloning_samples(events)
    pred = res.model.propose(windows)
    assert np.max(np.abs(pred - 0.5)) < 0.05


def test_cloning_same_seed_same_weights():
    events = _constant_accel_events(count=1, n=60)
    cfg = CloningConfig(epochs=2, width=4, seed=9)
    a, b = train_rnn_cloning(events, cfg).model, train_rnn_cloning(events, cfg).model
    for k in a.net.params:
        assert np.array_equal(a.net.params[k], b.net.params[k])


def test_simplex_audit_measures_unclipped_blend():
    from ensemble_follower.rl.ppo import SimplexAudit
    audit = SimplexAudit()
    accs = np.array([[1.0, -2.0], [3.0, 0.0]])
    audit.record(np.array([[0.5, 0.5], [0.25, 0.75]]), accs)
    assert audit.n_vectors == 2 and audit.min_weight == 0.25
    assert audit.max_range_excursion <= 0.0
    audit.record(np.array([[1.5, -0.5]]), np.array([[1.0], [3.0]]))
    assert audit.max_range_excursion == pytest.approx(1.0)
    assert audit.min_weight == -0.5


# --- PPO run -----------------------------------------------------------------


def test_ppo_tiny_run_stays_on_simplex(idm_events):
    roster = [make_rule_model("idm"), make_rule_model("gipps"), make_rule_model("fvd")]
    cfg = PpoConfig(total_steps=1600, step_per_collect=400, batch_size=100, n_envs=8, seed=2)
    res = train_ef_ppo(idm_events, roster, cfg)
    audit = res.audit
    assert audit.n_vectors == 1600
    assert audit.min_weight >= 0.0
    assert audit.max_sum_error <= 1e-6
    assert audit.max_range_excursion <= 1e-12
    assert res.log_std.shape == (3,)
    w = res.policy.blend_weights(np.tile(idm_events[0].states()[:25], (2, 1, 1)))
    assert np.allclose(w.sum(-1), 1.0)
