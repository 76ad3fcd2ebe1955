import dataclasses

import numpy as np
import pytest

from solo9.policy import (ActorCritic, MetricsLog, PendulumEnv, PPOConfig, RolloutCollector,
                          compute_advantages, gaussian_kl, gaussian_logp, ppo_loss_and_grads,
                          ppo_update, read_metrics, train_ppo)


def test_gae_three_step_hand_oracle():
    r = np.array([[1.0], [2.0], [3.0]])
    v = np.array([[0.5], [0.4], [0.3]])
    done = np.array([[0.0], [1.0], [0.0]])  # episode ends after step 1
    last = np.array([0.2])
    g, lam = 0.9, 0.8
    d2 = 3.0 + g * 0.2 - 0.3
    a2 = d2
    d1 = 2.0 - 0.4  # no bootstrap across the boundary
    a1 = d1
    d0 = 1.0 + g * 0.4 - 0.5
    a0 = d0 + g * lam * a1
    adv, ret = compute_advantages(r, v, done, last, g, lam, normalize=False)
    np.testing.assert_allclose(adv[:, 0], [a0, a1, a2], rtol=0, atol=1e-15)
    np.testing.assert_allclose(ret[:, 0], [a0 + 0.5, a1 + 0.4, a2 + 0.3], atol=1e-15)


def test_gae_limits():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    done = (rng.random((6, 3)) < 0.3).astype(float)
    last = rng.normal(size=3)
    adv, _ = compute_advantages(r, v, done, last, gamma=0.0, lam=0.95, normalize=False)
    np.testing.assert_allclose(adv, r - v, atol=1e-15)
    adv, _ = compute_advantages(r, v, done, last, gamma=0.9, lam=0.0, normalize=False)
    nxt = np.vstack([v[1:], last[None]])
    np.testing.assert_allclose(adv, r + 0.9 * nxt * (1 - done) - v, atol=1e-14)


def test_gae_timeout_bootstrap_and_normalization():
    r = np.zeros((2, 1))
    v = np.zeros((2, 1))
    done = np.array([[1.0], [0.0]])
    boot = np.array([[5.0], [0.0]])
    adv, _ = compute_advantages(r, v, done, np.zeros(1), 0.5, 1.0, bootstrap=boot,
                                normalize=False)
    assert adv[0, 0] == 2.5
    adv, _ = compute_advantages(np.random.default_rng(1).normal(size=(8, 4)), np.zeros((8, 4)),
                                np.zeros((8, 4)), np.zeros(4))
    assert abs(adv.mean()) < 1e-12 and abs(adv.std() - 1) < 1e-6


@pytest.fixture
def tiny_ac():
    return ActorCritic(3, 3, 1, PPOConfig(hidden=(8,)), seed=0)


def test_collect_bookkeeping_and_determinism():
    def run():
        env = PendulumEnv(4, seed=3)
        ac = ActorCritic(3, 3, 1, PPOConfig(hidden=(8,)), seed=1)
        return RolloutCollector(env, ac, seed=2).collect(16, deterministic=True)

    a, b = run(), run()
    assert a.n_transitions == 64 and a.actions.shape == (16, 4, 1)
    for f in ("actor_obs", "actions", "logp", "values", "rewards", "dones"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_episode_boundary_does_not_leak():
    env = PendulumEnv(2, seed=0, horizon=3)
    ac = ActorCritic(3, 3, 1, PPOConfig(hidden=(8,)), seed=0)
    buf = RolloutCollector(env, ac, seed=0).collect(6)
    assert buf.dones[2].all() and buf.dones[5].all()
    r2 = buf.rewards.copy()
    r2[3:] += 100.0  # the next episode's rewards must not reach the first episode
    base, _ = compute_advantages(buf.rewards, buf.values, buf.dones, buf.last_values,
                                 bootstrap=buf.bootstrap, normalize=False)
    moved, _ = compute_advantages(r2, buf.values, buf.dones, buf.last_values,
                                  bootstrap=buf.bootstrap, normalize=False)
    np.testing.assert_array_equal(base[:3], moved[:3])


def _one_sample(ac, ratio, adv):
    obs = np.array([[0.3, -0.2, 0.5]])
    mu = ac.mean_action(obs)
    a = mu + np.array([[0.4]])
    logp = gaussian_logp(a, mu, ac.log_std)
    logp_old = logp - np.log(ratio)
    return obs, a, logp_old, np.array([adv]), mu


@pytest.mark.parametrize("ratio,adv,active", [(1.1, 1.0, True), (1.5, 1.0, False),
                                              (0.5, -1.0, False), (0.9, -2.0, True),
                                              (1.5, -1.0, True), (0.5, 1.0, True)])
def test_clipped_surrogate_gradient_scalar(tiny_ac, ratio, adv, active):
    cfg = dataclasses.replace(tiny_ac.cfg, value_coef=0.0, entropy_coef=0.0)
    obs, a, lp_old, A, mu = _one_sample(tiny_ac, ratio, adv)
    _, grads, _ = ppo_loss_and_grads(tiny_ac, obs, obs, a, lp_old, A, np.zeros(1), cfg)
    std = np.exp(tiny_ac.log_std[0])
    z2 = ((a - mu)[0, 0] / std) ** 2
    # L = -ratio*A when the unclipped branch is active, constant otherwise
    want = -ratio * adv * (z2 - 1.0) if active else 0.0
    assert grads[-1][0] == pytest.approx(want, rel=1e-10, abs=1e-14)


def test_zero_advantage_gives_zero_policy_gradient(tiny_ac):
    cfg = dataclasses.replace(tiny_ac.cfg, value_coef=0.0, entropy_coef=0.0)
    rng = np.random.default_rng(0)
    obs = rng.normal(size=(10, 3))
    a = rng.normal(size=(10, 1))
    _, grads, _ = ppo_loss_and_grads(tiny_ac, obs, obs, a, np.zeros(10), np.zeros(10),
                                     np.zeros(10), cfg)
    for g in grads:
        assert np.all(g == 0.0)


def test_kl_identity_and_positive():
    mu = np.random.default_rng(0).normal(size=(5, 2))
    ls = np.array([-0.5, 0.1])
    assert gaussian_kl(mu, ls, mu, ls) == 0.0
    assert gaussian_kl(mu, ls, mu + 0.1, ls - 0.2) > 0


def test_nonfinite_update_restores_params():
    env = PendulumEnv(4, seed=0)
    ac = ActorCritic(3, 3, 1, PPOConfig(hidden=(8,)), seed=0)
    buf = RolloutCollector(env, ac, seed=0).collect(8)
    buf.rewards[3, 1] = np.nan
    before = [p.copy() for p in ac.params()]
    out = ppo_update(ac, buf, rng=0)
    assert out["aborted"] == 1.0
    for p, q in zip(before, ac.params()):
        np.testing.assert_array_equal(p, q)


def test_update_metrics_and_log(tmp_path):
    env = PendulumEnv(4, seed=0)
    ac = ActorCritic(3, 3, 1, PPOConfig(hidden=(8,)), seed=0)
    log = MetricsLog(tmp_path / "m.csv")
    hist = train_ppo(env, ac, 3, 16, seed=0, log=log)
    assert len(hist) == 3
    m = read_metrics(tmp_path / "m.csv")
    for k in ("surrogate", "value_loss", "entropy", "kl", "clip_fraction", "reward"):
        assert len(m[k]) == 3 and np.all(np.isfinite(m[k]))
    assert np.all(ac.log_std >= -4) and np.all(ac.log_std <= 1)


def test_checkpoint_round_trip(tmp_path):
    ac = ActorCritic(3, 3, 1, PPOConfig(hidden=(8,)), seed=4)
    ac.update_normalizers(np.random.default_rng(0).normal(size=(20, 3)),
                          np.random.default_rng(1).normal(size=(20, 3)))
    ac.save(tmp_path / "c.npz", step=7, meta={"variant": "solo9"})
    back, ck = ActorCritic.load(tmp_path / "c.npz")
    x = np.random.default_rng(2).normal(size=(5, 3))
    np.testing.assert_array_equal(back.mean_action(x), ac.mean_action(x))
    np.testing.assert_array_equal(back.value(x), ac.value(x))
    assert ck["step"] == 7 and ck["meta"]["variant"] == "solo9"


def test_wrong_observation_width_rejected(tiny_ac):
    with pytest.raises(ValueError):
        tiny_ac.mean_action(np.zeros((2, 4)))
