import numpy as np
import pytest

from solo9.autodiff import NetParams, input_gradient_norm
from solo9.discriminator import (Discriminator, DiscriminatorConfig, ReplayBuffer,
                                 discriminator_loss, imitation_reward, reward_from_score)
from solo9.normalizer import RunningNormalizer


def linear_net(w, b):
    net = NetParams.init([len(w), 1], rng=0)
    net.weights[0][:, 0] = w
    net.biases[0][:] = b
    return net


def test_zero_net_loss_is_two():
    net = linear_net(np.zeros(5), 0.0)
    x = np.random.default_rng(0).normal(size=(8, 5))
    loss, _, st = discriminator_loss(net, x, -x, lambda_gp=10.0)
    assert loss == 2.0 and st["grad_penalty"] == 0.0


def test_perfect_constant_separation_is_zero():
    # a constant score of +1 on expert inputs and -1 on policy inputs, zero input gradient
    x = np.random.default_rng(1).normal(size=(6, 4))
    expert_only = discriminator_loss(linear_net(np.zeros(4), 1.0), x, x, 10.0)[2]
    policy_only = discriminator_loss(linear_net(np.zeros(4), -1.0), x, x, 10.0)[2]
    assert expert_only["loss_expert"] == 0.0 and policy_only["loss_policy"] == 0.0
    assert expert_only["grad_penalty"] == 0.0
    total = (expert_only["loss_expert"] + policy_only["loss_policy"]
             + 10.0 * expert_only["grad_penalty"])
    assert total == 0.0


def test_linear_discriminator_matches_hand_oracle():
    rng = np.random.default_rng(2)
    for _ in range(5):
        w, b = rng.normal(size=3), rng.normal()
        e, p = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        de = [sum(wi * xi for wi, xi in zip(w, row)) + b for row in e]
        dp = [sum(wi * xi for wi, xi in zip(w, row)) + b for row in p]
        gp = sum(wi * wi for wi in w)  # input gradient of a linear map is w everywhere
        want = (sum((d - 1) ** 2 for d in de) / 4 + sum((d + 1) ** 2 for d in dp) / 4
                + 10.0 * gp)
        loss, grads, _ = discriminator_loss(linear_net(w, b), e, p, 10.0)
        assert abs(loss - want) < 1e-10
        # parameter gradient of the same closed form
        gw = (sum(2 * (d - 1) * row for d, row in zip(de, e)) / 4
              + sum(2 * (d + 1) * row for d, row in zip(dp, p)) / 4 + 20.0 * w)
        gb = sum(2 * (d - 1) for d in de) / 4 + sum(2 * (d + 1) for d in dp) / 4
        np.testing.assert_allclose(grads.weights[0][:, 0], gw, atol=1e-10)
        assert abs(grads.biases[0][0] - gb) < 1e-10


def test_reward_map():
    assert reward_from_score(1.0) == 1.0
    assert reward_from_score(-1.0) == 0.0
    assert reward_from_score(0.0) == 0.75
    d = np.linspace(-10, 10, 401)
    r = reward_from_score(d)
    assert r.min() >= 0.0 and r.max() <= 1.0
    assert reward_from_score(0.0, "gail") == pytest.approx(np.log(2.0))
    with pytest.raises(ValueError):
        reward_from_score(0.0, "other")
    net = linear_net(np.zeros(2), 0.0)
    np.testing.assert_array_equal(imitation_reward(net, np.ones((3, 2))), 0.75)


def test_normalizer_pooled_identity():
    rng = np.random.default_rng(0)
    a, b = rng.normal(3, 2, (37, 5)), rng.normal(-1, 0.5, (91, 5))
    n1 = RunningNormalizer(5).update(a).update(b)
    n2 = RunningNormalizer(5).update(np.concatenate([a, b]))
    allx = np.concatenate([a, b])
    np.testing.assert_allclose(n1.mean, allx.mean(0), rtol=1e-12)
    np.testing.assert_allclose(n1.var, allx.var(0), rtol=1e-10)
    np.testing.assert_allclose(n1.var, n2.var, rtol=1e-10)


def test_normalizer_constant_stream_floor():
    n = RunningNormalizer(3)
    for _ in range(10):
        n.update(np.full((20, 3), 4.2))
    np.testing.assert_array_equal(n.var, 1e-8)
    y = n.normalize(np.full((1, 3), 4.2))
    assert np.all(np.isfinite(y))


def test_normalizer_round_trip():
    n = RunningNormalizer(4).update(np.random.default_rng(1).normal(size=(50, 4)))
    x = np.random.default_rng(2).normal(size=(5, 4))
    np.testing.assert_allclose(n.denormalize(n.normalize(x)), x, atol=1e-12)
    m = RunningNormalizer(4).load_arrays(n.state_arrays("p"), "p")
    np.testing.assert_array_equal(m.normalize(x), n.normalize(x))


def test_replay_ring():
    rb = ReplayBuffer(2, capacity=5)
    with pytest.raises(ValueError):
        rb.sample(1, np.random.default_rng(0))
    rb.add(np.arange(8).reshape(4, 2))
    rb.add(np.arange(8, 14).reshape(3, 2))
    assert rb.size == 5
    assert set(map(tuple, rb.data.astype(int))) == {(4, 5), (6, 7), (8, 9), (10, 11), (12, 13)}


def _train(seed, lambda_gp, steps=150):
    rng = np.random.default_rng(seed)
    d = Discriminator(DiscriminatorConfig(hidden=(32, 32), batch=64, lr=1e-3,
                                          lambda_gp=lambda_gp), seed=seed)
    for _ in range(steps):
        d.update(rng.normal(1.0, 0.5, (64, 2, 27)), rng.normal(-1.0, 0.5, (64, 2, 27)))
    return d, rng


def test_update_separates_and_is_deterministic():
    d1, rng = _train(0, 10.0)
    d2, _ = _train(0, 10.0)
    e = rng.normal(1.0, 0.5, (200, 2, 27))
    p = rng.normal(-1.0, 0.5, (200, 2, 27))
    assert d1.score(e).mean() > 0.5 > -0.5 > d1.score(p).mean()
    np.testing.assert_array_equal(d1.score(e), d2.score(e))
    assert d1.reward(e).mean() > d1.reward(p).mean()


def test_gradient_penalty_reduces_expert_gradient():
    for seed in range(3):
        with_gp, rng = _train(seed, 10.0, steps=100)
        without, _ = _train(seed, 0.0, steps=100)
        e = rng.normal(1.0, 0.5, (256, 2, 27))
        g = [input_gradient_norm(d.net, d.normalizer.normalize(d.flatten(e))).mean()
             for d in (with_gp, without)]
        assert g[0] < g[1]
