"""Least-squares adversarial discriminator over imitation windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Adam, NetParams, backward, forward, gradient_penalty, predict
from .dataset import DISC_OBS_DIM
from .normalizer import RunningNormalizer


def discriminator_loss(net: NetParams, expert, policy, lambda_gp=10.0):
    """LSGAN loss with an expert-side gradient penalty.

    ``L = E_e[(D-1)^2] + E_p[(D+1)^2] + lambda_gp E_e[|dD/dx|^2]``

    Inputs are already-normalized ``(batch, n_in)`` arrays.  Returns
    ``(loss, grads, stats)``.
    """
    expert = np.atleast_2d(expert)
    policy = np.atleast_2d(policy)
    d_e, tape_e = forward(net, expert)
    d_p, tape_p = forward(net, policy)
    d_e, d_p = d_e[:, 0], d_p[:, 0]
    ne, np_ = len(d_e), len(d_p)
    g = backward(tape_e, (2.0 * (d_e - 1.0) / ne)[:, None])
    g = g + backward(tape_p, (2.0 * (d_p + 1.0) / np_)[:, None])
    loss_e = float(np.mean((d_e - 1.0) ** 2))
    loss_p = float(np.mean((d_p + 1.0) ** 2))
    gp = 0.0
    if lambda_gp:
        pen, g_gp = gradient_penalty(net, expert)
        gp = float(pen.mean())
        g = g + g_gp.scale(lambda_gp)
    loss = loss_e + loss_p + lambda_gp * gp
    return loss, g, {"loss": loss, "loss_expert": loss_e, "loss_policy": loss_p,
                     "grad_penalty": gp, "d_expert": float(d_e.mean()),
                     "d_policy": float(d_p.mean())}


def reward_from_score(d, mode="lsgan"):
    """Map discriminator scores to imitation rewards.

    ``lsgan``: ``max(0, 1 - 0.25 (d - 1)^2)`` in [0, 1].
    ``gail``:  ``-log(1 - sigmoid(d))``.
    """
    d = np.asarray(d, dtype=float)
    if mode == "lsgan":
        return np.maximum(0.0, 1.0 - 0.25 * (d - 1.0) ** 2)
    if mode == "gail":
        return np.logaddexp(0.0, d)
    raise ValueError(f"unknown imitation reward mode {mode!r}")


def imitation_reward(net: NetParams, x, mode="lsgan"):
    """Imitation reward of normalized window(s) ``x``."""
    x = np.asarray(x, dtype=float)
    d = predict(net, x)
    return reward_from_score(d[..., 0], mode)


class ReplayBuffer:
    """Fixed-capacity ring buffer of flattened policy windows."""

    def __init__(self, dim, capacity=100_000):
        self.data = np.zeros((capacity, dim))
        self.capacity = capacity
        self.size = 0
        self.pos = 0

    def add(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.data.shape[1])
        if len(x) >= self.capacity:
            x = x[-self.capacity:]
        idx = (self.pos + np.arange(len(x))) % self.capacity
        self.data[idx] = x
        self.pos = int((self.pos + len(x)) % self.capacity)
        self.size = min(self.capacity, self.size + len(x))

    def sample(self, n, rng):
        if self.size == 0:
            raise ValueError("replay buffer is empty")
        return self.data[rng.integers(0, self.size, size=n)]


@dataclass
class DiscriminatorConfig:
    H: int = 2
    hidden: tuple = (256, 128)
    activation: str = "tanh"
    lr: float = 1e-4
    lambda_gp: float = 10.0
    batch: int = 512
    replay: int = 100_000
    reward_mode: str = "lsgan"
    max_grad_norm: float = 5.0


class Discriminator:
    """Network, optimizer, input normalizer and policy-window replay."""

    def __init__(self, cfg: DiscriminatorConfig | None = None, seed=0):
        self.cfg = cfg = cfg or DiscriminatorConfig()
        self.rng = np.random.default_rng(seed)
        self.in_dim = cfg.H * DISC_OBS_DIM
        self.net = NetParams.init([self.in_dim, *cfg.hidden, 1], activation=cfg.activation,
                                  rng=self.rng, out_scale=0.1)
        self.opt = Adam(lr=cfg.lr, max_grad_norm=cfg.max_grad_norm)
        self.normalizer = RunningNormalizer(self.in_dim, clip=10.0)
        self.replay = ReplayBuffer(self.in_dim, cfg.replay)

    def flatten(self, windows):
        w = np.asarray(windows, dtype=float)
        return w.reshape(-1, self.in_dim)

    def reward(self, windows):
        x = self.normalizer.normalize(self.flatten(windows))
        return imitation_reward(self.net, x, self.cfg.reward_mode)

    def score(self, windows):
        return predict(self.net, self.normalizer.normalize(self.flatten(windows)))[:, 0]

    def update(self, expert_windows, policy_windows=None, n_steps=1):
        """One or more optimizer steps on equal-size expert/policy batches.

        New policy windows go into the replay first; the policy batch is then
        drawn from the replay.
        """
        if policy_windows is not None:
            self.replay.add(self.flatten(policy_windows))
        expert = self.flatten(expert_windows)
        stats = {}
        for _ in range(n_steps):
            n = min(self.cfg.batch, len(expert))
            e = expert[self.rng.integers(0, len(expert), size=n)]
            p = self.replay.sample(n, self.rng)
            self.normalizer.update(np.concatenate([e, p]))
            loss, grads, stats = discriminator_loss(self.net, self.normalizer.normalize(e),
                                                    self.normalizer.normalize(p),
                                                    self.cfg.lambda_gp)
            self.opt.step(self.net.params(), grads.params())
        return stats

    def state_arrays(self):
        return self.normalizer.state_arrays("disc_norm")
