"""Asymmetric actor-critic PPO over vectorized environments."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (Adam, NetParams, NonFiniteError, backward, forward, load_checkpoint,
                       predict, save_checkpoint)
from .env.rewards import total_reward
from .normalizer import RunningNormalizer

LOG_STD_BOUNDS = (-4.0, 1.0)
_LOG_2PI = np.log(2 * np.pi)


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    lr: float = 3e-4
    adaptive_kl: bool = True
    desired_kl: float = 0.01
    lr_bounds: tuple = (1e-5, 1e-2)
    value_coef: float = 1.0
    entropy_coef: float = 0.0
    max_grad_norm: float = 1.0
    hidden: tuple = (256, 128)
    activation: str = "elu"
    init_log_std: float = -1.0


class ActorCritic:
    """Gaussian policy on actor observations and a value net on critic observations.

    The actor network's input width is the actor observation size, so the
    privileged critic-only entries can never reach it.
    """

    def __init__(self, actor_dim, critic_dim, act_dim, cfg: PPOConfig | None = None, seed=0):
        self.cfg = cfg = cfg or PPOConfig()
        rng = np.random.default_rng(seed)
        self.actor_dim, self.critic_dim, self.act_dim = actor_dim, critic_dim, act_dim
        self.actor = NetParams.init([actor_dim, *cfg.hidden, act_dim], cfg.activation, rng=rng,
                                    out_scale=0.1)
        self.critic = NetParams.init([critic_dim, *cfg.hidden, 1], cfg.activation, rng=rng)
        self.log_std = np.full(act_dim, float(cfg.init_log_std))
        self.actor_norm = RunningNormalizer(actor_dim, clip=10.0)
        self.critic_norm = RunningNormalizer(critic_dim, clip=10.0)
        self.opt = Adam(lr=cfg.lr, max_grad_norm=cfg.max_grad_norm)

    # -- inference -------------------------------------------------------------
    def mean_action(self, actor_obs):
        actor_obs = np.asarray(actor_obs, dtype=float)
        if actor_obs.shape[-1] != self.actor_dim:
            raise ValueError(f"actor expects {self.actor_dim} features, got {actor_obs.shape[-1]}")
        return predict(self.actor, self.actor_norm.normalize(actor_obs))

    def value(self, critic_obs):
        critic_obs = np.asarray(critic_obs, dtype=float)
        if critic_obs.shape[-1] != self.critic_dim:
            raise ValueError(f"critic expects {self.critic_dim} features, got "
                             f"{critic_obs.shape[-1]}")
        return predict(self.critic, self.critic_norm.normalize(critic_obs))[..., 0]

    def act(self, actor_obs, rng, deterministic=False):
        mu = self.mean_action(actor_obs)
        if deterministic:
            a = mu
        else:
            a = mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)
        return a, gaussian_logp(a, mu, self.log_std)

    # -- parameters ----------------------------------------------------------------
    def params(self):
        return self.actor.params() + self.critic.params() + [self.log_std]

    def snapshot(self):
        return ([p.copy() for p in self.params()], self.opt.state_dict() | {
            "m": [m.copy() for m in self.opt.m], "v": [v.copy() for v in self.opt.v]})

    def restore(self, snap):
        arrays, opt = snap
        for p, a in zip(self.params(), arrays):
            p[...] = a
        self.opt.load_state_dict(opt)

    def update_normalizers(self, actor_obs, critic_obs):
        self.actor_norm.update(actor_obs.reshape(-1, self.actor_dim))
        self.critic_norm.update(critic_obs.reshape(-1, self.critic_dim))

    def save(self, path, step=0, extra=None, meta=None):
        arrays = {"log_std": self.log_std}
        arrays.update(self.actor_norm.state_arrays("actor_norm"))
        arrays.update(self.critic_norm.state_arrays("critic_norm"))
        arrays.update(extra or {})
        save_checkpoint(path, {"actor": self.actor, "critic": self.critic}, {"ac": self.opt},
                        step=step, extra_arrays=arrays, meta=meta)

    @classmethod
    def load(cls, path, cfg: PPOConfig | None = None):
        ck = load_checkpoint(path)
        actor, critic = ck["nets"]["actor"], ck["nets"]["critic"]
        ac = cls(actor.sizes[0], critic.sizes[0], actor.sizes[-1], cfg)
        ac.actor, ac.critic = actor, critic
        ac.log_std = np.array(ck["extra"]["log_std"], dtype=float)
        ac.actor_norm.load_arrays(ck["extra"], "actor_norm")
        ac.critic_norm.load_arrays(ck["extra"], "critic_norm")
        if "ac" in ck["optimizers"]:
            ac.opt = ck["optimizers"]["ac"]
            ac.opt.max_grad_norm = ac.cfg.max_grad_norm
        return ac, ck


def gaussian_logp(a, mu, log_std):
    z = (a - mu) * np.exp(-log_std)
    return -0.5 * (z * z).sum(axis=-1) - log_std.sum() - 0.5 * a.shape[-1] * _LOG_2PI


# -- rollout storage and collection --------------------------------------------------

@dataclass
class RolloutBuffer:
    actor_obs: np.ndarray  # (T, N, actor_dim)
    critic_obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray  # (T, N)
    values: np.ndarray
    rewards: np.ndarray  # mixed reward actually optimized
    dones: np.ndarray
    bootstrap: np.ndarray  # value of the final obs at timeouts, else 0
    mask: np.ndarray  # False for transitions of envs that failed to integrate
    last_values: np.ndarray  # (N,)
    terms: dict = field(default_factory=dict)  # per-term rewards, (T, N) each
    disc_windows: np.ndarray | None = None  # (T, N, H, 27) policy windows
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def n_transitions(self):
        return self.rewards.size

    def __len__(self):
        return self.rewards.shape[0]


class RolloutCollector:
    """Steps an environment with a policy and keeps per-env episode bookkeeping.

    When a discriminator is given, the imitation reward of each transition is
    computed from the latest ``H`` discriminator observations of that env.
    """

    def __init__(self, env, ac: ActorCritic, disc=None, seed=0):
        self.env, self.ac, self.disc = env, ac, disc
        self.rng = np.random.default_rng(seed)
        self.actor_obs, self.critic_obs = env.observations()
        self.H = disc.cfg.H if disc is not None else 0
        if disc is not None:
            d = env.discriminator_obs()
            self.history = np.repeat(d[:, None], self.H, axis=1)
        self.ep_return = np.zeros(env.n)
        self.ep_len = np.zeros(env.n, dtype=int)
        self.finished = []  # (return, length, fallen) of completed episodes

    def collect(self, steps, w_I=0.0, deterministic=False):
        env, ac = self.env, self.ac
        n = env.n
        T = steps
        buf = {k: [] for k in ("actor_obs", "critic_obs", "actions", "logp", "values", "rewards",
                               "dones", "bootstrap", "mask")}
        terms_log, windows = {}, []
        for _ in range(T):
            a, logp = ac.act(self.actor_obs, self.rng, deterministic)
            v = ac.value(self.critic_obs)
            actor_next, critic_next, terms, done, info = env.step(a)
            if self.disc is not None:
                cur = info["final_disc_obs"]
                win = np.concatenate([self.history[:, 1:], cur[:, None]], axis=1)
                r_I = self.disc.reward(win)
                windows.append(win)
                self.history = win
                if done.any():
                    fresh = env.discriminator_obs()[done]
                    self.history[done] = fresh[:, None]
            else:
                r_I = np.zeros(n)
            r = total_reward(r_I, terms["r_G"], terms["r_C"], terms["r_Tu"], w_I)
            timeout = info.get("timeout", np.zeros(n, dtype=bool))
            boot = np.zeros(n)
            if timeout.any():
                boot[timeout] = ac.value(info["final_critic_obs"][timeout])
            buf["actor_obs"].append(self.actor_obs)
            buf["critic_obs"].append(self.critic_obs)
            buf["actions"].append(a)
            buf["logp"].append(logp)
            buf["values"].append(v)
            buf["rewards"].append(r)
            buf["dones"].append(done.astype(float))
            buf["bootstrap"].append(boot)
            buf["mask"].append(~info.get("failed", np.zeros(n, dtype=bool)))
            terms_log.setdefault("r_I", []).append(r_I)
            for k, val in terms.items():
                terms_log.setdefault(k, []).append(np.asarray(val, dtype=float))
            self.ep_return += r
            self.ep_len += 1
            for i in np.flatnonzero(done):
                self.finished.append((float(self.ep_return[i]), int(self.ep_len[i]),
                                      bool(info.get("fallen", np.zeros(n, bool))[i])))
            self.ep_return[done] = 0.0
            self.ep_len[done] = 0
            self.actor_obs, self.critic_obs = actor_next, critic_next
        out = RolloutBuffer(**{k: np.array(v) for k, v in buf.items()},
                            last_values=ac.value(self.critic_obs),
                            terms={k: np.array(v) for k, v in terms_log.items()},
                            disc_windows=np.array(windows) if windows else None)
        out.mask = out.mask.astype(bool)
        return out


def compute_advantages(rewards, values, dones, last_values, gamma=0.99, lam=0.95,
                       bootstrap=None, normalize=True, mask=None):
    """Generalized advantage estimation over ``(T, N)`` arrays.

    ``dones[t]`` cuts the recursion after step ``t``; ``bootstrap[t]`` adds
    ``gamma * V(final obs)`` for episodes cut by a time limit.  Returns
    ``(advantages, returns)`` where returns use the unnormalized advantages.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    T = len(rewards)
    r = rewards + (gamma * np.asarray(bootstrap) if bootstrap is not None else 0.0)
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0])
    next_v = np.asarray(last_values, dtype=float)
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = r[t] + gamma * next_v * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
        next_v = values[t]
    returns = adv + values
    if normalize:
        sel = adv if mask is None else adv[np.asarray(mask, bool)]
        adv = (adv - sel.mean()) / (sel.std() + 1e-8)
    return adv, returns


# -- PPO update -------------------------------------------------------------------------

def surrogate_grad_logp(ratio, adv, clip):
    """d/d(logp) of ``-min(ratio A, clip(ratio) A)`` per sample (unscaled)."""
    active = np.where(adv >= 0, ratio < 1 + clip, ratio > 1 - clip)
    return -ratio * adv * active


def ppo_loss_and_grads(ac: ActorCritic, actor_obs, critic_obs, actions, logp_old, adv, returns,
                       cfg: PPOConfig):
    """Clipped-surrogate + value + entropy loss on one minibatch with its gradients."""
    B = len(actions)
    x_a = ac.actor_norm.normalize(actor_obs)
    x_c = ac.critic_norm.normalize(critic_obs)
    mu, tape_a = forward(ac.actor, x_a)
    v, tape_c = forward(ac.critic, x_c)
    v = v[:, 0]
    std = np.exp(ac.log_std)
    logp = gaussian_logp(actions, mu, ac.log_std)
    ratio = np.exp(logp - logp_old)
    surr = -np.minimum(ratio * adv, np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * adv).mean()
    v_loss = 0.5 * np.mean((v - returns) ** 2)
    entropy = float(np.sum(ac.log_std) + 0.5 * ac.act_dim * (1 + _LOG_2PI))
    loss = surr + cfg.value_coef * v_loss - cfg.entropy_coef * entropy

    g_logp = surrogate_grad_logp(ratio, adv, cfg.clip) / B
    diff = actions - mu
    g_mu = g_logp[:, None] * diff / std ** 2
    g_log_std = (g_logp[:, None] * (diff ** 2 / std ** 2 - 1.0)).sum(axis=0) - cfg.entropy_coef
    ga = backward(tape_a, g_mu)
    gc = backward(tape_c, (cfg.value_coef * (v - returns) / B)[:, None])
    grads = ga.params() + gc.params() + [g_log_std]
    clipped = float(np.mean(np.abs(ratio - 1) > cfg.clip))
    return loss, grads, {"surrogate": float(surr), "value_loss": float(v_loss),
                         "entropy": entropy, "clip_fraction": clipped}


def gaussian_kl(mu_old, log_std_old, mu_new, log_std_new):
    """Mean KL(old || new) of diagonal Gaussians."""
    var_old, var_new = np.exp(2 * log_std_old), np.exp(2 * log_std_new)
    kl = (log_std_new - log_std_old + (var_old + (mu_old - mu_new) ** 2) / (2 * var_new) - 0.5)
    return float(kl.sum(axis=-1).mean())


def ppo_update(ac: ActorCritic, buf: RolloutBuffer, cfg: PPOConfig | None = None, rng=None):
    """Run the PPO epochs on a collected buffer; returns a metrics dict.

    A non-finite loss or gradient restores the parameters and optimizer state
    from before the update and reports ``aborted = 1``.
    """
    cfg = cfg or ac.cfg
    rng = np.random.default_rng(rng)
    adv, ret = compute_advantages(buf.rewards, buf.values, buf.dones, buf.last_values,
                                  cfg.gamma, cfg.lam, buf.bootstrap, True, buf.mask)
    buf.advantages, buf.returns = adv, ret
    m = buf.mask.reshape(-1)
    A = buf.actor_obs.reshape(-1, ac.actor_dim)[m]
    C = buf.critic_obs.reshape(-1, ac.critic_dim)[m]
    act = buf.actions.reshape(-1, ac.act_dim)[m]
    lp = buf.logp.reshape(-1)[m]
    adv_f, ret_f = adv.reshape(-1)[m], ret.reshape(-1)[m]
    snap = ac.snapshot()
    mu_old = ac.mean_action(A)
    log_std_old = ac.log_std.copy()
    n = len(act)
    mb = max(1, n // cfg.minibatches)
    stats, kl = [], 0.0
    try:
        for _ in range(cfg.epochs):
            perm = rng.permutation(n)
            for s in range(0, n - mb + 1, mb):
                idx = perm[s:s + mb]
                loss, grads, st = ppo_loss_and_grads(ac, A[idx], C[idx], act[idx], lp[idx],
                                                     adv_f[idx], ret_f[idx], cfg)
                if not np.isfinite(loss):
                    raise NonFiniteError("non-finite PPO loss")
                ac.opt.step(ac.params(), grads)
                np.clip(ac.log_std, *LOG_STD_BOUNDS, out=ac.log_std)
                stats.append(st)
            kl = gaussian_kl(mu_old, log_std_old, ac.mean_action(A), ac.log_std)
            if cfg.adaptive_kl:
                if kl > 2.0 * cfg.desired_kl:
                    ac.opt.lr = max(cfg.lr_bounds[0], ac.opt.lr / 1.5)
                elif kl < 0.5 * cfg.desired_kl:
                    ac.opt.lr = min(cfg.lr_bounds[1], ac.opt.lr * 1.5)
    except NonFiniteError:
        ac.restore(snap)
        return {"aborted": 1.0, "kl": float("nan"), "lr": ac.opt.lr}
    out = {k: float(np.mean([s[k] for s in stats])) for k in stats[0]} if stats else {}
    out.update(kl=kl, lr=ac.opt.lr, aborted=0.0)
    ac.update_normalizers(A, C)
    return out


# -- metrics stream -------------------------------------------------------------------

class MetricsLog:
    """Append-only CSV; the header is fixed by the first row written."""

    def __init__(self, path):
        self.path = Path(path)
        self.fields = None
        if self.path.exists() and self.path.stat().st_size:
            with self.path.open() as f:
                self.fields = next(csv.reader(f))

    def append(self, row: dict):
        new = self.fields is None
        if new:
            self.fields = list(row)
        with self.path.open("a", newline="") as f:
            w = csv.DictWriter(f, self.fields, extrasaction="ignore")
            if new:
                w.writeheader()
            w.writerow(row)


def read_metrics(path):
    with Path(path).open() as f:
        rows = list(csv.DictReader(f))
    return {k: np.array([float(r[k]) for r in rows]) for k in (rows[0] if rows else {})}


def term_means(buf: RolloutBuffer):
    out = {}
    for k, v in buf.terms.items():
        out[k] = float(v[buf.mask].mean()) if v.shape == buf.mask.shape else float(v.mean())
    out["reward"] = float(buf.rewards[buf.mask].mean())
    return out


# -- pendulum fixture -----------------------------------------------------------------

class PendulumEnv:
    """Batched 1-DOF inverted pendulum, started near upright.

    Observations ``[cos th, sin th, thdot]`` are shared by actor and critic.
    The reward is ``-(th^2 + 0.1 thdot^2 + 0.001 u^2)`` with ``th`` wrapped
    to [-pi, pi).  Episodes last ``horizon`` steps.
    """

    def __init__(self, n_envs=16, seed=0, horizon=100, dt=0.05, max_torque=5.0,
                 init_angle=0.4, g=10.0, mass=1.0, length=1.0):
        self.n = n_envs
        self.rng = np.random.default_rng(seed)
        self.horizon, self.dt, self.max_torque = horizon, dt, max_torque
        self.init_angle, self.g, self.m, self.l = init_angle, g, mass, length
        self.actor_dim = self.critic_dim = 3
        self.act_dim = 1
        self.th = np.zeros(n_envs)
        self.thdot = np.zeros(n_envs)
        self.t = np.zeros(n_envs, dtype=int)
        self.reset()

    def reset(self, env_ids=None):
        ids = np.arange(self.n) if env_ids is None else np.asarray(env_ids)
        self.th[ids] = self.rng.uniform(-self.init_angle, self.init_angle, len(ids))
        self.thdot[ids] = self.rng.uniform(-0.5, 0.5, len(ids))
        self.t[ids] = 0
        return self.observations()

    def observations(self):
        obs = np.stack([np.cos(self.th), np.sin(self.th), self.thdot], axis=1)
        return obs, obs.copy()

    def step(self, actions):
        u = np.clip(np.asarray(actions, dtype=float)[:, 0], -1.0, 1.0) * self.max_torque
        th = (self.th + np.pi) % (2 * np.pi) - np.pi
        reward = -(th ** 2 + 0.1 * self.thdot ** 2 + 0.001 * u ** 2)
        acc = 3 * self.g / (2 * self.l) * np.sin(self.th) + 3.0 / (self.m * self.l ** 2) * u
        self.thdot = np.clip(self.thdot + acc * self.dt, -8.0, 8.0)
        self.th = self.th + self.thdot * self.dt
        self.t += 1
        timeout = self.t >= self.horizon
        _, final = self.observations()
        zero = np.zeros(self.n)
        info = {"timeout": timeout, "fallen": np.zeros(self.n, bool),
                "failed": np.zeros(self.n, bool), "final_critic_obs": final}
        ids = np.flatnonzero(timeout)
        if len(ids):
            self.reset(ids)
        a, c = self.observations()
        return a, c, {"r_G": reward, "r_C": zero, "r_Tu": zero}, timeout, info


def train_ppo(env, ac: ActorCritic, n_updates, steps, seed=0, log=None, callback=None):
    """Plain PPO loop (no discriminator); returns per-update mean rewards."""
    col = RolloutCollector(env, ac, seed=seed)
    rng = np.random.default_rng(seed + 1)
    history = []
    for u in range(n_updates):
        buf = col.collect(steps)
        metrics = ppo_update(ac, buf, rng=rng)
        row = {"update": u, **term_means(buf), **metrics}
        history.append(row["reward"])
        if log is not None:
            log.append(row)
        if callback is not None:
            callback(u, row)
    return np.array(history)
