"""Dataset-policy co-optimization: train, harvest surviving rollouts, raise w_I, repeat."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .dataset import (MotionDataset, export_rollouts, extract_discriminator_obs, load_dataset,
                      sample_windows, save_dataset)
from .discriminator import Discriminator, DiscriminatorConfig
from .env import EnvConfig, QuadrupedEnv
from .policy import ActorCritic, MetricsLog, PPOConfig, RolloutCollector, ppo_update, term_means
from .robot import load_robot_spec, make_solo8_from_solo9

VARIANTS = ("solo9", "solo8", "solo9_fixed", "solo9_free")


class PlanError(ValueError):
    pass


class IterationFailed(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def make_variant(variant):
    """Robot spec and free-waist flag for an evaluation/training variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant == "solo8":
        return load_robot_spec("solo8"), False
    spec = load_robot_spec("solo9")
    if variant == "solo9_fixed":
        return make_solo8_from_solo9(spec), False
    return spec, variant == "solo9_free"


@dataclass
class IterationSpec:
    w_I: float = 0.3
    updates: int = 50
    steps: int = 24  # control steps per env per update
    lin_vel_cmd: tuple = (0.0, 1.0)
    ang_vel_cmd: tuple = (-0.5, 0.5)
    rollouts: int = 32  # guided rollout episodes after training
    rollout_steps: int = 240
    export_episodes: int = -1  # -1 exports every eligible rollout, 0 exports none
    tracking_gate: float = 0.3  # rad/s, mean |yaw-rate error| allowed for export
    allowlist: list = field(default_factory=list)  # clip names kept from the input dataset


@dataclass
class IterationPlan:
    iterations: list = field(default_factory=lambda: [IterationSpec(w_I=w)
                                                      for w in (0.3, 0.5, 0.7)])
    variant: str = "solo9"
    n_envs: int = 64
    warm_start: bool = True
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    env: EnvConfig = field(default_factory=EnvConfig)

    def validate(self):
        if not self.iterations:
            raise PlanError("plan has no iterations")
        ws = [it.w_I for it in self.iterations]
        if any(not 0.0 <= w <= 1.0 for w in ws):
            raise PlanError("w_I must lie in [0, 1]")
        if any(b < a for a, b in zip(ws, ws[1:])):
            raise PlanError(f"w_I must be non-decreasing across iterations, got {ws}")
        if self.variant not in VARIANTS:
            raise PlanError(f"unknown variant {self.variant!r}")
        self.env.validate()
        return self

    @property
    def n_iterations(self):
        return len(self.iterations)


def _fill(obj, values, where):
    for k, v in values.items():
        if not hasattr(obj, k):
            raise PlanError(f"unknown plan key {where}.{k}")
        cur = getattr(obj, k)
        setattr(obj, k, tuple(v) if isinstance(cur, tuple) else v)
    return obj


def plan_from_dict(d) -> IterationPlan:
    d = dict(d)
    plan = IterationPlan(iterations=[])
    defaults = d.pop("defaults", {})
    for i, it in enumerate(d.pop("iteration", [])):
        plan.iterations.append(_fill(IterationSpec(), {**defaults, **it}, f"iteration[{i}]"))
    if "disc" in d:
        _fill(plan.disc, d.pop("disc"), "disc")
    if "ppo" in d:
        _fill(plan.ppo, d.pop("ppo"), "ppo")
    if "env" in d:
        from .env.config import config_from_dict
        plan.env = config_from_dict(d.pop("env"), plan.env)
    _fill(plan, {k: v for k, v in d.items()}, "plan")
    return plan.validate()


def load_plan(path) -> IterationPlan:
    try:
        return plan_from_dict(tomli.loads(Path(path).read_text()))
    except tomli.TOMLDecodeError as exc:
        raise PlanError(f"{path}: {exc}") from None


# -- one iteration -------------------------------------------------------------------

def _iteration_env_cfg(plan: IterationPlan, step: IterationSpec):
    cfg = dataclasses.replace(plan.env)
    cfg.rewards = dataclasses.replace(plan.env.rewards, w_I=step.w_I)
    cfg.randomization = dataclasses.replace(plan.env.randomization,
                                            lin_vel_cmd=tuple(step.lin_vel_cmd),
                                            ang_vel_cmd=tuple(step.ang_vel_cmd))
    return cfg.validate()


def guided_rollouts(env: QuadrupedEnv, policy, steps, rng, disc=None):
    """One episode per env under sampled commands, stopping each env at its first done.

    Returns a list of trajectory dicts (frames with foot positions, fallen,
    command, yaw-rate error, mean imitation reward).
    """
    env.command_override = None
    env.reset()
    n = env.n
    active = np.ones(n, dtype=bool)
    fallen = np.zeros(n, dtype=bool)
    cmd = env.cmd.copy()
    frames = [env.frames(extra=True)]
    yaw = []
    ends = np.full(n, steps)
    for t in range(steps):
        actor, _ = env.observations()
        _, _, terms, done, info = env.step(policy(actor))
        yaw.append(terms["yaw_rate"])
        # frames of the state reached by this step, taken before any auto-reset
        frames.append(info["final_frames"])
        newly = active & done
        fallen |= newly & info["fallen"]
        ends[newly] = t + 1
        active &= ~done
        if not active.any():
            break
    frames = np.array(frames)
    yaw = np.array(yaw)
    out = []
    for i in range(n):
        f = frames[:ends[i] + 1, i]
        err = float(np.mean(np.abs(yaw[:ends[i], i] - cmd[i, 1]))) if ends[i] else 0.0
        r_I = float("nan")
        if disc is not None and len(f) >= disc.cfg.H:
            obs = extract_discriminator_obs(f[:, :-12])
            H = disc.cfg.H
            wins = np.stack([obs[s:s + H] for s in range(len(obs) - H + 1)])
            r_I = float(disc.reward(wins).mean())
        out.append({"frames": f, "fallen": bool(fallen[i]), "cmd": cmd[i].copy(),
                    "yaw_error": err, "r_I": r_I, "name": f"rollout{i:03d}"})
    return out


def run_iteration(step: IterationSpec, dataset_in: MotionDataset, ac: ActorCritic | None,
                  disc: Discriminator | None, plan: IterationPlan, seed=0, log: MetricsLog = None,
                  iteration=0):
    """Train against ``dataset_in`` with mix weight ``step.w_I``, then harvest rollouts.

    Returns ``(dataset_out, ac, disc, report)``.
    """
    if dataset_in.dof != 9:
        raise PlanError("co-optimization needs a 9-DOF dataset")
    ss = np.random.SeedSequence(seed)
    s_env, s_ac, s_disc, s_col, s_ppo, s_exp, s_roll = ss.spawn(7)
    spec, free_waist = make_variant(plan.variant)
    cfg = _iteration_env_cfg(plan, step)
    env = QuadrupedEnv(spec, plan.n_envs, cfg, seed=s_env, free_waist=free_waist)
    if ac is None:
        ac = ActorCritic(env.actor_dim, env.critic_dim, env.nj, plan.ppo, seed=s_ac)
    if disc is None:
        disc = Discriminator(plan.disc, seed=s_disc)
    else:
        disc.replay.size = disc.replay.pos = 0
    ds = dataset_in.select(step.allowlist) if step.allowlist else dataset_in
    col = RolloutCollector(env, ac, disc, seed=s_col)
    exp_rng = np.random.default_rng(s_exp)
    ppo_rng = np.random.default_rng(s_ppo)
    for u in range(step.updates):
        buf = col.collect(step.steps, w_I=step.w_I)
        pol = buf.disc_windows[buf.mask]
        expert, _ = sample_windows(ds, len(pol), disc.cfg.H, rng=exp_rng)
        dstats = disc.update(expert, pol)
        metrics = ppo_update(ac, buf, rng=ppo_rng)
        if log is not None:
            row = {"iteration": iteration, "update": u, "w_I": step.w_I, **term_means(buf),
                   **metrics, **{f"disc_{k}": v for k, v in dstats.items()},
                   "pd_level": float(env.curriculum.pd_gain_level.mean()),
                   "terrain_level": float(env.curriculum.terrain_level.mean())}
            log.append(row)

    # guided rollouts with the deterministic policy
    renv = QuadrupedEnv(spec, step.rollouts, cfg, seed=s_roll, free_waist=free_waist)
    trajs = guided_rollouts(renv, lambda o: ac.mean_action(o), step.rollout_steps,
                            np.random.default_rng(s_roll), disc)
    for tr in trajs:
        tr["eligible"] = (len(tr["frames"]) >= step.rollout_steps + 1
                          and tr["yaw_error"] < step.tracking_gate)
    survived = [not tr["fallen"] for tr in trajs]
    report = {"iteration": iteration, "w_I": step.w_I,
              "tracking_error": float(np.mean([tr["yaw_error"] for tr in trajs])),
              "survival_rate": float(np.mean(survived)),
              "mean_r_I": float(np.nanmean([tr["r_I"] for tr in trajs])),
              "eligible": int(sum(tr["eligible"] and not tr["fallen"] for tr in trajs)),
              "dataset_in_hash": dataset_in.content_hash()}
    if step.export_episodes == 0:
        dataset_out = dataset_in
    else:
        elig = [tr for tr in trajs if tr["eligible"] and not tr["fallen"]]
        if step.export_episodes > 0:
            elig = elig[:step.export_episodes]
        if not elig:
            raise IterationFailed(f"iteration {iteration}: no eligible rollouts "
                                  f"(survival {report['survival_rate']:.2f}, mean yaw error "
                                  f"{report['tracking_error']:.3f})", report)
        dataset_out = export_rollouts(
            [{"frames": tr["frames"][:, :-12], "name": tr["name"]} for tr in elig],
            parent=dataset_in,
            provenance={"iteration": iteration, "w_I": step.w_I, "seed": int(seed),
                        "lin_vel_cmd": list(step.lin_vel_cmd),
                        "ang_vel_cmd": list(step.ang_vel_cmd)})
    report["exported"] = 0 if dataset_out is dataset_in else len(dataset_out.clips)
    report["dataset_out_hash"] = dataset_out.content_hash()
    return dataset_out, ac, disc, report


# -- full plan -----------------------------------------------------------------------

def _file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_plan(plan: IterationPlan, dataset0: MotionDataset, seed=0, out_dir=None):
    """Run every iteration in order, persisting datasets, checkpoints and reports.

    Layout under ``out_dir``: ``datasets/iter_K.mds``, ``checkpoints/iter_K.npz``,
    ``reports/iter_K.json``, ``metrics.csv`` and ``lineage.json``.
    """
    plan.validate()
    if dataset0.iteration != 0:
        raise PlanError("the first dataset must be the iteration-0 origin dataset")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        for sub in ("datasets", "checkpoints", "reports"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        save_dataset(dataset0, out / "datasets" / "iter_0.mds")
    log = MetricsLog(out / "metrics.csv") if out is not None else None
    seeds = np.random.SeedSequence(seed).spawn(plan.n_iterations)
    lineage = [{"iteration": 0, "dataset_hash": dataset0.content_hash(),
                "parent_hash": dataset0.provenance.get("parent_hash")}]
    ds, ac, disc, reports = dataset0, None, None, []
    for k, step in enumerate(plan.iterations):
        if not plan.warm_start:
            ac, disc = None, None
        try:
            ds_next, ac, disc, report = run_iteration(step, ds, ac, disc, plan,
                                                      seed=int(seeds[k].generate_state(1)[0]),
                                                      log=log, iteration=k)
        except IterationFailed as exc:
            if out is not None:
                (out / "reports" / f"iter_{k}.json").write_text(
                    json.dumps({"failed": str(exc), **(exc.report or {})}, indent=2))
                (out / "lineage.json").write_text(json.dumps(lineage, indent=2))
            raise
        reports.append(report)
        entry = {"iteration": k + 1, "dataset_hash": ds_next.content_hash(),
                 "parent_hash": ds_next.provenance.get("parent_hash"), "w_I": step.w_I}
        if out is not None:
            save_dataset(ds_next, out / "datasets" / f"iter_{k + 1}.mds")
            ck = out / "checkpoints" / f"iter_{k}.npz"
            ac.save(ck, step=k, extra=disc.state_arrays() | {
                f"disc/{i}": p for i, p in enumerate(disc.net.params())},
                meta={"iteration": k, "variant": plan.variant, "w_I": step.w_I})
            entry["checkpoint_hash"] = _file_hash(ck)
            (out / "reports" / f"iter_{k}.json").write_text(json.dumps(report, indent=2))
        lineage.append(entry)
        ds = ds_next
    if out is not None:
        (out / "lineage.json").write_text(json.dumps(lineage, indent=2))
    return {"policy": ac, "discriminator": disc, "dataset": ds, "reports": reports,
            "lineage": lineage}


def verify_lineage(out_dir):
    """Check that every stored dataset names its predecessor's content hash."""
    out = Path(out_dir)
    lineage = json.loads((out / "lineage.json").read_text())
    prev = None
    for entry in lineage:
        ds = load_dataset(out / "datasets" / f"iter_{entry['iteration']}.mds")
        if ds.content_hash() != entry["dataset_hash"]:
            return False
        if prev is not None and ds.provenance.get("parent_hash") not in (None, prev):
            return False
        if prev is not None and ds.provenance.get("parent_hash") is None \
                and entry["dataset_hash"] != prev:
            return False
        prev = entry["dataset_hash"]
    return True
