"""Command line entry point: ``solo9 {train,evaluate,augment,replay,plot}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("solo9")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}\n\n"
                         f"{self.format_help()}")


def build_parser():
    p = _Parser(prog="solo9", description="Waist-articulated quadruped simulation and imitation training.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="run a co-optimization plan")
    t.add_argument("--plan", help="plan TOML (default: built-in three-iteration plan)")
    t.add_argument("--dataset", help="origin dataset (default: zero-waist-augmented fixture trot)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="runs/train")
    t.add_argument("--variant", help="override the plan's robot variant")
    t.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="environment config override (repeatable)")

    e = sub.add_parser("evaluate", help="run an evaluation protocol")
    e.add_argument("--protocol", required=True,
                   help="shipped name (table2, table2_steps, table3/tableIII, steering) or file")
    e.add_argument("--variant")
    e.add_argument("--checkpoint", help="policy checkpoint (default: zero action)")
    e.add_argument("--out", default="eval_report.json")
    e.add_argument("--episodes", type=int, help="episodes per seed group")
    e.add_argument("--groups", type=int, help="number of seed groups")
    e.add_argument("--duration", type=float)
    e.add_argument("--seed", type=int)
    e.add_argument("--push-interval", type=float)
    e.add_argument("--log-dir", help="write steering trajectory logs here")
    e.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")

    a = sub.add_parser("augment", help="insert zero waist channels into an 8-DOF dataset")
    a.add_argument("--in", dest="inp", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--waist-index", type=int, default=4)

    r = sub.add_parser("replay", help="step a dataset clip through kinematics")
    r.add_argument("--dataset", required=True)
    r.add_argument("--clip", type=int, default=0)
    r.add_argument("--out", required=True, help="trajectory log (.txt/.csv text, else binary)")

    pl = sub.add_parser("plot", help="render metric streams or trajectories to images")
    pl.add_argument("--metrics", help="metrics CSV")
    pl.add_argument("--keys", nargs="+", default=["reward", "r_I", "r_Tu"])
    pl.add_argument("--trajectory", nargs="+", default=[], help="trajectory logs")
    pl.add_argument("--out", required=True, help="image file")
    p.subcommands = {"train": t, "evaluate": e, "augment": a, "replay": r, "plot": pl}
    return p


def _train(args):
    from .coopt import IterationPlan, load_plan, run_plan, verify_lineage
    from .dataset import augment_zero_waist, fixture_trot_gait, load_dataset
    from .env.config import apply_overrides

    plan = load_plan(args.plan) if args.plan else IterationPlan()
    if args.variant:
        plan.variant = args.variant
    plan.env = apply_overrides(plan.env, args.set)
    plan.validate()
    if args.dataset:
        ds = load_dataset(args.dataset)
        if ds.dof == 8:
            ds = augment_zero_waist(ds)
    else:
        ds = augment_zero_waist(fixture_trot_gait())
    res = run_plan(plan, ds, seed=args.seed, out_dir=args.out)
    ok = verify_lineage(args.out)
    for rep in res["reports"]:
        log.info("iteration %d: w_I %.2f, r_I %.4f, survival %.2f, exported %d",
                 rep["iteration"], rep["w_I"], rep["mean_r_I"], rep["survival_rate"],
                 rep["exported"])
    print(json.dumps({"out": str(args.out), "lineage_ok": ok,
                      "final_dataset_hash": res["lineage"][-1]["dataset_hash"]}))
    return EXIT_OK if ok else EXIT_RUNTIME


def _evaluate(args):
    from .env.config import apply_overrides
    from .evaluation import evaluate, load_protocol
    from .policy import ActorCritic

    proto = load_protocol(args.protocol)
    changes = {"variant": args.variant, "n_episodes": args.episodes, "n_groups": args.groups,
               "duration": args.duration, "seed": args.seed,
               "push_interval": args.push_interval}
    proto = dataclasses.replace(proto, **{k: v for k, v in changes.items() if v is not None})
    proto.validate()
    cfg = apply_overrides(None, args.set) if args.set else None
    policy = None
    if args.checkpoint:
        policy, ck = ActorCritic.load(args.checkpoint)
        trained = (ck.get("meta") or {}).get("variant")
        if trained and trained != proto.variant:
            log.warning("checkpoint was trained on %s, evaluating on %s", trained, proto.variant)
    if args.log_dir:
        Path(args.log_dir).mkdir(parents=True, exist_ok=True)
    report = evaluate(policy, proto, cfg, log_dir=args.log_dir)
    report.write(args.out)
    print(json.dumps({"out": str(args.out), "survival_rate": report.survival_rate,
                      "survival_std": report.survival_std}))
    return EXIT_OK


def _augment(args):
    from .dataset import augment_zero_waist, load_dataset, save_dataset

    ds = augment_zero_waist(load_dataset(args.inp), waist_index=args.waist_index)
    save_dataset(ds, args.out)
    print(json.dumps({"out": str(args.out), "dof": ds.dof, "hash": ds.content_hash()}))
    return EXIT_OK


def _replay(args):
    from .dataset import load_dataset, save_dataset
    from .evaluation import replay_clip

    ds = load_dataset(args.dataset)
    if not 0 <= args.clip < len(ds.clips):
        raise IndexError(f"clip {args.clip} out of range (dataset has {len(ds.clips)})")
    out = replay_clip(ds, args.clip)
    save_dataset(out, args.out)
    print(json.dumps({"out": str(args.out), "frames": len(out.clips[0])}))
    return EXIT_OK


def _plot(args):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .dataset import load_dataset
    from .policy import read_metrics

    if not args.metrics and not args.trajectory:
        raise UsageError("plot needs --metrics and/or --trajectory")
    panels = (1 if args.metrics else 0) + (1 if args.trajectory else 0)
    fig, axes = plt.subplots(1, panels, figsize=(6 * panels, 4), squeeze=False)
    ax_iter = iter(axes[0])
    if args.metrics:
        m = read_metrics(args.metrics)
        ax = next(ax_iter)
        x = np.arange(len(next(iter(m.values())))) if m else []
        for k in args.keys:
            if k not in m:
                raise KeyError(f"metric {k!r} not in {args.metrics}")
            ax.plot(x, m[k], label=k)
        ax.set_xlabel("update")
        ax.legend()
    if args.trajectory:
        ax = next(ax_iter)
        for path in args.trajectory:
            ds = load_dataset(path)
            for c, name in zip(ds.clips, ds.names):
                ax.plot(c[:, 0], c[:, 1], label=f"{Path(path).stem}:{name}")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(args.out)
    plt.close(fig)
    print(json.dumps({"out": str(args.out)}))
    return EXIT_OK


COMMANDS = {"train": _train, "evaluate": _evaluate, "augment": _augment, "replay": _replay,
            "plot": _plot}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        if extra:
            # report unknown flags against the subcommand so its help text is shown
            parser.subcommands[args.command].error(f"unrecognized arguments: {' '.join(extra)}")
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 2
        sys.stderr.write(f"solo9 {args.command}: {type(exc).__name__}: {exc}\n")
        if args.verbose:
            raise
        return EXIT_RUNTIME


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
