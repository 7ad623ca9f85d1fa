"""Command-line surface: train, eval, probe, iicr, export-embeddings, replay.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys

import numpy as np

from . import evals, rng as rng_mod, train as train_mod
from .config import VARIANTS, load_config
from .envs import ENV_KINDS, make_env, make_policy_set, read_episode_log


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common_flags(parser):
    parser.add_argument("--config", help="INI-style config file")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--env", choices=ENV_KINDS)
    parser.add_argument("--variant", choices=VARIANTS)
    parser.add_argument("--out", help="output directory or file")
    parser.add_argument("--checkpoint", help="checkpoint directory")


def build_parser():
    parser = _Parser(prog="clamrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command",
                              parser_class=_Parser)
    sub.required = True

    p_train = sub.add_parser("train",
                             help="run the training loop")
    _common_flags(p_train)
    p_train.add_argument("--episodes", type=int,
                         help="total episodes (extends a resumed run)")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval",
                            help="evaluate returns from a checkpoint")
    _common_flags(p_eval)
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seeds", default="0", help="comma-separated seeds")
    p_eval.set_defaults(func=_cmd_eval)

    p_probe = sub.add_parser("probe",
                             help="train prediction probes on embeddings")
    _common_flags(p_probe)
    p_probe.add_argument("--kind", choices=("action", "policy"),
                         default="action")
    p_probe.add_argument("--episodes", type=int, default=60)
    p_probe.set_defaults(func=_cmd_probe)

    p_iicr = sub.add_parser("iicr",
                            help="clustering ratio of embeddings by policy")
    _common_flags(p_iicr)
    p_iicr.add_argument("--steps", default="10,20,30,40,50")
    p_iicr.add_argument("--episodes", type=int, default=20,
                        help="episodes per policy")
    p_iicr.set_defaults(func=_cmd_iicr)

    p_dump = sub.add_parser("export-embeddings",
                            help="dump per-step embeddings as JSON lines")
    _common_flags(p_dump)
    p_dump.add_argument("--steps", default="25")
    p_dump.add_argument("--episodes", type=int, default=20,
                        help="episodes per policy")
    p_dump.set_defaults(func=_cmd_dump)

    p_replay = sub.add_parser("replay",
                              help="re-simulate a logged episode file")
    _common_flags(p_replay)
    p_replay.add_argument("--log", required=True, help="episode JSONL file")
    p_replay.set_defaults(func=_cmd_replay)
    return parser


# ------------------------------------------------------------------ helpers

def _parse_int_list(text):
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"cannot parse integer list {text!r}")


def _require(args, flag):
    value = getattr(args, flag.lstrip("-").replace("-", "_"))
    if value is None:
        raise UsageError(f"{flag} is required for this command")
    return value


def _load_run_setup(args):
    """Checkpoint -> (state, env, policy set, controller, embedder)."""
    path = _require(args, "--checkpoint")
    state, _ = train_mod.load_run(path)
    config = state.config
    env = make_env(config.env)
    policy_set = make_policy_set(config.env)
    if config.policy_subset is not None:
        policy_set = policy_set.subset(config.policy_subset)
    controller = evals.ppo_controller(state.actor)
    if config.variant == "nam":
        embedder = evals.zero_embedder(config.d)
    else:
        embedder = evals.target_embedder(state.target, state.model_config)
    return state, env, policy_set, controller, embedder


def _metric_writer(out_path):
    if out_path:
        fh = open(out_path, "w", newline="")
    else:
        fh = sys.stdout
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["variant", "env", "seed", "metric", "step", "value",
                     "count"])
    return fh, writer


# --------------------------------------------------------------- subcommands

def _cmd_train(args):
    overrides = {"env": args.env, "variant": args.variant, "seed": args.seed,
                 "out": args.out, "episodes": args.episodes}
    if args.checkpoint:
        state, _ = train_mod.load_run(args.checkpoint)
        config = state.config
        if args.episodes is not None:
            config = dataclasses.replace(config, episodes=args.episodes)
        if args.out is not None:
            config = dataclasses.replace(config, out_dir=args.out)
        result = train_mod.train_run(config, resume_from=args.checkpoint)
    else:
        config = load_config(args.config, overrides)
        result = train_mod.train_run(config)
    print(f"trained {result.episodes} episodes "
          f"({result.ppo_updates} ppo updates, "
          f"{result.clam_updates} clam updates)")
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_dir}")
    return 0


def _cmd_eval(args):
    state, env, policy_set, controller, embedder = _load_run_setup(args)
    seeds = _parse_int_list(args.seeds)
    report = evals.evaluate_returns(env, policy_set, controller, embedder,
                                    args.episodes, seeds)
    config = state.config
    fh, writer = _metric_writer(args.out)
    try:
        for seed, mean in zip(report.seeds, report.per_seed_means):
            writer.writerow([config.variant, config.env, seed,
                             report.metric, "", repr(float(mean)),
                             report.episodes])
        writer.writerow([config.variant, config.env, "all",
                         report.metric + "_mean", "", repr(report.mean),
                         report.episodes * len(report.seeds)])
        writer.writerow([config.variant, config.env, "all",
                         report.metric + "_ci95", "", repr(report.ci95),
                         report.episodes * len(report.seeds)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _cmd_probe(args):
    state, env, policy_set, controller, embedder = _load_run_setup(args)
    config = state.config
    seed = config.seed if args.seed is None else args.seed
    dataset = evals.collect_probe_data(env, policy_set, controller, embedder,
                                       args.episodes, seed, args.kind)
    if args.kind == "action":
        n_classes = env.spec.action_counts[1]
        kinds = ("embed+obs", "obs")
    else:
        n_classes = len(policy_set.policies)
        kinds = ("embed",)
    fh, writer = _metric_writer(args.out)
    try:
        for input_kind in kinds:
            result = evals.probe_experiment(
                dataset, input_kind, n_classes,
                rng_mod.stream(seed, "eval", 0))
            metric = f"{args.kind}_probe[{input_kind}]"
            for step, acc, count in result.by_step:
                writer.writerow([config.variant, config.env, seed, metric,
                                 step, repr(acc), count])
            writer.writerow([config.variant, config.env, seed,
                             metric + "_overall", "", repr(result.accuracy),
                             result.test_count])
        writer.writerow([config.variant, config.env, seed,
                         f"{args.kind}_probe_chance", "",
                         repr(1.0 / n_classes), len(dataset)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _cmd_iicr(args):
    state, env, policy_set, controller, embedder = _load_run_setup(args)
    config = state.config
    seed = config.seed if args.seed is None else args.seed
    steps = _parse_int_list(args.steps)
    ratios = evals.iicr_by_step(env, policy_set, controller, embedder,
                                args.episodes, steps, seed)
    fh, writer = _metric_writer(args.out)
    try:
        for step in sorted(ratios):
            writer.writerow([config.variant, config.env, seed, "iicr", step,
                             repr(ratios[step]),
                             args.episodes * len(policy_set.policies)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _cmd_dump(args):
    state, env, policy_set, controller, embedder = _load_run_setup(args)
    seed = state.config.seed if args.seed is None else args.seed
    out_path = args.out or "embeddings.jsonl"
    steps = _parse_int_list(args.steps)
    count = evals.export_embeddings(out_path, env, policy_set, controller,
                                    embedder, args.episodes, steps, seed)
    print(f"wrote {count} records to {out_path}")
    return 0


def _cmd_replay(args):
    env_kind = _require(args, "--env")
    env = make_env(env_kind)
    records = read_episode_log(args.log)
    if not records:
        raise RuntimeError(f"no episodes in {args.log!r}")
    for i, rec in enumerate(records):
        state, obs = env.reset(rng_mod.stream(rec["seed"], "env"))
        for t, logged in enumerate(rec["steps"]):
            o_e, o_m, a_e, a_m, reward = logged
            replayed = obs[env.ego_agent].tolist()
            if replayed != o_e:
                raise RuntimeError(f"episode {i} step {t}: observation "
                                   "diverges from log")
            modeled = a_m[0] if len(a_m) == 1 else a_m
            state, obs, rewards, done = env.step(
                state, env.joint_actions(a_e, modeled))
            if float(rewards[env.ego_agent]) != reward:
                raise RuntimeError(f"episode {i} step {t}: reward "
                                   f"{float(rewards[env.ego_agent])!r} "
                                   f"diverges from logged {reward!r}")
        print(f"episode {i}: OK ({len(rec['steps'])} steps)")
    return 0


def main(argv=None):
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 2
    except Exception as exc:                       # runtime failures -> 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
