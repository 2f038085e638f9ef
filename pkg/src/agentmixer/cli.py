"""Command-line entry points: train, eval, analyze, verify.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 numeric abort during optimization.
"""
import argparse
import json
import sys

import numpy as np

from agentmixer import autodiff as ad
from agentmixer import rngs
from agentmixer.config import ConfigError, load_config
from agentmixer.envs import MatrixGame
from agentmixer.equilibrium import equilibrium_report, product_joint
from agentmixer.joint_policy import build_joint
from agentmixer.nn import NumericError
from agentmixer.policies import HistoryWindow
from agentmixer.rollout import evaluate
from agentmixer.runner import (decentralized_heads, load_checkpoint,
                               train_run)
from agentmixer.verification import SUITES, run_suite

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _fail(message, code):
    print(f"error: {message}", file=sys.stderr)
    return code


def _print_json(payload):
    print(json.dumps(payload, indent=2))


def cmd_train(args):
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        return _fail(f"config file not found: {args.config}", EXIT_USAGE)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_USAGE)
    try:
        if args.seed is not None:
            cfg.seeds = (args.seed,)
        if args.steps is not None:
            cfg.total_env_steps = args.steps
            if args.steps < 0:
                raise ConfigError("run.total_env_steps", "must be >= 0")
    except ConfigError as exc:
        return _fail(str(exc), EXIT_USAGE)
    log = None if args.quiet else (lambda line: print(line, file=sys.stderr))
    try:
        _, summary = train_run(cfg, base_dir=args.out, log=log)
    except NumericError as exc:
        return _fail(f"numeric abort: {exc}", EXIT_NUMERIC)
    except RuntimeError as exc:
        return _fail(str(exc), EXIT_USAGE)
    _print_json(summary)
    return EXIT_OK


def _env_signature(env):
    action_spec = tuple(env.n_actions) if env.discrete else env.action_dim
    return (env.n_agents, env.discrete, tuple(env.obs_dims), action_spec)


def cmd_eval(args):
    try:
        ckpt_cfg, seed, learner = load_checkpoint(args.checkpoint)
    except (FileNotFoundError, ValueError) as exc:
        return _fail(f"cannot load checkpoint: {exc}", EXIT_USAGE)
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        return _fail(f"config file not found: {args.config}", EXIT_USAGE)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_USAGE)
    env = cfg.make_env()
    if _env_signature(env) != _env_signature(learner.env):
        return _fail(
            f"environment spec mismatch: checkpoint was trained on "
            f"{ckpt_cfg.env_name} with signature "
            f"{_env_signature(learner.env)}, config asks for "
            f"{cfg.env_name} with {_env_signature(env)}", EXIT_USAGE)
    episodes = args.episodes if args.episodes is not None else cfg.eval_episodes
    stats = evaluate(
        decentralized_heads(learner), cfg.make_env, episodes, seed,
        deterministic=True, window=ckpt_cfg.window,
        include_last_action=ckpt_cfg.include_last_action)
    _print_json({"mean": stats.mean_return, "std": stats.std_return,
                 "episodes": episodes})
    return EXIT_OK


def cmd_analyze(args):
    try:
        ckpt_cfg, seed, learner = load_checkpoint(args.checkpoint)
    except (FileNotFoundError, ValueError) as exc:
        return _fail(f"cannot load checkpoint: {exc}", EXIT_USAGE)
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        return _fail(f"config file not found: {args.config}", EXIT_USAGE)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_USAGE)
    env = cfg.make_env()
    if not isinstance(env, MatrixGame):
        return _fail(
            f"equilibrium analysis requires a one-shot matrix game, "
            f"got {cfg.env_name}", EXIT_USAGE)
    if _env_signature(env) != _env_signature(learner.env):
        return _fail(
            f"environment spec mismatch: checkpoint signature "
            f"{_env_signature(learner.env)} vs config "
            f"{_env_signature(env)}", EXIT_USAGE)

    # decentralized marginals at the game's single decision point
    rng = rngs.stream(seed, rngs.EVAL)
    obs = env.reset(rng)
    heads = decentralized_heads(learner)
    feats = []
    for i in range(env.n_agents):
        hw = HistoryWindow(i, env.obs_dims[i], ckpt_cfg.window,
                           ckpt_cfg.include_last_action and env.discrete,
                           env.n_actions[i] if env.discrete else 0)
        hw.push(obs[i])
        feats.append(hw.features().reshape(1, -1))
    with ad.no_grad():
        jps = build_joint(ad.Tensor(np.zeros((1, 1))),
                          [ad.Tensor(f) for f in feats], heads, None)
    marginals = [p[0] for p in jps.joint_probs()]
    joint = product_joint(marginals)
    report = equilibrium_report(env.payoff, joint)
    report.update(env=cfg.env_name, checkpoint=args.checkpoint,
                  algorithm=ckpt_cfg.algorithm,
                  marginals=[m.tolist() for m in marginals])
    _print_json(report)
    return EXIT_OK


def cmd_verify(args):
    report = run_suite(args.suite)
    _print_json(report)
    return EXIT_OK if report["passed"] else EXIT_VERIFY_FAIL


def build_parser():
    parser = argparse.ArgumentParser(
        prog="agentmixer",
        description="Correlated joint policies for cooperative multi-agent "
                    "RL: training, evaluation, and equilibrium analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train per the run config")
    p_train.add_argument("config")
    p_train.add_argument("--seed", type=int, default=None,
                         help="train this single seed instead of run.seeds")
    p_train.add_argument("--steps", type=int, default=None,
                         help="override run.total_env_steps")
    p_train.add_argument("--out", default=None,
                         help="output directory (default: config output_dir, "
                              "or AGENTMIXER_OUT)")
    p_train.add_argument("--quiet", action="store_true")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval",
                            help="decentralized deterministic evaluation")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("config")
    p_eval.add_argument("--episodes", type=int, default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_an = sub.add_parser("analyze",
                          help="equilibrium gaps of the learned marginals")
    p_an.add_argument("checkpoint")
    p_an.add_argument("config")
    p_an.set_defaults(fn=cmd_analyze)

    p_ver = sub.add_parser("verify", help="run a property suite")
    p_ver.add_argument("suite", choices=SUITES)
    p_ver.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
