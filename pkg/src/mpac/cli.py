"""Command-line entry point: ``mpac {train,evaluate,record-demos,clone}``.

Every verb reads a JSON run config with ``--config`` (optional; defaults
otherwise) and accepts ``--set key=value`` overrides, where ``value`` is
parsed as JSON when possible.  Common keys also have dedicated flags.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import demos as demo_io
from .diffnet import load_params, save_params
from .envs import make_env
from .errors import MpacError
from .harness import PreferenceConfig, evaluate, load_checkpoint, parse_config, train
from .policy import FrozenPolicy


def _value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(args):
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        out[key] = _value(value)
    for key in ("env", "seed", "epochs", "output_dir"):
        if getattr(args, key, None) is not None:
            out[key] = getattr(args, key)
    return out


def _config(args):
    return parse_config(args.config, _overrides(args))


def _load_policy(path, env):
    path = Path(path)
    if path.suffix == ".pkl":
        return load_checkpoint(path).ac
    return FrozenPolicy(load_params(path), env.n_actions)


def cmd_train(args):
    cfg = _config(args)
    result = train(cfg, resume=args.resume)
    last = result.rows[-1] if result.rows else {}
    print(json.dumps({"epochs": len(result.rows), "metrics": str(result.metrics_path),
                      "final_eval_mean": last.get("eval_mean")}))


def cmd_evaluate(args):
    cfg = _config(args)
    env = make_env(cfg.env)
    policy = _load_policy(args.policy, env)
    stats = evaluate(policy, cfg.env, args.episodes or cfg.eval_episodes, cfg.seed,
                     args.greedy or cfg.greedy_eval)
    print(json.dumps({"mean": stats.mean, "min": stats.min, "max": stats.max,
                      "returns": stats.returns}))


def cmd_record(args):
    cfg = _config(args)
    env = make_env(cfg.env)
    if args.policy == "scripted":
        policy, generator = demo_io.scripted_policy(env), "scripted"
    else:
        policy, generator = _load_policy(args.policy, env), f"policy {Path(args.policy).name}"
    mode = "greedy" if args.greedy else "sampled"
    demos = demo_io.record(policy, env, args.n, cfg.seed, args.greedy, f"{generator} ({mode})")
    demo_io.save(demos, args.out)
    print(json.dumps({"out": str(args.out), "pairs": demos.count, "episodes": len(demos.episodes),
                      "mean_return": float(np.mean(demos.returns)) if demos.returns else None}))


def cmd_clone(args):
    cfg = _config(args)
    ref = next((p for p in cfg.preferences if p.kind == "reference"), PreferenceConfig("reference"))
    demos = demo_io.load(args.demos)
    demos.check_env(cfg.env)
    env = make_env(cfg.env)
    hidden = args.hidden or cfg.hidden
    params = demo_io.behavior_clone(
        demos, [env.obs_dim, *hidden, env.n_actions],
        epochs=args.bc_epochs if args.bc_epochs is not None else ref.bc_epochs,
        batch_size=ref.bc_batch_size, dropout_rate=ref.bc_dropout, seed=cfg.seed,
        lr=args.bc_lr or ref.bc_lr or cfg.policy_lr)
    save_params(params, args.out)
    obs, actions = demos.as_arrays()
    print(json.dumps({"out": str(args.out),
                      "train_agreement": demo_io.argmax_agreement(params, obs, actions)}))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (defaults apply when omitted)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a top-level config key; repeatable")
    common.add_argument("--env")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mpac", description="Multi-preference actor-critic trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train an agent and write metrics.csv")
    p.add_argument("--epochs", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--resume", help="checkpoint.pkl to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a saved policy")
    p.add_argument("--policy", required=True, help="policy .npz or checkpoint .pkl")
    p.add_argument("--episodes", type=int)
    p.add_argument("--greedy", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("record-demos", parents=[common], help="record demonstration pairs")
    p.add_argument("--policy", default="scripted", help="'scripted', a policy .npz or a checkpoint .pkl")
    p.add_argument("--n", type=int, default=10_000, help="number of (obs, action) pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--greedy", action="store_true")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("clone", parents=[common], help="behavior-clone a policy from demonstrations")
    p.add_argument("--demos", required=True)
    p.add_argument("--out", required=True, help="output .npz")
    p.add_argument("--hidden", type=int, nargs="+")
    p.add_argument("--bc-epochs", dest="bc_epochs", type=int)
    p.add_argument("--bc-lr", dest="bc_lr", type=float)
    p.set_defaults(func=cmd_clone)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except MpacError as exc:
        print(f"mpac {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
