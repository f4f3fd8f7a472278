"""Command-line front end: ``coins <subcommand> [flags]``.

Exit status: 0 on success, 2 on bad flags, 3 when an input checkpoint or data
file is missing, 1 on any other failure (one diagnostic line on stderr).
The default output root is $COINS_OUT, else ./runs.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import os
import sys

import numpy as np

from . import checkpoint as ck
from . import chain_builder as cb
from . import dyn_models as dm
from . import interaction as it
from .config import ConfigError, load_config
from .data import Trace, collect_random
from .factored_env import VARIANTS, Breakout

OUT_ENV = "COINS_OUT"


class MissingInput(FileNotFoundError):
    pass


def out_root():
    return os.environ.get(OUT_ENV, "runs")


def _need(path):
    if not os.path.exists(path):
        raise MissingInput(f"no such file: {path}")
    return path


def _out(path, default_name):
    return path if path else os.path.join(out_root(), default_name)


def _build_config(args) -> cb.BuildConfig:
    cfg = cb.BuildConfig()
    if getattr(args, "config", None):
        cfg = load_config(_need(args.config), cfg)
    over = {}
    if getattr(args, "variant", None):
        over["variant"] = args.variant
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    return dataclasses.replace(cfg, **over) if over else cfg


def load_trace(path) -> Trace:
    return ck.unpack_trace(ck.load_checkpoint(_need(path)), "trace")


def save_trace(path, trace):
    ck.save_checkpoint(path, ck.pack_trace(trace, "trace"))


def _csv_text(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


# ------------------------------------------------------------------ subcommands
def cmd_collect(args):
    env = Breakout(args.variant, args.seed)
    rng = np.random.default_rng(args.seed)
    if args.chain:
        chain = cb.load_chain(_need(args.chain))
        trace = Trace(env.n_blocks)
        cb.collect_with_skill(env, chain.top, args.steps, rng, trace)
    else:
        trace = collect_random(env, args.steps, rng)
    out = _out(args.out, f"{args.variant}_s{args.seed}.dat")
    save_trace(out, trace)
    print(f"wrote {len(trace)} transitions to {out}")


def _model_cfg(args):
    cfg = dm.TrainConfig(step_size=args.step_size, gradient_steps=args.steps, balance_lambda=args.balance_lambda,
                         variance_power=args.variance_power, seed=args.seed)
    return cfg


def cmd_fit_models(args):
    trace = load_trace(args.data)
    data = dm.make_pair_dataset(trace, args.source, args.target)
    cfg = _model_cfg(args)
    pas = dm.fit(data, "passive", cfg)
    w = dm.balance_weights(data, None, cfg.balance_lambda, cfg.proximity_eps, passive=pas)
    act = dm.fit(data, "active", cfg, weights=w)
    thr = it.DetectorThresholds()
    rep = it.interaction_score(data, (args.source, args.target), act, pas, thr)
    out = _out(args.out, f"{args.source}_{args.target}_models.coin")
    ck.save_checkpoint(out, {**ck.pack_predictor(pas, "passive"), **ck.pack_predictor(act, "active"),
                             "pair": [args.source, args.target]})
    print(_csv_text([cb.REPORT_HEADER] + cb.report_rows([rep])), end="")


def cmd_score(args):
    trace = load_trace(args.data)
    cfg = cb.BuildConfig()
    if args.config:
        cfg = load_config(_need(args.config), cfg)
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, gradient_steps=args.steps),
                                  block_model=dataclasses.replace(cfg.block_model,
                                                                  gradient_steps=min(args.steps, cfg.block_model.gradient_steps)))
    chain = cb.SkillChain(cfg, trace.n_blocks)
    chain.trace = trace
    reports, aggregate, _ = cb.score_stage(chain, args.source, cfg)
    ordered = sorted(reports, key=lambda r: -r.score)
    rows = [cb.REPORT_HEADER] + cb.report_rows(ordered + ([aggregate] if aggregate else []))
    text = _csv_text(rows)
    if args.out:
        ck.atomic_write(args.out, text.encode("utf-8"))
    print(text, end="")


def cmd_build_chain(args):
    cfg = _build_config(args)
    out = _out(args.out, f"{cfg.variant}_s{cfg.seed}")
    log = None if args.quiet else (lambda msg: print(msg, flush=True))
    chain = cb.build_chain(cfg, run_dir=out, log=log)
    print(f"chain: {' -> '.join(chain.structure)}" + (f" ({chain.diagnostic})" if chain.diagnostic else ""))
    print(f"run directory: {out}")


def cmd_train_task(args):
    chain = cb.load_chain(_need(args.chain))
    env = Breakout(args.variant or chain.config.variant, args.seed)
    cfg = dataclasses.replace(cb.TASK_LEARNER, seed=args.seed)
    policy, curve = cb.train_task_policy(env, chain, args.steps, cfg, rng=np.random.default_rng(args.seed),
                                         log=None if args.quiet else (lambda *r: print(*r, flush=True)))
    out = _out(args.out, "task_policy.coin")
    cb.save_task_policy(out, policy)
    cb.write_curve_csv(os.path.splitext(out)[0] + "_curve.csv", curve)
    print(f"wrote {out}")


def cmd_eval(args):
    chain = cb.load_chain(_need(args.chain))
    variant = args.variant or chain.config.variant
    env = Breakout(variant, args.seed)
    policy = cb.load_task_policy(_need(args.policy), chain) if args.policy else chain
    res = cb.evaluate(env, policy, args.episodes, seed=args.seed, csv_path=args.csv)
    print(f"mean {res['mean']:.3f} sd {res['sd']:.3f} over {args.episodes} episodes")


def cmd_plot(args):
    from .plots import curve_svg, read_curve
    for path in args.curves:
        rows = read_curve(_need(path))
        out = os.path.splitext(path)[0] + f"_{args.column}.svg" if not args.out_dir else os.path.join(
            args.out_dir, os.path.splitext(os.path.basename(path))[0] + f"_{args.column}.svg")
        ck.atomic_write(out, curve_svg(rows, args.column, title=os.path.basename(path)).encode("utf-8"))
        print(f"wrote {out}")


# ------------------------------------------------------------------ parser
def build_parser():
    p = argparse.ArgumentParser(prog="coins", description="Chains of interaction skills on factored Breakout.")
    sub = p.add_subparsers(dest="command", required=True)

    def env_flags(sp, default_variant="base"):
        sp.add_argument("--variant", choices=VARIANTS, default=default_variant)
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("collect", help="record transitions (random actions or a chain's top skill)")
    env_flags(sp)
    sp.add_argument("--steps", type=int, default=10_000)
    sp.add_argument("--chain", help="collect with this chain's top skill instead of random actions")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("fit-models", help="fit passive and active models for one pair")
    sp.add_argument("--data", required=True)
    sp.add_argument("--source", default="action")
    sp.add_argument("--target", default="paddle")
    sp.add_argument("--steps", type=int, default=5000)
    sp.add_argument("--step-size", type=float, default=7e-4)
    sp.add_argument("--balance-lambda", type=float, default=100.0)
    sp.add_argument("--variance-power", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_fit_models)

    sp = sub.add_parser("score", help="score every uncontrolled target against a source")
    sp.add_argument("--data", required=True)
    sp.add_argument("--source", default="action")
    sp.add_argument("--steps", type=int, help="gradient steps per model fit")
    sp.add_argument("--config")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("build-chain", help="discover and train the skill chain")
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--config")
    sp.add_argument("--out")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_build_chain)

    sp = sub.add_parser("train-task", help="train a task policy over a frozen chain")
    sp.add_argument("--chain", required=True)
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--steps", type=int, default=300_000)
    sp.add_argument("--out")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_train_task)

    sp = sub.add_parser("eval", help="evaluate a task policy, or the chain with random top-level goals")
    sp.add_argument("--chain", required=True)
    sp.add_argument("--policy")
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--episodes", type=int, default=10)
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("plot", help="write one SVG line chart per curve CSV")
    sp.add_argument("--curves", nargs="+", required=True)
    sp.add_argument("--column", default="success_rate", choices=cb.CURVE_HEADER[1:])
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_plot)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        args.func(args)
    except MissingInput as e:
        print(f"coins: {e}", file=sys.stderr)
        return 3
    except (ConfigError, ck.CheckpointError, ValueError) as e:
        print(f"coins: {e}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
