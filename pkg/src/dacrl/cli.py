"""Command-line entry point: ``dac train | eval | check | gradcheck``.

Exit codes: 0 success, 1 a check failed, 2 configuration rejected,
3 numerical divergence.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import dump_config, load_config, parse_config_text
from .consensus import disagreement_norm, max_pairwise_distance
from .errors import AssumptionViolation, ConfigError, DivergenceError
from .evaluation import (CSV_HEADER, CURVE_HEADER, ascent_survey, assemble_curves,
                         evaluate_policy, ray_points, trace_rows, write_rows)
from .network import TopologyGraph, WeightMatrixSampler, spectral_contraction
from .trainer import (Trainer, TrainTrace, build_env, build_feature_map, load_checkpoint,
                      preflight, save_checkpoint)

log = logging.getLogger("dacrl")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _setup_logging():
    level = os.environ.get("DAC_LOG_LEVEL", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(level=getattr(logging, level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _load_run(args):
    """Config file (or defaults) plus command-line overrides."""
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    if args.out_dir is not None:
        overrides.append(f"run.out_dir={args.out_dir}")
    if getattr(args, "trials", None) is not None:
        overrides.append(f"run.trials={args.trials}")
    if getattr(args, "plot", None) is not None:
        overrides.append(f"run.plot={args.plot}")
    if getattr(args, "workers", None) is not None:
        overrides.append(f"run.workers={args.workers}")
    if args.config is None:
        return parse_config_text("", overrides)
    return load_config(args.config, overrides)


# --------------------------------------------------------------------------
# train


def _trial_seed(base, n):
    return int(base) + n


def _run_trial(train_cfg, trial_dir):
    """Worker body; returns a picklable summary instead of raising."""
    os.makedirs(trial_dir, exist_ok=True)
    trainer = Trainer(train_cfg)
    try:
        trace = trainer.run()
    except DivergenceError as exc:
        diag = os.path.join(trial_dir, "divergence.json")
        with open(diag, "w", encoding="utf-8") as fh:
            json.dump({"error": type(exc).__name__, "message": str(exc), "step": exc.step,
                       "agent": exc.agent, "detail": exc.detail}, fh, indent=1, default=str)
        return {"ok": False, "diagnostic": diag, "message": str(exc)}
    ckpt = trainer.checkpoint()
    save_checkpoint(ckpt, os.path.join(trial_dir, "checkpoint.json"))
    with open(os.path.join(trial_dir, "trace.json"), "w", encoding="utf-8") as fh:
        json.dump(trace.to_dict(), fh)
    return {"ok": True, "trace": trace.to_dict(),
            "max_pairwise": max_pairwise_distance(trainer.ensemble),
            "mean_norm": float(np.linalg.norm(trainer.ensemble.thetas.mean(axis=0))),
            "disagreement": disagreement_norm(trainer.ensemble)}


def run_trials(run):
    """Run every trial of ``run``; returns the list of per-trial summaries."""
    base = run.train.seed
    cfgs = [run.train.replace(seed=_trial_seed(base, n)) for n in range(run.trials)]
    dirs = [os.path.join(run.out_dir, f"trial_{n}") for n in range(run.trials)]
    if run.workers > 1 and run.trials > 1:
        with ProcessPoolExecutor(max_workers=min(run.workers, run.trials)) as pool:
            return list(pool.map(_run_trial, cfgs, dirs))
    return [_run_trial(c, d) for c, d in zip(cfgs, dirs)]


def write_outputs(run, results):
    """CSV tables and (optionally) figures from successful trial summaries."""
    traces = [TrainTrace.from_dict(r["trace"]) for r in results]
    rows = []
    for n, tr in enumerate(traces):
        rows += trace_rows(tr, f"trial_{n}", _trial_seed(run.train.seed, n))
    write_rows(os.path.join(run.out_dir, "trials.csv"), rows, CSV_HEADER)
    curves = assemble_curves(traces) if traces and traces[0].evals else []
    write_rows(os.path.join(run.out_dir, "curves.csv"), curves, CURVE_HEADER)
    if run.plot:
        from .plotting import plot_curves, plot_disagreement
        plot_curves(curves, os.path.join(run.out_dir, "curves.svg"))
        plot_disagreement(traces, os.path.join(run.out_dir, "disagreement.svg"))
    return rows, curves


def cmd_train(args):
    run = _load_run(args)
    _, _, env, _ = preflight(run.train)
    os.makedirs(run.out_dir, exist_ok=True)
    with open(os.path.join(run.out_dir, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(run))
    with open(os.path.join(run.out_dir, "env_params.json"), "w", encoding="utf-8") as fh:
        json.dump(env.realized_params(), fh, indent=1)
    seeds = {f"trial_{n}": run.train.replace(seed=_trial_seed(run.train.seed, n)).seeds.__dict__
             for n in range(run.trials)}
    with open(os.path.join(run.out_dir, "seeds.json"), "w", encoding="utf-8") as fh:
        json.dump(seeds, fh, indent=1)

    results = run_trials(run)
    failed = [r for r in results if not r["ok"]]
    if failed:
        for r in failed:
            print(f"diverged: {r['message']} (diagnostic: {r['diagnostic']})", file=sys.stderr)
        return EXIT_DIVERGED
    write_outputs(run, results)
    for n, r in enumerate(results):
        ev = r["trace"]["evals"]
        last = f"{np.mean(ev[-1]['mean']):.6g}" if ev else "n/a"
        print(f"trial {n}: final mean return {last}, disagreement {r['disagreement']:.3g}, "
              f"max pairwise distance {r['max_pairwise']:.3g}")
    print(f"wrote {run.out_dir}")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    trainer = Trainer.from_checkpoint(ckpt)
    cfg = trainer.config
    rows = []
    for p in trainer.ensemble.params:
        rng = np.random.default_rng([cfg.seeds.eval, trainer.k])
        m, s = evaluate_policy(p.theta, trainer.env, trainer.fmap, cfg.eval, rng, cfg.gamma)
        rows.append({"run_id": os.path.basename(os.path.dirname(os.path.abspath(args.checkpoint))),
                     "seed": cfg.seed, "iteration": trainer.k, "agent_id": p.agent_id,
                     "mean_return": m, "stderr_return": s,
                     "disagreement_norm": disagreement_norm(trainer.ensemble)})
        print(f"agent {p.agent_id}: mean return {m:.6g} +/- {s:.3g}")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        write_rows(os.path.join(args.out_dir, "eval.csv"), rows, CSV_HEADER)
    return EXIT_OK


# --------------------------------------------------------------------------
# check


def check_report(text_or_path, overrides=None, *, is_path=True):
    """Pre-flight report as ``[(name, passed, detail)]``.

    Step-size problems are caught while the config is parsed; they are
    reported as a failed ordering check rather than raised.
    """
    lines = []
    try:
        run = (load_config(text_or_path, overrides) if is_path
               else parse_config_text(text_or_path, overrides))
    except AssumptionViolation as exc:
        return [("step-size exponents", False, str(exc))]
    t = run.train
    lines.append(("step-size exponents", True,
                  f"0.5 < critic {t.critic_exponent} < actor {t.actor_exponent} <= 1"))
    graph = TopologyGraph.parse(t.topology)
    lines.append(("graph connectivity", graph.is_connected(),
                  f"{graph.n} agents, {len(graph.edges)} undirected links"))
    rho = spectral_contraction(WeightMatrixSampler(graph, t.scheme, t.seeds.gossip))
    lines.append(("mixing contraction", rho < 1.0 - 1e-12, f"contraction factor {rho:.6f} ({t.scheme})"))
    env = build_env(t.env, graph)
    bound = env.reward_bound()
    lines.append(("reward bound", bool(np.isfinite(bound)), f"|r_i| <= {bound:.6g}"))
    fmap = build_feature_map(t.features, env)
    fb = fmap.norm_bound()
    lines.append(("feature bound", bool(np.isfinite(fb)), f"||phi(s)|| <= {fb:.6g}"))
    return lines


def cmd_check(args):
    overrides = list(args.set or [])
    if args.config is None:
        lines = check_report("", overrides, is_path=False)
    else:
        lines = check_report(args.config, overrides)
    for name, ok, detail in lines:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in lines) else EXIT_CONFIG


# --------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args):
    run = _load_run(args)
    t = run.train
    if t.env.kind != "toy":
        raise ConfigError("gradcheck needs the quadratic toy task (env.kind = toy)")
    graph, _, env, fmap = preflight(t)
    rng = np.random.default_rng(t.seed)
    opt = env.optimum(fmap)
    points = [("optimum", opt)]
    for n, theta in enumerate(ray_points(opt, args.points, rng)):
        points.append((f"probe {n}", theta))
    results = ascent_survey(env, fmap, t.gamma, [p for _, p in points],
                            critic_steps=args.critic_steps, seed=t.seed)
    bad = False
    for (name, _), res in zip(points, results):
        tag = "inconclusive" if not res.conclusive else ("ascent" if res.sign > 0 else "DESCENT")
        bad |= res.sign < 0
        print(f"{name}: inner {res.inner:.6g} CI [{res.ci[0]:.6g}, {res.ci[1]:.6g}] {tag}")
    return EXIT_CHECK if bad else EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="dac", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file (defaults when omitted)")
        p.add_argument("--seed", type=int, help="base seed; trial n uses seed + n")
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")

    p = sub.add_parser("train", help="run seeded training trials and write CSV/SVG output")
    common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--plot", type=_bool)
    p.add_argument("--workers", type=int, help="run trials in parallel processes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate every agent's policy in a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="pre-flight convergence checks on a config")
    common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("gradcheck", help="ascent-direction check on the toy task")
    common(p)
    p.add_argument("--points", type=int, default=5, help="random points besides the optimum")
    p.add_argument("--critic-steps", dest="critic_steps", type=int, default=20000)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, AssumptionViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
