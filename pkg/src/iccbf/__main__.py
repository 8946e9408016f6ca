"""Command line: ``python -m iccbf {dataset build,train,eval,mc,margin-audit}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import campaign as C
from . import envs
from .learner import env as E
from .learner import ppo


def _env_config(args) -> dict:
    if args.config:
        cfg = envs.load_env_config(args.config)
    else:
        cfg = envs.resolve_env_config({"env": args.env})
    if args.env and args.config and cfg["env"] != args.env:
        raise C.ConfigurationError(f"--env {args.env} disagrees with config env {cfg['env']}")
    return cfg


def _ppo_config(args, env: str) -> ppo.PPOConfig:
    over = {}
    if args.ppo_config:
        over = json.loads(Path(args.ppo_config).read_text())
    if args.timesteps is not None:
        over["total_timesteps"] = args.timesteps
    return ppo.ppo_defaults(env, recurrent=args.recurrent, **over)


def cmd_dataset_build(args) -> int:
    cfg = _env_config(args)
    ds = C.dataset_from_config(cfg, args.n, args.seed)
    path = ds.save(Path(args.out) / f"{cfg['env']}_dataset.json")
    print(f"{path} {len(ds)} episodes sha256={ds.digest}")
    return 0


def cmd_train(args) -> int:
    cfg = _env_config(args)
    pcfg = _ppo_config(args, cfg["env"])
    out = Path(args.out)
    fixed = None
    if args.fixed_gains:
        fixed = E.UNTUNED[cfg["env"]]

    def progress(row):
        print(f"iter {row['iteration']:4d} steps {row['timesteps']:8d} return {row['mean_return']:.4g} "
              f"fuel {row['mean_fuel']:.4g} failures {row['failure_rate']:.3f}", flush=True)

    options = E.EnvOptions(da_order=args.da_order) if args.da_order else None
    seed = cfg["seed"] if args.seed is None else args.seed
    res = ppo.train(cfg["env"], pcfg, seed=seed, options=options, horizon=cfg["horizon"],
                    noise=cfg["noise"], fixed=fixed, log_path=out / "train_log.csv",
                    checkpoint_path=out / "checkpoint.json", progress=None if args.quiet else progress)
    print(f"{out / 'checkpoint.json'} config_hash={res.meta['config_hash']}")
    return 0


def _evaluate(ds: C.McDataset, args) -> int:
    ctl, name = C.controller_from_spec(ds.env, args.checkpoint)
    options = C.eval_options(ds.env, audit_substeps=args.audit_substeps or None)
    if args.da_order:
        options.da_order = args.da_order
    results, summary = C.run_mc(ds, ctl, name, options, args.parallelism)
    stem = "untuned" if name == "untuned" else Path(name).stem
    p_csv, p_json = C.export(results, summary, args.out, f"{ds.env}_{stem}")
    s = summary.performance
    print(f"{summary.metric} mean {s.mean:.4g} std {s.std:.4g} [Q1 {s.q1:.4g} Q2 {s.q2:.4g} Q3 {s.q3:.4g} "
          f"P99 {s.p99:.4g}] safe {100 * summary.safe_fraction:.2f}% "
          f"(qp failures {100 * summary.qp_failure_fraction:.2f}%, "
          f"h violations {100 * summary.h_violation_fraction:.2f}%)")
    print(f"{p_csv}\n{p_json}")
    return 0


def cmd_eval(args) -> int:
    return _evaluate(C.McDataset.load(args.dataset), args)


def cmd_mc(args) -> int:
    cfg = _env_config(args)
    ds = C.dataset_from_config(cfg, args.n, args.seed)
    ds.save(Path(args.out) / f"{cfg['env']}_dataset.json")
    return _evaluate(ds, args)


def cmd_margin_audit(args) -> int:
    envs_ = [args.env] if args.env else list(envs.SYSTEMS)
    rows = []
    for env in envs_:
        rows += C.margin_audit(env, args.samples, args.seed, args.grid_samples, args.da_order)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "margin_audit.csv"
    path.write_text(C.audit_csv(rows))
    bad = sum(not r.contained for r in rows)
    print(f"{path} {len(rows)} rows, {bad} not contained")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="python -m iccbf", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, dataset_args=True):
        p.add_argument("--env", choices=sorted(envs.SYSTEMS), default=None)
        p.add_argument("--config", help="JSON environment config")
        p.add_argument("--seed", type=int, default=None, help="default: the config's seed, else 0")
        p.add_argument("--out", default="out", help="output directory")
        if dataset_args:
            p.add_argument("--n", type=int, default=None, help="episodes (default per environment)")

    def eval_args(p):
        p.add_argument("--checkpoint", default=None, help="policy checkpoint (default: untuned gains)")
        p.add_argument("--parallelism", type=int, default=1, help="worker processes")
        p.add_argument("--audit-substeps", type=int, default=C.EVAL_AUDIT_SUBSTEPS,
                       help="RK4 substeps per sample checked for h < 0 (0 disables)")
        p.add_argument("--da-order", type=int, default=None)

    ds = sub.add_parser("dataset", help="episode datasets")
    ds_sub = ds.add_subparsers(dest="action", required=True)
    b = ds_sub.add_parser("build", help="pre-sample a Monte Carlo dataset")
    common(b)
    b.set_defaults(func=cmd_dataset_build)

    t = sub.add_parser("train", help="train a gain-tuning policy")
    common(t, dataset_args=False)
    t.add_argument("--ppo-config", help="JSON overrides of the PPO settings")
    t.add_argument("--timesteps", type=int, default=None)
    t.add_argument("--recurrent", action="store_true", help="LSTM actor and critic")
    t.add_argument("--fixed-gains", action="store_true",
                   help="hold the gains at their untuned values and learn only the nominal thrust")
    t.add_argument("--da-order", type=int, default=None)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a controller on a saved dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", default="out")
    eval_args(e)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("mc", help="build a dataset and evaluate a controller on it")
    common(m)
    eval_args(m)
    m.set_defaults(func=cmd_mc)

    a = sub.add_parser("margin-audit", help="DA margin terms against grid estimates")
    a.add_argument("--env", choices=sorted(envs.SYSTEMS), default=None, help="default: all")
    a.add_argument("--samples", type=int, default=200)
    a.add_argument("--grid-samples", type=int, default=10_000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--da-order", type=int, default=None)
    a.add_argument("--out", default="out")
    a.set_defaults(func=cmd_margin_audit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "config", None) is None and hasattr(args, "config") and args.env is None:
        args.env = "cruise"
    try:
        return args.func(args)
    except (C.ConfigurationError, ppo.CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
