"""Command-line entry point: ``srg <subcommand> [flags]``.

Exit codes: 0 ok, 2 configuration error, 3 a guided solve had to fall back
to the unrestricted problem, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from srg import pipeline as pl
from srg.bnb import NumericalError, SolveLimits
from srg.diffusion import TrainingError
from srg.generators import BENCHMARKS, GeneratorError, generate, preset
from srg.io import read_instance, write_mps
from srg.scorenet import CheckpointError, NaNError

OK, CONFIG_ERROR, FALLBACK, NUMERICAL = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "SRG_OUTPUT_ROOT"


def _default_out(args) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "srg_runs"))
    return root / f"{args.benchmark}_{args.scale}_s{args.seed}"


def _run_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    if getattr(args, "benchmark", None):
        return _default_out(args)
    raise pl.ConfigError("--out is required (or give --benchmark/--scale/--seed)")


def _add_run_flags(p, with_config: bool):
    p.add_argument("--out", help=f"run directory (default ${OUTPUT_ROOT_ENV}/<benchmark>_<scale>_s<seed>)")
    if with_config:
        p.add_argument("--benchmark", required=True, choices=sorted(pl.BENCHMARK_DEFAULTS))
        p.add_argument("--scale", default="tiny")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--n-train", type=int, default=100)
        p.add_argument("--n-test", type=int, default=20)
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--T", type=int, help="diffusion steps")
        p.add_argument("--gamma-o", type=float)
        p.add_argument("--gamma-c", type=float)
        p.add_argument("--t-sample", type=int, help="DDIM steps at sampling time (0 = all)")
        p.add_argument("--k", type=int, help="candidates per instance")
        p.add_argument("--delta-fraction", type=float)
        p.add_argument("--node-limit", type=int, help="search node budget (baseline and guided)")
        p.add_argument("--repair-budget", type=float, help="repair wall-clock cap in seconds")
    else:
        p.add_argument("--benchmark", help=argparse.SUPPRESS)
        p.add_argument("--scale", default="tiny", help=argparse.SUPPRESS)
        p.add_argument("--seed", type=int, default=0, help=argparse.SUPPRESS)


def _config_from_args(args) -> pl.ExperimentConfig:
    cfg = pl.experiment_preset(args.benchmark, args.scale, _run_dir(args), args.seed,
                               epochs=args.epochs, n_train=args.n_train, n_test=args.n_test)
    tr, g, smp = cfg.train, cfg.train.guidance, cfg.sample
    if args.gamma_o is not None or args.gamma_c is not None:
        g = replace(g, gamma_o=g.gamma_o if args.gamma_o is None else args.gamma_o,
                    gamma_c=g.gamma_c if args.gamma_c is None else args.gamma_c)
    tr = replace(tr, guidance=g, **{k: v for k, v in (
        ("T", args.T), ("lr", args.lr), ("batch_size", args.batch_size)) if v is not None})
    if args.t_sample is not None:
        smp = replace(smp, T_sample=args.t_sample or None)
    elif smp.T_sample is not None and smp.T_sample > tr.T:
        smp = replace(smp, T_sample=tr.T)
    if args.k is not None:
        smp = replace(smp, k=args.k)
    kw = {}
    if args.delta_fraction is not None:
        kw["delta_fraction"] = args.delta_fraction
    if args.node_limit is not None:
        kw["search_limits"] = SolveLimits(node_limit=args.node_limit)
    if args.repair_budget is not None:
        kw["repair_budget"] = args.repair_budget
    return replace(cfg, train=tr, sample=smp, **kw)


def cmd_gen(args) -> int:
    cfg = _config_from_args(args)
    pl.generate_instances(cfg)
    print(f"wrote {cfg.n_train} train and {cfg.n_test} test instances to {cfg.root}")
    return OK


def cmd_label(args) -> int:
    cfg = pl.ExperimentConfig.load(_run_dir(args))
    pl.label_instances(cfg)
    recs = pl.load_split(cfg.root, "train") + pl.load_split(cfg.root, "test")
    flagged = sum(not r.label["optimal"] for r in recs)
    print(f"labelled {len(recs)} instances ({flagged} not proven optimal)")
    return OK


def cmd_train(args) -> int:
    cfg = pl.ExperimentConfig.load(_run_dir(args))
    every = max(1, cfg.train.epochs // 10)

    def progress(epoch, loss):
        if epoch % every == 0 or epoch == cfg.train.epochs - 1:
            print(f"epoch {epoch:4d}  loss {loss:.5f}")

    pl.train_model(cfg, progress=progress)
    print(f"checkpoint written to {cfg.root / 'checkpoints' / 'model.ckpt'}")
    return OK


def cmd_solve(args) -> int:
    cfg = pl.ExperimentConfig.load(_run_dir(args))
    out = pl.solve_test_set(cfg)
    print(f"solved {cfg.n_test} test instances; results in {cfg.root / 'results'}")
    if out["fallbacks"]:
        print(f"{out['fallbacks']} guided solve(s) fell back to the full problem", file=sys.stderr)
        return FALLBACK
    return OK


def cmd_eval(args) -> int:
    metrics = pl.evaluate_run(_run_dir(args))
    for m in metrics:
        gi = "undefined" if m.gap_improvement is None else f"{m.gap_improvement:.2f}%"
        obj = "-" if m.mean_objective is None else f"{m.mean_objective:.4f}"
        print(f"{m.method:10s} obj {obj}  nodes {m.mean_nodes:.1f}  "
              f"feasible {m.feasibility_rate:.2f}  gap improvement {gi}")
    return OK


def cmd_toy(args) -> int:
    out = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ROOT_ENV, "srg_runs")) / "toy"
    cfg = pl.ToyConfig(n_train=args.n_train, epochs=args.epochs, seed=args.seed,
                       n_samples=args.samples, out_dir=str(out))
    res = pl.toy_experiment(cfg)
    print(json.dumps({
        "initial_distance": float(res.distances[0]),
        "final_distance": float(res.distances[-1]),
        "reduction": float(res.reduction),
        "monotone_last_25": res.monotone_tail(25),
        "optimum": [float(v) for v in res.optimum],
    }, indent=1))
    return OK


def cmd_export_mps(args) -> int:
    if args.instance:
        inst = read_instance(args.instance)
    else:
        inst = generate(preset(args.benchmark, args.scale, args.seed))
    write_mps(inst, args.output)
    print(f"wrote {args.output}")
    return OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srg", description="Lagrangian-guided diffusion for MILP")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate train/test instances and write config.json")
    _add_run_flags(p, True)
    p.set_defaults(func=cmd_gen)
    for name, fn, text in (("label", cmd_label, "solve instances exactly, cache multipliers and embeddings"),
                           ("train", cmd_train, "train the guided denoiser"),
                           ("solve", cmd_solve, "baseline and guided solves of the test set"),
                           ("eval", cmd_eval, "metrics table and figures")):
        p = sub.add_parser(name, help=text)
        _add_run_flags(p, False)
        p.set_defaults(func=fn)

    p = sub.add_parser("toy", help="2D LP visualisation experiment")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--samples", type=int, default=64)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("export-mps", help="write an instance in MPS format")
    p.add_argument("output")
    p.add_argument("--instance", help="instance JSON (default: generate one)")
    p.add_argument("--benchmark", choices=[b for b in BENCHMARKS], default="set_cover")
    p.add_argument("--scale", default="tiny")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export_mps)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (pl.ConfigError, GeneratorError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    except (NumericalError, TrainingError, NaNError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
