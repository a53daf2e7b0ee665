"""Command-line entry point: ``wpinn run|lambda|dump-field``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import bench
from .problems import lambda_original, optimal_lambda

log = logging.getLogger("wpinn")


def _config(args) -> bench.ExperimentConfig:
    cfg = bench.load_config(args.config)
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seeds"] = tuple(args.seed)
    if getattr(args, "iterations", None) is not None:
        updates["iterations"] = args.iterations
    if getattr(args, "format", None) is not None:
        updates["format"] = args.format
    return dataclasses.replace(cfg, **updates) if updates else cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / f"results.{cfg.format}"
    out.parent.mkdir(parents=True, exist_ok=True)
    arch = cfg.architecture()

    def on_seed(rec, params, trace):
        stem = out.parent / f"{rec.problem}_{rec.method}_seed{rec.seed}"
        bench.save_params(f"{stem}.params.txt", params, arch, rec.seed)
        bench.write_trace(trace, f"{stem}.trace.csv")
        log.info(
            "seed %d: rel_l2=%.3e rel_linf=%.3e n_I=%d n_B=%d (%s, %.1fs)",
            rec.seed, rec.rel_l2, rec.rel_linf, rec.n_interior, rec.n_boundary,
            rec.status, rec.wall_seconds,
        )

    records = bench.run_experiment(cfg, on_seed)
    bench.emit_results(records, cfg.format, out)
    best = bench.best_record(records)
    print(f"best seed {best.seed}: rel_l2={best.rel_l2:.6e} rel_linf={best.rel_linf:.6e}")
    print(f"results written to {out}")
    return 0


def cmd_lambda(args) -> int:
    cfg = _config(args)
    problem = cfg.build_problem()
    bounds, source = bench.compute_bounds(problem, cfg.lambda_source)
    print(f"problem        {problem.name}")
    print(f"bounds_source  {source}")
    print(f"M_I            {bounds.m_interior:.6e}")
    print(f"M_B            {bounds.m_boundary:.6e}")
    print(f"lambda_optimal {optimal_lambda(bounds):.6e}")
    print(f"lambda_original {lambda_original(problem):.6e}")
    return 0


def cmd_dump_field(args) -> int:
    cfg = _config(args)
    problem = cfg.build_problem()
    params, arch, seed = bench.load_params(args.params_file)
    if arch.input_dim != problem.dim:
        raise bench.ConfigError(f"parameters are for d={arch.input_dim}, problem has d={problem.dim}")
    out = Path(args.out) if args.out else Path(cfg.output_dir) / f"field_seed{seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    bench.dump_field(arch, params, problem, cfg.eval_resolution, out)
    print(f"field written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wpinn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="INI file with an [experiment] section")
        p.add_argument("--seed", type=int, action="append", help="override seeds (repeatable)")
        p.add_argument("--iterations", type=int)
        p.add_argument("--out", help="output file")
        p.add_argument("--format", choices=("csv", "json"))

    p = sub.add_parser("run", help="train and write one result record per seed")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("lambda", help="print magnitude bounds and loss weights")
    common(p)
    p.set_defaults(func=cmd_lambda)
    p = sub.add_parser("dump-field", help="write u_hat, u_exact and the error on the evaluation grid")
    common(p)
    p.add_argument("params_file")
    p.set_defaults(func=cmd_dump_field)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
