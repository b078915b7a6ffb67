"""Command-line interface: generate, train, solve, solve-batch, bench, validate."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import io as nio
from .core import ROUNDINGS, VARIANTS, InstanceError, greedy_construct, validate
from .generate import XESpec, generate_uniform, generate_xe_style, xe_preset
from .operators import handcrafted_pairs, load_learned_pairs, random_pairs
from .paramfile import ParamFileError, save_params
from .search import WALL, WORK, SearchConfig, batch_search, parallel_single_search

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _model_files(items: list) -> list:
    files = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            found = sorted(p.glob("*.prm"))
            if not found:
                raise UsageError(f"no .prm operator files in {p}")
            files.extend(found)
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"operator file not found: {p}")
    return files


def resolve_ops(items: list):
    """Turn ``--ops`` values into operator pairs plus a hashable description."""
    if items == ["handcrafted"]:
        return handcrafted_pairs(), "handcrafted", ["handcrafted"]
    if items == ["random"]:
        return random_pairs(), "random", ["random"]
    files = _model_files(items)
    try:
        pairs = load_learned_pairs(files)
    except (ParamFileError, ValueError) as e:
        raise UsageError(str(e)) from None
    return pairs, "nlns", [f"{f.name}:{_file_digest(f)}" for f in files]


def _announce(kind: str, config: dict, seed: int) -> str:
    h = nio.config_hash({"command": kind, **config})
    print(f"config_hash={h} seed={seed}")
    return h


def _search_config(args, workers=None) -> SearchConfig:
    return SearchConfig(
        time_limit=args.time,
        batch_size=args.batch_size,
        workers=workers or args.workers,
        seed=args.seed,
        clock=args.clock,
        accept_against=args.accept_against,
        reheats=args.reheats,
        parallel="sequential" if args.sequential else "process",
    )


def _load_instance(path, rounding=None):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"instance file not found: {p}")
    return nio.parse_instance(p, rounding=rounding)


# -- subcommands ---------------------------------------------------------------


def cmd_generate(args) -> int:
    config = {k: getattr(args, k) for k in ("kind", "n", "group", "count", "seed", "variant",
                                            "rounding", "capacity", "format")}
    _announce("generate", config, args.seed)
    kw = {"variant": args.variant}
    if args.kind == "uniform":
        if args.n is None:
            raise UsageError("--n is required for uniform instances")
        if args.rounding:
            kw["rounding"] = args.rounding
        insts = generate_uniform(args.n, args.count, args.seed, capacity=args.capacity, **kw)
    else:
        if args.group:
            spec = xe_preset(args.group)
        elif args.xe:
            n, depot, pos, dem, cap = args.xe.split(",")
            spec = XESpec.parse(int(n), depot, pos, dem, int(cap))
        else:
            raise UsageError("xe instances need --group or --xe")
        if args.rounding:
            kw["rounding"] = args.rounding
        insts = generate_xe_style(spec, args.count, args.seed, **kw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".json" if args.format == "json" else ".vrp"
    for inst in insts:
        nio.write_instance(inst, out / f"{inst.name}{suffix}")
    print(f"wrote {len(insts)} instances to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import TrainConfig, train_operator

    cfg = TrainConfig(
        destroy=args.destroy, instances=args.instances, variant=args.variant,
        batches=args.batches, batch_size=args.batch_size, lr=args.lr,
        critic_lr=args.critic_lr, seed=args.seed, d_h=args.hidden,
        iterations_per_instance=args.iterations_per_instance, grad_clip=args.grad_clip,
        checkpoint_every=args.checkpoint_every,
    )
    cfg.destroy_spec()
    _announce("train", cfg.to_dict(), args.seed)

    def progress(m):
        if args.verbose and m["step"] % args.verbose == 0:
            print(json.dumps(m, sort_keys=True), flush=True)

    params = train_operator(cfg, log_path=args.log, checkpoint_path=args.checkpoint,
                            resume=args.resume, progress=progress)
    save_params(params, args.out)
    print(f"wrote operator {params.meta['destroy']} to {args.out}")
    return EXIT_OK


def _write_log(log: list, path) -> None:
    if not log:
        Path(path).write_text("")
        return
    fields = list(log[0].keys())
    nio.write_records(log, path, fields)


def cmd_solve(args) -> int:
    inst = _load_instance(args.instance, args.rounding)
    pairs, method, ops_desc = resolve_ops(args.ops)
    config = _search_config(args)
    h = _announce("solve", {"instance": _file_digest(Path(args.instance)), "ops": ops_desc,
                            "rounding": inst.rounding, **vars(config)}, args.seed)
    log = []
    if args.time <= 0:
        best = greedy_construct(inst)
        method = "greedy"
    else:
        best = parallel_single_search(inst, pairs, config, log=log)
    report = validate(inst, best)
    if not report.ok:
        print(f"internal error: search returned an infeasible solution\n{report}", file=sys.stderr)
        return EXIT_INVALID
    elapsed = max((r["time"] for r in log), default=0.0)
    record = {"instance": inst.name, "seed": args.seed, "method": method, "cost": best.cost,
              "time": elapsed, "clock": args.clock, "config_hash": h}
    if args.out:
        nio.write_solution(best, args.out, seed=args.seed, config_hash=h, method=method)
    if args.records:
        nio.write_records([record], args.records)
    if args.log:
        _write_log(log, args.log)
    print(f"{inst.name}: cost {best.cost:.6f} tours {len(best.tours)} method {method}")
    return EXIT_OK


def _load_dir(directory, rounding):
    try:
        files = nio.list_instances(directory)
    except FileNotFoundError as e:
        raise UsageError(str(e)) from None
    if not files:
        raise UsageError(f"no instance files in {directory}")
    return files, [nio.parse_instance(f, rounding=rounding) for f in files]


def _run_batch(instances, pairs, config, method):
    if config.time_limit <= 0 and config.max_iterations is None:
        return [greedy_construct(i) for i in instances], [], "greedy"
    log = []
    return batch_search(instances, pairs, config, log=log), log, method


def cmd_solve_batch(args) -> int:
    files, insts = _load_dir(args.dir, args.rounding)
    pairs, method, ops_desc = resolve_ops(args.ops)
    config = _search_config(args)
    digest = hashlib.sha256(b"".join(_file_digest(f).encode() for f in files)).hexdigest()[:16]
    h = _announce("solve-batch", {"instances": digest, "ops": ops_desc, **vars(config)}, args.seed)
    sols, log, method = _run_batch(insts, pairs, config, method)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    elapsed = max((r["time"] for r in log), default=0.0)
    records = []
    for f, inst, s in zip(files, insts, sols):
        if not validate(inst, s).ok:
            print(f"internal error: infeasible solution for {f}", file=sys.stderr)
            return EXIT_INVALID
        nio.write_solution(s, out / f"{f.stem}.sol.json", seed=args.seed, config_hash=h, method=method)
        records.append({"instance": inst.name, "seed": args.seed, "method": method, "cost": s.cost,
                        "time": elapsed, "clock": args.clock, "config_hash": h})
    nio.write_records(records, args.records or out / "records.csv")
    if args.log:
        _write_log(log, args.log)
    mean = float(np.mean([s.cost for s in sols]))
    print(f"{len(sols)} instances: mean cost {mean:.6f} method {method}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.dir:
        files, insts = _load_dir(args.dir, args.rounding)
        source = hashlib.sha256(b"".join(_file_digest(f).encode() for f in files)).hexdigest()[:16]
    else:
        insts = generate_uniform(args.n, args.count, args.instance_seed,
                                 **({"rounding": args.rounding} if args.rounding else {}))
        source = f"uniform:{args.n}:{args.count}:{args.instance_seed}"
    methods = [("greedy", [], "greedy")]
    if args.models:
        pairs, _, desc = resolve_ops(args.models)
        methods.append(("nlns", pairs, desc))
    methods.append(("handcrafted", handcrafted_pairs(), "handcrafted"))
    methods.append(("random", random_pairs(), "random"))
    config = _search_config(args)
    h = _announce("bench", {"instances": source, "methods": [(m, d) for m, _, d in methods],
                            **vars(config)}, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, summary, trace = [], [], []
    greedy_mean = None
    for name, pairs, _ in methods:
        if name == "greedy":
            sols, log = [greedy_construct(i) for i in insts], []
        else:
            log = []
            sols = batch_search(insts, pairs, config, log=log)
        costs = np.array([s.cost for s in sols])
        for inst, s in zip(insts, sols):
            if not validate(inst, s).ok:
                print(f"internal error: infeasible {name} solution for {inst.name}", file=sys.stderr)
                return EXIT_INVALID
        elapsed = max((r["time"] for r in log), default=0.0)
        records += [{"instance": i.name, "seed": args.seed, "method": name, "cost": s.cost,
                     "time": elapsed, "clock": args.clock, "config_hash": h}
                    for i, s in zip(insts, sols)]
        mean = float(costs.mean())
        if name == "greedy":
            greedy_mean = mean
        summary.append({"method": name, "instances": len(sols), "mean_cost": mean,
                        "gap_to_greedy": mean / greedy_mean - 1.0, "iterations": len(log)})
        trace += [{"method": name, "iteration": r["iteration"], "time": r["time"],
                   "mean_cost": r["mean_cost"], "pair": r["pair"]} for r in log]
    nio.write_records(records, out / "records.csv")
    nio.write_records(summary, out / "summary.csv",
                      ("method", "instances", "mean_cost", "gap_to_greedy", "iterations"))
    nio.write_records(trace, out / "trace.csv", ("method", "iteration", "time", "mean_cost", "pair"))
    print(f"{'method':<12} {'mean cost':>12} {'vs greedy':>10}")
    for row in summary:
        print(f"{row['method']:<12} {row['mean_cost']:>12.4f} {100 * row['gap_to_greedy']:>9.2f}%")
    return EXIT_OK


def cmd_validate(args) -> int:
    inst = _load_instance(args.instance, args.rounding)
    sol_path = Path(args.solution)
    if not sol_path.is_file():
        raise UsageError(f"solution file not found: {sol_path}")
    sol = nio.read_solution(sol_path, inst)
    report = validate(inst, sol)
    if report.ok:
        print(f"ok: cost {sol.cost:.6f}, {len(sol.tours)} tours")
        return EXIT_OK
    for v in report.violations:
        print(f"{v.kind}: {v.message}")
    return EXIT_INVALID


# -- parser ------------------------------------------------------------------


def _search_flags(p, default_time):
    p.add_argument("--ops", nargs="+", default=["handcrafted"],
                   help="'handcrafted', 'random', or operator .prm files / directories")
    p.add_argument("--time", type=float, default=default_time, help="time budget in seconds")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rounding", choices=ROUNDINGS, default=None,
                   help="override the instance's distance rounding")
    p.add_argument("--clock", choices=(WORK, WALL), default=WORK,
                   help="'work' charges nominal operator costs (reproducible), 'wall' uses real time")
    p.add_argument("--batch-size", type=int, default=300)
    p.add_argument("--reheats", type=int, default=None)
    p.add_argument("--accept-against", choices=("incumbent", "current"), default="incumbent")
    p.add_argument("--sequential", action="store_true", help="run workers in one process")
    p.add_argument("--records", help="run-record CSV output")
    p.add_argument("--log", help="per-iteration CSV log output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlns", description="Neural large neighborhood search for VRPs")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate instance files")
    g.add_argument("--kind", choices=("uniform", "xe"), default="uniform")
    g.add_argument("--n", type=int, help="customers (uniform)")
    g.add_argument("--group", help="XE instance group, e.g. XE_1")
    g.add_argument("--xe", help="custom XE spec 'n,depot,positioning,demand,Q'")
    g.add_argument("--capacity", type=int, default=None)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--variant", choices=VARIANTS, default="cvrp")
    g.add_argument("--rounding", choices=ROUNDINGS, default=None)
    g.add_argument("--format", choices=("json", "vrp"), default="json")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a learned repair operator")
    t.add_argument("--destroy", default="point:0.2", help="e.g. point:0.1 or tour20")
    t.add_argument("--instances", default="uniform:20", help="e.g. uniform:20 or xe:XE_3")
    t.add_argument("--variant", choices=VARIANTS, default="cvrp")
    t.add_argument("--batches", type=int, default=5000)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--critic-lr", type=float, default=None)
    t.add_argument("--hidden", type=int, default=128)
    t.add_argument("--iterations-per-instance", type=int, default=1)
    t.add_argument("--grad-clip", type=float, default=None)
    t.add_argument("--checkpoint", default=None)
    t.add_argument("--checkpoint-every", type=int, default=100)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--log", default=None, help="JSON-lines training log")
    t.add_argument("--verbose", type=int, default=0, help="print metrics every N batches")
    t.add_argument("--out", required=True, help="operator parameter file (.prm)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("solve", help="single-instance search")
    s.add_argument("--instance", required=True)
    _search_flags(s, 10.0)
    s.add_argument("--out", help="solution JSON output")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("solve-batch", help="batch search over a directory of instances")
    b.add_argument("--dir", required=True)
    _search_flags(b, 60.0)
    b.add_argument("--out", required=True, help="output directory for solutions")
    b.set_defaults(func=cmd_solve_batch)

    h = sub.add_parser("bench", help="compare NLNS, handcrafted and random repair in batch search")
    h.add_argument("--dir", help="instance directory (default: generate uniform instances)")
    h.add_argument("--n", type=int, default=20)
    h.add_argument("--count", type=int, default=100)
    h.add_argument("--instance-seed", type=int, default=12345)
    h.add_argument("--models", nargs="+", default=None, help="learned operator files / directories")
    _search_flags(h, 60.0)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_bench)

    v = sub.add_parser("validate", help="check a solution against an instance")
    v.add_argument("--instance", required=True)
    v.add_argument("--solution", required=True)
    v.add_argument("--rounding", choices=ROUNDINGS, default=None)
    v.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"nlns {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (nio.ParseError, InstanceError, ParamFileError, ValueError, OSError) as e:
        print(f"nlns {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
