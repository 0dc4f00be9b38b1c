"""Command-line entry points: gen-refs, gen-dataset, train, run, sweep, report."""

import argparse
import json
import os
from dataclasses import replace

import numpy as np

from . import bench, dataset as ds, models
from .errors import ConfigError, GanmpcError
from .ga import rng_stream
from .margins import MarginPredictor

MODELS = ("uav", "vehicle", "sfjr")
SOLVERS = ("og", "mg", "pso", "de", "proposed")


def _fmt(v):
    return f"{v:.17g}"


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _apply_config(cfg, raw):
    """Known top-level keys: noise {rho, theta}, ga {...}, refs {...}, eval_cost."""
    if "noise" in raw:
        cfg.noise = models.NoiseConfig(seed=cfg.seed, **raw["noise"])
    if "ga" in raw:
        cfg.ga_cfg = replace(cfg.ga_cfg, **raw["ga"])
    if "refs" in raw:
        cfg.refs = replace(cfg.refs, **raw["refs"])
    if "eval_cost" in raw:
        cfg.eval_cost = float(raw["eval_cost"])
    return cfg


def cmd_gen_refs(args):
    spec = bench.bench_spec(args.model)
    cfg = ds.ReferenceGenConfig(n_cycles=args.cycles, seed=args.seed)
    refs = ds.generate_references(spec, cfg, rng_stream(args.seed, "refs"))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"refs_{args.model}.csv")
    with open(path, "w") as fh:
        cols = [f"r{j + 1}" for j in range(spec.m)]
        if refs.inputs is not None:
            cols += [f"v{i + 1}" for i in range(spec.n)]
        fh.write(",".join(cols) + "\n")
        for k in range(len(refs)):
            row = list(refs.states[k])
            if refs.inputs is not None:
                row += list(refs.inputs[k])
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    ds.write_manifest(os.path.join(args.out, "refs_manifest.json"),
                      {"model": args.model, "seed": args.seed, "cycles": args.cycles,
                       "spec": bench.spec_snapshot(spec)})
    print(f"wrote {path} ({len(refs)} rows)")
    return 0


def cmd_gen_dataset(args):
    spec = bench.bench_spec(args.model)
    noise = bench.paper_noise(args.model, args.seed)
    if args.rho is not None or args.theta is not None:
        noise = models.NoiseConfig(rho=args.rho if args.rho is not None else noise.rho,
                                   theta=args.theta if args.theta is not None else noise.theta,
                                   seed=args.seed)
    gacfg = bench.paper_ga_config(args.model, args.seed)
    refs = ds.generate_references(spec, ds.ReferenceGenConfig(n_cycles=args.cycles, seed=args.seed),
                                  rng_stream(args.seed, "dataset-refs"))
    exh = ds.exhaustive_ga_config(spec, gacfg.nu, seed=args.seed)
    records, info = ds.build_dataset(spec, refs, noise, exh, rng_stream(args.seed, "dataset"))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"dataset_{args.model}.csv")
    ds.write_dataset_sized(records, path, spec.m, spec.n)
    ds.write_manifest(os.path.join(args.out, f"dataset_{args.model}_manifest.json"),
                      {"model": args.model, "seed": args.seed, "noise": noise,
                       "ga": exh, "info": info, "spec": bench.spec_snapshot(spec)})
    print(f"wrote {path}: {info['records']} records, {info['skips']} skips"
          + (", crashed early" if info["crashed"] else ""))
    return 0


def cmd_train(args):
    records = None
    if args.dataset is not None:
        spec = bench.bench_spec(args.model)
        records = ds.read_dataset(args.dataset, spec.m, spec.n)
    predictor, info = bench.train_predictor_for(
        args.model, seed=args.seed, dataset_records=records,
        train_cycles=args.cycles, max_records=args.max_records)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    predictor.save(args.out)
    n_sv = [m.n_s for m in predictor.models]
    print(f"wrote {args.out}: {predictor.n_inputs} models, support vectors {n_sv}")
    return 0


def _run_cfg(args):
    cfg = bench.ExperimentConfig(model=args.model, solver=args.solver,
                                 cycles=args.cycles, seed=args.seed,
                                 predictor_path=args.predictor)
    return _apply_config(cfg, _load_config(args.config))


def cmd_run(args):
    results = []
    for seed in args.seeds or [args.seed]:
        cfg = _run_cfg(args)
        cfg = replace(cfg, seed=seed)
        cfg.refs = replace(cfg.refs, seed=seed)
        results.append(bench.run_closed_loop(cfg))
    gacfg = results and bench.paper_ga_config(args.model) or None
    bench.emit_reports(results, args.out,
                       extra_manifest={"model": args.model, "solver": args.solver,
                                       "seeds": args.seeds or [args.seed],
                                       "cycles": args.cycles,
                                       "spec": bench.spec_snapshot(bench.bench_spec(args.model))},
                       xi=gacfg.xi, nu=gacfg.nu)
    for r in results:
        print(f"seed {r.seed}: E={r.avg_cost:.4g} conv={r.convergence_rate:.2%} "
              f"evals={r.total_evaluations}" + (" [crashed]" if r.crashed else ""))
    return 0


def cmd_sweep(args):
    base = _run_cfg(args)
    grid = [float(v) for v in args.grid.split(",")]
    seeds = args.seeds or [args.seed]
    table = bench.sweep(args.param, grid, base, seeds)
    os.makedirs(args.out, exist_ok=True)
    flat = []
    for row in table:
        for r in row["runs"]:
            if isinstance(r, tuple):
                continue
            flat.append(r)
    gacfg = bench.paper_ga_config(args.model)
    bench.emit_reports(flat, args.out,
                       extra_manifest={"sweep": {"param": args.param, "grid": grid,
                                                 "seeds": seeds}},
                       xi=gacfg.xi, nu=gacfg.nu)
    with open(os.path.join(args.out, "sweep.csv"), "w") as fh:
        fh.write("param,value,seed,avg_cost,convergence_rate,total_evaluations,error\n")
        for row in table:
            for r in row["runs"]:
                if isinstance(r, tuple):
                    fh.write(f"{row['param']},{_fmt(row['value'])},{r[2]},,,,{r[1]}\n")
                else:
                    fh.write(f"{row['param']},{_fmt(row['value'])},{r.seed},"
                             f"{_fmt(r.avg_cost)},{_fmt(r.convergence_rate)},"
                             f"{r.total_evaluations},\n")
        print(f"wrote {os.path.join(args.out, 'sweep.csv')}")
    return 0


def cmd_report(args):
    """Recompute summary.csv from a stored cycles.csv (self-consistency path)."""
    cyc = os.path.join(args.out, "cycles.csv")
    if not os.path.exists(cyc):
        raise ConfigError(f"no cycles.csv under {args.out}")
    runs = {}
    with open(cyc) as fh:
        header = fh.readline().strip().split(",")
        idx = {name: i for i, name in enumerate(header)}
        for line in fh:
            parts = line.strip().split(",")
            key = (parts[idx["model"]], parts[idx["solver"]], parts[idx["seed"]])
            runs.setdefault(key, []).append(parts)
    with open(os.path.join(args.out, "summary.csv"), "w") as fh:
        fh.write("model,solver,seed,cycles,avg_cost,convergence_rate,avg_comp_time,"
                 "total_evaluations,fallback_rate,trusted_rate,crashed\n")
        for (model, solver, seed), rows in runs.items():
            cost = np.mean([float(r[idx["cost"]]) for r in rows])
            conv = np.mean([r[idx["converged"]] == "1" for r in rows])
            tc = np.mean([float(r[idx["t_c"]]) for r in rows])
            ev = int(np.sum([int(r[idx["evaluations"]]) for r in rows]))
            fb = np.mean([r[idx["used_fallback"]] == "1" for r in rows])
            tr = np.mean([r[idx["trusted"]] == "1" for r in rows])
            fh.write(f"{model},{solver},{seed},{len(rows)},{_fmt(cost)},{_fmt(conv)},"
                     f"{_fmt(tc)},{ev},{_fmt(fb)},{_fmt(tr)},0\n")
    print(f"rebuilt {os.path.join(args.out, 'summary.csv')} from {cyc}")
    return 0


def _int_list(text):
    return [int(v) for v in text.split(",")] if text else None


def build_parser():
    parser = argparse.ArgumentParser(prog="ganmpc",
                                     description="GA-NMPC benchmark with learned search margins")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, solver=False):
        p.add_argument("--model", choices=MODELS, required=True)
        if solver:
            p.add_argument("--solver", choices=SOLVERS, default="og")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)

    p = sub.add_parser("gen-refs", help="generate reference trajectories")
    common(p)
    p.add_argument("--cycles", type=int, default=500)
    p.set_defaults(func=cmd_gen_refs)

    p = sub.add_parser("gen-dataset", help="build the (E, delta) training dataset")
    common(p)
    p.add_argument("--cycles", type=int, default=1200)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--theta", type=float, default=None)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train the per-input margin regressors")
    p.add_argument("--model", choices=MODELS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset", default=None, help="dataset CSV (generated when omitted)")
    p.add_argument("--cycles", type=int, default=None, help="generation cycles when no dataset given")
    p.add_argument("--max-records", type=int, default=2500)
    p.add_argument("--out", required=True, help="predictor .npz path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="closed-loop benchmark run(s)")
    common(p, solver=True)
    p.add_argument("--cycles", type=int, default=200)
    p.add_argument("--seeds", type=_int_list, default=None, help="comma-separated")
    p.add_argument("--config", default=None)
    p.add_argument("--predictor", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="parameter sweep with paired seeds")
    common(p, solver=True)
    p.add_argument("--cycles", type=int, default=200)
    p.add_argument("--param", choices=("epsilon", "eta", "rho", "theta"), required=True)
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--seeds", type=_int_list, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--predictor", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="rebuild summary.csv from cycles.csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GanmpcError as exc:
        parser.exit(2, f"error: {exc}\n")


if __name__ == "__main__":
    raise SystemExit(main())
