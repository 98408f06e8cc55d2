"""Command line entry point: ``raschmc {simulate,run,diagnose,bench}``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

from .diagnostics import summarize
from .harness import (BenchConfig, build_report, data_seed, read_draws_csv, run_chains,
                      run_experiment, write_draws_csv)
from .model import (HIERARCHICAL, IGAMMA, RASCH, UNIFORM_SD, ItemResponseData, ModelSpec,
                    simulate_data, write_truth_csv)

MODELS = {"rasch": RASCH, "hrasch": HIERARCHICAL}
PRIORS = {"igamma": IGAMMA, "uniform-sd": UNIFORM_SD}
DEFAULT_PERSONS = [100, 500, 1000, 5000, 10000]


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=sorted(MODELS), default="rasch")
    p.add_argument("--prior", choices=sorted(PRIORS), default="igamma")


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--warmup", type=int, default=2500)
    p.add_argument("--iters", type=int, default=2500)
    p.add_argument("--parallel", action="store_true", help="run chains in worker processes")
    p.add_argument("--no-random-effects", dest="random_effects", action="store_false",
                   help="MH: one joint block for all thetas and one for all deltas")
    p.add_argument("--no-gibbs", dest="gibbs", action="store_false",
                   help="MH: random-walk updates on log variances instead of Gibbs draws")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raschmc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated response data CSV")
    p.add_argument("--items", type=int, default=20)
    p.add_argument("--persons", type=int, action="append", help="repeatable")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("."))

    p = sub.add_parser("run", help="one sampler on one dataset")
    _add_model_args(p)
    p.add_argument("--sampler", choices=["nuts", "mh"], default="nuts")
    p.add_argument("--data", type=Path, help="response CSV; simulated when omitted")
    p.add_argument("--items", type=int, default=20)
    p.add_argument("--persons", type=int, action="append", help="used when simulating")
    p.add_argument("--seed", type=int, default=0)
    _add_run_args(p)
    p.add_argument("--out", type=Path, default=Path("run_out"))

    p = sub.add_parser("diagnose", help="diagnostics from draws CSV files")
    p.add_argument("draws", type=Path, nargs="+")
    p.add_argument("--threshold", type=float, default=1.1)
    p.add_argument("--out", type=Path, help="directory for report JSON and CSV")

    p = sub.add_parser("bench", help="full simulation protocol")
    _add_model_args(p)
    p.add_argument("--sampler", choices=["nuts", "mh", "both"], default="both")
    p.add_argument("--items", type=int, default=20)
    p.add_argument("--persons", type=int, action="append", help="repeatable")
    p.add_argument("--seed", type=int, default=0)
    _add_run_args(p)
    p.add_argument("--out", type=Path, default=Path("bench_out"))
    return parser


def _simulate(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    for P in args.persons or [100]:
        data, truth = simulate_data(args.items, P, sigma_true=1.0, seed=data_seed(args.seed, P))
        data.to_csv(args.out / f"data_P{P}.csv")
        write_truth_csv(args.out / f"truth_P{P}.csv", truth)
        print(args.out / f"data_P{P}.csv")
    return 0


def _run(args) -> int:
    t0 = time.perf_counter()
    spec = ModelSpec(MODELS[args.model], PRIORS[args.prior])
    if args.data is not None:
        data = ItemResponseData.from_csv(args.data)
    else:
        P = (args.persons or [100])[0]
        data, _ = simulate_data(args.items, P, sigma_true=1.0, seed=data_seed(args.seed, P))
    run = run_chains(spec, data, args.sampler, args.chains, args.warmup, args.iters, args.seed,
                     args.parallel, args.random_effects, args.gibbs)
    args.out.mkdir(parents=True, exist_ok=True)
    if run.chains:
        write_draws_csv(args.out / f"draws_{args.sampler}.csv", run.chains)
    echo = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
            if k != "func"}
    body, diag = build_report(echo, run, time.perf_counter() - t0)
    (args.out / f"report_{args.sampler}.json").write_text(json.dumps(body, indent=2))
    if diag is not None:
        _print_summary(diag, spec.hyperparameters())
    for cid, err in run.failures.items():
        print(f"chain {cid} failed: {err}", file=sys.stderr)
    return 0 if run.chains else 1


def _print_summary(diag, names) -> None:
    print(f"{'parameter':>10} {'mean':>10} {'sd':>9} {'rhat':>7} {'ess':>9} {'s/ESS total':>12} {'s/ESS sim':>10}")
    for name in names:
        r = diag[name]
        print(f"{name:>10} {r.mean:10.4f} {r.sd:9.4f} {r.rhat:7.4f} {r.ess:9.1f} "
              f"{r.sec_per_ess_total:12.5f} {r.sec_per_ess_sim:10.5f}")
    print(f"worst parameter: {diag.worst_param} (ESS {diag[diag.worst_param].ess:.1f}); "
          f"max R-hat {diag.max_rhat:.4f}; converged: {diag.converged}")


def _diagnose(args) -> int:
    status = 0
    for path in args.draws:
        chains = read_draws_csv(path)
        diag = summarize(chains, threshold=args.threshold)
        names = [n for n in ("sigma_sq", "mu", "tau_sq") if n in diag.names]
        print(f"{path}: {diag.n_chains} chains x {diag.n_draws} draws"
              + (" (single chain: split halves)" if diag.single_chain else ""))
        _print_summary(diag, names)
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
            diag.to_json(args.out / f"{path.stem}_report.json")
            diag.to_csv(args.out / f"{path.stem}_diagnostics.csv")
        if not diag.converged:
            status = 2
    return status


def _bench(args) -> int:
    config = BenchConfig(
        model=MODELS[args.model], prior=PRIORS[args.prior], sampler=args.sampler,
        items=args.items, persons=args.persons or DEFAULT_PERSONS, chains=args.chains,
        warmup=args.warmup, iters=args.iters, random_effects=args.random_effects,
        gibbs=args.gibbs, parallel=args.parallel, seed=args.seed, out=str(args.out),
    )
    result = run_experiment(config)
    print(json.dumps(asdict(config)))
    print(f"{'model':>12} {'param':>9} {'P':>6} {'sampler':>7} {'ESS':>9} {'s/ESS total':>12} {'s/ESS sim':>10}")
    for row in result.efficiency_rows:
        print(f"{row['model']:>12} {row['parameter']:>9} {row['P']:>6} {row['sampler']:>7} "
              f"{row['ess']:9.1f} {row['sec_per_ess_total']:12.5f} {row['sec_per_ess_sim']:10.5f}")
    failed = [c for c in result.cells if c.failures]
    for c in failed:
        print(f"{c.sampler} P={c.P}: failed chains {sorted(c.failures)}", file=sys.stderr)
    print(f"outputs in {result.out} ({result.total_seconds:.1f} s)")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"simulate": _simulate, "run": _run, "diagnose": _diagnose, "bench": _bench}
    return handler[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
