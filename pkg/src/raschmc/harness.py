"""End-to-end benchmark protocol: simulate, initialise, run chains, time, diagnose, tabulate."""

from __future__ import annotations

import csv
import hashlib
import json
import multiprocessing as mp
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .chain import STREAM_INITS, Chain, Timing, chain_rng
from .diagnostics import DiagnosticsReport, summarize
from .mh import MhConfig, sample_mh
from .model import (IGAMMA, RASCH, ItemResponseData, ModelSpec, ParamVector, simulate_data,
                    unconstrain, write_truth_csv)
from .nuts import NutsConfig, sample_nuts

SAMPLERS = ("nuts", "mh")
HYPER_NAMES = ("sigma_sq", "mu", "tau_sq")
TIMING_KINDS = ("total", "simulation")


@dataclass
class BenchConfig:
    model: str = RASCH
    prior: str = IGAMMA
    sampler: str = "both"
    items: int = 20
    persons: list[int] = field(default_factory=lambda: [100, 500, 1000, 5000, 10000])
    chains: int = 4
    warmup: int = 2500
    iters: int = 2500
    random_effects: bool = True
    gibbs: bool = True
    parallel: bool = False
    seed: int = 0
    out: str = "bench_out"

    def __post_init__(self):
        self.persons = [int(p) for p in self.persons]
        if self.sampler not in SAMPLERS + ("both",):
            raise ValueError("sampler must be 'nuts', 'mh' or 'both'")
        if not self.persons:
            raise ValueError("persons list must be nonempty")
        if min([self.items, self.chains, self.iters] + self.persons) < 1:
            raise ValueError("items, persons, chains and iters must be positive")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")
        ModelSpec(self.model, self.prior)

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.model, self.prior)

    @property
    def samplers(self) -> list[str]:
        return list(SAMPLERS) if self.sampler == "both" else [self.sampler]


@dataclass(frozen=True)
class InitDraw:
    """One chain's starting values on the constrained scale.

    Scale starts are for the regime's own parameter: the variance under the
    inverse-gamma prior, the standard deviation under the flat-on-SD prior.
    """

    delta_start: float
    theta_start: float
    scale_start: float
    tau_start: float | None = None
    mu_start: float | None = None

    def param_vector(self, spec: ModelSpec, I: int, P: int) -> ParamVector:
        key = "sq" if spec.on_variance else ""
        params = {
            "delta": np.full(I, self.delta_start),
            "theta": np.full(P, self.theta_start),
            "sigma_sq" if key else "sigma": self.scale_start,
        }
        if spec.hierarchical:
            params["tau_sq" if key else "tau"] = self.tau_start
            params["mu"] = self.mu_start
        return unconstrain(spec, params)


def draw_inits(seed: int, chain_id: int, spec: ModelSpec) -> InitDraw:
    """Locations from U(-1, 1), scales from U(0, 2); one common start for all deltas and all thetas."""
    rng = chain_rng(seed, chain_id, STREAM_INITS)
    delta0, theta0 = rng.uniform(-1.0, 1.0, size=2)
    # U(0, 2) excluding the measure-zero endpoint 0, which has no log
    scale0 = 2.0 - rng.uniform(0.0, 2.0)
    if spec.hierarchical:
        tau0 = 2.0 - rng.uniform(0.0, 2.0)
        mu0 = rng.uniform(-1.0, 1.0)
        return InitDraw(float(delta0), float(theta0), float(scale0), float(tau0), float(mu0))
    return InitDraw(float(delta0), float(theta0), float(scale0))


def data_seed(seed: int, P: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(P)]).generate_state(1)[0])


def _run_one(job):
    sampler, spec, data, init_values, settings, chain_id = job
    init = ParamVector(spec.layout(data.I, data.P), init_values)
    if sampler == "nuts":
        cfg = NutsConfig(warmup_iters=settings["warmup"], sampling_iters=settings["iters"],
                         seed=settings["seed"])
        return sample_nuts(spec, data, init, cfg, chain_id)
    cfg = MhConfig(warmup_iters=settings["warmup"], sampling_iters=settings["iters"],
                   seed=settings["seed"], random_effects=settings["random_effects"],
                   gibbs=settings["gibbs"])
    return sample_mh(spec, data, init, cfg, chain_id)


def _guarded(job):
    try:
        return _run_one(job)
    except Exception as exc:  # recorded per chain; the experiment carries on
        return exc


@dataclass
class ChainRun:
    chains: list[Chain]
    failures: dict[int, str]
    wall_seconds: float
    simulation_seconds: float


def run_chains(spec: ModelSpec, data: ItemResponseData, sampler: str, n_chains: int,
               warmup: int, iters: int, seed: int, parallel: bool = False,
               random_effects: bool = True, gibbs: bool = True) -> ChainRun:
    """Run ``n_chains`` chains serially or in worker processes.

    Draws depend only on ``(seed, chain_id)``, so both modes give identical
    output.  Simulation time is the summed per-chain sampling time when
    serial and the longest chain when parallel.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}")
    settings = dict(warmup=warmup, iters=iters, seed=seed,
                    random_effects=random_effects, gibbs=gibbs)
    jobs = [(sampler, spec, data, draw_inits(seed, c, spec).param_vector(spec, data.I, data.P).values,
             settings, c) for c in range(n_chains)]
    t0 = time.perf_counter()
    if parallel and n_chains > 1:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(max_workers=n_chains, mp_context=ctx) as pool:
            results = list(pool.map(_guarded, jobs))
    else:
        results = [_guarded(job) for job in jobs]
    wall = time.perf_counter() - t0
    chains = [r for r in results if isinstance(r, Chain)]
    failures = {c: repr(r) for c, r in enumerate(results) if not isinstance(r, Chain)}
    sims = [ch.timing.simulation_seconds for ch in chains]
    sim = (max(sims) if parallel else sum(sims)) if sims else 0.0
    return ChainRun(chains, failures, wall, min(sim, wall))


def write_draws_csv(path, chains: list[Chain]) -> None:
    """All chains stacked; ``chain,iter,lp__,<params>`` with 17 significant digits."""
    if not chains:
        raise ValueError("no chains to write")
    names = chains[0].param_names
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["chain", "iter", "lp__"] + list(names)) + "\n")
        for ch in chains:
            n = ch.n_draws
            block = np.column_stack([np.full(n, ch.chain_id), np.arange(1, n + 1), ch.lp, ch.draws])
            np.savetxt(fh, block, delimiter=",", fmt=["%d", "%d"] + ["%.17g"] * (block.shape[1] - 2))


def read_draws_csv(path, sampler: str = "") -> list[Chain]:
    """Inverse of :func:`write_draws_csv`; timings are unknown and set to zero."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header[:3] != ["chain", "iter", "lp__"]:
        raise ValueError(f"{path}: not a draws file")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    chains = []
    for cid in np.unique(table[:, 0]).astype(int):
        rows = table[table[:, 0] == cid]
        chains.append(Chain(header[3:], rows[:, 3:], rows[:, 2], Timing(0.0, 0.0),
                            sampler=sampler, chain_id=int(cid)))
    return chains


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _sampler_summary(chains: list[Chain]) -> dict:
    out = {}
    if chains and chains[0].sampler == "nuts":
        out["n_divergent"] = int(sum(c.sampler_stats["n_divergent"] for c in chains))
        out["mean_tree_depth"] = float(np.mean([c.sampler_stats["tree_depth"].mean() for c in chains]))
        out["step_size"] = [float(c.sampler_stats["step_size"]) for c in chains]
    elif chains:
        rates = np.stack([c.sampler_stats["accept_rate"] for c in chains])
        out["mean_accept_rate"] = float(rates.mean())
        out["block_kinds"] = sorted(set(chains[0].sampler_stats["block_kinds"]))
    return out


def build_report(config: dict, run: ChainRun, total_seconds: float, threshold: float = 1.1,
                 extra: dict | None = None) -> tuple[dict, DiagnosticsReport | None]:
    """Report JSON body: config echo, diagnostics, worst parameter, per-chain timings, verdict."""
    diag = None
    if run.chains and run.chains[0].n_draws >= 4:
        diag = summarize(run.chains, total_seconds=total_seconds,
                         simulation_seconds=min(run.simulation_seconds, total_seconds),
                         threshold=threshold)
    return {
        "config": config,
        "diagnostics": diag.to_dict() if diag else None,
        "worst_param": diag.worst_param if diag else None,
        "converged": bool(diag.converged) if diag else False,
        "single_chain": len(run.chains) == 1,
        "timings": [dict(chain=c.chain_id, **c.timing.as_dict()) for c in run.chains],
        "failures": {str(k): v for k, v in run.failures.items()},
        "sampler_summary": _sampler_summary(run.chains),
        **(extra or {}),
    }, diag


@dataclass
class Cell:
    sampler: str
    P: int
    report: DiagnosticsReport | None
    report_path: Path
    draws_path: Path | None
    failures: dict[int, str]


def emit_boxplot_data(reports, path=None) -> list[dict]:
    """Long-format rows ``sampler,parameter_group,parameter,sec_per_ess,timing_kind``.

    ``reports`` is a sequence of ``(sampler, DiagnosticsReport)`` pairs.  SD
    forms of the scale parameters are omitted so each hyperparameter appears
    once, as in the efficiency tables.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("at least one report required")
    rows = []
    for sampler, report in reports:
        for rec in report.parameters:
            name = rec.parameter
            if name.startswith("theta."):
                group = "theta"
            elif name.startswith("delta."):
                group = "delta"
            elif name in HYPER_NAMES:
                group = "hyper"
            else:
                continue
            rows.append(dict(sampler=sampler, parameter_group=group, parameter=name,
                             sec_per_ess=rec.sec_per_ess_total, timing_kind="total"))
            rows.append(dict(sampler=sampler, parameter_group=group, parameter=name,
                             sec_per_ess=rec.sec_per_ess_sim, timing_kind="simulation"))
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["sampler", "parameter_group", "parameter",
                                               "sec_per_ess", "timing_kind"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return rows


@dataclass
class ExperimentResult:
    out: Path
    cells: list[Cell]
    efficiency_rows: list[dict]
    total_seconds: float


def run_experiment(config: BenchConfig) -> ExperimentResult:
    """Full protocol; every file is written by this coordinating process."""
    t_start = time.perf_counter()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = config.spec
    cells: list[Cell] = []
    eff_rows: list[dict] = []
    for P in config.persons:
        data, truth = simulate_data(config.items, P, sigma_true=1.0, seed=data_seed(config.seed, P))
        data_path = out / f"data_P{P}.csv"
        data.to_csv(data_path)
        write_truth_csv(out / f"truth_P{P}.csv", truth)
        data_hash = _sha256(data_path)
        for sampler in config.samplers:
            t_cell = time.perf_counter()
            run = run_chains(spec, data, sampler, config.chains, config.warmup, config.iters,
                             config.seed, config.parallel, config.random_effects, config.gibbs)
            draws_path = out / f"draws_{sampler}_P{P}.csv"
            if run.chains:
                write_draws_csv(draws_path, run.chains)
            else:
                draws_path = None
            total = time.perf_counter() - t_cell
            echo = dict(asdict(config), persons=config.persons, P=P, sampler=sampler)
            body, diag = build_report(echo, run, total,
                                      extra={"data_file": data_path.name, "data_sha256": data_hash})
            report_path = out / f"report_{sampler}_P{P}.json"
            report_path.write_text(json.dumps(body, indent=2))
            if diag is not None:
                diag.to_csv(out / f"diagnostics_{sampler}_P{P}.csv")
                for name in spec.hyperparameters():
                    rec = diag[name]
                    eff_rows.append(dict(model=config.model, parameter=name, P=P, sampler=sampler,
                                         ess=rec.ess, sec_per_ess_total=rec.sec_per_ess_total,
                                         sec_per_ess_sim=rec.sec_per_ess_sim))
            cells.append(Cell(sampler, P, diag, report_path, draws_path, run.failures))
    with open(out / "efficiency.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["model", "parameter", "P", "sampler", "ess",
                                           "sec_per_ess_total", "sec_per_ess_sim"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(eff_rows)
    done = [(c.sampler, c.report) for c in cells if c.report is not None]
    if done:
        emit_boxplot_data(done, out / "boxplot.csv")
    total = time.perf_counter() - t_start
    (out / "experiment.json").write_text(json.dumps({
        "config": asdict(config),
        "total_seconds": total,
        "cells": [dict(sampler=c.sampler, P=c.P, report=c.report_path.name,
                       failures={str(k): v for k, v in c.failures.items()}) for c in cells],
        "cpu_count": os.cpu_count(),
    }, indent=2))
    return ExperimentResult(out, cells, eff_rows, total)
