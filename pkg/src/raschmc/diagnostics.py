"""Split R-hat, autocorrelation-based ESS and seconds-per-effective-sample."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .chain import Chain


def _as_matrix(chains) -> np.ndarray:
    arrays = [np.asarray(c, dtype=np.float64).ravel() for c in chains]
    if not arrays:
        raise ValueError("at least one chain required")
    n = arrays[0].size
    if any(a.size != n for a in arrays):
        raise ValueError("chains must have equal lengths")
    if n < 4:
        raise ValueError("each chain needs at least 4 draws")
    return np.vstack(arrays)


def _split(x: np.ndarray) -> np.ndarray:
    """(M, n) -> (2M, n // 2); the middle draw is dropped when n is odd."""
    half = x.shape[1] // 2
    return np.vstack([x[:, :half], x[:, x.shape[1] - half:]])


def _variances(x: np.ndarray):
    n = x.shape[1]
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B_over_n = means.var(ddof=1) if x.shape[0] > 1 else 0.0
    var_plus = (n - 1) / n * W + B_over_n
    return W, var_plus


def split_rhat(chains) -> float:
    """Potential scale reduction on split chains, per BDA3.

    Returns 1.0 when all draws are equal and ``inf`` when every half-chain is
    constant but they disagree.
    """
    x = _split(_as_matrix(chains))
    W, var_plus = _variances(x)
    if var_plus <= 0.0 or (W <= 0.0 and np.ptp(x) == 0.0):
        return 1.0
    if W <= 0.0:
        return math.inf
    return math.sqrt(var_plus / W)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row (normalised by n), via FFT."""
    n = x.shape[1]
    nfft = 1 << (2 * n - 1).bit_length()
    centered = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(centered, n=nfft, axis=1)
    return np.fft.irfft(f * np.conj(f), n=nfft, axis=1)[:, :n] / n


def ess(chains) -> float:
    """Effective sample size across chains.

    Split chains are combined through the between-chain variance so that
    chains which disagree shrink the estimate.  The autocorrelation sum is
    truncated with Geyer's initial monotone positive sequence and the result
    is capped at the total number of draws.
    """
    raw = _as_matrix(chains)
    x = _split(raw)
    M, n = x.shape
    W, var_plus = _variances(x)
    if W <= 0.0 or var_plus <= 0.0:
        return float(raw.shape[0])
    acov = _autocovariance(x).mean(axis=0)
    rho = 1.0 - (W - acov * n / (n - 1)) / var_plus
    rho[0] = 1.0
    pairs = []
    prev = math.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0.0:
            break
        prev = min(prev, pair)
        pairs.append(prev)
    tau = -1.0 + 2.0 * sum(pairs) if pairs else 1.0
    total = M * n
    return float(min(total / max(tau, 1e-12), total))


@dataclass(frozen=True)
class Efficiency:
    sec_per_ess: float
    ess_per_sec: float


def efficiency(ess_value: float, seconds: float) -> Efficiency:
    if not (ess_value > 0 and seconds > 0):
        raise ValueError("ess and seconds must be positive")
    return Efficiency(seconds / ess_value, ess_value / seconds)


def _sec_per_ess(ess_value: float, seconds: float) -> float:
    # draws read back from disk carry no timing
    return efficiency(ess_value, seconds).sec_per_ess if seconds > 0 else math.nan


@dataclass
class ParameterDiagnostics:
    parameter: str
    rhat: float
    ess: float
    sec_per_ess_total: float
    sec_per_ess_sim: float
    mean: float
    sd: float
    mcse: float


@dataclass
class DiagnosticsReport:
    parameters: list[ParameterDiagnostics]
    worst_param: str
    converged: bool
    threshold: float
    total_seconds: float
    simulation_seconds: float
    n_chains: int
    n_draws: int
    single_chain: bool = False
    not_converged: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> ParameterDiagnostics:
        for rec in self.parameters:
            if rec.parameter == name:
                return rec
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [rec.parameter for rec in self.parameters]

    @property
    def max_rhat(self) -> float:
        return max(rec.rhat for rec in self.parameters)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["parameters"] = [asdict(p) for p in self.parameters]
        return d

    def to_json(self, path=None, indent: int = 2) -> str:
        text = json.dumps(self.to_dict(), indent=indent, allow_nan=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "rhat", "ess", "sec_per_ess_total", "sec_per_ess_sim"])
            for rec in self.parameters:
                w.writerow([rec.parameter, repr(rec.rhat), repr(rec.ess),
                            repr(rec.sec_per_ess_total), repr(rec.sec_per_ess_sim)])


def summarize(chains: list[Chain], total_seconds: float | None = None,
              simulation_seconds: float | None = None, threshold: float = 1.1) -> DiagnosticsReport:
    """Per-parameter diagnostics for a set of chains fitted to the same model.

    Timings default to the sum over chains, which is the wall time of a
    serial run.
    """
    if not chains:
        raise ValueError("at least one chain required")
    names = list(chains[0].param_names)
    for c in chains[1:]:
        if list(c.param_names) != names:
            raise ValueError("all chains must report the same parameters")
    if total_seconds is None:
        total_seconds = sum(c.timing.total_seconds for c in chains)
    if simulation_seconds is None:
        simulation_seconds = sum(c.timing.simulation_seconds for c in chains)
    if simulation_seconds > total_seconds:
        raise ValueError("simulation time cannot exceed total time")
    stacked = np.stack([c.draws for c in chains])  # (chains, draws, params)
    records = []
    for k, name in enumerate(names):
        cols = stacked[:, :, k]
        r = max(split_rhat(cols), 1.0)
        e = ess(cols)
        sd = float(cols.std(ddof=1))
        records.append(ParameterDiagnostics(
            parameter=name,
            rhat=r,
            ess=e,
            sec_per_ess_total=_sec_per_ess(e, total_seconds),
            sec_per_ess_sim=_sec_per_ess(e, simulation_seconds),
            mean=float(cols.mean()),
            sd=sd,
            mcse=sd / math.sqrt(e),
        ))
    worst = min(records, key=lambda rec: rec.ess).parameter
    return DiagnosticsReport(
        parameters=records,
        worst_param=worst,
        converged=all(rec.rhat < threshold for rec in records),
        threshold=threshold,
        total_seconds=float(total_seconds),
        simulation_seconds=float(simulation_seconds),
        n_chains=len(chains),
        n_draws=int(stacked.shape[1]),
        single_chain=len(chains) == 1,
        not_converged=[rec.parameter for rec in records if not rec.rhat < threshold],
    )
