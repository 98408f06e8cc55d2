"""Bayesian Rasch and hierarchical Rasch models with NUTS and blocked Metropolis/Gibbs samplers."""

from ._accel import BACKEND
from .chain import Chain, Timing
from .diagnostics import DiagnosticsReport, efficiency, ess, split_rhat, summarize
from .harness import BenchConfig, draw_inits, emit_boxplot_data, run_chains, run_experiment
from .mh import MhConfig, sample_mh
from .model import (HIERARCHICAL, IGAMMA, RASCH, UNIFORM_SD, ItemResponseData, ModelSpec,
                    ParamVector, constrain, grad_log_posterior, log_posterior, simulate_data,
                    unconstrain)
from .nuts import NutsConfig, sample_nuts

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Chain", "Timing", "DiagnosticsReport", "efficiency", "ess", "split_rhat",
    "summarize", "BenchConfig", "draw_inits", "emit_boxplot_data", "run_chains",
    "run_experiment", "MhConfig", "sample_mh", "HIERARCHICAL", "IGAMMA", "RASCH", "UNIFORM_SD",
    "ItemResponseData", "ModelSpec", "ParamVector", "constrain", "grad_log_posterior",
    "log_posterior", "simulate_data", "unconstrain", "NutsConfig", "sample_nuts",
]
