"""Chain container shared by both samplers, plus per-chain RNG derivation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Stream tags keep the initial-value draw and the sampler's own randomness
# independent even when they share (seed, chain_id).
STREAM_SAMPLER = 0
STREAM_INITS = 1


def chain_rng(seed: int, chain_id: int, stream: int = STREAM_SAMPLER) -> np.random.Generator:
    """Generator for one chain: ``SeedSequence([seed, chain_id, stream])`` feeding PCG64."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chain_id), int(stream)]))


@dataclass
class Timing:
    total_seconds: float
    simulation_seconds: float
    warmup_seconds: float = 0.0
    sampling_seconds: float = 0.0

    def as_dict(self) -> dict:
        return {
            "total_seconds": self.total_seconds,
            "simulation_seconds": self.simulation_seconds,
            "warmup_seconds": self.warmup_seconds,
            "sampling_seconds": self.sampling_seconds,
        }


@dataclass
class Chain:
    """Post-warmup draws on the constrained scale for one chain."""

    param_names: list[str]
    draws: np.ndarray
    lp: np.ndarray
    timing: Timing
    sampler: str = ""
    chain_id: int = 0
    sampler_stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=np.float64)
        self.lp = np.asarray(self.lp, dtype=np.float64)
        if self.draws.ndim != 2 or self.draws.shape[1] != len(self.param_names):
            raise ValueError("draws must be a (iterations, n_params) matrix matching param_names")
        if len(self.lp) != self.draws.shape[0]:
            raise ValueError("one log-posterior value per draw required")
        if not np.all(np.isfinite(self.draws)):
            raise ValueError("draws must be finite")
        if self.timing.simulation_seconds > self.timing.total_seconds:
            raise ValueError("simulation time cannot exceed total time")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.param_names.index(name)]
