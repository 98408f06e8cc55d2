"""Rasch and hierarchical Rasch models over an unconstrained parameter vector.

Both models use the non-centred parameterisation: person abilities are stored
as standard-normal deviates ``theta_unit`` and rescaled by ``sigma``; item
difficulties are stored as ``delta_unit`` and mapped to ``sqrt(10) * delta_unit``
(Rasch) or ``mu + tau * delta_unit`` (hierarchical).  Scale parameters are kept
on the log scale and the log-Jacobian of that transform is part of the density.

Unconstrained layout::

    [log_scale, delta_unit[1..I], theta_unit[1..P]]                 # rasch
    [log_scale, delta_unit[1..I], theta_unit[1..P], log_tau_scale, mu]   # hierarchical

where ``log_scale`` is ``log(sigma_sq)`` under the inverse-gamma regime and
``log(sigma)`` under the flat-on-SD regime (likewise for tau).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import kernels

RASCH = "rasch"
HIERARCHICAL = "hierarchical"
VARIANTS = (RASCH, HIERARCHICAL)

IGAMMA = "igamma_on_variance"
UNIFORM_SD = "uniform_on_sd"
PRIOR_REGIMES = (IGAMMA, UNIFORM_SD)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class ItemResponseData:
    """Long-format binary responses; ``ii`` and ``pp`` are 1-based."""

    ii: np.ndarray
    pp: np.ndarray
    y: np.ndarray
    I: int
    P: int

    def __post_init__(self):
        ii = np.ascontiguousarray(self.ii, dtype=np.int64)
        pp = np.ascontiguousarray(self.pp, dtype=np.int64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if not (ii.ndim == pp.ndim == y.ndim == 1) or not (len(ii) == len(pp) == len(y)):
            raise ValueError("ii, pp and y must be 1-d arrays of equal length")
        if len(y) == 0:
            raise ValueError("no observations")
        if self.I < 1 or self.P < 1:
            raise ValueError("I and P must be positive")
        if ii.min() < 1 or ii.max() > self.I:
            raise ValueError("item index out of range 1..I")
        if pp.min() < 1 or pp.max() > self.P:
            raise ValueError("person index out of range 1..P")
        if np.any((y != 0) & (y != 1)):
            raise ValueError("responses must be 0 or 1")
        if np.unique(ii).size != self.I:
            raise ValueError("every item 1..I must be observed at least once")
        if np.unique(pp).size != self.P:
            raise ValueError("every person 1..P must be observed at least once")
        for name, arr in (("ii", ii), ("pp", pp), ("y", y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "I", int(self.I))
        object.__setattr__(self, "P", int(self.P))

    @property
    def N(self) -> int:
        return len(self.y)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["person", "item", "y"])
            w.writerows(zip(self.pp.tolist(), self.ii.tolist(), self.y.tolist()))

    @classmethod
    def from_csv(cls, path) -> "ItemResponseData":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["person", "item", "y"]:
                raise ValueError(f"{path}: expected header person,item,y; got {header}")
            rows = np.array([[int(v) for v in row] for row in reader if row], dtype=np.int64)
        if rows.size == 0:
            raise ValueError(f"{path}: no observations")
        pp, ii, y = rows[:, 0], rows[:, 1], rows[:, 2]
        return cls(ii=ii, pp=pp, y=y, I=int(ii.max()), P=int(pp.max()))


@dataclass(frozen=True)
class ModelSpec:
    variant: str = RASCH
    prior_regime: str = IGAMMA
    delta_prior_variance: float = 10.0
    igamma_shape: float = 1.0
    igamma_rate: float = 1.0
    mu_prior_variance: float | None = field(default=None)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.prior_regime not in PRIOR_REGIMES:
            raise ValueError(f"prior_regime must be one of {PRIOR_REGIMES}")
        if self.hierarchical and self.mu_prior_variance is None:
            object.__setattr__(self, "mu_prior_variance", 10.0)
        if not self.hierarchical and self.mu_prior_variance is not None:
            raise ValueError("mu_prior_variance applies to the hierarchical model only")
        consts = [self.delta_prior_variance, self.igamma_shape, self.igamma_rate]
        if self.hierarchical:
            consts.append(self.mu_prior_variance)
        if not all(c > 0 for c in consts):
            raise ValueError("prior constants must be strictly positive")

    @property
    def hierarchical(self) -> bool:
        return self.variant == HIERARCHICAL

    @property
    def on_variance(self) -> bool:
        return self.prior_regime == IGAMMA

    def layout(self, I: int, P: int) -> tuple[tuple[str, str], ...]:
        """Ordered ``(name, constraint)`` entries of the unconstrained vector."""
        scale = "log_sigma_sq" if self.on_variance else "log_sigma"
        entries = [(scale, "log")]
        entries += [(f"delta_unit.{i}", "none") for i in range(1, I + 1)]
        entries += [(f"theta_unit.{p}", "none") for p in range(1, P + 1)]
        if self.hierarchical:
            entries.append(("log_tau_sq" if self.on_variance else "log_tau", "log"))
            entries.append(("mu", "none"))
        return tuple(entries)

    def dim(self, I: int, P: int) -> int:
        return 1 + I + P + (2 if self.hierarchical else 0)

    def constrained_names(self, I: int, P: int) -> list[str]:
        names = ["sigma", "sigma_sq"]
        if self.hierarchical:
            names += ["mu", "tau", "tau_sq"]
        names += [f"delta.{i}" for i in range(1, I + 1)]
        names += [f"theta.{p}" for p in range(1, P + 1)]
        return names

    def hyperparameters(self) -> list[str]:
        """Hyperparameters reported in the efficiency tables."""
        if self.hierarchical:
            return ["sigma_sq", "mu", "tau_sq"]
        return ["sigma_sq"]

    def constants(self) -> np.ndarray:
        return np.array([
            self.delta_prior_variance,
            self.igamma_shape,
            self.igamma_rate,
            self.mu_prior_variance if self.hierarchical else 1.0,
        ])

    def kernel_args(self, data: ItemResponseData) -> tuple:
        """Argument tuple consumed by :func:`kernels.logp_grad`."""
        return (
            np.ascontiguousarray(data.ii - 1),
            np.ascontiguousarray(data.pp - 1),
            data.y.astype(np.float64),
            data.I,
            data.P,
            1 if self.hierarchical else 0,
            0 if self.on_variance else 1,
            self.constants(),
        )


@dataclass(frozen=True, eq=False)
class ParamVector:
    layout: tuple[tuple[str, str], ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or len(values) != len(self.layout):
            raise ValueError("layout length must equal values length")
        names = [name for name, _ in self.layout]
        if len(set(names)) != len(names):
            raise ValueError("layout names must be unique")
        object.__setattr__(self, "values", values)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.layout]

    def __len__(self):
        return len(self.values)


def _check(spec: ModelSpec, data: ItemResponseData, u) -> np.ndarray:
    if isinstance(u, ParamVector):
        if u.layout != spec.layout(data.I, data.P):
            raise ValueError("parameter layout does not match the model specification")
        values = u.values
    else:
        values = np.asarray(u, dtype=np.float64)
        if values.shape != (spec.dim(data.I, data.P),):
            raise ValueError(
                f"expected {spec.dim(data.I, data.P)} unconstrained values, got shape {values.shape}"
            )
    if not np.all(np.isfinite(values)):
        raise ValueError("unconstrained parameters must be finite")
    return values


def log_posterior(spec: ModelSpec, data: ItemResponseData, u) -> float:
    """Joint log density (with log-Jacobian terms) at the unconstrained point ``u``."""
    values = _check(spec, data, u)
    lp, _ = kernels.logp_grad(values, spec.kernel_args(data))
    return float(lp)


def grad_log_posterior(spec: ModelSpec, data: ItemResponseData, u) -> np.ndarray:
    values = _check(spec, data, u)
    _, grad = kernels.logp_grad(values, spec.kernel_args(data))
    return grad


def log_likelihood(data: ItemResponseData, theta, delta) -> float:
    """Bernoulli-logit log-likelihood for abilities ``theta`` and difficulties ``delta``."""
    eta = np.asarray(theta)[data.pp - 1] - np.asarray(delta)[data.ii - 1]
    return float(np.sum(data.y * eta - np.logaddexp(0.0, eta)))


def _scales(spec: ModelSpec, log_scale):
    if spec.on_variance:
        var = np.exp(log_scale)
        return np.sqrt(var), var
    sd = np.exp(log_scale)
    return sd, sd * sd


def _split(spec: ModelSpec, values: np.ndarray, I: int, P: int):
    s = values[..., 0]
    du = values[..., 1:1 + I]
    tu = values[..., 1 + I:1 + I + P]
    if spec.hierarchical:
        return s, du, tu, values[..., 1 + I + P], values[..., 2 + I + P]
    return s, du, tu, None, None


def constrain(spec: ModelSpec, u: ParamVector) -> dict[str, np.ndarray | float]:
    """Named constrained parameters; both SD and variance forms are reported."""
    n_items = sum(1 for name, _ in u.layout if name.startswith("delta_unit."))
    n_persons = sum(1 for name, _ in u.layout if name.startswith("theta_unit."))
    if u.layout != spec.layout(n_items, n_persons):
        raise ValueError("parameter layout does not match the model specification")
    s, du, tu, t, mu = _split(spec, u.values, n_items, n_persons)
    sigma, sigma_sq = _scales(spec, s)
    out = {"sigma": float(sigma), "sigma_sq": float(sigma_sq), "theta": tu * sigma}
    if spec.hierarchical:
        tau, tau_sq = _scales(spec, t)
        out.update(mu=float(mu), tau=float(tau), tau_sq=float(tau_sq), delta=mu + tau * du)
    else:
        out["delta"] = du * math.sqrt(spec.delta_prior_variance)
    return out


def unconstrain(spec: ModelSpec, params: dict) -> ParamVector:
    """Inverse of :func:`constrain`; scale entries are read from the regime's own form."""
    theta = np.asarray(params["theta"], dtype=np.float64)
    delta = np.asarray(params["delta"], dtype=np.float64)
    I, P = len(delta), len(theta)
    if spec.on_variance:
        s = math.log(params["sigma_sq"])
        sigma = math.sqrt(params["sigma_sq"])
    else:
        s = math.log(params["sigma"])
        sigma = params["sigma"]
    values = [np.array([s])]
    if spec.hierarchical:
        tau = math.sqrt(params["tau_sq"]) if spec.on_variance else params["tau"]
        t = math.log(params["tau_sq"]) if spec.on_variance else math.log(params["tau"])
        values += [(delta - params["mu"]) / tau, theta / sigma, np.array([t, params["mu"]])]
    else:
        values += [delta / math.sqrt(spec.delta_prior_variance), theta / sigma]
    return ParamVector(spec.layout(I, P), np.concatenate(values))


def constrain_matrix(spec: ModelSpec, U: np.ndarray, I: int, P: int) -> np.ndarray:
    """Row-wise constrain draws into the column order of :meth:`ModelSpec.constrained_names`."""
    U = np.atleast_2d(U)
    s, du, tu, t, mu = _split(spec, U, I, P)
    sigma, sigma_sq = _scales(spec, s)
    cols = [sigma[:, None], sigma_sq[:, None]]
    if spec.hierarchical:
        tau, tau_sq = _scales(spec, t)
        cols += [mu[:, None], tau[:, None], tau_sq[:, None]]
        delta = mu[:, None] + tau[:, None] * du
    else:
        delta = du * math.sqrt(spec.delta_prior_variance)
    cols += [delta, tu * sigma[:, None]]
    return np.hstack(cols)


def _scale_log_prior(spec: ModelSpec, s):
    # prior on the scale plus log-Jacobian of the exp transform
    if spec.on_variance:
        a, b = spec.igamma_shape, spec.igamma_rate
        return a * math.log(b) - math.lgamma(a) - a * s - b * np.exp(-s)
    return s


def log_prior_rows(spec: ModelSpec, U: np.ndarray, I: int, P: int) -> np.ndarray:
    """Prior + Jacobian part of :func:`log_posterior`, vectorised over rows of ``U``."""
    U = np.atleast_2d(U)
    s, du, tu, t, mu = _split(spec, U, I, P)
    lp = -0.5 * (np.sum(du * du, axis=1) + np.sum(tu * tu, axis=1)) - 0.5 * (I + P) * _LOG_2PI
    lp = lp + _scale_log_prior(spec, s)
    if spec.hierarchical:
        v = spec.mu_prior_variance
        lp = lp + _scale_log_prior(spec, t) - 0.5 * mu * mu / v - 0.5 * math.log(2.0 * math.pi * v)
    return lp


def simulate_data(I: int, P: int, sigma_true: float = 1.0, seed: int = 0):
    """Simulate a complete I x P crossing with equally spaced difficulties in [-1.5, 1.5].

    Returns ``(data, truth)`` where ``truth`` holds ``delta``, ``theta`` and ``sigma``.
    """
    if I < 2:
        raise ValueError("need at least two items for equally spaced difficulties")
    if P < 1:
        raise ValueError("need at least one person")
    if not sigma_true >= 0:
        raise ValueError("sigma_true must be non-negative")
    rng = np.random.default_rng(seed)
    delta = np.linspace(-1.5, 1.5, I)
    theta = rng.normal(0.0, 1.0, size=P) * sigma_true
    pp = np.repeat(np.arange(1, P + 1), I)
    ii = np.tile(np.arange(1, I + 1), P)
    prob = expit(theta[pp - 1] - delta[ii - 1])
    y = (rng.random(I * P) < prob).astype(np.int64)
    data = ItemResponseData(ii=ii, pp=pp, y=y, I=I, P=P)
    truth = {"delta": delta, "theta": theta, "sigma": float(sigma_true),
             "sigma_sq": float(sigma_true) ** 2}
    return data, truth


def write_truth_csv(path, truth: dict) -> None:
    rows = [("sigma", truth["sigma"]), ("sigma_sq", truth["sigma_sq"])]
    rows += [(f"delta.{i}", v) for i, v in enumerate(truth["delta"], start=1)]
    rows += [(f"theta.{p}", v) for p, v in enumerate(truth["theta"], start=1)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "value"])
        for name, value in rows:
            w.writerow([name, repr(float(value))])


def read_truth_csv(path) -> dict[str, float]:
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        return {row["name"]: float(row["value"]) for row in reader}
