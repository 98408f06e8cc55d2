"""No-U-turn sampler with multinomial trajectory sampling.

The tree is built iteratively rather than recursively: leaves are generated
in order and every completed power-of-two sub-trajectory is checked for a
U-turn as soon as its last leaf lands, including the two extra checks across
adjacent halves that catch near-periodic trajectories.  This keeps the transition a single
compiled kernel on the numba backend.  Within a new subtree the sample is
chosen by streaming multinomial selection (equivalent to Stan's uniform merge
of sub-subtrees); the subtree is merged into the existing trajectory with the
biased progressive rule.

Warmup follows the fast/slow window layout: an initial step-size-only buffer,
doubling windows that re-estimate a diagonal inverse metric, and a terminal
step-size-only buffer.  Buffer and window lengths are 7.5%, 2.5% and 5% of the
warmup length (75/25/50 at 1000 iterations).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from ._accel import njit
from .chain import Chain, Timing, chain_rng
from .model import ItemResponseData, ModelSpec, ParamVector, constrain_matrix

DIVERGENCE_THRESHOLD = 1000.0
DA_GAMMA = 0.05
DA_T0 = 10.0
DA_KAPPA = 0.75


@dataclass
class NutsConfig:
    warmup_iters: int = 1000
    sampling_iters: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    metric: str = "diagonal"

    def __post_init__(self):
        if self.warmup_iters < 0:
            raise ValueError("warmup_iters must be >= 0")
        if self.sampling_iters < 1:
            raise ValueError("sampling_iters must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be >= 1")
        if self.metric not in ("unit", "diagonal"):
            raise ValueError("metric must be 'unit' or 'diagonal'")


@dataclass
class SamplerState:
    position: np.ndarray
    lp: float
    grad: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    rng: np.random.Generator
    # dual averaging accumulators
    mu: float = 0.0
    log_step_bar: float = 0.0
    h_bar: float = 0.0
    counter: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step size must be positive")
        if np.any(self.inv_metric <= 0):
            raise ValueError("metric entries must be positive")


class NutsDraw(NamedTuple):
    position: np.ndarray
    accept_stat: float
    tree_depth: int
    n_leapfrog: int
    divergent: bool
    energy: float


@njit
def _leapfrog(logp_grad, args, q, p, g, eps, inv_metric):
    p_half = p + 0.5 * eps * g
    q_new = q + eps * inv_metric * p_half
    lp, g_new = logp_grad(q_new, args)
    p_new = p_half + 0.5 * eps * g_new
    return q_new, p_new, lp, g_new


def leapfrog(logp_grad, args, q, p, eps, inv_metric):
    """One leapfrog step; returns ``(q', p', divergent)``.

    ``logp_grad(q, args) -> (lp, grad)`` must follow the kernel convention
    (compiled with :func:`raschmc._accel.njit` on the numba backend).  A
    non-finite density or gradient at either end flags the step as divergent.
    """
    if eps == 0:
        raise ValueError("step size must be non-zero")
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    inv_metric = np.broadcast_to(np.asarray(inv_metric, dtype=np.float64), q.shape).copy()
    lp0, g = logp_grad(q, args)
    if not (np.isfinite(lp0) and np.all(np.isfinite(g))):
        return q.copy(), p.copy(), True
    q_new, p_new, lp, g_new = _leapfrog(logp_grad, args, q, p, g, float(eps), inv_metric)
    divergent = not (np.isfinite(lp) and np.all(np.isfinite(g_new)))
    return q_new, p_new, divergent


@njit
def _log_add(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit
def _kinetic(p, inv_metric):
    s = 0.0
    for k in range(p.shape[0]):
        s += inv_metric[k] * p[k] * p[k]
    return 0.5 * s


@njit
def _no_u_turn(p_a, p_b, rho, inv_metric):
    return _no_u_turn3(p_a, p_b, rho, rho, rho, 1.0, 0.0, 0.0, inv_metric)


@njit
def _no_u_turn3(p_a, p_b, x, y, w, cx, cy, cw, inv_metric):
    """U-turn criterion for ``rho = cx*x + cy*y + cw*w`` without temporaries."""
    da = 0.0
    db = 0.0
    for k in range(p_a.shape[0]):
        r = (cx * x[k] + cy * y[k] + cw * w[k]) * inv_metric[k]
        da += r * p_a[k]
        db += r * p_b[k]
    return da > 0.0 and db > 0.0


@njit
def nuts_transition(logp_grad, args, q0, lp0, g0, eps, inv_metric, max_depth, z, u):
    """One NUTS transition from ``q0``.

    ``z`` holds ``dim`` standard normals for the momentum; ``u`` holds
    ``2 * max_depth + 2 ** max_depth`` uniforms: a direction and a merge draw
    per doubling, then one per leaf for the within-subtree selection.
    """
    dim = q0.shape[0]
    p0 = z / np.sqrt(inv_metric)
    H0 = -lp0 + _kinetic(p0, inv_metric)

    q_l = q0.copy()
    p_l = p0.copy()
    g_l = g0.copy()
    q_r = q0.copy()
    p_r = p0.copy()
    g_r = g0.copy()
    q_s = q0.copy()
    g_s = g0.copy()
    lp_s = lp0
    rho = p0.copy()
    log_w = 0.0

    sum_acc = 0.0
    n_lf = 0
    divergent = False
    depth = 0
    leaf = 0
    p_start = np.empty((max_depth + 1, dim))
    rho_before = np.empty((max_depth + 1, dim))
    p_end = np.empty((max_depth + 1, dim))

    for d in range(max_depth):
        depth = d + 1
        forward = u[2 * d] < 0.5
        if forward:
            q = q_r.copy()
            p = p_r.copy()
            g = g_r.copy()
            step = eps
        else:
            q = q_l.copy()
            p = p_l.copy()
            g = g_l.copy()
            step = -eps
        sub_log_w = -np.inf
        sub_rho = np.zeros(dim)
        q_sub = q.copy()
        g_sub = g.copy()
        lp_sub = lp0
        p_sub_first = p.copy()
        valid = True
        n_leaves = 1 << d
        for k in range(n_leaves):
            q, p, lp, g = _leapfrog(logp_grad, args, q, p, g, step, inv_metric)
            n_lf += 1
            H = -lp + _kinetic(p, inv_metric)
            dH = H - H0
            if not (dH <= DIVERGENCE_THRESHOLD):
                # covers NaN as well as a large energy error
                divergent = True
                valid = False
                break
            sum_acc += 1.0 if dH <= 0.0 else math.exp(-dH)
            lw = -dH
            new_log_w = _log_add(sub_log_w, lw)
            if math.log(u[2 * max_depth + leaf]) < lw - new_log_w:
                q_sub[:] = q
                g_sub[:] = g
                lp_sub = lp
            sub_log_w = new_log_w
            leaf += 1
            if k == 0:
                p_sub_first[:] = p
            for j in range(d + 1):
                if k % (1 << j) == 0:
                    p_start[j] = p
                    rho_before[j] = sub_rho
            sub_rho += p
            # a span of 2**j leaves just closed: halves A (earlier) and B (later)
            for j in range(1, d + 1):
                if (k + 1) % (1 << j) == 0:
                    # rho_a = rho_before[j-1] - rho_before[j], rho_b = sub_rho - rho_before[j-1]
                    if not _no_u_turn3(p_start[j], p, sub_rho, rho_before[j], sub_rho,
                                       1.0, -1.0, 0.0, inv_metric):
                        valid = False
                    elif not _no_u_turn3(p_start[j], p_start[j - 1], rho_before[j - 1], rho_before[j],
                                         p_start[j - 1], 1.0, -1.0, 1.0, inv_metric):
                        valid = False
                    elif not _no_u_turn3(p_end[j - 1], p, sub_rho, rho_before[j - 1], p_end[j - 1],
                                         1.0, -1.0, 1.0, inv_metric):
                        valid = False
            if not valid:
                break
            for j in range(d + 1):
                if (k + 1) % (1 << j) == 0:
                    p_end[j] = p
        if not valid:
            break
        if math.log(u[2 * d + 1]) < sub_log_w - log_w:
            q_s[:] = q_sub
            g_s[:] = g_sub
            lp_s = lp_sub
        log_w = _log_add(log_w, sub_log_w)
        if forward:
            p_adj = p_r
            p_outer = p_l
        else:
            p_adj = p_l
            p_outer = p_r
        keep_going = (
            _no_u_turn3(p_outer, p, rho, sub_rho, rho, 1.0, 1.0, 0.0, inv_metric)
            and _no_u_turn3(p_outer, p_sub_first, rho, p_sub_first, rho, 1.0, 1.0, 0.0, inv_metric)
            and _no_u_turn3(p_adj, p, sub_rho, p_adj, sub_rho, 1.0, 1.0, 0.0, inv_metric)
        )
        rho += sub_rho
        if forward:
            q_r = q
            p_r = p
            g_r = g
        else:
            q_l = q
            p_l = p
            g_l = g
        if not keep_going:
            break

    return q_s, lp_s, g_s, sum_acc / n_lf, depth, n_lf, divergent, H0


def _uniforms_needed(max_depth: int) -> int:
    return 2 * max_depth + (1 << max_depth)


def nuts_draw(state: SamplerState, logp_grad, args, max_tree_depth: int = 10) -> NutsDraw:
    """Advance ``state`` by one NUTS transition (updates position, lp and grad)."""
    z = state.rng.standard_normal(state.position.shape[0])
    u = state.rng.random(_uniforms_needed(max_tree_depth))
    q, lp, g, acc, depth, n_lf, div, energy = nuts_transition(
        logp_grad, args, state.position, state.lp, state.grad,
        state.step_size, state.inv_metric, max_tree_depth, z, u)
    state.position = q
    state.lp = float(lp)
    state.grad = g
    return NutsDraw(q, float(acc), int(depth), int(n_lf), bool(div), float(energy))


def restart_adaptation(state: SamplerState) -> SamplerState:
    state.mu = math.log(10.0 * state.step_size)
    state.log_step_bar = 0.0
    state.h_bar = 0.0
    state.counter = 0
    return state


def adapt(state: SamplerState, accept_stat: float, target_accept: float = 0.8) -> SamplerState:
    """Dual-averaging update of the step size toward ``target_accept``."""
    state.counter += 1
    t = state.counter
    w = 1.0 / (t + DA_T0)
    state.h_bar = (1.0 - w) * state.h_bar + w * (target_accept - accept_stat)
    log_step = state.mu - math.sqrt(t) / DA_GAMMA * state.h_bar
    eta = t ** -DA_KAPPA
    state.log_step_bar = eta * log_step + (1.0 - eta) * state.log_step_bar
    state.step_size = math.exp(log_step)
    return state


def find_reasonable_step_size(state: SamplerState, logp_grad, args, max_doublings: int = 100) -> float:
    """Double or halve the step until one leapfrog step crosses acceptance 0.5."""
    q, inv_metric = state.position, state.inv_metric
    p = state.rng.standard_normal(q.shape[0]) / np.sqrt(inv_metric)
    H0 = -state.lp + 0.5 * np.sum(inv_metric * p * p)

    def log_accept(eps):
        _, p1, lp1, _ = _leapfrog(logp_grad, args, q, p, state.grad, eps, inv_metric)
        with np.errstate(over="ignore", invalid="ignore"):
            H1 = -lp1 + 0.5 * np.sum(inv_metric * p1 * p1)
        return H0 - H1 if np.isfinite(H1) else -np.inf

    eps = state.step_size
    direction = 1 if log_accept(eps) > math.log(0.5) else -1
    for _ in range(max_doublings):
        trial = eps * 2.0 ** direction
        la = log_accept(trial)
        if direction == 1 and not la > math.log(0.5):
            break
        if direction == -1 and not la < math.log(0.5):
            eps = trial
            break
        eps = trial
    state.step_size = float(min(max(eps, 1e-10), 1e7))
    return state.step_size


def warmup_windows(num_warmup: int) -> list[tuple[int, int]]:
    """Slow (metric) adaptation windows as ``(start, end)`` iteration ranges."""
    if num_warmup < 20:
        return []
    init = max(1, round(0.075 * num_warmup))
    term = max(1, round(0.05 * num_warmup))
    size = max(1, round(0.025 * num_warmup))
    last = num_warmup - term
    windows = []
    start = init
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        windows.append((start, end))
        start = end
        size *= 2
    return windows


class _RunningVariance:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def regularized(self):
        n = self.n
        var = self.m2 / max(n - 1, 1)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


@dataclass
class NutsRun:
    """Raw output of :func:`run_nuts` on the unconstrained scale."""

    draws: np.ndarray
    lp: np.ndarray
    accept_stat: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    timing: Timing
    warmup_step_sizes: np.ndarray = field(default_factory=lambda: np.empty(0))


def run_nuts(logp_grad, args, init, config: NutsConfig, chain_id: int = 0) -> NutsRun:
    """Adapt during warmup, then draw ``config.sampling_iters`` states."""
    t_start = time.perf_counter()
    q0 = np.array(init, dtype=np.float64)
    lp0, g0 = logp_grad(q0, args)
    if not (np.isfinite(lp0) and np.all(np.isfinite(g0))):
        raise ValueError("log posterior is not finite at the initial values")
    dim = q0.shape[0]
    depth = config.max_tree_depth
    # compile (numba) or exercise (numpy) the transition outside the timed phases
    nuts_transition(logp_grad, args, q0, lp0, g0, 1e-3, np.ones(dim), depth,
                    np.zeros(dim), np.full(_uniforms_needed(depth), 0.5))
    state = SamplerState(q0, float(lp0), g0, 1.0, np.ones(dim), chain_rng(config.seed, chain_id))
    find_reasonable_step_size(state, logp_grad, args)
    restart_adaptation(state)

    windows = warmup_windows(config.warmup_iters) if config.metric == "diagonal" else []
    window_ends = {end: start for start, end in windows}
    in_window = np.zeros(config.warmup_iters, dtype=bool)
    for start, end in windows:
        in_window[start:end] = True
    var = _RunningVariance(dim)

    t_sim = time.perf_counter()
    warm_steps = np.empty(config.warmup_iters)
    for it in range(config.warmup_iters):
        draw = nuts_draw(state, logp_grad, args, depth)
        adapt(state, draw.accept_stat, config.target_accept)
        warm_steps[it] = state.step_size
        if in_window[it]:
            var.add(state.position)
        if it + 1 in window_ends:
            state.inv_metric = var.regularized()
            var = _RunningVariance(dim)
            find_reasonable_step_size(state, logp_grad, args)
            restart_adaptation(state)
    if config.warmup_iters > 0:
        state.step_size = math.exp(state.log_step_bar)
    t_warm = time.perf_counter()

    n = config.sampling_iters
    draws = np.empty((n, dim))
    lp = np.empty(n)
    acc = np.empty(n)
    tree = np.empty(n, dtype=np.int64)
    n_lf = np.empty(n, dtype=np.int64)
    div = np.zeros(n, dtype=bool)
    energy = np.empty(n)
    for it in range(n):
        d = nuts_draw(state, logp_grad, args, depth)
        draws[it] = d.position
        lp[it] = state.lp
        acc[it] = d.accept_stat
        tree[it] = d.tree_depth
        n_lf[it] = d.n_leapfrog
        div[it] = d.divergent
        energy[it] = d.energy
    t_end = time.perf_counter()

    timing = Timing(
        total_seconds=t_end - t_start,
        simulation_seconds=t_end - t_warm,
        warmup_seconds=t_warm - t_sim,
        sampling_seconds=t_end - t_warm,
    )
    return NutsRun(draws, lp, acc, tree, n_lf, div, energy, state.step_size,
                   state.inv_metric.copy(), timing, warm_steps)


def sample_nuts(spec: ModelSpec, data: ItemResponseData, init: ParamVector,
                config: NutsConfig, chain_id: int = 0) -> Chain:
    """Fit ``spec`` to ``data`` with NUTS; draws are returned on the constrained scale."""
    t_start = time.perf_counter()
    if init.layout != spec.layout(data.I, data.P):
        raise ValueError("initial values do not match the model layout")
    args = spec.kernel_args(data)
    run = run_nuts(kernels.logp_grad, args, init.values, config, chain_id)
    draws = constrain_matrix(spec, run.draws, data.I, data.P)
    total = time.perf_counter() - t_start
    run.timing.total_seconds = max(total, run.timing.total_seconds)
    return Chain(
        param_names=spec.constrained_names(data.I, data.P),
        draws=draws,
        lp=run.lp,
        timing=run.timing,
        sampler="nuts",
        chain_id=chain_id,
        sampler_stats={
            "accept_stat": run.accept_stat,
            "tree_depth": run.tree_depth,
            "n_leapfrog": run.n_leapfrog,
            "divergent": run.divergent,
            "energy": run.energy,
            "step_size": run.step_size,
            "inv_metric": run.inv_metric,
            "n_divergent": int(run.divergent.sum()),
        },
    )
