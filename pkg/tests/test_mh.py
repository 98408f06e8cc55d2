import functools
import math

import numpy as np
import pytest
from scipy import stats

from raschmc import kernels
from raschmc.harness import draw_inits
from raschmc.mh import (GIBBS_IGAMMA, JOINT_RW, SCALAR_RW, Block, BlockPlan, MhConfig, _csr,
                        _initial_state, adapt_scales, default_block_plan, gibbs_variance_update,
                        rw_update, sample_mh)
from raschmc.model import (HIERARCHICAL, IGAMMA, RASCH, UNIFORM_SD, ModelSpec, ParamVector,
                           log_posterior, unconstrain)

from .conftest import ALL_SPECS


@pytest.mark.parametrize("variant,re,expected", [
    (RASCH, True, 121), (RASCH, False, 3), (HIERARCHICAL, True, 123), (HIERARCHICAL, False, 5),
])
def test_block_counts(variant, re, expected):
    plan = default_block_plan(ModelSpec(variant), 20, 100, random_effects=re)
    assert len(plan) == expected
    assert len(plan.log_scales) == expected


def test_block_kinds_follow_regime():
    plan = default_block_plan(ModelSpec(HIERARCHICAL, IGAMMA), 3, 4)
    assert plan.kinds[-3:] == [GIBBS_IGAMMA, GIBBS_IGAMMA, SCALAR_RW]
    plan = default_block_plan(ModelSpec(HIERARCHICAL, UNIFORM_SD), 3, 4, gibbs=True)
    assert GIBBS_IGAMMA not in plan.kinds
    plan = default_block_plan(ModelSpec(RASCH, IGAMMA), 3, 4, gibbs=False)
    assert GIBBS_IGAMMA not in plan.kinds
    plan = default_block_plan(ModelSpec(RASCH, IGAMMA), 3, 4, random_effects=False)
    assert plan.kinds[:2] == [JOINT_RW, JOINT_RW]
    assert len(plan.blocks[0].names) == 4 and len(plan.blocks[1].names) == 3


def test_block_plan_rejects_duplicates():
    with pytest.raises(ValueError):
        BlockPlan([Block(("a",), SCALAR_RW, 0.44), Block(("a",), SCALAR_RW, 0.44)], [0.0, 0.0])
    with pytest.raises(ValueError):
        BlockPlan([Block(("a",), SCALAR_RW, 0.44)], [0.0, 0.0])


def test_config_validation():
    with pytest.raises(ValueError):
        MhConfig(sampling_iters=0)
    with pytest.raises(ValueError):
        MhConfig(adapt_window=0)
    with pytest.raises(ValueError):
        MhConfig(target_accept_scalar=1.5)


def test_flat_target_always_accepts():
    rng = np.random.default_rng(0)
    x = np.zeros(3)
    accepted = 0
    for _ in range(1000):
        x, acc, _ = rw_update([1], x, 1.0, lambda v: 0.0, rng)
        accepted += acc
    assert accepted == 1000


def test_nonfinite_proposals_are_rejected():
    rng = np.random.default_rng(0)
    x = np.array([-0.1])
    for _ in range(200):
        x, _, lp = rw_update([0], x, 1.0, lambda v: 0.0 if v[0] < 0 else -np.inf, rng)
        assert x[0] < 0 and lp == 0.0
    with pytest.raises(ValueError):
        rw_update([0], x, 0.0, lambda v: 0.0, rng)


def test_rw_update_targets_standard_normal():
    rng = np.random.default_rng(1)
    x = np.zeros(1)
    lp = None
    out = np.empty(40000)
    for k in range(out.size):
        x, _, lp = rw_update([0], x, 2.4, lambda v: -0.5 * v[0] ** 2, rng, lp)
        out[k] = x[0]
    assert abs(out.mean()) < 0.06
    assert out.var() == pytest.approx(1.0, abs=0.06)


def test_scalar_adaptation_reaches_target():
    rng = np.random.default_rng(2)
    plan = BlockPlan([Block(("x",), SCALAR_RW, 0.44)], [math.log(0.05)])
    x = np.zeros(1)
    lp = 0.0
    for _ in range(100):
        acc = 0
        for _ in range(50):
            x, a, lp = rw_update([0], x, float(plan.scales[0]), lambda v: -0.5 * v[0] ** 2, rng, lp)
            acc += a
        adapt_scales(plan, [acc / 50])
    acc = 0
    for _ in range(4000):
        x, a, lp = rw_update([0], x, float(plan.scales[0]), lambda v: -0.5 * v[0] ** 2, rng, lp)
        acc += a
    assert abs(acc / 4000 - 0.44) < 0.1


def test_adapt_scales_direction_and_gibbs_untouched():
    plan = BlockPlan([Block(("a",), SCALAR_RW, 0.44), Block(("b",), GIBBS_IGAMMA, 0.44),
                      Block(("c",), JOINT_RW, 0.234)], [0.0, 0.0, 0.0])
    adapt_scales(plan, [1.0, 0.0, 0.0])
    assert plan.log_scales[0] > 0
    assert plan.log_scales[1] == 0
    assert plan.log_scales[2] < 0


def test_rw_update_on_param_vector(small_data):
    data, _ = small_data
    spec = ModelSpec()
    pv = draw_inits(0, 0, spec).param_vector(spec, data.I, data.P)
    dens = functools.partial(log_posterior, spec, data)
    new, _, lp = rw_update([0, 1], pv, 0.1, dens, np.random.default_rng(0))
    assert isinstance(new, ParamVector)
    assert lp == pytest.approx(dens(new.values))


def test_gibbs_update_matches_inverse_gamma():
    rng = np.random.default_rng(3)
    dev = np.random.default_rng(4).normal(size=30)
    a, b = 1.0, 1.0
    draws = np.array([gibbs_variance_update(dev, a, b, rng) for _ in range(50000)])
    post = stats.invgamma(a + 15, scale=b + 0.5 * np.dot(dev, dev))
    assert stats.kstest(draws, post.cdf).pvalue > 0.001
    with pytest.raises(ValueError):
        gibbs_variance_update(dev, 0.0, 1.0, rng)


def _window_setup(spec, data, re=True, n_iter=30, seed=0):
    init = draw_inits(1, 0, spec).param_vector(spec, data.I, data.P)
    st = _initial_state(spec, data, init)
    plan = default_block_plan(spec, data.I, data.P, re)
    p_ptr, p_obs = _csr(data.pp - 1, data.P)
    i_ptr, i_obs = _csr(data.ii - 1, data.I)
    rng = np.random.default_rng(seed)
    nb, nc = len(plan), data.P + data.I + 3
    gam = rng.gamma(3.0, size=(n_iter, 2))
    return [n_iter, st.theta, st.delta, st.hyp, st.obs_lin, st.obs_d,
            np.ascontiguousarray(data.ii - 1), np.ascontiguousarray(data.pp - 1),
            data.y.astype(float), p_ptr, p_obs, i_ptr, i_obs,
            int(spec.hierarchical), 0 if spec.on_variance else 1,
            GIBBS_IGAMMA in plan.kinds, not re, spec.constants(), plan.log_scales,
            rng.normal(size=(n_iter, nc)), np.log(rng.random((n_iter, nb))), gam,
            np.zeros(nb, dtype=np.int64), np.zeros(nb, dtype=np.int64),
            np.empty((n_iter, nc)), np.empty(n_iter)]


@pytest.mark.parametrize("spec", ALL_SPECS)
@pytest.mark.parametrize("re", [True, False])
def test_loop_and_vectorised_sweeps_agree(spec, re, small_data):
    data, _ = small_data
    a = _window_setup(spec, data, re)
    b = _window_setup(spec, data, re)
    kernels.mh_window_loop(*a)
    kernels.mh_window_vec(*b)
    np.testing.assert_array_equal(a[-4], b[-4])  # accepted
    np.testing.assert_allclose(a[-2], b[-2], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(a[-1], b[-1], rtol=1e-10)


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_sweep_completeness_and_lp(spec, small_data):
    data, _ = small_data
    init = draw_inits(2, 0, spec).param_vector(spec, data.I, data.P)
    chain = sample_mh(spec, data, init, MhConfig(120, 80, seed=3))
    st = chain.sampler_stats
    assert np.all(st["proposed"] == 200)
    assert np.all(st["accepted"] <= st["proposed"])
    assert chain.draws.shape[0] == 80
    assert chain.timing.simulation_seconds <= chain.timing.total_seconds
    names = chain.param_names
    d0, t0 = names.index("delta.1"), names.index("theta.1")
    key = "sq" if spec.on_variance else ""
    for k in (0, 79):
        row = chain.draws[k]
        params = {"delta": row[d0:t0], "theta": row[t0:],
                  ("sigma_sq" if key else "sigma"): row[names.index("sigma_sq" if key else "sigma")]}
        if spec.hierarchical:
            params["mu"] = row[names.index("mu")]
            params["tau_sq" if key else "tau"] = row[names.index("tau_sq" if key else "tau")]
        u = unconstrain(spec, params).values
        assert chain.lp[k] == pytest.approx(log_posterior(spec, data, u), rel=1e-9)


def test_sample_mh_deterministic(small_data):
    data, _ = small_data
    spec = ModelSpec()
    init = draw_inits(0, 0, spec).param_vector(spec, data.I, data.P)
    a = sample_mh(spec, data, init, MhConfig(60, 40, seed=5))
    b = sample_mh(spec, data, init, MhConfig(60, 40, seed=5))
    c = sample_mh(spec, data, init, MhConfig(60, 40, seed=5), chain_id=1)
    np.testing.assert_array_equal(a.draws, b.draws)
    assert not np.array_equal(a.draws, c.draws)


def test_scalar_blocks_adapt_on_rasch(data_100):
    data, _ = data_100
    spec = ModelSpec()
    init = draw_inits(0, 0, spec).param_vector(spec, data.I, data.P)
    chain = sample_mh(spec, data, init, MhConfig(1500, 1000, seed=1))
    rates = chain.sampler_stats["accept_rate"][:-1]
    assert abs(rates.mean() - 0.44) < 0.05
    assert np.all(np.abs(rates - 0.44) < 0.15)


def _normal_density(v):
    return -0.5 * v[0] ** 2


def test_tiny_scale_accepts_almost_everything():
    rng = np.random.default_rng(20)
    x, acc = np.array([0.3]), 0
    for _ in range(1000):
        x, a, _ = rw_update([0], x, 1e-8, _normal_density, rng)
        acc += a
    assert acc >= 990


def test_classic_scale_acceptance_band():
    rng = np.random.default_rng(21)
    x, acc, lp = np.zeros(1), 0, None
    for _ in range(20000):
        x, a, lp = rw_update([0], x, 2.4, _normal_density, rng, lp)
        acc += a
    assert 0.35 <= acc / 20000 <= 0.55


def test_gibbs_with_no_deviations_draws_from_the_prior():
    rng = np.random.default_rng(22)
    draws = np.array([gibbs_variance_update(np.empty(0), 1.0, 1.0, rng) for _ in range(1_000_000)])
    assert np.mean(1.0 / draws) == pytest.approx(1.0, rel=0.005)


def test_gibbs_posterior_mode():
    rng = np.random.default_rng(23)
    draws = np.array([gibbs_variance_update(np.zeros(100), 1.0, 1.0, rng) for _ in range(1_000_000)])
    density, edges = np.histogram(draws, bins=400, range=(0.005, 0.045), density=True)
    smooth = np.convolve(density, np.ones(9) / 9, mode="same")
    centers = 0.5 * (edges[1:] + edges[:-1])
    assert centers[np.argmax(smooth)] == pytest.approx(1 / 52, rel=0.05)
