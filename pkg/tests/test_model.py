import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.special import expit

from raschmc import kernels
from raschmc.model import (HIERARCHICAL, IGAMMA, RASCH, UNIFORM_SD, ItemResponseData, ModelSpec,
                           ParamVector, constrain, constrain_matrix, grad_log_posterior,
                           log_likelihood, log_posterior, log_prior_rows, read_truth_csv,
                           simulate_data, unconstrain, write_truth_csv)

from .conftest import ALL_SPECS, random_point


def oracle_log_posterior(spec, data, u):
    """Direct transcription of the model with scipy densities."""
    I, P = data.I, data.P
    s = u[0]
    du = u[1:1 + I]
    tu = u[1 + I:1 + I + P]
    lp = stats.norm.logpdf(du).sum() + stats.norm.logpdf(tu).sum()

    def scale_part(x):
        if spec.on_variance:
            var = math.exp(x)
            return math.sqrt(var), stats.invgamma.logpdf(var, spec.igamma_shape,
                                                         scale=spec.igamma_rate) + x
        return math.exp(x), x

    sigma, part = scale_part(s)
    lp += part
    if spec.hierarchical:
        tau, part = scale_part(u[1 + I + P])
        mu = u[2 + I + P]
        lp += part + stats.norm.logpdf(mu, 0.0, math.sqrt(spec.mu_prior_variance))
        delta = mu + tau * du
    else:
        delta = math.sqrt(spec.delta_prior_variance) * du
    theta = sigma * tu
    prob = expit(theta[data.pp - 1] - delta[data.ii - 1])
    return lp + stats.bernoulli.logpmf(data.y, prob).sum()


def central_diff(f, x, h=1e-5):
    g = np.empty_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# data container

def test_data_validation():
    ok = dict(ii=[1, 2], pp=[1, 1], y=[0, 1], I=2, P=1)
    ItemResponseData(**ok)
    with pytest.raises(ValueError):
        ItemResponseData(**{**ok, "y": [0, 2]})
    with pytest.raises(ValueError):
        ItemResponseData(**{**ok, "ii": [0, 2]})
    with pytest.raises(ValueError):
        ItemResponseData(**{**ok, "pp": [1, 2]})
    with pytest.raises(ValueError):
        ItemResponseData(**{**ok, "y": [0]})


def test_data_csv_roundtrip(tmp_path, small_data):
    data, _ = small_data
    path = tmp_path / "d.csv"
    data.to_csv(path)
    back = ItemResponseData.from_csv(path)
    assert back.I == data.I and back.P == data.P
    np.testing.assert_array_equal(back.ii, data.ii)
    np.testing.assert_array_equal(back.pp, data.pp)
    np.testing.assert_array_equal(back.y, data.y)


def test_simulator_shape_and_truth():
    data, truth = simulate_data(20, 50, sigma_true=1.0, seed=4)
    assert data.N == 20 * 50
    pairs = set(zip(data.ii.tolist(), data.pp.tolist()))
    assert len(pairs) == 1000
    np.testing.assert_allclose(truth["delta"], np.linspace(-1.5, 1.5, 20))
    np.testing.assert_allclose(np.diff(truth["delta"]), 3.0 / 19)
    assert truth["sigma"] == 1.0


def test_simulator_deterministic():
    a, _ = simulate_data(5, 7, seed=9)
    b, _ = simulate_data(5, 7, seed=9)
    np.testing.assert_array_equal(a.y, b.y)


def test_simulator_rates_follow_model():
    data, truth = simulate_data(20, 4000, seed=1)
    # easy items are answered correctly more often
    rate = np.bincount(data.ii - 1, weights=data.y) / 4000
    assert rate[0] > rate[-1] + 0.3
    assert stats.spearmanr(rate, -truth["delta"]).statistic > 0.95


def test_truth_csv_roundtrip(tmp_path):
    _, truth = simulate_data(3, 4, seed=0)
    write_truth_csv(tmp_path / "t.csv", truth)
    back = read_truth_csv(tmp_path / "t.csv")
    assert back["sigma"] == 1.0
    assert back["delta.3"] == truth["delta"][2]
    assert back["theta.4"] == truth["theta"][3]


# spec and layout

def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("probit")
    with pytest.raises(ValueError):
        ModelSpec(RASCH, "flat")
    with pytest.raises(ValueError):
        ModelSpec(RASCH, IGAMMA, mu_prior_variance=4.0)
    with pytest.raises(ValueError):
        ModelSpec(RASCH, IGAMMA, igamma_shape=0.0)
    assert ModelSpec(HIERARCHICAL).mu_prior_variance == 10.0


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_layout_and_names(spec):
    I, P = 3, 4
    layout = spec.layout(I, P)
    assert len(layout) == spec.dim(I, P) == 1 + I + P + (2 if spec.hierarchical else 0)
    names = spec.constrained_names(I, P)
    assert names[:2] == ["sigma", "sigma_sq"]
    assert names[-1] == "theta.4" and "delta.1" in names
    assert ("tau_sq" in names) == spec.hierarchical
    with pytest.raises(ValueError):
        ParamVector(layout, np.zeros(len(layout) + 1))


# density

@pytest.mark.parametrize("spec", ALL_SPECS)
def test_log_posterior_matches_scipy_oracle(spec, small_data):
    data, _ = small_data
    rng = np.random.default_rng(5)
    for _ in range(5):
        u = random_point(spec, data.I, data.P, rng)
        assert log_posterior(spec, data, u) == pytest.approx(oracle_log_posterior(spec, data, u),
                                                             rel=1e-12, abs=1e-9)


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_gradient_matches_finite_differences(spec, small_data):
    data, _ = small_data
    rng = np.random.default_rng(6)
    for _ in range(5):
        u = random_point(spec, data.I, data.P, rng)
        g = grad_log_posterior(spec, data, u)
        fd = central_diff(lambda x: log_posterior(spec, data, x), u)
        rel = np.abs(g - fd) / np.maximum(1.0, np.abs(fd))
        assert rel.max() < 1e-5


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_loop_and_vectorised_kernels_agree(spec, small_data):
    data, _ = small_data
    args = spec.kernel_args(data)
    u = random_point(spec, data.I, data.P, np.random.default_rng(7))
    lp1, g1 = kernels.logp_grad_loop(u, args)
    lp2, g2 = kernels.logp_grad_vec(u, args)
    assert lp1 == pytest.approx(lp2, rel=1e-12)
    np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-10)


def test_extreme_linear_predictor_is_finite():
    spec = ModelSpec()
    data = ItemResponseData(ii=[1, 1], pp=[1, 2], y=[0, 1], I=1, P=2)
    u = np.array([0.0, 0.0, 800.0, -800.0])
    lp = log_posterior(spec, data, u)
    g = grad_log_posterior(spec, data, u)
    assert np.isfinite(lp) and np.all(np.isfinite(g))
    assert lp < -1e5


def test_log_posterior_rejects_bad_input(small_data):
    data, _ = small_data
    spec = ModelSpec()
    with pytest.raises(ValueError):
        log_posterior(spec, data, np.zeros(3))
    u = np.zeros(spec.dim(data.I, data.P))
    u[2] = np.nan
    with pytest.raises(ValueError):
        log_posterior(spec, data, u)


def test_log_likelihood_oracle(small_data):
    data, truth = small_data
    ll = log_likelihood(data, truth["theta"], truth["delta"])
    prob = expit(truth["theta"][data.pp - 1] - truth["delta"][data.ii - 1])
    assert ll == pytest.approx(stats.bernoulli.logpmf(data.y, prob).sum(), rel=1e-12)


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_prior_rows_plus_likelihood_is_posterior(spec, small_data):
    data, _ = small_data
    rng = np.random.default_rng(8)
    U = np.vstack([random_point(spec, data.I, data.P, rng) for _ in range(4)])
    C = constrain_matrix(spec, U, data.I, data.P)
    names = spec.constrained_names(data.I, data.P)
    d0 = names.index("delta.1")
    t0 = names.index("theta.1")
    for row, crow, prior in zip(U, C, log_prior_rows(spec, U, data.I, data.P)):
        ll = log_likelihood(data, crow[t0:t0 + data.P], crow[d0:d0 + data.I])
        assert prior + ll == pytest.approx(log_posterior(spec, data, row), rel=1e-12)


# transforms

@pytest.mark.parametrize("spec", ALL_SPECS)
@given(seed=st.integers(0, 2**32 - 1))
def test_constrain_roundtrip(spec, seed):
    I, P = 4, 5
    u = ParamVector(spec.layout(I, P), np.random.default_rng(seed).normal(size=spec.dim(I, P)) * 2)
    back = unconstrain(spec, constrain(spec, u))
    np.testing.assert_allclose(back.values, u.values, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("spec", ALL_SPECS)
@given(seed=st.integers(0, 2**32 - 1))
def test_constrain_reports_both_scale_forms(spec, seed):
    I, P = 3, 2
    u = ParamVector(spec.layout(I, P), np.random.default_rng(seed).normal(size=spec.dim(I, P)))
    c = constrain(spec, u)
    assert c["sigma"] > 0
    assert c["sigma_sq"] == pytest.approx(c["sigma"] ** 2, rel=1e-12)
    if spec.hierarchical:
        assert c["tau_sq"] == pytest.approx(c["tau"] ** 2, rel=1e-12)
    row = constrain_matrix(spec, u.values[None, :], I, P)[0]
    names = spec.constrained_names(I, P)
    assert row[names.index("sigma")] == pytest.approx(c["sigma"])
    np.testing.assert_allclose(row[names.index("theta.1"):], c["theta"])


def test_noncentred_mapping_values():
    spec = ModelSpec(HIERARCHICAL, UNIFORM_SD)
    u = np.array([math.log(2.0), 1.0, -1.0, 0.5, math.log(3.0), 0.25])
    c = constrain(spec, ParamVector(spec.layout(2, 1), u))
    assert c["sigma"] == pytest.approx(2.0)
    assert c["tau"] == pytest.approx(3.0)
    np.testing.assert_allclose(c["delta"], [0.25 + 3.0, 0.25 - 3.0])
    np.testing.assert_allclose(c["theta"], [1.0])
    spec = ModelSpec(RASCH, IGAMMA)
    c = constrain(spec, ParamVector(spec.layout(1, 1), np.array([math.log(4.0), 1.0, 1.0])))
    assert c["sigma"] == pytest.approx(2.0)
    assert c["delta"][0] == pytest.approx(math.sqrt(10.0))
