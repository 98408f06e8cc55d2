"""Hot numeric kernels.

Each kernel has a loop form compiled by numba (``*_loop``) and a vectorised
numpy form (``*_vec``).  The public names ``logp_grad`` and ``mh_window`` are
bound according to :mod:`raschmc._accel`.  Both forms take identical arguments
and consume identical pre-drawn random numbers, so they agree to rounding.

``args`` for the model density is the tuple built by
:meth:`raschmc.model.ModelSpec.kernel_args`::

    (ii0, pp0, y, I, P, hierarchical, regime, consts)

with zero-based indices, ``regime`` 0 for inverse-gamma-on-variance and 1 for
flat-on-SD, and ``consts = [delta_var, igamma_shape, igamma_rate, mu_var]``.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

LOG_2PI = math.log(2.0 * math.pi)


@njit
def _scale_from_log(s, regime):
    # returns (sd, d sd / d s)
    if regime == 0:
        sd = math.exp(0.5 * s)
        return sd, 0.5 * sd
    sd = math.exp(s)
    return sd, sd


@njit
def _scale_prior(s, regime, a, b):
    # log prior of the scale parameter plus log-Jacobian, and its derivative in s
    if regime == 0:
        eb = b * math.exp(-s)
        return a * math.log(b) - math.lgamma(a) - a * s - eb, -a + eb
    return s, 1.0


@njit
def _unpack(u, I, P, hier, regime, c):
    sd, dsd = _scale_from_log(u[0], regime)
    du = u[1:1 + I]
    tu = u[1 + I:1 + I + P]
    if hier == 1:
        tau, dtau = _scale_from_log(u[1 + I + P], regime)
        mu = u[2 + I + P]
    else:
        tau = math.sqrt(c[0])
        dtau = 0.0
        mu = 0.0
    theta = sd * tu
    delta = mu + tau * du
    return theta, delta, sd, dsd, tau, dtau


@njit
def _prior_and_chain_rule(u, I, P, hier, regime, c, g_theta, g_delta, sd, dsd, tau, dtau):
    """Add priors, Jacobians and the chain rule through the non-centred map."""
    a = c[1]
    b = c[2]
    du = u[1:1 + I]
    tu = u[1 + I:1 + I + P]
    grad = np.empty_like(u)
    lp = -0.5 * (np.dot(du, du) + np.dot(tu, tu)) - 0.5 * (I + P) * LOG_2PI
    sp, dsp = _scale_prior(u[0], regime, a, b)
    lp += sp
    grad[0] = dsp + dsd * np.dot(g_theta, tu)
    grad[1:1 + I] = tau * g_delta - du
    grad[1 + I:1 + I + P] = sd * g_theta - tu
    if hier == 1:
        v = c[3]
        mu = u[2 + I + P]
        tp, dtp = _scale_prior(u[1 + I + P], regime, a, b)
        lp += tp - 0.5 * mu * mu / v - 0.5 * math.log(2.0 * math.pi * v)
        grad[1 + I + P] = dtp + dtau * np.dot(g_delta, du)
        grad[2 + I + P] = np.sum(g_delta) - mu / v
    return lp, grad


@njit
def _bern_terms(yn, eta):
    # log-likelihood of one response is lin - log(d), with d in (1, 2]
    e = math.exp(-abs(eta))
    pos = eta > 0.0
    lin = yn * eta - (eta if pos else 0.0)
    return lin, 1.0 + e, e, pos


@njit
def logp_grad_loop(u, args):
    """Log posterior and gradient, one fused pass over the observations.

    The softplus terms are accumulated as running products of factors in
    (1, 2], flushed through a single log every 32 observations.
    """
    ii, pp, y, I, P, hier, regime, c = args
    theta, delta, sd, dsd, tau, dtau = _unpack(u, I, P, hier, regime, c)
    g_theta = np.zeros(P)
    g_delta = np.zeros(I)
    lin_sum = 0.0
    log_sum = 0.0
    prod = 1.0
    for n in range(y.shape[0]):
        p = pp[n]
        i = ii[n]
        lin, d, e, pos = _bern_terms(y[n], theta[p] - delta[i])
        lin_sum += lin
        prod *= d
        if (n & 31) == 31:
            log_sum += math.log(prod)
            prod = 1.0
        r = y[n] - (1.0 if pos else e) / d
        g_theta[p] += r
        g_delta[i] -= r
    ll = lin_sum - log_sum - math.log(prod)
    lp, grad = _prior_and_chain_rule(u, I, P, hier, regime, c, g_theta, g_delta, sd, dsd, tau, dtau)
    return ll + lp, grad


def logp_grad_vec(u, args):
    """Vectorised numpy form of :func:`logp_grad_loop`."""
    ii, pp, y, I, P, hier, regime, c = args
    theta, delta, sd, dsd, tau, dtau = _unpack(u, I, P, hier, regime, c)
    eta = theta[pp] - delta[ii]
    e = np.exp(-np.abs(eta))
    ll = np.sum(y * eta - np.maximum(eta, 0.0) - np.log1p(e))
    r = y - np.where(eta > 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    g_theta = np.bincount(pp, weights=r, minlength=P)
    g_delta = -np.bincount(ii, weights=r, minlength=I)
    lp, grad = _prior_and_chain_rule(u, I, P, hier, regime, c, g_theta, g_delta, sd, dsd, tau, dtau)
    return ll + lp, grad


# ---------------------------------------------------------------------------
# Metropolis-within-Gibbs sweep on the centred parameterisation.
#
# state: theta[P], delta[I], hyp = [log sigma scale, log tau scale, mu], and a
#        per-observation cache of the current log-likelihood split as
#        obs_lin[n] - log(obs_d[n]).
# Block numbering: with random effects, theta_p -> p, delta_i -> P + i and the
# hyperparameters follow at P + I; without, theta -> 0, delta -> 1, hyper at 2.
# z[t] holds one standard normal per coordinate (theta, delta, 3 hyper slots),
# log_u[t] one log-uniform per block, gam[t] standard gamma draws with shapes
# a + P/2 and a + I/2 for the conjugate variance updates.
# ---------------------------------------------------------------------------

@njit
def _scale_target(s, ss, K, regime, a, b):
    # log p(devs | scale) + log prior(scale) + Jacobian, as a function of the log scale
    if regime == 0:
        return -(0.5 * K + a) * s - (b + 0.5 * ss) * math.exp(-s)
    return (1.0 - K) * s - 0.5 * ss * math.exp(-2.0 * s)


@njit
def _hyper_updates(t, theta, delta, hyp, I, P, hier, regime, gibbs, c, log_scales,
                   z, log_u, gam, hb, accepted):
    a = c[1]
    b = c[2]
    zh = P + I
    ss = np.dot(theta, theta)
    if gibbs:
        hyp[0] = math.log((b + 0.5 * ss) / gam[t, 0])
        accepted[hb] += 1
    else:
        cur = hyp[0]
        prop = cur + math.exp(log_scales[hb]) * z[t, zh]
        la = _scale_target(prop, ss, P, regime, a, b) - _scale_target(cur, ss, P, regime, a, b)
        if log_u[t, hb] < la:
            hyp[0] = prop
            accepted[hb] += 1
    if hier == 1:
        dev = delta - hyp[2]
        ss = np.dot(dev, dev)
        if gibbs:
            hyp[1] = math.log((b + 0.5 * ss) / gam[t, 1])
            accepted[hb + 1] += 1
        else:
            cur = hyp[1]
            prop = cur + math.exp(log_scales[hb + 1]) * z[t, zh + 1]
            la = _scale_target(prop, ss, I, regime, a, b) - _scale_target(cur, ss, I, regime, a, b)
            if log_u[t, hb + 1] < la:
                hyp[1] = prop
                accepted[hb + 1] += 1
        tau_sq = math.exp(hyp[1]) if regime == 0 else math.exp(2.0 * hyp[1])
        v = c[3]
        cur = hyp[2]
        prop = cur + math.exp(log_scales[hb + 2]) * z[t, zh + 2]
        sd_cur = np.sum((delta - cur) ** 2)
        sd_prop = np.sum((delta - prop) ** 2)
        la = -0.5 * (prop * prop - cur * cur) / v - 0.5 * (sd_prop - sd_cur) / tau_sq
        if log_u[t, hb + 2] < la:
            hyp[2] = prop
            accepted[hb + 2] += 1


@njit
def _delta_prior(hyp, hier, regime, c):
    # (mean, variance) of the item difficulty prior
    if hier == 1:
        tau_sq = math.exp(hyp[1]) if regime == 0 else math.exp(2.0 * hyp[1])
        return hyp[2], tau_sq
    return 0.0, c[0]


@njit
def _sigma_sq(hyp, regime):
    return math.exp(hyp[0]) if regime == 0 else math.exp(2.0 * hyp[0])


@njit
def _cached_ll(obs_lin, obs_d, idx, lo, hi):
    # log-likelihood of observations idx[lo:hi] from the cache
    lin = 0.0
    logs = 0.0
    prod = 1.0
    for k in range(lo, hi):
        n = idx[k]
        lin += obs_lin[n]
        prod *= obs_d[n]
        if ((k - lo) & 31) == 31:
            logs += math.log(prod)
            prod = 1.0
    return lin - logs - math.log(prod)


@njit
def _person_prop_ll(prop_p, delta, ii, y, idx, lo, hi, tmp_lin, tmp_d):
    lin = 0.0
    logs = 0.0
    prod = 1.0
    for k in range(lo, hi):
        n = idx[k]
        l, d, e, pos = _bern_terms(y[n], prop_p - delta[ii[n]])
        tmp_lin[n] = l
        tmp_d[n] = d
        lin += l
        prod *= d
        if ((k - lo) & 31) == 31:
            logs += math.log(prod)
            prod = 1.0
    return lin - logs - math.log(prod)


@njit
def _item_prop_ll(prop_i, theta, pp, y, idx, lo, hi, tmp_lin, tmp_d):
    lin = 0.0
    logs = 0.0
    prod = 1.0
    for k in range(lo, hi):
        n = idx[k]
        l, d, e, pos = _bern_terms(y[n], theta[pp[n]] - prop_i)
        tmp_lin[n] = l
        tmp_d[n] = d
        lin += l
        prod *= d
        if ((k - lo) & 31) == 31:
            logs += math.log(prod)
            prod = 1.0
    return lin - logs - math.log(prod)


@njit
def _joint_prop_ll(theta, delta, ii, pp, y, tmp_lin, tmp_d):
    lin = 0.0
    logs = 0.0
    prod = 1.0
    for n in range(y.shape[0]):
        l, d, e, pos = _bern_terms(y[n], theta[pp[n]] - delta[ii[n]])
        tmp_lin[n] = l
        tmp_d[n] = d
        lin += l
        prod *= d
        if (n & 31) == 31:
            logs += math.log(prod)
            prod = 1.0
    return lin - logs - math.log(prod)


@njit
def mh_window_loop(n_iter, theta, delta, hyp, obs_lin, obs_d, ii, pp, y, p_ptr, p_obs,
                   i_ptr, i_obs, hier, regime, gibbs, joint, c, log_scales, z, log_u, gam,
                   accepted, proposed, out, out_ll):
    """Run ``n_iter`` full sweeps in place; record state rows in ``out``."""
    I = delta.shape[0]
    P = theta.shape[0]
    N = y.shape[0]
    n_hyper = 3 if hier == 1 else 1
    hb = 2 if joint else P + I
    all_obs = np.arange(N)
    tmp_lin = np.empty(N)
    tmp_d = np.empty(N)
    for t in range(n_iter):
        sigma_sq = _sigma_sq(hyp, regime)
        # persons
        if joint:
            prop = theta + math.exp(log_scales[0]) * z[t, :P]
            la = -0.5 * (np.dot(prop, prop) - np.dot(theta, theta)) / sigma_sq
            la += (_joint_prop_ll(prop, delta, ii, pp, y, tmp_lin, tmp_d)
                   - _cached_ll(obs_lin, obs_d, all_obs, 0, N))
            proposed[0] += 1
            if log_u[t, 0] < la:
                theta[:] = prop
                obs_lin[:] = tmp_lin
                obs_d[:] = tmp_d
                accepted[0] += 1
        else:
            for p in range(P):
                lo = p_ptr[p]
                hi = p_ptr[p + 1]
                cur = theta[p]
                prop_p = cur + math.exp(log_scales[p]) * z[t, p]
                la = -0.5 * (prop_p * prop_p - cur * cur) / sigma_sq
                la += (_person_prop_ll(prop_p, delta, ii, y, p_obs, lo, hi, tmp_lin, tmp_d)
                       - _cached_ll(obs_lin, obs_d, p_obs, lo, hi))
                proposed[p] += 1
                if log_u[t, p] < la:
                    theta[p] = prop_p
                    for k in range(lo, hi):
                        n = p_obs[k]
                        obs_lin[n] = tmp_lin[n]
                        obs_d[n] = tmp_d[n]
                    accepted[p] += 1
        # items
        m, v = _delta_prior(hyp, hier, regime, c)
        if joint:
            prop = delta + math.exp(log_scales[1]) * z[t, P:P + I]
            la = -0.5 * (np.sum((prop - m) ** 2) - np.sum((delta - m) ** 2)) / v
            la += (_joint_prop_ll(theta, prop, ii, pp, y, tmp_lin, tmp_d)
                   - _cached_ll(obs_lin, obs_d, all_obs, 0, N))
            proposed[1] += 1
            if log_u[t, 1] < la:
                delta[:] = prop
                obs_lin[:] = tmp_lin
                obs_d[:] = tmp_d
                accepted[1] += 1
        else:
            for i in range(I):
                lo = i_ptr[i]
                hi = i_ptr[i + 1]
                cur = delta[i]
                prop_i = cur + math.exp(log_scales[P + i]) * z[t, P + i]
                la = -0.5 * ((prop_i - m) ** 2 - (cur - m) ** 2) / v
                la += (_item_prop_ll(prop_i, theta, pp, y, i_obs, lo, hi, tmp_lin, tmp_d)
                       - _cached_ll(obs_lin, obs_d, i_obs, lo, hi))
                proposed[P + i] += 1
                if log_u[t, P + i] < la:
                    delta[i] = prop_i
                    for k in range(lo, hi):
                        n = i_obs[k]
                        obs_lin[n] = tmp_lin[n]
                        obs_d[n] = tmp_d[n]
                    accepted[P + i] += 1
        for k in range(n_hyper):
            proposed[hb + k] += 1
        _hyper_updates(t, theta, delta, hyp, I, P, hier, regime, gibbs, c, log_scales,
                       z, log_u, gam, hb, accepted)
        out[t, :P] = theta
        out[t, P:P + I] = delta
        out[t, P + I:] = hyp
        out_ll[t] = _cached_ll(obs_lin, obs_d, all_obs, 0, N)


def _bern_terms_vec(y, eta):
    return y * eta - np.maximum(eta, 0.0), 1.0 + np.exp(-np.abs(eta))


def mh_window_vec(n_iter, theta, delta, hyp, obs_lin, obs_d, ii, pp, y, p_ptr, p_obs,
                  i_ptr, i_obs, hier, regime, gibbs, joint, c, log_scales, z, log_u, gam,
                  accepted, proposed, out, out_ll):
    """Vectorised numpy form of :func:`mh_window_loop`.

    Scalar updates within the person (or item) pass are conditionally
    independent given the other pass, so updating them simultaneously is the
    same transition as updating them one at a time.
    """
    I = delta.shape[0]
    P = theta.shape[0]
    n_hyper = 3 if hier == 1 else 1
    hb = 2 if joint else P + I
    for t in range(n_iter):
        sigma_sq = _sigma_sq(hyp, regime)
        cur_ll = obs_lin - np.log(obs_d)
        if joint:
            prop = theta + np.exp(log_scales[0]) * z[t, :P]
            lin, d = _bern_terms_vec(y, prop[pp] - delta[ii])
            la = (-0.5 * (prop @ prop - theta @ theta) / sigma_sq
                  + np.sum(lin - np.log(d)) - np.sum(cur_ll))
            proposed[0] += 1
            if log_u[t, 0] < la:
                theta[:] = prop
                obs_lin[:] = lin
                obs_d[:] = d
                accepted[0] += 1
        else:
            prop = theta + np.exp(log_scales[:P]) * z[t, :P]
            lin, d = _bern_terms_vec(y, prop[pp] - delta[ii])
            la = (-0.5 * (prop * prop - theta * theta) / sigma_sq
                  + np.bincount(pp, weights=lin - np.log(d) - cur_ll, minlength=P))
            acc = log_u[t, :P] < la
            proposed[:P] += 1
            accepted[:P] += acc
            theta[acc] = prop[acc]
            take = acc[pp]
            obs_lin[:] = np.where(take, lin, obs_lin)
            obs_d[:] = np.where(take, d, obs_d)
        cur_ll = obs_lin - np.log(obs_d)
        m, v = _delta_prior(hyp, hier, regime, c)
        if joint:
            prop = delta + np.exp(log_scales[1]) * z[t, P:P + I]
            lin, d = _bern_terms_vec(y, theta[pp] - prop[ii])
            la = (-0.5 * (np.sum((prop - m) ** 2) - np.sum((delta - m) ** 2)) / v
                  + np.sum(lin - np.log(d)) - np.sum(cur_ll))
            proposed[1] += 1
            if log_u[t, 1] < la:
                delta[:] = prop
                obs_lin[:] = lin
                obs_d[:] = d
                accepted[1] += 1
        else:
            prop = delta + np.exp(log_scales[P:P + I]) * z[t, P:P + I]
            lin, d = _bern_terms_vec(y, theta[pp] - prop[ii])
            la = (-0.5 * ((prop - m) ** 2 - (delta - m) ** 2) / v
                  + np.bincount(ii, weights=lin - np.log(d) - cur_ll, minlength=I))
            acc = log_u[t, P:P + I] < la
            proposed[P:P + I] += 1
            accepted[P:P + I] += acc
            delta[acc] = prop[acc]
            take = acc[ii]
            obs_lin[:] = np.where(take, lin, obs_lin)
            obs_d[:] = np.where(take, d, obs_d)
        proposed[hb:hb + n_hyper] += 1
        _hyper_updates(t, theta, delta, hyp, I, P, hier, regime, gibbs, c, log_scales,
                       z, log_u, gam, hb, accepted)
        out[t, :P] = theta
        out[t, P:P + I] = delta
        out[t, P + I:] = hyp
        out_ll[t] = np.sum(obs_lin - np.log(obs_d))


if USE_NUMBA:
    logp_grad = logp_grad_loop
    mh_window = mh_window_loop
else:
    logp_grad = logp_grad_vec
    mh_window = mh_window_vec
