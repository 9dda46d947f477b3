"""Monte Carlo posterior-mean estimates for Gaussian mixtures."""

from __future__ import annotations

import numpy as np


def random_mixture(rng: np.random.Generator, d: int = 2, max_k: int = 5):
    k = int(rng.integers(1, max_k + 1))
    # kept off the origin so that a relative error is meaningful
    means = rng.uniform(0.5, 2.5, (k, d))
    sigma = float(rng.uniform(0.3, 1.0))
    logw = np.log(rng.dirichlet(np.ones(k)))
    return means, sigma, logw


def _log_mixture_density(x, means, sigma, logw):
    d = means.shape[1]
    r2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    logc = logw[None, :] - 0.5 * r2 / sigma**2 - d * np.log(sigma)
    m = logc.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(logc - m).sum(axis=1, keepdims=True)))[:, 0]


def mc_posterior_mean(means, sigma, logw, z, alpha_bar, rng, n=100_000):
    """E[g0 | z_t] by self-normalised importance sampling.

    The proposal is an even mix of the prior and the forward likelihood read
    as a density in g0, N(z / sqrt(abar), (1 - abar) / abar I); either one
    alone degenerates when the other is much narrower. Only densities are
    evaluated. Returns the estimate and the effective sample size.
    """
    k, d = means.shape
    centre = z / np.sqrt(alpha_bar)
    scale = np.sqrt((1.0 - alpha_bar) / alpha_bar)
    half = n // 2
    comp = rng.choice(k, size=half, p=np.exp(logw) / np.exp(logw).sum())
    from_prior = means[comp] + sigma * rng.standard_normal((half, d))
    from_lik = centre + scale * rng.standard_normal((n - half, d))
    g0 = np.vstack([from_prior, from_lik])
    log_prior = _log_mixture_density(g0, means, sigma, logw)
    log_lik = -0.5 * ((g0 - centre) ** 2).sum(axis=1) / scale**2 - d * np.log(scale)
    log_q = np.logaddexp(log_prior, log_lik)
    logw_is = log_prior + log_lik - log_q
    w = np.exp(logw_is - logw_is.max())
    return (w[:, None] * g0).sum(axis=0) / w.sum(), w.sum() ** 2 / (w**2).sum()
