"""Shared test helpers: independent estimators the library must agree with."""
import numpy as np

from trafficdiff.diffusion import schedule


def is_posterior_mean(prior, z, t, n_samples, rng, chunk=100_000):
    """Self-normalized importance-sampling estimate of E[x | z_t].

    Draws x from the prior and weights by the forward likelihood
    N(z; alpha x, sigma^2 I) over all entries. Returns (estimate, se), both
    shaped like z. Completely independent of the closed-form posterior.
    """
    z = np.asarray(z, dtype=np.float64)
    alpha, sigma = schedule(np.asarray(float(t)))
    alpha, sigma = float(alpha), float(sigma)
    K = prior.weights.shape[0]

    sum_w = 0.0
    sum_wx = np.zeros_like(z)
    sum_wx2 = np.zeros_like(z)
    sum_w2 = 0.0
    # streaming weights need a common shift; anchor on the first chunk's max
    shift = None
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        comps = rng.choice(K, size=m, p=prior.weights)
        x = prior.means[comps] + np.sqrt(prior.variances[comps]) * rng.standard_normal(
            (m,) + z.shape
        )
        resid = z[None] - alpha * x
        ll = -0.5 * (resid**2).sum(axis=tuple(range(1, resid.ndim))) / sigma**2
        if shift is None:
            shift = ll.max()
        w = np.exp(ll - shift)
        wcol = w.reshape((m,) + (1,) * z.ndim)
        sum_w += w.sum()
        sum_w2 += (w**2).sum()
        sum_wx += (wcol * x).sum(axis=0)
        sum_wx2 += (wcol * x**2).sum(axis=0)
        done += m
    est = sum_wx / sum_w
    # self-normalized IS variance estimate per entry
    var_x = sum_wx2 / sum_w - est**2
    ess = sum_w**2 / sum_w2
    se = np.sqrt(np.maximum(var_x, 0.0) / max(ess, 1.0))
    return est, se, ess
