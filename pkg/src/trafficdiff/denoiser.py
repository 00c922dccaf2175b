"""Denoiser contract plus the closed-form Gaussian-mixture oracle.

A denoiser maps (z, t, ctx) -> v_hat. Every call bumps a thread-safe
evaluation counter so samplers can report their exact evaluation budget.

The oracle assumes the clean scene is drawn from a finite Gaussian mixture
with diagonal covariances. Under z = alpha x + sigma eps the per-component
marginal stays Gaussian, so the posterior mean E[x | z] is a responsibility-
weighted blend of per-component affine estimates. Entries pinned by the
context's inpainting spec are treated as exact observations of x.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .diffusion import SIGMA_FLOOR, schedule, _per_step
from .scene_tensor import InpaintingSpec

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class DenoiserContext:
    """Side information available to the denoiser."""

    inpainting: Optional[InpaintingSpec] = None
    validity: Optional[np.ndarray] = None  # [A,T] bool
    roadgraph: object = None


class Denoiser:
    """Base class: subclasses implement _predict_v; calls are counted."""

    def __init__(self):
        self._nfe = 0
        self._lock = threading.Lock()

    @property
    def nfe(self) -> int:
        return self._nfe

    def predict_v(self, z, t, ctx: DenoiserContext):
        with self._lock:
            self._nfe += 1
        return self._predict_v(np.asarray(z, dtype=np.float64), t, ctx)

    def _predict_v(self, z, t, ctx):
        raise NotImplementedError


class StubDenoiser(Denoiser):
    """Predicts v = 0 everywhere; useful for plumbing and budget tests."""

    def _predict_v(self, z, t, ctx):
        return np.zeros_like(z)


@dataclass(frozen=True)
class MixtureScenePrior:
    """Finite Gaussian mixture over scene tensors, diagonal covariances."""

    weights: np.ndarray  # [K]
    means: np.ndarray  # [K,A,T,D]
    variances: np.ndarray  # [K,A,T,D], strictly positive

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        assert w.ndim == 1 and m.ndim == 4 and m.shape == v.shape
        assert m.shape[0] == w.shape[0]
        assert np.all(v > 0.0)
        assert abs(w.sum() - 1.0) < 1e-9, "weights must sum to 1"
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def num_components(self) -> int:
        return self.weights.shape[0]

    @property
    def scene_shape(self):
        return self.means.shape[1:]

    def sample(self, rng, size: Optional[int] = None):
        """Draw scenes; returns [A,T,D] or [n,A,T,D]."""
        n = 1 if size is None else int(size)
        comp = rng.choice(self.num_components, size=n, p=self.weights)
        eps = rng.standard_normal((n,) + self.scene_shape)
        out = self.means[comp] + np.sqrt(self.variances[comp]) * eps
        return out[0] if size is None else out

    def component_of(self, scenes):
        """Most responsible component index for clean scenes [n,A,T,D]."""
        x = np.asarray(scenes, dtype=np.float64)[:, None]  # [n,1,A,T,D]
        log_w = np.log(self.weights)
        ll = -0.5 * (
            (x - self.means) ** 2 / self.variances
            + np.log(self.variances)
            + _LOG_2PI
        ).sum(axis=(2, 3, 4))
        return (log_w + ll).argmax(axis=1)


def mixture_posterior(prior: MixtureScenePrior, z, t, inpainting=None, validity=None):
    """Posterior responsibilities and mean E[x | z_t, observed entries].

    z : [A,T,D] noised scene at level t (scalar or per-timestep vector)
    inpainting : entries where x itself is observed exactly
    validity : [A,T] bool; invalid entries contribute no evidence

    Returns (responsibilities [K], xhat [A,T,D]).
    """
    z = np.asarray(z, dtype=np.float64)
    alpha, sigma = schedule(_per_step(t))
    alpha = np.broadcast_to(alpha, z.shape)
    sigma = np.broadcast_to(sigma, z.shape)

    mu = prior.means  # [K,...]
    var = prior.variances
    marg_var = alpha**2 * var + sigma**2  # [K,...]

    # log evidence per entry: observed x for inpainted entries, else z
    ll_z = -0.5 * ((z - alpha * mu) ** 2 / marg_var + np.log(marg_var) + _LOG_2PI)
    if inpainting is not None and inpainting.mask.any():
        xb = inpainting.values
        ll_x = -0.5 * ((xb - mu) ** 2 / var + np.log(var) + _LOG_2PI)
        ll = np.where(inpainting.mask, ll_x, ll_z)
    else:
        ll = ll_z
    if validity is not None:
        ll = np.where(np.asarray(validity, dtype=bool)[None, :, :, None], ll, 0.0)

    with np.errstate(divide="ignore"):  # zero-weight components are legal
        log_w = np.log(prior.weights)
    log_r = log_w + ll.sum(axis=(1, 2, 3))  # [K]
    log_r = log_r - logsumexp(log_r)
    resp = np.exp(log_r)

    gain = alpha * var / marg_var  # [K,...]
    xhat_k = mu + gain * (z - alpha * mu)
    xhat = np.tensordot(resp, xhat_k, axes=(0, 0))
    if inpainting is not None and inpainting.mask.any():
        # impose pins after blending so observed entries come back bitwise
        xhat = np.where(inpainting.mask, inpainting.values, xhat)
    return resp, xhat


class OracleDenoiser(Denoiser):
    """Exact posterior-mean denoiser for a MixtureScenePrior."""

    def __init__(self, prior: MixtureScenePrior):
        super().__init__()
        self.prior = prior

    def _predict_v(self, z, t, ctx: DenoiserContext):
        inp = ctx.inpainting if ctx is not None else None
        val = ctx.validity if ctx is not None else None
        _, xhat = mixture_posterior(self.prior, z, t, inp, val)
        alpha, sigma = schedule(_per_step(t))
        return (alpha * z - xhat) / np.maximum(sigma, SIGMA_FLOOR)
