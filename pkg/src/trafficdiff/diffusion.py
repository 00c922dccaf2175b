"""Variance-preserving diffusion on scene tensors.

Noise level t in [0, 1] maps to alpha = cos(pi t / 2), sigma = sin(pi t / 2),
so alpha^2 + sigma^2 = 1. The noised scene is z_t = alpha_t x + sigma_t eps.
The network target is v_t = alpha_t eps - sigma_t x, inverted by
x = alpha z - sigma v and eps = sigma z + alpha v.

t may be a scalar (shared level) or a per-timestep vector of length T that
broadcasts against [A, T, D] arrays.
"""
from __future__ import annotations

import numpy as np

SIGMA_FLOOR = 1e-6  # clamp for sigma in denominators


def schedule(t):
    """(alpha, sigma) for noise level t; shapes follow t."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("noise level outside [0, 1]")
    half_pi = 0.5 * np.pi
    return np.cos(half_pi * t), np.sin(half_pi * t)


def _per_step(t):
    # scalar stays scalar; a length-T vector reshapes to [1,T,1]
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return t
    assert t.ndim == 1
    return t[None, :, None]


def forward_noise(x, t, rng, eps=None):
    """Draw z_t = alpha_t x + sigma_t eps with eps ~ N(0, I)."""
    x = np.asarray(x, dtype=np.float64)
    if eps is None:
        eps = rng.standard_normal(x.shape)
    alpha, sigma = schedule(_per_step(t))
    return alpha * x + sigma * eps, eps


def v_target(x, eps, t):
    alpha, sigma = schedule(_per_step(t))
    return alpha * eps - sigma * np.asarray(x, dtype=np.float64)


def x_from_v(z, v, t):
    alpha, sigma = schedule(_per_step(t))
    return alpha * np.asarray(z) - sigma * np.asarray(v)


def eps_from_v(z, v, t):
    alpha, sigma = schedule(_per_step(t))
    return sigma * np.asarray(z) + alpha * np.asarray(v)


def transition(s, t):
    """Coefficients of the ancestral denoise step from level t down to s.

    Returns (coef_z, coef_x, var): the posterior q(z_s | z_t, x) has mean
    coef_z * z_t + coef_x * x and variance var (isotropic).
    """
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(s < 0.0) or np.any(t > 1.0) or np.any(s >= t):
        raise ValueError("require 0 <= s < t <= 1 elementwise")
    alpha_s, sigma_s = schedule(s)
    alpha_t, sigma_t = schedule(t)
    alpha_ts = alpha_t / np.maximum(alpha_s, 1e-300)
    sigma2_ts = sigma_t**2 - alpha_ts**2 * sigma_s**2
    sigma2_t = np.maximum(sigma_t**2, SIGMA_FLOOR**2)
    coef_z = alpha_ts * sigma_s**2 / sigma2_t
    coef_x = alpha_s * sigma2_ts / sigma2_t
    var = sigma2_ts * sigma_s**2 / sigma2_t
    return coef_z, coef_x, np.maximum(var, 0.0)


def denoise_step(z, xhat, s, t, rng=None):
    """One ancestral step: sample q(z_s | z_t, xhat). rng=None takes the mean.

    s, t are scalars or per-timestep vectors (elementwise s < t). At s = 0 the
    coefficients reduce to (0, 1, 0), so the step returns xhat exactly.
    """
    z = np.asarray(z, dtype=np.float64)
    coef_z, coef_x, var = transition(_per_step(s), _per_step(t))
    mean = coef_z * z + coef_x * np.asarray(xhat, dtype=np.float64)
    if rng is None:
        return mean
    return mean + np.sqrt(var) * rng.standard_normal(z.shape)


def ddim_step(z, xhat, s, t):
    """Deterministic update keeping the current noise direction."""
    z = np.asarray(z, dtype=np.float64)
    alpha_s, sigma_s = schedule(_per_step(s))
    alpha_t, sigma_t = schedule(_per_step(t))
    eps_hat = (z - alpha_t * np.asarray(xhat)) / np.maximum(sigma_t, SIGMA_FLOOR)
    return alpha_s * np.asarray(xhat) + sigma_s * eps_hat


def second_order_step(z, s, t, predict_xhat):
    """Heun-style corrector in xhat space; consumes exactly 2 evaluations.

    predict_xhat(z, level) must return the clean-scene estimate at that level.
    Predict at t, take the deterministic step to s, re-predict there, average
    the two estimates, and redo the step with the average.
    """
    xhat_t = predict_xhat(z, t)
    z_euler = ddim_step(z, xhat_t, s, t)
    xhat_s = predict_xhat(z_euler, s)
    xhat_avg = 0.5 * (xhat_t + xhat_s)
    return ddim_step(z, xhat_avg, s, t)


def monotone_schedule(history_len: int, future_len: int):
    """Per-timestep noise vector t_hat of length H + F: zero on history, then
    a linear ramp from 0 up to (F - 1) / F across the future steps.
    """
    assert future_len >= 1
    idx = np.arange(history_len + future_len, dtype=np.float64)
    return np.maximum(0.0, (idx - history_len) / future_len)


def uniform_times(num_steps: int):
    """Sampler grid: num_steps + 1 levels from 1.0 down to 0.0."""
    assert num_steps >= 1
    return np.linspace(1.0, 0.0, num_steps + 1)
