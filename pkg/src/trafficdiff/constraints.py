"""Generalized hard constraints: clip operators applied to the scene
estimate inside each denoise step (or once, post hoc).

A clip maps x_hat -> x_hat' in normalized feature space. Entries under the
frozen mask (inpainted context) are never moved, though frozen agents still
exert collision repulsion on movable ones. Iterative clips run gradient
descent with a per-waypoint step cap and backtracking, so their scalar
objective is non-increasing across iterations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import geometry
from .diffusion import denoise_step
from .scene_tensor import (
    CH_LENGTH,
    CH_WIDTH,
    CH_X,
    CH_Y,
    POSITION_SCALE,
    SIZE_STATS,
)


class ClipOperator:
    def __call__(self, xhat, frozen=None, validity=None):
        raise NotImplementedError


def apply_clips(xhat, clips, frozen=None, validity=None):
    for clip in clips:
        xhat = clip(xhat, frozen=frozen, validity=validity)
    return xhat


def constrained_denoise_step(z, xhat, s, t, clips, rng=None, frozen=None, validity=None):
    """Ancestral step whose posterior mean uses the clipped estimate."""
    xhat = apply_clips(xhat, clips, frozen=frozen, validity=validity)
    return denoise_step(z, xhat, s, t, rng)


@dataclass(frozen=True)
class RangeClip(ClipOperator):
    """Clamp one feature channel into [lo, hi] (normalized units)."""

    channel: int
    lo: float
    hi: float
    agents: Optional[tuple] = None  # agent indices; None = all

    def __call__(self, xhat, frozen=None, validity=None):
        out = np.array(xhat, dtype=np.float64)
        rows = slice(None) if self.agents is None else list(self.agents)
        clipped = np.clip(out[rows, :, self.channel], self.lo, self.hi)
        if frozen is not None:
            keep = frozen[rows, :, self.channel]
            clipped = np.where(keep, out[rows, :, self.channel], clipped)
        out[rows, :, self.channel] = clipped
        return out


_CORNER_I = np.array([0.5, 0.5, -0.5, -0.5])
_CORNER_J = np.array([0.5, -0.5, 0.5, -0.5])


@dataclass(frozen=True)
class CollisionClip(ClipOperator):
    """Push waypoint corners out of quartic repulsion fields centered on the
    other agents. Works on normalized x, y; corner offsets come from each
    agent's decoded width/length scaled into position units.
    """

    eps: float = 1e-2
    cutoff: float = 1.5  # normalized units; field is zero beyond this radius
    iters: int = 50
    step: float = 0.05  # per-waypoint displacement cap per iteration
    resid_weight: float = 0.25  # rigid-translation bias; residual share kept

    def _extents(self, xhat):
        # decoded half extents in position units -> [A,T]
        mu_l, sig_l = SIZE_STATS[CH_LENGTH]
        mu_w, sig_w = SIZE_STATS[CH_WIDTH]
        length = np.maximum(xhat[:, :, CH_LENGTH] * 2 * sig_l + mu_l, 0.1)
        width = np.maximum(xhat[:, :, CH_WIDTH] * 2 * sig_w + mu_w, 0.1)
        return length * POSITION_SCALE, width * POSITION_SCALE

    def _objective_grad(self, pos, length, width, active):
        """Total potential and its gradient wrt positions [A,T,2]."""
        A, T, _ = pos.shape
        # corner k of host agent a: axis-aligned offsets of the box extents
        cx = pos[:, :, None, 0] + _CORNER_I * width[:, :, None]  # [A,T,4]
        cy = pos[:, :, None, 1] + _CORNER_J * length[:, :, None]
        # displacement corner(a) - center(a') -> [A,A',T,4]
        u = cx[:, None] - pos[None, :, :, None, 0]
        v = cy[:, None] - pos[None, :, :, None, 1]
        pair = active[:, None] & active[None, :]  # [A,A',T] both valid
        live = pair[:, :, :, None] & (u**2 + v**2 < self.cutoff**2)
        live &= ~np.eye(A, dtype=bool)[:, :, None, None]
        denom = u**4 + v**4 + self.eps
        pot = np.where(live, 1.0 / denom, 0.0)
        obj = pot.sum()
        d_u = np.where(live, -4.0 * u**3 / denom**2, 0.0)
        d_v = np.where(live, -4.0 * v**3 / denom**2, 0.0)
        grad = np.zeros_like(pos)
        grad[:, :, 0] += d_u.sum(axis=(1, 3))  # host corners move
        grad[:, :, 1] += d_v.sum(axis=(1, 3))
        grad[:, :, 0] -= d_u.sum(axis=(0, 3))  # field centers move
        grad[:, :, 1] -= d_v.sum(axis=(0, 3))
        return obj, grad

    def objective(self, xhat, validity=None):
        pos = np.stack([xhat[:, :, CH_X], xhat[:, :, CH_Y]], axis=-1)
        length, width = self._extents(xhat)
        active = (
            np.ones(pos.shape[:2], dtype=bool)
            if validity is None
            else np.asarray(validity, dtype=bool)
        )
        obj, _ = self._objective_grad(pos, length, width, active)
        return obj

    def __call__(self, xhat, frozen=None, validity=None):
        out = np.array(xhat, dtype=np.float64)
        pos = np.stack([out[:, :, CH_X], out[:, :, CH_Y]], axis=-1)  # [A,T,2]
        length, width = self._extents(out)
        A, T = length.shape
        active = (
            np.ones((A, T), dtype=bool)
            if validity is None
            else np.asarray(validity, dtype=bool)
        )
        movable = active.copy()
        if frozen is not None:
            movable &= ~(frozen[:, :, CH_X] | frozen[:, :, CH_Y])

        obj, grad = self._objective_grad(pos, length, width, active)
        for _ in range(self.iters):
            if obj <= 0.0:
                break
            grad = np.where(movable[:, :, None], grad, 0.0)
            # rigid per-agent translation plus damped per-waypoint residual
            counts = np.maximum(movable.sum(axis=1), 1)[:, None]
            mean = grad.sum(axis=1) / counts  # [A,2]
            direction = mean[:, None, :] + self.resid_weight * (grad - mean[:, None, :])
            # normalized steepest descent: largest waypoint moves one step cap
            max_norm = np.linalg.norm(direction, axis=-1).max()
            delta = -direction * (self.step / max(max_norm, 1e-12))
            ok = False
            for _ in range(8):  # backtracking halvings
                trial = np.where(movable[:, :, None], pos + delta, pos)
                t_obj, t_grad = self._objective_grad(trial, length, width, active)
                if t_obj < obj:
                    pos, obj, grad = trial, t_obj, t_grad
                    ok = True
                    break
                delta *= 0.5
            if not ok:
                break
        out[:, :, CH_X] = pos[:, :, 0]
        out[:, :, CH_Y] = pos[:, :, 1]
        return out


@dataclass(frozen=True)
class OnroadClip(ClipOperator):
    """Pull offroad waypoints toward the nearest drivable-area boundary.

    polygons are closed world-frame boundaries (meters). Trajectories that are
    onroad for at most exempt_frac of their valid steps are left alone.
    """

    polygons: tuple  # of [N,2] arrays, meters
    exempt_frac: float = 0.2
    iters: int = 50
    step: float = 0.05  # normalized units per iteration

    def __call__(self, xhat, frozen=None, validity=None):
        out = np.array(xhat, dtype=np.float64)
        A, T, _ = out.shape
        polys_n = [np.asarray(p) * POSITION_SCALE for p in self.polygons]
        active = (
            np.ones((A, T), dtype=bool)
            if validity is None
            else np.asarray(validity, dtype=bool)
        )
        movable = active.copy()
        if frozen is not None:
            movable &= ~(frozen[:, :, CH_X] | frozen[:, :, CH_Y])

        pos = np.stack([out[:, :, CH_X], out[:, :, CH_Y]], axis=-1)
        onroad = geometry.in_any_polygon(pos, polys_n)  # [A,T]
        n_valid = np.maximum(active.sum(axis=1), 1)
        frac = (onroad & active).sum(axis=1) / n_valid
        eligible = frac > self.exempt_frac  # mostly-onroad agents only

        for _ in range(self.iters):
            work = movable & active & ~onroad & eligible[:, None]
            if not work.any():
                break
            p = pos[work]  # [M,2]
            best_d = np.full(p.shape[0], np.inf)
            best_q = np.zeros_like(p)
            for poly in polys_n:
                d, q = geometry.point_to_ring_distance(p, poly)
                better = d < best_d
                best_d = np.where(better, d, best_d)
                best_q = np.where(better[:, None], q, best_q)
            # overshoot the ring by a hair so the landing point tests inside
            move = np.minimum(best_d + 1e-6, self.step)
            unit = (best_q - p) / np.maximum(best_d, 1e-12)[:, None]
            pos[work] = p + unit * move[:, None]
            onroad = geometry.in_any_polygon(pos, polys_n)
        out[:, :, CH_X] = pos[:, :, 0]
        out[:, :, CH_Y] = pos[:, :, 1]
        return out
