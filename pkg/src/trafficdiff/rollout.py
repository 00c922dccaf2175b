"""Rollout algorithms: one-shot, replanning autoregressive, amortized.

All three share one reverse-diffusion chain. At every denoiser evaluation the
scene estimate x_hat is inpainted (history re-asserted, plus any task
conditioning) and then clipped by any hard-constraint operators; inpainted
entries are frozen so constraints never move the conditioning.

Closed-loop modes maintain an extended timeline of length H + 2F: finalized
steps on the left, the engine-owned future window on the right. An external
AV stack may overwrite elapsed steps between physical steps via
inject_external_agent; the engine then conditions on the injected states.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import diffusion
from .constraints import apply_clips, constrained_denoise_step
from .denoiser import Denoiser, DenoiserContext
from .scene_tensor import InpaintingSpec, SceneTensor, apply_inpainting, make_bp_mask


@dataclass(frozen=True)
class RolloutConfig:
    denoise_steps: int = 16
    sampler: str = "ancestral"  # "ancestral" | "heun"
    replan_hz: float = 10.0  # full AR replan rate
    step_rate_hz: float = 10.0  # physical step rate
    clips: tuple = ()  # in-diffusion hard-constraint operators

    def __post_init__(self):
        if self.denoise_steps < 1:
            raise ValueError("denoise_steps must be >= 1")
        if self.sampler not in ("ancestral", "heun"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.replan_hz <= 0:
            raise ValueError("replan_hz must be positive")
        interval = self.step_rate_hz / self.replan_hz
        if abs(interval - round(interval)) > 1e-9 or round(interval) < 1:
            raise ValueError(
                f"replan rate {self.replan_hz} Hz does not divide the "
                f"{self.step_rate_hz} Hz step grid"
            )

    @property
    def commit_steps(self) -> int:
        return int(round(self.step_rate_hz / self.replan_hz))

    def chain_evals(self) -> int:
        """Denoiser evaluations one reverse chain consumes."""
        n = self.denoise_steps
        return 2 * n - 1 if self.sampler == "heun" else n


@dataclass
class RolloutResult:
    scene: SceneTensor
    validity: np.ndarray  # [A,T] bool
    nfe: int
    noise_levels: dict  # audit record: sampler grid, monotone ramp if any
    step_times: list = field(default_factory=list)  # wall seconds, not serialized


def _run_chain(z, config: RolloutConfig, denoiser, ctx, inpaint, rng, times=None):
    """Reverse chain down the grid; returns the clean scene array."""
    clips = config.clips
    frozen = inpaint.mask
    validity = ctx.validity
    if times is None:
        times = diffusion.uniform_times(config.denoise_steps)

    def estimate(z_cur, t):
        vhat = denoiser.predict_v(z_cur, t, ctx)
        xhat = diffusion.x_from_v(z_cur, vhat, t)
        return apply_inpainting(xhat, inpaint)

    for i in range(len(times) - 1):
        t, s = float(times[i]), float(times[i + 1])
        if s == 0.0:
            z = apply_clips(estimate(z, t), clips, frozen=frozen, validity=validity)
        elif config.sampler == "heun":
            z = diffusion.second_order_step(
                z,
                s,
                t,
                lambda zz, tt: apply_clips(
                    estimate(zz, tt), clips, frozen=frozen, validity=validity
                ),
            )
        else:
            z = constrained_denoise_step(
                z, estimate(z, t), s, t, clips, rng, frozen=frozen, validity=validity
            )
    return z


def run_conditional_chain(
    shape,
    history_len: int,
    inpaint: InpaintingSpec,
    validity,
    denoiser: Denoiser,
    config: RolloutConfig,
    rng,
    roadgraph=None,
    z_init=None,
    times=None,
) -> RolloutResult:
    """One reverse pass with an arbitrary inpainting spec (scene generation,
    perturbation resumes, ...). z_init/times default to pure noise at t = 1
    and the uniform grid."""
    validity = np.asarray(validity, dtype=bool)
    ctx = DenoiserContext(inpaint, validity, roadgraph)
    nfe0 = denoiser.nfe
    t0 = time.perf_counter()
    z = rng.standard_normal(shape) if z_init is None else np.asarray(z_init, np.float64)
    if times is None:
        times = diffusion.uniform_times(config.denoise_steps)
    x = _run_chain(z, config, denoiser, ctx, inpaint, rng, times=times)
    return RolloutResult(
        scene=SceneTensor(x, history_len),
        validity=validity,
        nfe=denoiser.nfe - nfe0,
        noise_levels={"grid": [float(t) for t in np.asarray(times)]},
        step_times=[time.perf_counter() - t0],
    )


def one_shot(
    scene: SceneTensor,
    validity,
    denoiser: Denoiser,
    config: RolloutConfig,
    rng,
    roadgraph=None,
    extra_inpaint: Optional[InpaintingSpec] = None,
) -> RolloutResult:
    """Single reverse pass over the whole horizon, history inpainted."""
    shape = scene.values.shape
    bp = InpaintingSpec(
        np.broadcast_to(make_bp_mask(scene.history_len, scene.num_steps), shape),
        scene.values,
    )
    inpaint = bp if extra_inpaint is None else bp.merge(extra_inpaint)
    result = run_conditional_chain(
        shape, scene.history_len, inpaint, validity, denoiser, config, rng, roadgraph
    )
    assert result.nfe == config.chain_evals()
    return result


@dataclass
class RolloutBuffer:
    """Engine state for closed-loop modes on the extended timeline."""

    timeline: np.ndarray  # [A, H + 2F, D]; finalized through cursor + H - 1
    validity: np.ndarray  # [A, H + 2F] bool
    cursor: int  # physical steps completed, 0..F
    history_len: int
    future_len: int

    @property
    def elapsed_end(self) -> int:
        """First timeline index not yet finalized."""
        return self.history_len + self.cursor


def inject_external_agent(buffer: RolloutBuffer, agent_idx: int, states: dict):
    """Overwrite an agent's elapsed steps with external feature rows.

    states maps absolute timeline index -> normalized feature row [D].
    Future slots belong to the engine; writing one raises ValueError.
    """
    A, _, D = buffer.timeline.shape
    if not (0 <= agent_idx < A):
        raise ValueError(f"agent index {agent_idx} out of range")
    for step, row in states.items():
        step = int(step)
        if not (0 <= step < buffer.elapsed_end):
            raise ValueError(
                f"step {step} is not elapsed (elapsed ends at {buffer.elapsed_end})"
            )
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (D,):
            raise ValueError(f"state row must have shape ({D},)")
        buffer.timeline[agent_idx, step] = row
        buffer.validity[agent_idx, step] = True
    return buffer


def _extend_validity(validity, total_len):
    validity = np.asarray(validity, dtype=bool)
    extra = total_len - validity.shape[1]
    assert extra >= 0
    pad = np.repeat(validity[:, -1:], extra, axis=1)
    return np.concatenate([validity, pad], axis=1)


class _SessionBase:
    def __init__(self, scene, validity, denoiser, config, rng, roadgraph=None,
                 extra_inpaint=None):
        A, T, D = scene.values.shape
        H, F = scene.history_len, scene.future_len
        timeline = np.zeros((A, H + 2 * F, D))
        timeline[:, :T] = scene.values
        self.buffer = RolloutBuffer(
            timeline=timeline,
            validity=_extend_validity(validity, H + 2 * F),
            cursor=0,
            history_len=H,
            future_len=F,
        )
        self.denoiser = denoiser
        self.config = config
        self.rng = rng
        self.roadgraph = roadgraph
        self.extra_inpaint = extra_inpaint  # absolute scene steps [A,T,D]
        self.H, self.F, self.T = H, F, T
        self.nfe0 = denoiser.nfe
        self.step_times = []

    def _slice_inpaint(self, start):
        """BP inpainting spec and context for the window [start, start+T)."""
        H, T = self.H, self.T
        A, _, D = self.buffer.timeline.shape
        values = np.zeros((A, T, D))
        values[:, :H] = self.buffer.timeline[:, start : start + H]
        mask = np.broadcast_to(make_bp_mask(H, T), (A, T, D)).copy()
        if self.extra_inpaint is not None:
            # lift absolute-step pins into window coordinates; steps that
            # slid past the window or into the phantom region drop out
            n_abs = min(T, self.T - start)
            if n_abs > 0:
                em = self.extra_inpaint.mask[:, start : start + n_abs]
                ev = self.extra_inpaint.values[:, start : start + n_abs]
                values[:, :n_abs] = np.where(em, ev, values[:, :n_abs])
                mask[:, :n_abs] |= em
        inpaint = InpaintingSpec(mask, values)
        validity = self.buffer.validity[:, start : start + T]
        return inpaint, DenoiserContext(inpaint, validity, self.roadgraph)

    def inject(self, agent_idx, states):
        inject_external_agent(self.buffer, agent_idx, states)

    def run(self) -> RolloutResult:
        while self.buffer.cursor < self.F:
            self.step()
        return self.result()

    def result(self) -> RolloutResult:
        assert self.buffer.cursor == self.F, "rollout not finished"
        H, T = self.H, self.T
        scene = SceneTensor(self.buffer.timeline[:, :T].copy(), H)
        return RolloutResult(
            scene=scene,
            validity=self.buffer.validity[:, :T].copy(),
            nfe=self.denoiser.nfe - self.nfe0,
            noise_levels=self._noise_levels(),
            step_times=self.step_times,
        )


class ReplanSession(_SessionBase):
    """Full autoregressive mode: replan with one-shot, commit, repeat."""

    def step(self):
        t0 = time.perf_counter()
        buf = self.buffer
        c = self.config.commit_steps
        if buf.cursor % c == 0:
            start = buf.cursor
            inpaint, ctx = self._slice_inpaint(start)
            z = self.rng.standard_normal(ctx.inpainting.values.shape)
            x = _run_chain(z, self.config, self.denoiser, ctx, inpaint, self.rng)
            commit = min(c, self.F - buf.cursor)
            dst = self.H + buf.cursor
            buf.timeline[:, dst : dst + commit] = x[:, self.H : self.H + commit]
        buf.cursor += 1
        self.step_times.append(time.perf_counter() - t0)

    def _noise_levels(self):
        return {"grid": [float(t) for t in diffusion.uniform_times(self.config.denoise_steps)]}


class AmortizedSession(_SessionBase):
    """Amortized mode: warm-up plan, then one denoiser evaluation per
    physical step over a noise-ramped future buffer; pop the clean front
    slot, append a fresh pure-noise slot."""

    def __init__(self, scene, validity, denoiser, config, rng, roadgraph=None,
                 extra_inpaint=None):
        super().__init__(scene, validity, denoiser, config, rng, roadgraph,
                         extra_inpaint)
        H, F = self.H, self.F
        warm = one_shot(scene, validity, denoiser, config, rng, roadgraph,
                        extra_inpaint)
        plan = warm.scene.values[:, H:]  # [A,F,D]
        self.ramp = diffusion.monotone_schedule(H, F)[H:]  # j / F for slot j
        alpha, sigma = diffusion.schedule(self.ramp[None, :, None])
        eps = rng.standard_normal(plan.shape)
        self.z_buf = alpha * plan + sigma * eps
        self.levels = self.ramp.copy()

    def step(self):
        t0 = time.perf_counter()
        buf = self.buffer
        k = buf.cursor
        assert k < self.F
        inpaint, ctx = self._slice_inpaint(k)
        z_slice = np.concatenate([inpaint.values[:, : self.H], self.z_buf], axis=1)
        t_vec = np.concatenate([np.zeros(self.H), self.levels])
        vhat = self.denoiser.predict_v(z_slice, t_vec, ctx)
        xhat = diffusion.x_from_v(z_slice, vhat, t_vec)
        xhat = apply_inpainting(xhat, inpaint)
        xhat = apply_clips(
            xhat, self.config.clips, frozen=inpaint.mask, validity=ctx.validity
        )
        xwin = xhat[:, self.H :]  # [A,F,D]

        # pop the front slot (level 0, already clean) into the timeline
        buf.timeline[:, self.H + k] = xwin[:, 0]
        # shift: surviving slots re-noise one level lower; back slot is fresh
        alpha, sigma = diffusion.schedule(self.ramp[:-1][None, :, None])
        eps = self.rng.standard_normal((xwin.shape[0], self.F - 1, xwin.shape[2]))
        renoised = alpha * xwin[:, 1:] + sigma * eps
        fresh = self.rng.standard_normal((xwin.shape[0], 1, xwin.shape[2]))
        self.z_buf = np.concatenate([renoised, fresh], axis=1)
        self.levels = np.concatenate([self.ramp[:-1], [1.0]])
        buf.cursor += 1
        self.step_times.append(time.perf_counter() - t0)

    def _noise_levels(self):
        return {
            "grid": [float(t) for t in diffusion.uniform_times(self.config.denoise_steps)],
            "monotone": [float(t) for t in self.ramp],
        }


def full_ar(scene, validity, denoiser, config, rng, roadgraph=None,
            extra_inpaint=None) -> RolloutResult:
    session = ReplanSession(scene, validity, denoiser, config, rng, roadgraph,
                            extra_inpaint)
    result = session.run()
    replans = -(-scene.future_len // config.commit_steps)  # ceil
    assert result.nfe == replans * config.chain_evals()
    return result


def amortized_ar(scene, validity, denoiser, config, rng, roadgraph=None,
                 extra_inpaint=None) -> RolloutResult:
    session = AmortizedSession(scene, validity, denoiser, config, rng,
                               roadgraph, extra_inpaint)
    result = session.run()
    assert result.nfe == config.chain_evals() + scene.future_len
    return result
