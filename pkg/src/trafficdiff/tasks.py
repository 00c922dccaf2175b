"""Task-level entry points built on the reverse sampler: scene generation,
log perturbation, and the constraint-config compiler.

The constraint config is the text format from kvconfig. Example:

    agent {
      type: "car"
      control_point { time_step: 0 x: 12.0 y: 3.5 heading: 0.0 }
      control_point { time_step: 40 x: 52.0 y: 3.5 }
    }
    hard_constraint { kind: NON_COLLISION }
    hard_constraint { kind: RANGE feature: "z" min: 0.0 max: 2.0 }

Each declared agent claims the lowest agent slot with no valid steps;
control points pin the listed features at the given step (time_step counts
relative to the current step, so negatives land in the history). Hard
constraints compile to clip operators applied inside every denoise step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kvconfig
from .constraints import CollisionClip, OnroadClip, RangeClip
from .diffusion import forward_noise, uniform_times
from .rollout import RolloutConfig, RolloutResult, run_conditional_chain
from .scene_tensor import (
    AGENT_TYPES,
    CH_COS,
    CH_HEIGHT,
    CH_LENGTH,
    CH_SIN,
    CH_TYPE,
    CH_WIDTH,
    CH_X,
    CH_Y,
    CH_Z,
    NUM_FEATURES,
    FeatureNormalizer,
    InpaintingSpec,
    SceneTensor,
    TYPE_STATS,
)


def run_scenegen(shape, history_len, inpaint, validity, denoiser, config,
                 rng, roadgraph=None, num_samples=8):
    """Draw num_samples independent scenes under one conditioning setup.

    Each sample runs its own reverse chain from fresh noise; the shared rng
    makes the whole batch reproducible from one seed.

    Returns a list of RolloutResult.
    """
    out = []
    for _ in range(num_samples):
        out.append(
            run_conditional_chain(
                shape, history_len, inpaint, validity, denoiser, config, rng,
                roadgraph=roadgraph,
            )
        )
    return out


def run_log_perturbation(scene: SceneTensor, validity, t_star, denoiser,
                         config: RolloutConfig, rng, roadgraph=None,
                         extra_inpaint=None):
    """Re-noise a logged scene to level t_star and denoise it back.

    t_star = 0 returns the log bitwise with zero denoiser evaluations;
    t_star = 1 is a fresh sample. In between, the output interpolates
    between log fidelity and the model's own distribution. History steps
    stay pinned throughout.
    """
    t_star = float(t_star)
    assert 0.0 <= t_star <= 1.0
    A, T, D = scene.values.shape
    hist = np.zeros((A, T, D), dtype=bool)
    hist[:, : scene.history_len, :] = True
    inpaint = InpaintingSpec(hist, scene.values.copy())
    if extra_inpaint is not None:
        inpaint = inpaint.merge(extra_inpaint)

    if t_star == 0.0:
        return RolloutResult(
            scene=scene,
            validity=np.asarray(validity, dtype=bool),
            nfe=0,
            noise_levels={"t_star": 0.0},
            step_times=[],
        )

    z, _ = forward_noise(scene.values, t_star, rng)
    grid = uniform_times(config.denoise_steps)
    below = grid[grid < t_star - 1e-12]
    if below.size == 0 or below[-1] != 0.0:
        below = np.append(below, 0.0)
    times = np.concatenate([[t_star], below])
    result = run_conditional_chain(
        (A, T, D), scene.history_len, inpaint, validity, denoiser, config,
        rng, roadgraph=roadgraph, z_init=z, times=times,
    )
    result.noise_levels["t_star"] = t_star
    return result


@dataclass
class CompiledConstraints:
    """Result of compiling a constraint config against a scene."""

    inpaint: InpaintingSpec
    clips: tuple
    validity: np.ndarray  # [A,T] with injected agents switched on
    injected_agents: tuple  # agent slots claimed by the config
    source: dict = field(repr=False, default_factory=dict)

    def to_text(self) -> str:
        return kvconfig.format_text(self.source)


_POINT_FIELDS = ("x", "y", "z", "heading", "length", "width", "height")
_RANGE_FEATURES = {
    "x": CH_X, "y": CH_Y, "z": CH_Z,
    "length": CH_LENGTH, "width": CH_WIDTH, "height": CH_HEIGHT,
}


def compile_constraint_config(text, shape, history_len, validity,
                              roadgraph=None):
    """Parse and resolve a constraint config for a scene of `shape` [A,T,D].

    validity : [A,T] bool for the scene before injection; injected agents
    claim all-invalid slots (lowest first) and come back valid everywhere.

    Raises ValueError on unknown fields, out-of-range steps, duplicate
    control points, or when no free slot is left.
    """
    msg = kvconfig.parse_text(text) if isinstance(text, str) else text
    A, T, D = shape
    assert D == NUM_FEATURES
    validity = np.asarray(validity, dtype=bool).copy()
    norm = FeatureNormalizer()
    mask = np.zeros((A, T, D), dtype=bool)
    values = np.zeros((A, T, D))
    injected = []

    for agent_msg in kvconfig.all_of(msg, "agent"):
        free = np.flatnonzero(~validity.any(axis=1))
        free = [a for a in free if a not in injected]
        if not free:
            raise ValueError("no free agent slot for injected agent")
        slot = int(free[0])
        injected.append(slot)
        validity[slot, :] = True

        type_name = kvconfig.first(agent_msg, "type")
        if type_name is not None:
            if type_name not in AGENT_TYPES:
                raise ValueError(f"unknown agent type {type_name!r}")
            onehot = np.zeros(len(AGENT_TYPES))
            onehot[AGENT_TYPES.index(type_name)] = 1.0
            mu, sigma = TYPE_STATS
            values[slot, :, CH_TYPE] = (onehot - mu) / (2.0 * sigma)
            mask[slot, :, CH_TYPE] = True

        seen_steps = set()
        for point in kvconfig.all_of(agent_msg, "control_point"):
            tau = kvconfig.first(point, "time_step")
            if tau is None:
                raise ValueError("control_point needs time_step")
            tau = int(tau)
            if not (-history_len <= tau < T - history_len):
                raise ValueError(f"time_step {tau} outside [-{history_len}, {T - history_len})")
            if tau in seen_steps:
                raise ValueError(f"duplicate control_point at time_step {tau}")
            seen_steps.add(tau)
            i = tau + history_len
            for name in point:
                if name == "time_step":
                    continue
                if name not in _POINT_FIELDS:
                    raise ValueError(f"unknown control_point field {name!r}")
                raw = float(kvconfig.first(point, name))
                if name == "heading":
                    values[slot, i, CH_COS] = np.cos(raw)
                    values[slot, i, CH_SIN] = np.sin(raw)
                    mask[slot, i, CH_COS] = mask[slot, i, CH_SIN] = True
                else:
                    ch = {"x": CH_X, "y": CH_Y, "z": CH_Z,
                          "length": CH_LENGTH, "width": CH_WIDTH,
                          "height": CH_HEIGHT}[name]
                    values[slot, i, ch] = norm.encode_feature(name, raw)
                    mask[slot, i, ch] = True
        if not seen_steps and type_name is None:
            raise ValueError("agent block declares nothing")

    clips = []
    for hc in kvconfig.all_of(msg, "hard_constraint"):
        kind = kvconfig.first(hc, "kind")
        if kind == "NON_COLLISION":
            clips.append(CollisionClip())
        elif kind == "ONROAD":
            if roadgraph is None:
                raise ValueError("ONROAD constraint needs a roadgraph")
            clips.append(OnroadClip(tuple(roadgraph.boundaries)))
        elif kind == "RANGE":
            feature = kvconfig.first(hc, "feature")
            if feature not in _RANGE_FEATURES:
                raise ValueError(f"RANGE feature must be one of {sorted(_RANGE_FEATURES)}")
            lo = kvconfig.first(hc, "min")
            hi = kvconfig.first(hc, "max")
            if lo is None or hi is None:
                raise ValueError("RANGE needs min and max")
            ch = _RANGE_FEATURES[feature]
            lo_n = float(norm.encode_feature(feature, float(lo)))
            hi_n = float(norm.encode_feature(feature, float(hi)))
            clips.append(RangeClip(ch, lo_n, hi_n))
        else:
            raise ValueError(f"unknown hard_constraint kind {kind!r}")

    return CompiledConstraints(
        inpaint=InpaintingSpec(mask, values),
        clips=tuple(clips),
        validity=validity,
        injected_agents=tuple(injected),
        source=msg,
    )
