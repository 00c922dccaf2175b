"""Synthetic driving worlds with analytically known scene distributions.

A world is a road graph template plus a per-agent set of discrete behaviors
(keep speed, decelerate, lane change). Each behavior induces a Gaussian over
that agent's trajectory block with diagonal covariance in normalized feature
space, so the joint scene distribution is a finite Gaussian mixture that
prior_as_mixture can enumerate exactly. sample_scene draws scenes through the
structured path (assignment, then per-agent noise) without ever building the
joint enumeration, which keeps the two routes independent.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .denoiser import MixtureScenePrior
from .scene_tensor import (
    AGENT_TYPES,
    CH_TYPE,
    CH_X,
    CH_Z,
    NUM_FEATURES,
    FeatureNormalizer,
    RawScene,
    SceneTensor,
)

DT = 0.1  # seconds per step (10 Hz)

CH_COS_SIN = slice(3, 5)
CH_SIZES = slice(5, 8)

# length, width, height in meters per agent type
TYPE_SIZES = {
    "av": (4.8, 2.1, 1.7),
    "car": (4.5, 2.0, 1.6),
    "pedestrian": (0.8, 0.8, 1.8),
    "cyclist": (1.8, 0.6, 1.6),
}


@dataclass(frozen=True)
class Lane:
    points: np.ndarray  # [N,2] centerline, meters
    speed: float  # nominal speed, m/s


@dataclass(frozen=True)
class RoadGraph:
    lanes: tuple  # of Lane
    boundaries: tuple  # of [N,2] closed drivable-area polygons

    def context_polylines(self):
        """(points, kind) pairs for encoders; kind 0 = lane, 1 = boundary."""
        out = [(lane.points, 0) for lane in self.lanes]
        out += [(poly, 1) for poly in self.boundaries]
        return out


@dataclass(frozen=True)
class WorldConfig:
    template: str = "straight"
    num_agents: int = 8
    history_len: int = 11
    future_len: int = 80
    num_lanes: int = 2
    lane_width: float = 3.5
    road_length: float = 200.0
    speed: float = 10.0
    spacing: float = 18.0
    behavior_names: tuple = ("keep_speed", "decelerate")
    behavior_weights: Optional[tuple] = None  # per-behavior, defaults uniform
    follower_coupling: float = 0.0  # same-lane follower copies leader
    decel_rate: float = 2.5  # m/s^2
    pos_noise: float = 0.35  # meters, std on x and y
    z_noise: float = 0.1  # meters
    heading_noise: float = 0.02  # std on the cos/sin channels
    size_noise: float = 0.02  # normalized-space std on l, w, h
    type_noise: float = 0.02  # normalized-space std on the one-hot block

    @property
    def num_steps(self) -> int:
        return self.history_len + self.future_len


class LanePath:
    """Arclength-parameterized polyline with position and tangent lookups."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        assert pts.ndim == 2 and pts.shape[0] >= 2
        seg = np.diff(pts, axis=0)
        seglen = np.linalg.norm(seg, axis=1)
        self.points = pts
        self.s = np.concatenate([[0.0], np.cumsum(seglen)])
        self.length = float(self.s[-1])

    def position(self, s):
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        x = np.interp(s, self.s, self.points[:, 0])
        y = np.interp(s, self.s, self.points[:, 1])
        return np.stack([x, y], axis=-1)

    def normal(self, s):
        p0 = self.position(np.asarray(s) - 0.5)
        p1 = self.position(np.asarray(s) + 0.5)
        d = p1 - p0
        d /= np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-12)
        return np.stack([-d[..., 1], d[..., 0]], axis=-1)


def build_world(cfg: WorldConfig) -> RoadGraph:
    """Deterministic road graph for the configured template."""
    lw, n = cfg.lane_width, cfg.num_lanes
    if cfg.template == "straight":
        x0, x1 = -0.4 * cfg.road_length, 0.6 * cfg.road_length
        lanes = []
        for i in range(n):
            y = i * lw
            lanes.append(Lane(np.array([[x0, y], [x1, y]]), cfg.speed))
        # drivable rectangle: area is exactly road_length * (n * lw)
        ylo, yhi = -0.5 * lw, (n - 0.5) * lw
        boundary = np.array([[x0, ylo], [x1, ylo], [x1, yhi], [x0, yhi]])
        return RoadGraph(tuple(lanes), (boundary,))
    if cfg.template == "curve":
        radius = cfg.road_length / np.pi  # ~half-circle worth of arc
        span = np.deg2rad(120.0)
        theta = np.linspace(-0.5 * span, 0.5 * span, 48)
        lanes = []
        for i in range(n):
            r = radius + i * lw
            pts = np.stack([r * np.sin(theta), radius - r * np.cos(theta)], axis=1)
            lanes.append(Lane(pts, cfg.speed))
        r_in, r_out = radius - 0.5 * lw, radius + (n - 0.5) * lw
        inner = np.stack(
            [r_in * np.sin(theta), radius - r_in * np.cos(theta)], axis=1
        )
        outer = np.stack(
            [r_out * np.sin(theta), radius - r_out * np.cos(theta)], axis=1
        )
        boundary = np.concatenate([inner, outer[::-1]], axis=0)
        return RoadGraph(tuple(lanes), (boundary,))
    if cfg.template == "intersection":
        L = 0.5 * cfg.road_length
        w = 0.5 * n * lw
        lanes = []
        for i in range(n):
            off = (i - 0.5 * (n - 1)) * lw
            lanes.append(Lane(np.array([[-L, off], [L, off]]), cfg.speed))
            lanes.append(Lane(np.array([[off, -L], [off, L]]), cfg.speed))
        boundary = np.array(
            [
                [L, -w], [L, w], [w, w], [w, L], [-w, L], [-w, w],
                [-L, w], [-L, -w], [-w, -w], [-w, -L], [w, -L], [w, -w],
            ]
        )
        return RoadGraph(tuple(lanes), (boundary,))
    raise ValueError(f"unknown template {cfg.template!r}")


@dataclass(frozen=True)
class Behavior:
    """One agent-level mode: a diagonal Gaussian over the [T,D] block."""

    name: str
    mean: np.ndarray  # [T,D] normalized space
    var: np.ndarray  # [T,D]


@dataclass(frozen=True)
class BehaviorMixture:
    """Per-agent behavior sets plus the joint assignment distribution."""

    road: RoadGraph
    behaviors: tuple  # per agent: tuple of Behavior
    joint_weights: np.ndarray  # shape (n_0, ..., n_{A-1}), sums to 1
    history_len: int

    @property
    def num_agents(self) -> int:
        return len(self.behaviors)

    @property
    def scene_shape(self):
        T = self.behaviors[0][0].mean.shape[0]
        return (self.num_agents, T, NUM_FEATURES)


def _speed_profile(cfg: WorldConfig, name: str, T: int):
    v = np.full(T, cfg.speed)
    if name == "decelerate":
        k = np.arange(T, dtype=np.float64)
        ramp = np.maximum(0.0, (k - cfg.history_len) * DT) * cfg.decel_rate
        v = np.maximum(0.0, cfg.speed - ramp)
    return v


def _behavior(cfg, road, lane_idx, s0, type_name, name):
    """Mean trajectory + diagonal variance for one (agent, behavior) pair."""
    T = cfg.num_steps
    path = LanePath(road.lanes[lane_idx].points)
    v = _speed_profile(cfg, name, T)
    s = s0 + np.concatenate([[0.0], np.cumsum(v[:-1] * DT)])
    pos = path.position(s)  # [T,2]
    if name == "lane_change":
        target = lane_idx + 1 if lane_idx + 1 < len(road.lanes) else lane_idx - 1
        assert target >= 0, "lane_change needs an adjacent lane"
        k = np.arange(T, dtype=np.float64)
        u = np.clip((k - (cfg.history_len + 10)) / 30.0, 0.0, 1.0)
        blend = u * u * (3.0 - 2.0 * u)  # smoothstep
        shift = (target - lane_idx) * cfg.lane_width * blend
        pos = pos + path.normal(s) * shift[:, None]
    d = np.diff(pos, axis=0)
    d = np.concatenate([d, d[-1:]], axis=0)
    heading = np.arctan2(d[:, 1], d[:, 0])
    still = np.linalg.norm(d, axis=1) < 1e-9
    if still.any():  # stopped steps keep the last moving heading
        idx = np.where(~still, np.arange(T), -1)
        idx = np.maximum.accumulate(idx)
        idx[idx < 0] = int(np.argmin(still))
        heading = heading[idx]

    size = TYPE_SIZES[type_name]
    type_idx = AGENT_TYPES.index(type_name)
    raw = RawScene(
        x=pos[None, :, 0],
        y=pos[None, :, 1],
        z=np.zeros((1, T)),
        heading=heading[None, :],
        length=np.full((1, T), size[0]),
        width=np.full((1, T), size[1]),
        height=np.full((1, T), size[2]),
        type_idx=np.array([type_idx]),
    )
    mean = FeatureNormalizer().encode(raw, cfg.history_len).values[0]  # [T,D]

    var = np.zeros((T, NUM_FEATURES))
    scale = FeatureNormalizer().position_scale
    var[:, CH_X : CH_Z + 1] = (cfg.pos_noise * scale) ** 2
    var[:, CH_Z] = (cfg.z_noise * scale) ** 2
    var[:, CH_COS_SIN] = cfg.heading_noise**2
    var[:, CH_SIZES] = cfg.size_noise**2
    var[:, CH_TYPE] = cfg.type_noise**2
    return Behavior(name, mean, var)


def _layout(cfg: WorldConfig):
    """Fixed agent placement: (lane_idx, arc offset, type name) per agent."""
    road = build_world(cfg)
    n_lanes = len(road.lanes)
    out = []
    anchor = 0.3 * LanePath(road.lanes[0].points).length
    for i in range(cfg.num_agents):
        lane = i % n_lanes
        row = i // n_lanes
        s0 = anchor - row * cfg.spacing
        out.append((lane, s0, "av" if i == 0 else "car"))
    return road, out


def build_behavior_mixture(cfg: WorldConfig) -> BehaviorMixture:
    road, layout = _layout(cfg)
    behaviors = tuple(
        tuple(
            _behavior(cfg, road, lane, s0, tname, bname)
            for bname in cfg.behavior_names
        )
        for lane, s0, tname in layout
    )
    marg = np.asarray(
        cfg.behavior_weights
        if cfg.behavior_weights is not None
        else np.full(len(cfg.behavior_names), 1.0 / len(cfg.behavior_names)),
        dtype=np.float64,
    )
    marg = marg / marg.sum()

    counts = tuple(len(b) for b in behaviors)
    joint = np.zeros(counts)
    # same-lane queues, front to back, for leader->follower coupling
    queues = {}
    for i, (lane, s0, _) in enumerate(layout):
        queues.setdefault(lane, []).append((s0, i))
    leader_of = {}
    for lane, q in queues.items():
        q.sort(reverse=True)
        for (_, follower), (_, leader) in zip(q[1:], q[:-1]):
            leader_of[follower] = leader
    c = cfg.follower_coupling
    for assign in np.ndindex(*counts):
        p = 1.0
        for i, b in enumerate(assign):
            if c > 0.0 and i in leader_of:
                p *= c * (1.0 if b == assign[leader_of[i]] else 0.0) + (1.0 - c) * marg[b]
            else:
                p *= marg[b]
        joint[assign] = p
    joint /= joint.sum()
    return BehaviorMixture(road, behaviors, joint, cfg.history_len)


def prior_as_mixture(mixture: BehaviorMixture, cap: int = 27) -> MixtureScenePrior:
    """Enumerate joint behavior assignments into an exact scene mixture."""
    counts = tuple(len(b) for b in mixture.behaviors)
    K = int(np.prod(counts))
    if K > cap:
        raise ValueError(f"{K} joint components exceed cap {cap}")
    A = mixture.num_agents
    T, D = mixture.behaviors[0][0].mean.shape
    weights = np.zeros(K)
    means = np.zeros((K, A, T, D))
    variances = np.zeros((K, A, T, D))
    for k, assign in enumerate(np.ndindex(*counts)):
        weights[k] = mixture.joint_weights[assign]
        for a, b in enumerate(assign):
            means[k, a] = mixture.behaviors[a][b].mean
            variances[k, a] = mixture.behaviors[a][b].var
    return MixtureScenePrior(weights, means, variances)


def sample_scene(mixture: BehaviorMixture, rng):
    """Draw one scene: joint assignment, then per-agent Gaussian noise.

    Returns (SceneTensor, validity [A,T] bool, assignment tuple).
    """
    flat = mixture.joint_weights.ravel()
    idx = rng.choice(flat.size, p=flat)
    assign = np.unravel_index(idx, mixture.joint_weights.shape)
    A, T, D = mixture.scene_shape
    values = np.zeros((A, T, D))
    for a, b in enumerate(assign):
        beh = mixture.behaviors[a][b]
        values[a] = beh.mean + np.sqrt(beh.var) * rng.standard_normal((T, D))
    validity = np.ones((A, T), dtype=bool)
    return SceneTensor(values, mixture.history_len), validity, tuple(int(b) for b in assign)


def sample_batch(mixture: BehaviorMixture, rng, n: int):
    """Stack n sampled scenes -> (values [n,A,T,D], validity [n,A,T])."""
    scenes, vals = [], []
    for _ in range(n):
        scene, validity, _ = sample_scene(mixture, rng)
        scenes.append(scene.values)
        vals.append(validity)
    return np.stack(scenes), np.stack(vals)


def constant_velocity_rollout(scene: SceneTensor, history_len: int) -> SceneTensor:
    """Reference policy: freeze last-history velocity and extrapolate."""
    v = np.array(scene.values)
    H = history_len
    assert H >= 2
    step = v[:, H - 1, :CH_Z + 1] - v[:, H - 2, :CH_Z + 1]  # [A,3]
    k = np.arange(1, v.shape[1] - H + 1, dtype=np.float64)
    v[:, H:, : CH_Z + 1] = v[:, H - 1 : H, : CH_Z + 1] + k[None, :, None] * step[:, None, :]
    v[:, H:, CH_Z + 1 :] = v[:, H - 1 : H, CH_Z + 1 :]
    return SceneTensor(v, H)


def crossing_world(num_agents: int = 2, **kw) -> WorldConfig:
    """Intersection preset where straight-through paths conflict at the
    center; useful for exercising collision handling."""
    return WorldConfig(
        template="intersection",
        num_agents=num_agents,
        num_lanes=1,
        behavior_names=("keep_speed",),
        **kw,
    )
