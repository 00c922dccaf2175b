"""Scene tensors: fixed feature layout, normalization, masks, inpainting.

A scene is a float64 array of shape [A, T, D] covering A agent slots over
T = H + F timesteps at 10 Hz (H history steps, then F future steps). The
feature axis D = 12 is laid out as

    0:x  1:y  2:z  3:cos(heading)  4:sin(heading)  5:length  6:width
    7:height  8..11: one-hot agent type (av, car, pedestrian, cyclist)

Timesteps are addressed either by array index i in [0, T) or by the signed
label tau in [-H, F) with i = tau + H; history is i < H.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NUM_FEATURES = 12
CH_X, CH_Y, CH_Z = 0, 1, 2
CH_COS, CH_SIN = 3, 4
CH_LENGTH, CH_WIDTH, CH_HEIGHT = 5, 6, 7
CH_TYPE = slice(8, 12)
AGENT_TYPES = ("av", "car", "pedestrian", "cyclist")

POSITION_SCALE = 1.0 / 80.0  # meters -> normalized units on x, y, z

# per-feature (mu, sigma); channel value is (f - mu) / (2 sigma)
SIZE_STATS = {
    CH_LENGTH: (4.5, 2.5),
    CH_WIDTH: (2.0, 0.8),
    CH_HEIGHT: (1.75, 0.6),
}
TYPE_STATS = (0.5, 0.5)


@dataclass(frozen=True)
class SceneTensor:
    """Normalized scene array plus the history/future split."""

    values: np.ndarray  # [A,T,D]
    history_len: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        assert v.ndim == 3 and v.shape[2] == NUM_FEATURES, v.shape
        assert 0 <= self.history_len <= v.shape[1]
        object.__setattr__(self, "values", v)

    @property
    def num_agents(self) -> int:
        return self.values.shape[0]

    @property
    def num_steps(self) -> int:
        return self.values.shape[1]

    @property
    def future_len(self) -> int:
        return self.values.shape[1] - self.history_len

    def step_index(self, tau: int) -> int:
        """Array index for the signed timestep label tau in [-H, F)."""
        if not (-self.history_len <= tau < self.future_len):
            raise ValueError(
                f"timestep {tau} outside [-{self.history_len}, {self.future_len})"
            )
        return tau + self.history_len

    def with_values(self, values) -> "SceneTensor":
        return SceneTensor(values, self.history_len)


@dataclass(frozen=True)
class InpaintingSpec:
    """Known entries to hold fixed during sampling: x_bar where mask is true."""

    mask: np.ndarray  # [A,T,D] bool
    values: np.ndarray  # [A,T,D]

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        v = np.asarray(self.values, dtype=np.float64)
        assert m.shape == v.shape and m.ndim == 3, (m.shape, v.shape)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "values", v)

    @classmethod
    def empty(cls, shape) -> "InpaintingSpec":
        return cls(np.zeros(shape, dtype=bool), np.zeros(shape))

    def merge(self, other: "InpaintingSpec") -> "InpaintingSpec":
        """Union of the two specs; other wins where both constrain an entry."""
        mask = self.mask | other.mask
        values = np.where(other.mask, other.values, self.values)
        return InpaintingSpec(mask, values)


@dataclass
class RawScene:
    """World-frame agent features (meters, radians), per agent and step."""

    x: np.ndarray  # [A,T]
    y: np.ndarray
    z: np.ndarray
    heading: np.ndarray  # [A,T] radians
    length: np.ndarray  # [A,T]
    width: np.ndarray
    height: np.ndarray
    type_idx: np.ndarray  # [A] int, index into AGENT_TYPES


class FeatureNormalizer:
    """Affine map between world-frame features and the diffusion space.

    Positions scale by 1/80 per meter; sizes and the one-hot block use
    (f - mu) / (2 sigma); heading lives as a (cos, sin) pair and passes
    through unchanged.
    """

    def __init__(self, position_scale: float = POSITION_SCALE):
        self.position_scale = float(position_scale)

    def encode(self, raw: RawScene, history_len: int) -> SceneTensor:
        A, T = raw.x.shape
        out = np.zeros((A, T, NUM_FEATURES))
        s = self.position_scale
        out[:, :, CH_X] = raw.x * s
        out[:, :, CH_Y] = raw.y * s
        out[:, :, CH_Z] = raw.z * s
        out[:, :, CH_COS] = np.cos(raw.heading)
        out[:, :, CH_SIN] = np.sin(raw.heading)
        for ch, arr in ((CH_LENGTH, raw.length), (CH_WIDTH, raw.width), (CH_HEIGHT, raw.height)):
            mu, sigma = SIZE_STATS[ch]
            out[:, :, ch] = (arr - mu) / (2.0 * sigma)
        mu_k, sig_k = TYPE_STATS
        onehot = np.eye(len(AGENT_TYPES))[np.asarray(raw.type_idx, dtype=int)]  # [A,4]
        out[:, :, CH_TYPE] = (onehot[:, None, :] - mu_k) / (2.0 * sig_k)
        return SceneTensor(out, history_len)

    def decode(self, scene: SceneTensor) -> RawScene:
        v = scene.values
        s = self.position_scale
        cos, sin = v[:, :, CH_COS], v[:, :, CH_SIN]
        sizes = {}
        for ch in (CH_LENGTH, CH_WIDTH, CH_HEIGHT):
            mu, sigma = SIZE_STATS[ch]
            sizes[ch] = v[:, :, ch] * (2.0 * sigma) + mu
        mu_k, sig_k = TYPE_STATS
        onehot = v[:, :, CH_TYPE] * (2.0 * sig_k) + mu_k  # [A,T,4]
        type_idx = onehot.mean(axis=1).argmax(axis=1)
        return RawScene(
            x=v[:, :, CH_X] / s,
            y=v[:, :, CH_Y] / s,
            z=v[:, :, CH_Z] / s,
            heading=np.arctan2(sin, cos),
            length=sizes[CH_LENGTH],
            width=sizes[CH_WIDTH],
            height=sizes[CH_HEIGHT],
            type_idx=type_idx,
        )

    def encode_feature(self, name: str, value):
        """Normalize a scalar world-frame feature value by channel name."""
        value = np.asarray(value, dtype=np.float64)
        if name in ("x", "y", "z"):
            return value * self.position_scale
        ch = {"length": CH_LENGTH, "width": CH_WIDTH, "height": CH_HEIGHT}[name]
        mu, sigma = SIZE_STATS[ch]
        return (value - mu) / (2.0 * sigma)


def normalize_scene(raw: RawScene, history_len: int, normalizer=None) -> SceneTensor:
    return (normalizer or FeatureNormalizer()).encode(raw, history_len)


def denormalize_scene(scene: SceneTensor, normalizer=None) -> RawScene:
    return (normalizer or FeatureNormalizer()).decode(scene)


def make_bp_mask(history_len: int, num_steps: int):
    """Behavior-prediction mask [1,T,1]: true exactly on history steps."""
    assert 0 <= history_len <= num_steps
    m = np.zeros((1, num_steps, 1), dtype=bool)
    m[:, :history_len, :] = True
    return m


def sample_scenegen_mask(validity, rng):
    """Scene-generation mask [A,1,1]: a uniform-size random subset of the
    valid agents is kept as context, the rest get generated.
    """
    validity = np.asarray(validity, dtype=bool)
    agent_valid = validity.any(axis=1)  # [A]
    candidates = np.flatnonzero(agent_valid)
    n_keep = int(rng.integers(0, len(candidates) + 1))
    keep = rng.choice(candidates, size=n_keep, replace=False) if n_keep else []
    m = np.zeros((validity.shape[0], 1, 1), dtype=bool)
    m[np.asarray(keep, dtype=int), 0, 0] = True
    return m

def sample_control_mask(shape, rng, p_agent=0.1, p_time=0.1, p_feature=0.1):
    """Control mask [A,T,D] as an outer product of per-axis Bernoulli draws."""
    A, T, D = shape
    ia = rng.random(A) < p_agent
    it = rng.random(T) < p_time
    idf = rng.random(D) < p_feature
    return ia[:, None, None] & it[None, :, None] & idf[None, None, :]


def apply_inpainting(values, spec: InpaintingSpec):
    """Overwrite entries of values [A,T,D] with spec values where masked."""
    values = np.asarray(values, dtype=np.float64)
    assert values.shape == spec.mask.shape
    return np.where(spec.mask, spec.values, values)


def impute_invalid_steps(values, validity):
    """Fill invalid steps per agent and channel.

    Interior gaps interpolate linearly between valid neighbors; boundary runs
    extrapolate linearly from the nearest two valid steps; a single valid step
    fills its row with a constant. Agents with no valid step are left alone.
    """
    values = np.array(values, dtype=np.float64)  # copy; [A,T,D]
    validity = np.asarray(validity, dtype=bool)  # [A,T]
    A, T, D = values.shape
    assert validity.shape == (A, T)
    steps = np.arange(T, dtype=np.float64)
    for a in range(A):
        vi = np.flatnonzero(validity[a])
        if vi.size == 0 or vi.size == T:
            continue
        invalid = ~validity[a]
        if vi.size == 1:
            values[a, invalid, :] = values[a, vi[0], :]
            continue
        for d in range(D):
            vals = values[a, vi, d]
            filled = np.interp(steps, vi.astype(np.float64), vals)
            # np.interp holds endpoints constant; extrapolate linearly instead
            left = invalid & (steps < vi[0])
            if left.any():
                slope = (vals[1] - vals[0]) / (vi[1] - vi[0])
                filled[left] = vals[0] + slope * (steps[left] - vi[0])
            right = invalid & (steps > vi[-1])
            if right.any():
                slope = (vals[-1] - vals[-2]) / (vi[-1] - vi[-2])
                filled[right] = vals[-1] + slope * (steps[right] - vi[-1])
            values[a, invalid, d] = filled[invalid]
    return values
