"""Trainable scene denoiser: a small factorized transformer over agent/time
tokens with noise-level conditioning, built on the local autodiff tape.

Layout per forward pass:

  * inputs per (agent, step): concat of noisy scene z, pinned values, pin
    mask, and a validity flag -> 3*D+1 channels
  * temporal patching groups `patch` consecutive steps into one token
    (requires patch | num_steps; patch in {8,4,2,1})
  * sinusoidal embedding of the per-step noise level, mean-pooled per patch,
    run through a 2-layer MLP into a conditioning vector
  * each block: time-axis attention, agent-axis attention, cross-attention
    to road tokens, MLP; every sublayer is modulated by conditioning-derived
    shift/scale/gate whose projections start at zero, so the network is the
    identity-to-zero map at initialization
  * road tokens come from a per-point MLP max-pooled over each polyline
  * zero-initialized head emits the v prediction per step

Invalid (agent, step) tokens are masked out as attention keys but still
produce (ignored) outputs. The network is deterministic given parameters.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .denoiser import Denoiser, DenoiserContext
from .diffusion import forward_noise, v_target, monotone_schedule, _per_step
from .scene_tensor import (
    NUM_FEATURES,
    POSITION_SCALE,
    make_bp_mask,
    sample_scenegen_mask,
    sample_control_mask,
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    feature_dim: int = NUM_FEATURES
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    patch: int = 1
    d_cond: int = 64
    mlp_ratio: int = 4
    n_road_tokens: int = 16

    def __post_init__(self):
        assert self.patch in (8, 4, 2, 1), "patch size must be one of 8/4/2/1"
        assert self.d_model % self.n_heads == 0
        assert self.d_cond % 2 == 0

    @property
    def in_channels(self):
        return 3 * self.feature_dim + 1


def _xavier(rng, fan_in, fan_out):
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


def init_params(cfg: NetworkConfig, rng) -> dict:
    """Fresh parameter dict, name -> Tensor(requires_grad=True)."""
    d, dc, P = cfg.d_model, cfg.d_cond, cfg.patch
    hidden = cfg.mlp_ratio * d
    p = {}

    def lin(name, fan_in, fan_out, zero=False):
        w = np.zeros((fan_in, fan_out)) if zero else _xavier(rng, fan_in, fan_out)
        p[f"{name}.w"] = Tensor(w, requires_grad=True)
        p[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)

    lin("patch_embed", P * cfg.in_channels, d)
    lin("cond.fc1", dc, dc)
    lin("cond.fc2", dc, dc)
    lin("road.fc1", 4, d)
    lin("road.fc2", d, d)
    lin("road.out", d, d)
    for i in range(cfg.n_layers):
        b = f"blocks.{i}"
        lin(f"{b}.mod", dc, 12 * d, zero=True)
        for sub in ("time", "agent", "road"):
            lin(f"{b}.{sub}.wq", d, d)
            lin(f"{b}.{sub}.wk", d, d)
            lin(f"{b}.{sub}.wv", d, d)
            lin(f"{b}.{sub}.wo", d, d)
        lin(f"{b}.mlp.fc1", d, hidden)
        lin(f"{b}.mlp.fc2", hidden, d)
    lin("head.mod", dc, 2 * d, zero=True)
    lin("head.out", d, P * cfg.feature_dim, zero=True)
    return p


def sinusoidal_embedding(t, dim):
    """t in [0,1], any shape -> [..., dim] fixed features."""
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(1000.0), half))
    ang = t[..., None] * freqs  # [..., half]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def _linear(p, name, x):
    return ad.matmul(x, p[f"{name}.w"]) + p[f"{name}.b"]


def _mha(p, name, n_heads, x_q, x_kv, key_mask=None):
    """Multi-head attention. x_q [B,Sq,d], x_kv [B',Sk,d] (B' broadcasts),
    key_mask additive ndarray broadcastable to [B,H,Sq,Sk]."""
    d = x_q.shape[-1]
    dh = d // n_heads

    def heads(x, S):
        x = ad.reshape(x, (-1, S, n_heads, dh))
        return ad.transpose(x, (0, 2, 1, 3))  # [B,H,S,dh]

    Sq, Sk = x_q.shape[-2], x_kv.shape[-2]
    q = heads(_linear(p, f"{name}.wq", x_q), Sq)
    k = heads(_linear(p, f"{name}.wk", x_kv), Sk)
    v = heads(_linear(p, f"{name}.wv", x_kv), Sk)
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    att = ad.softmax(scores, axis=-1, additive_mask=key_mask)
    out = ad.matmul(att, v)  # [B,H,Sq,dh]
    out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (-1, Sq, d))
    return _linear(p, f"{name}.wo", out)


def _modulate(h_norm, shift, scale):
    return ad.add(ad.mul(h_norm, ad.add(scale, 1.0)), shift)


def encode_roadgraph(p, cfg: NetworkConfig, polylines):
    """Polylines [(points [N,2] meters, kind)] -> road tokens [R, d] or None.

    Keeps at most n_road_tokens polylines; positions enter in normalized
    units, kind as a two-way one-hot.
    """
    polylines = list(polylines)[: cfg.n_road_tokens]
    if not polylines:
        return None
    toks = []
    for points, kind in polylines:
        pts = np.asarray(points, dtype=np.float64) * POSITION_SCALE  # [N,2]
        feat = np.concatenate(
            [pts, np.full((len(pts), 1), kind == 0, float), np.full((len(pts), 1), kind == 1, float)],
            axis=1,
        )
        h = ad.gelu(_linear(p, "road.fc1", Tensor(feat)))
        h = _linear(p, "road.fc2", h)
        toks.append(ad.reshape(ad.max_pool(h, axis=0), (1, -1)))
    tokens = ad.concat(toks, axis=0)  # [R,d]
    return _linear(p, "road.out", tokens)


def forward(p, cfg: NetworkConfig, z, t_steps, pin_values, pin_mask, validity,
            road_tokens=None):
    """Run the denoiser.

    z : [B,A,T,D] noisy scenes
    t_steps : [B,T] per-step noise levels in [0,1]
    pin_values, pin_mask : [B,A,T,D] conditioning (mask 1 = entry pinned)
    validity : [B,A,T] bool
    road_tokens : Tensor [R,d] from encode_roadgraph, or None

    Returns a Tensor [B,A,T,D] with the v prediction.
    """
    B, A, T, D = z.shape
    P = cfg.patch
    assert T % P == 0, "patch size must divide the step count"
    N = T // P
    d = cfg.d_model

    pin_values = pin_values * pin_mask
    feats = np.concatenate(
        [z, pin_values, pin_mask, validity[..., None].astype(np.float64)], axis=-1
    )  # [B,A,T,Cin]
    feats = feats.reshape(B, A, N, P * cfg.in_channels)
    h = _linear(p, "patch_embed", Tensor(feats))  # [B,A,N,d]

    # conditioning from patch-mean noise level
    t_tok = np.asarray(t_steps, dtype=np.float64).reshape(B, N, P).mean(axis=2)
    emb = sinusoidal_embedding(t_tok, cfg.d_cond)  # [B,N,dc]
    c = _linear(p, "cond.fc2", ad.gelu(_linear(p, "cond.fc1", Tensor(emb))))

    tok_valid = validity.reshape(B, A, N, P).any(axis=3)  # [B,A,N]
    if tok_valid.all():
        time_mask = agent_mask = None
    else:
        neg = -1e9
        time_mask = np.where(tok_valid, 0.0, neg).reshape(B * A, 1, 1, N)
        agent_mask = np.where(tok_valid.transpose(0, 2, 1), 0.0, neg).reshape(B * N, 1, 1, A)

    for i in range(cfg.n_layers):
        b = f"blocks.{i}"
        mods = ad.split(_linear(p, f"{b}.mod", c), 12, axis=-1)  # 12 x [B,N,d]
        mods = [ad.reshape(m, (B, 1, N, d)) for m in mods]

        # time-axis attention
        x = _modulate(ad.layer_norm(h), mods[0], mods[1])
        x = ad.reshape(x, (B * A, N, d))
        out = _mha(p, f"{b}.time", cfg.n_heads, x, x, time_mask)
        h = ad.add(h, ad.mul(mods[2], ad.reshape(out, (B, A, N, d))))

        # agent-axis attention
        x = _modulate(ad.layer_norm(h), mods[3], mods[4])
        x = ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (B * N, A, d))
        out = _mha(p, f"{b}.agent", cfg.n_heads, x, x, agent_mask)
        out = ad.transpose(ad.reshape(out, (B, N, A, d)), (0, 2, 1, 3))
        h = ad.add(h, ad.mul(mods[5], out))

        # cross-attention to road tokens
        if road_tokens is not None:
            x = _modulate(ad.layer_norm(h), mods[6], mods[7])
            x = ad.reshape(x, (B, A * N, d))
            kv = ad.reshape(ad.layer_norm(road_tokens), (1, -1, d))
            out = _mha(p, f"{b}.road", cfg.n_heads, x, kv)
            h = ad.add(h, ad.mul(mods[8], ad.reshape(out, (B, A, N, d))))

        # MLP
        x = _modulate(ad.layer_norm(h), mods[9], mods[10])
        x = ad.gelu(_linear(p, f"{b}.mlp.fc1", x))
        x = _linear(p, f"{b}.mlp.fc2", x)
        h = ad.add(h, ad.mul(mods[11], x))

    mods = ad.split(_linear(p, "head.mod", c), 2, axis=-1)
    shift = ad.reshape(mods[0], (B, 1, N, d))
    scale = ad.reshape(mods[1], (B, 1, N, d))
    x = _modulate(ad.layer_norm(h), shift, scale)
    out = _linear(p, "head.out", x)  # [B,A,N,P*D]
    return ad.reshape(out, (B, A, T, D))


class NetworkDenoiser(Denoiser):
    """Denoiser-contract adapter around the transformer."""

    def __init__(self, cfg: NetworkConfig, params: dict):
        super().__init__()
        self.cfg = cfg
        self.params = params
        self._road_cache = {}

    def road_tokens_for(self, roadgraph):
        """Cache encoded road tokens per roadgraph (weights fixed at inference)."""
        if roadgraph is None:
            return None
        key = id(roadgraph)
        if key not in self._road_cache:
            with ad.no_grad():
                self._road_cache[key] = encode_roadgraph(
                    self.params, self.cfg, roadgraph.context_polylines()
                )
        return self._road_cache[key]

    def invalidate_cache(self):
        self._road_cache.clear()

    def _predict_v(self, z, t, ctx: DenoiserContext):
        A, T, D = z.shape
        tp = _per_step(t)
        if np.ndim(tp) == 0:
            t_steps = np.full((1, T), float(tp))
        else:
            t_steps = tp[0, :, 0][None, :]
        if ctx is not None and ctx.inpainting is not None:
            pin_mask = np.broadcast_to(
                ctx.inpainting.mask.astype(np.float64), z.shape
            )[None]
            pin_values = np.broadcast_to(ctx.inpainting.values, z.shape)[None]
        else:
            pin_mask = np.zeros((1, A, T, D))
            pin_values = np.zeros((1, A, T, D))
        validity = (
            np.asarray(ctx.validity, dtype=bool)[None]
            if ctx is not None and ctx.validity is not None
            else np.ones((1, A, T), dtype=bool)
        )
        road = self.road_tokens_for(ctx.roadgraph if ctx is not None else None)
        with ad.no_grad():
            out = forward(
                self.params, self.cfg, z[None], t_steps, pin_values, pin_mask,
                validity, road,
            )
        return out.data[0]


def masked_v_loss(pred: Tensor, target, validity):
    """Mean squared error on v over valid (agent, step) entries. Pinned
    context entries stay in the loss; invalid entries are excluded."""
    w = np.broadcast_to(
        np.asarray(validity, dtype=np.float64)[..., None], pred.shape
    )
    diff = ad.add(pred, -np.asarray(target))
    total = ad.sum_(ad.mul(ad.mul(diff, diff), w))
    return ad.mul(total, 1.0 / max(w.sum(), 1.0))


@dataclass
class TrainConfig:
    lr: float = 3e-2
    momentum: float = 0.9
    grad_clip: float = 1.0
    batch_size: int = 8
    control_prob: float = 0.1


class Trainer:
    """SGD with momentum and global gradient-norm clipping.

    Each sample draws its noise-level mode (shared scalar vs the monotone
    per-step schedule) and its conditioning mode (history context vs
    scene-generation context), both as fair coin flips; sparse control pins
    are unioned on top. Mode draws are counted for downstream checks.
    """

    def __init__(self, cfg: NetworkConfig, train_cfg: TrainConfig, params,
                 scene_sampler, history_len, roadgraph=None, rng=None):
        self.cfg = cfg
        self.train_cfg = train_cfg
        self.params = params
        self.scene_sampler = scene_sampler  # rng -> (values [A,T,D], validity [A,T])
        self.history_len = history_len
        self.roadgraph = roadgraph
        self.rng = rng or np.random.default_rng(0)
        self.momentum = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.loss_history = []
        self.t_mode_counts = {"scalar": 0, "schedule": 0}
        self.mask_mode_counts = {"history": 0, "scenegen": 0}

    def _draw_batch(self):
        tc = self.train_cfg
        zs, ts, pvs, pms, vals, targets = [], [], [], [], [], []
        for _ in range(tc.batch_size):
            values, validity = self.scene_sampler(self.rng)
            A, T, D = values.shape
            if self.rng.random() < 0.5:
                t_vec = np.full(T, float(self.rng.random()))
                self.t_mode_counts["scalar"] += 1
            else:
                t_vec = monotone_schedule(self.history_len, T - self.history_len)
                self.t_mode_counts["schedule"] += 1
            if self.rng.random() < 0.5:
                base = np.broadcast_to(make_bp_mask(self.history_len, T), values.shape)
                self.mask_mode_counts["history"] += 1
            else:
                base = sample_scenegen_mask(validity, self.rng)
                base = np.broadcast_to(base, values.shape)
                self.mask_mode_counts["scenegen"] += 1
            control = sample_control_mask(values.shape, self.rng, p_agent=tc.control_prob,
                                          p_time=tc.control_prob, p_feature=tc.control_prob)
            pin = base | control
            z, eps = forward_noise(values, t_vec, self.rng)
            target = v_target(values, eps, t_vec)
            zs.append(z)
            ts.append(t_vec)
            pvs.append(values)
            pms.append(pin.astype(np.float64))
            vals.append(validity)
            targets.append(target)
        return (np.stack(zs), np.stack(ts), np.stack(pvs), np.stack(pms),
                np.stack(vals), np.stack(targets))

    def step(self) -> float:
        z, t_steps, pin_values, pin_mask, validity, target = self._draw_batch()
        for v in self.params.values():
            v.grad = None
        road = None
        if self.roadgraph is not None:
            road = encode_roadgraph(self.params, self.cfg,
                                    self.roadgraph.context_polylines())
        pred = forward(self.params, self.cfg, z, t_steps, pin_values, pin_mask,
                       validity, road)
        loss = masked_v_loss(pred, target, validity)
        loss.backward()
        self._apply_grads()
        value = float(loss.data)
        self.loss_history.append(value)
        return value

    def _apply_grads(self):
        tc = self.train_cfg
        grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.data))
                 for k, v in self.params.items()}
        gnorm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        coef = 1.0 if gnorm <= tc.grad_clip else tc.grad_clip / gnorm
        for k, v in self.params.items():
            buf = self.momentum[k]
            buf *= tc.momentum
            buf += grads[k] * coef
            v.data = v.data - tc.lr * buf


def save_checkpoint(path, cfg: NetworkConfig, params: dict, extra=None):
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "extra": extra or {},
    }
    arrays = {f"param:{k}": v.data for k, v in params.items()}
    with open(path, "wb") as fh:
        np.savez_compressed(fh, meta_json=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path):
    """Returns (NetworkConfig, params dict, extra dict)."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta_json"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        cfg = NetworkConfig(**meta["config"])
        params = {}
        for key in data.files:
            if not key.startswith("param:"):
                continue
            name = key[len("param:"):]
            arr = data[key]
            if list(arr.shape) != meta["shapes"][name]:
                raise ValueError(f"shape mismatch for {name}")
            params[name] = Tensor(arr, requires_grad=True)
    return cfg, params, meta.get("extra", {})
