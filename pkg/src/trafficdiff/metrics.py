"""Realism metrics: per-step features, histogram likelihood models, and the
composite aggregate.

Nine features per (agent, step), in this fixed order:

    linear_speed, linear_accel, angular_speed, angular_accel,
    nearest_dist, collision, ttc, road_edge_dist, offroad

Kinematics use backward differences at 10 Hz, so a step needs enough valid
predecessors for its feature to exist; interaction features need at least one
other valid agent; road features need boundary polygons. Each extracted table
therefore carries its own validity mask.

The aggregate follows the histogram negative-log-likelihood recipe: simulated
values pool into per-bucket histograms, logged values score against them, and
per-bucket likelihoods exp(-mean NLL) average up into a composite in [0, 1].
The simulation-style aggregate buckets per (scenario, agent); the
scene-generation variant pools each scenario into one bucket per metric.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry
from .scene_tensor import RawScene

STEP_HZ = 10.0

METRIC_NAMES = (
    "linear_speed",
    "linear_accel",
    "angular_speed",
    "angular_accel",
    "nearest_dist",
    "collision",
    "ttc",
    "road_edge_dist",
    "offroad",
)
NUM_METRICS = len(METRIC_NAMES)

DEFAULT_SUPPORTS = {
    "linear_speed": (0.0, 30.0, 128),
    "linear_accel": (0.0, 20.0, 128),
    "angular_speed": (0.0, 2.0 * np.pi, 128),
    "angular_accel": (0.0, 4.0 * np.pi, 128),
    "nearest_dist": (-10.0, 50.0, 128),
    "collision": (0.0, 1.0, 2),
    "ttc": (0.0, 5.0, 128),
    "road_edge_dist": (-10.0, 50.0, 128),
    "offroad": (0.0, 1.0, 2),
}


@dataclass(frozen=True)
class HistogramConfig:
    supports: dict = field(default_factory=lambda: dict(DEFAULT_SUPPORTS))
    floor: float = 1e-6
    ttc_cap: float = 5.0
    weights: Optional[dict] = None  # metric name -> weight; None = all 1.0

    def edges(self, metric: str):
        lo, hi, n = self.supports[metric]
        return np.linspace(lo, hi, n + 1)

    def weight(self, metric: str) -> float:
        if self.weights is None:
            return 1.0
        return float(self.weights.get(metric, 1.0))


def _wrap_angle(d):
    return np.arctan2(np.sin(d), np.cos(d))


def extract_features(raw: RawScene, validity, polygons=(), ttc_cap: float = 5.0):
    """Per-step metric table for one scene.

    raw : world-frame scene (meters / radians)
    validity : [A,T] bool
    polygons : closed drivable-area boundaries, meters

    Returns (values [A,T,M], ok [A,T,M] bool).
    """
    validity = np.asarray(validity, dtype=bool)
    A, T = validity.shape
    vals = np.zeros((A, T, NUM_METRICS))
    ok = np.zeros((A, T, NUM_METRICS), dtype=bool)

    pos = np.stack([raw.x, raw.y], axis=-1)  # [A,T,2]

    # kinematics from backward differences
    dp = np.linalg.norm(pos[:, 1:] - pos[:, :-1], axis=-1) * STEP_HZ  # [A,T-1]
    speed = np.full((A, T), np.nan)
    speed[:, 1:] = dp
    speed_ok = np.zeros((A, T), dtype=bool)
    speed_ok[:, 1:] = validity[:, 1:] & validity[:, :-1]
    vals[:, :, 0] = np.where(speed_ok, speed, 0.0)
    ok[:, :, 0] = speed_ok

    accel_ok = np.zeros((A, T), dtype=bool)
    accel_ok[:, 2:] = speed_ok[:, 2:] & speed_ok[:, 1:-1]
    accel = np.zeros((A, T))
    accel[:, 2:] = np.abs(speed[:, 2:] - speed[:, 1:-1]) * STEP_HZ
    vals[:, :, 1] = np.where(accel_ok, accel, 0.0)
    ok[:, :, 1] = accel_ok

    dh = np.abs(_wrap_angle(raw.heading[:, 1:] - raw.heading[:, :-1])) * STEP_HZ
    ang = np.zeros((A, T))
    ang[:, 1:] = dh
    vals[:, :, 2] = np.where(speed_ok, ang, 0.0)
    ok[:, :, 2] = speed_ok

    ang_acc = np.zeros((A, T))
    ang_acc[:, 2:] = np.abs(ang[:, 2:] - ang[:, 1:-1]) * STEP_HZ
    vals[:, :, 3] = np.where(accel_ok, ang_acc, 0.0)
    ok[:, :, 3] = accel_ok

    # interaction features from oriented boxes
    corners = geometry.box_corners(raw.x, raw.y, raw.heading, raw.length, raw.width)
    if A >= 2:
        iu, ju = np.triu_indices(A, 1)
        d = geometry.box_signed_distance(
            corners[iu].swapaxes(0, 1), corners[ju].swapaxes(0, 1)
        )  # [T,P]
        pair_ok = (validity[iu] & validity[ju]).T  # [T,P]
        dist = np.full((T, A, A), np.inf)
        dist[:, iu, ju] = np.where(pair_ok, d, np.inf)
        dist[:, ju, iu] = dist[:, iu, ju]
        nearest = dist.min(axis=2).T  # [A,T]
        has_other = np.isfinite(nearest)
        vals[:, :, 4] = np.where(has_other, nearest, 0.0)
        ok[:, :, 4] = has_other & validity
        vals[:, :, 5] = (nearest < 0.0).astype(np.float64)
        ok[:, :, 5] = ok[:, :, 4]

        # constant-velocity time to contact of bounding circles
        vel = (
            np.stack([np.cos(raw.heading), np.sin(raw.heading)], axis=-1)
            * np.where(speed_ok, np.nan_to_num(speed), 0.0)[..., None]
        )  # [A,T,2]
        radius = 0.5 * np.hypot(raw.length, raw.width)  # [A,T]
        r = pos[ju] - pos[iu]  # [P,T,2]
        u = vel[ju] - vel[iu]
        rad = radius[iu] + radius[ju]  # [P,T]
        a_q = (u * u).sum(-1)  # [P,T]
        b_q = 2.0 * (r * u).sum(-1)
        c_q = (r * r).sum(-1) - rad**2
        disc = b_q**2 - 4.0 * a_q * c_q
        hit = (disc >= 0.0) & (a_q > 1e-12)
        sqrt_disc = np.sqrt(np.maximum(disc, 0.0))
        t_hit = np.where(hit, (-b_q - sqrt_disc) / np.maximum(2.0 * a_q, 1e-12), np.inf)
        t_hit = np.where(c_q <= 0.0, 0.0, t_hit)  # already in contact
        t_hit = np.where(t_hit >= 0.0, t_hit, np.inf)
        ttc_pair_ok = pair_ok.T & speed_ok[iu] & speed_ok[ju]  # [P,T]
        t_hit = np.where(ttc_pair_ok, t_hit, np.inf)
        ttc_mat = np.full((T, A, A), np.inf)
        ttc_mat[:, iu, ju] = t_hit.T
        ttc_mat[:, ju, iu] = t_hit.T
        ttc = np.minimum(ttc_mat.min(axis=2).T, ttc_cap)
        vals[:, :, 6] = ttc
        ok[:, :, 6] = speed_ok & (validity.sum(axis=0) > 1)[None, :] & validity

    # road features
    if len(polygons):
        onroad = geometry.in_any_polygon(pos, polygons)  # [A,T]
        best = np.full((A, T), np.inf)
        for poly in polygons:
            d, _ = geometry.point_to_ring_distance(pos, poly)
            best = np.minimum(best, d)
        vals[:, :, 7] = np.where(onroad, -best, best)
        ok[:, :, 7] = validity
        vals[:, :, 8] = (~onroad).astype(np.float64)
        ok[:, :, 8] = validity

    vals = np.where(ok, vals, 0.0)
    return vals, ok


def histogram_probs(values, metric: str, cfg: HistogramConfig):
    """Normalized bin probabilities with the configured floor; values outside
    the support clamp into the edge bins."""
    edges = cfg.edges(metric)
    values = np.asarray(values, dtype=np.float64).ravel()
    n = edges.size - 1
    if values.size == 0:
        return np.full(n, cfg.floor)
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, n - 1)
    counts = np.bincount(idx, minlength=n).astype(np.float64)
    return np.maximum(counts / values.size, cfg.floor)


def nll(probs, value, metric: str, cfg: HistogramConfig):
    """Negative log likelihood of scalar values under a bin model."""
    edges = cfg.edges(metric)
    n = edges.size - 1
    idx = np.clip(np.searchsorted(edges, np.asarray(value), side="right") - 1, 0, n - 1)
    return -np.log(probs[idx])


@dataclass
class MetricsReport:
    mode: str
    composite: float
    per_metric: dict  # metric -> mean likelihood across buckets
    per_scenario: list  # one dict per scenario: metric -> likelihood
    tables: list  # per scenario: intermediate arrays / bucket detail
    weights: dict
    num_scenarios: int

    def to_json_dict(self):
        return {
            "mode": self.mode,
            "composite": self.composite,
            "per_metric": self.per_metric,
            "per_scenario": self.per_scenario,
            "tables": self.tables,
            "weights": self.weights,
            "num_scenarios": self.num_scenarios,
        }


def _scenario_step_mask(ok, step_mask):
    if step_mask is None:
        return ok
    return ok & np.asarray(step_mask, dtype=bool)[None, :, None]


def wosac_aggregate(log_tables, sim_tables, cfg: HistogramConfig = None, step_mask=None):
    """Simulation-style aggregate with per (scenario, agent, metric) buckets.

    log_tables : per scenario, (values [A,T,M], ok [A,T,M]) for the log
    sim_tables : per scenario, list over samples of (values, ok)
    step_mask : optional [T] bool restricting which steps are scored

    Agents with no valid logged entries for a metric drop out of that
    scenario's agent average; scenarios contributing nothing drop out of the
    composite.
    """
    cfg = cfg or HistogramConfig()
    per_scenario = []
    tables = []
    for (lvals, lok), sims in zip(log_tables, sim_tables):
        lok = _scenario_step_mask(lok, step_mask)
        A = lvals.shape[0]
        m_aj = np.full((A, NUM_METRICS), np.nan)
        for j, name in enumerate(METRIC_NAMES):
            for a in range(A):
                pooled = [
                    svals[a, _scenario_step_mask(sok, step_mask)[a, :, j], j]
                    for svals, sok in sims
                ]
                pooled = np.concatenate(pooled) if pooled else np.array([])
                mask = lok[a, :, j]
                if not mask.any():
                    continue
                probs = histogram_probs(pooled, name, cfg)
                nlls = nll(probs, lvals[a, mask, j], name, cfg)
                m_aj[a, j] = np.exp(-nlls.mean())
        finite = np.isfinite(m_aj)
        counts = finite.sum(axis=0)
        sums = np.where(finite, m_aj, 0.0).sum(axis=0)
        m_j = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)  # [M]
        per_scenario.append(
            {name: float(m_j[j]) for j, name in enumerate(METRIC_NAMES) if np.isfinite(m_j[j])}
        )
        tables.append({"per_agent": m_aj.tolist()})
    return _finalize("wosac", per_scenario, tables, cfg)


def scenegen_aggregate(log_tables, sim_tables, cfg: HistogramConfig = None, step_mask=None):
    """Scene-generation aggregate: one pooled bucket per (scenario, metric)."""
    cfg = cfg or HistogramConfig()
    per_scenario = []
    tables = []
    for (lvals, lok), sims in zip(log_tables, sim_tables):
        lok = _scenario_step_mask(lok, step_mask)
        m_j = np.full(NUM_METRICS, np.nan)
        for j, name in enumerate(METRIC_NAMES):
            pooled = [
                svals[:, :, j][_scenario_step_mask(sok, step_mask)[:, :, j]]
                for svals, sok in sims
            ]
            pooled = np.concatenate(pooled) if pooled else np.array([])
            mask = lok[:, :, j]
            if not mask.any():
                continue
            probs = histogram_probs(pooled, name, cfg)
            nlls = nll(probs, lvals[:, :, j][mask], name, cfg)
            m_j[j] = np.exp(-nlls.mean())
        per_scenario.append(
            {name: float(m_j[j]) for j, name in enumerate(METRIC_NAMES) if np.isfinite(m_j[j])}
        )
        tables.append({})
    return _finalize("scenegen", per_scenario, tables, cfg)


def _finalize(mode, per_scenario, tables, cfg):
    weights = {name: cfg.weight(name) for name in METRIC_NAMES}
    contributing = [s for s in per_scenario if s]
    per_metric = {}
    for name in METRIC_NAMES:
        vals = [s[name] for s in contributing if name in s]
        if vals:
            per_metric[name] = float(np.mean(vals))
    if contributing:
        scores = [
            np.mean([weights[n] * v for n, v in s.items()]) for s in contributing
        ]
        composite = float(np.mean(scores))
    else:
        composite = float("nan")
    return MetricsReport(
        mode=mode,
        composite=composite,
        per_metric=per_metric,
        per_scenario=per_scenario,
        tables=tables,
        weights=weights,
        num_scenarios=len(contributing),
    )
