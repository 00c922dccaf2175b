"""JSON serialization for scenes, rollout results, and metric reports.

Every file carries a "format" tag checked on load. Output is byte-stable
for identical inputs (sorted keys, fixed separators). Wall-clock step
timings never serialize; they vary run to run and would break artifact
diffing.
"""
from __future__ import annotations

import json

import numpy as np

from .rollout import RolloutConfig, RolloutResult
from .scene_tensor import SceneTensor
from .world import Lane, RoadGraph

SCENARIO_FORMAT = "scenario-v1"
ROLLOUT_FORMAT = "rollout-v1"
ROLLOUT_SET_FORMAT = "rollout-set-v1"
REPORT_FORMAT = "report-v1"


def _dump(path, obj):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    with open(path, "w") as fh:
        fh.write(text + "\n")


def _load(path, expected_format):
    with open(path) as fh:
        obj = json.load(fh)
    got = obj.get("format")
    if got != expected_format:
        raise ValueError(f"expected {expected_format!r}, found {got!r} in {path}")
    return obj


def roadgraph_to_json(road: RoadGraph):
    return {
        "lanes": [
            {"points": np.asarray(l.points).tolist(), "speed": float(l.speed)}
            for l in road.lanes
        ],
        "boundaries": [np.asarray(b).tolist() for b in road.boundaries],
    }


def roadgraph_from_json(obj) -> RoadGraph:
    lanes = tuple(
        Lane(points=np.asarray(l["points"], dtype=np.float64), speed=float(l["speed"]))
        for l in obj["lanes"]
    )
    boundaries = tuple(np.asarray(b, dtype=np.float64) for b in obj["boundaries"])
    return RoadGraph(lanes=lanes, boundaries=boundaries)


def save_scenario(path, scene: SceneTensor, validity, roadgraph=None, meta=None):
    obj = {
        "format": SCENARIO_FORMAT,
        "history_len": int(scene.history_len),
        "values": np.asarray(scene.values).tolist(),
        "validity": np.asarray(validity, dtype=bool).tolist(),
        "roadgraph": roadgraph_to_json(roadgraph) if roadgraph is not None else None,
        "meta": meta or {},
    }
    _dump(path, obj)


def load_scenario(path):
    """Returns (scene, validity, roadgraph or None, meta)."""
    obj = _load(path, SCENARIO_FORMAT)
    scene = SceneTensor(
        values=np.asarray(obj["values"], dtype=np.float64),
        history_len=int(obj["history_len"]),
    )
    validity = np.asarray(obj["validity"], dtype=bool)
    road = roadgraph_from_json(obj["roadgraph"]) if obj["roadgraph"] else None
    return scene, validity, road, obj.get("meta", {})


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def rollout_record(result: RolloutResult, config: RolloutConfig = None, meta=None):
    return {
        "format": ROLLOUT_FORMAT,
        "history_len": int(result.scene.history_len),
        "values": np.asarray(result.scene.values).tolist(),
        "validity": np.asarray(result.validity, dtype=bool).tolist(),
        "nfe": int(result.nfe),
        "noise_levels": _jsonable(result.noise_levels),
        "config": (
            {
                "denoise_steps": config.denoise_steps,
                "sampler": config.sampler,
                "replan_hz": config.replan_hz,
                "step_rate_hz": config.step_rate_hz,
            }
            if config is not None
            else None
        ),
        "meta": meta or {},
    }


def save_rollout(path, result: RolloutResult, config: RolloutConfig = None, meta=None):
    _dump(path, rollout_record(result, config, meta))


def save_rollout_set(path, results, config: RolloutConfig = None, metas=None):
    """Bundle K independent samples of one scenario into a single file."""
    metas = metas if metas is not None else [None] * len(results)
    obj = {
        "format": ROLLOUT_SET_FORMAT,
        "samples": [rollout_record(r, config, m) for r, m in zip(results, metas)],
    }
    _dump(path, obj)


def _parse_rollout(obj):
    return {
        "scene": SceneTensor(
            values=np.asarray(obj["values"], dtype=np.float64),
            history_len=int(obj["history_len"]),
        ),
        "validity": np.asarray(obj["validity"], dtype=bool),
        "nfe": int(obj["nfe"]),
        "noise_levels": obj.get("noise_levels", {}),
        "config": obj.get("config"),
        "meta": obj.get("meta", {}),
    }


def load_rollout(path):
    """Returns a dict: scene, validity, nfe, noise_levels, config, meta."""
    return _parse_rollout(_load(path, ROLLOUT_FORMAT))


def load_rollout_samples(path):
    """List of rollout dicts from either a single-record or a set file."""
    with open(path) as fh:
        obj = json.load(fh)
    got = obj.get("format")
    if got == ROLLOUT_FORMAT:
        return [_parse_rollout(obj)]
    if got == ROLLOUT_SET_FORMAT:
        return [_parse_rollout(rec) for rec in obj["samples"]]
    raise ValueError(f"expected a rollout file, found {got!r} in {path}")


def save_report(path, report):
    obj = {"format": REPORT_FORMAT}
    obj.update(_jsonable(report.to_json_dict()))
    _dump(path, obj)


def load_report(path):
    return _load(path, REPORT_FORMAT)
