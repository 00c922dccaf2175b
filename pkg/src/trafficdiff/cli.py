"""Command line interface.

Subcommands cover the full loop: synth-data makes logged scenarios from the
synthetic world, train fits the small denoiser, generate / rollout / perturb
run the sampling tasks, evaluate scores rollouts against logs, and render
draws any scenario or rollout to SVG.

Conventions shared by every subcommand:

  * --seed drives every random draw; same seed, same bytes out
  * --out names the output file or directory; when omitted, files land in
    $TRAFFICDIFF_OUT_DIR (default ".")
  * --config FILE loads flag defaults from a kvconfig text file
  * --workers is accepted for forward compatibility; this implementation
    runs single-process
  * exit code 0 on success, 2 on any error, with a one-line JSON error
    record on stderr
"""
from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import kvconfig, metrics, scenario_io, tasks
from .denoiser import OracleDenoiser
from .network import (
    NetworkConfig,
    NetworkDenoiser,
    TrainConfig,
    Trainer,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .render import render_scene
from .rollout import RolloutConfig, amortized_ar, full_ar, one_shot
from .scene_tensor import InpaintingSpec, denormalize_scene
from .world import (
    WorldConfig,
    build_behavior_mixture,
    build_world,
    prior_as_mixture,
    sample_scene,
)

OUT_DIR_ENV = "TRAFFICDIFF_OUT_DIR"


def _out_path(args, default_name):
    if args.out:
        return args.out
    return os.path.join(os.environ.get(OUT_DIR_ENV, "."), default_name)


def _world_config(args=None, meta=None) -> WorldConfig:
    """World parameters from CLI flags, falling back to scenario meta."""
    meta = meta or {}
    get = lambda flag, key, default: (
        getattr(args, flag, None) if args is not None and getattr(args, flag, None) is not None
        else meta.get(key, default)
    )
    return WorldConfig(
        template=get("template", "template", "straight"),
        num_agents=int(get("num_agents", "num_agents", 8)),
        num_lanes=int(get("num_lanes", "num_lanes", 2)),
        follower_coupling=float(get("follower_coupling", "follower_coupling", 0.0)),
    )


def _make_denoiser(args, meta=None):
    if getattr(args, "checkpoint", None):
        cfg, params, _ = load_checkpoint(args.checkpoint)
        return NetworkDenoiser(cfg, params)
    cfg = _world_config(args, meta)
    mixture = build_behavior_mixture(cfg)
    return OracleDenoiser(prior_as_mixture(mixture))


def _rollout_config(args) -> RolloutConfig:
    return RolloutConfig(
        denoise_steps=args.steps,
        sampler=args.sampler,
        replan_hz=getattr(args, "replan_hz", 10.0),
        step_rate_hz=10.0,
    )


def cmd_synth_data(args):
    rng = np.random.default_rng(args.seed)
    cfg = _world_config(args)
    road = build_world(cfg)
    mixture = build_behavior_mixture(cfg)
    out_dir = _out_path(args, "scenarios")
    os.makedirs(out_dir, exist_ok=True)
    for i in range(args.num_scenarios):
        scene, validity, assignment = sample_scene(mixture, rng)
        meta = {
            "template": cfg.template,
            "num_agents": cfg.num_agents,
            "num_lanes": cfg.num_lanes,
            "follower_coupling": cfg.follower_coupling,
            "seed": args.seed,
            "index": i,
            "assignment": list(assignment),
        }
        scenario_io.save_scenario(
            os.path.join(out_dir, f"scenario_{i:04d}.json"),
            scene, validity, road, meta,
        )
    print(f"wrote {args.num_scenarios} scenarios to {out_dir}")
    return 0


def cmd_train(args):
    rng = np.random.default_rng(args.seed)
    cfg = _world_config(args)
    road = build_world(cfg)
    mixture = build_behavior_mixture(cfg)
    net_cfg = NetworkConfig(
        d_model=args.d_model, n_heads=args.n_heads, n_layers=args.n_layers,
        patch=args.patch, d_cond=args.d_cond,
    )
    params = init_params(net_cfg, rng)

    def sampler(r):
        scene, validity, _ = sample_scene(mixture, r)
        return scene.values, validity

    trainer = Trainer(
        net_cfg, TrainConfig(lr=args.lr, batch_size=args.batch_size),
        params, sampler, cfg.history_len, roadgraph=road, rng=rng,
    )
    for step in range(args.train_steps):
        loss = trainer.step()
        if args.log_every and (step + 1) % args.log_every == 0:
            print(f"step {step + 1}/{args.train_steps} loss {loss:.5f}")
    out = _out_path(args, "denoiser.npz")
    save_checkpoint(out, net_cfg, params, {
        "train_steps": args.train_steps,
        "final_loss": trainer.loss_history[-1] if trainer.loss_history else None,
        "world": {"template": cfg.template, "num_agents": cfg.num_agents,
                  "num_lanes": cfg.num_lanes},
    })
    print(f"wrote checkpoint to {out}")
    return 0


def _load_constraints(args, shape, history_len, validity, roadgraph):
    if not getattr(args, "constraints", None):
        return None
    with open(args.constraints) as fh:
        text = fh.read()
    return tasks.compile_constraint_config(
        text, shape, history_len, validity, roadgraph=roadgraph,
    )


def cmd_generate(args):
    rng = np.random.default_rng(args.seed)
    scene, validity, road, meta = scenario_io.load_scenario(args.scenario)
    A, T, D = scene.values.shape
    denoiser = _make_denoiser(args, meta)
    inpaint = InpaintingSpec.empty((A, T, D))
    if args.context_agents:
        keep = [int(s) for s in args.context_agents.split(",")]
        mask = np.zeros((A, T, D), dtype=bool)
        mask[keep] = True
        inpaint = InpaintingSpec(mask, scene.values * mask)
    clips = ()
    compiled = _load_constraints(args, (A, T, D), scene.history_len, validity, road)
    if compiled is not None:
        inpaint = inpaint.merge(compiled.inpaint)
        validity = compiled.validity
        clips = compiled.clips
    config = RolloutConfig(denoise_steps=args.steps, sampler=args.sampler, clips=clips)
    results = tasks.run_scenegen(
        (A, T, D), scene.history_len, inpaint, validity, denoiser, config,
        rng, roadgraph=road, num_samples=args.num_samples,
    )
    out_dir = _out_path(args, "generated")
    os.makedirs(out_dir, exist_ok=True)
    for k, result in enumerate(results):
        sample_meta = dict(meta)
        sample_meta.update({"sample": k, "task": "scenegen"})
        if compiled is not None:
            sample_meta["injected_agents"] = list(compiled.injected_agents)
        scenario_io.save_rollout(
            os.path.join(out_dir, f"sample_{k:04d}.json"), result, config, sample_meta,
        )
        if args.render:
            render_scene(
                result.scene, result.validity, road,
                injected=(compiled.injected_agents if compiled else ()),
                path=os.path.join(out_dir, f"sample_{k:04d}.svg"),
            )
    print(f"wrote {len(results)} samples to {out_dir}")
    return 0


# Accepted on the command line alongside the API names.
MODE_ALIASES = {"one-shot": "one_shot", "full-ar": "full_ar",
                "amortized": "amortized_ar"}


def cmd_rollout(args):
    rng = np.random.default_rng(args.seed)
    mode = MODE_ALIASES.get(args.mode, args.mode)
    scene, validity, road, meta = scenario_io.load_scenario(args.scenario)
    denoiser = _make_denoiser(args, meta)
    compiled = _load_constraints(
        args, scene.values.shape, scene.history_len, validity, road,
    )
    clips = compiled.clips if compiled else ()
    extra = compiled.inpaint if compiled else None
    if compiled is not None:
        validity = compiled.validity
    config = _rollout_config(args)
    config = RolloutConfig(
        denoise_steps=config.denoise_steps, sampler=config.sampler,
        replan_hz=config.replan_hz, step_rate_hz=config.step_rate_hz,
        clips=clips,
    )
    if args.samples < 1:
        raise ValueError("--samples must be at least 1")
    runner = {"one_shot": one_shot, "full_ar": full_ar, "amortized_ar": amortized_ar}[mode]
    results, metas = [], []
    for k in range(args.samples):
        results.append(runner(
            scene, validity, denoiser, config, rng, roadgraph=road,
            extra_inpaint=extra,
        ))
        roll_meta = dict(meta)
        roll_meta.update({"task": "rollout", "mode": mode, "sample": k})
        metas.append(roll_meta)
    out = _out_path(args, f"rollout_{mode}.json")
    if args.samples == 1:
        # keep the single-sample record format (and its byte stability)
        metas[0].pop("sample")
        scenario_io.save_rollout(out, results[0], config, metas[0])
    else:
        scenario_io.save_rollout_set(out, results, config, metas)
    nfe = sum(r.nfe for r in results)
    print(f"wrote {len(results)} rollout sample(s) ({mode}, nfe {nfe}) to {out}")
    return 0


def cmd_perturb(args):
    rng = np.random.default_rng(args.seed)
    scene, validity, road, meta = scenario_io.load_scenario(args.scenario)
    denoiser = _make_denoiser(args, meta)
    config = RolloutConfig(denoise_steps=args.steps, sampler=args.sampler)
    result = tasks.run_log_perturbation(
        scene, validity, args.t_star, denoiser, config, rng, roadgraph=road,
    )
    out = _out_path(args, "perturbed.json")
    p_meta = dict(meta)
    p_meta.update({"task": "perturb", "t_star": args.t_star})
    scenario_io.save_rollout(out, result, config, p_meta)
    print(f"wrote perturbation (t*={args.t_star}, nfe {result.nfe}) to {out}")
    return 0


def _collect(pattern):
    if os.path.isdir(pattern):
        files = sorted(glob.glob(os.path.join(pattern, "*.json")))
    else:
        files = sorted(glob.glob(pattern)) or [pattern]
    if not files:
        raise FileNotFoundError(f"no files match {pattern!r}")
    return files


def cmd_evaluate(args):
    log_files = _collect(args.log)
    sim_files = _collect(args.sim)
    logs = []
    polygons = []
    for path in log_files:
        scene, validity, road, meta = scenario_io.load_scenario(path)
        raw = denormalize_scene(scene)
        polys = tuple(road.boundaries) if road is not None else ()
        logs.append((metrics.extract_features(raw, validity, polys), meta.get("index")))
        polygons.append(polys)
    sims = [[] for _ in log_files]
    index_of = {m: i for i, (_, m) in enumerate(logs) if m is not None}
    for k, path in enumerate(sim_files):
        for roll in scenario_io.load_rollout_samples(path):
            raw = denormalize_scene(roll["scene"])
            idx = roll["meta"].get("index")
            i = index_of.get(idx, k % len(log_files))
            sims[i].append(metrics.extract_features(raw, roll["validity"], polygons[i]))
    log_tables = [table for table, _ in logs]
    agg = metrics.wosac_aggregate if args.mode == "wosac" else metrics.scenegen_aggregate
    report = agg(log_tables, sims)
    out = _out_path(args, "report.json")
    scenario_io.save_report(out, report)
    print(f"composite {report.composite:.4f} over {report.num_scenarios} scenarios -> {out}")
    return 0


def cmd_render(args):
    with open(args.input) as fh:
        kind = json.load(fh).get("format")
    if kind == scenario_io.SCENARIO_FORMAT:
        scene, validity, road, meta = scenario_io.load_scenario(args.input)
    elif kind == scenario_io.ROLLOUT_FORMAT:
        roll = scenario_io.load_rollout(args.input)
        scene, validity, road = roll["scene"], roll["validity"], None
        meta = roll["meta"]
    else:
        raise ValueError(f"cannot render format {kind!r}")
    if road is None and args.scenario:
        _, _, road, _ = scenario_io.load_scenario(args.scenario)
    injected = meta.get("injected_agents", ())
    out = _out_path(args, os.path.basename(args.input).rsplit(".", 1)[0] + ".svg")
    render_scene(scene, validity, road, injected=injected, path=out,
                 title=meta.get("task"))
    print(f"wrote {out}")
    return 0


def _add_common(p, out_help):
    p.add_argument("--seed", type=int, default=0, help="rng seed")
    p.add_argument("--out", help=out_help)
    p.add_argument("--config", help="kvconfig file with flag defaults")
    p.add_argument("--workers", type=int, default=1,
                   help="worker processes (accepted; runs single-process)")


def _add_world(p):
    p.add_argument("--template", choices=("straight", "curve", "intersection"))
    p.add_argument("--num-agents", type=int)
    p.add_argument("--num-lanes", type=int)
    p.add_argument("--follower-coupling", type=float)


def _add_denoiser(p):
    p.add_argument("--checkpoint", help="trained denoiser .npz; omit to use "
                   "the closed-form oracle for the scenario's world")
    p.add_argument("--steps", type=int, default=16, help="denoise steps")
    p.add_argument("--sampler", choices=("ancestral", "heun"), default="ancestral")


def build_parser():
    parser = argparse.ArgumentParser(prog="trafficdiff")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="sample logged scenarios from the synthetic world")
    _add_common(p, "output directory")
    _add_world(p)
    p.add_argument("--num-scenarios", type=int, default=16)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train", help="train the small denoiser")
    _add_common(p, "checkpoint path (.npz)")
    _add_world(p)
    p.add_argument("--train-steps", type=int, default=400)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=3e-2)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--n-layers", type=int, default=2)
    p.add_argument("--patch", type=int, default=1)
    p.add_argument("--d-cond", type=int, default=32)
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="scene generation from a scenario's canvas")
    _add_common(p, "output directory")
    _add_world(p)
    _add_denoiser(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--num-samples", type=int, default=8)
    p.add_argument("--context-agents", help="comma-separated agent slots to pin")
    p.add_argument("--constraints", help="constraint config text file")
    p.add_argument("--render", action="store_true")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("rollout", help="behavior prediction rollout from history")
    _add_common(p, "output file")
    _add_world(p)
    _add_denoiser(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--mode", default="one_shot",
                   choices=("one_shot", "full_ar", "amortized_ar",
                            "one-shot", "full-ar", "amortized"))
    p.add_argument("--replan-hz", type=float, default=10.0)
    p.add_argument("--samples", type=int, default=1,
                   help="independent rollout samples per scenario")
    p.add_argument("--constraints")
    p.set_defaults(fn=cmd_rollout)

    p = sub.add_parser("perturb", help="re-noise a log to t* and denoise back")
    _add_common(p, "output file")
    _add_world(p)
    _add_denoiser(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--t-star", type=float, required=True)
    p.set_defaults(fn=cmd_perturb)

    p = sub.add_parser("evaluate", help="histogram realism report: sims vs logs")
    _add_common(p, "report path")
    p.add_argument("--log", required=True, help="scenario file, glob, or directory")
    p.add_argument("--sim", required=True, help="rollout file, glob, or directory")
    p.add_argument("--mode", choices=("wosac", "scenegen"), default="wosac")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("render", help="draw a scenario or rollout as SVG")
    _add_common(p, "svg path")
    p.add_argument("--input", required=True)
    p.add_argument("--scenario", help="scenario file supplying the roadgraph "
                   "when rendering a rollout")
    p.set_defaults(fn=cmd_render)

    return parser


def _apply_config_defaults(parser, argv):
    """Pre-scan for --config and fold its keys in as parser defaults."""
    if "--config" not in argv:
        return
    path = argv[argv.index("--config") + 1]
    with open(path) as fh:
        msg = kvconfig.parse_text(fh.read())
    flat = {}
    for key, values in msg.items():
        if values and not isinstance(values[0], dict):
            value = values[0]
            flat[key.replace("-", "_")] = (
                str(value) if isinstance(value, kvconfig.EnumSymbol) else value
            )
    for action in parser._subparsers._group_actions[0].choices.values():
        known = {a.dest for a in action._actions}
        action.set_defaults(**{k: v for k, v in flat.items() if k in known})


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        if args.workers < 1:
            raise ValueError("--workers must be >= 1")
        return args.fn(args)
    except SystemExit as exc:
        # argparse's own exits (bad flags, --help) pass through as-is
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - single reporting point
        record = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
