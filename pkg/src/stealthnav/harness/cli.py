"""Command-line entry points: train, eval, render, gen-env, project."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .. import dtqn
from ..baselines import PlannerId
from ..projection import (
    default_scan_poses,
    read_frames,
    run_projected_pipeline,
    synthesize_frames,
    write_frames,
)
from ..world import generate_world, load_scene, metrics, save_scene, scene_to_dict
from .config import SimConfig
from .episodes import save_record
from .evaluate import evaluate
from .render import render_episode, render_record_file
from .train import train


def _load_config(path: str | None) -> SimConfig:
    return SimConfig.from_file(path) if path else SimConfig()


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    ckpt, log_path = train(
        cfg, master_seed=args.seed, out_dir=args.out, episodes=args.episodes,
        k=args.k, sequence_mode=args.mode, feature_dump=args.feature_dump,
        quiet=args.quiet)
    print(f"trained {ckpt.episodes} episodes -> {args.out}")
    print(f"log: {log_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    report, _ = evaluate(
        cfg, PlannerId(args.planner), master_seed=args.seed,
        checkpoint_path=args.checkpoint, n_envs=args.envs,
        episodes_per_env=args.episodes, out_dir=args.out,
        save_records=args.save_records, workers=args.workers)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return 0


def cmd_render(args) -> int:
    render_record_file(args.record, args.out, width=args.width)
    print(f"wrote {args.out}")
    return 0


def cmd_gen_env(args) -> int:
    cfg = _load_config(args.config)
    wcfg = cfg.world
    if args.seed is not None:
        from dataclasses import replace
        wcfg = replace(wcfg, seed=args.seed)
    world = generate_world(wcfg)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_scene(world, args.out)
    cfg.save(os.path.splitext(args.out)[0] + "_config_resolved.json")
    print(f"wrote {args.out}")
    return 0


def cmd_project(args) -> int:
    cfg = _load_config(args.config)
    ckpt = dtqn.load_checkpoint(args.checkpoint)
    if args.frames:
        frames = read_frames(args.frames)
        world = load_scene(args.scene)
        enemy_states = [list(world.enemies)] * len(frames)
    else:
        world = load_scene(args.scene)
        poses = default_scan_poses(world.config)
        frames, enemy_states = synthesize_frames(
            world, poses, args.n_frames, cfg.projection.lidar, seed=args.seed or 0)
        if args.save_frames:
            write_frames(frames, args.save_frames)
    record = run_projected_pipeline(
        frames, enemy_states, world.config, cfg.projection, cfg.controller,
        cfg.tactics, ckpt)
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config_resolved.json"))
    rec_path = os.path.join(args.out, "projected_record.json")
    save_record(record, scene_to_dict(world), rec_path)
    m = metrics(record)
    print(json.dumps({
        "frames": len(frames), "steps": len(record.steps) - 1,
        "success": m.success, "collided": m.collided,
        "exposure_steps": m.exposure_steps,
    }, sort_keys=True, indent=2))
    if args.render:
        svg_path = os.path.join(args.out, "projected.svg")
        render_episode(record, scene_to_dict(world), svg_path)
        print(f"wrote {svg_path}")
    print(f"wrote {rec_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="stealthnav",
        description="Adversary-aware 2D navigation simulator and benchmark suite")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the subgoal selector online")
    t.add_argument("--config", default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--episodes", type=int, default=None)
    t.add_argument("--k", type=int, default=None, help="override sequence length")
    t.add_argument("--mode", choices=("tile", "history"), default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--feature-dump", default=None,
                   help="also write per-decision feature rows to this CSV")
    t.add_argument("--verbose", dest="quiet", action="store_false")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="benchmark one planner")
    e.add_argument("--config", default=None)
    e.add_argument("--planner", required=True,
                   choices=[pl.value for pl in PlannerId])
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--envs", type=int, default=None)
    e.add_argument("--episodes", type=int, default=None)
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--out", default=None)
    e.add_argument("--save-records", action="store_true")
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="render an episode record to SVG")
    r.add_argument("--record", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--width", type=int, default=900)
    r.set_defaults(func=cmd_render)

    g = sub.add_parser("gen-env", help="generate and save a scene file")
    g.add_argument("--config", default=None)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_env)

    j = sub.add_parser("project", help="run the point-cloud projection pipeline")
    j.add_argument("--config", default=None)
    j.add_argument("--scene", required=True)
    j.add_argument("--checkpoint", required=True)
    j.add_argument("--frames", default=None,
                   help="read frames from this file instead of synthesizing")
    j.add_argument("--n-frames", type=int, default=60)
    j.add_argument("--seed", type=int, default=0)
    j.add_argument("--save-frames", default=None)
    j.add_argument("--render", action="store_true")
    j.add_argument("--out", required=True)
    j.set_defaults(func=cmd_project)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
