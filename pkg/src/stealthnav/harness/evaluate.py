"""Paired-seed benchmark evaluation and aggregate reporting.

Environment layouts derive from (master seed, env index) and episode enemy
motion from (master seed, env, episode), independent of the planner, so
planner comparisons are paired. Episodes can fan out across worker processes;
results are keyed by (env, episode) and therefore identical for any worker
count.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import dtqn
from ..baselines import PlannerId, make_policy
from ..world import (
    WorldConfig,
    _stream,
    derive_seed,
    generate_world,
    metrics,
    scene_to_dict,
)
from .config import SimConfig
from .episodes import run_episode, save_record

EVAL_LOG_HEADER = ("planner,env,episode,seed,success,collision,steps,"
                   "time_to_goal,path_length,safety_margin,exposure")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


@dataclass
class BenchmarkReport:
    planner: str
    n_envs: int
    episodes_per_env: int
    n_episodes: int
    success_rate: float
    collision_rate: float
    time_to_goal_mean: float
    time_to_goal_se: float
    path_length_mean: float
    path_length_se: float
    safety_margin_mean: float
    safety_margin_se: float
    exposure_mean: float
    exposure_se: float
    master_seed: int
    config_hash: str
    env_seeds: list = field(default_factory=list)
    schema: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps(self.to_dict(), sort_keys=True, indent=2))


def env_world_config(cfg: SimConfig, master_seed: int, env_index: int) -> WorldConfig:
    """Deterministic per-environment world shape, independent of planner."""
    env_seed = derive_seed(master_seed, "env", env_index)
    rng = _stream(env_seed, "env-shape")
    n_obs = cfg.world.n_obstacles
    n_en = cfg.world.n_enemies
    if cfg.eval.n_obstacles_range is not None:
        lo, hi = cfg.eval.n_obstacles_range
        n_obs = int(rng.integers(lo, hi + 1))
    if cfg.eval.n_enemies_range is not None:
        lo, hi = cfg.eval.n_enemies_range
        n_en = int(rng.integers(lo, hi + 1))
    return replace(cfg.world, seed=env_seed, n_obstacles=n_obs, n_enemies=n_en)


def run_eval_episode(cfg: SimConfig, planner: PlannerId, wcfg: WorldConfig,
                     master_seed: int, env_index: int, episode_index: int,
                     checkpoint: dtqn.Checkpoint | None):
    """One greedy evaluation episode; returns (row dict, record, scene dict)."""
    ep_seed = derive_seed(master_seed, "episode", env_index, episode_index)
    world = generate_world(wcfg)
    world.reseed_enemies(ep_seed)
    scene = scene_to_dict(world)
    policy = make_policy(
        planner, controller=cfg.controller, tactics=cfg.tactics,
        baselines=cfg.baselines, checkpoint=checkpoint, epsilon=0.0)
    record = run_episode(world, policy, planner=PlannerId(planner).value, seed=ep_seed,
                         reward_weights=cfg.reward)
    m = metrics(record)
    row = {
        "planner": PlannerId(planner).value,
        "env": env_index,
        "episode": episode_index,
        "seed": ep_seed,
        "success": m.success,
        "collision": m.collided,
        "steps": len(record.steps) - 1,
        "time_to_goal": m.time_to_goal,
        "path_length": m.path_length,
        "safety_margin": m.safety_margin,
        "exposure": m.exposure_steps,
    }
    return row, record, scene


def _mean_se(values) -> tuple[float, float]:
    vals = [v for v in values if not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        return (float("nan"), float("nan"))
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return mean, se


def aggregate_rows(planner: PlannerId, rows: list[dict], cfg: SimConfig,
                   master_seed: int, n_envs: int, episodes_per_env: int,
                   env_seeds: list[int]) -> BenchmarkReport:
    """Fold per-episode rows into the aggregate report. Time-to-goal and path
    length average over successful episodes; the other metrics over all."""
    succ = [r["success"] for r in rows]
    coll = [r["collision"] for r in rows]
    t_mean, t_se = _mean_se([r["time_to_goal"] for r in rows if r["success"]])
    p_mean, p_se = _mean_se([r["path_length"] for r in rows if r["success"]])
    s_mean, s_se = _mean_se([r["safety_margin"] for r in rows])
    e_mean, e_se = _mean_se([float(r["exposure"]) for r in rows])
    return BenchmarkReport(
        planner=PlannerId(planner).value,
        n_envs=n_envs,
        episodes_per_env=episodes_per_env,
        n_episodes=len(rows),
        success_rate=float(np.mean(succ)) if rows else float("nan"),
        collision_rate=float(np.mean(coll)) if rows else float("nan"),
        time_to_goal_mean=t_mean, time_to_goal_se=t_se,
        path_length_mean=p_mean, path_length_se=p_se,
        safety_margin_mean=s_mean, safety_margin_se=s_se,
        exposure_mean=e_mean, exposure_se=e_se,
        master_seed=master_seed,
        config_hash=cfg.config_hash(),
        env_seeds=env_seeds,
    )


def _worker(task) -> tuple[int, int, dict]:
    cfg_dict, planner_value, wcfg_dict, master_seed, env_i, ep_j, ckpt_path = task
    cfg = SimConfig.from_dict(cfg_dict)
    wcfg = WorldConfig.from_dict(wcfg_dict)
    ckpt = dtqn.load_checkpoint(ckpt_path) if ckpt_path else None
    row, _, _ = run_eval_episode(cfg, PlannerId(planner_value), wcfg,
                                 master_seed, env_i, ep_j, ckpt)
    return env_i, ep_j, row


def evaluate(cfg: SimConfig, planner: PlannerId, master_seed: int,
             checkpoint: dtqn.Checkpoint | None = None,
             checkpoint_path: str | None = None,
             n_envs: int | None = None, episodes_per_env: int | None = None,
             out_dir: str | None = None, save_records: bool = False,
             workers: int = 1) -> tuple[BenchmarkReport, list[dict]]:
    """Run the full grid of environments x episodes for one planner.

    Writes the per-episode CSV, the aggregate report, and the resolved config
    when ``out_dir`` is given; ``save_records`` additionally stores one
    record+scene JSON per episode for rendering and replay audits.
    """
    planner = PlannerId(planner)
    n_envs = cfg.eval.n_envs if n_envs is None else n_envs
    episodes_per_env = (cfg.eval.episodes_per_env if episodes_per_env is None
                        else episodes_per_env)
    if checkpoint is None and checkpoint_path:
        checkpoint = dtqn.load_checkpoint(checkpoint_path)
    needs_ckpt = planner in (PlannerId.HAVEN, PlannerId.HAVEN_MEMORYLESS)
    if needs_ckpt and checkpoint is None:
        raise dtqn.CheckpointError(f"planner {planner.value!r} requires --checkpoint")

    env_cfgs = [env_world_config(cfg, master_seed, i) for i in range(n_envs)]
    env_seeds = [w.seed for w in env_cfgs]

    results: dict[tuple[int, int], dict] = {}
    records = {}
    if workers > 1:
        if needs_ckpt and not checkpoint_path:
            raise ValueError("parallel evaluation needs checkpoint_path")
        tasks = [
            (cfg.to_dict(), planner.value, env_cfgs[i].to_dict(), master_seed,
             i, j, checkpoint_path)
            for i in range(n_envs) for j in range(episodes_per_env)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for env_i, ep_j, row in pool.map(_worker, tasks, chunksize=4):
                results[(env_i, ep_j)] = row
    else:
        for i in range(n_envs):
            for j in range(episodes_per_env):
                row, record, scene = run_eval_episode(
                    cfg, planner, env_cfgs[i], master_seed, i, j, checkpoint)
                results[(i, j)] = row
                if save_records:
                    records[(i, j)] = (record, scene)

    keys = sorted(results)
    rows = [results[k] for k in keys]
    report = aggregate_rows(planner, rows, cfg, master_seed, n_envs,
                            episodes_per_env, env_seeds)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        cfg.save(os.path.join(out_dir, "config_resolved.json"))
        csv_path = os.path.join(out_dir, f"eval_{planner.value}.csv")
        with open(csv_path, "w") as fh:
            fh.write("# eval v1\n")
            fh.write(EVAL_LOG_HEADER + "\n")
            for row in rows:
                fh.write(",".join(_fmt(row[c]) for c in EVAL_LOG_HEADER.split(",")) + "\n")
        report.save(os.path.join(out_dir, f"report_{planner.value}.json"))
        if save_records:
            rec_dir = os.path.join(out_dir, "records")
            os.makedirs(rec_dir, exist_ok=True)
            for (i, j), (record, scene) in sorted(records.items()):
                save_record(record, scene,
                            os.path.join(rec_dir, f"{planner.value}_env{i:03d}_ep{j:03d}.json"))
    return report, rows
