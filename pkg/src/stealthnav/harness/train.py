"""Online TD training of the subgoal selector.

One decision = candidate generation, epsilon-greedy selection, bounded
potential-field rollout, and a single Adam update on the squared TD error of
the previous decision (bootstrapped with the current candidate maximum).
Collision and goal arrival are terminal; hitting the episode step cap
bootstraps instead, since truncation is not environment death.
"""

from __future__ import annotations

import math
import os
from collections import deque
from dataclasses import replace

import numpy as np

from .. import dtqn
from ..controller import compute_forces, smooth_and_saturate, track_subgoal
from ..tactics import FEATURE_NAMES, build_sequence, free_space_filter, generate_candidates
from ..world import World, WorldConfig, _stream, derive_seed, generate_world, reward, step_agent
from .config import SimConfig

TRAIN_LOG_HEADER = "episode,steps,return,loss_mean,epsilon,success,exposure"
FEATURE_LOG_HEADER = "episode,decision,candidate,masked,q," + ",".join(FEATURE_NAMES)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def episode_world_config(base: WorldConfig, seed: int,
                         n_obstacles_range, n_enemies_range) -> WorldConfig:
    """Per-episode world shape: counts drawn from the configured ranges."""
    rng = _stream(seed, "env-shape")
    n_obs = base.n_obstacles
    n_en = base.n_enemies
    if n_obstacles_range is not None:
        n_obs = int(rng.integers(n_obstacles_range[0], n_obstacles_range[1] + 1))
    if n_enemies_range is not None:
        n_en = int(rng.integers(n_enemies_range[0], n_enemies_range[1] + 1))
    return replace(base, seed=seed, n_obstacles=n_obs, n_enemies=n_en)


def train_episode(world: World, params: dtqn.NetworkParams, adam: dtqn.AdamState,
                  cfg: SimConfig, explore_rng: np.random.Generator,
                  sequence_mode: str, feature_rows: list | None = None,
                  episode_index: int = 0) -> dict:
    """Run one training episode in place; returns the log row fields."""
    k = params.config.k
    gamma = cfg.train.gamma
    epsilon = cfg.train.epsilon
    history: deque = deque(maxlen=max(0, k - 1))
    pending = None  # (X_selected, rewards, steps_used, revisit_charge)
    losses: list[float] = []
    ep_return = 0.0
    exposure = 0
    n_decisions = 0
    visited: list = []  # subgoals selected so far this episode

    def candidate_qs():
        cands = generate_candidates(world, cfg.tactics)
        if cfg.tactics.mask_visible_candidates:
            cands = free_space_filter(cands, world)
        unmasked = [i for i, c in enumerate(cands) if not c.masked]
        Xs = np.stack([
            build_sequence(cands[i].features, list(history), k, sequence_mode)
            for i in unmasked
        ])
        return cands, unmasked, dtqn.q_values(params, Xs)

    while not world.terminal and world.step_count < world.config.max_episode_steps:
        cands, unmasked, qs = candidate_qs()
        if pending is not None:
            target = dtqn.td_target(pending[1], gamma, False,
                                    next_max_q=float(qs.max()),
                                    steps_elapsed=pending[2])
            losses.append(dtqn.train_step(params, adam, pending[0], target))
            pending = None

        if epsilon > 0.0 and explore_rng.uniform() < epsilon:
            sel = unmasked[int(explore_rng.integers(len(unmasked)))]
        else:
            sel = unmasked[int(np.argmax(qs))]
        if feature_rows is not None:
            for rank, i in enumerate(unmasked):
                feature_rows.append(
                    [episode_index, n_decisions, i, 0, float(qs[rank])]
                    + [float(v) for v in cands[i].features])
        X_sel = build_sequence(cands[sel].features, list(history), k, sequence_mode)
        history.append(cands[sel].features)
        n_decisions += 1

        subgoal = cands[sel].position
        flags_list, rewards, steps_used = track_subgoal(
            world, subgoal, cfg.controller, cfg.reward)
        if steps_used == 0 and not world.terminal \
                and world.step_count < world.config.max_episode_steps:
            # subgoal already inside its radius: execute one plain step so the
            # episode always advances
            prev = world.agent.position.distance_to(subgoal)
            fb = compute_forces(world, subgoal, cfg.controller)
            cmd = smooth_and_saturate(world.agent.velocity, fb.total, cfg.controller)
            flags = step_agent(world, cmd, subgoal=subgoal)
            rewards = [reward(prev, world.agent.position.distance_to(subgoal),
                              flags, cfg.reward)]
            flags_list = [flags]
            steps_used = 1
        ep_return += sum(rewards)
        exposure += sum(1 for f in flags_list if f.exposed)
        pending = (X_sel, rewards, steps_used)

    if pending is not None:
        if world.terminal:
            target = dtqn.td_target(pending[1], gamma, True, steps_elapsed=pending[2])
        else:
            _, _, qs = candidate_qs()
            target = dtqn.td_target(pending[1], gamma, False,
                                    next_max_q=float(qs.max()),
                                    steps_elapsed=pending[2])
        losses.append(dtqn.train_step(params, adam, pending[0], target))

    return {
        "steps": world.step_count,
        "return": ep_return,
        "loss_mean": float(np.mean(losses)) if losses else 0.0,
        "success": world.reached_goal,
        "exposure": exposure,
    }


def train(cfg: SimConfig, master_seed: int, out_dir, episodes: int | None = None,
          k: int | None = None, sequence_mode: str | None = None,
          log_name: str = "train_log.csv", checkpoint_name: str = "ckpt_final.bin",
          feature_dump: str | None = None, quiet: bool = True) -> tuple[dtqn.Checkpoint, str]:
    """Train for the configured episode budget; returns (checkpoint, log path).

    Writes the training CSV, periodic checkpoints, and the resolved config.
    On divergence the last good periodic checkpoint is left in place and the
    log rows so far are flushed before the error propagates.
    """
    os.makedirs(out_dir, exist_ok=True)
    episodes = cfg.train.episodes if episodes is None else episodes
    mode = sequence_mode or cfg.train.sequence_mode
    net_cfg = cfg.network if k is None else replace(cfg.network, k=k)

    params = dtqn.init_params(net_cfg, seed=derive_seed(master_seed, "init"))
    adam = dtqn.init_adam(params, lr=cfg.train.lr)
    snapshot_cfg = replace(cfg, network=net_cfg)
    snapshot = {
        "sequence_mode": mode,
        "master_seed": master_seed,
        "sim": snapshot_cfg.to_dict(),
        "sim_config_hash": snapshot_cfg.config_hash(),
    }
    ckpt = dtqn.Checkpoint(params=params, adam=adam, episodes=0,
                           config_snapshot=snapshot)
    ckpt_path = os.path.join(out_dir, checkpoint_name)
    log_path = os.path.join(out_dir, log_name)
    snapshot_cfg.save(os.path.join(out_dir, "config_resolved.json"))

    rows: list[str] = []
    feature_rows: list | None = [] if feature_dump else None
    try:
        for ep in range(episodes):
            ep_seed = derive_seed(master_seed, "train", ep)
            wcfg = episode_world_config(cfg.world, ep_seed,
                                        cfg.train.n_obstacles_range,
                                        cfg.train.n_enemies_range)
            world = generate_world(wcfg)
            explore_rng = _stream(ep_seed, "explore")
            stats = train_episode(world, params, adam, cfg, explore_rng, mode,
                                  feature_rows=feature_rows, episode_index=ep)
            ckpt.episodes = ep + 1
            rows.append(",".join(_fmt(v) for v in (
                ep, stats["steps"], stats["return"], stats["loss_mean"],
                cfg.train.epsilon, stats["success"], stats["exposure"])))
            if not quiet and (ep + 1) % 100 == 0:
                recent = rows[-100:]
                succ = sum(int(r.split(",")[5]) for r in recent) / len(recent)
                print(f"episode {ep + 1}/{episodes} success(last100)={succ:.2f}")
            if cfg.train.checkpoint_every > 0 and (ep + 1) % cfg.train.checkpoint_every == 0:
                dtqn.save_checkpoint(ckpt, ckpt_path)
    finally:
        with open(log_path, "w") as fh:
            fh.write("# train-log v1\n")
            fh.write(TRAIN_LOG_HEADER + "\n")
            for row in rows:
                fh.write(row + "\n")
        if feature_rows is not None:
            with open(os.path.join(out_dir, feature_dump), "w") as fh:
                fh.write("# feature-log v1\n")
                fh.write(FEATURE_LOG_HEADER + "\n")
                for frow in feature_rows:
                    fh.write(",".join(_fmt(v) for v in frow) + "\n")

    dtqn.save_checkpoint(ckpt, ckpt_path)
    return ckpt, log_path
