"""Shared episode loop and record file I/O.

Every planner runs through the same loop: the policy sees a sensing facade,
emits a speed-capped command, and the simulator integrates it. The loop
records the spawn state plus every executed step, the policy's subgoal
decisions when it makes any, and goal-progress rewards for the log.
"""

from __future__ import annotations

import json

from ..baselines import SensingView
from ..world import (
    EpisodeRecord,
    RewardWeights,
    SCENE_SCHEMA,
    StepFlags,
    TrajectoryStep,
    World,
    reward,
    step_agent,
)


class RecordError(ValueError):
    pass


def run_episode(world: World, policy, planner: str = "", seed: int = 0,
                reward_weights: RewardWeights | None = None) -> EpisodeRecord:
    rw = reward_weights if reward_weights is not None else RewardWeights()
    view = SensingView(world)
    goal = world.config.goal_point
    rec = EpisodeRecord(planner=planner, seed=seed)

    spawn = world.agent.position
    rec.steps.append(TrajectoryStep.capture(
        world, StepFlags(exposed=world.exposed(spawn))))

    while not world.terminal and world.step_count < world.config.max_episode_steps:
        prev_goal = world.agent.position.distance_to(goal)
        cmd = policy(view)
        flags = step_agent(world, cmd,
                           subgoal=getattr(policy, "current_subgoal", None))
        rec.steps.append(TrajectoryStep.capture(world, flags))
        rec.rewards.append(
            reward(prev_goal, world.agent.position.distance_to(goal), flags, rw))

    rec.subgoal_events = list(getattr(policy, "decisions", []))
    return rec


def save_record(record: EpisodeRecord, scene: dict, path) -> None:
    payload = {"schema": SCENE_SCHEMA, "record": record.to_dict(), "scene": scene}
    with open(path, "w") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2))


def load_record(path) -> tuple[EpisodeRecord, dict]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema") != SCENE_SCHEMA:
        raise RecordError(f"{path}: unsupported record schema {payload.get('schema')!r}")
    if "record" not in payload or "scene" not in payload:
        raise RecordError(f"{path}: missing record or scene block")
    rec = EpisodeRecord.from_dict(payload["record"])
    scene = payload["scene"]
    x0, y0, x1, y1 = scene["config"]["bounds"]
    for s in rec.steps:
        if not (x0 - 1.0 <= s.x <= x1 + 1.0 and y0 - 1.0 <= s.y <= y1 + 1.0):
            raise RecordError(f"{path}: trajectory leaves the scene workspace; "
                              "record and scene do not match")
    return rec, scene
