"""Environment generation, agent/enemy dynamics, rewards, metrics, scene I/O.

A :class:`World` owns the full simulation state for one episode: obstacle
polygons, patrolling enemies with sector sensors, the agent, a step counter,
and a named enemy-motion RNG stream. Worlds are stepped sequentially by a
single owner; the harness runs many independent worlds in parallel.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    EPS,
    FovSector,
    Point2,
    Polygon,
    distance_to_polygon,
    is_visible,
    random_convex_polygon,
    wrap_angle,
)

SCENE_SCHEMA = 1


class WorldGenerationError(RuntimeError):
    """Raised when a configuration cannot be realized within the resampling budget."""


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from heterogeneous parts (hash-based, platform independent)."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _stream(seed: int, label: str) -> np.random.Generator:
    """Named RNG sub-stream so one randomized concern never perturbs another."""
    return np.random.default_rng(np.random.SeedSequence(derive_seed(seed, label)))


@dataclass(frozen=True)
class WorldConfig:
    """Environment parameters. Distances in meters, speeds in meters/step."""

    bounds: tuple = (-5.0, -5.0, 15.0, 15.0)
    n_obstacles: int = 8
    obstacle_radius_range: tuple = (0.5, 2.0)
    obstacle_vertex_range: tuple = (3, 5)
    n_enemies: int = 3
    enemy_speed: float = 0.3
    fov_aperture: float = math.radians(100.0)
    fov_range: float = 6.0
    ring_range: float = 1.5
    agent_max_speed: float = 1.0
    goal: tuple = (14.0, 14.0)
    agent_start: tuple = (-4.0, -4.0)
    max_episode_steps: int = 400
    collision_radius: float = 0.15
    subgoal_radius: float = 0.5
    goal_radius: float = 0.5
    seed: int = 0
    heading_jitter: float = 0.15
    enemy_repulsion_radius: float = 0.6
    spawn_clearance: float = 1.5

    def __post_init__(self):
        x0, y0, x1, y1 = self.bounds
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"bad bounds {self.bounds}")
        lo, hi = self.obstacle_radius_range
        if not (0.0 < lo <= hi):
            raise ValueError(f"bad obstacle radius range {self.obstacle_radius_range}")
        for name in ("enemy_speed", "agent_max_speed", "fov_aperture", "fov_range",
                     "ring_range", "collision_radius", "subgoal_radius", "goal_radius"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.ring_range > self.fov_range:
            raise ValueError("ring_range must not exceed fov_range")
        for pt, name in ((self.goal, "goal"), (self.agent_start, "agent_start")):
            if not (x0 <= pt[0] <= x1 and y0 <= pt[1] <= y1):
                raise ValueError(f"{name} {pt} outside bounds")

    @property
    def goal_point(self) -> Point2:
        return Point2(self.goal[0], self.goal[1])

    @property
    def start_point(self) -> Point2:
        return Point2(self.agent_start[0], self.agent_start[1])

    @property
    def diagonal(self) -> float:
        x0, y0, x1, y1 = self.bounds
        return math.hypot(x1 - x0, y1 - y0)

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        for key in ("bounds", "obstacle_radius_range", "obstacle_vertex_range",
                    "goal", "agent_start"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        kw = dict(d)
        for key in ("bounds", "obstacle_radius_range", "obstacle_vertex_range",
                    "goal", "agent_start"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


@dataclass(frozen=True)
class RewardWeights:
    """Per-step reward shaping; defaults keep progress dominant over the
    time penalty and collision dominant over exposure."""

    progress: float = 1.0
    exposure: float = 0.5
    collision: float = 5.0
    time: float = 0.01
    subgoal_bonus: float = 1.0
    goal_bonus: float = 10.0


@dataclass(frozen=True)
class StepFlags:
    exposed: bool = False
    collided: bool = False
    reached_subgoal: bool = False
    reached_goal: bool = False


@dataclass(frozen=True)
class Enemy:
    """Patrolling adversary; its sensor is derived from pose, so the two
    can never disagree."""

    position: Point2
    heading: float
    speed: float
    fov_aperture: float
    fov_range: float
    ring_range: float

    @property
    def sensor(self) -> FovSector:
        return FovSector(
            apex=self.position,
            heading=self.heading,
            aperture=self.fov_aperture,
            range=self.fov_range,
            ring_range=self.ring_range,
        )


@dataclass
class AgentState:
    position: Point2
    velocity: tuple = (0.0, 0.0)


class World:
    """Mutable episode state; see module docstring for the ownership model."""

    def __init__(self, config: WorldConfig, obstacles, enemies, agent: AgentState,
                 enemy_rng: np.random.Generator | None = None):
        self.config = config
        self.obstacles: tuple[Polygon, ...] = tuple(obstacles)
        self.enemies: list[Enemy] = list(enemies)
        self.agent = agent
        self.step_count = 0
        self.collided = False
        self.reached_goal = False
        self.rng_enemies = enemy_rng if enemy_rng is not None else _stream(config.seed, "enemy-motion")

    @property
    def terminal(self) -> bool:
        return self.collided or self.reached_goal

    @property
    def truncated(self) -> bool:
        return self.step_count >= self.config.max_episode_steps

    def reseed_enemies(self, seed: int) -> None:
        self.rng_enemies = _stream(seed, "enemy-motion")

    def in_bounds(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.config.bounds
        return x0 <= x <= x1 and y0 <= y <= y1

    def clearance(self, p: Point2) -> float:
        """Min distance to any obstacle; bounds-diagonal sentinel when empty."""
        if not self.obstacles:
            return self.config.diagonal
        return min(distance_to_polygon(p, o) for o in self.obstacles)

    def exposed(self, p: Point2) -> bool:
        return any(is_visible(p, e.sensor, self.obstacles) for e in self.enemies)

    def goal_distance(self, p: Point2 | None = None) -> float:
        p = p if p is not None else self.agent.position
        return p.distance_to(self.config.goal_point)


def generate_world(config: WorldConfig) -> World:
    """Randomized world realization: convex obstacles with centers uniform in
    bounds and radii uniform in the configured range, enemies at random
    interior poses outside obstacles, the agent at its start with zero
    velocity. Obstacles crowding the start/goal discs are resampled; a
    configuration that cannot be placed raises WorldGenerationError.
    """
    x0, y0, x1, y1 = config.bounds
    rng_obs = _stream(config.seed, "obstacles")
    rng_enemy = _stream(config.seed, "enemy-spawn")
    start = config.start_point
    goal = config.goal_point
    vlo, vhi = config.obstacle_vertex_range

    obstacles: list[Polygon] = []
    for _ in range(config.n_obstacles):
        for attempt in range(200):
            cx = rng_obs.uniform(x0, x1)
            cy = rng_obs.uniform(y0, y1)
            radius = rng_obs.uniform(*config.obstacle_radius_range)
            n_verts = int(rng_obs.integers(vlo, vhi + 1))
            poly = random_convex_polygon(Point2(cx, cy), radius, n_verts, rng_obs)
            if distance_to_polygon(start, poly) < config.spawn_clearance:
                continue
            if distance_to_polygon(goal, poly) < config.spawn_clearance:
                continue
            obstacles.append(poly)
            break
        else:
            raise WorldGenerationError(
                f"could not place obstacle {len(obstacles) + 1}/{config.n_obstacles}; "
                "configuration too crowded")

    enemies: list[Enemy] = []
    for _ in range(config.n_enemies):
        for attempt in range(200):
            ex = rng_enemy.uniform(x0, x1)
            ey = rng_enemy.uniform(y0, y1)
            p = Point2(ex, ey)
            if any(o.contains(ex, ey) for o in obstacles):
                continue
            heading = wrap_angle(rng_enemy.uniform(-math.pi, math.pi))
            enemies.append(Enemy(
                position=p,
                heading=heading,
                speed=config.enemy_speed,
                fov_aperture=config.fov_aperture,
                fov_range=config.fov_range,
                ring_range=config.ring_range,
            ))
            break
        else:
            raise WorldGenerationError("could not place enemy; configuration too crowded")

    agent = AgentState(position=start, velocity=(0.0, 0.0))
    return World(config, obstacles, enemies, agent)


def step_enemy(enemy: Enemy, world: World) -> Enemy:
    """One patrol step: jittered heading, short-range obstacle repulsion,
    constant-speed advance, boundary reflection. Never enters an obstacle."""
    cfg = world.config
    jitter = cfg.heading_jitter
    delta = float(world.rng_enemies.uniform(-jitter, jitter))
    heading = wrap_angle(enemy.heading + delta)

    px, py = enemy.position.x, enemy.position.y
    nearest = None
    for poly in world.obstacles:
        d = poly.distance(px, py)
        if d < cfg.enemy_repulsion_radius and (nearest is None or d < nearest[0]):
            nearest = (d, poly)
    if nearest is not None:
        poly = nearest[1]
        away = math.atan2(py - poly.centroid.y, px - poly.centroid.x)
        heading = wrap_angle(heading + 0.5 * wrap_angle(away - heading))

    hx, hy = math.cos(heading), math.sin(heading)
    nx = px + enemy.speed * hx
    ny = py + enemy.speed * hy
    x0, y0, x1, y1 = cfg.bounds
    if nx < x0:
        nx = 2.0 * x0 - nx
        hx = -hx
    elif nx > x1:
        nx = 2.0 * x1 - nx
        hx = -hx
    if ny < y0:
        ny = 2.0 * y0 - ny
        hy = -hy
    elif ny > y1:
        ny = 2.0 * y1 - ny
        hy = -hy
    nx = min(max(nx, x0), x1)
    ny = min(max(ny, y0), y1)
    heading = wrap_angle(math.atan2(hy, hx))

    new_pos = Point2(nx, ny)
    if any(o.contains(nx, ny) for o in world.obstacles):
        new_pos = enemy.position
    return replace(enemy, position=new_pos, heading=heading)


def step_agent(world: World, command, subgoal: Point2 | None = None) -> StepFlags:
    """Advance the simulation one step under a velocity command.

    The command is saturated to the agent speed limit, the agent integrates
    one step, all enemies patrol one step, and the step flags are evaluated
    at the post-step state. Collision (obstacle clearance below the collision
    radius, or leaving the workspace) and goal arrival are terminal; stepping
    a terminal or step-capped world raises RuntimeError.
    """
    if world.terminal:
        raise RuntimeError("cannot step a terminal world")
    cfg = world.config
    if world.step_count >= cfg.max_episode_steps:
        raise RuntimeError("episode step limit reached")

    vx, vy = float(command[0]), float(command[1])
    speed = math.hypot(vx, vy)
    if speed > cfg.agent_max_speed:
        scale = cfg.agent_max_speed / speed
        vx *= scale
        vy *= scale

    pos = Point2(world.agent.position.x + vx, world.agent.position.y + vy)
    world.agent.position = pos
    world.agent.velocity = (vx, vy)
    world.step_count += 1

    world.enemies = [step_enemy(e, world) for e in world.enemies]

    out_of_bounds = not world.in_bounds(pos.x, pos.y)
    collided = out_of_bounds or any(
        distance_to_polygon(pos, o) < cfg.collision_radius for o in world.obstacles
    )
    exposed = world.exposed(pos)
    reached_goal = (not collided) and pos.distance_to(cfg.goal_point) <= cfg.goal_radius
    reached_subgoal = (
        subgoal is not None and pos.distance_to(subgoal) <= cfg.subgoal_radius
    )

    world.collided = collided
    world.reached_goal = reached_goal
    return StepFlags(
        exposed=exposed,
        collided=collided,
        reached_subgoal=reached_subgoal,
        reached_goal=reached_goal,
    )


def reward(prev_subgoal_dist: float, new_subgoal_dist: float, flags: StepFlags,
           weights: RewardWeights) -> float:
    """Per-step shaped reward: subgoal progress minus exposure, collision and
    time penalties, plus arrival bonuses."""
    r = weights.progress * (prev_subgoal_dist - new_subgoal_dist)
    if flags.exposed:
        r -= weights.exposure
    if flags.collided:
        r -= weights.collision
    r -= weights.time
    if flags.reached_subgoal:
        r += weights.subgoal_bonus
    if flags.reached_goal:
        r += weights.goal_bonus
    return r


# ----------------------------------------------------------------------
# episode records and metrics


@dataclass(frozen=True)
class TrajectoryStep:
    """One recorded simulation step; ``enemies`` holds (x, y, heading) poses."""

    x: float
    y: float
    exposed: bool
    collided: bool
    reached_subgoal: bool
    reached_goal: bool
    clearance: float
    enemies: tuple = ()

    @classmethod
    def capture(cls, world: World, flags: StepFlags) -> "TrajectoryStep":
        p = world.agent.position
        return cls(
            x=p.x, y=p.y,
            exposed=flags.exposed, collided=flags.collided,
            reached_subgoal=flags.reached_subgoal, reached_goal=flags.reached_goal,
            clearance=world.clearance(p),
            enemies=tuple((e.position.x, e.position.y, e.heading) for e in world.enemies),
        )


@dataclass(frozen=True)
class MetricsRow:
    """The six per-episode evaluation metrics."""

    success: bool
    time_to_goal: float
    path_length: float
    safety_margin: float
    exposure_steps: int
    collided: bool


@dataclass
class EpisodeRecord:
    """Full trace of one episode. steps[0] is the spawn state; each later
    entry is the state after one executed simulation step."""

    planner: str
    seed: int
    steps: list = field(default_factory=list)
    subgoal_events: list = field(default_factory=list)  # (step_index, x, y)
    rewards: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": SCENE_SCHEMA,
            "planner": self.planner,
            "seed": self.seed,
            "steps": [
                [s.x, s.y, int(s.exposed), int(s.collided), int(s.reached_subgoal),
                 int(s.reached_goal), s.clearance, [list(e) for e in s.enemies]]
                for s in self.steps
            ],
            "subgoals": [list(ev) for ev in self.subgoal_events],
            "rewards": list(self.rewards),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeRecord":
        rec = cls(planner=d["planner"], seed=d["seed"])
        for row in d["steps"]:
            rec.steps.append(TrajectoryStep(
                x=row[0], y=row[1], exposed=bool(row[2]), collided=bool(row[3]),
                reached_subgoal=bool(row[4]), reached_goal=bool(row[5]),
                clearance=row[6], enemies=tuple(tuple(e) for e in row[7]),
            ))
        rec.subgoal_events = [tuple(ev) for ev in d.get("subgoals", [])]
        rec.rewards = list(d.get("rewards", []))
        return rec


def metrics(record: EpisodeRecord) -> MetricsRow:
    """Fold a complete episode record into the six evaluation metrics.

    Time-to-goal counts executed steps and is NaN for unsuccessful episodes;
    exposure counts executed steps with the exposed flag set (the spawn state
    is excluded); the safety margin includes the spawn state.
    """
    steps = record.steps
    if not steps:
        raise ValueError("empty episode record")
    success = steps[-1].reached_goal
    collided = any(s.collided for s in steps)
    path = 0.0
    for a, b in zip(steps, steps[1:]):
        path += math.hypot(b.x - a.x, b.y - a.y)
    exposure = sum(1 for s in steps[1:] if s.exposed)
    safety = min(s.clearance for s in steps)
    t = float(len(steps) - 1) if success else float("nan")
    return MetricsRow(
        success=success,
        time_to_goal=t,
        path_length=path,
        safety_margin=safety,
        exposure_steps=exposure,
        collided=collided,
    )


# ----------------------------------------------------------------------
# scene serialization (versioned, deterministic bytes)


def scene_to_dict(world: World) -> dict:
    return {
        "schema": SCENE_SCHEMA,
        "config": world.config.to_dict(),
        "obstacles": [o.to_vertex_list() for o in world.obstacles],
        "enemies": [
            {"x": e.position.x, "y": e.position.y, "heading": e.heading,
             "speed": e.speed, "fov_aperture": e.fov_aperture,
             "fov_range": e.fov_range, "ring_range": e.ring_range}
            for e in world.enemies
        ],
        "agent": {
            "x": world.agent.position.x, "y": world.agent.position.y,
            "vx": world.agent.velocity[0], "vy": world.agent.velocity[1],
        },
        "step_count": world.step_count,
    }


def scene_dumps(world: World) -> str:
    return json.dumps(scene_to_dict(world), sort_keys=True, indent=2)


def save_scene(world: World, path) -> None:
    with open(path, "w") as fh:
        fh.write(scene_dumps(world))


def world_from_scene(scene: dict) -> World:
    """Rebuild a world from a scene dict. The enemy-motion stream is reseeded
    from the scene's config seed, so replay from an initial scene reproduces
    the original episode."""
    if scene.get("schema") != SCENE_SCHEMA:
        raise ValueError(f"unsupported scene schema {scene.get('schema')!r}")
    config = WorldConfig.from_dict(scene["config"])
    obstacles = [Polygon(vs) for vs in scene["obstacles"]]
    enemies = [
        Enemy(position=Point2(e["x"], e["y"]), heading=e["heading"], speed=e["speed"],
              fov_aperture=e["fov_aperture"], fov_range=e["fov_range"],
              ring_range=e["ring_range"])
        for e in scene["enemies"]
    ]
    agent = AgentState(position=Point2(scene["agent"]["x"], scene["agent"]["y"]),
                       velocity=(scene["agent"]["vx"], scene["agent"]["vy"]))
    world = World(config, obstacles, enemies, agent)
    world.step_count = int(scene.get("step_count", 0))
    return world


def load_scene(path) -> World:
    with open(path) as fh:
        return world_from_scene(json.load(fh))
