"""Potential-field subgoal tracking and unicycle command synthesis.

Five composed force terms (subgoal attraction, obstacle repulsion, enemy
repulsion, predicted-view avoidance, cover-seeking escape), first-order
smoothing with speed saturation, and a bounded-horizon rollout that executes
one high-level decision. Force magnitudes are expressed directly in
meters/step so they mix with velocities without a hidden unit conversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import EPS, FovSector, Point2, is_visible, wrap_angle
from .world import RewardWeights, StepFlags, World, reward, step_agent

REPULSION_CAP = 8.0
HIDE_MARGIN = 0.5
ESCAPE_PROBE_STEP = 0.25


@dataclass(frozen=True)
class ControllerWeights:
    """Force weights, smoothing factor, speed cap, influence radii, and the
    low-level horizon between high-level decisions."""

    attract: float = 1.0
    repel_obstacle: float = 1.5
    repel_enemy: float = 1.2
    avoid_fov: float = 0.8
    escape: float = 1.0
    beta: float = 0.6
    v_max: float = 1.0
    obstacle_influence: float = 1.5
    enemy_influence: float = 3.0
    horizon: int = 10

    def __post_init__(self):
        for name in ("attract", "repel_obstacle", "repel_enemy", "avoid_fov", "escape"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError("beta must lie in [0, 1]")
        if self.v_max <= 0.0:
            raise ValueError("v_max must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass(frozen=True)
class ForceBreakdown:
    """Per-term force vectors; ``total`` is exactly the weighted sum."""

    attraction: tuple
    obstacle_repulsion: tuple
    enemy_repulsion: tuple
    fov_avoidance: tuple
    escape: tuple
    total: tuple

    def as_row(self) -> list[float]:
        """Flat 12-column row for debug CSV dumps."""
        out = []
        for f in (self.attraction, self.obstacle_repulsion, self.enemy_repulsion,
                  self.fov_avoidance, self.escape, self.total):
            out.extend(f)
        return out


def _unit(dx: float, dy: float) -> tuple[float, float]:
    n = math.hypot(dx, dy)
    if n <= EPS:
        return (0.0, 0.0)
    return (dx / n, dy / n)


def _repulsion_magnitude(d: float, influence: float) -> float:
    d = max(d, 1e-6)
    return min(1.0 / d - 1.0 / influence, REPULSION_CAP)


def predict_enemy_fovs(world: World, steps: int = 1) -> list[FovSector]:
    """Enemy sensors advanced ``steps`` patrol steps along current headings."""
    x0, y0, x1, y1 = world.config.bounds
    out = []
    for e in world.enemies:
        nx = min(max(e.position.x + steps * e.speed * math.cos(e.heading), x0), x1)
        ny = min(max(e.position.y + steps * e.speed * math.sin(e.heading), y0), y1)
        out.append(FovSector(apex=Point2(nx, ny), heading=e.heading,
                             aperture=e.fov_aperture, range=e.fov_range,
                             ring_range=e.ring_range))
    return out


def _count_observers(world: World, p: Point2) -> int:
    return sum(1 for e in world.enemies if is_visible(p, e.sensor, world.obstacles))


def _escape_direction(world: World, observers) -> tuple[float, float]:
    """Unit direction toward the nearest point that breaks every observing
    enemy's line of sight, searched over obstacle shadows. Returns zero when
    no direction passes the non-worsening probe check."""
    agent = world.agent.position
    base = _count_observers(world, agent)

    options = []
    for poly in world.obstacles:
        r = poly.radius + HIDE_MARGIN
        for e in observers:
            ux, uy = _unit(poly.centroid.x - e.position.x, poly.centroid.y - e.position.y)
            if ux == 0.0 and uy == 0.0:
                continue
            hx = poly.centroid.x + r * ux
            hy = poly.centroid.y + r * uy
            options.append((math.hypot(hx - agent.x, hy - agent.y), hx, hy))
    options.sort()

    def probe_ok(dx: float, dy: float) -> bool:
        probe = Point2(agent.x + ESCAPE_PROBE_STEP * dx, agent.y + ESCAPE_PROBE_STEP * dy)
        return _count_observers(world, probe) <= base

    for dist, hx, hy in options:
        if dist <= EPS or not world.in_bounds(hx, hy):
            continue
        hide = Point2(hx, hy)
        if any(o.contains(hx, hy) for o in world.obstacles):
            continue
        if any(is_visible(hide, e.sensor, world.obstacles) for e in observers):
            continue
        dx, dy = _unit(hx - agent.x, hy - agent.y)
        if probe_ok(dx, dy):
            return (dx, dy)

    mx = sum(e.position.x for e in observers) / len(observers)
    my = sum(e.position.y for e in observers) / len(observers)
    dx, dy = _unit(agent.x - mx, agent.y - my)
    if (dx, dy) != (0.0, 0.0) and probe_ok(dx, dy):
        return (dx, dy)
    return (0.0, 0.0)


def compute_forces(world: World, subgoal: Point2, weights: ControllerWeights,
                   predicted_fovs=None) -> ForceBreakdown:
    """Evaluate all five force terms at the current agent state.

    Workspace walls repel like obstacles so the agent is steered away from
    the out-of-bounds terminal. Predicted enemy views default to a one-step
    lookahead along current headings.
    """
    cfg = world.config
    agent = world.agent.position
    ax, ay = agent.x, agent.y

    # attraction: unit pull toward the subgoal, released inside its radius
    dx, dy = subgoal.x - ax, subgoal.y - ay
    if math.hypot(dx, dy) <= cfg.subgoal_radius:
        f_att = (0.0, 0.0)
    else:
        f_att = _unit(dx, dy)

    # obstacle and wall repulsion
    fox = foy = 0.0
    for poly in world.obstacles:
        px, py, d = poly.closest_point(ax, ay)
        if d >= weights.obstacle_influence:
            continue
        if d <= EPS:
            ux, uy = _unit(ax - poly.centroid.x, ay - poly.centroid.y)
            mag = REPULSION_CAP
        else:
            ux, uy = _unit(ax - px, ay - py)
            mag = _repulsion_magnitude(d, weights.obstacle_influence)
        fox += mag * ux
        foy += mag * uy
    x0, y0, x1, y1 = cfg.bounds
    for d, ux, uy in ((ax - x0, 1.0, 0.0), (x1 - ax, -1.0, 0.0),
                      (ay - y0, 0.0, 1.0), (y1 - ay, 0.0, -1.0)):
        if d < weights.obstacle_influence:
            mag = _repulsion_magnitude(max(d, 0.0), weights.obstacle_influence)
            fox += mag * ux
            foy += mag * uy

    # enemy-position repulsion
    fex = fey = 0.0
    for e in world.enemies:
        d = math.hypot(ax - e.position.x, ay - e.position.y)
        if d >= weights.enemy_influence:
            continue
        ux, uy = _unit(ax - e.position.x, ay - e.position.y)
        mag = _repulsion_magnitude(d, weights.enemy_influence)
        fex += mag * ux
        fey += mag * uy

    # anticipatory repulsion out of predicted views
    if predicted_fovs is None:
        predicted_fovs = predict_enemy_fovs(world)
    fax = fay = 0.0
    for s in predicted_fovs:
        if not is_visible(agent, s, world.obstacles):
            continue
        d = math.hypot(ax - s.apex.x, ay - s.apex.y)
        ux, uy = _unit(ax - s.apex.x, ay - s.apex.y)
        mag = max(0.0, 1.0 - d / s.range)
        fax += mag * ux
        fay += mag * uy

    # escape toward cover when currently observed
    fsx = fsy = 0.0
    if weights.escape > 0.0 and world.enemies:
        observers = [e for e in world.enemies
                     if is_visible(agent, e.sensor, world.obstacles)]
        if observers:
            fsx, fsy = _escape_direction(world, observers)

    total = (
        weights.attract * f_att[0] + weights.repel_obstacle * fox
        + weights.repel_enemy * fex + weights.avoid_fov * fax
        + weights.escape * fsx,
        weights.attract * f_att[1] + weights.repel_obstacle * foy
        + weights.repel_enemy * fey + weights.avoid_fov * fay
        + weights.escape * fsy,
    )
    return ForceBreakdown(
        attraction=f_att,
        obstacle_repulsion=(fox, foy),
        enemy_repulsion=(fex, fey),
        fov_avoidance=(fax, fay),
        escape=(fsx, fsy),
        total=total,
    )


def smooth_and_saturate(v_prev, f_total, weights: ControllerWeights) -> tuple[float, float]:
    """First-order command smoothing followed by the speed cap."""
    ux = weights.beta * v_prev[0] + (1.0 - weights.beta) * f_total[0]
    uy = weights.beta * v_prev[1] + (1.0 - weights.beta) * f_total[1]
    n = math.hypot(ux, uy)
    if n > weights.v_max:
        s = weights.v_max / n
        ux *= s
        uy *= s
    return (ux, uy)


def track_subgoal(world: World, subgoal: Point2, weights: ControllerWeights,
                  reward_weights: RewardWeights | None = None
                  ) -> tuple[list[StepFlags], list[float], int]:
    """Track one subgoal for at most ``weights.horizon`` low-level steps.

    Stops early when the subgoal is reached, the episode terminates, or the
    step cap is hit. Returns the per-step flags, the per-step rewards against
    the subgoal distance (for the TD-target rollup), and the step count.
    """
    rw = reward_weights if reward_weights is not None else RewardWeights()
    cfg = world.config
    flags_out: list[StepFlags] = []
    rewards_out: list[float] = []
    for _ in range(weights.horizon):
        if world.terminal or world.step_count >= cfg.max_episode_steps:
            break
        prev = world.agent.position.distance_to(subgoal)
        if prev <= cfg.subgoal_radius:
            break
        fb = compute_forces(world, subgoal, weights)
        cmd = smooth_and_saturate(world.agent.velocity, fb.total, weights)
        flags = step_agent(world, cmd, subgoal=subgoal)
        new = world.agent.position.distance_to(subgoal)
        flags_out.append(flags)
        rewards_out.append(reward(prev, new, flags, rw))
        if flags.collided or flags.reached_goal or flags.reached_subgoal:
            break
    return flags_out, rewards_out, len(rewards_out)


def unicycle_command(f_total, heading: float, dt: float,
                     omega_max: float) -> tuple[float, float]:
    """Convert a planar force to (linear speed, clamped angular rate)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    fx, fy = f_total[0], f_total[1]
    v = math.hypot(fx, fy)
    if v <= EPS:
        return (0.0, 0.0)
    dtheta = wrap_angle(math.atan2(fy, fx) - heading)
    omega = dtheta / dt
    omega = min(max(omega, -omega_max), omega_max)
    return (v, omega)
