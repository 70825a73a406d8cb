"""Comparison planners sharing one world, sensing surface, and integrator.

Every policy is a callable ``policy(view) -> (vx, vy)`` with output speed at
most v_max; the episode loop feeds the command straight to the simulator.
All policies finish with the same first-order smoothing the hierarchy's
low-level controller uses, so the integration protocol is identical across
methods. The classical planners (VFH, greedy, DWA) consume only the
:class:`SensingView` facade, never raw world internals; the hierarchy's own
policies reach the full world because the candidate machinery is defined on
it.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import dtqn
from .controller import ControllerWeights, compute_forces, smooth_and_saturate
from .geometry import (
    Point2,
    clearance_many,
    first_hit_distance,
    visible_any_many,
    wrap_angle,
)
from .tactics import TacticsConfig, free_space_filter, generate_candidates
from .world import World


class PlannerId(str, enum.Enum):
    HAVEN = "haven"
    HAVEN_MEMORYLESS = "haven_memoryless"
    REACTIVE_PF = "reactive_pf"
    VFH = "vfh"
    GREEDY = "greedy"
    DWA = "dwa"


class SensingView:
    """What a planner is allowed to sense: agent state, goal, obstacle and
    enemy geometry, and derived clearance/visibility queries."""

    def __init__(self, world: World):
        self._world = world

    @property
    def agent_position(self) -> Point2:
        return self._world.agent.position

    @property
    def agent_velocity(self) -> tuple:
        return self._world.agent.velocity

    @property
    def goal(self) -> Point2:
        return self._world.config.goal_point

    @property
    def bounds(self) -> tuple:
        return self._world.config.bounds

    @property
    def v_max(self) -> float:
        return self._world.config.agent_max_speed

    @property
    def collision_radius(self) -> float:
        return self._world.config.collision_radius

    @property
    def obstacles(self) -> tuple:
        return self._world.obstacles

    @property
    def enemy_sensors(self) -> list:
        return [e.sensor for e in self._world.enemies]

    def in_bounds(self, x: float, y: float) -> bool:
        return self._world.in_bounds(x, y)

    def clearance(self, x: float, y: float) -> float:
        return self._world.clearance(Point2(x, y))

    def exposed_at(self, x: float, y: float) -> bool:
        return self._world.exposed(Point2(x, y))

    def clearance_many(self, pts: np.ndarray) -> np.ndarray:
        if not self._world.obstacles:
            return np.full(len(pts), self._world.config.diagonal)
        return clearance_many(pts, self._world.obstacles)

    def exposed_many(self, pts: np.ndarray) -> np.ndarray:
        if not self._world.enemies:
            return np.zeros(len(pts), dtype=bool)
        return visible_any_many(pts, self.enemy_sensors, self._world.obstacles)

    def first_hit(self, heading: float, max_range: float) -> float:
        p = self.agent_position
        return first_hit_distance(p.x, p.y, heading, max_range, self._world.obstacles)

    def range_to_bounds(self, heading: float) -> float:
        """Distance from the agent to the workspace edge along a heading."""
        x0, y0, x1, y1 = self.bounds
        p = self.agent_position
        cx, cy = math.cos(heading), math.sin(heading)
        best = math.inf
        if cx > 1e-12:
            best = min(best, (x1 - p.x) / cx)
        elif cx < -1e-12:
            best = min(best, (x0 - p.x) / cx)
        if cy > 1e-12:
            best = min(best, (y1 - p.y) / cy)
        elif cy < -1e-12:
            best = min(best, (y0 - p.y) / cy)
        return max(best, 0.0)


# ----------------------------------------------------------------------
# parameter blocks


@dataclass(frozen=True)
class VfhParams:
    n_bins: int = 72
    lookahead: float = 5.0
    block_distance: float | None = None  # default: v_max + collision_radius
    density_weight: float = 1.0
    align_weight: float = 0.4
    exposure_penalty: float = 1.0
    probe_distance: float = 2.0


@dataclass(frozen=True)
class GreedyParams:
    n_headings: int = 36
    safety_distance: float = 0.5
    clearance_weight: float = 2.0
    exposure_penalty: float = 3.0


@dataclass(frozen=True)
class DwaParams:
    n_speeds: int = 5
    n_rates: int = 9
    omega_max: float = 1.0
    t_roll: int = 8
    goal_weight: float = 1.0
    clearance_weight: float = 0.5
    safety_distance: float = 0.3
    exposure_weight: float = 0.05


@dataclass(frozen=True)
class BaselineParams:
    vfh: VfhParams = VfhParams()
    greedy: GreedyParams = GreedyParams()
    dwa: DwaParams = DwaParams()


# ----------------------------------------------------------------------
# policies


class ReactivePotentialFieldPolicy:
    """The hierarchy's low-level controller aimed permanently at the goal,
    with predicted-view avoidance active."""

    def __init__(self, weights: ControllerWeights):
        self.weights = weights
        self.current_subgoal = None

    def __call__(self, view: SensingView):
        world = view._world
        self.current_subgoal = view.goal
        fb = compute_forces(world, view.goal, self.weights)
        return smooth_and_saturate(view.agent_velocity, fb.total, self.weights)


class VfhPolicy:
    """Polar obstacle-density histogram with per-bin exposure penalties."""

    def __init__(self, params: VfhParams, weights: ControllerWeights):
        self.params = params
        self.weights = weights
        self.current_subgoal = None

    def __call__(self, view: SensingView):
        p = self.params
        pos = view.agent_position
        goal_bearing = math.atan2(view.goal.y - pos.y, view.goal.x - pos.x)
        block = p.block_distance
        if block is None:
            block = view.v_max + view.collision_radius

        best = None
        for b in range(p.n_bins):
            ang = wrap_angle(-math.pi + (b + 0.5) * 2.0 * math.pi / p.n_bins)
            clear = min(view.first_hit(ang, p.lookahead),
                        view.range_to_bounds(ang), p.lookahead)
            if clear < block:
                continue
            density = max(0.0, 1.0 / max(clear, 1e-6) - 1.0 / p.lookahead)
            probe_d = min(p.probe_distance, 0.5 * clear)
            probe_x = pos.x + probe_d * math.cos(ang)
            probe_y = pos.y + probe_d * math.sin(ang)
            exposure = p.exposure_penalty if view.exposed_at(probe_x, probe_y) else 0.0
            align = abs(wrap_angle(ang - goal_bearing))
            cost = p.density_weight * density + p.align_weight * align + exposure
            key = (cost, align, b)
            if best is None or key < best[0]:
                best = (key, ang)
        if best is None:
            return (0.0, 0.0)
        ang = best[1]
        desired = (view.v_max * math.cos(ang), view.v_max * math.sin(ang))
        return smooth_and_saturate(view.agent_velocity, desired, self.weights)


class GreedyPolicy:
    """One-step lookahead over sampled headings: goal distance plus clearance
    hinge plus a binary exposure penalty. Headings are anchored at the goal
    bearing so the unobstructed case steers exactly at the goal."""

    def __init__(self, params: GreedyParams, weights: ControllerWeights):
        self.params = params
        self.weights = weights
        self.current_subgoal = None

    def __call__(self, view: SensingView):
        p = self.params
        pos = view.agent_position
        goal = view.goal
        goal_bearing = math.atan2(goal.y - pos.y, goal.x - pos.x)
        step = view.v_max

        best = None
        for i in range(p.n_headings):
            off = wrap_angle(i * 2.0 * math.pi / p.n_headings)
            ang = wrap_angle(goal_bearing + off)
            nx = pos.x + step * math.cos(ang)
            ny = pos.y + step * math.sin(ang)
            if not view.in_bounds(nx, ny):
                continue
            clear = view.clearance(nx, ny)
            if clear < view.collision_radius:
                continue
            cost = math.hypot(goal.x - nx, goal.y - ny)
            cost += p.clearance_weight * max(0.0, p.safety_distance - clear)
            if view.exposed_at(nx, ny):
                cost += p.exposure_penalty
            key = (cost, abs(off), i)
            if best is None or key < best[0]:
                best = (key, ang)
        if best is None:
            return (0.0, 0.0)
        ang = best[1]
        desired = (view.v_max * math.cos(ang), view.v_max * math.sin(ang))
        return smooth_and_saturate(view.agent_velocity, desired, self.weights)


class DwaPolicy:
    """Dynamic-window sampling over (speed, heading rate) with short rollouts.

    Rollouts assume commands realize instantly; the shared integrator applies
    smoothing on top, so the executed path lags the planned one.
    """

    def __init__(self, params: DwaParams, weights: ControllerWeights):
        self.params = params
        self.weights = weights
        self.current_subgoal = None

    def __call__(self, view: SensingView):
        p = self.params
        pos = view.agent_position
        vx, vy = view.agent_velocity
        if math.hypot(vx, vy) > 1e-9:
            heading0 = math.atan2(vy, vx)
        else:
            heading0 = math.atan2(view.goal.y - pos.y, view.goal.x - pos.x)

        speeds = np.linspace(0.0, view.v_max, p.n_speeds)
        rates = np.linspace(-p.omega_max, p.omega_max, p.n_rates)
        grid = [(s, w) for s in speeds for w in rates]

        # rollout points for the whole grid at once: (G, T, 2)
        headings = heading0 + rates[None, :] * np.arange(1, p.t_roll + 1)[:, None]
        cum_x = np.cumsum(np.cos(headings), axis=0)  # (T, n_rates)
        cum_y = np.cumsum(np.sin(headings), axis=0)
        pts = np.zeros((len(grid), p.t_roll, 2))
        for gi, (s, w) in enumerate(grid):
            wi = gi % p.n_rates
            pts[gi, :, 0] = pos.x + s * cum_x[:, wi]
            pts[gi, :, 1] = pos.y + s * cum_y[:, wi]

        flat = pts.reshape(-1, 2)
        clear = view.clearance_many(flat).reshape(len(grid), p.t_roll)
        exposed = view.exposed_many(flat).reshape(len(grid), p.t_roll)
        x0, y0, x1, y1 = view.bounds
        inb = ((flat[:, 0] >= x0) & (flat[:, 0] <= x1)
               & (flat[:, 1] >= y0) & (flat[:, 1] <= y1)).reshape(len(grid), p.t_roll)

        best = None
        for gi, (s, w) in enumerate(grid):
            if s > 0.0 and (not inb[gi].all() or (clear[gi] < view.collision_radius).any()):
                continue
            end = pts[gi, -1]
            cost = p.goal_weight * math.hypot(view.goal.x - end[0], view.goal.y - end[1])
            cost += p.clearance_weight * float(
                np.maximum(0.0, p.safety_distance - clear[gi]).mean())
            cost += p.exposure_weight * float(exposed[gi].sum())
            key = (cost, -s, gi)
            if best is None or key < best[0]:
                best = (key, s, w)
        if best is None:
            return (0.0, 0.0)
        _, s, w = best
        ang = heading0 + w
        desired = (s * math.cos(ang), s * math.sin(ang))
        return smooth_and_saturate(view.agent_velocity, desired, self.weights)


class HavenPolicy:
    """The full hierarchy as a per-step policy: candidate generation and
    masking, Q-scored subgoal selection every ``horizon`` steps (or sooner on
    subgoal arrival), potential-field tracking in between."""

    def __init__(self, params: dtqn.NetworkParams, weights: ControllerWeights,
                 tactics: TacticsConfig, sequence_mode: str = "tile",
                 epsilon: float = 0.0, rng: np.random.Generator | None = None):
        self.params = params
        self.weights = weights
        self.tactics = tactics
        self.sequence_mode = sequence_mode
        self.epsilon = epsilon
        self.rng = rng
        k = params.config.k
        self.history = deque(maxlen=max(0, k - 1))
        self.current_subgoal: Point2 | None = None
        self.steps_since_decision = 0
        self.decisions: list[tuple[int, float, float]] = []

    def _needs_decision(self, world: World) -> bool:
        if self.current_subgoal is None:
            return True
        if self.steps_since_decision >= self.weights.horizon:
            return True
        return (world.agent.position.distance_to(self.current_subgoal)
                <= world.config.subgoal_radius)

    def __call__(self, view: SensingView):
        world = view._world
        if self._needs_decision(world):
            cands = generate_candidates(world, self.tactics)
            if self.tactics.mask_visible_candidates:
                cands = free_space_filter(cands, world)
            idx = dtqn.select_subgoal(
                self.params, cands, self.epsilon, self.rng,
                history=list(self.history), mode=self.sequence_mode)
            self.history.append(cands[idx].features)
            self.current_subgoal = cands[idx].position
            self.steps_since_decision = 0
            self.decisions.append(
                (world.step_count, self.current_subgoal.x, self.current_subgoal.y))
        fb = compute_forces(world, self.current_subgoal, self.weights)
        self.steps_since_decision += 1
        return smooth_and_saturate(view.agent_velocity, fb.total, self.weights)


def make_policy(planner: PlannerId, *, controller: ControllerWeights,
                tactics: TacticsConfig | None = None,
                baselines: BaselineParams | None = None,
                checkpoint: dtqn.Checkpoint | None = None,
                network: dtqn.NetworkConfig | None = None,
                sequence_mode: str | None = None,
                epsilon: float = 0.0,
                rng: np.random.Generator | None = None):
    """Instantiate a fresh policy for one episode.

    The two learned planners require a checkpoint; ``haven`` checks it against
    the requested network configuration and ``haven_memoryless`` additionally
    requires k=1.
    """
    planner = PlannerId(planner)
    bp = baselines or BaselineParams()
    if planner is PlannerId.REACTIVE_PF:
        return ReactivePotentialFieldPolicy(controller)
    if planner is PlannerId.VFH:
        return VfhPolicy(bp.vfh, controller)
    if planner is PlannerId.GREEDY:
        return GreedyPolicy(bp.greedy, controller)
    if planner is PlannerId.DWA:
        return DwaPolicy(bp.dwa, controller)

    if checkpoint is None:
        raise dtqn.CheckpointError(f"planner {planner.value!r} requires a checkpoint")
    if planner is PlannerId.HAVEN_MEMORYLESS and checkpoint.params.config.k != 1:
        raise dtqn.CheckpointError(
            f"memory-less planner needs a k=1 checkpoint, got k={checkpoint.params.config.k}")
    if planner is PlannerId.HAVEN and network is not None:
        dtqn.require_compatible(checkpoint, network)
    mode = sequence_mode
    if mode is None:
        mode = checkpoint.config_snapshot.get("sequence_mode", "tile")
    return HavenPolicy(checkpoint.params, controller, tactics or TacticsConfig(),
                       sequence_mode=mode, epsilon=epsilon, rng=rng)
