"""Candidate subgoal generation, masking, and the 16-slot feature encoding.

The feature vector layout (``FEATURE_NAMES``) is the single observation
schema shared by 2D training, evaluation, and the projected point-cloud
pipeline. Slot order is frozen; debug CSV dumps use the same order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import EPS, Point2, is_visible
from .world import World

FEATURE_DIM = 16
FEATURE_NAMES = (
    "agent_x", "agent_y", "agent_vx", "agent_vy",
    "goal_dx", "goal_dy", "goal_dist",
    "cand_x", "cand_y", "cand_dx", "cand_dy", "cand_dist",
    "n_enemy", "min_enemy_dist", "n_visible", "seen",
)

SOURCE_GOAL = "goal"
SOURCE_CENTROID = "obstacle-centroid"

# slots divided by the bounds diagonal when normalization is enabled
_POSITION_SLOTS = (0, 1, 4, 5, 6, 7, 8, 9, 10, 11, 13)


@dataclass(frozen=True)
class TacticsConfig:
    dedup_radius: float = 0.5
    mask_visible_candidates: bool = False
    normalize_features: bool = False


@dataclass
class Candidate:
    """A scored subgoal proposal. Masked candidates are kept for auditing
    but are never selectable and never carry a Q-value."""

    position: Point2
    source: str
    masked: bool
    features: np.ndarray
    mask_reason: str | None = None
    q_value: float | None = None


def encode_features(world: World, candidate: Point2,
                    normalize: bool = False) -> np.ndarray:
    """Fill the 16 observation slots for one candidate subgoal.

    With no enemies, the minimum enemy distance falls back to the bounds
    diagonal sentinel. When ``normalize`` is set, position-scale slots are
    divided by the bounds diagonal.
    """
    cfg = world.config
    agent = world.agent
    ax, ay = agent.position.x, agent.position.y
    gx, gy = cfg.goal
    cx, cy = candidate.x, candidate.y

    goal_dx, goal_dy = gx - ax, gy - ay
    cand_dx, cand_dy = cx - ax, cy - ay

    n_enemy = len(world.enemies)
    if n_enemy:
        min_enemy = min(math.hypot(cx - e.position.x, cy - e.position.y)
                        for e in world.enemies)
        n_vis = sum(1 for e in world.enemies
                    if is_visible(candidate, e.sensor, world.obstacles))
        seen = 1.0 if world.exposed(agent.position) else 0.0
    else:
        min_enemy = cfg.diagonal
        n_vis = 0
        seen = 0.0

    f = np.array([
        ax, ay, agent.velocity[0], agent.velocity[1],
        goal_dx, goal_dy, math.hypot(goal_dx, goal_dy),
        cx, cy, cand_dx, cand_dy, math.hypot(cand_dx, cand_dy),
        float(n_enemy), min_enemy, float(n_vis), seen,
    ], dtype=float)
    if normalize:
        f[list(_POSITION_SLOTS)] /= cfg.diagonal
    return f


def generate_candidates(world: World,
                        config: TacticsConfig | None = None) -> list[Candidate]:
    """Candidate set: the goal plus every obstacle centroid, with masking.

    A candidate is masked when it (a) lies within the dedup radius of an
    already-accepted candidate, (b) sits farther from the agent than the
    agent-to-goal distance, (c) is a non-centroid candidate lying inside an
    obstacle, or (d) leaves the workspace. Centroid candidates are exempt
    from (c): they are inside obstacle geometry by construction and stand
    for "move toward that cover". The goal is processed first so
    dedup/distance rules cannot eliminate it; if every candidate ends up
    masked the goal is restored, so at least one always survives.
    """
    cfg = config or TacticsConfig()
    wc = world.config
    x0, y0, x1, y1 = wc.bounds
    goal_dist = world.goal_distance()

    raw: list[tuple[Point2, str]] = [(wc.goal_point, SOURCE_GOAL)]
    raw.extend((o.centroid, SOURCE_CENTROID) for o in world.obstacles)

    accepted: list[Point2] = []
    out: list[Candidate] = []
    for pos, source in raw:
        reason = None
        if not (x0 <= pos.x <= x1 and y0 <= pos.y <= y1):
            reason = "out-of-bounds"
        if reason is None and source != SOURCE_CENTROID:
            if any(o.contains(pos.x, pos.y) for o in world.obstacles):
                reason = "inside-obstacle"
        if reason is None and source != SOURCE_GOAL:
            if pos.distance_to(world.agent.position) > goal_dist + EPS:
                reason = "distance"
        if reason is None:
            for a in accepted:
                if pos.distance_to(a) <= cfg.dedup_radius:
                    reason = "dedup"
                    break
        if reason is None:
            accepted.append(pos)
        out.append(Candidate(
            position=pos, source=source, masked=reason is not None,
            features=encode_features(world, pos, normalize=cfg.normalize_features),
            mask_reason=reason,
        ))

    if not any(not c.masked for c in out):
        out[0] = replace(out[0], masked=False, mask_reason=None)
    return out


def free_space_filter(candidates: list[Candidate], world: World) -> list[Candidate]:
    """Additionally mask candidates currently visible to any enemy.

    Never leaves the candidate set empty: if the filter would mask every
    remaining candidate, the goal candidate is restored.
    """
    out = []
    for c in candidates:
        if not c.masked and any(
            is_visible(c.position, e.sensor, world.obstacles) for e in world.enemies
        ):
            out.append(replace(c, masked=True, mask_reason="exposed", q_value=None))
        else:
            out.append(c)
    if not any(not c.masked for c in out):
        for i, c in enumerate(out):
            if c.source == SOURCE_GOAL:
                out[i] = replace(c, masked=False, mask_reason=None)
                break
    return out


def build_sequence(features: np.ndarray, history=None, k: int = 3,
                   mode: str = "tile") -> np.ndarray:
    """Assemble the (k, 16) observation sequence for one candidate.

    ``tile`` repeats the current features k times. ``history`` places the
    last k-1 recorded agent observations before the current features,
    front-padding by repetition when fewer are available. For k=1 the two
    modes coincide.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if mode not in ("tile", "history"):
        raise ValueError(f"unknown sequence mode {mode!r}")
    f = np.asarray(features, dtype=float)
    if f.shape != (FEATURE_DIM,):
        raise ValueError(f"features must have shape ({FEATURE_DIM},), got {f.shape}")
    if mode == "tile" or k == 1:
        return np.tile(f, (k, 1))
    hist = [np.asarray(h, dtype=float) for h in (history or [])]
    for h in hist:
        if h.shape != (FEATURE_DIM,):
            raise ValueError("history entries must be 16-vectors")
    hist = hist[-(k - 1):]
    pad = hist[0] if hist else f
    rows = [pad] * (k - 1 - len(hist)) + hist + [f]
    return np.stack(rows)
