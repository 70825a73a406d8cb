"""Point-cloud to 2D-schema bridge: planar projection, polygonization,
persistence filtering, and a full projected navigation pipeline.

A synthetic planar-LiDAR generator stands in for an external engine so the
pipeline is testable end to end: rays are cast against a reference world,
perturbed with range noise, dropout, and optional frame-local phantom
clusters, then fed back through projection -> clustering -> persistence into
the unchanged candidate/Q-network/controller stack.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .controller import ControllerWeights, compute_forces, unicycle_command
from .dtqn import Checkpoint, select_subgoal
from .geometry import Point2, Polygon, first_hit_distance, is_visible, wrap_angle
from .tactics import TacticsConfig, generate_candidates
from .world import AgentState, EpisodeRecord, TrajectoryStep, World, WorldConfig, _stream


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3)
    frame_id: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.points.size and not np.isfinite(self.points).all():
            raise ValueError("point cloud contains non-finite coordinates")


@dataclass(frozen=True)
class LidarParams:
    n_rays: int = 360
    max_range: float = 25.0
    noise_sigma: float = 0.02
    dropout: float = 0.05
    z_height: float = 0.5
    phantom_rate: float = 0.0   # expected phantom clusters per frame
    ground_returns: int = 0     # stray near-ground points per frame


@dataclass(frozen=True)
class ProjectionConfig:
    z_band: tuple = (0.1, 2.0)
    cluster_eps: float = 0.4
    min_cluster: int = 5
    area_floor: float = 0.05
    cell_size: float = 0.25
    window: int = 5
    persistence: int = 3
    dt: float = 1.0
    omega_max: float = 1.5
    subgoal_hold: int = 1
    normalize_features: bool = True
    lidar: LidarParams = LidarParams()


def project_to_plane(cloud: PointCloud, z_band: tuple) -> np.ndarray:
    """Ground-plane projection: keep (x, y) of points inside the z band."""
    lo, hi = z_band
    if not lo < hi:
        raise ValueError(f"bad z band {z_band}")
    pts = cloud.points
    if pts.size == 0:
        return np.zeros((0, 2))
    keep = (pts[:, 2] >= lo) & (pts[:, 2] <= hi)
    return pts[keep, :2].copy()


def polygonize(points: np.ndarray, cluster_eps: float = 0.4, min_cluster: int = 5,
               area_floor: float = 0.05) -> list[Polygon]:
    """Density-cluster projected points and hull each cluster.

    Points within ``cluster_eps`` of each other are connected; components
    smaller than ``min_cluster`` or with hull area below ``area_floor`` are
    dropped. Output order follows each cluster's smallest point index.
    """
    if cluster_eps <= 0.0:
        raise ValueError("cluster_eps must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < min_cluster:
        return []

    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree = cKDTree(pts)
    for i, j in tree.query_pairs(r=cluster_eps):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    clusters: dict[int, list[int]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)

    out = []
    for root in sorted(clusters):
        idx = clusters[root]
        if len(idx) < min_cluster:
            continue
        try:
            hull = ConvexHull(pts[idx])
        except QhullError:
            continue
        verts = pts[idx][hull.vertices]
        try:
            poly = Polygon(verts.tolist())
        except ValueError:
            continue
        if poly.area < area_floor:
            continue
        out.append(poly)
    return out


class PersistenceTracker:
    """Sliding-window observation counters over a 2D grid. An extracted
    polygon is trusted only once its centroid cell has been covered in at
    least ``threshold`` of the last ``window`` frames."""

    def __init__(self, origin: tuple = (0.0, 0.0), cell_size: float = 0.25,
                 window: int = 5, threshold: int = 3):
        if not (1 <= threshold <= window):
            raise ValueError("need 1 <= threshold <= window")
        self.origin = origin
        self.cell_size = cell_size
        self.window = window
        self.threshold = threshold
        self.frames: deque = deque()
        self.counts: dict = {}

    def cell_of(self, x: float, y: float) -> tuple:
        return (int(math.floor((x - self.origin[0]) / self.cell_size)),
                int(math.floor((y - self.origin[1]) / self.cell_size)))

    def update(self, polygons) -> list[Polygon]:
        covered = set()
        for poly in polygons:
            covered.update(poly.covered_cells(self.cell_size, *self.origin))
            covered.add(self.cell_of(poly.centroid.x, poly.centroid.y))
        self.frames.append(covered)
        for c in covered:
            self.counts[c] = self.counts.get(c, 0) + 1
        while len(self.frames) > self.window:
            old = self.frames.popleft()
            for c in old:
                self.counts[c] -= 1
                if self.counts[c] == 0:
                    del self.counts[c]
        return [p for p in polygons
                if self.counts.get(self.cell_of(p.centroid.x, p.centroid.y), 0)
                >= self.threshold]


def persistence_filter(tracker: PersistenceTracker, polygons):
    """Functional wrapper over :meth:`PersistenceTracker.update`."""
    return tracker, tracker.update(polygons)


# ----------------------------------------------------------------------
# synthetic planar LiDAR


def scan_from(obstacles, pose: tuple, params: LidarParams,
              rng: np.random.Generator) -> np.ndarray:
    """One 360-degree scan from (x, y); returns (M, 3) points."""
    x, y = pose
    pts = []
    for i in range(params.n_rays):
        ang = -math.pi + (i + 0.5) * 2.0 * math.pi / params.n_rays
        d = first_hit_distance(x, y, ang, params.max_range, obstacles)
        if not math.isfinite(d):
            continue
        if params.dropout > 0.0 and rng.uniform() < params.dropout:
            continue
        d = max(0.0, d + rng.normal(0.0, params.noise_sigma))
        pts.append((x + d * math.cos(ang), y + d * math.sin(ang), params.z_height))
    return np.array(pts, dtype=float).reshape(-1, 3)


def synthesize_frames(world: World, scan_poses, n_frames: int,
                      params: LidarParams | None = None,
                      seed: int = 0) -> tuple[list[PointCloud], list[list]]:
    """Render point-cloud frames from a reference world.

    Each frame merges one scan per pose in ``scan_poses`` (a multi-vantage
    rig), optionally salted with phantom clusters and stray ground returns.
    Enemies patrol one step between frames; the per-frame enemy states are
    returned alongside the clouds. The caller's world is not mutated.
    """
    from .world import step_enemy  # local import to keep module load light

    params = params or LidarParams()
    rng = _stream(seed, "lidar")
    x0, y0, x1, y1 = world.config.bounds

    shadow = World(world.config, world.obstacles, list(world.enemies),
                   AgentState(world.agent.position, world.agent.velocity))
    shadow.reseed_enemies(seed)

    frames: list[PointCloud] = []
    states: list[list] = []
    for fi in range(n_frames):
        chunks = [scan_from(world.obstacles, pose, params, rng) for pose in scan_poses]
        if params.ground_returns > 0:
            gx = rng.uniform(x0, x1, params.ground_returns)
            gy = rng.uniform(y0, y1, params.ground_returns)
            gz = np.full(params.ground_returns, 0.02)
            chunks.append(np.column_stack([gx, gy, gz]))
        if params.phantom_rate > 0.0:
            for _ in range(int(rng.poisson(params.phantom_rate))):
                cx = rng.uniform(x0 + 1.0, x1 - 1.0)
                cy = rng.uniform(y0 + 1.0, y1 - 1.0)
                m = int(rng.integers(6, 10))
                px = cx + rng.uniform(-0.15, 0.15, m)
                py = cy + rng.uniform(-0.15, 0.15, m)
                pz = np.full(m, params.z_height)
                chunks.append(np.column_stack([px, py, pz]))
        pts = np.vstack([c for c in chunks if c.size]) if chunks else np.zeros((0, 3))
        frames.append(PointCloud(points=pts, frame_id=fi))
        states.append(list(shadow.enemies))
        shadow.enemies = [step_enemy(e, shadow) for e in shadow.enemies]
    return frames, states


def default_scan_poses(config: WorldConfig, n_poses: int = 6, inset: float = 0.5):
    """A ring of scan poses just inside the workspace boundary."""
    x0, y0, x1, y1 = config.bounds
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    rx = 0.5 * (x1 - x0) - inset
    ry = 0.5 * (y1 - y0) - inset
    return [(cx + rx * math.cos(2.0 * math.pi * i / n_poses),
             cy + ry * math.sin(2.0 * math.pi * i / n_poses))
            for i in range(n_poses)]


# ----------------------------------------------------------------------
# full projected pipeline


def run_projected_pipeline(frames, enemy_states, world_config: WorldConfig,
                           proj: ProjectionConfig, controller: ControllerWeights,
                           tactics: TacticsConfig, checkpoint: Checkpoint,
                           sequence_mode: str | None = None) -> EpisodeRecord:
    """Drive the unchanged 2D decision stack from point-cloud frames.

    Per frame: project to the plane, polygonize, persistence-filter, then
    select a subgoal with the trained network and synthesize a unicycle
    command from the controller force; the pose integrates a simulated
    unicycle. Flags are evaluated against the recovered obstacle set and the
    provided enemy states.
    """
    params = checkpoint.params
    k = params.config.k
    mode = sequence_mode or checkpoint.config_snapshot.get("sequence_mode", "tile")
    tcfg = TacticsConfig(
        dedup_radius=tactics.dedup_radius,
        mask_visible_candidates=tactics.mask_visible_candidates,
        normalize_features=proj.normalize_features,
    )
    tracker = PersistenceTracker(origin=(world_config.bounds[0], world_config.bounds[1]),
                                 cell_size=proj.cell_size, window=proj.window,
                                 threshold=proj.persistence)

    start = world_config.start_point
    goal = world_config.goal_point
    x, y = start.x, start.y
    theta = math.atan2(goal.y - start.y, goal.x - start.x)
    vx = vy = 0.0
    history: deque = deque(maxlen=max(0, k - 1))
    subgoal: Point2 | None = None
    frames_since_decision = 0

    record = EpisodeRecord(planner="haven_projected", seed=world_config.seed)
    record.steps.append(TrajectoryStep(
        x=x, y=y, exposed=False, collided=False, reached_subgoal=False,
        reached_goal=False, clearance=world_config.diagonal,
        enemies=tuple((e.position.x, e.position.y, e.heading)
                      for e in (enemy_states[0] if enemy_states else []))))

    for cloud, enemies in zip(frames, enemy_states):
        pts = project_to_plane(cloud, proj.z_band)
        polys = polygonize(pts, proj.cluster_eps, proj.min_cluster, proj.area_floor)
        obstacles = tracker.update(polys)

        frame_world = World(
            world_config, obstacles, list(enemies),
            AgentState(position=Point2(x, y), velocity=(vx, vy)))

        if subgoal is None or frames_since_decision >= proj.subgoal_hold \
                or Point2(x, y).distance_to(subgoal) <= world_config.subgoal_radius:
            cands = generate_candidates(frame_world, tcfg)
            idx = select_subgoal(params, cands, 0.0, None,
                                 history=list(history), mode=mode)
            history.append(cands[idx].features)
            subgoal = cands[idx].position
            frames_since_decision = 0
            record.subgoal_events.append((len(record.steps) - 1, subgoal.x, subgoal.y))
        frames_since_decision += 1

        fb = compute_forces(frame_world, subgoal, controller)
        v, omega = unicycle_command(fb.total, theta, proj.dt, proj.omega_max)
        v = min(v, world_config.agent_max_speed)
        theta = wrap_angle(theta + omega * proj.dt)
        x += v * proj.dt * math.cos(theta)
        y += v * proj.dt * math.sin(theta)
        vx, vy = v * math.cos(theta), v * math.sin(theta)

        pos = Point2(x, y)
        clearance = (min(o.distance(x, y) for o in obstacles)
                     if obstacles else world_config.diagonal)
        out_of_bounds = not (world_config.bounds[0] <= x <= world_config.bounds[2]
                             and world_config.bounds[1] <= y <= world_config.bounds[3])
        collided = out_of_bounds or clearance < world_config.collision_radius
        exposed = any(is_visible(pos, e.sensor, obstacles) for e in enemies)
        reached_goal = (not collided) and pos.distance_to(goal) <= world_config.goal_radius
        reached_subgoal = pos.distance_to(subgoal) <= world_config.subgoal_radius

        record.steps.append(TrajectoryStep(
            x=x, y=y, exposed=exposed, collided=collided,
            reached_subgoal=reached_subgoal, reached_goal=reached_goal,
            clearance=clearance,
            enemies=tuple((e.position.x, e.position.y, e.heading) for e in enemies)))
        if collided or reached_goal:
            break
    return record


# ----------------------------------------------------------------------
# frame file I/O: one "x y z" point per line, blank line between frames


def write_frames(frames, path) -> None:
    with open(path, "w") as fh:
        for i, cloud in enumerate(frames):
            if i:
                fh.write("\n")
            for px, py, pz in cloud.points:
                fh.write(f"{float(px)!r} {float(py)!r} {float(pz)!r}\n")


def read_frames(path) -> list[PointCloud]:
    frames: list[PointCloud] = []
    current: list[list[float]] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                if current:
                    frames.append(PointCloud(points=np.array(current), frame_id=len(frames)))
                    current = []
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"bad frame line: {line!r}")
            current.append([float(v) for v in parts])
    if current:
        frames.append(PointCloud(points=np.array(current), frame_id=len(frames)))
    return frames
