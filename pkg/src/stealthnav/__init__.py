"""Adversary-aware 2D navigation: simulator, learned subgoal selection,
classical baselines, point-cloud projection, and a benchmark harness."""

__version__ = "0.1.0"

from .geometry import FovSector, Point2, Polygon, is_visible, segment_clear
from .world import (
    Enemy,
    EpisodeRecord,
    MetricsRow,
    RewardWeights,
    StepFlags,
    World,
    WorldConfig,
    generate_world,
    metrics,
    reward,
    step_agent,
)

__all__ = [
    "Enemy",
    "EpisodeRecord",
    "FovSector",
    "MetricsRow",
    "Point2",
    "Polygon",
    "RewardWeights",
    "StepFlags",
    "World",
    "WorldConfig",
    "__version__",
    "generate_world",
    "is_visible",
    "metrics",
    "reward",
    "segment_clear",
    "step_agent",
]
