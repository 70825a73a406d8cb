"""Aggregate run configuration: one JSON file mirrors every tunable block.

Unknown keys are rejected so typos cannot silently fall back to defaults,
and every CLI entry point writes the fully-materialized configuration next
to its outputs so reported numbers are reproducible from artifacts alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from ..baselines import BaselineParams, DwaParams, GreedyParams, VfhParams
from ..controller import ControllerWeights
from ..dtqn import NetworkConfig
from ..projection import LidarParams, ProjectionConfig
from ..tactics import TacticsConfig
from ..world import RewardWeights, WorldConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 5000
    epsilon: float = 0.1
    # 0.95 keeps goal completion strictly more valuable than milling between
    # reachable subgoals under the progress-rebaselining reward
    gamma: float = 0.95
    lr: float = 1e-3
    # charged when a decision returns to an earlier subgoal after leaving it;
    # without it, re-baselined progress pays for endless waypoint cycling
    revisit_penalty: float = 5.0
    checkpoint_every: int = 1000
    sequence_mode: str = "history"
    n_obstacles_range: tuple | None = (5, 10)
    n_enemies_range: tuple | None = (2, 4)

    def __post_init__(self):
        if self.sequence_mode not in ("tile", "history"):
            raise ConfigError(f"bad sequence_mode {self.sequence_mode!r}")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ConfigError("epsilon must lie in [0, 1]")


@dataclass(frozen=True)
class EvalConfig:
    n_envs: int = 20
    episodes_per_env: int = 10
    n_obstacles_range: tuple | None = (5, 10)
    n_enemies_range: tuple | None = (2, 4)


def _build(cls, data: dict, section: str, nested: dict | None = None):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {section!r}: {unknown}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if nested and f.name in nested:
            v = _build(nested[f.name], v, f"{section}.{f.name}")
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad section {section!r}: {exc}") from exc


@dataclass(frozen=True)
class SimConfig:
    world: WorldConfig = WorldConfig()
    reward: RewardWeights = RewardWeights()
    controller: ControllerWeights = ControllerWeights()
    network: NetworkConfig = NetworkConfig()
    tactics: TacticsConfig = TacticsConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    baselines: BaselineParams = BaselineParams()
    projection: ProjectionConfig = ProjectionConfig()

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown top-level section(s): {unknown}")
        world = _build(WorldConfig, data.get("world", {}), "world")
        ctrl_data = dict(data.get("controller", {}))
        if "v_max" not in ctrl_data:
            ctrl_data["v_max"] = world.agent_max_speed
        return cls(
            world=world,
            reward=_build(RewardWeights, data.get("reward", {}), "reward"),
            controller=_build(ControllerWeights, ctrl_data, "controller"),
            network=_build(NetworkConfig, data.get("network", {}), "network"),
            tactics=_build(TacticsConfig, data.get("tactics", {}), "tactics"),
            train=_build(TrainConfig, data.get("train", {}), "train"),
            eval=_build(EvalConfig, data.get("eval", {}), "eval"),
            baselines=_build(BaselineParams, data.get("baselines", {}), "baselines",
                             nested={"vfh": VfhParams, "greedy": GreedyParams,
                                     "dwa": DwaParams}),
            projection=_build(ProjectionConfig, data.get("projection", {}), "projection",
                              nested={"lidar": LidarParams}),
        )

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def with_network_k(self, k: int) -> "SimConfig":
        return dataclasses.replace(
            self, network=dataclasses.replace(self.network, k=k))
