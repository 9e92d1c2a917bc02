"""Kinematic drawer-and-block environment.

The task is to open a drawer, grasp a block, put the block in the drawer and
close it again. Four skills are available, each parameterized by a 2-D
workspace point. A skill succeeds when its point lands within
``position_tolerance`` of the skill's current target; there is no physics.

Coordinates live in the unit square. The drawer slides along -x when pulled,
so the handle sits on the drawer's low-x edge.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np


class ConfigError(ValueError):
    """Raised for invalid environment or experiment configuration."""


class SkillId(enum.IntEnum):
    PULL = 0
    GRASP = 1
    PUSH = 2
    PUT = 3


class MetaTaskId(enum.IntEnum):
    OPEN_DRAWER = 0
    GRASP_BLOCK = 1
    PUT_BLOCK = 2
    CLOSE_DRAWER = 3


# Skill that completes each meta-task, and back.
SKILL_TASK = {
    SkillId.PULL: MetaTaskId.OPEN_DRAWER,
    SkillId.GRASP: MetaTaskId.GRASP_BLOCK,
    SkillId.PUT: MetaTaskId.PUT_BLOCK,
    SkillId.PUSH: MetaTaskId.CLOSE_DRAWER,
}
TASK_SKILL = {task: skill for skill, task in SKILL_TASK.items()}

# Skills in the order that solves the task.
OPTIMAL_SEQUENCE = (SkillId.PULL, SkillId.GRASP, SkillId.PUT, SkillId.PUSH)


class SkillParams(NamedTuple):
    x: float
    y: float

    def in_workspace(self) -> bool:
        return 0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0


class Action(NamedTuple):
    skill: SkillId
    params: SkillParams


class Rect(NamedTuple):
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def center(self) -> tuple[float, float]:
        return (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    def shifted(self, dx: float, dy: float) -> "Rect":
        return Rect(self.xmin + dx, self.xmax + dx, self.ymin + dy, self.ymax + dy)

    def overlaps(self, other: "Rect") -> bool:
        return not (
            self.xmax <= other.xmin
            or other.xmax <= self.xmin
            or self.ymax <= other.ymin
            or other.ymax <= self.ymin
        )


@dataclass(frozen=True)
class RewardTable:
    open_drawer: float = 60.0
    grasp_block: float = 70.0
    put_block: float = 80.0
    close_drawer: float = 100.0
    invalid: float = -2.0
    collision: float = -8.0

    def stage(self, task: MetaTaskId) -> float:
        return (self.open_drawer, self.grasp_block, self.put_block, self.close_drawer)[task]

    def scaled(self, factor: float) -> "RewardTable":
        return RewardTable(*(factor * v for v in (
            self.open_drawer, self.grasp_block, self.put_block, self.close_drawer,
            self.invalid, self.collision,
        )))


@dataclass(frozen=True)
class EnvConfig:
    rng_seed: int = 0
    position_tolerance: float = 0.08
    # Closed-drawer footprint.
    drawer_rect: Rect = Rect(0.6, 0.9, 0.4, 0.7)
    # Handle offsets from the midpoint of the drawer's front (low-x) edge.
    handle_offset_closed: tuple[float, float] = (0.0, 0.0)
    handle_offset_open: tuple[float, float] = (-0.15, 0.0)
    block_spawn_region: Rect = Rect(0.05, 0.45, 0.05, 0.95)
    rewards: RewardTable = field(default_factory=RewardTable)

    def validate(self) -> None:
        if not self.position_tolerance > 0:
            raise ConfigError(f"position_tolerance must be > 0, got {self.position_tolerance}")
        if self.block_spawn_region.overlaps(self.drawer_rect):
            raise ConfigError("block_spawn_region overlaps the closed drawer footprint")
        for rect in (self.drawer_rect, self.block_spawn_region,
                     self.drawer_rect.shifted(*self.drawer_travel)):
            if not (0.0 <= rect.xmin <= rect.xmax <= 1.0 and 0.0 <= rect.ymin <= rect.ymax <= 1.0):
                raise ConfigError(f"rectangle {tuple(rect)} leaves the unit workspace")

    @property
    def drawer_travel(self) -> tuple[float, float]:
        """Displacement of the drawer body between closed and open."""
        return (self.handle_offset_open[0] - self.handle_offset_closed[0],
                self.handle_offset_open[1] - self.handle_offset_closed[1])

    def handle_xy(self, openness: float) -> tuple[float, float]:
        r = self.drawer_rect
        off = self.handle_offset_open if openness >= 0.5 else self.handle_offset_closed
        return (r.xmin + off[0], 0.5 * (r.ymin + r.ymax) + off[1])

    def drawer_box(self, openness: float) -> Rect:
        if openness >= 0.5:
            return self.drawer_rect.shifted(*self.drawer_travel)
        return self.drawer_rect

    def to_dict(self) -> dict:
        return {
            "rng_seed": self.rng_seed,
            "position_tolerance": self.position_tolerance,
            "drawer_rect": list(self.drawer_rect),
            "handle_offset_closed": list(self.handle_offset_closed),
            "handle_offset_open": list(self.handle_offset_open),
            "block_spawn_region": list(self.block_spawn_region),
            "rewards": {k: getattr(self.rewards, k) for k in RewardTable.__dataclass_fields__},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown env keys: {sorted(unknown)}")
        kw = dict(d)
        for key in ("drawer_rect", "block_spawn_region"):
            if key in kw:
                kw[key] = Rect(*map(float, kw[key]))
        for key in ("handle_offset_closed", "handle_offset_open"):
            if key in kw:
                kw[key] = tuple(map(float, kw[key]))
        if "rewards" in kw:
            kw["rewards"] = RewardTable(**kw["rewards"])
        cfg = cls(**kw)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class ObjectState:
    block_xy: tuple[float, float]
    drawer_handle_xy: tuple[float, float]
    drawer_openness: float
    block_in_drawer: bool
    gripper_holding: bool

    OBS_DIM = 7

    def to_vector(self) -> np.ndarray:
        return self._vector.copy()

    @cached_property
    def _vector(self) -> np.ndarray:
        return np.array([
            self.block_xy[0], self.block_xy[1],
            self.drawer_handle_xy[0], self.drawer_handle_xy[1],
            self.drawer_openness,
            float(self.block_in_drawer), float(self.gripper_holding),
        ])


class OutcomeKind(enum.Enum):
    STAGE_SUCCESS = "stage_success"
    INVALID_STEP = "invalid_step"
    COLLISION = "collision"


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    next_obs: ObjectState
    done: bool
    stage_completed: MetaTaskId | None
    outcome_kind: OutcomeKind


def max_episode_reward(config: EnvConfig | None = None) -> float:
    rewards = (config or EnvConfig()).rewards
    return sum(rewards.stage(t) for t in MetaTaskId)


def skill_target(config: EnvConfig, skill: SkillId, state: ObjectState) -> tuple[float, float]:
    """Point a skill must be aimed at (within tolerance) to take effect."""
    if skill is SkillId.GRASP:
        return state.block_xy
    if skill is SkillId.PUT:
        return config.drawer_box(state.drawer_openness).center()
    if skill is SkillId.PULL:
        return config.handle_xy(0.0)
    return config.handle_xy(1.0)


def _near(params: SkillParams, target: tuple[float, float], tol: float) -> bool:
    return math.hypot(params.x - target[0], params.y - target[1]) <= tol


class DrawerBlockEnv:
    """Put-block-in-drawer task with a discrete stage machine.

    Each instance owns its state; use one instance per worker.
    """

    def __init__(self, config: EnvConfig | None = None):
        self.config = config if config is not None else EnvConfig()
        self.config.validate()
        self.state: ObjectState | None = None
        self.credited: set[MetaTaskId] = set()
        self.steps = 0

    def reset(self, episode_seed: int) -> ObjectState:
        rng = np.random.default_rng([self.config.rng_seed, episode_seed])
        r = self.config.block_spawn_region
        bx, by = rng.uniform((r.xmin, r.ymin), (r.xmax, r.ymax))
        self.state = self._make_state((float(bx), float(by)), 0.0, False, False)
        self.credited = set()
        self.steps = 0
        return self.state

    def _make_state(self, block_xy, openness, in_drawer, holding) -> ObjectState:
        return ObjectState(
            block_xy=block_xy,
            drawer_handle_xy=self.config.handle_xy(openness),
            drawer_openness=openness,
            block_in_drawer=in_drawer,
            gripper_holding=holding,
        )

    def target(self, skill: SkillId, state: ObjectState | None = None) -> tuple[float, float]:
        return skill_target(self.config, skill, state if state is not None else self.state)

    def step(self, action: Action) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("step() called before reset()")
        self.steps += 1
        cfg = self.config
        s = self.state
        skill = SkillId(action.skill)
        p = SkillParams(*action.params)
        tol = cfg.position_tolerance
        is_open = s.drawer_openness >= 0.5

        if not (math.isfinite(p.x) and math.isfinite(p.y) and p.in_workspace()):
            return self._invalid()

        if skill is SkillId.PULL:
            if is_open or not _near(p, cfg.handle_xy(0.0), tol):
                return self._invalid()
            block = s.block_xy
            if s.block_in_drawer:
                block = (block[0] + cfg.drawer_travel[0], block[1] + cfg.drawer_travel[1])
            self.state = self._make_state(block, 1.0, s.block_in_drawer, s.gripper_holding)
            return self._stage(MetaTaskId.OPEN_DRAWER)

        if skill is SkillId.GRASP:
            # Stage two only becomes reachable once the drawer is open.
            if not is_open or s.gripper_holding or s.block_in_drawer or not _near(p, s.block_xy, tol):
                return self._invalid()
            self.state = replace(s, gripper_holding=True)
            return self._stage(MetaTaskId.GRASP_BLOCK)

        if skill is SkillId.PUT:
            if not is_open and cfg.drawer_rect.contains(p.x, p.y):
                return self._emit(cfg.rewards.collision, OutcomeKind.COLLISION)
            if not (is_open and s.gripper_holding and _near(p, self.target(SkillId.PUT), tol)):
                return self._invalid()
            self.state = self._make_state((p.x, p.y), 1.0, True, False)
            return self._stage(MetaTaskId.PUT_BLOCK)

        # PUSH
        if not is_open or not _near(p, cfg.handle_xy(1.0), tol):
            return self._invalid()
        block = s.block_xy
        if s.block_in_drawer:
            block = (block[0] - cfg.drawer_travel[0], block[1] - cfg.drawer_travel[1])
        self.state = self._make_state(block, 0.0, s.block_in_drawer, s.gripper_holding)
        prior = {MetaTaskId.OPEN_DRAWER, MetaTaskId.GRASP_BLOCK, MetaTaskId.PUT_BLOCK}
        if s.block_in_drawer and prior <= self.credited:
            return self._stage(MetaTaskId.CLOSE_DRAWER, done=True)
        return self._invalid()

    def _stage(self, task: MetaTaskId, done: bool = False) -> StepOutcome:
        if task in self.credited:
            # Physical effect already applied; no second stage reward.
            return self._invalid()
        self.credited.add(task)
        return self._emit(self.config.rewards.stage(task), OutcomeKind.STAGE_SUCCESS, task, done)

    def _invalid(self) -> StepOutcome:
        return self._emit(self.config.rewards.invalid, OutcomeKind.INVALID_STEP)

    def _emit(self, reward, kind, task=None, done=False) -> StepOutcome:
        return StepOutcome(reward=reward, next_obs=self.state, done=done,
                           stage_completed=task, outcome_kind=kind)
