"""Episode loops for joint and alternating two-level exploration."""

from __future__ import annotations

import enum
import logging
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np

from skillseq import highlevel, lowlevel
from skillseq.dataset import SampleStore, balanced_view
from skillseq.env import (
    SKILL_TASK,
    Action,
    ConfigError,
    DrawerBlockEnv,
    MetaTaskId,
    OutcomeKind,
    StepOutcome,
)
from skillseq.highlevel import QLearningConfig, QTable, SelectMode, SkillHistory

log = logging.getLogger(__name__)


class ExplorationMode(enum.Enum):
    JOINT = "joint"
    ALTERNATING = "alternating"


@dataclass(frozen=True)
class EpisodeLoopConfig:
    max_episode_num: int = 10_000
    max_steps_per_episode: int = 12
    mode: ExplorationMode = ExplorationMode.ALTERNATING
    alt_flag_threshold: float = 0.5
    seed: int = 0
    # High level explores in both alternating branches, as literally printed.
    pseudocode_literal: bool = False

    def validate(self) -> None:
        if self.max_episode_num < 0:
            raise ConfigError("max_episode_num must be >= 0")
        if self.max_steps_per_episode < 1:
            raise ConfigError("max_steps_per_episode must be >= 1")
        if not 0.0 <= self.alt_flag_threshold <= 1.0:
            raise ConfigError("alt_flag_threshold must be in [0, 1]")


@dataclass
class Agent:
    """Everything a training run mutates."""

    q: QTable
    qcfg: QLearningConfig
    low: lowlevel.LowLevelPolicy
    store: SampleStore = field(default_factory=SampleStore)
    undersample: bool = True
    undersample_multiplier: float = 1.0
    # Upper bound on rows per network update, drawn from the pooled view.
    train_pool_size: int | None = 320
    # "history": skill-history state; "step": episode step index (schema baseline).
    high_state: str = "history"
    step_cap: int = 12

    def initial_state(self):
        if self.high_state == "step":
            return (0,)
        return SkillHistory.empty(self.qcfg.n_history)

    def next_state(self, h, skill):
        if self.high_state == "step":
            return (min(h[0] + 1, self.step_cap),)
        return h.push(skill)

    @classmethod
    def fresh(cls, qcfg: QLearningConfig | None = None, train_cfg: lowlevel.TrainConfig | None = None,
              epsilon_low: float = 0.3, shared_net: bool = True, **kw) -> "Agent":
        qcfg = qcfg if qcfg is not None else QLearningConfig()
        qcfg.validate()
        return cls(QTable.from_config(qcfg), qcfg,
                   lowlevel.LowLevelPolicy(train_cfg, epsilon_low, shared=shared_net), **kw)


@dataclass
class EpisodeRecord:
    index: int
    total_reward: float
    stage_success: tuple[bool, bool, bool, bool]
    steps: int
    transitions: list[tuple[Action, StepOutcome]]
    low_explores: bool
    high_explores: bool
    # Steps where each level's action differed from its greedy choice.
    low_deviations: int = 0
    high_deviations: int = 0
    new_samples: tuple[int, int, int, int] = (0, 0, 0, 0)
    solved: bool = False
    flag: float | None = None

    @property
    def rewards(self) -> list[float]:
        return [out.reward for _, out in self.transitions]


def joint_success_probability(epsilon: float, sequence_len: int) -> float:
    """Chance that an epsilon-greedy low level stays greedy for a whole sequence."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if sequence_len < 0:
        raise ValueError("sequence_len must be >= 0")
    # Exact rational arithmetic on the decimal value, rounded once at the end,
    # so (0.7, 5) gives the float nearest 0.00243 rather than 0.3**5.
    greedy_p = 1 - Fraction(repr(float(epsilon)))
    return float(greedy_p ** int(sequence_len))


def _modes(cfg: EpisodeLoopConfig, flag: float | None):
    """(low mode, high mode, apply Q updates) for one episode."""
    eps, greedy = SelectMode.EPSILON_GREEDY, SelectMode.GREEDY
    if cfg.mode is ExplorationMode.JOINT:
        return eps, eps, True
    if flag < cfg.alt_flag_threshold:
        return eps, (eps if cfg.pseudocode_literal else greedy), False
    return greedy, eps, True


def update_low_level(agent: Agent, rng: np.random.Generator) -> dict:
    store = agent.store
    if len(store) == 0 or not getattr(agent.low, "trainable", True):
        return {}
    if agent.undersample:
        view = balanced_view(store, rng, agent.undersample_multiplier)
    else:
        view = store.raw_view()
    cap = agent.train_pool_size
    total = sum(len(v) for v in view.values())
    if cap is not None and total > cap:
        pooled = [s for t in MetaTaskId for s in view[t]]
        idx = np.sort(rng.choice(total, size=cap, replace=False))
        view = {t: [] for t in MetaTaskId}
        for i in idx:
            view[pooled[i].task].append(pooled[i])
    return lowlevel.train_round(agent.low, view, agent.low.cfg, rng)


def run_episode(env: DrawerBlockEnv, agent: Agent, cfg: EpisodeLoopConfig,
                rng: np.random.Generator, index: int = 0, train: bool = True) -> EpisodeRecord:
    """Play one episode, learning online; with ``train=False`` nothing is updated."""
    obs = env.reset(index)
    h = agent.initial_state()
    flag = float(rng.random()) if cfg.mode is ExplorationMode.ALTERNATING else None
    low_mode, high_mode, update_q = _modes(cfg, flag)
    update_q = update_q and train

    transitions = []
    total = 0.0
    stages = [False] * 4
    new = [0] * 4
    low_dev = high_dev = 0
    done = False
    for _ in range(cfg.max_steps_per_episode):
        greedy_skill = highlevel.greedy(agent.q.row(h))
        skill = highlevel.select_skill(agent.q, h, agent.qcfg, high_mode, rng)
        high_dev += skill != greedy_skill
        params = lowlevel.explore_params(agent.low, skill, obs, rng, low_mode)
        if low_mode is SelectMode.EPSILON_GREEDY:
            low_dev += params != lowlevel.predict(agent.low, skill, obs)

        action = Action(skill, params)
        out = env.step(action)
        transitions.append((action, out))
        total += out.reward
        h_next = agent.next_state(h, skill)
        if out.outcome_kind is OutcomeKind.STAGE_SUCCESS:
            task = out.stage_completed
            stages[task] = True
            if train:
                agent.store.record(task, obs, params)
                new[task] += 1
        if update_q:
            highlevel.update(agent.q, h, skill, out.reward, h_next, out.done, agent.qcfg)
        h, obs = h_next, out.next_obs
        if out.done:
            done = True
            break

    if train:
        update_low_level(agent, rng)

    return EpisodeRecord(
        index=index,
        total_reward=total,
        stage_success=tuple(stages),
        steps=len(transitions),
        transitions=transitions,
        low_explores=low_mode is SelectMode.EPSILON_GREEDY,
        high_explores=high_mode is SelectMode.EPSILON_GREEDY,
        low_deviations=low_dev,
        high_deviations=high_dev,
        new_samples=tuple(new),
        solved=done,
        flag=flag,
    )


def run_training(env: DrawerBlockEnv, agent: Agent, cfg: EpisodeLoopConfig,
                 progress_every: int = 0) -> list[EpisodeRecord]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    records = []
    for i in range(cfg.max_episode_num):
        records.append(run_episode(env, agent, cfg, rng, index=i))
        if progress_every and (i + 1) % progress_every == 0:
            recent = records[-progress_every:]
            log.info("episode %d: mean reward %.1f, stage successes %s", i + 1,
                     np.mean([r.total_reward for r in recent]),
                     np.mean([r.stage_success for r in recent], axis=0).round(2).tolist())
    return records
