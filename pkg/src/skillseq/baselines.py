"""Comparison policies: a step-indexed task schema and an oracle low level."""

from __future__ import annotations

import numpy as np

from skillseq import highlevel
from skillseq.env import EnvConfig, ObjectState, SkillId, SkillParams, skill_target
from skillseq.exploration import Agent
from skillseq.highlevel import QLearningConfig, QTable, SelectMode


class SchemaPolicy:
    """High-level policy conditioned only on the step index within an episode.

    Values are stored in a one-slot :class:`QTable` keyed by ``(step,)`` so the
    same text format serves both policies.
    """

    def __init__(self, max_steps: int = 12, epsilon: float = 0.15, initial_q: float = 0.0):
        self.max_steps = max_steps
        self.epsilon = epsilon
        self.table = QTable(1, initial_q)

    def index(self, step_index: int) -> tuple[int]:
        # Out-of-range steps reuse the last row.
        return (min(max(int(step_index), 0), self.max_steps),)

    @property
    def q_by_step(self) -> np.ndarray:
        return np.vstack([self.table.row((i,)) for i in range(self.max_steps + 1)])


def schema_select(schema: SchemaPolicy, step_index: int, mode: SelectMode,
                  rng: np.random.Generator) -> SkillId:
    cfg = QLearningConfig(epsilon=schema.epsilon, n_history=1)
    return highlevel.select_skill(schema.table, schema.index(step_index), cfg, mode, rng)


def schema_update(schema: SchemaPolicy, step_index: int, taken: SkillId, r: float,
                  next_index: int, done: bool, cfg: QLearningConfig) -> float:
    return highlevel.update(schema.table, schema.index(step_index), taken, r,
                            schema.index(next_index), done, cfg)


def oracle_params(env_state: ObjectState, skill: SkillId, config: EnvConfig | None = None) -> SkillParams:
    """Exact target point for ``skill`` in ``env_state``."""
    return SkillParams(*skill_target(config or EnvConfig(), SkillId(skill), env_state))


class OracleLowLevel:
    """Drop-in low-level policy that reads targets from the environment geometry.

    It never explores and is never trained.
    """

    trainable = False

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self.epsilon_low = 0.0

    def raw_output(self, skill: SkillId, o: ObjectState) -> np.ndarray:
        return np.array(oracle_params(o, skill, self.config))


def schema_agent(qcfg: QLearningConfig, low, max_steps: int = 12, **kw) -> Agent:
    """An :class:`Agent` whose high level is a task schema over step indices."""
    schema = SchemaPolicy(max_steps, qcfg.epsilon, qcfg.initial_q)
    return Agent(schema.table, qcfg, low, high_state="step", step_cap=max_steps, **kw)


def oracle_agent(qcfg: QLearningConfig | None = None, env_config: EnvConfig | None = None, **kw) -> Agent:
    """History-based high level over the oracle low level."""
    qcfg = qcfg or QLearningConfig()
    return Agent(QTable.from_config(qcfg), qcfg, OracleLowLevel(env_config), **kw)
