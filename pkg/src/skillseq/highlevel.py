"""Tabular Q-learning over windows of recently executed skills."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from skillseq.env import ConfigError, SkillId

N_SKILLS = len(SkillId)


class SelectMode(enum.Enum):
    GREEDY = "greedy"
    EPSILON_GREEDY = "epsilon_greedy"


@dataclass(frozen=True)
class QLearningConfig:
    lr: float = 0.1
    gamma: float = 0.9
    epsilon: float = 0.15
    n_history: int = 4
    initial_q: float = 0.0
    # Step size is lr / visits**lr_decay_power; 0 keeps it constant.
    lr_decay_power: float = 0.0

    def validate(self) -> None:
        if not 0.0 < self.lr <= 1.0:
            raise ConfigError(f"lr must be in (0, 1], got {self.lr}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.n_history < 1:
            raise ConfigError(f"n_history must be >= 1, got {self.n_history}")
        if self.lr_decay_power < 0:
            raise ConfigError("lr_decay_power must be >= 0")


@dataclass(frozen=True)
class SkillHistory:
    """The last ``n`` skills, most recent first; ``None`` marks an empty slot."""

    window: tuple[SkillId | None, ...]

    @classmethod
    def empty(cls, n: int) -> "SkillHistory":
        return cls((None,) * n)

    def push(self, skill: SkillId) -> "SkillHistory":
        return SkillHistory((SkillId(skill),) + self.window[:-1])

    def __len__(self) -> int:
        return len(self.window)

    def key(self) -> tuple[int | None, ...]:
        return tuple(None if s is None else int(s) for s in self.window)


class QTable:
    """Q-values keyed by skill history, materialized lazily."""

    def __init__(self, n_history: int, initial_q: float = 0.0):
        self.n_history = n_history
        self.initial_q = float(initial_q)
        self.entries: dict[tuple, np.ndarray] = {}
        self.visit_counts: dict[tuple, np.ndarray] = {}

    @classmethod
    def from_config(cls, cfg: QLearningConfig) -> "QTable":
        return cls(cfg.n_history, cfg.initial_q)

    def _key(self, h) -> tuple:
        if isinstance(h, SkillHistory):
            key = h.key()
        else:
            key = tuple(None if s is None else int(s) for s in h)
        if len(key) != self.n_history:
            raise ValueError(f"history length {len(key)} != table n_history {self.n_history}")
        return key

    def row(self, h) -> np.ndarray:
        """Read-only view of the four values for ``h``."""
        got = self.entries.get(self._key(h))
        if got is None:
            return np.full(N_SKILLS, self.initial_q)
        return got

    def set_row(self, h, values) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape != (N_SKILLS,) or not np.all(np.isfinite(values)):
            raise ValueError("Q-row must be 4 finite values")
        key = self._key(h)
        self.entries[key] = values.copy()
        self.visit_counts.setdefault(key, np.zeros(N_SKILLS, dtype=np.int64))

    def _materialize(self, key) -> np.ndarray:
        row = self.entries.get(key)
        if row is None:
            row = self.entries[key] = np.full(N_SKILLS, self.initial_q)
            self.visit_counts[key] = np.zeros(N_SKILLS, dtype=np.int64)
        return row

    def copy(self) -> "QTable":
        out = QTable(self.n_history, self.initial_q)
        out.entries = {k: v.copy() for k, v in self.entries.items()}
        out.visit_counts = {k: v.copy() for k, v in self.visit_counts.items()}
        return out

    def __len__(self) -> int:
        return len(self.entries)

    # Text format: a header line, then per key n slot codes (N for empty)
    # followed by the 4 values, all comma-separated.
    def dumps(self) -> str:
        lines = [f"# qtable n_history={self.n_history} initial_q={self.initial_q!r}"]
        for key in sorted(self.entries, key=_sort_key):
            fields = ["N" if s is None else str(s) for s in key]
            fields += [repr(float(v)) for v in self.entries[key]]
            lines.append(",".join(fields))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "QTable":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# qtable "):
            raise ValueError("not a Q-table file (missing header)")
        try:
            header = dict(item.split("=", 1) for item in lines[0][len("# qtable "):].split())
            table = cls(int(header["n_history"]), float(header["initial_q"]))
        except (KeyError, ValueError):
            raise ValueError("line 1: malformed Q-table header") from None
        n = table.n_history
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            fields = line.split(",")
            try:
                if len(fields) != n + N_SKILLS:
                    raise ValueError(f"expected {n + N_SKILLS} fields, got {len(fields)}")
                key = tuple(None if s == "N" else int(s) for s in fields[:n])
                # Codes are skill ids, or step indices in schema tables.
                if any(s is not None and s < 0 for s in key):
                    raise ValueError("negative slot code")
                values = np.array([float(v) for v in fields[n:]])
                if not np.all(np.isfinite(values)):
                    raise ValueError("non-finite value")
            except ValueError as exc:
                raise ValueError(f"line {lineno}: malformed Q-table row: {exc}") from None
            table.entries[key] = values
            table.visit_counts[key] = np.zeros(N_SKILLS, dtype=np.int64)
        return table

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "QTable":
        return cls.loads(Path(path).read_text())


def _sort_key(key):
    return tuple(-1 if s is None else s for s in key)


def greedy(values: np.ndarray) -> SkillId:
    # np.argmax returns the first maximum: lowest-index tie-break.
    return SkillId(int(np.argmax(values)))


def select_skill(q: QTable, h, cfg: QLearningConfig, mode: SelectMode, rng: np.random.Generator) -> SkillId:
    if mode is SelectMode.EPSILON_GREEDY and rng.random() < cfg.epsilon:
        return SkillId(int(rng.integers(N_SKILLS)))
    return greedy(q.row(h))


def update(q: QTable, h, taken: SkillId, r: float, h_next, done: bool, cfg: QLearningConfig) -> float:
    """One Q-learning backup; returns the new value of ``Q(h, taken)``.

    The bootstrap term is dropped when ``done`` is set.
    """
    key = q._key(h)
    bootstrap = 0.0 if done else float(np.max(q.row(h_next)))
    row = q._materialize(key)
    counts = q.visit_counts[key]
    counts[taken] += 1
    step = cfg.lr
    if cfg.lr_decay_power:
        step = cfg.lr / counts[taken] ** cfg.lr_decay_power
    row[taken] += step * (r + cfg.gamma * bootstrap - row[taken])
    return float(row[taken])


def greedy_rollout(q: QTable, cfg: QLearningConfig, max_len: int) -> list[SkillId]:
    h = SkillHistory.empty(cfg.n_history)
    out = []
    for _ in range(max_len):
        skill = greedy(q.row(h))
        out.append(skill)
        h = h.push(skill)
    return out
