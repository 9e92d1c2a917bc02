"""Positive-experience store with random under-sampling across meta-tasks."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from skillseq.env import MetaTaskId, ObjectState, SkillParams

CSV_FIELDS = (
    "task_code", "block_x", "block_y", "handle_x", "handle_y",
    "drawer_openness", "block_in_drawer", "gripper_holding", "param_x", "param_y",
)


@dataclass(frozen=True)
class Sample:
    task: MetaTaskId
    obs: ObjectState  # state before the successful action
    params: SkillParams


class SampleStore:
    """Append-only per-task lists of successful (task, obs, params) tuples."""

    def __init__(self):
        self.by_task: dict[MetaTaskId, list[Sample]] = {t: [] for t in MetaTaskId}
        self.insertion_counter = 0

    def record(self, task: MetaTaskId, obs: ObjectState, params) -> Sample:
        params = SkillParams(*params)
        if not params.in_workspace():
            raise ValueError(f"sample params {tuple(params)} outside the unit workspace")
        sample = Sample(MetaTaskId(task), obs, params)
        self.by_task[sample.task].append(sample)
        self.insertion_counter += 1
        return sample

    def counts(self) -> dict[MetaTaskId, int]:
        return {t: len(v) for t, v in self.by_task.items()}

    def __len__(self) -> int:
        return self.insertion_counter

    def raw_view(self) -> dict[MetaTaskId, list[Sample]]:
        return {t: list(v) for t, v in self.by_task.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for t in MetaTaskId:
            for s in self.by_task[t]:
                o = s.obs
                w.writerow([
                    int(s.task), repr(o.block_xy[0]), repr(o.block_xy[1]),
                    repr(o.drawer_handle_xy[0]), repr(o.drawer_handle_xy[1]),
                    repr(o.drawer_openness), int(o.block_in_drawer), int(o.gripper_holding),
                    repr(s.params.x), repr(s.params.y),
                ])
        return buf.getvalue()

    def save_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "SampleStore":
        store = cls()
        reader = csv.DictReader(io.StringIO(text))
        for row in reader:
            obs = ObjectState(
                block_xy=(float(row["block_x"]), float(row["block_y"])),
                drawer_handle_xy=(float(row["handle_x"]), float(row["handle_y"])),
                drawer_openness=float(row["drawer_openness"]),
                block_in_drawer=bool(int(row["block_in_drawer"])),
                gripper_holding=bool(int(row["gripper_holding"])),
            )
            store.record(MetaTaskId(int(row["task_code"])), obs,
                         (float(row["param_x"]), float(row["param_y"])))
        return store


def balanced_view(store: SampleStore, rng: np.random.Generator,
                  multiplier: float = 1.0) -> dict[MetaTaskId, list[Sample]]:
    """Randomly under-sample every non-empty task class to a common size.

    The size is ``multiplier`` times the smallest non-empty class count
    (capped by each class's own count, so nothing is duplicated). Empty
    classes stay empty and the store is left untouched.
    """
    counts = {t: len(v) for t, v in store.by_task.items()}
    nonempty = [c for c in counts.values() if c > 0]
    view: dict[MetaTaskId, list[Sample]] = {t: [] for t in MetaTaskId}
    if not nonempty:
        return view
    target = max(1, int(round(multiplier * min(nonempty))))
    for t in MetaTaskId:
        items = store.by_task[t]
        if not items:
            continue
        if len(items) <= target:
            view[t] = list(items)
        else:
            idx = np.sort(rng.choice(len(items), size=target, replace=False))
            view[t] = [items[i] for i in idx]
    return view
