"""Multi-seed learning curves and their CSV/SVG forms.

Variance across seeds uses the population convention (divide by the number
of seeds), so a single seed always has zero variance.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from skillseq.env import ConfigError, MetaTaskId

CURVE_HEADER = ("episode", "mean", "variance")


@dataclass
class CurveSeries:
    x: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    seed_count: int
    smoothing_window: int
    x_label: str = "episode"

    def __post_init__(self):
        self.x = np.asarray(self.x)
        self.mean = np.asarray(self.mean, dtype=float)
        self.variance = np.asarray(self.variance, dtype=float)
        if not (len(self.x) == len(self.mean) == len(self.variance)):
            raise ValueError("curve arrays must have equal length")
        if self.seed_count < 1:
            raise ValueError("seed_count must be >= 1")

    def __len__(self) -> int:
        return len(self.x)

    def final_window_mean(self, n: int) -> float:
        return float(np.mean(self.mean[-n:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow((self.x_label, "mean", "variance"))
        for x, m, v in zip(self.x, self.mean, self.variance):
            w.writerow((int(x), repr(float(m)), repr(float(v))))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, seed_count: int = 1, smoothing_window: int = 1) -> "CurveSeries":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or len(rows[0]) != 3 or tuple(rows[0][1:]) != ("mean", "variance"):
            raise ValueError("curve CSV must start with a '<x>,mean,variance' header")
        body = rows[1:]
        return cls(
            x=np.array([int(r[0]) for r in body], dtype=np.int64),
            mean=np.array([float(r[1]) for r in body]),
            variance=np.array([float(r[2]) for r in body]),
            seed_count=seed_count,
            smoothing_window=smoothing_window,
            x_label=rows[0][0],
        )

    def save_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


@dataclass
class StageCounters:
    """Cumulative positive samples per meta-task, one row per episode."""

    counts: np.ndarray  # shape (episodes, 4)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1, len(MetaTaskId))
        if np.any(np.diff(self.counts, axis=0) < 0):
            raise ValueError("stage counters must be non-decreasing")

    def final(self) -> np.ndarray:
        if len(self.counts) == 0:
            return np.zeros(len(MetaTaskId), dtype=np.int64)
        return self.counts[-1]

    def stage(self, task: MetaTaskId) -> np.ndarray:
        return self.counts[:, int(task)]


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over the last ``window`` values; shorter during warm-up."""
    if window < 1:
        raise ConfigError(f"smoothing window must be >= 1, got {window}")
    v = np.asarray(values, dtype=float)
    if v.size == 0 or window == 1:
        return v.copy()
    head = np.cumsum(v[: window - 1]) / np.arange(1, min(window, v.size + 1))
    if v.size < window:
        return head[: v.size]
    full = np.lib.stride_tricks.sliding_window_view(v, window).mean(axis=1)
    return np.concatenate([head, full])


def aggregate(per_seed: Sequence[Sequence[float]], window: int, x=None, x_label: str = "episode") -> CurveSeries:
    """Smooth each seed's series, then take mean and variance across seeds.

    Seeds may have different lengths; the curve is truncated to the shortest.
    """
    if len(per_seed) < 1:
        raise ConfigError("at least one seed is required")
    smoothed = [moving_average(s, window) for s in per_seed]
    n = min(len(s) for s in smoothed)
    stack = np.vstack([s[:n] for s in smoothed]) if n else np.zeros((len(smoothed), 0))
    # Summing in sorted order keeps the result independent of seed order.
    stack = np.sort(stack, axis=0)
    mean = stack.mean(axis=0)
    var = ((stack - mean) ** 2).mean(axis=0)
    var = np.maximum(var, 0.0)
    if len(per_seed) == 1:
        var = np.zeros_like(mean)
    xs = np.arange(n) if x is None else np.asarray(x)[:n]
    return CurveSeries(xs, mean, var, len(per_seed), window, x_label)


def reward_curve(records_per_seed, window: int = 100) -> CurveSeries:
    return aggregate([[r.total_reward for r in recs] for recs in records_per_seed], window)


def success_rate_curves(records_per_seed, window: int = 100) -> list[CurveSeries]:
    return [
        aggregate([[float(r.stage_success[t]) for r in recs] for recs in records_per_seed], window)
        for t in MetaTaskId
    ]


def sample_count_curves(records) -> StageCounters:
    """Cumulative per-stage sample counts of one run."""
    per_episode = np.array([r.new_samples for r in records], dtype=np.int64).reshape(-1, len(MetaTaskId))
    return StageCounters(np.cumsum(per_episode, axis=0))


def counters_from_snapshots(snapshots) -> StageCounters:
    """Counters from per-episode store counts (dicts keyed by MetaTaskId)."""
    return StageCounters([[snap[t] for t in MetaTaskId] for snap in snapshots])


def sample_count_series(records_per_seed) -> list[CurveSeries]:
    """Cross-seed mean/variance of cumulative counts, one curve per stage."""
    counters = [sample_count_curves(recs) for recs in records_per_seed]
    return [aggregate([c.stage(t) for c in counters], 1) for t in MetaTaskId]


def step_indexed_reward_curve(records_per_seed, window: int = 100, stride: int = 100) -> CurveSeries:
    """Reward curve against cumulative environment steps.

    Each seed's smoothed reward is sampled every ``stride`` env steps, taking
    the last episode that finished at or before that step.
    """
    series, ends = [], []
    for recs in records_per_seed:
        series.append(moving_average([r.total_reward for r in recs], window))
        ends.append(np.cumsum([r.steps for r in recs]))
    horizon = min((int(e[-1]) if len(e) else 0) for e in ends)
    grid = np.arange(stride, horizon + 1, stride)
    resampled = []
    for s, e in zip(series, ends):
        idx = np.searchsorted(e, grid, side="right") - 1
        resampled.append(s[np.maximum(idx, 0)])
    return aggregate(resampled, 1, x=grid, x_label="env_step")


def final_window_rates(records, window: int = 1000) -> np.ndarray:
    last = records[-window:]
    if not last:
        return np.zeros(len(MetaTaskId))
    return np.mean([r.stage_success for r in last], axis=0)


def final_window_reward(records, window: int = 1000) -> float:
    last = records[-window:]
    return float(np.mean([r.total_reward for r in last])) if last else 0.0


PALETTE = ("#d6336c", "#1c7ed6", "#2b8a3e", "#e67700", "#7048e8", "#495057")


def render_svg(curves: dict[str, CurveSeries], title: str = "", width: int = 640, height: int = 360) -> str:
    """Line chart of curve means with +-1 std bands, as a standalone SVG string."""
    pad = 48
    xs = [c.x for c in curves.values() if len(c)]
    if not xs:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"></svg>\n'
    x_lo = min(float(x.min()) for x in xs)
    x_hi = max(float(x.max()) for x in xs)
    lows = [float(np.min(c.mean - np.sqrt(c.variance))) for c in curves.values() if len(c)]
    highs = [float(np.max(c.mean + np.sqrt(c.variance))) for c in curves.values() if len(c)]
    y_lo, y_hi = min(lows), max(highs)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    if y_hi == y_lo:
        y_hi = y_lo + 1

    def px(x):
        return pad + (x - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y_lo) / (y_hi - y_lo) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{height - pad + 16}">{x_lo:g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 16}" text-anchor="end">{x_hi:g}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end">{y_lo:.3g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end">{y_hi:.3g}</text>',
    ]
    if title:
        parts.append(f'<text x="{width / 2}" y="{pad / 2}" text-anchor="middle" font-size="14">{title}</text>')
    for i, (name, c) in enumerate(curves.items()):
        if not len(c):
            continue
        color = PALETTE[i % len(PALETTE)]
        # Thin to at most ~600 points per polyline.
        step = max(1, len(c) // 600)
        x, m, sd = c.x[::step], c.mean[::step], np.sqrt(c.variance[::step])
        upper = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, m + sd))
        lower = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x[::-1], (m - sd)[::-1]))
        parts.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
        line = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, m))
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - pad - 4}" y="{pad + 14 * (i + 1)}" text-anchor="end" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
