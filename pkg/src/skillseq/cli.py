"""Experiment driver: config parsing, seeded runs and artifact emission.

Every file a command writes lands under the output directory and is listed,
with its SHA-256, in ``manifest.json``. Nothing time- or host-dependent is
written, so re-running a config reproduces every file byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from skillseq import metrics
from skillseq.env import ConfigError, DrawerBlockEnv, EnvConfig, MetaTaskId
from skillseq.exploration import Agent, EpisodeLoopConfig, ExplorationMode, run_episode, run_training
from skillseq.highlevel import QLearningConfig, QTable
from skillseq.lowlevel import LowLevelPolicy, TrainConfig

log = logging.getLogger("skillseq")

# Evaluation resets use episode seeds far from any training index.
EVAL_SEED_OFFSET = 1_000_000
STAGES = [t for t in MetaTaskId]


class ConfigFileError(Exception):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    qlearn: QLearningConfig = field(default_factory=QLearningConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=0.1, batch_size=32, epochs_per_update=4))
    epsilon_low: float = 0.7
    shared_net: bool = True
    train_pool_size: int | None = 320
    loop: EpisodeLoopConfig = field(default_factory=EpisodeLoopConfig)
    undersample_enabled: bool = True
    undersample_multiplier: float = 1.0
    seeds: tuple[int, ...] = tuple(range(10))
    output_dir: str = "runs/default"
    smoothing_window: int = 100
    final_window: int = 1000
    eval_episodes: int = 100

    def validate(self) -> None:
        self.env.validate()
        self.qlearn.validate()
        self.train.validate()
        self.loop.validate()
        if not self.seeds:
            raise ConfigError("seeds: at least one seed is required")
        if not 0.0 <= self.epsilon_low <= 1.0:
            raise ConfigError("epsilon_low must be in [0, 1]")
        if self.train_pool_size is not None and self.train_pool_size < 1:
            raise ConfigError("train_pool_size must be >= 1 or null")
        if not self.undersample_multiplier > 0:
            raise ConfigError("undersample_multiplier must be > 0")
        if self.smoothing_window < 1 or self.final_window < 1:
            raise ConfigError("smoothing_window and final_window must be >= 1")
        if self.eval_episodes < 0:
            raise ConfigError("eval_episodes must be >= 0")

    def to_dict(self) -> dict:
        env = self.env.to_dict()
        del env["rng_seed"]
        train = dataclasses.asdict(self.train)
        del train["weight_init_seed"]
        loop = dataclasses.asdict(self.loop)
        del loop["seed"]
        loop["mode"] = self.loop.mode.value
        return {
            "env": env,
            "qlearn": dataclasses.asdict(self.qlearn),
            "lowlevel": {**train, "epsilon_low": self.epsilon_low, "shared_net": self.shared_net,
                         "train_pool_size": self.train_pool_size},
            "loop": loop,
            "undersample_enabled": self.undersample_enabled,
            "undersample_multiplier": self.undersample_multiplier,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "smoothing_window": self.smoothing_window,
            "final_window": self.final_window,
            "eval_episodes": self.eval_episodes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Build from parsed JSON. Raises ConfigError carrying the offending key."""
        base = cls()
        _check_keys(d, set(base.to_dict()), "")
        kw = {}
        if "env" in d:
            _check_keys(d["env"], set(base.to_dict()["env"]), "env.")
            kw["env"] = EnvConfig.from_dict(d["env"])
        if "qlearn" in d:
            _check_keys(d["qlearn"], {f.name for f in dataclasses.fields(QLearningConfig)}, "qlearn.")
            kw["qlearn"] = QLearningConfig(**d["qlearn"])
        if "lowlevel" in d:
            low = dict(d["lowlevel"])
            _check_keys(low, set(base.to_dict()["lowlevel"]), "lowlevel.")
            for key in ("epsilon_low", "shared_net", "train_pool_size"):
                if key in low:
                    kw[key] = low.pop(key)
            kw["train"] = replace(base.train, **low)
        if "loop" in d:
            loop = dict(d["loop"])
            _check_keys(loop, set(base.to_dict()["loop"]), "loop.")
            if "mode" in loop:
                try:
                    loop["mode"] = ExplorationMode(loop["mode"])
                except ValueError:
                    raise ConfigError(f"loop.mode: unknown mode {loop['mode']!r}") from None
            kw["loop"] = EpisodeLoopConfig(**loop)
        for key in ("undersample_enabled", "undersample_multiplier", "output_dir",
                    "smoothing_window", "final_window", "eval_episodes"):
            if key in d:
                kw[key] = d[key]
        if "seeds" in d:
            if not isinstance(d["seeds"], list) or not all(isinstance(s, int) for s in d["seeds"]):
                raise ConfigError("seeds: must be a list of integers")
            kw["seeds"] = tuple(d["seeds"])
        cfg = cls(**kw)
        cfg.validate()
        return cfg


def _check_keys(d, allowed: set, prefix: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected an object")
    for key in d:
        if key not in allowed:
            raise ConfigError(f"{prefix}{key}: unknown key")


def _line_of(text: str, message: str) -> int:
    """Best-effort line of the key named at the start of ``message``."""
    m = re.match(r"([A-Za-z_][\w.]*)", message)
    if m:
        key = m.group(1).split(".")[-1]
        for i, line in enumerate(text.splitlines(), 1):
            if f'"{key}"' in line:
                return i
    return 1


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigFileError(path, 0, f"cannot read config: {e.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigFileError(path, e.lineno, f"invalid JSON: {e.msg} (column {e.colno})") from None
    try:
        return ExperimentConfig.from_dict(raw)
    except (ConfigError, TypeError, ValueError) as e:
        msg = str(e)
        return _raise(path, _line_of(text, msg), msg)


def _raise(path, line, msg):
    raise ConfigFileError(path, line, msg)


# ---------------------------------------------------------------- runs

@dataclass
class SeedRun:
    seed: int
    label: str
    records: list
    qtable_text: str
    nets: dict[str, str]
    samples_csv: str


def make_agent(cfg: ExperimentConfig, seed: int, undersample: bool | None = None) -> Agent:
    train_cfg = replace(cfg.train, weight_init_seed=seed)
    return Agent.fresh(cfg.qlearn, train_cfg, cfg.epsilon_low, cfg.shared_net,
                       undersample=cfg.undersample_enabled if undersample is None else undersample,
                       undersample_multiplier=cfg.undersample_multiplier,
                       train_pool_size=cfg.train_pool_size)


def run_seed(cfg: ExperimentConfig, seed: int, mode: ExplorationMode | None = None,
             undersample: bool | None = None, label: str = "") -> SeedRun:
    """One full training run. The seed fixes env resets, weights and exploration."""
    env = DrawerBlockEnv(replace(cfg.env, rng_seed=seed))
    agent = make_agent(cfg, seed, undersample)
    loop = replace(cfg.loop, seed=seed, mode=mode or cfg.loop.mode)
    records = run_training(env, agent, loop, progress_every=max(cfg.loop.max_episode_num // 10, 0))
    for r in records:
        r.transitions = []  # keeps results cheap to pass between processes
    log.info("%s seed %d done", label or loop.mode.value, seed)
    return SeedRun(seed, label, records, agent.q.dumps(),
                   {name: net.dumps() for name, net in agent.low.unique_nets()},
                   agent.store.to_csv())


def _run_seed_args(args):
    return run_seed(*args)


def run_many(jobs: int, tasks: list[tuple]) -> list[SeedRun]:
    if jobs <= 1 or len(tasks) <= 1:
        return [run_seed(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_seed_args, tasks))


# ---------------------------------------------------------------- output

class OutputDir:
    """Writes files below one root and remembers their hashes."""

    def __init__(self, root):
        self.root = Path(root).resolve()
        self.hashes: dict[str, str] = {}

    def write(self, rel: str, text: str) -> Path:
        path = (self.root / rel).resolve()
        if not path.is_relative_to(self.root):
            raise ValueError(f"refusing to write outside {self.root}: {rel}")
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        path.write_bytes(data)
        self.hashes[path.relative_to(self.root).as_posix()] = hashlib.sha256(data).hexdigest()
        return path

    def write_manifest(self, command: str, cfg: ExperimentConfig, extra: dict | None = None) -> Path:
        manifest = {
            "command": command,
            "config": cfg.to_dict(),
            **(extra or {}),
            "files": dict(sorted(self.hashes.items())),
        }
        path = self.root / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2) + "\n")
        return path


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def episodes_csv(records) -> str:
    rows = [("episode", "total_reward", "steps", *(f"stage{i + 1}" for i in range(4)),
             "low_explores", "high_explores", *(f"new_samples_stage{i + 1}" for i in range(4)))]
    for r in records:
        rows.append((r.index, _fmt(r.total_reward), r.steps, *(int(s) for s in r.stage_success),
                     int(r.low_explores), int(r.high_explores), *r.new_samples))
    return _csv(rows)


def write_seed_artifacts(out: OutputDir, prefix: str, run: SeedRun) -> None:
    d = f"{prefix}seed_{run.seed}/"
    out.write(d + "qtable.txt", run.qtable_text)
    for name, text in run.nets.items():
        out.write(d + f"weights/net_{name}.txt", text)
    out.write(d + "samples.csv", run.samples_csv)
    out.write(d + "episodes.csv", episodes_csv(run.records))


def write_curves(out: OutputDir, prefix: str, runs: list[SeedRun], cfg: ExperimentConfig,
                 svg: bool = False) -> dict[str, metrics.CurveSeries]:
    recs = [r.records for r in runs]
    w = cfg.smoothing_window
    curves = {"reward": metrics.reward_curve(recs, w),
              "reward_by_step": metrics.step_indexed_reward_curve(recs, w)}
    for t, c in zip(STAGES, metrics.success_rate_curves(recs, w)):
        curves[f"success_stage{int(t) + 1}"] = c
    for t, c in zip(STAGES, metrics.sample_count_series(recs)):
        curves[f"samples_stage{int(t) + 1}"] = c
    for name, c in curves.items():
        out.write(f"{prefix}curves/{name}.csv", c.to_csv())
    if svg:
        out.write(f"{prefix}curves/reward.svg", metrics.render_svg({"reward": curves["reward"]}, "reward"))
        out.write(f"{prefix}curves/success.svg", metrics.render_svg(
            {f"stage {i}": curves[f"success_stage{i}"] for i in range(1, 5)}, "success rate"))
        out.write(f"{prefix}curves/samples.svg", metrics.render_svg(
            {f"stage {i}": curves[f"samples_stage{i}"] for i in range(1, 5)}, "cumulative samples"))
    return curves


def final_counts(run: SeedRun) -> np.ndarray:
    return metrics.sample_count_curves(run.records).final()


# ---------------------------------------------------------------- commands

def _tasks(cfg, seeds, mode=None, undersample=None, label=""):
    return [(cfg, s, mode, undersample, label) for s in seeds]


def cmd_train(cfg: ExperimentConfig, out: OutputDir, jobs: int = 1, svg: bool = False) -> int:
    runs = run_many(jobs, _tasks(cfg, cfg.seeds))
    rows = [("seed", *(f"final_rate_stage{i}" for i in range(1, 5)), "final_reward",
             *(f"samples_stage{i}" for i in range(1, 5)))]
    rates, rewards = [], []
    for run in runs:
        write_seed_artifacts(out, "", run)
        rate = metrics.final_window_rates(run.records, cfg.final_window)
        reward = metrics.final_window_reward(run.records, cfg.final_window)
        rates.append(rate)
        rewards.append(reward)
        rows.append((run.seed, *map(_fmt, rate), _fmt(reward), *final_counts(run)))
    if runs[0].records:
        rows.append(("median", *map(_fmt, np.median(rates, axis=0)), _fmt(np.median(rewards)),
                     *(_fmt(v) for v in np.median([final_counts(r) for r in runs], axis=0))))
        write_curves(out, "", runs, cfg, svg)
    out.write("summary.csv", _csv(rows))
    out.write_manifest("train", cfg, {"undersample": cfg.undersample_enabled})
    print(_csv(rows), end="")
    return 0


def cmd_compare_exploration(cfg: ExperimentConfig, out: OutputDir, jobs: int = 1, svg: bool = False) -> int:
    modes = (ExplorationMode.JOINT, ExplorationMode.ALTERNATING)
    tasks = [t for m in modes for t in _tasks(cfg, cfg.seeds, m, None, m.value)]
    runs = run_many(jobs, tasks)
    by_mode = {m: runs[i * len(cfg.seeds):(i + 1) * len(cfg.seeds)] for i, m in enumerate(modes)}
    header = ["seed"] + [f"{m.value}_samples_stage{i}" for m in modes for i in range(1, 5)]
    rows = [header]
    table = []
    for k, seed in enumerate(cfg.seeds):
        row = [c for m in modes for c in final_counts(by_mode[m][k])]
        table.append(row)
        rows.append((seed, *row))
    rows.append(("median", *(_fmt(v) for v in np.median(table, axis=0))))
    for m in modes:
        for run in by_mode[m]:
            write_seed_artifacts(out, f"{m.value}/", run)
        if run.records:
            write_curves(out, f"{m.value}/", by_mode[m], cfg, svg)
    if svg and by_mode[modes[0]][0].records:
        stage4 = {m.value: metrics.sample_count_series([r.records for r in by_mode[m]])[3] for m in modes}
        out.write("stage4_samples.svg", metrics.render_svg(stage4, "cumulative stage-4 samples"))
    out.write("summary.csv", _csv(rows))
    out.write_manifest("compare-exploration", cfg, {"modes": [m.value for m in modes]})
    print(_csv(rows), end="")
    return 0


def effect_size(a, b) -> tuple[float, float]:
    """Mean paired difference ``a - b`` and its standardized size (mean / sd)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    sd = float(np.std(d, ddof=1)) if d.size > 1 else 0.0
    mean = float(np.mean(d))
    return mean, (mean / sd if sd > 0 else 0.0)


def cmd_ablate_undersampling(cfg: ExperimentConfig, out: OutputDir, jobs: int = 1, svg: bool = False) -> int:
    alt = ExplorationMode.ALTERNATING
    variants = (("undersample_on", True), ("undersample_off", False))
    tasks = [t for name, us in variants for t in _tasks(cfg, cfg.seeds, alt, us, name)]
    runs = run_many(jobs, tasks)
    n = len(cfg.seeds)
    by_variant = {name: runs[i * n:(i + 1) * n] for i, (name, _) in enumerate(variants)}
    on = [metrics.final_window_reward(r.records, cfg.final_window) for r in by_variant["undersample_on"]]
    off = [metrics.final_window_reward(r.records, cfg.final_window) for r in by_variant["undersample_off"]]
    rows = [("seed", "final_reward_undersample_on", "final_reward_undersample_off", "difference")]
    for seed, a, b in zip(cfg.seeds, on, off):
        rows.append((seed, _fmt(a), _fmt(b), _fmt(a - b)))
    mean_diff, d = effect_size(on, off)
    rows.append(("median", _fmt(np.median(on)), _fmt(np.median(off)), _fmt(np.median(on) - np.median(off))))
    rows.append(("mean_difference", "", "", _fmt(mean_diff)))
    rows.append(("effect_size", "", "", _fmt(d)))
    for name, _ in variants:
        for run in by_variant[name]:
            write_seed_artifacts(out, f"{name}/", run)
        if by_variant[name][0].records:
            write_curves(out, f"{name}/", by_variant[name], cfg, svg)
    if svg and by_variant["undersample_on"][0].records:
        rc = {name: metrics.reward_curve([r.records for r in by_variant[name]], cfg.smoothing_window)
              for name, _ in variants}
        out.write("reward.svg", metrics.render_svg(rc, "reward"))
    out.write("summary.csv", _csv(rows))
    out.write_manifest("ablate-undersampling", cfg,
                       {"variants": {name: {"undersample": us} for name, us in variants}})
    print(_csv(rows), end="")
    return 0


def load_artifacts(cfg: ExperimentConfig, artifacts) -> Agent:
    """Agent rebuilt from a seed directory, acting greedily at both levels."""
    artifacts = Path(artifacts)
    q = QTable.load(artifacts / "qtable.txt")
    low = LowLevelPolicy.load(artifacts / "weights", cfg.train, epsilon_low=0.0)
    if q.n_history != cfg.qlearn.n_history:
        raise ValueError(f"Q-table history length {q.n_history} does not match config")
    return Agent(q, replace(cfg.qlearn, epsilon=0.0), low)


def evaluate(cfg: ExperimentConfig, agent: Agent, episodes: int) -> dict:
    env = DrawerBlockEnv(cfg.env)
    loop = replace(cfg.loop, mode=ExplorationMode.JOINT)
    rng = np.random.default_rng(0)
    records = [run_episode(env, agent, loop, rng, index=EVAL_SEED_OFFSET + i, train=False)
               for i in range(episodes)]
    if not records:
        return {"episodes": 0, "stage_success_rates": [], "mean_reward": None}
    return {
        "episodes": episodes,
        "stage_success_rates": np.mean([r.stage_success for r in records], axis=0).tolist(),
        "mean_reward": float(np.mean([r.total_reward for r in records])),
    }


def cmd_eval(cfg: ExperimentConfig, out: OutputDir, artifacts, episodes: int | None = None) -> int:
    try:
        agent = load_artifacts(cfg, artifacts)
    except (OSError, ValueError, KeyError, IndexError) as e:
        print(f"error: cannot load artifacts from {artifacts}: {e}", file=sys.stderr)
        return 2
    report = evaluate(cfg, agent, cfg.eval_episodes if episodes is None else episodes)
    text = json.dumps(report, indent=2) + "\n"
    out.write("eval.json", text)
    out.write_manifest("eval", cfg, {"artifacts": str(artifacts)})
    print(text, end="")
    return 0


def cmd_plot(csv_paths: list[str], out: OutputDir, name: str, title: str) -> int:
    curves = {}
    for p in csv_paths:
        p = Path(p)
        try:
            curves[f"{p.parent.name}/{p.stem}"] = metrics.CurveSeries.from_csv(p.read_text())
        except (OSError, ValueError, IndexError) as e:
            print(f"error: {p}: {e}", file=sys.stderr)
            return 2
    out.write(name, metrics.render_svg(curves, title))
    return 0


# ---------------------------------------------------------------- entry point

def parse_seeds(text: str) -> tuple[int, ...]:
    """'0,1,5' or '0-9' or a mix: '0-2,7'."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if re.fullmatch(r"\d+-\d+", part):
            lo, hi = map(int, part.split("-"))
            seeds.extend(range(lo, hi + 1))
        elif re.fullmatch(r"-?\d+", part):
            seeds.append(int(part))
        else:
            raise argparse.ArgumentTypeError(f"bad seed list {text!r}")
    return tuple(seeds)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skillseq", description="Skill-sequence hierarchical RL experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="JSON experiment config")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--seeds", type=parse_seeds, help="e.g. 0-9 or 0,3,7")
        sp.add_argument("--jobs", type=int, default=1, help="parallel seed workers")
        sp.add_argument("--pseudocode-literal", action="store_true",
                        help="high level explores in both alternating branches")
        sp.add_argument("--episodes", type=int, help="override loop.max_episode_num")

    for name in ("train", "compare-exploration", "ablate-undersampling"):
        sp = sub.add_parser(name)
        common(sp)
        sp.add_argument("--svg", action="store_true", help="also render SVG charts")
    ev = sub.add_parser("eval")
    common(ev)
    ev.add_argument("--artifacts", required=True, help="seed directory written by train")
    pl = sub.add_parser("plot")
    pl.add_argument("csv", nargs="+", help="curve CSV files")
    pl.add_argument("--out", required=True, help="output directory")
    pl.add_argument("--name", default="plot.svg")
    pl.add_argument("--title", default="")
    return p


def configure_logging() -> None:
    level = os.environ.get("SKILLSEQ_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    if args.command == "plot":
        return cmd_plot(args.csv, OutputDir(args.out), args.name, args.title)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seeds:
            cfg = replace(cfg, seeds=args.seeds)
        if args.out:
            cfg = replace(cfg, output_dir=args.out)
        if args.pseudocode_literal:
            cfg = replace(cfg, loop=replace(cfg.loop, pseudocode_literal=True))
        if args.episodes is not None:
            cfg = replace(cfg, loop=replace(cfg.loop, max_episode_num=args.episodes))
        cfg.validate()
    except ConfigFileError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    out = OutputDir(cfg.output_dir)
    if args.command == "eval":
        return cmd_eval(cfg, out, args.artifacts, args.episodes)
    commands = {"train": cmd_train, "compare-exploration": cmd_compare_exploration,
                "ablate-undersampling": cmd_ablate_undersampling}
    return commands[args.command](cfg, out, max(args.jobs, 1), args.svg)


if __name__ == "__main__":
    sys.exit(main())
