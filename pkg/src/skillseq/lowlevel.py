"""Low-level parameter policy: an MLP regressing skill parameters from object state.

Training minimizes the squared error between the network output and the
parameters of past successful skill executions, averaged over a mini-batch,
with plain gradient descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from skillseq.env import (
    SKILL_TASK,
    ConfigError,
    MetaTaskId,
    ObjectState,
    SkillId,
    SkillParams,
)
from skillseq.highlevel import SelectMode

HIDDEN = (32, 64, 32)
OUT_DIM = 2
N_TASKS = len(MetaTaskId)
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs_per_update: int = 20
    weight_init_seed: int = 0
    # None: per-layer sqrt(1 / fan_in).
    init_scale: float | None = None

    def validate(self) -> None:
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs_per_update < 0:
            raise ConfigError("batch_size must be >= 1 and epochs_per_update >= 0")


def _relu(z):
    return np.maximum(z, 0.0)


class ParamNet:
    """Fully connected network, rectifier hidden units, identity output."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray], seed: int | None = None):
        if weights[-1].shape[1] != OUT_DIM:
            raise ValueError("ParamNet output dimension must be 2")
        self.weights = weights
        self.biases = biases
        self.seed = seed

    @classmethod
    def initialize(cls, in_dim: int, seed: int, init_scale: float | None = None,
                   hidden: Sequence[int] = HIDDEN) -> "ParamNet":
        rng = np.random.default_rng(seed)
        sizes = [in_dim, *hidden, OUT_DIM]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            s = init_scale if init_scale is not None else math.sqrt(1.0 / fan_in)
            weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-s, s, size=fan_out))
        return cls(weights, biases, seed)

    @classmethod
    def zeros(cls, in_dim: int, hidden: Sequence[int] = HIDDEN) -> "ParamNet":
        sizes = [in_dim, *hidden, OUT_DIM]
        return cls([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "ParamNet":
        return ParamNet([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)

    def forward(self, x: np.ndarray) -> np.ndarray:
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i < last:
                a = _relu(a)
        return a

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        """Mean over the batch of the summed squared error."""
        diff = self.forward(np.atleast_2d(x)) - np.atleast_2d(y)
        return float(np.mean(np.sum(diff * diff, axis=1)))

    def gradients(self, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Loss and its gradient w.r.t. ``params()`` (same order)."""
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        acts = [x]
        pre = []
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre.append(z)
            a = _relu(z) if i < last else z
            acts.append(a)
        n = x.shape[0]
        diff = acts[-1] - y
        loss = float(np.sum(diff * diff)) / n
        delta = (2.0 / n) * diff
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        for i in range(last, -1, -1):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (pre[i - 1] > 0)
        return loss, grads

    def sgd_step(self, x: np.ndarray, y: np.ndarray, lr: float) -> float:
        loss, grads = self.gradients(x, y)
        for p, g in zip(self.params(), grads):
            p -= lr * g
        return loss

    # Text dump: header line, then one line per tensor (shape, then values).
    def dumps(self) -> str:
        sizes = ",".join(str(s) for s in self.sizes)
        lines = [f"# paramnet version={FORMAT_VERSION} sizes={sizes} seed={self.seed}"]
        for p in self.params():
            shape = "x".join(str(d) for d in p.shape)
            lines.append(shape + " " + " ".join(repr(float(v)) for v in p.ravel()))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ParamNet":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("# paramnet "):
            raise ValueError("not a ParamNet dump (missing header)")
        header = dict(item.split("=", 1) for item in lines[0][len("# paramnet "):].split())
        if int(header.get("version", -1)) != FORMAT_VERSION:
            raise ValueError(f"unsupported ParamNet format version {header.get('version')}")
        sizes = [int(s) for s in header["sizes"].split(",")]
        seed = None if header.get("seed") in (None, "None") else int(header["seed"])
        tensors = []
        for ln in lines[1:]:
            shape_s, *vals = ln.split(" ")
            shape = tuple(int(d) for d in shape_s.split("x"))
            tensors.append(np.array([float(v) for v in vals]).reshape(shape))
        n_layers = len(sizes) - 1
        if len(tensors) != 2 * n_layers:
            raise ValueError(f"expected {2 * n_layers} tensors, found {len(tensors)}")
        weights, biases = tensors[0::2], tensors[1::2]
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} shape does not match header sizes")
        return cls(weights, biases, seed)


def _losses_with_stack(net: ParamNet, x: np.ndarray, y: np.ndarray, index: int,
                       stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Loss of ``net`` once per entry of ``stack``, a batch of replacements for ``params()[index]``.

    Also returns, per entry, the on/off pattern of every hidden unit the
    replacement can influence.
    """
    layer, is_bias = divmod(index, 2)
    a = x
    last = len(net.weights) - 1
    patterns = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        if i < layer:
            z = a @ w + b
        elif i == layer:
            if is_bias:
                z = (a @ w)[None, :, :] + stack[:, None, :]
            else:
                z = a @ stack + b
        else:
            z = a @ w + b
        if i < last:
            a = _relu(z)
            if i >= layer:
                patterns.append((z > 0).reshape(len(stack), -1))
        else:
            a = z
    diff = a - y
    pattern = np.concatenate(patterns, axis=1) if patterns else np.zeros((len(stack), 0), bool)
    return np.mean(np.sum(diff * diff, axis=-1), axis=-1), pattern


def gradient_check(net: ParamNet, o, target, tolerance: float = 1e-4, step: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences.

    Relative error is ``|a - f| / max(|a| + |f|, tolerance)``, so entries where
    both gradients are ~0 are compared on an absolute scale. Every weight is
    perturbed by ``+-step`` and the whole network re-evaluated; the perturbed
    copies of one tensor are evaluated together as a batch.

    A difference quotient is only meaningful while no rectifier switches
    inside the probe interval, so entries whose probe flips a hidden unit are
    re-probed with a step ten times smaller (up to six times). Entries sitting
    on a kink even then are skipped, as the derivative is undefined there.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be > 0")
    x = np.atleast_2d(np.asarray(o, dtype=float))
    y = np.atleast_2d(np.asarray(target, dtype=float))
    _, analytic = net.gradients(x, y)
    worst = 0.0
    for k, (p, g) in enumerate(zip(net.params(), analytic)):
        flat = p.reshape(-1)
        _, base = _losses_with_stack(net, x, y, k, p[None])
        pending = np.arange(flat.size)
        h = step
        for _ in range(7):
            if pending.size == 0:
                break
            rows = np.arange(pending.size)
            stack = np.repeat(flat[None], pending.size, axis=0)
            stack[rows, pending] = flat[pending] + h
            up, up_pat = _losses_with_stack(net, x, y, k, stack.reshape((-1, *p.shape)))
            stack[rows, pending] = flat[pending] - h
            down, down_pat = _losses_with_stack(net, x, y, k, stack.reshape((-1, *p.shape)))
            smooth = np.all(up_pat == base, axis=1) & np.all(down_pat == base, axis=1)
            fd = (up - down)[smooth] / (2 * h)
            a = g.reshape(-1)[pending[smooth]]
            if fd.size:
                err = np.abs(a - fd) / np.maximum(np.abs(a) + np.abs(fd), tolerance)
                worst = max(worst, float(err.max()))
            pending = pending[~smooth]
            h /= 10
    return worst


def task_onehot(task: MetaTaskId) -> np.ndarray:
    v = np.zeros(N_TASKS)
    v[int(task)] = 1.0
    return v


class LowLevelPolicy:
    """Parameter networks keyed by meta-task.

    ``shared=False`` gives one independent network per meta-task on the raw
    observation. ``shared=True`` gives a single network whose input is the
    observation concatenated with a one-hot task code; all four keys then map
    to that network.
    """

    def __init__(self, cfg: TrainConfig | None = None, epsilon_low: float = 0.3,
                 shared: bool = True, zero_init: bool = False):
        self.cfg = cfg if cfg is not None else TrainConfig()
        self.cfg.validate()
        if not 0.0 <= epsilon_low <= 1.0:
            raise ConfigError(f"epsilon_low must be in [0, 1], got {epsilon_low}")
        self.epsilon_low = epsilon_low
        self.shared = shared
        in_dim = ObjectState.OBS_DIM + (N_TASKS if shared else 0)

        def make(offset):
            if zero_init:
                return ParamNet.zeros(in_dim)
            return ParamNet.initialize(in_dim, self.cfg.weight_init_seed + offset, self.cfg.init_scale)

        if shared:
            net = make(0)
            self.nets = {t: net for t in MetaTaskId}
        else:
            self.nets = {t: make(int(t)) for t in MetaTaskId}

    def net_for(self, task: MetaTaskId) -> ParamNet:
        return self.nets[MetaTaskId(task)]

    def unique_nets(self) -> list[tuple[str, ParamNet]]:
        if self.shared:
            return [("shared", self.nets[MetaTaskId.OPEN_DRAWER])]
        return [(t.name.lower(), self.nets[t]) for t in MetaTaskId]

    def features(self, task: MetaTaskId, obs) -> np.ndarray:
        """Input rows for ``task``; ``obs`` is an ObjectState or an (n, 7) array."""
        x = obs._vector if isinstance(obs, ObjectState) else np.asarray(obs, dtype=float)
        # Observations live in [0, 1]; centering them speeds up plain descent.
        x = 2.0 * x - 1.0
        if not self.shared:
            return x
        x2 = np.atleast_2d(x)
        code = np.broadcast_to(task_onehot(task), (x2.shape[0], N_TASKS))
        out = np.hstack([x2, code])
        return out[0] if x.ndim == 1 else out

    def raw_output(self, skill: SkillId, o: ObjectState) -> np.ndarray:
        task = SKILL_TASK[SkillId(skill)]
        return self.net_for(task).forward(self.features(task, o)[None, :])[0]

    def copy(self) -> "LowLevelPolicy":
        out = LowLevelPolicy.__new__(LowLevelPolicy)
        out.cfg, out.epsilon_low, out.shared = self.cfg, self.epsilon_low, self.shared
        if self.shared:
            net = self.nets[MetaTaskId.OPEN_DRAWER].copy()
            out.nets = {t: net for t in MetaTaskId}
        else:
            out.nets = {t: n.copy() for t, n in self.nets.items()}
        return out

    def save(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, net in self.unique_nets():
            path = directory / f"net_{name}.txt"
            path.write_text(net.dumps())
            paths.append(path)
        return paths

    @classmethod
    def load(cls, directory, cfg: TrainConfig | None = None, epsilon_low: float = 0.3) -> "LowLevelPolicy":
        directory = Path(directory)
        shared_path = directory / "net_shared.txt"
        policy = cls.__new__(cls)
        policy.cfg = cfg if cfg is not None else TrainConfig()
        policy.epsilon_low = epsilon_low
        if shared_path.exists():
            policy.shared = True
            net = ParamNet.loads(shared_path.read_text())
            policy.nets = {t: net for t in MetaTaskId}
        else:
            policy.shared = False
            policy.nets = {}
            for t in MetaTaskId:
                path = directory / f"net_{t.name.lower()}.txt"
                if not path.exists():
                    raise FileNotFoundError(f"missing network weights: {path}")
                policy.nets[t] = ParamNet.loads(path.read_text())
        return policy


def predict(policy: LowLevelPolicy, skill: SkillId, o: ObjectState) -> SkillParams:
    out = np.clip(policy.raw_output(skill, o), 0.0, 1.0)
    return SkillParams(float(out[0]), float(out[1]))


def explore_params(policy: LowLevelPolicy, skill: SkillId, o: ObjectState,
                   rng: np.random.Generator, mode: SelectMode) -> SkillParams:
    if mode is SelectMode.EPSILON_GREEDY and rng.random() < policy.epsilon_low:
        x, y = rng.random(2)
        return SkillParams(float(x), float(y))
    return predict(policy, skill, o)


def _arrays(policy: LowLevelPolicy, task: MetaTaskId, samples) -> tuple[np.ndarray, np.ndarray]:
    obs = np.array([s.obs._vector for s in samples])
    x = policy.features(task, obs)
    y = np.array([[s.params.x, s.params.y] for s in samples], dtype=float)
    return x, y


def fit(net: ParamNet, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
        rng: np.random.Generator | None = None) -> float:
    """``epochs_per_update`` passes of mini-batch descent; returns the final full-data loss.

    Batches follow the given row order unless ``rng`` is supplied, in which
    case rows are reshuffled every epoch.
    """
    n = x.shape[0]
    bs = cfg.batch_size
    for _ in range(cfg.epochs_per_update):
        order = rng.permutation(n) if rng is not None else None
        for start in range(0, n, bs):
            if order is None:
                xb, yb = x[start:start + bs], y[start:start + bs]
            else:
                idx = order[start:start + bs]
                xb, yb = x[idx], y[idx]
            net.sgd_step(xb, yb, cfg.learning_rate)
    return net.loss(x, y)


def train(policy: LowLevelPolicy, task: MetaTaskId, samples, cfg: TrainConfig | None = None,
          rng: np.random.Generator | None = None) -> float | None:
    """Fit the network for ``task`` on its positive samples.

    Returns the final mean loss, or None when there is no data.
    """
    cfg = cfg if cfg is not None else policy.cfg
    if not samples:
        return None
    task = MetaTaskId(task)
    if any(s.task != task for s in samples):
        raise ValueError(f"all samples must belong to {task.name}")
    x, y = _arrays(policy, task, samples)
    return fit(policy.net_for(task), x, y, cfg, rng)


def train_round(policy: LowLevelPolicy, view: dict, cfg: TrainConfig | None = None,
                rng: np.random.Generator | None = None) -> dict[MetaTaskId, float | None]:
    """One update of every network from a per-task view of the sample store.

    A shared network is fit on the pooled rows of all tasks; per-task networks
    are fit independently. Returns the per-task loss after the update.
    """
    cfg = cfg if cfg is not None else policy.cfg
    if not policy.shared:
        return {t: train(policy, t, view.get(t, []), cfg, rng) for t in MetaTaskId}
    parts = [(t, view[t]) for t in MetaTaskId if view.get(t)]
    if not parts:
        return {t: None for t in MetaTaskId}
    xs, ys = zip(*(_arrays(policy, t, s) for t, s in parts))
    x, y = np.vstack(xs), np.vstack(ys)
    net = policy.net_for(MetaTaskId.OPEN_DRAWER)
    fit(net, x, y, cfg, rng)
    losses = {t: None for t in MetaTaskId}
    for (t, _), xt, yt in zip(parts, xs, ys):
        losses[t] = net.loss(xt, yt)
    return losses
