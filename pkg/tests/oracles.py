"""Independent reference computations used by the tests.

Nothing here calls the code under test for the quantity being checked: the
skill targets are recomputed from raw geometry and the optimal values come
from exhaustive backward induction.
"""

from __future__ import annotations

import itertools

import numpy as np

from skillseq.env import Action, DrawerBlockEnv, EnvConfig, SkillId, SkillParams


def geometric_target(cfg: EnvConfig, skill: SkillId, state) -> tuple[float, float]:
    """Target point for ``skill`` computed from the raw config rectangles."""
    r = cfg.drawer_rect
    mid_y = (r.ymin + r.ymax) / 2
    is_open = state.drawer_openness == 1.0
    dx = cfg.handle_offset_open[0] if is_open else cfg.handle_offset_closed[0]
    dy = cfg.handle_offset_open[1] if is_open else cfg.handle_offset_closed[1]
    if skill in (SkillId.PULL, SkillId.PUSH):
        return (r.xmin + dx, mid_y + dy)
    if skill is SkillId.GRASP:
        return tuple(state.block_xy)
    # Put: centre of the drawer box wherever it currently sits.
    travel_x = cfg.handle_offset_open[0] - cfg.handle_offset_closed[0]
    travel_y = cfg.handle_offset_open[1] - cfg.handle_offset_closed[1]
    cx, cy = (r.xmin + r.xmax) / 2, mid_y
    return (cx + travel_x, cy + travel_y) if is_open else (cx, cy)


def oracle_episode(cfg: EnvConfig, seed: int, skills):
    """Rewards and done flags from playing ``skills`` with exact targets."""
    env = DrawerBlockEnv(cfg)
    state = env.reset(seed)
    out = []
    for s in skills:
        o = env.step(Action(s, SkillParams(*geometric_target(cfg, s, state))))
        state = o.next_obs
        out.append((o.reward, o.done))
        if o.done:
            break
    return out


def abstract_model(horizon: int, cfg: EnvConfig | None = None, seed: int = 0) -> dict:
    """(skill prefix, next skill) -> (reward, done) for every prefix shorter than ``horizon``.

    With exact targets the outcome of a skill depends only on the skills that
    came before it, so the environment collapses to a tree over skill prefixes.
    """
    cfg = cfg or EnvConfig()
    model = {}
    for depth in range(horizon):
        for prefix in itertools.product(list(SkillId), repeat=depth):
            trace = oracle_episode(cfg, seed, prefix)
            if any(done for _, done in trace):
                continue
            for s in SkillId:
                model[(prefix, s)] = oracle_episode(cfg, seed, prefix + (s,))[-1]
    return model


def value_iteration(model: dict, gamma: float, horizon: int) -> dict:
    """Optimal action values per prefix by backward induction; the horizon is terminal."""
    q = {}
    prefixes = sorted({p for p, _ in model}, key=len, reverse=True)
    for p in prefixes:
        row = np.zeros(len(SkillId))
        for s in SkillId:
            r, done = model[(p, s)]
            nxt = p + (s,)
            future = 0.0 if done or len(nxt) >= horizon else float(np.max(q[nxt]))
            row[int(s)] = r + gamma * future
        q[p] = row
    return q


def chain_values(rewards, gamma: float) -> list[float]:
    """Discounted return from each position of a deterministic reward chain."""
    out, acc = [], 0.0
    for r in reversed(rewards):
        acc = r + gamma * acc
        out.append(acc)
    return out[::-1]
