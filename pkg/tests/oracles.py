"""Reference implementations used as test oracles.

The predicate oracle reads only state differences across one transition, never
the event log, so it is an independent derivation of what each subgoal means.
"""
from __future__ import annotations

import numpy as np

from kitchenplan.env import GridState, Item, Tile, legal_targets, step
from kitchenplan.subgoals import SubgoalKind


def _adjacent(a, b) -> bool:
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


def _bar_delta(start: GridState, succ: GridState, agent: int, item: Item, added: bool) -> bool:
    pos = start.positions[agent]
    for cell, before, after in zip(start.layout.bars, start.bar_items, succ.bar_items):
        if not _adjacent(cell, pos):
            continue
        if added and before == Item.NONE and after == item:
            return True
        if not added and before == item and after == Item.NONE:
            return True
    return False


_NEAR_CACHE: dict = {}


def _near_cells(layout, kind: Tile, slack: int) -> frozenset:
    key = (layout.to_text(), kind, slack)
    if key not in _NEAR_CACHE:
        anchors = []
        for y in range(layout.height):
            for x in range(layout.width):
                if layout.tile((x, y)) != kind:
                    continue
                for dx, dy in ((0, -1), (0, 1), (-1, 0), (1, 0)):
                    f = (x + dx, y + dy)
                    if layout.in_bounds(f) and layout.tile(f) == Tile.FLOOR:
                        anchors.append(f)
        _NEAR_CACHE[key] = frozenset(
            (x, y) for y in range(layout.height) for x in range(layout.width)
            if any(abs(ax - x) + abs(ay - y) <= slack for ax, ay in anchors))
    return _NEAR_CACHE[key]


def _near_tile(state: GridState, pos, kind: Tile, slack: int) -> bool:
    return tuple(pos) in _near_cells(state.layout, kind, slack)


def reference_predicate(kind: SubgoalKind, agent: int, start: GridState, succ: GridState) -> int:
    """Truth value of ``kind`` for ``agent`` over the single transition start -> succ."""
    h0, h1 = start.held[agent], succ.held[agent]
    p0, p1 = start.positions[agent], succ.positions[agent]
    if kind is SubgoalKind.FETCH_ONION_TO_BAR:
        return int(h0 == Item.ONION and h1 == Item.NONE and _bar_delta(start, succ, agent, Item.ONION, True))
    if kind is SubgoalKind.FETCH_PLATE_TO_BAR:
        return int(h0 == Item.PLATE and h1 == Item.NONE and _bar_delta(start, succ, agent, Item.PLATE, True))
    if kind is SubgoalKind.BAR_PLATE_HOLD:
        return int(h0 == Item.NONE and h1 == Item.PLATE and _bar_delta(start, succ, agent, Item.PLATE, False))
    if kind is SubgoalKind.BAR_ONION_TO_POT:
        added = any(b.contents == a.contents + 1 and _adjacent(c, p0)
                    for c, a, b in zip(start.layout.pots, start.pots, succ.pots))
        return int(h0 == Item.ONION and h1 == Item.NONE and added)
    if kind is SubgoalKind.PLATE_SOUP_FROM_POT:
        emptied = any(a.finished and b.contents == 0 and _adjacent(c, p0)
                      for c, a, b in zip(start.layout.pots, start.pots, succ.pots))
        return int(h0 == Item.PLATE and h1 == Item.SOUP and emptied)
    if kind is SubgoalKind.DELIVER_SOUP:
        return int(h0 == Item.SOUP and h1 == Item.NONE and succ.deliveries == start.deliveries + 1)
    if kind is SubgoalKind.WAIT_AT_BAR:
        return int(_near_tile(succ, p1, Tile.SHARED_BAR, 1))
    if kind is SubgoalKind.WAIT_NEAR_POT:
        return int(_near_tile(succ, p1, Tile.POT, 0))
    if kind is SubgoalKind.IDLE:
        return int(p0 == p1 and h0 == h1 and start.bar_items == succ.bar_items
                   and start.deliveries == succ.deliveries
                   and all(a.contents == b.contents and a.finished == b.finished or
                           (a.timer > 0 and b.timer == a.timer - 1)
                           for a, b in zip(start.pots, succ.pots)))
    raise AssertionError(kind)


def enumerate_transitions(states, limit_per_kind: int, kinds):
    """Up to ``limit_per_kind`` single transitions per kind, positives first.

    Each transition moves one agent toward one of its legal targets while the
    partner holds position."""
    pool = []
    for s in states:
        if s.done:
            continue
        for agent in (0, 1):
            for target in sorted(legal_targets(s, agent)):
                acts = [s.positions[0], s.positions[1]]
                acts[agent] = target
                succ, _, _ = step(s, acts)
                pool.append((s, agent, succ))
    out = {}
    for kind in kinds:
        pos, neg = [], []
        for t in pool:
            (pos if reference_predicate(kind, t[1], t[0], t[2]) else neg).append(t)
        take_pos = pos[: limit_per_kind // 2]
        out[kind] = take_pos + neg[: limit_per_kind - len(take_pos)]
    return out


def conv3x3_reference(x: np.ndarray, kernel: np.ndarray, bias: float) -> np.ndarray:
    """Direct zero-padded cross-correlation, written without vectorisation."""
    b, h, w, c = x.shape
    out = np.full((b, h, w), float(bias))
    for n in range(b):
        for i in range(h):
            for j in range(w):
                for dy in range(3):
                    for dx in range(3):
                        ii, jj = i + dy - 1, j + dx - 1
                        if 0 <= ii < h and 0 <= jj < w:
                            out[n, i, j] += float(x[n, ii, jj] @ kernel[dy, dx])
    return out


def synthetic_states(layout, n: int, seed: int):
    """Random but valid states: chefs anywhere in their own rooms with any held
    item, pots in any phase and arbitrary bar contents."""
    from dataclasses import replace

    from kitchenplan.env import COOK_TIME, MAX_ONIONS, PotState, reset

    rng = np.random.default_rng(seed)
    base = reset(layout, 0)
    rooms = [sorted(layout.reachable(base.positions[a], None)) for a in (0, 1)]
    pot_phases = [PotState(), PotState(1), PotState(2), PotState(MAX_ONIONS, COOK_TIME // 2),
                  PotState(MAX_ONIONS, 1), PotState(MAX_ONIONS, 0, True)]
    out = []
    while len(out) < n:
        pos = tuple(rooms[a][rng.integers(len(rooms[a]))] for a in (0, 1))
        if pos[0] == pos[1]:
            continue
        s = replace(
            base,
            positions=pos,
            held=tuple(Item(int(rng.integers(4))) for _ in (0, 1)),
            pots=tuple(pot_phases[rng.integers(len(pot_phases))] for _ in layout.pots),
            bar_items=tuple(Item(int(rng.integers(4))) for _ in layout.bars),
            timestep=int(rng.integers(0, 50)),
        )
        s.check_invariants()
        out.append(s)
    return out


def random_minibatch(states, size: int, rng, texts):
    """PPO minibatch over random states with arbitrary old log-probs and targets."""
    from kitchenplan.env import legal_mask
    from kitchenplan.policy import Batch, observe

    obs, prev, masks = [], [], []
    for _ in range(size):
        a = int(rng.integers(2))
        s = states[rng.integers(len(states))]
        obs.append(observe(s, a))
        prev.append(observe(states[rng.integers(len(states))], a))
        masks.append(legal_mask(s, a))
    mask = np.stack(masks)
    action = np.array([rng.choice(np.flatnonzero(m.ravel())) for m in masks])
    return Batch(np.stack([o.sym for o in obs]), np.array([o.pos for o in obs]),
                 np.array([o.held for o in obs]), np.stack([o.sym for o in prev]),
                 np.array([o.pos for o in prev]), np.array([o.held for o in prev]),
                 rng.integers(0, len(texts), size), mask, tuple(texts), action,
                 rng.normal(-2.5, 0.3, size), rng.normal(size=size), rng.normal(size=size))


def fd_relative_errors(params, batch, manual, cfg, coords_per_group: int, rng, eps: float = 1e-5):
    """Central-difference check of ``ppo_loss`` gradients on sampled coordinates.

    Returns {group: relative error} with the error measured as
    ||analytic - numeric|| / max(||analytic||, ||numeric||)."""
    from kitchenplan.policy import ppo_loss

    _, _, grads = ppo_loss(params, batch, manual, cfg)
    out = {}
    for name, arr in params.groups.items():
        g = grads[name]
        live = np.flatnonzero(g.ravel() != 0)
        pool = live if live.size else np.arange(arr.size)
        idx = rng.choice(pool, size=min(coords_per_group, pool.size), replace=False)
        flat = arr.reshape(-1)
        num = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            lp = ppo_loss(params, batch, manual, cfg, need_grads=False)[0]
            flat[i] = orig - eps
            lm = ppo_loss(params, batch, manual, cfg, need_grads=False)[0]
            flat[i] = orig
            num[j] = (lp - lm) / (2 * eps)
        ana = g.reshape(-1)[idx]
        scale = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-12)
        out[name] = float(np.linalg.norm(ana - num) / scale)
    return out
