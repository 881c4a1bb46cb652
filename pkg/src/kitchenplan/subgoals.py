"""Canonical subgoal grammar, completion predicates and offline datasets."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from kitchenplan.env import (
    Event,
    EventKind,
    GridState,
    Item,
    Layout,
    PotState,
    Tile,
    legal_targets,
    reset,
    state_hash,
    step,
)

log = logging.getLogger(__name__)

JACCARD_THRESHOLD = 0.4


class SubgoalKind(Enum):
    FETCH_ONION_TO_BAR = "FetchOnionToBar"
    FETCH_PLATE_TO_BAR = "FetchPlateToBar"
    WAIT_AT_BAR = "WaitAtBar"
    BAR_ONION_TO_POT = "BarOnionToPot"
    BAR_PLATE_HOLD = "BarPlateHold"
    PLATE_SOUP_FROM_POT = "PlateSoupFromPot"
    DELIVER_SOUP = "DeliverSoup"
    WAIT_NEAR_POT = "WaitNearPot"
    IDLE = "Idle"


KIND_ORDER: tuple[SubgoalKind, ...] = tuple(SubgoalKind)

# The first phrase of each kind is what the scripted planner emits.
TEMPLATES: dict[SubgoalKind, tuple[str, ...]] = {
    SubgoalKind.FETCH_ONION_TO_BAR: (
        "one chef takes an onion from the onion storage room and transports it to the shared bar",
        "a chef brings an onion from the onion storage room to the shared bar",
        "get an onion from the onion storage room",
    ),
    SubgoalKind.FETCH_PLATE_TO_BAR: (
        "one chef takes a plate from the sideboard and transports it to the shared bar",
        "a chef brings a plate from the sideboard to the shared bar",
        "get a plate from the dining cabinet",
    ),
    SubgoalKind.WAIT_AT_BAR: (
        "one chef goes to the bar and waits",
        "a chef waits next to the shared bar",
    ),
    SubgoalKind.BAR_ONION_TO_POT: (
        "one chef transports an onion from the shared bar to the crafting table",
        "a chef picks up the onion from the shared bar and places it on the crafting table",
    ),
    SubgoalKind.BAR_PLATE_HOLD: (
        "one chef picks up the plate from the shared bar and holds it",
        "a chef picks up the plate from the shared bar and holds it next to the crafting table",
        "a chef collects the plate from the shared bar and keeps it near the crafting table",
    ),
    SubgoalKind.PLATE_SOUP_FROM_POT: (
        "one chef serves the finished onion soup from the crafting table onto a plate",
        "a chef takes the completed onion soup from the crafting table and sets it on the plate",
    ),
    SubgoalKind.DELIVER_SOUP: (
        "one chef delivers the onion soup to the serving counter",
        "a chef transports the plated onion soup to the counter",
    ),
    SubgoalKind.WAIT_NEAR_POT: (
        "one chef moves to the crafting table and waits for the onion soup to finish",
        "a chef stands beside the crafting table and waits",
    ),
    SubgoalKind.IDLE: (
        "one chef stays in place and does nothing",
        "a chef remains idle",
    ),
}

_STOPWORDS = frozenset(
    """a an the one another other second first third chef chefs it its to and from on of in
    at for up down is are be by with into onto then next this that there he she they them
    some any all his her""".split()
)

_TOKEN = re.compile(r"[a-z]+")


class NormalizationError(ValueError):
    """Raw subgoal text matched no canonical kind closely enough."""

    def __init__(self, raw: str, candidates: list[tuple[SubgoalKind, float]]):
        self.raw = raw
        self.candidates = candidates
        top = ", ".join(f"{k.value}={s:.2f}" for k, s in candidates)
        super().__init__(f"cannot normalize {raw!r}; closest: {top}")


def _stem(word: str) -> str:
    if len(word) > 4 and word.endswith("es") and word[-3] in "sxz":
        return word[:-2]
    if len(word) > 3 and word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    return word


def content_words(text: str) -> frozenset[str]:
    return frozenset(_stem(w) for w in _TOKEN.findall(text.lower()) if w not in _STOPWORDS)


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


_TEMPLATE_WORDS = {k: [content_words(p) for p in TEMPLATES[k]] for k in KIND_ORDER}


def kind_scores(raw: str) -> list[tuple[SubgoalKind, float]]:
    """Best template score per kind, in the fixed kind order."""
    words = content_words(raw)
    return [(k, max(jaccard(words, t) for t in _TEMPLATE_WORDS[k])) for k in KIND_ORDER]


@dataclass(frozen=True)
class CanonicalSubgoal:
    kind: SubgoalKind
    raw_text: str

    @property
    def sentence(self) -> str:
        return self.raw_text or TEMPLATES[self.kind][0]

    @classmethod
    def of(cls, kind: SubgoalKind, variant: int = 0) -> "CanonicalSubgoal":
        phrases = TEMPLATES[kind]
        return cls(kind, phrases[variant % len(phrases)])


def normalize(raw: str) -> CanonicalSubgoal:
    if not raw or not raw.strip():
        raise NormalizationError(raw, [])
    scores = kind_scores(raw)
    # max() keeps the first maximum, which is the fixed kind order tie-break
    best_kind, best = max(scores, key=lambda ks: ks[1])
    if best < JACCARD_THRESHOLD:
        top2 = sorted(scores, key=lambda ks: -ks[1])[:2]
        raise NormalizationError(raw, top2)
    return CanonicalSubgoal(best_kind, raw.strip())


# --------------------------------------------------------------------------
# completion predicates
# --------------------------------------------------------------------------

class PredicateError(ValueError):
    """Predicate evaluated over an invalid window."""


@dataclass(frozen=True)
class Predicate:
    kind: SubgoalKind
    agent: int


def _agent_events(traj: Sequence[GridState], agent: int) -> Iterable[tuple[int, Event]]:
    for t, s in enumerate(traj):
        for ev in s.events:
            if ev.agent == agent:
                yield t, ev


def _near(layout: Layout, pos: tuple[int, int], kind: Tile, slack: int) -> bool:
    for cell in layout.cells_of(kind):
        for f in layout.floor_neighbors(cell):
            if abs(f[0] - pos[0]) + abs(f[1] - pos[1]) <= slack:
                return True
    return False


def evaluate(pred: Predicate, start: GridState, traj: Sequence[GridState]) -> int:
    """1 iff the subgoal was achieved by ``pred.agent`` somewhere in the window."""
    if not traj:
        raise PredicateError("trajectory window must contain at least one successor state")
    if traj[0].timestep != start.timestep + 1:
        raise PredicateError("trajectory must begin at the successor of the start state")
    kind, agent = pred.kind, pred.agent
    events = list(_agent_events(traj, agent))

    if kind is SubgoalKind.FETCH_ONION_TO_BAR:
        hit = any(e.kind == EventKind.PLACE_BAR and e.item == Item.ONION for _, e in events)
    elif kind is SubgoalKind.FETCH_PLATE_TO_BAR:
        hit = any(e.kind == EventKind.PLACE_BAR and e.item == Item.PLATE for _, e in events)
    elif kind is SubgoalKind.BAR_ONION_TO_POT:
        # the deposited onion must come off the bar: picked up in-window, or
        # already in hand at the start of the window
        sourced = start.held[agent] == Item.ONION
        hit = False
        for _, e in events:
            if e.kind == EventKind.TAKE_BAR and e.item == Item.ONION:
                sourced = True
            elif e.kind == EventKind.POT_ADD and sourced:
                hit = True
                break
            elif e.kind in (EventKind.PICK_ONION, EventKind.PLACE_BAR):
                sourced = False
    elif kind is SubgoalKind.BAR_PLATE_HOLD:
        hit = any(e.kind == EventKind.TAKE_BAR and e.item == Item.PLATE for _, e in events)
    elif kind is SubgoalKind.PLATE_SOUP_FROM_POT:
        hit = any(e.kind == EventKind.PLATE_SOUP for _, e in events)
    elif kind is SubgoalKind.DELIVER_SOUP:
        hit = any(e.kind == EventKind.DELIVER for _, e in events)
    elif kind is SubgoalKind.WAIT_AT_BAR:
        hit = any(_near(s.layout, s.positions[agent], Tile.SHARED_BAR, 1) for s in traj)
    elif kind is SubgoalKind.WAIT_NEAR_POT:
        hit = any(_near(s.layout, s.positions[agent], Tile.POT, 0) for s in traj)
    elif kind is SubgoalKind.IDLE:
        hit = False
        prev = start
        for s in traj:
            acted = any(e.agent == agent for e in s.events)
            if not acted and s.positions[agent] == prev.positions[agent]:
                hit = True
                break
            prev = s
    else:  # pragma: no cover
        raise AssertionError(kind)
    return int(hit)


# --------------------------------------------------------------------------
# offline datasets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SubgoalRecord:
    state: GridState
    state_text: str
    subgoals: tuple[CanonicalSubgoal, CanonicalSubgoal]

    @property
    def key(self) -> tuple[int, tuple[str, str]]:
        return (state_hash(self.state), tuple(s.kind.value for s in self.subgoals))


@dataclass
class SubgoalDataset:
    records: list[SubgoalRecord]
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def kind_counts(self) -> dict[SubgoalKind, int]:
        counts = {k: 0 for k in KIND_ORDER}
        for r in self.records:
            for s in r.subgoals:
                counts[s.kind] += 1
        return counts

    def missing_kinds(self, exclude: Iterable[SubgoalKind] = (SubgoalKind.IDLE,)) -> list[SubgoalKind]:
        counts = self.kind_counts()
        skip = set(exclude)
        return [k for k in KIND_ORDER if k not in skip and counts[k] == 0]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(record_to_json(r), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SubgoalDataset":
        with open(path, encoding="utf-8") as fh:
            return cls([record_from_json(json.loads(line)) for line in fh if line.strip()])


def state_to_json(state: GridState) -> dict:
    return {
        "grid": state.layout.to_text(),
        "layout": state.layout.name,
        "positions": [list(p) for p in state.positions],
        "held": [int(h) for h in state.held],
        "pots": [[p.contents, p.timer, int(p.finished)] for p in state.pots],
        "bar": [int(b) for b in state.bar_items],
        "timestep": state.timestep,
        "deliveries": state.deliveries,
        "horizon": state.horizon,
    }


def state_from_json(obj: dict) -> GridState:
    from kitchenplan.env import parse_layout

    layout = parse_layout(obj["grid"], name=obj.get("layout", "custom"))
    return GridState(
        layout=layout,
        positions=tuple(tuple(p) for p in obj["positions"]),
        held=tuple(Item(h) for h in obj["held"]),
        pots=tuple(PotState(c, t, bool(f)) for c, t, f in obj["pots"]),
        bar_items=tuple(Item(b) for b in obj["bar"]),
        timestep=obj["timestep"],
        deliveries=obj["deliveries"],
        horizon=obj.get("horizon", 400),
    )


def record_to_json(r: SubgoalRecord) -> dict:
    return {
        "state": state_to_json(r.state),
        "state_text": r.state_text,
        "kinds": [s.kind.value for s in r.subgoals],
        "raw": [s.raw_text for s in r.subgoals],
    }


def record_from_json(obj: dict) -> SubgoalRecord:
    subs = tuple(CanonicalSubgoal(SubgoalKind(k), raw) for k, raw in zip(obj["kinds"], obj["raw"]))
    return SubgoalRecord(state_from_json(obj["state"]), obj["state_text"], subs)


def generate_states(
    layout: Layout,
    seed: int,
    n: int,
    max_gap: int = 16,
    attempt_budget: int | None = None,
    interact_bias: float = 0.75,
    guide: float = 0.5,
    slack: int = 30,
) -> list[GridState]:
    """``n`` distinct legal states sampled along random-target walks from reset.

    Every tick each chef either follows the scripted plan (probability
    ``guide``; without it pots almost never get three onions) or picks a
    uniformly random legal target, favouring interactive tiles with
    probability ``interact_bias``.  States are recorded after random gaps of
    1..``max_gap`` ticks, the first one right after reset.  Walks stop
    ``slack`` ticks before the horizon so every state leaves room for a round.
    """
    from kitchenplan.expert import expert_target
    from kitchenplan.planner import scripted_oracle_plan

    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    budget = attempt_budget if attempt_budget is not None else 200 * n
    seen: set[int] = set()
    out: list[GridState] = []
    steps = 0
    while len(out) < n and steps < budget:
        s = reset(layout, seed)
        gap = 1
        while len(out) < n and steps < budget and s.timestep < s.horizon - slack:
            plan = None
            acts = []
            for i in range(2):
                if rng.random() < guide:
                    plan = plan or scripted_oracle_plan(s)
                    acts.append(expert_target(s, i, plan.assigned()[i].kind))
                else:
                    acts.append(_random_target(s, i, rng, interact_bias))
            s, _, _ = step(s, acts)
            steps += 1
            gap -= 1
            if gap > 0:
                continue
            gap = int(rng.integers(1, max_gap + 1))
            h = state_hash(s)
            if h in seen:
                continue
            s.check_invariants()
            seen.add(h)
            out.append(s)
    if len(out) < n:
        log.warning("generate_states reached only %d of %d distinct states", len(out), n)
    return out


def _random_target(state: GridState, agent: int, rng: np.random.Generator, bias: float):
    legal = sorted(legal_targets(state, agent))
    interactive = [c for c in legal if state.layout.tile(c) != Tile.FLOOR]
    pool = interactive if interactive and rng.random() < bias else legal
    return pool[int(rng.integers(len(pool)))]


def label_dataset(states: Sequence[GridState], client=None, manual=None) -> SubgoalDataset:
    """Label states with a planner backend (scripted oracle by default)."""
    from kitchenplan import planner
    from kitchenplan.text_bridge import fixture_manual, translate_state

    if not states:
        raise ValueError("label_dataset needs at least one state")
    manual = manual or fixture_manual()
    records: list[SubgoalRecord] = []
    seen: set = set()
    dropped = 0
    for s in states:
        if client is None:
            plan = planner.scripted_oracle_plan(s)
            subs = (plan.subgoals[plan.assignment[0]], plan.subgoals[plan.assignment[1]])
            text = translate_state(s).text
        else:
            text = translate_state(s).text
            try:
                plan = planner.plan_round(manual, s, client, round_index=0)
            except (planner.PlanParseError, planner.AssignmentParseError, NormalizationError):
                dropped += 1
                continue
            subs = plan.assigned()
        rec = SubgoalRecord(s, text, subs)
        if rec.key in seen:
            continue
        seen.add(rec.key)
        records.append(rec)
    return SubgoalDataset(records, dropped=dropped)
