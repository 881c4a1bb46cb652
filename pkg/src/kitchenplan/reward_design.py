"""Backend-designed completion tests as declarative condition records.

A planner backend is asked for a test of one sub-goal and answers with a line
such as ``condition: bar_onions gains 1; holding_onion loses 1``. The record is
parsed into clauses over a closed set of state fields and interpreted here, so
no generated code is ever executed.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

from kitchenplan.env import GridState, Item, Tile
from kitchenplan.plm import PlannerClient, load_template
from kitchenplan.subgoals import PredicateError, SubgoalKind, _near
from kitchenplan.text_bridge import TaskManual


def _bar(item: Item) -> Callable[[GridState, int, GridState], int]:
    return lambda s, a, s0: sum(1 for b in s.bar_items if b == item)


def _holding(item: Item) -> Callable[[GridState, int, GridState], int]:
    return lambda s, a, s0: int(s.held[a] == item)


# each field maps (state, agent, round start) to an integer
FIELDS: dict[str, Callable[[GridState, int, GridState], int]] = {
    "bar_onions": _bar(Item.ONION),
    "bar_plates": _bar(Item.PLATE),
    "bar_soups": _bar(Item.SOUP),
    "pot_onions": lambda s, a, s0: sum(p.contents for p in s.pots),
    "pots_finished": lambda s, a, s0: sum(1 for p in s.pots if p.finished),
    "deliveries": lambda s, a, s0: s.deliveries,
    "holding_onion": _holding(Item.ONION),
    "holding_plate": _holding(Item.PLATE),
    "holding_soup": _holding(Item.SOUP),
    "holding_nothing": _holding(Item.NONE),
    "near_bar": lambda s, a, s0: int(_near(s.layout, s.positions[a], Tile.SHARED_BAR, 1)),
    "near_pot": lambda s, a, s0: int(_near(s.layout, s.positions[a], Tile.POT, 0)),
    "displacement": lambda s, a, s0: (abs(s.positions[a][0] - s0.positions[a][0])
                                      + abs(s.positions[a][1] - s0.positions[a][1])),
}

COMPARISONS = ("gains", "loses", "keeps", "ends_at")


class ConditionParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class Clause:
    field: str
    comparison: str
    delta: int

    def holds(self, start: GridState, now: GridState, agent: int) -> bool:
        fn = FIELDS[self.field]
        before, after = fn(start, agent, start), fn(now, agent, start)
        if self.comparison == "gains":
            return after - before >= self.delta
        if self.comparison == "loses":
            return before - after >= self.delta
        if self.comparison == "keeps":
            return after == before
        return after == self.delta

    def __str__(self) -> str:
        return f"{self.field} {self.comparison} {self.delta}"


@dataclass(frozen=True)
class ConditionRecord:
    clauses: tuple[Clause, ...]

    def __str__(self) -> str:
        return "condition: " + "; ".join(str(c) for c in self.clauses)

    def evaluate(self, agent: int, start: GridState, traj: Sequence[GridState]) -> int:
        """1 iff some state of the window satisfies every clause at once."""
        if not traj:
            raise PredicateError("trajectory window must contain at least one successor state")
        return int(any(all(c.holds(start, s, agent) for c in self.clauses) for s in traj))


_LINE = re.compile(r"^\s*condition\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)
_CLAUSE = re.compile(r"^([a-z_]+)\s+([a-z_]+)\s+(-?\d+)$")


def parse_condition(text: str) -> ConditionRecord:
    m = None
    for m in _LINE.finditer(text):
        pass
    if m is None:
        raise ConditionParseError("no 'condition:' line in the response", text)
    clauses = []
    for part in m.group(1).rstrip(".").split(";"):
        part = part.strip().lower()
        if not part:
            continue
        cm = _CLAUSE.match(part)
        if not cm:
            raise ConditionParseError(f"malformed clause {part!r}", text)
        field, comparison, delta = cm.group(1), cm.group(2), int(cm.group(3))
        if field not in FIELDS:
            raise ConditionParseError(f"unknown field {field!r}", text)
        if comparison not in COMPARISONS:
            raise ConditionParseError(f"unknown comparison {comparison!r}", text)
        if comparison in ("gains", "loses") and delta < 1:
            raise ConditionParseError(f"{comparison} needs a positive amount in {part!r}", text)
        clauses.append(Clause(field, comparison, delta))
    if not clauses:
        raise ConditionParseError("empty condition", text)
    return ConditionRecord(tuple(clauses))


def render_reward_design(manual: TaskManual, objective: str) -> str:
    return load_template("reward_design").render(
        manual=manual.text, fields=", ".join(FIELDS), objective=objective)


def design_condition(manual: TaskManual, objective: str, client: PlannerClient) -> ConditionRecord:
    return parse_condition(client.complete(render_reward_design(manual, objective)))


_KEEP_ALL = "; ".join(f"{f} keeps 0" for f in ("holding_onion", "holding_plate", "holding_soup",
                                                 "bar_onions", "bar_plates", "deliveries"))

# what the scripted backend answers for each canonical kind
REFERENCE_CONDITIONS: dict[SubgoalKind, str] = {
    SubgoalKind.FETCH_ONION_TO_BAR: "condition: bar_onions gains 1; holding_onion loses 1",
    SubgoalKind.FETCH_PLATE_TO_BAR: "condition: bar_plates gains 1; holding_plate loses 1",
    SubgoalKind.WAIT_AT_BAR: "condition: near_bar ends_at 1",
    SubgoalKind.BAR_ONION_TO_POT: "condition: pot_onions gains 1; holding_onion loses 1",
    SubgoalKind.BAR_PLATE_HOLD: "condition: bar_plates loses 1; holding_plate gains 1",
    SubgoalKind.PLATE_SOUP_FROM_POT: "condition: holding_soup gains 1; holding_plate loses 1",
    SubgoalKind.DELIVER_SOUP: "condition: deliveries gains 1; holding_soup loses 1",
    SubgoalKind.WAIT_NEAR_POT: "condition: near_pot ends_at 1",
    SubgoalKind.IDLE: f"condition: displacement ends_at 0; {_KEEP_ALL}",
}
