"""Goal generation, decomposition and subgoal assignment: prompt assembly,
backend calls and parsing, plus the scripted kitchen oracle."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from kitchenplan.env import GridState, Item, Tile, can_reach_tile
from kitchenplan.plm import BackendError, PlannerClient, ScriptedTransport, Transcript, load_template
from kitchenplan.subgoals import (
    JACCARD_THRESHOLD,
    KIND_ORDER,
    TEMPLATES,
    CanonicalSubgoal,
    NormalizationError,
    SubgoalKind,
    content_words,
    jaccard,
    normalize,
)
from kitchenplan.text_bridge import CHEF_NAMES, TaskManual, translate_state

log = logging.getLogger(__name__)

GOAL_MARKER = "the current goal by operating valid elements is:"
SUBGOAL_MARKER = "the two sub-goals by operating valid elements are:"
ASSIGN_MARKER = "the result of the two current sub-goals assignment is as follows:"
BLAME_MARKER = "the problematic stage is:"
DECOMPOSE_TAIL = "To formulate goals, think step by step:"
ASSIGN_TAIL = "To allocate sub-goals reasonably and efficiently, let us think step by step:"

K = SubgoalKind


class PlanParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class AssignmentParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class FailureHistory(Protocol):
    failed_goals: Sequence[str]
    failed_subgoals: Sequence[tuple[str, str]]
    failed_assignments: Sequence[tuple[str, str]]


@dataclass
class PlanRound:
    round_index: int
    state_text: str
    goal: str
    subgoals: tuple[tuple[str, CanonicalSubgoal], ...]
    assignment: tuple[int, ...]
    transcripts: list[Transcript] = field(default_factory=list)

    def __post_init__(self):
        if len(self.subgoals) != 2:
            raise ValueError(f"expected 2 subgoals, got {len(self.subgoals)}")
        if sorted(self.assignment) != list(range(len(self.subgoals))):
            raise ValueError(f"assignment {self.assignment} is not a bijection")

    def assigned(self) -> tuple[CanonicalSubgoal, ...]:
        return tuple(self.subgoals[j][1] for j in self.assignment)

    def assigned_raw(self) -> tuple[str, ...]:
        return tuple(self.subgoals[j][0] for j in self.assignment)

    def kinds(self) -> tuple[SubgoalKind, ...]:
        return tuple(c.kind for _, c in self.subgoals)


# --------------------------------------------------------------------------
# prompt rendering

def valid_subgoals_line() -> str:
    return "; ".join(TEMPLATES[k][0] for k in KIND_ORDER)


def format_pairs(pairs: Sequence[tuple[str, str]]) -> str:
    return " | ".join(f"{a}; {b}" for a, b in pairs)


def format_assignment(texts: Sequence[str]) -> str:
    return "; ".join(f"{CHEF_NAMES[i]}: {t}" for i, t in enumerate(texts))


def decompose_constraints(history: FailureHistory | None) -> str:
    if history is None or not (history.failed_goals or history.failed_subgoals):
        return ""
    return load_template("reflect_replan").render(
        failed_goals="; ".join(history.failed_goals) or "None",
        failed_subgoals=format_pairs(history.failed_subgoals) or "None",
    )


def assign_constraints(history: FailureHistory | None) -> str:
    if history is None or not history.failed_assignments:
        return ""
    return load_template("reflect_replan_assign").render(
        failed_assignments=" | ".join(format_assignment(a) for a in history.failed_assignments),
    )


def render_decompose(manual: TaskManual, state_text: str, history: FailureHistory | None = None) -> str:
    if not manual.objects:
        raise ValueError("the task manual has no interactive objects")
    return load_template("goal_decompose").render(
        manual=manual.text,
        valid_elements=", ".join(manual.objects),
        valid_subgoals=valid_subgoals_line(),
        constraints=decompose_constraints(history),
        state_text=state_text,
    )


def render_assign(manual: TaskManual, subgoals: Sequence[str], game_text: str,
                  agent_texts: Sequence[str], history: FailureHistory | None = None) -> str:
    return load_template("assign").render(
        manual=manual.text,
        constraints=assign_constraints(history),
        subgoal_1=subgoals[0],
        subgoal_2=subgoals[1],
        game_text=game_text,
        chef_text="; ".join(agent_texts) + ".",
    )


# --------------------------------------------------------------------------
# parsing

_NUMBERED_LINE = re.compile(r"^\s*(\d+)[.)]\s+(.*\S)\s*$")
_INLINE_ITEM = re.compile(r"(?:^|\s)(\d+)[.)]\s+")


def _clean_item(text: str) -> str:
    return text.strip().rstrip(";.,").strip()


def _numbered_blocks(text: str) -> list[list[str]]:
    blocks: list[list[str]] = []
    current: list[str] = []
    for line in text.splitlines():
        m = _NUMBERED_LINE.match(line)
        if m:
            current.append(_clean_item(m.group(2)))
        elif current:
            blocks.append(current)
            current = []
    if current:
        blocks.append(current)
    return blocks


def _items_after_marker(tail: str) -> list[str]:
    body = tail.lstrip()
    cut = re.search(r"\n\s*\n", body)
    if cut:
        body = body[:cut.start()]
    pieces = _INLINE_ITEM.split(body)
    # split yields [prefix, n1, item1, n2, item2, ...]
    items = [_clean_item(pieces[i + 1]) for i in range(1, len(pieces) - 1, 2)]
    return [i for i in items if i]


def parse_decomposition(text: str) -> tuple[str, list[str]]:
    """Extract ``(goal, [subgoal, subgoal])`` from a decomposition response."""
    lower = text.lower()
    goal = ""
    gi = lower.rfind(GOAL_MARKER)
    if gi >= 0:
        rest = text[gi + len(GOAL_MARKER):].strip()
        goal = re.split(r"\.(?:\s|$)|\n", rest, maxsplit=1)[0].strip()
    else:
        log.warning("goal marker missing from planner response")
    si = lower.rfind(SUBGOAL_MARKER)
    if si >= 0:
        items = _items_after_marker(text[si + len(SUBGOAL_MARKER):])
    else:
        blocks = _numbered_blocks(text)
        if not blocks:
            raise PlanParseError("no sub-goal marker and no numbered list in the response", text)
        items = blocks[-1]
    if len(items) != 2:
        raise PlanParseError(f"expected 2 sub-goals, found {len(items)}", text)
    return goal, items


_CHEF_LINE = re.compile(r"Chef ([AB])\s*:\s*([^;\n]+)")


def parse_assignment(text: str, subgoals: Sequence[str]) -> tuple[int, int]:
    """Map ``Chef A``/``Chef B`` lines onto subgoal indices; the result is a bijection."""
    quotes: dict[int, str] = {}
    for m in _CHEF_LINE.finditer(text):
        quotes["AB".index(m.group(1))] = _clean_item(m.group(2))
    if len(quotes) != 2:
        raise AssignmentParseError("response lacks a line for each chef", text)
    sub_words = [content_words(s) for s in subgoals]
    score = np.array([[jaccard(content_words(quotes[a]), w) for w in sub_words] for a in (0, 1)])
    best = max(((0, 1), (1, 0)), key=lambda p: (score[0, p[0]] + score[1, p[1]], p == (0, 1)))
    for agent, j in enumerate(best):
        if score[agent, j] < JACCARD_THRESHOLD:
            raise AssignmentParseError(
                f"{CHEF_NAMES[agent]}'s subgoal {quotes[agent]!r} matches no remaining input subgoal", text)
    return best


_PHASES = {
    "goal generation and decomposition": "GoalGenDecomp",
    "subgoal assignment": "SubgoalAssignment",
    "sub-goal assignment": "SubgoalAssignment",
    "sub-goal allocation": "SubgoalAssignment",
    "subgoal allocation": "SubgoalAssignment",
}


class BlameParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


def parse_blame(text: str) -> str:
    lower = text.lower()
    i = lower.rfind(BLAME_MARKER)
    if i < 0:
        raise BlameParseError("no problematic-stage marker in the response", text)
    phrase = re.split(r"[.\n]", lower[i + len(BLAME_MARKER):].strip(), maxsplit=1)[0].strip()
    if phrase not in _PHASES:
        raise BlameParseError(f"invalid phase {phrase!r}", text)
    return _PHASES[phrase]


# --------------------------------------------------------------------------
# stages

def generate_and_decompose(manual: TaskManual, state_text: str, history: FailureHistory | None,
                           client: PlannerClient) -> tuple[str, list[str]]:
    return parse_decomposition(client.complete(render_decompose(manual, state_text, history)))


def assign(manual: TaskManual, subgoals: Sequence[str], game_text: str, agent_texts: Sequence[str],
           history: FailureHistory | None, client: PlannerClient) -> tuple[int, int]:
    if len(subgoals) != 2:
        raise ValueError("assign needs exactly 2 subgoals")
    prompt = render_assign(manual, subgoals, game_text, agent_texts, history)
    return parse_assignment(client.complete(prompt), subgoals)


def normalize_pair(goal_response: str, raws: Sequence[str]) -> tuple[tuple[str, CanonicalSubgoal], ...]:
    try:
        return tuple((r, normalize(r)) for r in raws)
    except NormalizationError as exc:
        raise PlanParseError(str(exc), goal_response) from exc


def plan_round(manual: TaskManual, state: GridState, client: PlannerClient, round_index: int = 0,
               history: FailureHistory | None = None) -> PlanRound:
    st = translate_state(state)
    start = len(client.transcripts)
    goal, raws = generate_and_decompose(manual, st.text, history, client)
    subs = normalize_pair(client.transcripts[-1].response, raws)
    assignment = assign(manual, raws, st.game_text, st.agent_sentences, history, client)
    return PlanRound(round_index, st.text, goal, subs, assignment, list(client.transcripts[start:]))


# --------------------------------------------------------------------------
# scripted oracle

@dataclass(frozen=True)
class KitchenSummary:
    """Everything the oracle rules look at; derivable from a state or its text."""

    pots: tuple[tuple[int, bool, bool], ...]  # (contents, cooking, finished)
    bar: tuple[int, int, int]  # onions, plates, soups
    held: tuple[Item, Item]
    left: int  # index of the chef in the storage room
    bar_capacity: int = 3

    @property
    def right(self) -> int:
        return 1 - self.left

    @property
    def bar_free(self) -> bool:
        return sum(self.bar) < self.bar_capacity

    @property
    def cooking(self) -> int:
        return sum(1 for _, c, _ in self.pots if c)

    @property
    def finished(self) -> int:
        return sum(1 for _, _, f in self.pots if f)

    @property
    def fillable(self) -> list[int]:
        return [n for n, c, f in self.pots if not c and not f and n < 3]


def summarize(state: GridState) -> KitchenSummary:
    bar = tuple(sum(1 for b in state.bar_items if b == it) for it in (Item.ONION, Item.PLATE, Item.SOUP))
    left = 0
    for i in range(len(state.positions)):
        if can_reach_tile(state, i, Tile.ONION_STORAGE):
            left = i
            break
    return KitchenSummary(
        pots=tuple((p.contents, p.cooking, p.finished) for p in state.pots),
        bar=bar,
        held=state.held,
        left=left,
        bar_capacity=len(state.bar_items),
    )


_WORD_NUM = {"no": 0, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6}
_HELD_TEXT = {
    "is idle": Item.NONE,
    "is holding an onion soup": Item.SOUP,
    "is holding an onion": Item.ONION,
    "is holding a plate": Item.PLATE,
}
_POT_RE = re.compile(r"the (?:(first|second|third|fourth) )?crafting table "
                     r"(is making onion soup|has a finished onion soup|is empty|has (\w+) onions?)")
_BAR_RE = re.compile(r"there (?:is|are) (.*?) on the shared bar")
_CHEF_RE = re.compile(r"Chef ([AB]) (is idle|is holding an onion soup|is holding an onion|is holding a plate)"
                      r" in the (left|right) room")


def parse_summary(text: str, n_pots: int = 2, bar_capacity: int = 3) -> KitchenSummary:
    """Inverse of the template translation, for the oracle transport."""
    if "there are no onions on the crafting table and shared bar" in text:
        pots = tuple((0, False, False) for _ in range(n_pots))
        bar = (0, 0, 0)
    else:
        found = []
        for m in _POT_RE.finditer(text):
            phrase = m.group(2)
            if phrase == "is making onion soup":
                found.append((3, True, False))
            elif phrase == "has a finished onion soup":
                found.append((3, False, True))
            elif phrase == "is empty":
                found.append((0, False, False))
            else:
                found.append((_WORD_NUM[m.group(3)], False, False))
        pots = tuple(found)
        counts = {"onion": 0, "plate": 0, "onion soup": 0}
        m = _BAR_RE.search(text)
        if m:
            for n, noun in re.findall(r"(\w+) (onion soup|onion|plate)s?", m.group(1)):
                counts[noun] = _WORD_NUM[n]
        bar = (counts["onion"], counts["plate"], counts["onion soup"])
    held = [Item.NONE, Item.NONE]
    left = 0
    for m in _CHEF_RE.finditer(text):
        i = "AB".index(m.group(1))
        held[i] = _HELD_TEXT[m.group(2)]
        if m.group(3) == "left":
            left = i
    return KitchenSummary(pots, bar, (held[0], held[1]), left, bar_capacity)


def _right_kind(s: KitchenSummary) -> SubgoalKind:
    hand = s.held[s.right]
    onions, plates, soups = s.bar
    if hand == Item.SOUP:
        return K.DELIVER_SOUP
    if hand == Item.PLATE:
        if s.finished:
            return K.PLATE_SOUP_FROM_POT
        return K.WAIT_NEAR_POT
    if hand == Item.ONION:
        return K.BAR_ONION_TO_POT if s.fillable else K.WAIT_NEAR_POT
    if s.finished:
        return K.PLATE_SOUP_FROM_POT if plates else K.WAIT_AT_BAR
    if onions and s.fillable:
        return K.BAR_ONION_TO_POT
    if plates and s.cooking:
        return K.BAR_PLATE_HOLD
    if soups:
        return K.DELIVER_SOUP
    if s.cooking:
        return K.WAIT_NEAR_POT
    return K.WAIT_AT_BAR


def _left_kind(s: KitchenSummary) -> SubgoalKind:
    hand = s.held[s.left]
    onions, plates, _ = s.bar
    if not s.bar_free:
        return K.WAIT_AT_BAR
    if hand == Item.ONION:
        return K.FETCH_ONION_TO_BAR
    if hand == Item.PLATE:
        return K.FETCH_PLATE_TO_BAR
    if hand == Item.SOUP:
        return K.WAIT_AT_BAR
    supply = plates + (s.held[s.right] == Item.PLATE)
    if supply < s.cooking + s.finished:
        return K.FETCH_PLATE_TO_BAR
    needed = sum(3 - n for n in s.fillable) - onions - (s.held[s.right] == Item.ONION)
    if needed > 0:
        return K.FETCH_ONION_TO_BAR
    return K.WAIT_AT_BAR


_GOAL_FOR_KIND = {
    K.FETCH_ONION_TO_BAR: "making onion soup",
    K.BAR_ONION_TO_POT: "making onion soup",
    K.WAIT_NEAR_POT: "serving onion soup",
    K.BAR_PLATE_HOLD: "serving onion soup",
    K.PLATE_SOUP_FROM_POT: "serving onion soup",
    K.FETCH_PLATE_TO_BAR: "serving onion soup",
    K.DELIVER_SOUP: "delivering onion soup to the counter",
}


@dataclass(frozen=True)
class OraclePlan:
    goal: str
    subgoals: tuple[CanonicalSubgoal, CanonicalSubgoal]
    assignment: tuple[int, int]

    def assigned(self) -> tuple[CanonicalSubgoal, ...]:
        return tuple(self.subgoals[j] for j in self.assignment)


def _pair(left_kind: SubgoalKind, right_kind: SubgoalKind) -> tuple[CanonicalSubgoal, CanonicalSubgoal]:
    return CanonicalSubgoal.of(left_kind, 0), CanonicalSubgoal.of(right_kind, 1 if right_kind == left_kind else 0)


def oracle_from_summary(s: KitchenSummary) -> OraclePlan:
    lk, rk = _left_kind(s), _right_kind(s)
    goal = _GOAL_FOR_KIND.get(rk) or _GOAL_FOR_KIND.get(lk, "making onion soup")
    assignment = (0, 1) if s.left == 0 else (1, 0)
    return OraclePlan(goal, _pair(lk, rk), assignment)


def scripted_oracle_plan(state: GridState) -> OraclePlan:
    """Rule-table plan (fill pots, cook, plate, deliver) for the current state."""
    return oracle_from_summary(summarize(state))


def kind_feasible(s: KitchenSummary, agent: int, kind: SubgoalKind) -> bool:
    """Whether ``agent`` could possibly complete ``kind`` from this summary."""
    hand = s.held[agent]
    left = agent == s.left
    onions, plates, soups = s.bar
    if kind in (K.WAIT_AT_BAR, K.IDLE):
        return True
    if kind == K.FETCH_ONION_TO_BAR:
        return s.bar_free and (hand == Item.ONION or (left and hand == Item.NONE))
    if kind == K.FETCH_PLATE_TO_BAR:
        return s.bar_free and (hand == Item.PLATE or (left and hand == Item.NONE))
    if kind == K.BAR_PLATE_HOLD:
        return hand == Item.NONE and plates > 0
    if left:
        return False
    if kind == K.WAIT_NEAR_POT:
        return True
    if kind == K.BAR_ONION_TO_POT:
        return bool(s.fillable) and (hand == Item.ONION or (hand == Item.NONE and onions > 0))
    if kind == K.PLATE_SOUP_FROM_POT:
        return s.finished > 0 and (hand == Item.PLATE or (hand == Item.NONE and plates > 0))
    if kind == K.DELIVER_SOUP:
        return hand == Item.SOUP or (hand == Item.NONE and soups > 0)
    return False


# --------------------------------------------------------------------------
# oracle transport: answers the planning prompts from the state text alone

def _last(pattern: str, text: str) -> re.Match | None:
    found = list(re.finditer(pattern, text, re.DOTALL))
    return found[-1] if found else None


def _kind_pairs(blob: str) -> list[tuple[SubgoalKind, ...]]:
    out = []
    for pair in blob.split(" | "):
        try:
            out.append(tuple(sorted((normalize(p).kind for p in pair.split("; ")), key=KIND_ORDER.index)))
        except NormalizationError:
            continue
    return out


def oracle_decompose_response(prompt: str, n_pots: int = 2) -> str:
    m = _last(r"The current situation is: (.*?)\n" + re.escape(DECOMPOSE_TAIL), prompt)
    state_text = m.group(1).strip()
    s = parse_summary(state_text, n_pots=n_pots)
    plan = oracle_from_summary(s)
    failed = []
    fm = _last(r"Previous failed sub-goals: (.*?)\.\n", prompt)
    if fm and fm.group(1) != "None":
        failed = _kind_pairs(fm.group(1))
    lk, rk = plan.subgoals[0].kind, plan.subgoals[1].kind
    candidates = [(lk, rk), (lk, K.WAIT_AT_BAR), (K.WAIT_AT_BAR, rk), (K.WAIT_AT_BAR, K.WAIT_AT_BAR),
                  (K.IDLE, K.IDLE)]
    chosen = candidates[-1]
    for c in candidates:
        if tuple(sorted(c, key=KIND_ORDER.index)) not in failed:
            chosen = c
            break
    s1, s2 = _pair(*chosen)
    goal = plan.goal if chosen == (lk, rk) else "making onion soup"
    return (
        f"The current situation is: {state_text}\n"
        "To formulate goals, think step by step:\n"
        "to fill as many orders as possible, onion soup must be made continuously and delivered to the counter.\n"
        "The items on the crafting tables and the shared bar decide what is missing next.\n\n"
        f"So the current goal by operating valid elements is: {goal}.\n\n"
        "Further, to decompose the goal into two sub-goals, let the two chefs complete it separately, "
        "let us think step by step:\n"
        "the chefs are in separate rooms and can only pass items over the shared bar, "
        "so the two sub-goals by operating valid elements are:\n"
        f"1. {s1.sentence};\n2. {s2.sentence}.\n"
    )


def _feasible_assignment(s: KitchenSummary, kinds: Sequence[SubgoalKind],
                         failed: Sequence[tuple[SubgoalKind, SubgoalKind]]) -> tuple[int, int]:
    options = [(0, 1), (1, 0)]
    scored = []
    for p in options:
        ok = all(kind_feasible(s, agent, kinds[p[agent]]) for agent in (0, 1))
        scored.append((not ok, tuple(kinds[j] for j in p) in failed, options.index(p), p))
    return min(scored)[3]


def oracle_assign_response(prompt: str, n_pots: int = 2) -> str:
    m = _last(r"The two current sub-goals:\n1\. (.*?);\n2\. (.*?)\.\n\nThe current status of the game:\n(.*?)\n\n"
              r"The current status of the two chefs: (.*?)\n\n" + re.escape(ASSIGN_TAIL), prompt)
    subs = [m.group(1), m.group(2)]
    s = parse_summary(m.group(3) + " " + m.group(4), n_pots=n_pots)
    kinds = [normalize(x).kind for x in subs]
    failed = []
    fm = _last(r"Previous failed subgoal assignments: (.*?)\.\n", prompt)
    if fm:
        for blob in fm.group(1).split(" | "):
            lines = dict((k, v) for k, v in re.findall(r"Chef ([AB]): ([^;]+)", blob))
            try:
                failed.append(tuple(normalize(lines[c]).kind for c in "AB"))
            except (KeyError, NormalizationError):
                continue
    p = _feasible_assignment(s, kinds, failed)
    rooms = ["left" if i == s.left else "right" for i in (0, 1)]
    return (
        f"the current two sub-goals are {subs[0]}, and {subs[1]}.\n"
        f"Chef A is in the {rooms[0]} room and Chef B is in the {rooms[1]} room, "
        "so each sub-goal goes to the chef who can reach the objects it needs.\n"
        "Therefore, the result of the two current sub-goals assignment is as follows:\n"
        f"Chef A: {subs[p[0]]};\nChef B: {subs[p[1]]}.\n"
    )


def oracle_blame_response(prompt: str, n_pots: int = 2) -> str:
    sm = _last(r"The current situation is: (.*?)\nThe generated goal", prompt)
    am = _last(r"assignment decided by the sub-goal allocation personnel is as follows: "
               r"Chef A: (.*?); Chef B: (.*?)\.\n", prompt)
    s = parse_summary(sm.group(1), n_pots=n_pots)
    try:
        kinds = [normalize(am.group(1)).kind, normalize(am.group(2)).kind]
    except NormalizationError:
        kinds = None
    phase = "goal generation and decomposition"
    if kinds is not None:
        as_is = all(kind_feasible(s, a, kinds[a]) for a in (0, 1))
        swapped = all(kind_feasible(s, a, kinds[1 - a]) for a in (0, 1))
        if not as_is and swapped:
            phase = "subgoal assignment"
    return (
        "Firstly, we check whether each chef can reach the objects its sub-goal needs from its room.\n"
        f"Based on the above analysis, it appears that the problematic stage is: {phase}.\n"
    )


def oracle_condition_response(objective: str) -> str:
    from kitchenplan.reward_design import REFERENCE_CONDITIONS

    return REFERENCE_CONDITIONS[normalize(objective).kind] + "\n"


class OracleTransport(ScriptedTransport):
    """Scripted backend that plays the planner roles with the oracle rule table."""

    tag = "scripted"

    def __init__(self, manual_objects: Sequence[str] = (), n_pots: int = 2, extra_rules=()):
        from kitchenplan.text_bridge import FIXTURE_OBJECTS

        objs = ", ".join(manual_objects or FIXTURE_OBJECTS)
        super().__init__([
            (re.escape(DECOMPOSE_TAIL) + r"\s*$", lambda p, m: oracle_decompose_response(p, n_pots)),
            (re.escape(ASSIGN_TAIL) + r"\s*$", lambda p, m: oracle_assign_response(p, n_pots)),
            (r"As a decision inspector.*let us think step by step\.\s*$",
             lambda p, m: oracle_blame_response(p, n_pots)),
            (r"Extract all pertinent, interactive objects", objs),
            (r"Sub-goal: ([^\n]*)\nReply with exactly one line that starts with \"condition:\"\.\s*$",
             lambda p, m: oracle_condition_response(m.group(1))),
            *extra_rules,
        ])


class FaultInjectingTransport:
    """Wraps a transport and swaps the chef lines of assignment answers with
    probability ``p`` (seeded, consumed once per assignment prompt)."""

    def __init__(self, inner, p: float, seed: int = 0):
        if not 0.0 <= p <= 1.0:
            raise ValueError("fault probability must be in [0, 1]")
        self.inner = inner
        self.p = p
        self.rng = np.random.default_rng(seed)
        self.tag = f"{inner.tag}+faults"
        self.injected = 0

    def send(self, prompt: str, temperature: float, max_tokens: int) -> str:
        response = self.inner.send(prompt, temperature, max_tokens)
        if not re.search(re.escape(ASSIGN_TAIL) + r"\s*$", prompt):
            return response
        if self.rng.random() >= self.p:
            return response
        lines = dict((c, t) for c, t in _CHEF_LINE.findall(response))
        if len(lines) != 2 or lines["A"].strip() == lines["B"].strip():
            return response
        self.injected += 1
        head = response[:response.find("Chef A:")] if "Chef A:" in response else ""
        return f"{head}Chef A: {lines['B'].strip()};\nChef B: {lines['A'].strip().rstrip('.')}.\n"


def oracle_client(fault_p: float = 0.0, seed: int = 0, **kwargs) -> PlannerClient:
    transport = OracleTransport()
    if fault_p > 0:
        transport = FaultInjectingTransport(transport, fault_p, seed)
    return PlannerClient(transport, **kwargs)


__all__ = [
    "AssignmentParseError", "BackendError", "BlameParseError", "KitchenSummary", "OraclePlan",
    "OracleTransport", "FaultInjectingTransport", "PlanParseError", "PlanRound", "assign",
    "generate_and_decompose", "kind_feasible", "oracle_client", "parse_assignment", "parse_blame",
    "parse_decomposition", "parse_summary", "plan_round", "render_assign", "render_decompose",
    "scripted_oracle_plan", "summarize",
]
