"""Self-reflection: decide when a round failed, ask which planning stage is to
blame, replan that stage under failure constraints, and restore the world to
the state before the failed round by replaying the logged rounds."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

from kitchenplan.env import GridState, Layout, reset, state_hash
from kitchenplan.planner import (
    AssignmentParseError,
    PlanParseError,
    PlanRound,
    assign,
    format_assignment,
    generate_and_decompose,
    normalize_pair,
    parse_blame,
)
from kitchenplan.plm import PlannerClient, load_template
from kitchenplan.subgoals import CanonicalSubgoal, SubgoalKind
from kitchenplan.text_bridge import CHEF_NAMES, TaskManual, translate_state


MAX_TRIALS = 3
HISTORY_CAP = 3


class Phase(Enum):
    GOAL = "GoalGenDecomp"
    ASSIGN = "SubgoalAssignment"


class TrialLimitError(RuntimeError):
    """The round already used every reflection trial."""


class ConstraintViolation(RuntimeError):
    """A replanned decision repeats a retained failure."""

    def __init__(self, phase: Phase, kinds):
        super().__init__(f"replanned {phase.value} output repeats a failed entry: {kinds}")
        self.phase = phase
        self.kinds = kinds


class RecoveryError(RuntimeError):
    def __init__(self, expected: int, got: int, diff: list[str]):
        super().__init__(f"recovered state hash {got:#x} != checkpoint {expected:#x}")
        self.expected = expected
        self.got = got
        self.diff = diff


@dataclass
class ReflectionTrace:
    max_trials: int = MAX_TRIALS
    failed_goals: deque = field(default_factory=lambda: deque(maxlen=HISTORY_CAP))
    failed_subgoals: deque = field(default_factory=lambda: deque(maxlen=HISTORY_CAP))
    failed_assignments: deque = field(default_factory=lambda: deque(maxlen=HISTORY_CAP))
    failed_kinds: deque = field(default_factory=lambda: deque(maxlen=HISTORY_CAP))
    failed_assigned_kinds: deque = field(default_factory=lambda: deque(maxlen=HISTORY_CAP))
    trials: int = 0
    phases: list[Phase] = field(default_factory=list)

    def __post_init__(self):
        if not 0 <= self.max_trials <= MAX_TRIALS:
            raise ValueError(f"max_trials must be in [0, {MAX_TRIALS}]")

    @property
    def exhausted(self) -> bool:
        return self.trials >= self.max_trials

    def note_failure(self, phase: Phase, rnd: PlanRound | None, raw: Sequence[str] = ()) -> None:
        if phase is Phase.GOAL:
            if rnd is not None:
                self.failed_goals.append(rnd.goal)
                self.failed_subgoals.append(tuple(t for t, _ in rnd.subgoals))
                self.failed_kinds.append(_multiset(rnd.kinds()))
            elif len(raw) == 2:
                self.failed_subgoals.append(tuple(raw))
        else:
            if rnd is not None:
                self.failed_assignments.append(rnd.assigned_raw())
                self.failed_assigned_kinds.append(tuple(c.kind for c in rnd.assigned()))

    def describe(self) -> str:
        if not self.phases:
            return "None"
        return "; ".join(f"trial {i + 1} blamed {p.value}" for i, p in enumerate(self.phases))


def _multiset(kinds) -> tuple[str, ...]:
    return tuple(sorted(k.value for k in kinds))


@dataclass(frozen=True)
class RoundOutcome:
    returns: tuple[int, ...]
    ticks: int
    terminal_hash: int


def heuristic_h(outcome: RoundOutcome) -> str:
    """``continue`` when every predicate returned 1, else ``reflect``."""
    if outcome.returns and all(r == 1 for r in outcome.returns):
        return "continue"
    return "reflect"


def describe_outcome(outcome: RoundOutcome, budget: int) -> str:
    parts = []
    for i, r in enumerate(outcome.returns):
        verdict = "completed its sub-goal" if r else f"did not complete its sub-goal within {budget} steps"
        parts.append(f"{CHEF_NAMES[i]} {verdict}")
    return "; ".join(parts) if parts else "no sub-goal could be evaluated"


def render_blame(manual: TaskManual, rnd: PlanRound, start: GridState, outcome: RoundOutcome,
                 trace: ReflectionTrace, budget: int) -> str:
    st = translate_state(start)
    return load_template("reflect_blame").render(
        manual=manual.text,
        state_text=rnd.state_text,
        goal=rnd.goal or "none",
        subgoals="; ".join(t for t, _ in rnd.subgoals),
        game_text=st.game_text,
        chef_text=st.chef_text.rstrip("."),
        assignment=format_assignment(rnd.assigned_raw()),
        outcome=describe_outcome(outcome, budget),
        history=trace.describe(),
    )


def blame_phase(manual: TaskManual, rnd: PlanRound, start: GridState, outcome: RoundOutcome,
                trace: ReflectionTrace, client: PlannerClient, budget: int = 25) -> Phase:
    text = client.complete(render_blame(manual, rnd, start, outcome, trace, budget))
    return Phase(parse_blame(text))


def blame_structural(error: Exception) -> Phase:
    """Parse failures and constraint violations name their own stage; no
    backend call is needed."""
    if isinstance(error, ConstraintViolation):
        return error.phase
    if isinstance(error, AssignmentParseError):
        return Phase.ASSIGN
    if isinstance(error, PlanParseError):
        return Phase.GOAL
    raise TypeError(f"not a structural planning failure: {error!r}")


def replan(phase: Phase, rnd: PlanRound | None, start: GridState, trace: ReflectionTrace,
           client: PlannerClient, manual: TaskManual, raw_subgoals: Sequence[str] = ()) -> PlanRound:
    """One reflection trial: record the failed entry, re-run the blamed stage
    with the failure constraints, and reject repeats of retained failures."""
    if trace.exhausted:
        raise TrialLimitError(f"round already used {trace.trials} of {trace.max_trials} trials")
    trace.trials += 1
    trace.phases.append(phase)
    trace.note_failure(phase, rnd, raw_subgoals)
    st = translate_state(start)
    index = rnd.round_index if rnd is not None else 0
    n0 = len(client.transcripts)
    if phase is Phase.GOAL or rnd is None:
        goal, raws = generate_and_decompose(manual, st.text, trace, client)
        subs = normalize_pair(client.transcripts[-1].response, raws)
        kinds = _multiset(c.kind for _, c in subs)
        if kinds in trace.failed_kinds:
            raise ConstraintViolation(Phase.GOAL, kinds)
        assignment = assign(manual, raws, st.game_text, st.agent_sentences, None, client)
        return PlanRound(index, st.text, goal, subs, assignment, list(client.transcripts[n0:]))
    raws = [t for t, _ in rnd.subgoals]
    assignment = assign(manual, raws, st.game_text, st.agent_sentences, trace, client)
    new = PlanRound(index, rnd.state_text, rnd.goal, rnd.subgoals, assignment, list(client.transcripts[n0:]))
    kinds = tuple(c.kind for c in new.assigned())
    if kinds in trace.failed_assigned_kinds:
        raise ConstraintViolation(Phase.ASSIGN, kinds)
    return new


# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LoggedRound:
    """What is needed to replay a committed round deterministically."""

    texts: tuple[str, str]
    kinds: tuple[SubgoalKind, SubgoalKind]
    ticks: int
    end_hash: int

    @classmethod
    def of(cls, subs: Sequence[CanonicalSubgoal], ticks: int, end_hash: int) -> "LoggedRound":
        return cls((subs[0].sentence, subs[1].sentence), (subs[0].kind, subs[1].kind), ticks, end_hash)


Executor = Callable[[GridState, Sequence[str], Sequence[SubgoalKind], int], tuple[GridState, list[int], int]]


def reset_recover(layout: Layout, seed: int, horizon: int, logged: Sequence[LoggedRound],
                  execute: Executor, expected_hash: int) -> tuple[GridState, int]:
    """Reset, replay every logged round with the deterministic policy and check
    the result against ``expected_hash``; returns ``(state, replay ticks)``."""
    state = reset(layout, seed, horizon)
    ticks = 0
    diff: list[str] = []
    for i, lr in enumerate(logged):
        state, _, used = execute(state, lr.texts, lr.kinds, lr.ticks)
        ticks += used
        h = state_hash(state)
        if h != lr.end_hash:
            diff.append(f"round {i}: replayed hash {h:#x} != logged {lr.end_hash:#x} after {used} ticks")
    got = state_hash(state)
    if got != expected_hash:
        raise RecoveryError(expected_hash, got, diff)
    return state, ticks
