"""World state to text, and the document-to-manual and object-extraction
pipelines that feed the planner prompts."""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

from kitchenplan.env import GridState, Item
from kitchenplan.plm import BackendError, PlannerClient, load_template


CHEF_NAMES = ("Chef A", "Chef B")

# The objects the scripted extraction answers with; also the prompt's
# "Valid elements" line when no backend is involved.
FIXTURE_OBJECTS = (
    "onion", "onion storage room", "shared bar", "dining cabinet",
    "plate", "crafting table", "onion soup", "counter",
)

_NUMBER_WORDS = ("no", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")
_ORDINALS = ("first", "second", "third", "fourth")
_ITEM_NOUN = {Item.ONION: "onion", Item.PLATE: "plate", Item.SOUP: "onion soup"}
_HELD_PHRASE = {
    Item.NONE: "is idle",
    Item.ONION: "is holding an onion",
    Item.PLATE: "is holding a plate",
    Item.SOUP: "is holding an onion soup",
}


class ManualError(RuntimeError):
    """Manual generation produced nothing usable."""


class ManualGenerationError(BackendError):
    def __init__(self, paragraph: int, cause: Exception):
        super().__init__(f"backend failure on paragraph {paragraph}: {cause}")
        self.paragraph = paragraph
        self.cause = cause


class ObjectParseError(ValueError):
    def __init__(self, raw: str):
        super().__init__(f"cannot parse an object list from {raw!r}")
        self.raw = raw


@dataclass(frozen=True)
class TaskManual:
    text: str
    objects: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("task manual text is empty")
        objs = tuple(self.objects)
        if len(set(objs)) != len(objs) or any(not o or o != o.lower() for o in objs):
            raise ValueError(f"objects must be distinct, lowercase and non-empty: {objs}")

    def sentences(self) -> list[str]:
        """One description per non-empty manual line (the grounding inputs)."""
        out = []
        for line in self.text.splitlines():
            line = re.sub(r"^\s*\d+\.\s*", "", line).strip()
            if line:
                out.append(line)
        return out


@dataclass(frozen=True)
class DocumentCorpus:
    paragraphs: tuple[str, ...]

    def __post_init__(self):
        if any(not p.strip() for p in self.paragraphs):
            raise ValueError("corpus contains an empty paragraph")

    @classmethod
    def from_text(cls, text: str) -> "DocumentCorpus":
        blocks = [b.strip() for b in re.split(r"\n\s*\n", text)]
        return cls(tuple(b for b in blocks if b))


def asset_path(name: str) -> Path:
    return Path(str(resources.files("kitchenplan") / "assets" / name))


def read_asset(name: str) -> str:
    return asset_path(name).read_text(encoding="utf-8")


def read_questions(name: str) -> list[str]:
    return [q.strip() for q in read_asset(name).splitlines() if q.strip()]


@lru_cache(maxsize=1)
def fixture_manual() -> TaskManual:
    return TaskManual(read_asset("manual_overcooked.txt").strip(), FIXTURE_OBJECTS)


# --------------------------------------------------------------------------
# state translation

@dataclass(frozen=True)
class StateText:
    global_sentences: tuple[str, ...]
    agent_sentences: tuple[str, ...]

    @property
    def game_text(self) -> str:
        return " ".join(self.global_sentences)

    @property
    def chef_text(self) -> str:
        return "; ".join(self.agent_sentences) + "."

    @property
    def text(self) -> str:
        return f"{self.game_text} {self.chef_text}"


def _count(n: int, noun: str) -> str:
    word = _NUMBER_WORDS[n] if n < len(_NUMBER_WORDS) else str(n)
    return f"{word} {noun}" + ("s" if n != 1 else "")


def _pot_phrase(contents: int, timer: int, finished: bool) -> str:
    if finished:
        return "has a finished onion soup"
    if timer > 0:
        return "is making onion soup"
    if contents == 0:
        return "is empty"
    return f"has {_count(contents, 'onion')}"


def _bar_sentence(items: Sequence[Item]) -> str:
    counts = [(it, sum(1 for b in items if b == it)) for it in (Item.ONION, Item.PLATE, Item.SOUP)]
    parts = [_count(n, _ITEM_NOUN[it]) for it, n in counts if n]
    if not parts:
        return "the shared bar is empty."
    verb = "is" if parts[0].startswith("one ") else "are"
    listed = parts[0] if len(parts) == 1 else ", ".join(parts[:-1]) + " and " + parts[-1]
    return f"there {verb} {listed} on the shared bar."


def _room(state: GridState, agent: int) -> str:
    x = state.positions[agent][0]
    return "left room" if x < state.layout.width / 2 else "right room"


def translate_state(state: GridState) -> StateText:
    """Template translation; equal states always give equal text."""
    pots = state.pots
    bar = state.bar_items
    sentences: list[str] = []
    if all(p.contents == 0 for p in pots) and all(b == Item.NONE for b in bar):
        sentences.append("there are no onions on the crafting table and shared bar.")
    else:
        for i, pot in enumerate(pots):
            name = "the crafting table" if len(pots) == 1 else f"the {_ORDINALS[i]} crafting table"
            sentences.append(f"{name} {_pot_phrase(pot.contents, pot.timer, pot.finished)}.")
        sentences.append(_bar_sentence(bar))
    if state.deliveries:
        verb = "has" if state.deliveries == 1 else "have"
        sentences.append(f"{_count(state.deliveries, 'onion soup')} {verb} been delivered to the counter.")
    chefs = tuple(
        f"{CHEF_NAMES[i]} {_HELD_PHRASE[state.held[i]]} in the {_room(state, i)}"
        for i in range(len(state.positions))
    )
    return StateText(tuple(sentences), chefs)


def structured_state(state: GridState) -> str:
    """Key-value dump fed to the PLM translation path."""
    lines = [f"timestep: {state.timestep}"]
    for i, (cell, held) in enumerate(zip(state.positions, state.held)):
        lines.append(f"chef {'AB'[i]}: position={cell} holding={held.name.lower()}")
    for i, pot in enumerate(state.pots):
        lines.append(f"crafting table {i}: onions={pot.contents} timer={pot.timer} finished={pot.finished}")
    lines.append("shared bar: " + ", ".join(b.name.lower() for b in state.bar_items))
    lines.append(f"delivered: {state.deliveries}")
    return "\n".join(lines)


def translate_state_plm(state: GridState, manual: TaskManual, client: PlannerClient) -> StateText:
    """Ask the backend for a one-sentence description; chef sentences stay templated."""
    prompt = load_template("translate_state").render(manual=manual.text, structured=structured_state(state))
    answer = client.complete(prompt).strip()
    base = translate_state(state)
    return StateText((answer,), base.agent_sentences)


# --------------------------------------------------------------------------
# manual generation and object extraction

def _is_yes(answer: str) -> bool:
    return answer.strip().lower().lstrip("\"'*").startswith("yes")


def generate_manual(corpus: DocumentCorpus, q_rel: Sequence[str], q_game: Sequence[str],
                    client: PlannerClient) -> TaskManual:
    """Filter paragraphs by the relevance questions, answer the game questions
    on the survivors, then summarize everything into one manual."""
    if not corpus.paragraphs or not q_rel or not q_game:
        raise ValueError("corpus and both question lists must be non-empty")
    rel_t = load_template("manual_relevance")
    game_t = load_template("manual_question")
    notes: list[str] = []
    for idx, para in enumerate(corpus.paragraphs):
        try:
            verdicts = client.map_batched([rel_t.render(paragraph=para, question=q) for q in q_rel])
            if not any(_is_yes(v) for v in verdicts):
                continue
            answers = client.map_batched([game_t.render(paragraph=para, question=q) for q in q_game])
        except BackendError as exc:
            raise ManualGenerationError(idx, exc) from exc
        notes.extend(a.strip() for a in answers if a.strip())
    if not notes:
        raise ManualError("no paragraph was judged relevant; the manual would be empty")
    summary = client.complete(load_template("manual_summarize").render(notes="\n\n".join(notes)))
    return TaskManual(summary.strip())


def parse_objects(raw: str) -> tuple[str, ...]:
    text = raw.strip()
    if "," not in text:
        raise ObjectParseError(raw)
    out: list[str] = []
    for part in text.split(","):
        name = part.strip().strip(".;:\"'").strip().lower()
        name = re.sub(r"^(and|or)\s+", "", name)
        if name and name not in out:
            out.append(name)
    if not out:
        raise ObjectParseError(raw)
    return tuple(out)


def extract_objects(manual_text: str, client: PlannerClient) -> tuple[str, ...]:
    if not manual_text.strip():
        raise ValueError("manual text is empty")
    return parse_objects(client.complete(load_template("extract_objects").render(manual=manual_text)))


def manual_fixture_transport():
    """Scripted stand-in for the manual pipeline over the shipped corpus:
    paragraphs mentioning the game are relevant, answers echo the paragraph
    and the summary is the shipped manual."""
    from kitchenplan.plm import ScriptedTransport

    game_words = re.compile(r"\b(onions?|soup|chefs?|pots?|plates?|counter)\b", re.IGNORECASE)

    def relevance(prompt, m):
        return "Yes, it describes the game." if game_words.search(m.group(1)) else "No, it is unrelated."

    def answer(prompt, m):
        return m.group(1).strip()

    summary = read_asset("manual_overcooked.txt").strip()
    return ScriptedTransport([
        (r"Paragraph:\n(.*?)\n\nQuestion: .*Answer \"yes\" or \"no\" first", relevance),
        (r"^Read the following paragraph.*?Paragraph:\n(.*?)\n\n(?!Question: )", answer),
        (r"^Below are notes extracted", summary),
        (r"^.*Extract all pertinent, interactive objects", ", ".join(FIXTURE_OBJECTS)),
    ])
