"""Chat-completion planner backends: live HTTP, digest-keyed replay and
scripted rule tables, with transcript logging, retries and batch prompting."""
from __future__ import annotations

import difflib
import hashlib
import json
import logging
import os
import re
import string
import threading
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence, Union

log = logging.getLogger(__name__)

DEFAULT_SYSTEM = "You are a helpful planning assistant for a cooperative cooking game."
API_KEY_ENV = "KITCHENPLAN_API_KEY"


def prompt_digest(prompt: str) -> str:
    """64-bit digest of a rendered prompt, as 16 hex chars."""
    return hashlib.blake2b(prompt.encode("utf-8"), digest_size=8).hexdigest()


# --------------------------------------------------------------------------
# templates
# --------------------------------------------------------------------------

class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    segments: tuple[tuple[str, str | None], ...]

    @classmethod
    def parse(cls, name: str, text: str) -> "PromptTemplate":
        segments = []
        seen: list[str] = []
        for literal, slot, spec, conv in string.Formatter().parse(text):
            if spec or conv:
                raise TemplateError(f"{name}: format specs are not supported in slot {slot!r}")
            if slot is not None:
                if not slot.isidentifier():
                    raise TemplateError(f"{name}: bad slot name {slot!r}")
                if slot in seen:
                    raise TemplateError(f"{name}: slot {slot!r} appears more than once")
                seen.append(slot)
            segments.append((literal, slot))
        return cls(name, tuple(segments))

    @property
    def required_slots(self) -> frozenset[str]:
        return frozenset(s for _, s in self.segments if s is not None)

    def render(self, **slots: str) -> str:
        missing = self.required_slots - slots.keys()
        if missing:
            raise TemplateError(f"{self.name}: unbound slots {sorted(missing)}")
        extra = slots.keys() - self.required_slots
        if extra:
            raise TemplateError(f"{self.name}: unknown slots {sorted(extra)}")
        out = []
        for literal, slot in self.segments:
            out.append(literal)
            if slot is not None:
                out.append(str(slots[slot]))
        return "".join(out)


_TEMPLATE_CACHE: dict[str, PromptTemplate] = {}


def load_template(name: str) -> PromptTemplate:
    if name not in _TEMPLATE_CACHE:
        ref = resources.files("kitchenplan") / "prompts" / f"{name}.txt"
        _TEMPLATE_CACHE[name] = PromptTemplate.parse(name, ref.read_text(encoding="utf-8"))
    return _TEMPLATE_CACHE[name]


# --------------------------------------------------------------------------
# transcripts and the replay store
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Transcript:
    prompt_digest: str
    prompt: str
    response: str
    backend: str
    latency_ms: float = 0.0
    attempts: int = 1

    def store_record(self) -> dict:
        return {"digest": self.prompt_digest, "prompt": self.prompt, "response": self.response}


class ReplayStore:
    """Append-only JSONL store of ``{digest, prompt, response}`` records."""

    def __init__(self, records: dict[str, dict] | None = None):
        self.records: dict[str, dict] = dict(records or {})

    @classmethod
    def load(cls, path: str | Path) -> "ReplayStore":
        records = {}
        p = Path(path)
        if p.exists():
            with open(p, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        records[rec["digest"]] = rec
        return cls(records)

    def add(self, prompt: str, response: str) -> bool:
        d = prompt_digest(prompt)
        if d in self.records:
            return False
        self.records[d] = {"digest": d, "prompt": prompt, "response": response}
        return True

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for d in sorted(self.records):
                fh.write(json.dumps(self.records[d], sort_keys=True) + "\n")

    def __contains__(self, digest: str) -> bool:
        return digest in self.records

    def __len__(self) -> int:
        return len(self.records)


# --------------------------------------------------------------------------
# transports
# --------------------------------------------------------------------------

class BackendError(RuntimeError):
    pass


class TransportError(BackendError):
    """Network or HTTP failure; the client retries these."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ReplayMissError(BackendError):
    def __init__(self, digest: str, nearest: str | None):
        self.digest = digest
        self.nearest = nearest
        hint = f"; nearest stored key {nearest}" if nearest else ""
        super().__init__(f"no replay record for prompt digest {digest}{hint}")


class ScriptMissError(BackendError):
    def __init__(self, prompt: str):
        self.prompt = prompt
        super().__init__(f"no scripted rule matches prompt starting {prompt[:80]!r}")


class Transport(Protocol):
    tag: str

    def send(self, prompt: str, temperature: float, max_tokens: int) -> str: ...


class LiveTransport:
    """Chat-completion JSON over HTTP (``messages`` with system/user roles)."""

    tag = "live"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        system: str = DEFAULT_SYSTEM,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.system = system
        self.timeout = timeout

    def send(self, prompt: str, temperature: float, max_tokens: int) -> str:
        import httpx

        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": prompt},
            ],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise TransportError(f"request to {self.endpoint} failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code} from {self.endpoint}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed chat-completion response: {exc}") from exc


class ReplayTransport:
    tag = "replay"

    def __init__(self, store: ReplayStore | str | Path):
        self.store = store if isinstance(store, ReplayStore) else ReplayStore.load(store)

    def send(self, prompt: str, temperature: float, max_tokens: int) -> str:
        d = prompt_digest(prompt)
        rec = self.store.records.get(d)
        if rec is None:
            raise ReplayMissError(d, self._nearest(prompt))
        return rec["response"]

    def _nearest(self, prompt: str) -> str | None:
        best, best_ratio = None, 0.0
        for d, rec in self.store.records.items():
            ratio = difflib.SequenceMatcher(None, prompt[:2000], rec["prompt"][:2000]).quick_ratio()
            if ratio > best_ratio:
                best, best_ratio = d, ratio
        return best


Responder = Union[str, Callable[[str, "re.Match[str]"], str]]

BATCH_PREAMBLE = (
    "Answer each of the following queries independently. "
    "Start every answer with its header line '### ANSWER i' where i is the query number."
)
_QUERY_HEADER = re.compile(r"^### QUERY (\d+)[ \t]*$", re.MULTILINE)
_ANSWER_HEADER = re.compile(r"^### ANSWER (\d+)[ \t]*$", re.MULTILINE)


def build_batch_prompt(prompts: Sequence[str]) -> str:
    parts = [BATCH_PREAMBLE, ""]
    for i, p in enumerate(prompts, 1):
        parts.append(f"### QUERY {i}")
        parts.append(p)
    return "\n".join(parts)


def split_sections(text: str, header: re.Pattern) -> dict[int, str]:
    marks = list(header.finditer(text))
    out: dict[int, str] = {}
    for m, nxt in zip(marks, marks[1:] + [None]):
        end = nxt.start() if nxt is not None else len(text)
        out[int(m.group(1))] = text[m.end():end].strip("\n")
    return out


class ScriptedTransport:
    """Rule table of ``(regex, responder)`` pairs; first match wins.

    Batch envelopes are unpacked and each query is answered by the same table,
    so batching is transparent to the rules.
    """

    tag = "scripted"

    def __init__(self, rules: Iterable[tuple[str, Responder]] = ()):
        self.rules: list[tuple[re.Pattern, Responder]] = [
            (re.compile(p, re.DOTALL), r) for p, r in rules
        ]

    def add_rule(self, pattern: str, responder: Responder) -> None:
        self.rules.append((re.compile(pattern, re.DOTALL), responder))

    def respond(self, prompt: str) -> str:
        for pattern, responder in self.rules:
            m = pattern.search(prompt)
            if m:
                return responder if isinstance(responder, str) else responder(prompt, m)
        raise ScriptMissError(prompt)

    def send(self, prompt: str, temperature: float, max_tokens: int) -> str:
        if prompt.startswith(BATCH_PREAMBLE):
            queries = split_sections(prompt[len(BATCH_PREAMBLE):], _QUERY_HEADER)
            return "\n".join(f"### ANSWER {i}\n{self.respond(q)}" for i, q in sorted(queries.items()))
        return self.respond(prompt)


# --------------------------------------------------------------------------
# client
# --------------------------------------------------------------------------

class BatchSplitError(BackendError):
    def __init__(self, unmatched: list[int]):
        self.unmatched = unmatched
        super().__init__(f"batch response missing answers for indices {unmatched}")


@dataclass
class PlannerClient:
    """Backend handle shared by every planning stage.

    ``transcripts`` is an append-only log of every exchange; ``recorder``
    (optional) receives each exchange so live runs can be turned into replay
    fixtures.
    """

    transport: Transport
    temperature: float = 0.0
    max_tokens: int = 1024
    retries: int = 3
    backoff: float = 0.5
    batch_size: int = 4
    recorder: ReplayStore | None = None
    sleep: Callable[[float], None] = time.sleep
    transcripts: list[Transcript] = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()

    @property
    def tag(self) -> str:
        return self.transport.tag

    def complete(self, prompt: str, temperature: float | None = None, max_tokens: int | None = None) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        temp = self.temperature if temperature is None else temperature
        limit = self.max_tokens if max_tokens is None else max_tokens
        attempts = 0
        t0 = time.perf_counter()
        while True:
            attempts += 1
            try:
                response = self.transport.send(prompt, temp, limit)
                break
            except TransportError as exc:
                exc.attempts = attempts
                if attempts >= self.retries:
                    raise
                delay = self.backoff * (2 ** (attempts - 1))
                log.warning("transport error (attempt %d/%d): %s; retrying in %.2fs",
                            attempts, self.retries, exc, delay)
                self.sleep(delay)
        latency = (time.perf_counter() - t0) * 1000.0
        record = Transcript(prompt_digest(prompt), prompt, response, self.tag, latency, attempts)
        with self._lock:
            self.transcripts.append(record)
            if self.recorder is not None:
                self.recorder.add(prompt, response)
        return response

    def complete_batch(self, prompts: Sequence[str], temperature: float | None = None,
                       max_tokens: int | None = None) -> list[str]:
        if not 1 <= len(prompts) <= self.batch_size:
            raise ValueError(f"batch size must be in [1, {self.batch_size}], got {len(prompts)}")
        if len(prompts) == 1:
            return [self.complete(prompts[0], temperature, max_tokens)]
        raw = self.complete(build_batch_prompt(prompts), temperature, max_tokens)
        answers = split_sections(raw, _ANSWER_HEADER)
        out: list[str] = []
        for i, p in enumerate(prompts, 1):
            if i in answers and answers[i].strip():
                out.append(answers[i])
            else:
                log.info("batch answer %d missing; falling back to a single call", i)
                out.append(self.complete(p, temperature, max_tokens))
        unmatched = [i for i, a in enumerate(out, 1) if not a.strip()]
        if unmatched:
            raise BatchSplitError(unmatched)
        return out

    def map_batched(self, prompts: Sequence[str]) -> list[str]:
        """complete_batch over any number of prompts in chunks of ``batch_size``."""
        out: list[str] = []
        for i in range(0, len(prompts), self.batch_size):
            out.extend(self.complete_batch(prompts[i:i + self.batch_size]))
        return out

    def digests(self) -> list[str]:
        with self._lock:
            return [t.prompt_digest for t in self.transcripts]

    def dump_transcripts(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.transcripts:
                fh.write(json.dumps(t.store_record(), sort_keys=True) + "\n")


def transcript_dict(t: Transcript) -> dict:
    return asdict(t)
