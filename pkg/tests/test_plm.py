import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kitchenplan.plm import (
    BATCH_PREAMBLE,
    LiveTransport,
    PlannerClient,
    PromptTemplate,
    ReplayMissError,
    ReplayStore,
    ReplayTransport,
    ScriptedTransport,
    ScriptMissError,
    TemplateError,
    TransportError,
    build_batch_prompt,
    load_template,
    prompt_digest,
)

SHIPPED = ["goal_decompose", "assign", "reflect_blame", "reflect_replan", "reflect_replan_assign",
           "extract_objects", "translate_state", "manual_relevance", "manual_question", "manual_summarize"]


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_templates_parse_and_render(name):
    t = load_template(name)
    out = t.render(**{s: f"<{s}>" for s in t.required_slots})
    for s in t.required_slots:
        assert f"<{s}>" in out


def test_decompose_prompt_keeps_its_instruction_text():
    t = load_template("goal_decompose")
    assert {"manual", "valid_elements", "state_text"} <= t.required_slots
    body = t.render(**{s: "" for s in t.required_slots})
    assert "Valid elements:" in body
    assert body.rstrip().endswith("To formulate goals, think step by step:")


def test_template_errors():
    t = PromptTemplate.parse("t", "a {x} b {y}")
    with pytest.raises(TemplateError):
        t.render(x="1")
    with pytest.raises(TemplateError):
        t.render(x="1", y="2", z="3")
    for bad in ("{x} {x}", "{x:>4}", "{0}"):
        with pytest.raises(TemplateError):
            PromptTemplate.parse("bad", bad)


@given(st.text(min_size=1))
def test_digest_is_stable_hex(prompt):
    d = prompt_digest(prompt)
    assert d == prompt_digest(prompt) and len(d) == 16
    int(d, 16)


def test_replay_store_roundtrip_and_dedup(tmp_path):
    store = ReplayStore()
    assert store.add("p1", "r1") and not store.add("p1", "other")
    store.add("p2", "r2")
    path = tmp_path / "store.jsonl"
    store.save(path)
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert {tuple(sorted(r)) for r in lines} == {("digest", "prompt", "response")}
    back = ReplayStore.load(path)
    assert len(back) == 2 and back.records[prompt_digest("p1")]["response"] == "r1"


def test_replay_miss_names_the_nearest_key():
    store = ReplayStore()
    store.add("the quick brown fox", "a")
    with pytest.raises(ReplayMissError) as err:
        ReplayTransport(store).send("the quick brown fix", 0.0, 10)
    assert err.value.nearest == prompt_digest("the quick brown fox")


def test_recorded_session_replays_without_the_original_backend():
    store = ReplayStore()
    live = PlannerClient(ScriptedTransport([(r"hello", "world"), (r"ping", "pong")]), recorder=store)
    answers = [live.complete("hello there"), live.complete("ping")]
    replay = PlannerClient(ReplayTransport(store))
    assert [replay.complete("hello there"), replay.complete("ping")] == answers
    assert replay.digests() == live.digests()


def test_scripted_miss():
    with pytest.raises(ScriptMissError):
        ScriptedTransport([(r"x", "y")]).send("nothing", 0.0, 1)


def test_batching_splits_answers_per_query():
    transport = ScriptedTransport([(r"^Q(\d)", lambda p, m: f"A{m.group(1)}")])
    client = PlannerClient(transport, batch_size=3)
    assert client.map_batched([f"Q{i}" for i in range(7)]) == [f"A{i}" for i in range(7)]
    # 7 prompts in chunks of 3: two envelopes plus one single call
    assert len(client.transcripts) == 3
    assert client.transcripts[0].prompt.startswith(BATCH_PREAMBLE)


def test_missing_batch_answer_falls_back_to_a_single_call():
    calls = []

    class Partial:
        tag = "partial"

        def send(self, prompt, temperature, max_tokens):
            calls.append(prompt)
            if prompt.startswith(BATCH_PREAMBLE):
                return "### ANSWER 1\nfirst"
            return "second"

    client = PlannerClient(Partial())
    assert client.complete_batch(["a", "b"]) == ["first", "second"]
    assert calls[-1] == "b"
    with pytest.raises(ValueError):
        client.complete_batch([])


def test_batch_prompt_layout():
    text = build_batch_prompt(["x", "y"])
    assert "### QUERY 1\nx\n### QUERY 2\ny" in text


class _Flaky:
    tag = "flaky"

    def __init__(self, failures):
        self.failures = failures

    def send(self, prompt, temperature, max_tokens):
        if self.failures:
            self.failures -= 1
            raise TransportError("boom")
        return "ok"


def test_retries_with_exponential_backoff():
    delays = []
    client = PlannerClient(_Flaky(2), retries=3, backoff=0.25, sleep=delays.append)
    assert client.complete("p") == "ok"
    assert delays == [0.25, 0.5]
    assert client.transcripts[0].attempts == 3


def test_retries_exhausted():
    client = PlannerClient(_Flaky(5), retries=2, sleep=lambda d: None)
    with pytest.raises(TransportError) as err:
        client.complete("p")
    assert err.value.attempts == 2
    assert client.transcripts == []


def test_empty_prompt_rejected():
    with pytest.raises(ValueError):
        PlannerClient(_Flaky(0)).complete("")


class _ChatStub(BaseHTTPRequestHandler):
    seen: list = []
    status = 200

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((dict(self.headers), body))
        payload = {"choices": [{"message": {"role": "assistant", "content": "stub: " + body["messages"][-1]["content"]}}]}
        data = json.dumps(payload).encode() if self.status == 200 else b"nope"
        self.send_response(self.status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def chat_server():
    _ChatStub.seen = []
    _ChatStub.status = 200
    server = HTTPServer(("127.0.0.1", 0), _ChatStub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def test_live_transport_speaks_chat_completions(chat_server):
    t = LiveTransport(chat_server, "test-model", api_key="k")
    client = PlannerClient(t, temperature=0.0, max_tokens=64)
    assert client.complete("hi") == "stub: hi"
    headers, body = _ChatStub.seen[0]
    assert body["model"] == "test-model" and body["max_tokens"] == 64 and body["temperature"] == 0.0
    assert [m["role"] for m in body["messages"]] == ["system", "user"]
    assert headers["Authorization"] == "Bearer k"


def test_live_transport_http_error_is_retried(chat_server):
    _ChatStub.status = 500
    client = PlannerClient(LiveTransport(chat_server, "m", api_key=""), retries=2, sleep=lambda d: None)
    with pytest.raises(TransportError):
        client.complete("hi")
    assert len(_ChatStub.seen) == 2


def test_live_transport_connection_refused():
    with pytest.raises(TransportError):
        LiveTransport("http://127.0.0.1:9/none", "m", api_key="", timeout=2).send("x", 0.0, 1)
