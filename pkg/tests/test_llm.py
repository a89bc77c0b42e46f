import itertools
import threading

import pytest
import requests

from dpkg.corpus import Sample
from dpkg.llm import (ChatRequest, Endpoint, LLMAuthError, LLMError, LLMResponseError, LLMTimeout, PromptSpec,
                      build_prompt, chat_complete, prompt_hash, qa_verify, run_concurrent)
from dpkg.model import KeywordSet

from .stub_llm import StubLLM, answering, reply, user_text

MSG = [{"role": "user", "content": "hi"}]


def endpoint(stub, **kw):
    return Endpoint(stub.url, api_key="k", backoff=0.0, **kw)


@pytest.fixture
def sample():
    return Sample("s1", [("Ada Lovelace", ["Ada Lovelace was born in London."])], "London",
                  "Where was Ada Lovelace born?", [("Ada Lovelace", 0)],
                  keywords=KeywordSet(["where", "Ada Lovelace"], ["London"]))


# ---------------------------------------------------------------- prompts


def test_prompt_without_guidance(sample):
    text = build_prompt(sample, PromptSpec())[-1]["content"]
    assert "Ada Lovelace was born in London." in text and "Answer: London" in text
    assert "keywords" not in text.lower()
    assert "Output only the question" in text


def test_prompt_with_guidance(sample):
    text = build_prompt(sample, PromptSpec(guidance="dual_keywords"))[-1]["content"]
    assert "Question keywords: where, Ada Lovelace" in text
    assert "Document keywords: London" in text


def test_prompt_one_shot(sample):
    ex = ("Paris is in France.", "France", KeywordSet(["which"], ["Paris"]), "Which country is Paris in?")
    text = build_prompt(sample, PromptSpec(shot="one", guidance="dual_keywords", exemplar=ex))[-1]["content"]
    assert text.index("Which country is Paris in?") < text.index("Ada Lovelace was born")
    with pytest.raises(ValueError):
        PromptSpec(shot="one")


def test_prompt_deterministic(sample):
    spec = PromptSpec(guidance="dual_keywords")
    assert build_prompt(sample, spec) == build_prompt(sample, spec)
    assert prompt_hash(build_prompt(sample, spec)) != prompt_hash(build_prompt(sample, PromptSpec()))


def test_guidance_needs_keywords(sample):
    import dataclasses
    with pytest.raises(ValueError, match="no keywords"):
        build_prompt(dataclasses.replace(sample, keywords=None), PromptSpec(guidance="dual_keywords"))


def test_chat_request_validation():
    with pytest.raises(ValueError):
        ChatRequest([])
    with pytest.raises(ValueError):
        ChatRequest(MSG, timeout=0)


# ---------------------------------------------------------------- transport


def test_echo():
    with StubLLM(lambda b: reply("Q?")) as stub:
        r = chat_complete(ChatRequest(MSG, max_tokens=7), endpoint(stub, model="m1"))
    assert r.text == "Q?" and r.retries == 0 and r.finish_reason == "stop"
    body = stub.requests[0]
    assert body == {"model": "m1", "messages": MSG, "temperature": 0.0, "max_tokens": 7}
    assert stub.headers[0]["Authorization"] == "Bearer k"


def test_retries_then_success():
    codes = iter([500, 500, 200])

    def respond(body):
        c = next(codes)
        return reply("ok") if c == 200 else (c, "boom")
    with StubLLM(respond) as stub:
        r = chat_complete(ChatRequest(MSG), endpoint(stub))
    assert r.text == "ok" and r.retries == 2 and len(stub.requests) == 3


def test_retry_budget_bounded():
    with StubLLM(lambda b: (429, "slow down")) as stub:
        with pytest.raises(LLMError, match="giving up after 3 retries") as e:
            chat_complete(ChatRequest(MSG), endpoint(stub, max_retries=3))
    assert len(stub.requests) == 4 and e.value.body == "slow down"


def test_auth_error_not_retried():
    with StubLLM(lambda b: (401, '{"error": "bad key"}')) as stub:
        with pytest.raises(LLMAuthError) as e:
            chat_complete(ChatRequest(MSG), endpoint(stub))
    assert len(stub.requests) == 1 and "bad key" in e.value.body and e.value.status == 401


@pytest.mark.parametrize("payload", ["not json", {"choices": []}, {"nope": 1}])
def test_malformed_response(payload):
    with StubLLM(lambda b: (200, payload)) as stub:
        with pytest.raises(LLMResponseError, match="malformed response"):
            chat_complete(ChatRequest(MSG), endpoint(stub))


def test_timeout():
    with StubLLM(lambda b: (*reply("late"), 1.0)) as stub:
        with pytest.raises(LLMTimeout):
            chat_complete(ChatRequest(MSG, timeout=0.2), endpoint(stub))


def test_timeout_is_distinct_from_other_errors():
    assert issubclass(LLMTimeout, LLMError) and not issubclass(LLMTimeout, LLMAuthError)


def test_connection_refused():
    with StubLLM(lambda b: reply("x")) as stub:
        url = stub.url
    with pytest.raises(LLMError, match="connection failed"):
        chat_complete(ChatRequest(MSG, timeout=2), Endpoint(url, backoff=0))


def test_no_external_network():
    with pytest.raises(AssertionError, match="external network access"):
        requests.get("http://203.0.113.9/", timeout=1)


# ---------------------------------------------------------------- QA verification


def test_qa_verify(sample):
    table = {sample.question: "London"}
    with StubLLM(answering(table)) as stub:
        ep = endpoint(stub)
        assert qa_verify(sample.question, sample.document_text(), "London", ep) == (1.0, 1.0)
        assert qa_verify("Who was Ada's father?", sample.document_text(), "Lord Byron", ep) == (0.0, 0.0)
    assert "Ada Lovelace was born in London." in user_text(stub.requests[0])


def test_qa_verify_empty_reply(sample, caplog):
    with StubLLM(lambda b: reply("")) as stub:
        assert qa_verify(sample.question, sample.document_text(), "London", endpoint(stub)) == (0.0, 0.0)
    assert "empty answer" in caplog.text


def test_qa_verify_empty_question(sample):
    with pytest.raises(ValueError):
        qa_verify("  ", "doc", "x", Endpoint("http://127.0.0.1:9"))


# ---------------------------------------------------------------- concurrency and config


def test_run_concurrent_bounded_and_ordered():
    live, peak, lock = itertools.count(), [0], threading.Lock()
    active = [0]

    class It:
        def __init__(self, i):
            self.id = f"{i:03d}"

    def fn(it):
        import time
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.01)
        with lock:
            active[0] -= 1
        next(live)
        return it.id

    items = [It(i) for i in (5, 3, 9, 1, 7, 2, 8, 0)]
    assert run_concurrent(items, fn, max_in_flight=3) == sorted(i.id for i in items)
    assert peak[0] <= 3


def test_endpoint_from_env(monkeypatch):
    monkeypatch.setenv("LLM_ENDPOINT", "http://127.0.0.1:1/v1")
    monkeypatch.setenv("LLM_API_KEY", "secret")
    monkeypatch.setenv("LLM_MODEL", "tiny")
    ep = Endpoint.from_env()
    assert (ep.url, ep.api_key, ep.model) == ("http://127.0.0.1:1/v1", "secret", "tiny")
    assert ep.chat_url == "http://127.0.0.1:1/v1/chat/completions"
    assert Endpoint.from_env(model="other").model == "other"
    monkeypatch.delenv("LLM_ENDPOINT")
    with pytest.raises(ValueError, match="LLM_ENDPOINT"):
        Endpoint.from_env()
