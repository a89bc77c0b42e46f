"""Keyword-guided prompting of a chat-completions endpoint, plus QA verification."""

from __future__ import annotations

import hashlib
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import requests

from .metrics import qa_em_f1
from .model import KeywordSet

log = logging.getLogger(__name__)

SYSTEM_PROMPT = "You are an expert question writer for multi-hop reading comprehension."

# Slot-compatible reconstruction of a keyword-guided question-generation prompt.
INSTRUCTION = (
    "Given a document and an answer, write one question that can only be answered by "
    "combining several pieces of information from the document, and whose answer is the given answer."
)
GUIDANCE = (
    " Use the question keywords in the question itself, and use the document keywords to "
    "locate the facts the question should connect."
)
OUTPUT_RULE = " Output only the question."


class LLMError(RuntimeError):
    def __init__(self, message: str, body: str = "", status: int | None = None):
        super().__init__(message)
        self.body = body
        self.status = status


class LLMTimeout(LLMError):
    pass


class LLMAuthError(LLMError):
    pass


class LLMResponseError(LLMError):
    pass


@dataclass
class PromptSpec:
    shot: str = "zero"
    guidance: str = "none"
    exemplar: tuple | None = None  # (document, answer, KeywordSet, question)

    def __post_init__(self):
        if self.shot not in ("zero", "one"):
            raise ValueError(f"unknown shot setting {self.shot!r}")
        if self.guidance not in ("none", "dual_keywords"):
            raise ValueError(f"unknown guidance {self.guidance!r}")
        if self.shot == "one" and self.exemplar is None:
            raise ValueError("one-shot prompting needs an exemplar")


def _block(document: str, answer: str, keywords: KeywordSet | None, guided: bool, question: str | None) -> str:
    lines = [f"Document: {document}", f"Answer: {answer}"]
    if guided:
        lines.append(f"Question keywords: {', '.join(keywords.question)}")
        lines.append(f"Document keywords: {', '.join(keywords.document)}")
    lines.append(f"Question: {question}" if question is not None else "Question:")
    return "\n".join(lines)


def build_prompt(sample, spec: PromptSpec) -> list[dict]:
    guided = spec.guidance == "dual_keywords"
    if guided and sample.keywords is None:
        raise ValueError(f"sample {sample.id}: keyword guidance requested but sample has no keywords")
    parts = [INSTRUCTION + (GUIDANCE if guided else "") + OUTPUT_RULE]
    if spec.shot == "one":
        doc, ans, kws, q = spec.exemplar
        if guided and kws is None:
            raise ValueError("exemplar needs keywords under keyword guidance")
        parts.append("Example:\n" + _block(doc, ans, kws, guided, q))
    parts.append(_block(sample.document_text(), sample.answer, sample.keywords, guided, None))
    return [{"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": "\n\n".join(parts)}]


def prompt_hash(messages: list[dict]) -> str:
    text = "\n".join(f"{m['role']}:{m['content']}" for m in messages)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass
class ChatRequest:
    messages: list[dict]
    model: str = "default"
    temperature: float = 0.0
    max_tokens: int = 128
    timeout: float = 30.0

    def __post_init__(self):
        if not self.messages:
            raise ValueError("empty message list")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass
class ChatResponse:
    text: str
    finish_reason: str | None = None
    usage: dict = field(default_factory=dict)
    retries: int = 0


@dataclass
class Endpoint:
    url: str
    api_key: str | None = None
    model: str = "default"
    max_retries: int = 3
    backoff: float = 0.5

    @classmethod
    def from_env(cls, **overrides) -> "Endpoint":
        url = os.environ.get("LLM_ENDPOINT")
        if not url and "url" not in overrides:
            raise ValueError("LLM_ENDPOINT is not set")
        kw = dict(url=url, api_key=os.environ.get("LLM_API_KEY"), model=os.environ.get("LLM_MODEL", "default"))
        kw.update(overrides)
        return cls(**kw)

    @property
    def chat_url(self) -> str:
        u = self.url.rstrip("/")
        return u if u.endswith("/chat/completions") else u + "/chat/completions"


def chat_complete(req: ChatRequest, endpoint: Endpoint, session: requests.Session | None = None) -> ChatResponse:
    """One chat completion; retries 429/5xx with exponential backoff."""
    http = session or requests
    headers = {"Content-Type": "application/json"}
    if endpoint.api_key:
        headers["Authorization"] = f"Bearer {endpoint.api_key}"
    body = {"model": req.model if req.model != "default" else endpoint.model, "messages": req.messages,
            "temperature": req.temperature, "max_tokens": req.max_tokens}
    retries = 0
    while True:
        try:
            r = http.post(endpoint.chat_url, json=body, headers=headers, timeout=req.timeout)
        except requests.Timeout as e:
            raise LLMTimeout(f"request timed out after {req.timeout}s") from e
        except requests.ConnectionError as e:
            raise LLMError(f"connection failed: {e}") from e
        if r.status_code in (401, 403):
            raise LLMAuthError(f"authentication failed ({r.status_code})", r.text, r.status_code)
        if r.status_code == 429 or r.status_code >= 500:
            if retries >= endpoint.max_retries:
                raise LLMError(f"giving up after {retries} retries ({r.status_code})", r.text, r.status_code)
            time.sleep(endpoint.backoff * (2 ** retries))
            retries += 1
            continue
        if r.status_code != 200:
            raise LLMError(f"unexpected status {r.status_code}", r.text, r.status_code)
        try:
            data = r.json()
            choice = data["choices"][0]
            text = choice["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise LLMResponseError(f"malformed response: {e}", r.text, r.status_code) from e
        if text is None:
            text = ""
        return ChatResponse(text.strip(), choice.get("finish_reason"), data.get("usage") or {}, retries)


QA_INSTRUCTION = "Answer the question using the document. Reply with the shortest possible answer span only."


def qa_messages(question: str, document: str) -> list[dict]:
    return [{"role": "system", "content": QA_INSTRUCTION},
            {"role": "user", "content": f"Document: {document}\n\nQuestion: {question}\nAnswer:"}]


def qa_verify(question: str, document: str, gold_answer: str, endpoint: Endpoint,
              session: requests.Session | None = None, timeout: float = 30.0) -> tuple[float, float]:
    """Ask the endpoint to answer ``question`` and score the reply against ``gold_answer``."""
    if not question.strip():
        raise ValueError("empty question")
    reply = chat_complete(ChatRequest(qa_messages(question, document), timeout=timeout), endpoint, session)
    if not reply.text:
        log.warning("empty answer for question %r", question)
        return 0.0, 0.0
    return qa_em_f1(reply.text, gold_answer)


def run_concurrent(items: Sequence, fn: Callable, max_in_flight: int = 4, key: Callable = lambda x: x.id) -> list:
    """Apply ``fn`` with bounded concurrency; results come back sorted by ``key(item)``."""
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        results = list(pool.map(lambda it: (key(it), fn(it)), items))
    return [r for _, r in sorted(results, key=lambda kv: kv[0])]
