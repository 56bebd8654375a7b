"""Model clients: deterministic mocks, a remote chat-completions adapter and a response cache."""
from __future__ import annotations

import hashlib
import json
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Protocol

import httpx

from ..errors import CacheCorruption, ConfigError, TransportError
from ..render import EXPR_SLOT, LETTERS, RenderedQuestion

DEFAULT_PARAMS = {"temperature": 0.0, "max_tokens": 1024, "n": 1}
UNKNOWN_REPLY = "I am not able to answer this."
FORMAT_MARKER = "Reply strictly in the following format:"
CRITIQUE_MARKER = "Proposed rule:"


class ModelClient(Protocol):
    model_id: str

    def complete(self, prompt: str, params: dict | None = None) -> list[str]:
        ...


def resolve_params(params: dict | None) -> dict:
    out = dict(DEFAULT_PARAMS)
    out.update(params or {})
    if int(out["n"]) < 1:
        raise ValueError("sample count n must be at least 1")
    return out


def _digest(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, ensure_ascii=False).encode()).hexdigest()


def question_key(prompt: str) -> tuple:
    """The last contiguous block of fact lines plus the question line after it, if any."""
    lines = prompt.splitlines()
    end = max((i for i, line in enumerate(lines) if line.startswith("Fact ")), default=None)
    if end is None:
        return (prompt,)
    start = end
    while start > 0 and lines[start - 1].startswith("Fact "):
        start -= 1
    block = lines[start:end + 1]
    tail = [line for line in lines[end + 1:end + 2] if line.startswith("Question:")]
    return tuple(block + tail)


class OracleClient:
    """Answers every question it has been shown with the expected reply text.

    Keyed by the fact block and question line, so prompts extended with
    exemplars, scaffolds or refinement feedback still resolve.  Critique
    requests are always approved.
    """

    model_id = "mock-oracle"

    def __init__(self, questions=()):
        self._answers = {}
        for q in questions:
            self.prepare(q)

    def prepare(self, question: RenderedQuestion):
        self._answers[question_key(question.prompt)] = question.expected_text

    def complete(self, prompt, params=None):
        params = resolve_params(params)
        if CRITIQUE_MARKER in prompt:
            return ["correct"] * params["n"]
        return [self._answers.get(question_key(prompt), UNKNOWN_REPLY)] * params["n"]


def reply_format(prompt: str) -> str | None:
    """The reply stanza a prompt asks for (the lines after the last format marker)."""
    idx = prompt.rfind(FORMAT_MARKER)
    if idx < 0:
        return None
    out = []
    for line in prompt[idx + len(FORMAT_MARKER):].lstrip("\n").splitlines():
        if line.startswith("Fact ") or not line.strip():
            break
        out.append(line)
    return "\n".join(out) or None


class RandomClient:
    """Fills the requested reply format with uniformly random values.

    Numeric slots get a digit, string slots a letter, rule slots a variable
    or digit.  Output is a pure function of (seed, prompt, sample index).
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.model_id = f"mock-random-{seed}"

    def complete(self, prompt, params=None):
        params = resolve_params(params)
        template = reply_format(prompt)
        if template is None:
            return [UNKNOWN_REPLY] * params["n"]
        is_rule = template.startswith("Rule:")
        st_rule = re.match(r"Rule: ([A-Z]+) ->", template)
        if st_rule:
            names = list(st_rule.group(1)) + list(LETTERS)
        else:
            head = template.split("->")[0] if "->" in template else template
            names = re.findall(r"\b[A-Z]\b", head) + [str(d) for d in range(10)]
        string_mode = self._string_answer(prompt)
        out = []
        for i in range(params["n"]):
            rng = random.Random(_digest(self.seed, prompt, i))
            text = template
            while EXPR_SLOT in text:
                if is_rule:
                    value = rng.choice(names)
                elif string_mode:
                    value = rng.choice(LETTERS)
                else:
                    value = str(rng.randrange(10))
                text = text.replace(EXPR_SLOT, value, 1)
            out.append(text)
        return out

    @staticmethod
    def _string_answer(prompt):
        q = [line for line in prompt.splitlines() if line.startswith("Question: Input: [")]
        return bool(q) and bool(re.search(r"\[[a-j']", q[-1]))


class NeverCorrectClient:
    """Always replies without an answer stanza, so every question counts as wrong."""

    model_id = "mock-never"

    def complete(self, prompt, params=None):
        return [UNKNOWN_REPLY] * resolve_params(params)["n"]


class ScriptedClient:
    """Replays a fixed list of replies in order (cycling), for tests."""

    def __init__(self, replies, model_id="mock-scripted"):
        self.replies = list(replies)
        self.model_id = model_id
        self.prompts = []
        self._i = 0

    def complete(self, prompt, params=None):
        params = resolve_params(params)
        self.prompts.append(prompt)
        out = []
        for _ in range(params["n"]):
            out.append(self.replies[self._i % len(self.replies)])
            self._i += 1
        return out


class RemoteChatClient:
    """OpenAI-compatible ``/chat/completions`` adapter with retry and bounded concurrency."""

    RETRY_STATUS = {429, 500, 502, 503, 504}

    def __init__(self, model_id, endpoint="https://api.openai.com/v1", api_key_env="OPENAI_API_KEY",
                 timeout=60.0, max_retries=5, backoff=1.0, concurrency=4, transport=None, sleep=time.sleep):
        if max_retries < 1 or concurrency < 1:
            raise ConfigError("max_retries and concurrency must be at least 1")
        self.model_id = model_id
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.concurrency = concurrency
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(concurrency)
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self):
        key = os.environ.get(self.api_key_env)
        if not key:
            raise ConfigError(f"environment variable {self.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def payload(self, prompt, params) -> dict:
        params = resolve_params(params)
        return {"model": self.model_id, "messages": [{"role": "user", "content": prompt}],
                "temperature": params["temperature"], "max_tokens": params["max_tokens"], "n": params["n"]}

    def complete(self, prompt, params=None):
        body = self.payload(prompt, params)
        headers = self._headers()
        last = None
        for attempt in range(self.max_retries):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._client.post(self.url, json=body, headers=headers)
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in self.RETRY_STATUS:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                choices = resp.json()["choices"]
                return [c["message"]["content"] or "" for c in choices]
            except (ValueError, KeyError, TypeError) as exc:
                raise TransportError(f"malformed completion payload: {exc}") from None
        raise TransportError(f"gave up after {self.max_retries} attempts ({last})")

    def complete_many(self, prompts, params=None) -> list[list[str]]:
        with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
            return list(pool.map(lambda p: self.complete(p, params), prompts))

    def close(self):
        self._client.close()


class CachedClient:
    """Content-addressed response cache in front of another client.

    Keys hash (model id, prompt, params); each entry is one JSON file
    written by atomic replace.
    """

    def __init__(self, inner, cache_dir):
        self.inner = inner
        self.cache_dir = str(cache_dir)
        self.model_id = inner.model_id
        self.hits = self.misses = 0
        os.makedirs(self.cache_dir, exist_ok=True)

    def prepare(self, question):
        if hasattr(self.inner, "prepare"):
            self.inner.prepare(question)

    def key(self, prompt, params) -> str:
        return _digest(self.model_id, prompt, resolve_params(params))

    def _path(self, key):
        return os.path.join(self.cache_dir, key[:2], key + ".json")

    def lookup(self, prompt, params=None):
        path = self._path(self.key(prompt, params))
        if not os.path.exists(path):
            return None
        try:
            with open(path, encoding="utf-8") as fh:
                entry = json.load(fh)
            responses = entry["responses"]
            if not isinstance(responses, list) or not all(isinstance(r, str) for r in responses):
                raise TypeError("responses must be a list of strings")
        except (ValueError, KeyError, TypeError) as exc:
            raise CacheCorruption(f"cache entry {path} is unreadable: {exc}") from None
        return responses

    def complete(self, prompt, params=None):
        cached = self.lookup(prompt, params)
        if cached is not None:
            self.hits += 1
            return list(cached)
        self.misses += 1
        responses = self.inner.complete(prompt, params)
        key = self.key(prompt, params)
        path = self._path(key)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        tmp = f"{path}.{os.getpid()}.{threading.get_ident()}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump({"model": self.model_id, "params": resolve_params(params), "responses": responses}, fh)
        os.replace(tmp, path)
        return list(responses)


def build_client(model: dict, kind: str | None = None):
    """Client described by a config ``model`` section (``kind`` overrides it)."""
    kind = kind or model.get("kind", "oracle")
    if kind == "oracle":
        client = OracleClient()
    elif kind == "random":
        client = RandomClient(model.get("seed", 0))
    elif kind == "never":
        client = NeverCorrectClient()
    elif kind == "remote":
        client = RemoteChatClient(model["id"], model["endpoint"], model["api_key_env"], model["timeout"],
                                  model["max_retries"], model["backoff"], model["concurrency"])
    else:
        raise ConfigError(f"unknown client kind {kind!r}")
    if model.get("cache_dir"):
        client = CachedClient(client, model["cache_dir"])
    return client
