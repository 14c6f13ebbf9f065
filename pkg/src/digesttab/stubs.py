"""Offline provider doubles.

EchoChatProvider and ScriptedChatProvider drive unit tests;
SeededStubEmbedder gives reproducible pseudo-embeddings; and
DeterministicTaskStub emulates well-formed task outputs for every prompt
shape the pipeline issues, so the full CLI can run (and record a replay
cache) with no network at all.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ProviderError
from .gateway import ChatRequest, ChatResponse

_ASPECT_POOL = (
    "Task",
    "Dataset",
    "Method",
    "Domain",
    "Evaluation Metric",
    "Data Source",
    "Model Architecture",
    "Annotation Method",
    "Language",
    "Availability",
    "Input Modality",
    "Application",
    "Training Regime",
)


def _digest_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


class EchoChatProvider:
    """Returns the final user message verbatim."""

    name = "stub-echo"

    def complete(self, request: ChatRequest) -> ChatResponse:
        return ChatResponse(text=request.last_user_content())


class ScriptedChatProvider:
    """Plays back a fixed queue of responses (or a response function) and
    keeps a log of every request for orchestration assertions."""

    name = "stub-script"

    def __init__(self, script: Sequence[str] | Callable[[ChatRequest], str]):
        self._fn = script if callable(script) else None
        self._queue = None if callable(script) else list(script)
        self.call_log: list[ChatRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.call_log.append(request)
            if self._fn is not None:
                return ChatResponse(text=self._fn(request))
            if not self._queue:
                raise ProviderError("scripted provider exhausted")
            return ChatResponse(text=self._queue.pop(0))


class FailingChatProvider:
    """Raises on every call; useful for asserting zero network activity."""

    name = "stub-failing"

    def __init__(self, classification: str = "server"):
        self.classification = classification
        self.calls = 0

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.calls += 1
        raise ProviderError("failing provider invoked", classification=self.classification)


class SeededStubEmbedder:
    """text -> unit vector drawn from a generator seeded by the text hash,
    identical across processes and runs."""

    name = "stub-embed"

    def __init__(self, dim: int = 16, seed: int = 0, model_id: str = "stub-embed-16"):
        self.dim = dim
        self.seed = seed
        self.model_id = model_id

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        out = []
        for text in texts:
            rng = np.random.default_rng(_digest_int(f"{self.seed}:{text}"))
            vec = rng.standard_normal(self.dim)
            vec = vec / np.linalg.norm(vec)
            out.append([float(x) for x in vec])
        return out


class StaticEmbedder:
    """Maps exact texts to fixed vectors; unknown texts are an error."""

    name = "stub-static-embed"

    def __init__(self, mapping: Mapping[str, Sequence[float]], model_id: str = "static-embed"):
        self.mapping = {k: [float(x) for x in v] for k, v in mapping.items()}
        self.model_id = model_id

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        missing = [t for t in texts if t not in self.mapping]
        if missing:
            raise ProviderError(f"static embedder has no vector for {missing[0]!r}")
        return [list(self.mapping[t]) for t in texts]


class DeterministicTaskStub:
    """Produces a well-formed, content-derived response for each known
    prompt shape. Output is a pure function of the request, which makes
    recorded caches reproducible."""

    name = "stub-task"

    def __init__(self):
        self.call_log: list[ChatRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.call_log.append(request)
        prompt = request.last_user_content()
        return ChatResponse(text=self._respond(prompt))

    def _respond(self, prompt: str) -> str:
        if "build a table that has each paper as a row" in prompt:
            return self._joint_table(prompt)
        if "match column headers if their columns have very similar values" in prompt:
            return self._align(prompt)
        if "Answer a question using the provided scientific paper." in prompt:
            return self._value(prompt)
        if "Rewrite the values to be shorter" in prompt:
            return self._rewrite(prompt)
        if "Rewrite this description as a one-line question." in prompt:
            return self._question(prompt)
        if "Please write a  brief definition for this column." in prompt:
            return self._definition(prompt)
        if "Write a brief stand-alone description" in prompt:
            return self._decontext(prompt)
        if "Write a one-paragraph caption" in prompt:
            return self._caption(prompt)
        if "identify" in prompt and "table columns" in prompt:
            return self._schema_list(prompt)
        if "attributes that can be used to compare" in prompt:
            return self._schema_object(prompt)
        return "I could not identify the task."

    # -- helpers ---------------------------------------------------------

    @staticmethod
    def _paper_titles(prompt: str) -> list[str]:
        return re.findall(r"^Title: (.+)$", prompt, flags=re.MULTILINE)

    @staticmethod
    def _requested_count(prompt: str, *patterns: str) -> int:
        for pattern in patterns:
            match = re.search(pattern, prompt)
            if match:
                return int(match.group(1))
        return 3

    def _pick_aspects(self, prompt: str, count: int) -> list[str]:
        start = _digest_int(prompt) % len(_ASPECT_POOL)
        pool = list(_ASPECT_POOL)
        picked = [pool[(start + i) % len(pool)] for i in range(count)]
        # pool exhausted: extend with numbered variants
        if count > len(pool):
            picked = pool + [f"Aspect {i}" for i in range(count - len(pool))]
        return picked[:count]

    def _joint_table(self, prompt: str) -> str:
        titles = self._paper_titles(prompt)
        n_aspects = self._requested_count(prompt, r"Make (\d+) dimensions")
        aspects = self._pick_aspects(" ".join(titles), n_aspects)
        table = {
            aspect: [f"{aspect} of {title}".strip() for title in titles] for aspect in aspects
        }
        return "```json\n" + json.dumps(table, ensure_ascii=False) + "\n```"

    def _schema_list(self, prompt: str) -> str:
        count = self._requested_count(prompt, r"identify (\d+) table columns")
        titles = self._paper_titles(prompt)
        aspects = self._pick_aspects(" ".join(titles) or prompt[-200:], count)
        return json.dumps(aspects, ensure_ascii=False)

    def _schema_object(self, prompt: str) -> str:
        count = self._requested_count(prompt, r"identify (\d+) attributes")
        titles = self._paper_titles(prompt)
        aspects = self._pick_aspects(" ".join(titles) or prompt[-200:], count)
        obj = {aspect: [f"{aspect} details"] for aspect in aspects}
        return "```json\n" + json.dumps(obj, ensure_ascii=False) + "\n```"

    def _value(self, prompt: str) -> str:
        match = re.search(r'please answer the question: "(.+)"\.\s*$', prompt, flags=re.DOTALL)
        question = match.group(1) if match else ""
        paper_match = re.search(r"Paper:\n (.*?)\n\nGiven the information above", prompt, flags=re.DOTALL)
        body = paper_match.group(1) if paper_match else ""
        if not body.strip():
            return "{}"
        sentences = re.split(r"(?<=[.!?])\s+", body.strip())
        content_words = [w.lower() for w in re.findall(r"[A-Za-z]{3,}", question)]
        hit = next(
            (s for s in sentences if any(w in s.lower() for w in content_words)),
            sentences[0],
        )
        answer = " ".join(hit.split()[:12])
        return json.dumps({"answer": answer, "excerpts": [hit[:200]]}, ensure_ascii=False)

    def _rewrite(self, prompt: str) -> str:
        match = re.search(r"Values:\n(\[.*\])\s*$", prompt, flags=re.DOTALL)
        values = json.loads(match.group(1)) if match else []
        shortened = [" ".join(str(v).split()[:6]) for v in values]
        return json.dumps(shortened, ensure_ascii=False)

    def _question(self, prompt: str) -> str:
        head = prompt.split("\n", 1)[0]
        topic = " ".join(head.split()[:8]).rstrip(".:,")
        return f"What does the paper report about {topic}?"

    def _definition(self, prompt: str) -> str:
        match = re.search(r"a column called (.+?)\. Please", prompt)
        column = match.group(1) if match else "this column"
        return f"{column}: the {column.lower()} reported by each compared paper."

    def _decontext(self, prompt: str) -> str:
        name = re.search(r"Column header: (.+)", prompt)
        values = re.search(r"Column values: (.+)", prompt)
        column = name.group(1) if name else "column"
        sample = values.group(1)[:120] if values else ""
        return f"This column records the {column.lower()} of each paper, with values such as {sample}."

    def _caption(self, prompt: str) -> str:
        titles = self._paper_titles(prompt)
        if not titles:
            return "A comparison of the input papers."
        return "A comparison of " + "; ".join(titles) + "."

    def _align(self, prompt: str) -> str:
        tables = re.findall(r"Table \d+:\n(\{.*?\n\})", prompt, flags=re.DOTALL)
        if len(tables) < 2:
            return "[]"
        try:
            left = json.loads(tables[-2])
            right = json.loads(tables[-1])
        except json.JSONDecodeError:
            return "[]"
        pairs = [[a, b] for a in left for b in right if a.strip().lower() == b.strip().lower()]
        return json.dumps(pairs, ensure_ascii=False)
