"""Prompt construction and LLM transport.

Two modes: ``live`` speaks a chat-completion-style HTTP protocol and
records every exchange into a transcript; ``replay`` answers purely from
a previously recorded transcript, keyed by (kind, category, node,
iteration), which makes whole runs reproducible offline.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import requests

from .tree import AttributeTree, TreeError, parse_tree


class LlmError(Exception):
    pass


class ReplayMissError(LlmError):
    def __init__(self, key: "RequestKey"):
        super().__init__(f"no transcript record for key {key.as_dict()}")
        self.key = key


class UnparsableResponseError(LlmError):
    pass


class PromptKind(Enum):
    INITIAL_ATTRIBUTES = "InitialAttributes"
    DESCRIPTION_COMPOSITION = "DescriptionComposition"
    GROW = "Grow"
    DISCRIMINATE = "Discriminate"


TEMPLATES: dict[PromptKind, str] = {
    PromptKind.INITIAL_ATTRIBUTES: "This is a {class_name} because",
    PromptKind.DESCRIPTION_COMPOSITION:
        "Generate sentences that describe a concept according to each attribute.",
    PromptKind.GROW:
        "Add visual attributes for the {node} of a {class_name}, to the json",
    PromptKind.DISCRIMINATE:
        "The {node} of {class_name} is different from {other_class} because",
}

# Shipped in-context example pair; tunable, not ground truth.
DEFAULT_IN_CONTEXT_EXAMPLE = (
    'Example - This is a cat because\n'
    '{"name": "cat", "children": ['
    '{"kind": "Concepts", "name": "Concepts", "children": [{"name": "small feline"}]}, '
    '{"kind": "Substances", "name": "Substances", "children": [{"name": "soft fur"}]}, '
    '{"kind": "Attributes", "name": "Attributes", "children": [{"name": "pointed ears"}]}, '
    '{"kind": "Environments", "name": "Environments", "children": [{"name": "indoors"}]}'
    ']}'
)


def render_prompt(kind: PromptKind, bindings: dict[str, str],
                  in_context_example: str = "") -> str:
    """In-context example followed by the instantiated template."""
    template = TEMPLATES[kind]
    try:
        body = template.format(**bindings)
    except KeyError as e:
        raise LlmError(f"unbound placeholder {e.args[0]!r} for {kind.value}") from e
    if in_context_example:
        return in_context_example + "\n\n" + body
    return body


@dataclass(frozen=True)
class RequestKey:
    kind: str
    category: str
    node: str = ""
    iteration: int = 0

    def as_dict(self) -> dict:
        return {"kind": self.kind, "category": self.category,
                "node": self.node, "iteration": self.iteration}

    @classmethod
    def from_dict(cls, d: dict) -> "RequestKey":
        return cls(kind=d["kind"], category=d["category"],
                   node=d.get("node", ""), iteration=int(d.get("iteration", 0)))


@dataclass
class Transcript:
    """Ordered (key, prompt, response) records with unique keys."""

    records: list[tuple[RequestKey, str, str]] = field(default_factory=list)
    _index: dict[RequestKey, str] = field(default_factory=dict)

    def append(self, key: RequestKey, prompt: str, response: str) -> None:
        if key in self._index:
            raise LlmError(f"duplicate transcript key {key.as_dict()}")
        self.records.append((key, prompt, response))
        self._index[key] = response

    def lookup(self, key: RequestKey) -> str:
        try:
            return self._index[key]
        except KeyError:
            raise ReplayMissError(key) from None

    def __contains__(self, key: RequestKey) -> bool:
        return key in self._index

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key, prompt, response in self.records:
                fh.write(json.dumps({"key": key.as_dict(), "prompt": prompt,
                                     "response": response}) + "\n")

    @classmethod
    def load(cls, path: str) -> "Transcript":
        t = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                t.append(RequestKey.from_dict(obj["key"]), obj.get("prompt", ""),
                         obj["response"])
        return t


@dataclass
class LlmConfig:
    base_url: str = ""
    model: str = ""
    api_key: str = ""
    temperature: float = 0.0
    max_retries: int = 3
    retry_wait: float = 0.5

    @classmethod
    def from_env(cls) -> "LlmConfig":
        return cls(
            base_url=os.environ.get("LVX_LLM_BASE_URL", ""),
            model=os.environ.get("LVX_LLM_MODEL", ""),
            api_key=os.environ.get("LVX_LLM_API_KEY", ""),
        )


class LlmClient:
    """``live`` or ``replay`` completion client over one transcript."""

    def __init__(self, mode: str = "replay",
                 transcript: Optional[Transcript] = None,
                 config: Optional[LlmConfig] = None,
                 in_context_example: str = DEFAULT_IN_CONTEXT_EXAMPLE):
        if mode not in ("live", "replay"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.transcript = transcript if transcript is not None else Transcript()
        self.config = config or LlmConfig.from_env()
        self.in_context_example = in_context_example

    def complete(self, key: RequestKey, prompt: str) -> str:
        if self.mode == "replay":
            return self.transcript.lookup(key)
        text = self._post(prompt)
        self.transcript.append(key, prompt, text)
        return text

    def ask(self, kind: PromptKind, key: RequestKey,
            bindings: dict[str, str]) -> str:
        prompt = render_prompt(kind, bindings, self.in_context_example)
        return self.complete(key, prompt)

    def _post(self, prompt: str) -> str:
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        }
        last_err: Optional[Exception] = None
        for attempt in range(self.config.max_retries):
            try:
                resp = requests.post(url, json=payload, headers=headers,
                                     timeout=60)
                resp.raise_for_status()
                data = resp.json()
                return data["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, ValueError) as e:
                last_err = e
                if attempt + 1 < self.config.max_retries:
                    time.sleep(self.config.retry_wait * (attempt + 1))
        raise LlmError(f"live completion failed after "
                       f"{self.config.max_retries} attempts: {last_err}")


def parse_attribute_response(text: str) -> AttributeTree:
    """Extract the first JSON object from an LLM response (tolerating
    surrounding prose) and parse it as a tree fragment."""
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(text[idx:])
        except json.JSONDecodeError:
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            # fragments may carry a non-root kind on their top node; the
            # standalone parse treats the top as the fragment root
            if str(obj.get("kind", "root")).lower() != "root":
                obj = {k: v for k, v in obj.items() if k != "kind"}
            try:
                return parse_tree(json.dumps(obj))
            except TreeError as e:
                raise UnparsableResponseError(
                    f"embedded JSON is not a valid tree: {e}") from e
        idx = text.find("{", idx + 1)
    raise UnparsableResponseError("no JSON object found in response")
