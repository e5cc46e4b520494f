"""Attribute generation: prompt construction, chat-endpoint calls, and
response parsing into deduplicated per-class attribute texts.

Two fixed prompt shapes exist: a per-class bootstrap prompt asking for an
exhaustive attribute list, and a pairwise prompt asking for attributes
that separate one class from a class it is being confused with.  Both are
pinned byte-for-byte by golden data in the test suite; attribute lists
are rendered inline as "; "-joined text.
"""

from __future__ import annotations

import logging
import os
import re
import time
from dataclasses import dataclass

import httpx

from .state import AttributeBank, normalize_whitespace

logger = logging.getLogger(__name__)

CLASS_PROMPT_TEMPLATE = "a photo of a {}"

_STATIC_TEMPLATE = (
    "What characteristics can be used to differentiate {cls} from other {dom} "
    "based on just a photo? Provide an exhaustive list of all attributes that "
    "can be used to identify the {dom} uniquely. Texts should be of the form "
    '"{dom} with [attribute]".'
)

_PAIRWISE_TEMPLATE = (
    "I have a set of attributes for {c1} as: {attrs1}.\n"
    "I have a set of attributes for {c2} as: {attrs2}.\n"
    "\n"
    "Provide a few additional attributes for {c1} which can help to "
    "distinguish it from {c2}.\n"
    "\n"
    "Make sure none of the attributes already given above are repeated. "
    "The texts in the attributes texts should only talk about {c1} and "
    "should not compare it to {c2}."
)

_LIST_MARKER = re.compile(r"^\s*(?:[-*•]+\s*|\d+\s*[.)]\s*)+")


def class_prompt(class_name: str) -> str:
    """The minimal one-entry text every class starts with."""
    return CLASS_PROMPT_TEMPLATE.format(class_name)


def static_prompt(class_name: str, domain_word: str) -> str:
    """Bootstrap prompt asking for an exhaustive per-class attribute list."""
    if not class_name or not domain_word:
        raise ValueError("class and domain names must be nonempty")
    return _STATIC_TEMPLATE.format(cls=class_name, dom=domain_word)


def render_attr_list(attrs: list[str]) -> str:
    return "; ".join(attrs)


def pairwise_prompt(class1: str, attrs1: list[str], class2: str, attrs2: list[str]) -> str:
    """Prompt for attributes of ``class1`` that separate it from ``class2``."""
    if class1 == class2:
        raise ValueError(f"pair must be two distinct classes, got {class1!r} twice")
    if not attrs1 or not attrs2:
        raise ValueError("both attribute lists must be nonempty")
    return _PAIRWISE_TEMPLATE.format(
        c1=class1, c2=class2,
        attrs1=render_attr_list(attrs1), attrs2=render_attr_list(attrs2),
    )


def mentions_target(line: str, class_name: str, domain_word: str) -> bool:
    """Heuristic keep-filter: the line must talk about the class or the
    domain (singular or plural)."""
    lowered = line.casefold()
    if class_name.casefold() in lowered:
        return True
    dom = domain_word.casefold()
    return dom in lowered or dom.rstrip("s") in lowered


def parse_attribute_lines(response: str, class_name: str, domain_word: str) -> list[str]:
    """Split a model response into clean attribute texts.

    Strips list markers, drops lines shorter than 3 words or not
    mentioning the class/domain, and deduplicates within the response
    (case-insensitive after whitespace collapse).
    """
    out: list[str] = []
    seen: set[str] = set()
    for raw in response.splitlines():
        line = _LIST_MARKER.sub("", raw).strip().strip('"').strip()
        if not line:
            continue
        if len(line.split()) < 3:
            continue
        if not mentions_target(line, class_name, domain_word):
            continue
        key = normalize_whitespace(line).casefold()
        if key in seen:
            continue
        seen.add(key)
        out.append(normalize_whitespace(line))
    return out


# ---------------------------------------------------------------------------
# Chat endpoint
# ---------------------------------------------------------------------------

@dataclass
class LlmConfig:
    endpoint_url: str
    model_name: str = "llama-3.1"
    max_tokens: int = 500
    request_timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.7
    token_env: str = "TRANSLABEL_LLM_TOKEN"

    def __post_init__(self):
        if self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be > 0, got {self.max_tokens}")


class LlmError(RuntimeError):
    """The endpoint is unreachable or returned an unusable payload."""


class ChatCompletionClient:
    """Minimal chat-completions client: one user message per request, with
    bounded retries and an optional bearer token from the environment."""

    def __init__(self, config: LlmConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = {}
        token = os.environ.get(config.token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            timeout=config.request_timeout, headers=headers, transport=transport
        )

    def complete(self, prompt: str) -> str:
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": self.config.max_tokens,
            "temperature": self.config.temperature,
        }
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries):
            try:
                resp = self._client.post(self.config.endpoint_url, json=payload)
                resp.raise_for_status()
                doc = resp.json()
                return doc["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.config.max_retries:
                    time.sleep(min(2.0 ** attempt, 8.0) * 0.1)
        raise LlmError(f"chat endpoint failed after {self.config.max_retries} attempts: {last_error}")

    def close(self) -> None:
        self._client.close()


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

@dataclass
class GeneratedAttributes:
    class_index: int
    texts: list[str]
    source_pair: tuple[int, int]
    raw_response: str


def generate_for_pairs(
    pairs: list[tuple[int, int]],
    bank: AttributeBank,
    llm,
    domain_word: str,
    audit_log: list[dict] | None = None,
) -> list[GeneratedAttributes]:
    """Query the model for both directions of every confused pair.

    Each unordered pair {c1, c2} produces two requests: attributes for c1
    against c2, then for c2 against c1.  Responses are parsed, filtered,
    and deduplicated against the bank and within the batch; an unreachable
    endpoint skips the pair with a warning and the loop continues.  ``llm``
    is anything with a ``complete(prompt) -> str`` method.
    """
    results: list[GeneratedAttributes] = []
    fresh: dict[int, set[str]] = {}
    for c1, c2 in pairs:
        requests = [(c1, c2), (c2, c1)]
        responses = []
        try:
            for target, other in requests:
                prompt = pairwise_prompt(
                    bank.classes[target], bank.texts(target),
                    bank.classes[other], bank.texts(other),
                )
                responses.append(llm.complete(prompt))
        except LlmError as exc:
            logger.warning("skipping pair (%d, %d): %s", c1, c2, exc)
            continue
        for (target, _other), response in zip(requests, responses):
            texts = parse_attribute_lines(response, bank.classes[target], domain_word)
            if not texts:
                logger.warning(
                    "no usable attributes for class %d from pair (%d, %d)", target, c1, c2
                )
            batch_seen = fresh.setdefault(target, set())
            kept = []
            for t in texts:
                key = normalize_whitespace(t).casefold()
                if key in batch_seen or bank.has_text(target, t):
                    continue
                batch_seen.add(key)
                kept.append(t)
            if audit_log is not None:
                audit_log.append({
                    "class_index": target,
                    "pair": [c1, c2],
                    "raw_response": response,
                    "kept": kept,
                })
            results.append(GeneratedAttributes(target, kept, (c1, c2), response))
    return results


def bootstrap_prompts(classes: list[str], domain_word: str) -> list[str]:
    """The per-class bootstrap prompts, in class order."""
    return [static_prompt(c, domain_word) for c in classes]
