"""Test-only stand-ins for the external services.

These exist so the full loop can run offline and deterministically; they
are NOT encoders.  HashEmbedder derives a pseudo-random unit vector from
a hash of the text, ScriptedLlm replays canned responses.
"""

from __future__ import annotations

import hashlib

import numpy as np


class HashEmbedder:
    """Deterministic text -> unit vector map (sha256 seeds a PRNG draw).

    ``overrides`` pins chosen texts to chosen vectors, which lets tests
    construct attributes whose embeddings land anywhere they like.
    """

    def __init__(self, dim: int, overrides: dict[str, np.ndarray] | None = None):
        self.dim = dim
        self.overrides = {}
        for text, vec in (overrides or {}).items():
            v = np.asarray(vec, dtype=np.float64)
            self.overrides[text] = v / np.linalg.norm(v)

    def embed_one(self, text: str) -> np.ndarray:
        if text in self.overrides:
            return self.overrides[text].copy()
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def __call__(self, texts: list[str]) -> np.ndarray:
        return np.stack([self.embed_one(t) for t in texts])


class ScriptedLlm:
    """Replays responses: a constant text, a per-substring lookup, or a
    queue consumed in request order.  Records every prompt it sees."""

    def __init__(self, response: str = "", by_substring: dict[str, str] | None = None,
                 queue: list[str] | None = None):
        self.response = response
        self.by_substring = by_substring or {}
        self.queue = list(queue or [])
        self.prompts: list[str] = []

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if self.queue:
            return self.queue.pop(0)
        for needle, reply in self.by_substring.items():
            if needle in prompt:
                return reply
        return self.response
