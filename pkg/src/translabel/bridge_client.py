"""HTTP client for the encoder sidecar.

The sidecar owns all deep-learning work (embedding extraction and
pseudo-label fine-tuning); this engine only ever talks to it over HTTP
with JSON jobs and EMB1 binary embedding bodies.
"""

from __future__ import annotations

from dataclasses import dataclass

import httpx
import numpy as np

from .io import parse_embeddings


class BridgeError(RuntimeError):
    """The sidecar is unreachable or rejected a request."""


@dataclass
class FinetuneOutcome:
    features_path: str
    text_embeddings_path: str
    steps: int
    loss_before: float | None
    loss_after: float | None


class BridgeClient:
    def __init__(self, base_url: str, timeout: float = 600.0,
                 transport: httpx.BaseTransport | None = None):
        self.base_url = base_url.rstrip("/")
        self._client = httpx.Client(
            base_url=self.base_url, timeout=timeout, transport=transport
        )

    def _post(self, path: str, payload: dict) -> httpx.Response:
        try:
            resp = self._client.post(path, json=payload)
            resp.raise_for_status()
            return resp
        except httpx.HTTPError as exc:
            raise BridgeError(f"bridge call {path} against {self.base_url} failed: {exc}") from exc

    def health(self) -> dict:
        try:
            resp = self._client.get("/health")
            resp.raise_for_status()
            return resp.json()
        except httpx.HTTPError as exc:
            raise BridgeError(f"bridge health check against {self.base_url} failed: {exc}") from exc

    def embed_text(self, texts: list[str]) -> np.ndarray:
        resp = self._post("/embed_text", {"texts": list(texts)})
        return parse_embeddings(resp.content)

    def embed_images(self, ids: list[str]) -> np.ndarray:
        resp = self._post("/embed_images", {"ids": list(ids)})
        return parse_embeddings(resp.content)

    def finetune(self, job_payload: dict, hyper: dict | None, refresh_image_ids: list[str],
                 refresh_texts: list[list[str]], output_dir: str, iteration: int) -> FinetuneOutcome:
        payload = {
            "job": job_payload,
            "hyper": hyper or {},
            "refresh_image_ids": list(refresh_image_ids),
            "refresh_texts": [list(ts) for ts in refresh_texts],
            "output_dir": str(output_dir),
            "iteration": int(iteration),
        }
        doc = self._post("/finetune", payload).json()
        return FinetuneOutcome(
            features_path=doc["features_path"],
            text_embeddings_path=doc["text_embeddings_path"],
            steps=int(doc["steps"]),
            loss_before=doc.get("loss_before"),
            loss_after=doc.get("loss_after"),
        )

    def close(self) -> None:
        self._client.close()
