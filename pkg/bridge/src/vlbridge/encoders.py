"""Encoder pairs behind the bridge.

An encoder pair maps texts and image ids into one shared unit-norm
embedding space.  The default "toy" pair hashes character trigrams into a
fixed bag and passes it through a small two-stage linear tower per
modality; it is fully deterministic in eval mode and cheap enough for the
fine-tuning tests.  Real vision-language checkpoints plug in through the
same interface; loading one here requires the corresponding weights to be
installed.
"""

from __future__ import annotations

import zlib

import numpy as np
import torch
from torch import nn

HASH_DIM = 96


def trigram_hash_features(token: str, dim: int = HASH_DIM) -> np.ndarray:
    """Deterministic bag-of-trigrams featurizer (crc32, not the salted
    built-in hash)."""
    padded = f"  {token.lower()}  "
    out = np.zeros(dim, dtype=np.float64)
    for i in range(len(padded) - 2):
        tri = padded[i:i + 3].encode("utf-8")
        out[zlib.crc32(tri) % dim] += 1.0
    norm = np.linalg.norm(out)
    return out / norm if norm > 0 else out


class _Tower(nn.Module):
    """backbone -> projection, mirroring the two hyperparameter groups of
    the fine-tuning recipe (transformer layers vs final projection)."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.backbone = nn.Sequential(nn.Linear(in_dim, hidden), nn.Tanh())
        self.projection = nn.Linear(hidden, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.projection(self.backbone(x))
        return z / z.norm(dim=-1, keepdim=True).clamp_min(1e-12)


class ToyEncoderPair(nn.Module):
    """Deterministic text/image towers over hashed trigram features."""

    def __init__(self, dim: int = 32, hidden: int = 64, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.dim = dim
        self.model_tag = f"toy/{dim}"
        self.text_tower = _Tower(HASH_DIM, hidden, dim)
        self.image_tower = _Tower(HASH_DIM, hidden, dim)
        self.eval()

    def _featurize(self, tokens: list[str]) -> torch.Tensor:
        rows = np.stack([trigram_hash_features(t) for t in tokens])
        return torch.from_numpy(rows).float()

    @torch.no_grad()
    def embed_text(self, texts: list[str]) -> np.ndarray:
        self._check(texts, "text")
        return self.text_tower(self._featurize(texts)).double().numpy()

    @torch.no_grad()
    def embed_images(self, ids: list[str]) -> np.ndarray:
        self._check(ids, "image id")
        return self.image_tower(self._featurize(ids)).double().numpy()

    def text_forward(self, texts: list[str]) -> torch.Tensor:
        return self.text_tower(self._featurize(texts))

    def image_forward(self, ids: list[str]) -> torch.Tensor:
        return self.image_tower(self._featurize(ids))

    def parameter_groups(self) -> tuple[list, list]:
        """(backbone params, projection params) across both towers."""
        backbone, projection = [], []
        for tower in (self.text_tower, self.image_tower):
            backbone.extend(tower.backbone.parameters())
            projection.extend(tower.projection.parameters())
        return backbone, projection

    @staticmethod
    def _check(items: list[str], kind: str) -> None:
        if not items:
            raise ValueError(f"empty {kind} list")
        for t in items:
            if not t:
                raise ValueError(f"empty {kind}")


def load_encoder(model_tag: str) -> ToyEncoderPair:
    """Build the encoder named by ``model_tag``.

    "toy" or "toy/<dim>" is always available.  Tags of the form
    "clip:<arch>" require the open_clip stack and pretrained weights,
    which this deployment may not ship; the error says so explicitly.
    """
    if model_tag == "toy" or model_tag.startswith("toy/"):
        dim = int(model_tag.split("/", 1)[1]) if "/" in model_tag else 32
        return ToyEncoderPair(dim=dim)
    if model_tag.startswith("clip:"):
        try:
            import open_clip  # noqa: F401
        except ImportError as exc:
            raise RuntimeError(
                f"model {model_tag!r} needs the open_clip package and its "
                "pretrained weights; install them or use a toy/<dim> tag"
            ) from exc
        raise RuntimeError(
            f"loading {model_tag!r} checkpoints is not wired up in this "
            "deployment; use toy/<dim>")
    raise ValueError(f"unknown model tag {model_tag!r}")
