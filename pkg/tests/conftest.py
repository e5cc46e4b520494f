"""Shared synthetic-data builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from translabel.mocks import HashEmbedder
from translabel.state import AttributeBank, AttributeRecord, FeatureMatrix


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def make_features(rng: np.random.Generator, n: int, d: int) -> FeatureMatrix:
    return FeatureMatrix(unit_rows(rng, n, d))


def make_cluster_features(rng: np.random.Generator, n: int, d: int, m: int,
                          spread: float = 0.15):
    """n points around m random unit centers; returns (features, labels,
    centers).  Rows are renormalized to unit norm."""
    centers = unit_rows(rng, m, d)
    labels = rng.integers(0, m, size=n)
    pts = centers[labels] + spread * rng.standard_normal((n, d))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return FeatureMatrix(pts), labels, centers


def make_prompt_bank(classes: list[str], dim: int,
                     overrides: dict | None = None) -> AttributeBank:
    emb = HashEmbedder(dim, overrides)
    attrs = []
    for c in classes:
        text = f"a photo of a {c}"
        attrs.append([AttributeRecord(text, emb.embed_one(text))])
    return AttributeBank(list(classes), attrs)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
