"""Attribute-averaged text predictions.

For each image the similarity to a class is the mean inner product with
that class's attribute embeddings, divided by a softmax temperature; the
row softmax of those mean similarities is the text prior used both to
initialize the solver and in its divergence term.
"""

from __future__ import annotations

import numpy as np

from .state import AttributeBank, FeatureMatrix, TextPrior

# Matches the learned logit scale of the common vision-language encoders
# (similarities divided by 0.01 == multiplied by 100).
DEFAULT_TEMPERATURE = 0.01


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax; never produces -inf for finite input."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def mean_similarity(
    features: FeatureMatrix,
    bank: AttributeBank,
    temperature: float = DEFAULT_TEMPERATURE,
) -> np.ndarray:
    """N x M matrix of attribute-mean similarities divided by temperature.

    Raises if any class has zero attributes.
    """
    means = bank.class_embedding_means()
    return (features.data @ means.T) / temperature


def text_predictions(s_bar: np.ndarray) -> TextPrior:
    """Row softmax of the mean similarities."""
    s_bar = np.asarray(s_bar, dtype=np.float64)
    if not np.all(np.isfinite(s_bar)):
        raise ValueError("s_bar contains non-finite values")
    return TextPrior(y_hat=softmax_rows(s_bar), s_bar=s_bar)


def compute_text_prior(
    features: FeatureMatrix,
    bank: AttributeBank,
    temperature: float = DEFAULT_TEMPERATURE,
) -> TextPrior:
    return text_predictions(mean_similarity(features, bank, temperature))


class TextPriorCache:
    """Incrementally maintained mean similarities.

    Keeps the per-class running sum of attribute embeddings so that after
    appending attributes only the changed classes' columns are recomputed:
    O(N*D) per changed class instead of a full rebuild.
    """

    def __init__(self, features: FeatureMatrix, bank: AttributeBank,
                 temperature: float = DEFAULT_TEMPERATURE):
        self.features = features
        self.temperature = temperature
        self._sums, self._counts = bank.class_embedding_sums()
        if np.any(self._counts == 0):
            raise ValueError("every class needs at least one attribute")
        self._proj = features.data @ self._sums.T  # N x M of f_i . sum_j

    def refresh_class(self, bank: AttributeBank, j: int) -> None:
        """Re-pull class ``j``'s attribute sums after the bank changed."""
        dim = self.features.dim
        s = np.zeros(dim)
        for r in bank.attrs[j]:
            s += r.embedding
        self._sums[j] = s
        self._counts[j] = bank.n_attributes(j)
        self._proj[:, j] = self.features.data @ s

    def rebind_features(self, features: FeatureMatrix) -> None:
        """Recompute all projections against refreshed embeddings."""
        self.features = features
        self._proj = features.data @ self._sums.T

    def s_bar(self) -> np.ndarray:
        return (self._proj / self._counts[None, :]) / self.temperature

    def prior(self) -> TextPrior:
        return text_predictions(self.s_bar())
