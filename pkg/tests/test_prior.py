"""Attribute-averaged similarities and their softmax predictions."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from translabel.prior import (
    TextPriorCache,
    compute_text_prior,
    mean_similarity,
    text_predictions,
)
from translabel.state import AttributeBank, AttributeRecord, FeatureMatrix

from conftest import unit_rows
from oracles import naive_mean_similarity


def bank_from_embeddings(embs_per_class, prefix="attr"):
    classes = [f"c{j}" for j in range(len(embs_per_class))]
    attrs = [
        [AttributeRecord(f"{prefix} {j} {k}", e) for k, e in enumerate(embs)]
        for j, embs in enumerate(embs_per_class)
    ]
    return AttributeBank(classes, attrs)


class TestMeanSimilarity:
    def test_self_similarity_is_one(self, rng):
        f = unit_rows(rng, 1, 6)
        bank = bank_from_embeddings([[f[0].copy()]])
        s = mean_similarity(FeatureMatrix(f), bank, temperature=1.0)
        assert s[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_arithmetic_mean_of_two_attributes(self):
        # attributes at cosine 0.2 and 0.4 to the image
        f = np.array([[1.0, 0.0, 0.0]])
        a1 = np.array([0.2, np.sqrt(1 - 0.2 ** 2), 0.0])
        a2 = np.array([0.4, 0.0, np.sqrt(1 - 0.4 ** 2)])
        bank = bank_from_embeddings([[a1, a2]])
        s = mean_similarity(FeatureMatrix(f), bank, temperature=1.0)
        assert s[0, 0] == pytest.approx(0.3, abs=1e-12)

    def test_matches_double_loop_oracle(self, rng):
        f = unit_rows(rng, 3, 5)
        embs = [[unit_rows(rng, 1, 5)[0] for _ in range(k)] for k in (2, 3)]
        bank = bank_from_embeddings(embs)
        got = mean_similarity(FeatureMatrix(f), bank, temperature=1.0)
        want = naive_mean_similarity(f, embs)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_temperature_scales(self, rng):
        f = unit_rows(rng, 4, 5)
        bank = bank_from_embeddings([[unit_rows(rng, 1, 5)[0]] for _ in range(3)])
        s1 = mean_similarity(FeatureMatrix(f), bank, temperature=1.0)
        s2 = mean_similarity(FeatureMatrix(f), bank, temperature=0.01)
        np.testing.assert_allclose(s2, s1 * 100.0, rtol=1e-12)

    def test_zero_attribute_class_errors(self):
        bank = AttributeBank(["a", "b"], [[AttributeRecord("x y z", np.ones(3) / np.sqrt(3))], []])
        with pytest.raises(ValueError, match="zero attributes"):
            mean_similarity(FeatureMatrix(np.eye(3)), bank)


class TestTextPredictions:
    def test_uniform_row(self):
        prior = text_predictions(np.array([[0.0, 0.0]]))
        np.testing.assert_allclose(prior.y_hat, [[0.5, 0.5]])

    def test_hand_computed_softmax(self):
        # e^0.2 / (e^0.2 + e^0.1) = 0.52498..., the complement 0.47502...
        prior = text_predictions(np.array([[0.2, 0.1]]))
        np.testing.assert_allclose(prior.y_hat, [[0.5250, 0.4750]], atol=5e-5)

    def test_huge_logit_no_overflow(self):
        prior = text_predictions(np.array([[1000.0, 0.0, -3.0]]))
        assert np.all(np.isfinite(prior.y_hat))
        np.testing.assert_allclose(prior.y_hat[0, 0], 1.0, atol=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            text_predictions(np.array([[np.nan, 0.0]]))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31), shift=st.floats(-50, 50))
    def test_shift_invariance(self, seed, shift):
        rng = np.random.default_rng(seed)
        s = rng.standard_normal((3, 4))
        base = text_predictions(s).y_hat
        shifted = text_predictions(s + shift).y_hat
        np.testing.assert_allclose(shifted, base, atol=1e-12)


class TestPriorProperties:
    def test_duplicate_attribute_changes_nothing(self, rng):
        f = FeatureMatrix(unit_rows(rng, 5, 6))
        a = unit_rows(rng, 1, 6)[0]
        b = unit_rows(rng, 1, 6)[0]
        bank1 = bank_from_embeddings([[a], [b]])
        bank2 = bank_from_embeddings([[a, a.copy()], [b]])
        p1 = compute_text_prior(f, bank1)
        p2 = compute_text_prior(f, bank2)
        np.testing.assert_allclose(p2.s_bar, p1.s_bar, atol=1e-12)
        np.testing.assert_allclose(p2.y_hat, p1.y_hat, atol=1e-12)

    def test_single_prompt_reduces_to_plain_similarity_softmax(self, rng):
        f = FeatureMatrix(unit_rows(rng, 6, 5))
        prompts = unit_rows(rng, 3, 5)
        bank = bank_from_embeddings([[p] for p in prompts])
        prior = compute_text_prior(f, bank, temperature=0.01)
        logits = (f.data @ prompts.T) / 0.01
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        np.testing.assert_allclose(prior.y_hat, e / e.sum(axis=1, keepdims=True), atol=1e-12)


class TestTextPriorCache:
    def test_incremental_equals_full_recompute(self, rng):
        f = FeatureMatrix(unit_rows(rng, 7, 6))
        bank = bank_from_embeddings([[unit_rows(rng, 1, 6)[0]] for _ in range(3)])
        cache = TextPriorCache(f, bank, temperature=0.5)
        bank.add(1, AttributeRecord("thing with odd stripes", unit_rows(rng, 1, 6)[0]))
        bank.add(2, AttributeRecord("thing with round spots", unit_rows(rng, 1, 6)[0]))
        cache.refresh_class(bank, 1)
        cache.refresh_class(bank, 2)
        np.testing.assert_allclose(
            cache.s_bar(), mean_similarity(f, bank, temperature=0.5), atol=1e-12)

    def test_rebind_features(self, rng):
        f1 = FeatureMatrix(unit_rows(rng, 4, 6))
        f2 = FeatureMatrix(unit_rows(rng, 4, 6))
        bank = bank_from_embeddings([[unit_rows(rng, 1, 6)[0]] for _ in range(2)])
        cache = TextPriorCache(f1, bank)
        cache.rebind_features(f2)
        np.testing.assert_allclose(cache.s_bar(), mean_similarity(f2, bank), atol=1e-12)
