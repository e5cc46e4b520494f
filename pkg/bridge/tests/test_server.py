"""HTTP endpoints, exercised through the ASGI test client."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from vlbridge import emb1
from vlbridge.encoders import ToyEncoderPair
from vlbridge.server import create_app


@pytest.fixture()
def enc():
    return ToyEncoderPair(dim=16)


@pytest.fixture()
def client(enc):
    return TestClient(create_app(encoder=enc))


def finetune_payload(tmp_path, steps=0, **extra):
    payload = {
        "job": {
            "classes": ["gull", "crow"],
            "top_images": [[["gull_0", 0.9], ["gull_1", 0.8]],
                           [["crow_0", 0.7]]],
            "attribute_texts": [["a photo of a gull", "bird with pink legs"],
                                ["a photo of a crow"]],
            "fewshot": [],
        },
        "hyper": {"steps": steps},
        "refresh_image_ids": ["gull_0", "gull_1", "crow_0", "other_9"],
        "refresh_texts": [["a photo of a gull", "bird with pink legs"],
                          ["a photo of a crow"]],
        "output_dir": str(tmp_path / "adapt"),
        "iteration": 4,
    }
    payload.update(extra)
    return payload


def test_health(client, enc):
    doc = client.get("/health").json()
    assert doc == {"status": "ok", "model_tag": "toy/16", "dim": 16}


def test_embed_text_returns_emb1(client, enc):
    resp = client.post("/embed_text", json={"texts": ["a photo of a dog", "x y"]})
    assert resp.status_code == 200
    assert resp.headers["content-type"] == "application/octet-stream"
    rows = emb1.decode(resp.content)
    assert rows.shape == (2, 16)
    np.testing.assert_allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-4)
    np.testing.assert_array_equal(
        rows, enc.embed_text(["a photo of a dog", "x y"]).astype(np.float32))


def test_embed_text_validation(client):
    assert client.post("/embed_text", json={"texts": []}).status_code == 422
    assert client.post("/embed_text", json={"texts": ["ok", ""]}).status_code == 422


def test_embed_images_returns_emb1(client, enc):
    resp = client.post("/embed_images", json={"ids": ["a", "b", "c"]})
    rows = emb1.decode(resp.content)
    assert rows.shape == (3, 16)


def test_finetune_zero_steps_writes_identity_refresh(client, enc, tmp_path):
    baseline = enc.embed_images(["gull_0", "gull_1", "crow_0", "other_9"])
    resp = client.post("/finetune", json=finetune_payload(tmp_path, steps=0))
    assert resp.status_code == 200
    doc = resp.json()
    assert doc["steps"] == 0 and not doc["diverged"]
    refreshed = emb1.read(doc["features_path"])
    np.testing.assert_array_equal(refreshed, baseline.astype(np.float32))
    texts = emb1.read(doc["text_embeddings_path"])
    assert texts.shape == (3, 16)
    assert doc["checkpoint_path"].endswith("encoder_iter0004.pt")
    import os

    assert os.path.exists(doc["checkpoint_path"])


def test_finetune_step_moves_embeddings(client, enc, tmp_path):
    baseline = enc.embed_images(["gull_0", "gull_1", "crow_0", "other_9"])
    resp = client.post("/finetune", json=finetune_payload(
        tmp_path, steps=1,
        hyper={"steps": 1, "backbone_lr": 1e-3, "projection_lr": 1e-3}))
    doc = resp.json()
    assert doc["steps"] == 1
    assert doc["loss_after"] < doc["loss_before"]
    refreshed = emb1.read(doc["features_path"])
    assert not np.array_equal(refreshed, baseline.astype(np.float32))
    np.testing.assert_allclose(np.linalg.norm(refreshed, axis=1), 1.0, atol=1e-4)


def test_finetune_rejects_bad_job(client, tmp_path):
    payload = finetune_payload(tmp_path)
    payload["job"]["top_images"] = [[["gull_0", 0.1], ["gull_0", 0.9]]]
    resp = client.post("/finetune", json=payload)
    assert resp.status_code == 422


def test_finetune_rejects_unknown_hyper(client, tmp_path):
    payload = finetune_payload(tmp_path, hyper={"warmup": 10})
    assert client.post("/finetune", json=payload).status_code == 422
