"""HTTP surface of the bridge.

JSON in, EMB1 binary out for the embedding endpoints; the fine-tune
endpoint takes a work order plus refresh lists and writes the refreshed
embedding files (and an encoder checkpoint) next to the requested output
directory, never touching its inputs.  Fine-tuning is single-flight; the
embedding endpoints stay available while one runs.
"""

from __future__ import annotations

import os
import threading

import torch
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from . import emb1
from .encoders import ToyEncoderPair, load_encoder
from .finetune import AdaptJob, FinetuneHyper, finetune


class EmbedTextRequest(BaseModel):
    texts: list[str] = Field(min_length=1)


class EmbedImagesRequest(BaseModel):
    ids: list[str] = Field(min_length=1)


class FinetuneRequest(BaseModel):
    job: dict
    hyper: dict = Field(default_factory=dict)
    refresh_image_ids: list[str] = Field(default_factory=list)
    refresh_texts: list[list[str]] = Field(default_factory=list)
    output_dir: str
    iteration: int = 0


def create_app(encoder: ToyEncoderPair | None = None,
               model_tag: str = "toy/32") -> FastAPI:
    enc = encoder if encoder is not None else load_encoder(model_tag)
    app = FastAPI(title="vlbridge")
    finetune_lock = threading.Lock()

    def emb_response(rows) -> Response:
        return Response(content=emb1.encode(rows),
                        media_type="application/octet-stream")

    @app.get("/health")
    def health():
        return {"status": "ok", "model_tag": enc.model_tag, "dim": enc.dim}

    @app.post("/embed_text")
    def embed_text(req: EmbedTextRequest):
        try:
            return emb_response(enc.embed_text(req.texts))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/embed_images")
    def embed_images(req: EmbedImagesRequest):
        try:
            return emb_response(enc.embed_images(req.ids))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/finetune")
    def run_finetune(req: FinetuneRequest):
        if not finetune_lock.acquire(blocking=False):
            raise HTTPException(status_code=409, detail="a fine-tune job is already running")
        try:
            try:
                job = AdaptJob.from_payload(req.job)
                hyper = FinetuneHyper.from_payload(req.hyper)
            except (KeyError, ValueError) as exc:
                raise HTTPException(status_code=422, detail=str(exc))
            report = finetune(enc, job, hyper)

            os.makedirs(req.output_dir, exist_ok=True)
            tag = f"iter{req.iteration:04d}"
            features_path = os.path.join(req.output_dir, f"features_{tag}.emb1")
            texts_path = os.path.join(req.output_dir, f"bank_{tag}.emb1")
            ckpt_path = os.path.join(req.output_dir, f"encoder_{tag}.pt")

            image_ids = req.refresh_image_ids or [i for i, _ in job.samples()]
            emb1.write(enc.embed_images(image_ids), features_path)
            texts = [t for ts in (req.refresh_texts or job.attribute_texts) for t in ts]
            if not texts:
                raise HTTPException(status_code=422, detail="nothing to re-embed")
            emb1.write(enc.embed_text(texts), texts_path)
            torch.save(enc.state_dict(), ckpt_path)

            return {
                "features_path": features_path,
                "text_embeddings_path": texts_path,
                "checkpoint_path": ckpt_path,
                "steps": report.steps_run,
                "loss_before": report.loss_before,
                "loss_after": report.loss_after,
                "diverged": report.diverged,
            }
        finally:
            finetune_lock.release()

    return app


def main() -> None:
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(description="encoder bridge server")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8400)
    parser.add_argument("--model-tag", default="toy/32")
    args = parser.parse_args()
    uvicorn.run(create_app(model_tag=args.model_tag), host=args.host, port=args.port)


if __name__ == "__main__":
    main()
