"""Encoder sidecar: text/image embedding extraction and pseudo-label
contrastive fine-tuning, served over HTTP with EMB1 binary bodies."""

from .emb1 import decode, encode, read, write
from .encoders import ToyEncoderPair, load_encoder
from .finetune import AdaptJob, FinetuneHyper, FinetuneReport, finetune
from .server import create_app

__version__ = "0.1.0"

__all__ = [
    "AdaptJob",
    "FinetuneHyper",
    "FinetuneReport",
    "ToyEncoderPair",
    "create_app",
    "decode",
    "encode",
    "finetune",
    "load_encoder",
    "read",
    "write",
]
