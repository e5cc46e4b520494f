"""Pseudo-label fine-tuning of the encoder pair.

The work order pairs each selected image with the attribute texts of its
pseudo-class.  Within a batch every (image, attribute) pair drawn from
the same class counts as a positive, so the contrastive loss never
penalizes the extra same-class matches that class-level supervision
creates; images are re-paired with a random attribute of their class at
every batch.  Optimization uses decoupled weight decay with separate
learning rates for the backbone and the final projections.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch

from .encoders import ToyEncoderPair


@dataclass
class AdaptJob:
    classes: list[str]
    top_images: list[list[tuple[str, float]]]  # (image id, score) descending
    attribute_texts: list[list[str]]
    fewshot: list[tuple[str, int]] = field(default_factory=list)

    @classmethod
    def from_payload(cls, doc: dict) -> "AdaptJob":
        job = cls(
            classes=list(doc["classes"]),
            top_images=[[(str(i), float(s)) for i, s in sel]
                        for sel in doc["top_images"]],
            attribute_texts=[list(ts) for ts in doc["attribute_texts"]],
            fewshot=[(str(i), int(j)) for i, j in doc.get("fewshot", [])],
        )
        job.validate()
        return job

    def validate(self) -> None:
        m = len(self.classes)
        if m == 0:
            raise ValueError("job has no classes")
        if len(self.top_images) != m or len(self.attribute_texts) != m:
            raise ValueError("per-class lists do not align with the class list")
        for j, sel in enumerate(self.top_images):
            ids = [i for i, _ in sel]
            if len(set(ids)) != len(ids):
                raise ValueError(f"class {j} selection has duplicate image ids")
            scores = [s for _, s in sel]
            if any(a < b for a, b in zip(scores, scores[1:])):
                raise ValueError(f"class {j} selection not sorted by score")
            if sel and not self.attribute_texts[j]:
                raise ValueError(f"class {j} has images but no attribute texts")
        for _i, j in self.fewshot:
            if not (0 <= j < m):
                raise ValueError(f"fewshot label {j} out of range")

    def samples(self) -> list[tuple[str, int]]:
        """(image id, class) pairs: the per-class selections plus, in the
        few-shot setting, the labeled examples."""
        out = []
        seen = set()
        for j, sel in enumerate(self.top_images):
            for img_id, _score in sel:
                if (img_id, j) not in seen:
                    seen.add((img_id, j))
                    out.append((img_id, j))
        for img_id, j in self.fewshot:
            if (img_id, j) not in seen:
                seen.add((img_id, j))
                out.append((img_id, j))
        return out


@dataclass
class FinetuneHyper:
    steps: int | None = None       # None: one pass over the sample set
    batch_size: int = 32
    backbone_lr: float = 2e-7
    projection_lr: float = 1e-6
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-6
    temperature: float = 0.07
    seed: int = 0

    @classmethod
    def from_payload(cls, doc: dict) -> "FinetuneHyper":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        kwargs = dict(doc)
        if "betas" in kwargs:
            kwargs["betas"] = tuple(kwargs["betas"])
        return cls(**kwargs)


@dataclass
class FinetuneReport:
    steps_run: int
    loss_before: float
    loss_after: float
    diverged: bool = False


def multipositive_contrastive_loss(img: torch.Tensor, txt: torch.Tensor,
                                   classes: torch.Tensor,
                                   temperature: float) -> torch.Tensor:
    """Symmetric InfoNCE where all same-class (image, text) pairs in the
    batch are positives (class-level supervision; no false negatives)."""
    logits = img @ txt.T / temperature
    positive = classes[:, None] == classes[None, :]
    log_norm_i = torch.logsumexp(logits, dim=1)
    log_norm_t = torch.logsumexp(logits, dim=0)
    masked = logits.masked_fill(~positive, float("-inf"))
    loss_i = (log_norm_i - torch.logsumexp(masked, dim=1)).mean()
    loss_t = (log_norm_t - torch.logsumexp(masked, dim=0)).mean()
    return 0.5 * (loss_i + loss_t)


def _batch(encoder: ToyEncoderPair, job: AdaptJob, samples, rng: np.random.Generator,
           batch_size: int, temperature: float) -> torch.Tensor:
    idx = rng.choice(len(samples), size=min(batch_size, len(samples)), replace=False)
    ids = [samples[i][0] for i in idx]
    classes = [samples[i][1] for i in idx]
    # stochastic pairing: each image gets one of its class's attributes
    texts = [job.attribute_texts[j][rng.integers(len(job.attribute_texts[j]))]
             for j in classes]
    img = encoder.image_forward(ids)
    txt = encoder.text_forward(texts)
    return multipositive_contrastive_loss(img, txt, torch.tensor(classes), temperature)


def _eval_loss(encoder: ToyEncoderPair, job: AdaptJob, samples,
               hyper: FinetuneHyper) -> float:
    """Loss on a fixed, seeded pairing of the whole sample set; used to
    compare before/after states on identical data."""
    rng = np.random.default_rng(hyper.seed)
    with torch.no_grad():
        loss = _batch(encoder, job, samples, rng, len(samples), hyper.temperature)
    return float(loss)


def finetune(encoder: ToyEncoderPair, job: AdaptJob,
             hyper: FinetuneHyper | None = None) -> FinetuneReport:
    """Run the contrastive fine-tune in place; zero steps is a no-op.

    A non-finite training loss restores the last finite state and stops
    (divergence guard).
    """
    hyper = hyper or FinetuneHyper()
    samples = job.samples()
    if not samples:
        raise ValueError("job selects no images")
    steps = hyper.steps
    if steps is None:
        steps = max(1, -(-len(samples) // hyper.batch_size))

    loss_before = _eval_loss(encoder, job, samples, hyper)
    if steps == 0:
        return FinetuneReport(0, loss_before, loss_before)

    backbone, projection = encoder.parameter_groups()
    optimizer = torch.optim.AdamW(
        [{"params": backbone, "lr": hyper.backbone_lr},
         {"params": projection, "lr": hyper.projection_lr}],
        betas=hyper.betas, eps=hyper.eps, weight_decay=hyper.weight_decay)

    rng = np.random.default_rng(hyper.seed)
    encoder.train()
    steps_run = 0
    diverged = False
    snapshot = copy.deepcopy(encoder.state_dict())
    for _ in range(steps):
        optimizer.zero_grad()
        loss = _batch(encoder, job, samples, rng, hyper.batch_size, hyper.temperature)
        if not torch.isfinite(loss):
            encoder.load_state_dict(snapshot)
            diverged = True
            break
        snapshot = copy.deepcopy(encoder.state_dict())
        loss.backward()
        optimizer.step()
        steps_run += 1
    encoder.eval()

    loss_after = _eval_loss(encoder, job, samples, hyper)
    if not np.isfinite(loss_after) and not diverged:
        # the final step itself blew up; fall back to its pre-step state
        encoder.load_state_dict(snapshot)
        diverged = True
        loss_after = _eval_loss(encoder, job, samples, hyper)
    return FinetuneReport(steps_run, loss_before, loss_after, diverged)
