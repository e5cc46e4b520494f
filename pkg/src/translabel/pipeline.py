"""End-to-end iterative loop: transduce, mine confusions, generate
attributes, transduce again, adapt encoders -- repeated T times.

Supports three supervision modes (zero-shot, few-shot with clamped rows,
seen-classes with adaptation on a disjoint labeled class set), the
ablation lattice (class-prompt / static / dynamic attributes, transduction
and adaptation each on or off), per-iteration checkpoints, and resume.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import io as tio
from .attributes import (
    ChatCompletionClient,
    LlmConfig,
    class_prompt,
    generate_for_pairs,
)
from .bridge_client import BridgeClient
from .confusion import mine, select_pairs
from .graph import AffinityGraph, build_graph
from .prior import TextPriorCache
from .solver import SolverConfig, TransductTrace, transduct
from .state import (
    ORIGIN_DYNAMIC,
    ORIGIN_STATIC,
    Assignments,
    AttributeBank,
    AttributeRecord,
    FeatureMatrix,
    validate,
)

logger = logging.getLogger(__name__)

MODE_ZERO_SHOT = "zero-shot"
MODE_FEW_SHOT = "few-shot"
MODE_SEEN_CLASSES = "seen-classes"

ATTRS_DYNAMIC = "dynamic"
ATTRS_STATIC = "static"
ATTRS_CLASS_PROMPTS = "class-prompts"


class PipelineError(RuntimeError):
    pass


@dataclass
class RunConfig:
    mode: str = MODE_ZERO_SHOT
    iterations: int = 30          # outer loop length T
    top_k: int = 8                # images per class handed to adaptation
    alpha: float = 0.1            # confusion margin threshold (0.05 for very large runs)
    coverage_fraction: float = 0.05
    knn: int = 3
    temperature: float = 0.01
    solver: SolverConfig = field(default_factory=SolverConfig)
    llm: LlmConfig | None = None
    bridge_url: str | None = None
    attribute_mode: str = ATTRS_DYNAMIC
    enable_transduct: bool = True
    enable_adapt: bool = False
    internal_transduct: bool = True
    allow_mock_embedder: bool = False
    mock_embedder_dim: int | None = None
    adapt_steps: int | None = None
    store_z: bool = False
    seed: int = 0
    checkpoint_dir: str | None = None
    features_path: str | None = None
    manifest_path: str | None = None
    bank_path: str | None = None
    output_path: str | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.mode not in (MODE_ZERO_SHOT, MODE_FEW_SHOT, MODE_SEEN_CLASSES):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.attribute_mode not in (ATTRS_DYNAMIC, ATTRS_STATIC, ATTRS_CLASS_PROMPTS):
            raise ValueError(f"unknown attribute_mode {self.attribute_mode!r}")

    def config_hash(self) -> str:
        doc = {
            "mode": self.mode, "iterations": self.iterations, "top_k": self.top_k,
            "alpha": self.alpha, "coverage_fraction": self.coverage_fraction,
            "knn": self.knn, "temperature": self.temperature,
            "attribute_mode": self.attribute_mode,
            "enable_transduct": self.enable_transduct,
            "enable_adapt": self.enable_adapt,
            "internal_transduct": self.internal_transduct,
            "seed": self.seed,
            "solver": [self.solver.lam, self.solver.max_outer_iters, self.solver.z_tol,
                       self.solver.inner_z_iters, self.solver.gmm_weight_mode,
                       self.solver.per_class_variance],
        }
        blob = json.dumps(doc, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass
class AdaptJob:
    """Per-class pseudo-labeled image selections plus the attribute texts
    they pair with; the fine-tuning work order sent to the encoder bridge."""

    classes: list[str]
    top_images: list[list[tuple[str, float]]]  # (image id, score), score descending
    attribute_texts: list[list[str]]
    fewshot: list[tuple[str, int]] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "classes": self.classes,
            "top_images": [[[i, float(s)] for i, s in sel] for sel in self.top_images],
            "attribute_texts": self.attribute_texts,
            "fewshot": [[i, int(j)] for i, j in self.fewshot],
        }


def build_adapt_job(
    z: Assignments,
    image_ids: list[str],
    bank: AttributeBank,
    top_k: int,
    fewshot: list[tuple[str, int]] | None = None,
) -> AdaptJob:
    """Top-k images per class by assignment score, ties broken by row
    order so selections are reproducible."""
    zz = z.z
    n = zz.shape[0]
    k = min(top_k, n)
    selections = []
    for j in range(bank.num_classes):
        order = np.lexsort((np.arange(n), -zz[:, j]))[:k]
        selections.append([(image_ids[i], float(zz[i, j])) for i in order])
    return AdaptJob(
        classes=list(bank.classes),
        top_images=selections,
        attribute_texts=[bank.texts(j) for j in range(bank.num_classes)],
        fewshot=list(fewshot or []),
    )


def apply_fewshot(manifest: tio.DatasetManifest, z) -> Assignments:
    """Clamp the rows of labeled images to their one-hot label vectors."""
    zz = (z.z if isinstance(z, Assignments) else np.asarray(z, dtype=np.float64)).copy()
    n, m = zz.shape
    row_of = {im.id: i for i, im in enumerate(manifest.images)}
    clamped = np.zeros(n, dtype=bool)
    labels = np.zeros(n, dtype=np.int64)
    for img_id, j in manifest.fewshot_labels:
        if img_id not in row_of:
            raise PipelineError(f"fewshot label references unknown image id {img_id!r}")
        if not (0 <= j < m):
            raise PipelineError(f"fewshot label class {j} out of range for {m} classes")
        i = row_of[img_id]
        clamped[i] = True
        labels[i] = j
        zz[i] = 0.0
        zz[i, j] = 1.0
    return Assignments(zz, clamped, labels if clamped.any() else None)


@dataclass
class SeenClassPlan:
    """Work split for the seen-classes mode: adapt on labeled seen-class
    images, then transduce/evaluate over unseen classes only."""

    train_manifest: tio.DatasetManifest
    target_manifest: tio.DatasetManifest
    seen_class_indices: list[int]
    unseen_class_indices: list[int]
    train_rows: np.ndarray
    target_rows: np.ndarray


def seen_class_split(
    manifest: tio.DatasetManifest,
    unseen_classes: list[str] | None = None,
) -> SeenClassPlan:
    """Partition the manifest by its seen-class marking.

    Unseen classes default to the complement of ``manifest.seen_classes``;
    passing them explicitly is checked for overlap.  An empty seen set
    degenerates to the zero-shot split (everything is a target).
    """
    seen_names = list(manifest.seen_classes or [])
    if unseen_classes is None:
        unseen_names = [c for c in manifest.classes if c not in seen_names]
    else:
        unseen_names = list(unseen_classes)
        overlap = sorted(set(seen_names) & set(unseen_names))
        if overlap:
            raise PipelineError(f"seen and unseen class sets overlap: {overlap}")
    if not unseen_names:
        raise PipelineError("no unseen classes left to transduce over")

    seen_idx = [manifest.classes.index(c) for c in seen_names]
    unseen_idx = [manifest.classes.index(c) for c in unseen_names]
    remap = {j: r for r, j in enumerate(unseen_idx)}

    train_rows, target_rows = [], []
    train_images, target_images = [], []
    for i, im in enumerate(manifest.images):
        if im.class_index is not None and im.class_index in seen_idx:
            train_rows.append(i)
            train_images.append(im)
        else:
            target_rows.append(i)
            target_images.append(tio.ImageEntry(
                im.id,
                remap.get(im.class_index) if im.class_index is not None else None,
                im.split,
            ))
    if not target_images:
        raise PipelineError("no target images for the unseen classes")

    train_manifest = tio.DatasetManifest(
        dataset_name=manifest.dataset_name + "/seen",
        classes=manifest.classes,
        domain_word=manifest.domain_word,
        images=train_images,
    )
    target_manifest = tio.DatasetManifest(
        dataset_name=manifest.dataset_name + "/unseen",
        classes=unseen_names,
        domain_word=manifest.domain_word,
        images=target_images,
    )
    return SeenClassPlan(
        train_manifest=train_manifest,
        target_manifest=target_manifest,
        seen_class_indices=seen_idx,
        unseen_class_indices=unseen_idx,
        train_rows=np.array(train_rows, dtype=np.int64),
        target_rows=np.array(target_rows, dtype=np.int64),
    )


def bank_subset(bank: AttributeBank, class_indices: list[int]) -> AttributeBank:
    return AttributeBank(
        classes=[bank.classes[j] for j in class_indices],
        attrs=[list(bank.attrs[j]) for j in class_indices],
    )


def build_class_prompt_bank(classes: list[str], embedder) -> AttributeBank:
    """Minimal bank: one "a photo of a <class>" entry per class."""
    texts = [class_prompt(c) for c in classes]
    embs = embedder(texts)
    attrs = [[AttributeRecord(t, e, origin=ORIGIN_STATIC, iteration_added=0)]
             for t, e in zip(texts, embs)]
    return AttributeBank(classes=list(classes), attrs=attrs)


def bootstrap_static_bank(
    classes: list[str], domain_word: str, llm, embedder, audit_log=None
) -> AttributeBank:
    """Query the bootstrap prompt for every class and build a bank seeded
    with the class prompt plus the parsed static attributes."""
    from .attributes import parse_attribute_lines, static_prompt

    bank = build_class_prompt_bank(classes, embedder)
    for j, name in enumerate(classes):
        response = llm.complete(static_prompt(name, domain_word))
        texts = parse_attribute_lines(response, name, domain_word)
        if audit_log is not None:
            audit_log.append({"class_index": j, "raw_response": response, "kept": texts})
        if not texts:
            continue
        embs = embedder(texts)
        for t, e in zip(texts, embs):
            bank.add(j, AttributeRecord(t, e, origin=ORIGIN_STATIC, iteration_added=0))
    return bank


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, iteration: int, bank: AttributeBank, z: Assignments,
                    config_hash: str, already_queried, features_ref: str | None) -> None:
    doc = {
        "schema_version": tio.SCHEMA_VERSION,
        "iteration": iteration,
        "config_hash": config_hash,
        "z": [[float(v) for v in row] for row in z.z],
        "clamped": [bool(v) for v in z.clamped],
        "clamp_labels": None if z.clamp_labels is None else [int(v) for v in z.clamp_labels],
        "already_queried": sorted([list(p) for p in already_queried]),
        "features_ref": features_ref,
        "bank": {
            "classes": bank.classes,
            "attributes": [
                [{"text": r.text, "embedding": [float(v) for v in r.embedding],
                  "origin": r.origin, "iteration_added": r.iteration_added}
                 for r in recs]
                for recs in bank.attrs
            ],
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, ensure_ascii=False)
        f.write("\n")


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    bank = AttributeBank(
        classes=list(doc["bank"]["classes"]),
        attrs=[
            [AttributeRecord(r["text"], np.array(r["embedding"]), r["origin"],
                             int(r["iteration_added"]))
             for r in recs]
            for recs in doc["bank"]["attributes"]
        ],
    )
    labels = doc["clamp_labels"]
    z = Assignments(
        np.array(doc["z"], dtype=np.float64),
        np.array(doc["clamped"], dtype=bool),
        None if labels is None else np.array(labels, dtype=np.int64),
    )
    already = {tuple(p) for p in doc["already_queried"]}
    return (int(doc["iteration"]), bank, z, doc["config_hash"], already,
            doc.get("features_ref"))


# ---------------------------------------------------------------------------
# The loop
# ---------------------------------------------------------------------------

def _resolve_embedder(cfg: RunConfig, embedder, bridge: BridgeClient | None):
    if embedder is not None:
        return embedder
    if bridge is not None:
        return bridge.embed_text
    if cfg.allow_mock_embedder:
        if cfg.mock_embedder_dim is None:
            raise PipelineError("allow_mock_embedder requires mock_embedder_dim")
        from .mocks import HashEmbedder

        logger.warning("using the hash mock embedder; outputs are test-only")
        return HashEmbedder(cfg.mock_embedder_dim)
    return None


def _prior_assignments(prior_cache: TextPriorCache, clamps) -> Assignments:
    z = prior_cache.prior().y_hat.copy()
    clamped, labels = clamps
    if labels is not None and clamped.any():
        idx = np.nonzero(clamped)[0]
        z[idx] = 0.0
        z[idx, labels[idx]] = 1.0
    return Assignments(z, clamped, labels)


def run(
    cfg: RunConfig,
    features: FeatureMatrix | None = None,
    manifest: tio.DatasetManifest | None = None,
    bank: AttributeBank | None = None,
    llm=None,
    embedder=None,
    bridge: BridgeClient | None = None,
    resume_from: str | None = None,
) -> tio.RunResult:
    """Run the whole loop and return the final labels/metrics/traces.

    Inputs may be passed in memory or loaded from cfg paths.  ``llm`` is
    any object with complete(prompt); ``embedder`` any callable mapping a
    text list to unit-norm rows.  The bank object is grown in place.
    """
    if manifest is None:
        if cfg.manifest_path is None:
            raise PipelineError("no manifest given")
        manifest = tio.load_manifest(cfg.manifest_path)
    if features is None:
        if cfg.features_path is None:
            raise PipelineError("no features given")
        features = tio.load_features(cfg.features_path, manifest=manifest)

    if bridge is None and cfg.bridge_url and cfg.bridge_url != "none":
        bridge = BridgeClient(cfg.bridge_url)
    if bridge is not None:
        bridge.health()  # fail fast with a clear diagnostic
    if cfg.enable_adapt and bridge is None:
        raise PipelineError("enable_adapt requires a reachable bridge")

    embedder = _resolve_embedder(cfg, embedder, bridge)
    if llm is None and cfg.llm is not None:
        llm = ChatCompletionClient(cfg.llm)

    attribute_mode = cfg.attribute_mode
    if attribute_mode == ATTRS_DYNAMIC and (llm is None or embedder is None):
        missing = "LLM client" if llm is None else "text embedder"
        logger.warning("dynamic attributes disabled (no %s); degrading to static", missing)
        attribute_mode = ATTRS_STATIC

    # --- seen-classes: adapt on the labeled base classes, then restrict ---
    fewshot_pairs = list(manifest.fewshot_labels)
    if cfg.mode == MODE_SEEN_CLASSES:
        plan = seen_class_split(manifest)
        if bank is None and cfg.bank_path:
            bank = tio.load_bank(cfg.bank_path)
        if bridge is not None and len(plan.train_manifest.images) > 0:
            full_bank = bank
            if full_bank is None:
                full_bank = build_class_prompt_bank(manifest.classes, embedder)
            train_ids = [im.id for im in plan.train_manifest.images]
            train_labels = [(im.id, im.class_index) for im in plan.train_manifest.images]
            job = AdaptJob(
                classes=manifest.classes,
                top_images=[[(i, 1.0) for i, j in train_labels if j == c]
                            for c in range(manifest.num_classes)],
                attribute_texts=[full_bank.texts(j) for j in range(manifest.num_classes)],
                fewshot=train_labels,
            )
            out_dir = _adapt_dir(cfg)
            outcome = bridge.finetune(
                job.to_payload(), _hyper(cfg), [im.id for im in manifest.images],
                [full_bank.texts(j) for j in range(manifest.num_classes)], out_dir, 0)
            features = tio.load_features(outcome.features_path,
                                         ids=[im.id for im in manifest.images])
            _refresh_bank_embeddings(full_bank, outcome.text_embeddings_path)
            bank = full_bank
        if bank is not None and bank.num_classes == manifest.num_classes:
            bank = bank_subset(bank, plan.unseen_class_indices)
        features = FeatureMatrix(features.data[plan.target_rows],
                                 [features.ids[i] for i in plan.target_rows])
        manifest = plan.target_manifest
        fewshot_pairs = []

    if bank is None:
        if cfg.bank_path and attribute_mode != ATTRS_CLASS_PROMPTS:
            bank = tio.load_bank(cfg.bank_path)
        else:
            if embedder is None:
                raise PipelineError("no bank given and no embedder to build class prompts")
            bank = build_class_prompt_bank(manifest.classes, embedder)
    if bank.num_classes != manifest.num_classes:
        raise PipelineError(
            f"bank has {bank.num_classes} classes, manifest {manifest.num_classes}")

    problems = validate(features) + validate(bank)
    if problems:
        raise PipelineError("invalid inputs: " + "; ".join(problems[:5]))

    n = features.n
    ids = list(features.ids)

    # --- clamps ---
    if cfg.mode == MODE_FEW_SHOT and fewshot_pairs:
        seed_z = apply_fewshot(manifest, np.full((n, manifest.num_classes),
                                                 1.0 / manifest.num_classes))
        clamps = (seed_z.clamped, seed_z.clamp_labels)
    else:
        clamps = (np.zeros(n, dtype=bool), None)

    graph = build_graph(features, min(cfg.knn, n - 1)) if n >= 2 else AffinityGraph.empty(n)
    prior_cache = TextPriorCache(features, bank, cfg.temperature)

    already_queried: set[tuple[int, int]] = set()
    start_iter = 1
    z: Assignments | None = None
    features_ref = cfg.features_path
    if resume_from is not None:
        it, bank_ck, z_ck, ck_hash, already_queried, feat_ref = load_checkpoint(resume_from)
        if ck_hash != cfg.config_hash():
            raise PipelineError("checkpoint config hash does not match this config")
        bank.classes = bank_ck.classes
        bank.attrs = bank_ck.attrs
        if feat_ref and feat_ref != cfg.features_path:
            features = tio.load_features(feat_ref, ids=ids)
            graph = build_graph(features, min(cfg.knn, n - 1)) if n >= 2 else AffinityGraph.empty(n)
            features_ref = feat_ref
        prior_cache = TextPriorCache(features, bank, cfg.temperature)
        z = z_ck
        start_iter = it + 1

    traces: list[list[float]] = []
    cfg_hash = cfg.config_hash()

    for t in range(start_iter, cfg.iterations + 1):
        internal_done = False
        if cfg.enable_transduct and cfg.internal_transduct:
            z, _gmm, trace = transduct(features, None, graph, clamps=clamps,
                                       cfg=cfg.solver, prior=prior_cache.prior())
            internal_done = True
        elif z is None:
            z = _prior_assignments(prior_cache, clamps)

        bank_grew = False
        if attribute_mode == ATTRS_DYNAMIC:
            report = mine(z, cfg.alpha)
            selected = select_pairs(report, cfg.coverage_fraction, already_queried)
            already_queried.update(selected)
            if selected:
                generated = generate_for_pairs(selected, bank, llm, manifest.domain_word)
                new_items: list[tuple[int, str]] = []
                for ga in generated:
                    new_items.extend((ga.class_index, text) for text in ga.texts)
                if new_items:
                    embs = embedder([text for _, text in new_items])
                    changed = set()
                    for (j, text), emb in zip(new_items, embs):
                        if bank.add(j, AttributeRecord(text, emb, ORIGIN_DYNAMIC, t)):
                            changed.add(j)
                    for j in sorted(changed):
                        prior_cache.refresh_class(bank, j)
                    bank_grew = bool(changed)

        if cfg.enable_transduct:
            if bank_grew or not internal_done:
                z, _gmm, trace = transduct(features, None, graph, clamps=clamps,
                                           cfg=cfg.solver, prior=prior_cache.prior())
            # unchanged bank: the rerun would be bit-identical, reuse it
        else:
            z = _prior_assignments(prior_cache, clamps)
            trace = TransductTrace()
        traces.append(list(trace.objective_values))

        if cfg.enable_adapt and bridge is not None:
            job = build_adapt_job(z, ids, bank, cfg.top_k,
                                  fewshot_pairs if cfg.mode == MODE_FEW_SHOT else None)
            out_dir = _adapt_dir(cfg)
            outcome = bridge.finetune(
                job.to_payload(), _hyper(cfg), ids,
                [bank.texts(j) for j in range(bank.num_classes)], out_dir, t)
            features = tio.load_features(outcome.features_path, ids=ids)
            _refresh_bank_embeddings(bank, outcome.text_embeddings_path)
            features_ref = outcome.features_path
            graph = build_graph(features, min(cfg.knn, n - 1)) if n >= 2 else AffinityGraph.empty(n)
            prior_cache = TextPriorCache(features, bank, cfg.temperature)

        if cfg.checkpoint_dir:
            os.makedirs(cfg.checkpoint_dir, exist_ok=True)
            save_checkpoint(
                os.path.join(cfg.checkpoint_dir, f"iter_{t:04d}.json"),
                t, bank, z, cfg_hash, already_queried, features_ref)

    labels = z.labels()
    metrics = _eval_metrics(manifest, labels, clamps[0])
    result = tio.RunResult(
        image_ids=ids,
        labels=labels,
        z=z.z.copy() if cfg.store_z else None,
        metrics=metrics,
        objective_traces=traces,
    )
    if cfg.output_path:
        bank_path = str(cfg.output_path) + ".bank.json"
        tio.save_bank(bank, bank_path)
        result.bank_ref = bank_path
        tio.save_result(result, cfg.output_path)
    return result


def _eval_metrics(manifest, labels, clamped) -> dict[str, float] | None:
    """Metrics over the unclamped (test) rows; None when truth is missing."""
    rows = np.nonzero(~clamped)[0]
    images = [manifest.images[i] for i in rows]
    if not images or any(im.class_index is None for im in images):
        return None
    eval_manifest = tio.DatasetManifest(
        dataset_name=manifest.dataset_name,
        classes=manifest.classes,
        domain_word=manifest.domain_word,
        images=images,
    )
    return tio.compute_metrics(labels[rows], eval_manifest)


def _hyper(cfg: RunConfig) -> dict:
    return {} if cfg.adapt_steps is None else {"steps": cfg.adapt_steps}


def _adapt_dir(cfg: RunConfig) -> str:
    base = os.path.dirname(cfg.output_path) if cfg.output_path else "."
    out = os.path.join(base or ".", "adapt")
    os.makedirs(out, exist_ok=True)
    return out


def _refresh_bank_embeddings(bank: AttributeBank, emb_path: str) -> None:
    """Replace attribute embeddings from a bridge refresh (rows follow the
    class-major flattened text order)."""
    embs = tio.read_embeddings(emb_path)
    expected = sum(bank.snapshot_sizes())
    if embs.shape[0] != expected:
        raise PipelineError(f"bridge returned {embs.shape[0]} embeddings for {expected} texts")
    k = 0
    for j in range(bank.num_classes):
        recs = bank.attrs[j]
        for idx, r in enumerate(recs):
            recs[idx] = AttributeRecord(r.text, embs[k], r.origin, r.iteration_added)
            k += 1
